//! Access-frequency tracking and the hot graph built over the most
//! frequently returned points.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::graph::{build_full_index, BuildParams, NeighborGraph};
use crate::vectors::VectorDataset;

/// Per-node hit counts plus the number of hits since the last hot rebuild.
///
/// Increments are lock-free and may come from many threads at once.
#[derive(Debug)]
pub struct AccessCounter {
    counts: Vec<AtomicU64>,
    since_rebuild: AtomicU64,
}

impl AccessCounter {
    pub fn new(n: usize) -> Self {
        Self {
            counts: (0..n).map(|_| AtomicU64::new(0)).collect(),
            since_rebuild: AtomicU64::new(0),
        }
    }

    pub fn from_snapshot(counts: &[u64], since_rebuild: u64) -> Self {
        Self {
            counts: counts.iter().map(|&c| AtomicU64::new(c)).collect(),
            since_rebuild: AtomicU64::new(since_rebuild),
        }
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn record_access(&self, node: u32) -> Result<()> {
        let slot = self.counts.get(node as usize);
        ensure!(slot.is_some(), "node {node} out of range for {} counters", self.counts.len());
        slot.unwrap().fetch_add(1, Ordering::Relaxed);
        self.since_rebuild.fetch_add(1, Ordering::Relaxed);
        Ok(())
    }

    pub fn count(&self, node: u32) -> u64 {
        self.counts[node as usize].load(Ordering::Relaxed)
    }

    pub fn total_since_rebuild(&self) -> u64 {
        self.since_rebuild.load(Ordering::Relaxed)
    }

    pub fn snapshot(&self) -> Vec<u64> {
        self.counts.iter().map(|c| c.load(Ordering::Relaxed)).collect()
    }

    pub fn should_rebuild(&self, config: &HotIndexConfig) -> bool {
        self.total_since_rebuild() > config.n_query
    }

    /// Starts a new epoch: the trigger count resets and per-node counts halve.
    pub fn start_epoch(&self) {
        for c in &self.counts {
            let _ = c.fetch_update(Ordering::Relaxed, Ordering::Relaxed, |v| Some(v / 2));
        }
        self.since_rebuild.store(0, Ordering::Relaxed);
    }
}

impl Clone for AccessCounter {
    fn clone(&self) -> Self {
        Self::from_snapshot(&self.snapshot(), self.total_since_rebuild())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HotIndexConfig {
    /// Hits since the last rebuild that trigger the next one (strictly exceeded).
    pub n_query: u64,
    /// Hot size as a fraction of the corpus.
    pub index_ratio: f64,
    pub build: BuildParams,
}

impl Default for HotIndexConfig {
    fn default() -> Self {
        Self { n_query: 10_000, index_ratio: 0.01, build: BuildParams::default() }
    }
}

impl HotIndexConfig {
    /// Number of hot nodes for a corpus of `n` points: `ceil(index_ratio * n)`.
    pub fn hot_size(&self, n: usize) -> usize {
        ((self.index_ratio * n as f64).ceil() as usize).clamp(1, n)
    }

    /// Build parameters for a hot subset of `hot_size` points: the k-NN degree
    /// shrinks to `hot_size / 5` so small subsets stay buildable.
    pub fn hot_build_params(&self, hot_size: usize) -> BuildParams {
        BuildParams {
            knng_k: self.build.knng_k.min(hot_size / 5).max(1),
            ..self.build.clone()
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        ensure!(self.n_query >= 1, "n_query must be positive");
        ensure!(
            self.index_ratio > 0.0 && self.index_ratio <= 1.0,
            "index ratio {} outside (0, 1]",
            self.index_ratio
        );
        self.build.validate()?;
        let hot = self.hot_size(n);
        let k = self.hot_build_params(hot).knng_k;
        ensure!(
            hot >= k + 1,
            "hot subset of {hot} points is too small for a {k}-NN graph"
        );
        Ok(())
    }
}

/// Graph over a subset of the corpus. Graph ids are local positions into
/// `members`, which holds the corresponding global ids in ascending order.
#[derive(Debug, Clone, PartialEq)]
pub struct HotGraph {
    pub graph: NeighborGraph,
    pub members: Vec<u32>,
    /// Global ids.
    pub entry_points: Vec<u32>,
    /// Shape of the corpus this subset was drawn from.
    pub source_len: usize,
    pub source_dim: usize,
}

impl HotGraph {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    #[inline]
    pub fn global(&self, local: u32) -> u32 {
        self.members[local as usize]
    }

    pub fn local(&self, global: u32) -> Option<u32> {
        self.members.binary_search(&global).ok().map(|i| i as u32)
    }

    pub fn local_entry_points(&self) -> Vec<u32> {
        self.entry_points.iter().filter_map(|&g| self.local(g)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(!self.members.is_empty(), "hot graph has no members");
        ensure!(
            self.members.windows(2).all(|w| w[0] < w[1]),
            "hot members must be strictly ascending"
        );
        ensure!(
            (*self.members.last().unwrap() as usize) < self.source_len,
            "hot member out of range"
        );
        ensure!(
            self.graph.node_count() == self.members.len(),
            "hot graph has {} nodes for {} members",
            self.graph.node_count(),
            self.members.len()
        );
        self.graph.validate()?;
        for &e in &self.entry_points {
            ensure!(self.local(e).is_some(), "hot entry point {e} is not a member");
        }
        Ok(())
    }
}

/// The `n_idx` most frequent ids, most frequent first; equal counts rank by ascending id.
pub fn select_hot_nodes(counts: &[u64], n_idx: usize) -> Result<Vec<u32>> {
    ensure!(
        n_idx <= counts.len(),
        "cannot select {n_idx} hot nodes out of {}",
        counts.len()
    );
    let mut order: Vec<u32> = (0..counts.len() as u32).collect();
    let key = |&i: &u32| (std::cmp::Reverse(counts[i as usize]), i);
    if n_idx > 0 && n_idx < order.len() {
        order.select_nth_unstable_by_key(n_idx - 1, key);
    }
    order.truncate(n_idx);
    order.sort_unstable_by_key(key);
    Ok(order)
}

/// Builds the pruned graph over `hot_ids` (any order, no duplicates).
pub fn build_hot_index(
    dataset: &VectorDataset,
    hot_ids: &[u32],
    build: &BuildParams,
) -> Result<HotGraph> {
    ensure!(
        hot_ids.len() > build.knng_k,
        "hot subset of {} points is too small for knng_k = {}",
        hot_ids.len(),
        build.knng_k
    );
    let mut members = hot_ids.to_vec();
    members.sort_unstable();
    ensure!(
        members.windows(2).all(|w| w[0] != w[1]),
        "hot ids contain duplicates"
    );
    let sub = dataset.subset(&members)?;
    let built = build_full_index(&sub, build)?;
    let entry_points = built.entry_points.iter().map(|&l| members[l as usize]).collect();
    Ok(HotGraph {
        graph: built.graph,
        members,
        entry_points,
        source_len: dataset.len(),
        source_dim: dataset.dim(),
    })
}
