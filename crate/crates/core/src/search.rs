//! Best-first beam search over one graph, and the two-phase hot-then-full
//! search with periodic early-termination checkpoints.

use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::graph::{GraphIndex, NeighborGraph};
use crate::hot::{build_hot_index, select_hot_nodes, AccessCounter, HotGraph, HotIndexConfig};
use crate::tree::{FeatureVector, Verdict};
use crate::vectors::{l2, Neighbor, ResultList, VectorDataset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchParams {
    pub k: usize,
    /// Candidate pool size in the full graph.
    pub l: usize,
    /// Candidate pool size in the hot graph.
    pub s_l: usize,
    /// Distance computations between two checkpoints.
    pub eval_gap: usize,
    /// Expansions still performed after a terminate verdict.
    pub add_step: usize,
}

impl Default for SearchParams {
    fn default() -> Self {
        Self { k: 10, l: 100, s_l: 100, eval_gap: 50, add_step: 0 }
    }
}

impl SearchParams {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.k >= 1, "k must be positive");
        ensure!(self.l >= self.k, "l = {} must be at least k = {}", self.l, self.k);
        ensure!(self.s_l >= self.k, "s_l = {} must be at least k = {}", self.s_l, self.k);
        ensure!(self.eval_gap >= 1, "eval_gap must be positive");
        Ok(())
    }
}

/// Per-query instrumentation.
///
/// `dist_count` and `update_count` cover the full-graph phase only (for a
/// plain [`beam_search`], the whole search); `hot_dist_count` covers the hot phase.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SearchTrace {
    pub dist_count: u64,
    pub update_count: u64,
    pub hot_dist_count: u64,
    pub hot_first: f32,
    pub hot_kth: f32,
    pub full_first: f32,
    pub full_kth: f32,
    pub terminated_early: bool,
    pub checkpoints_evaluated: u32,
    pub expansions: u64,
}

impl SearchTrace {
    pub fn total_dist_count(&self) -> u64 {
        self.dist_count + self.hot_dist_count
    }
}

/// Builds the six checkpoint features from the current trace state.
///
/// A zero k-th distance means the query coincides with at least k points;
/// the corresponding ratio is then 1.
pub fn extract_features(trace: &SearchTrace) -> FeatureVector {
    let ratio = |first: f32, kth: f32| if kth == 0.0 { 1.0 } else { first as f64 / kth as f64 };
    FeatureVector {
        hot_first: trace.hot_first as f64,
        hot_first_div_kth: ratio(trace.hot_first, trace.hot_kth),
        full_first: trace.full_first as f64,
        full_first_div_kth: ratio(trace.full_first, trace.full_kth),
        dist_count: trace.dist_count as f64,
        update_count: trace.update_count as f64,
    }
}

/// Decides at each checkpoint whether the full-graph phase should go on.
pub trait StopRule {
    fn verdict(&self, features: &FeatureVector) -> Verdict;

    fn check(&self) -> Result<()> {
        Ok(())
    }
}

/// A rule that always returns the same verdict.
#[derive(Debug, Clone, Copy)]
pub struct Always(pub Verdict);

impl StopRule for Always {
    fn verdict(&self, _: &FeatureVector) -> Verdict {
        self.0
    }
}

struct Bitset(Vec<u64>);

impl Bitset {
    fn new(n: usize) -> Self {
        Self(vec![0; n.div_ceil(64)])
    }

    /// Sets bit `i`, returning whether it was previously clear.
    #[inline]
    fn insert(&mut self, i: u32) -> bool {
        let (w, b) = ((i >> 6) as usize, 1u64 << (i & 63));
        let fresh = self.0[w] & b == 0;
        self.0[w] |= b;
        fresh
    }
}

#[derive(Clone, Copy)]
struct Slot {
    nb: Neighbor,
    expanded: bool,
}

/// Sorted, bounded candidate pool.
struct Pool {
    slots: Vec<Slot>,
    cap: usize,
    /// No unexpanded slot sits before this position.
    cursor: usize,
}

impl Pool {
    fn new(cap: usize) -> Self {
        Self { slots: Vec::with_capacity(cap + 1), cap, cursor: 0 }
    }

    /// Inserts `nb`; returns whether it survived trimming.
    fn insert(&mut self, nb: Neighbor) -> bool {
        if self.slots.len() == self.cap
            && self.slots.last().is_some_and(|s| nb.cmp_rank(&s.nb).is_ge())
        {
            return false;
        }
        let pos = self.slots.partition_point(|s| s.nb.cmp_rank(&nb).is_lt());
        self.slots.insert(pos, Slot { nb, expanded: false });
        if self.slots.len() > self.cap {
            self.slots.pop();
        }
        self.cursor = self.cursor.min(pos);
        true
    }

    fn next_unexpanded(&mut self) -> Option<u32> {
        while self.cursor < self.slots.len() {
            let i = self.cursor;
            self.cursor += 1;
            if !self.slots[i].expanded {
                self.slots[i].expanded = true;
                return Some(self.slots[i].nb.id);
            }
        }
        None
    }

    fn first(&self) -> f32 {
        self.slots.first().map_or(0.0, |s| s.nb.distance)
    }

    fn kth(&self, k: usize) -> f32 {
        self.slots
            .get(k.min(self.slots.len()).saturating_sub(1))
            .map_or(0.0, |s| s.nb.distance)
    }

    fn top(&self, k: usize) -> ResultList {
        self.slots.iter().take(k).map(|s| s.nb).collect()
    }

    fn top_ids(&self, k: usize) -> Vec<u32> {
        self.slots.iter().take(k).map(|s| s.nb.id).collect()
    }
}

/// One graph walk: graph ids map to dataset rows through `members` when set.
struct Walk<'a> {
    graph: &'a NeighborGraph,
    dataset: &'a VectorDataset,
    members: Option<&'a [u32]>,
    q: &'a [f32],
    pool: Pool,
    seen: Bitset,
    dist_count: u64,
    update_count: u64,
    expansions: u64,
    log: Option<Vec<u32>>,
}

impl<'a> Walk<'a> {
    fn new(
        graph: &'a NeighborGraph,
        dataset: &'a VectorDataset,
        members: Option<&'a [u32]>,
        q: &'a [f32],
        cap: usize,
    ) -> Self {
        Self {
            graph,
            dataset,
            members,
            q,
            pool: Pool::new(cap),
            seen: Bitset::new(graph.node_count()),
            dist_count: 0,
            update_count: 0,
            expansions: 0,
            log: None,
        }
    }

    #[inline]
    fn evaluate(&mut self, id: u32) {
        let row = match self.members {
            Some(m) => m[id as usize],
            None => id,
        };
        let d = l2(self.q, self.dataset.row(row as usize));
        self.dist_count += 1;
        if let Some(log) = self.log.as_mut() {
            log.push(id);
        }
        if self.pool.insert(Neighbor::new(id, d)) {
            self.update_count += 1;
        }
    }

    fn seed_entries(&mut self, entries: &[u32]) {
        for &e in entries {
            if self.seen.insert(e) {
                self.evaluate(e);
            }
        }
    }

    /// Seeds with already-scored candidates, without recomputing distances.
    fn seed_scored(&mut self, scored: &[Neighbor]) {
        for &nb in scored {
            if self.seen.insert(nb.id) {
                self.pool.insert(nb);
            }
        }
    }

    /// Expands the closest unexpanded pool member. Returns `false` when none is left.
    fn step(&mut self) -> bool {
        let Some(p) = self.pool.next_unexpanded() else {
            return false;
        };
        self.expansions += 1;
        let graph = self.graph;
        for &v in graph.neighbors(p) {
            if self.seen.insert(v) {
                self.evaluate(v);
            }
        }
        true
    }

    fn run(&mut self) {
        while self.step() {}
    }
}

fn check_graph_search(graph: &NeighborGraph, entry: &[u32], k: usize, l: usize) -> Result<()> {
    ensure!(graph.node_count() > 0, "cannot search an empty graph");
    ensure!(!entry.is_empty(), "no entry points");
    ensure!(k >= 1 && l >= k, "need 1 <= k <= l (k = {k}, l = {l})");
    for &e in entry {
        ensure!((e as usize) < graph.node_count(), "entry point {e} out of range");
    }
    Ok(())
}

/// Beam search with pool size `l` from `entry`, returning the `k` closest
/// nodes once every pool member has been expanded.
pub fn beam_search(
    graph: &NeighborGraph,
    entry: &[u32],
    dataset: &VectorDataset,
    q: &[f32],
    k: usize,
    l: usize,
) -> Result<(ResultList, SearchTrace)> {
    let (res, trace, _) = beam_search_inner(graph, entry, dataset, q, k, l, false)?;
    Ok((res, trace))
}

/// [`beam_search`] that also returns every id whose distance was computed, in order.
pub fn beam_search_logged(
    graph: &NeighborGraph,
    entry: &[u32],
    dataset: &VectorDataset,
    q: &[f32],
    k: usize,
    l: usize,
) -> Result<(ResultList, SearchTrace, Vec<u32>)> {
    beam_search_inner(graph, entry, dataset, q, k, l, true)
}

fn beam_search_inner(
    graph: &NeighborGraph,
    entry: &[u32],
    dataset: &VectorDataset,
    q: &[f32],
    k: usize,
    l: usize,
    logged: bool,
) -> Result<(ResultList, SearchTrace, Vec<u32>)> {
    check_graph_search(graph, entry, k, l)?;
    dataset.check_query(q)?;
    ensure!(
        graph.node_count() <= dataset.len(),
        "graph has more nodes than the dataset"
    );
    let mut walk = Walk::new(graph, dataset, None, q, l);
    if logged {
        walk.log = Some(Vec::new());
    }
    walk.seed_entries(entry);
    walk.run();
    let trace = SearchTrace {
        dist_count: walk.dist_count,
        update_count: walk.update_count,
        full_first: walk.pool.first(),
        full_kth: walk.pool.kth(k),
        expansions: walk.expansions,
        ..SearchTrace::default()
    };
    Ok((walk.pool.top(k), trace, walk.log.unwrap_or_default()))
}

/// Full graph, current hot graph, access counters and hot configuration.
#[derive(Debug)]
pub struct DualIndex {
    pub full: GraphIndex,
    hot: RwLock<Arc<HotGraph>>,
    pub counter: AccessCounter,
    pub config: HotIndexConfig,
    dataset_len: usize,
    dataset_dim: usize,
}

impl DualIndex {
    pub fn new(
        dataset: &VectorDataset,
        full: GraphIndex,
        hot: HotGraph,
        counter: AccessCounter,
        config: HotIndexConfig,
    ) -> Result<Self> {
        ensure!(
            full.graph.node_count() == dataset.len(),
            "full graph has {} nodes for {} points",
            full.graph.node_count(),
            dataset.len()
        );
        ensure!(counter.len() == dataset.len(), "counter size mismatch");
        let index = Self {
            full,
            hot: RwLock::new(Arc::new(hot.clone())),
            counter,
            config,
            dataset_len: dataset.len(),
            dataset_dim: dataset.dim(),
        };
        index.check_hot(&hot)?;
        Ok(index)
    }

    /// Builds the full graph, and a hot graph over the first `hot_size` ids
    /// until real access counts are available.
    pub fn build(dataset: &VectorDataset, config: HotIndexConfig) -> Result<Self> {
        config.validate(dataset.len())?;
        let full = crate::graph::build_full_index(dataset, &config.build)?;
        let counter = AccessCounter::new(dataset.len());
        let n_idx = config.hot_size(dataset.len());
        let ids = select_hot_nodes(&counter.snapshot(), n_idx)?;
        let hot = build_hot_index(dataset, &ids, &config.hot_build_params(n_idx))?;
        Self::new(dataset, full, hot, counter, config)
    }

    pub fn dataset_len(&self) -> usize {
        self.dataset_len
    }

    pub fn dataset_dim(&self) -> usize {
        self.dataset_dim
    }

    /// The currently published hot graph.
    pub fn hot(&self) -> Arc<HotGraph> {
        Arc::clone(&self.hot.read().unwrap_or_else(|e| e.into_inner()))
    }

    fn check_hot(&self, hot: &HotGraph) -> Result<()> {
        ensure!(
            hot.source_len == self.dataset_len && hot.source_dim == self.dataset_dim,
            "hot graph was built for a {}x{} corpus, index covers {}x{}",
            hot.source_len,
            hot.source_dim,
            self.dataset_len,
            self.dataset_dim
        );
        hot.validate()
    }

    /// Atomically replaces the hot graph and starts a new counting epoch.
    pub fn publish_hot(&self, hot: HotGraph) -> Result<()> {
        self.check_hot(&hot)?;
        *self.hot.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(hot);
        self.counter.start_epoch();
        Ok(())
    }

    /// Selects the current top-frequency nodes and builds a hot graph over them.
    pub fn build_hot_from_counts(&self, dataset: &VectorDataset) -> Result<HotGraph> {
        let n_idx = self.config.hot_size(self.dataset_len);
        let ids = select_hot_nodes(&self.counter.snapshot(), n_idx)?;
        build_hot_index(dataset, &ids, &self.config.hot_build_params(n_idx))
    }

    /// Rebuilds and publishes the hot graph if the trigger has tripped.
    pub fn rebuild_if_due(&self, dataset: &VectorDataset) -> Result<bool> {
        if !self.counter.should_rebuild(&self.config) {
            return Ok(false);
        }
        let hot = self.build_hot_from_counts(dataset)?;
        self.publish_hot(hot)?;
        Ok(true)
    }

    /// Plain beam search over the full graph.
    pub fn search_full(
        &self,
        dataset: &VectorDataset,
        q: &[f32],
        k: usize,
        l: usize,
    ) -> Result<(ResultList, SearchTrace)> {
        self.check_dataset(dataset)?;
        beam_search(&self.full.graph, &self.full.entry_points, dataset, q, k, l)
    }

    fn check_dataset(&self, dataset: &VectorDataset) -> Result<()> {
        ensure!(
            dataset.len() == self.dataset_len && dataset.dim() == self.dataset_dim,
            "dataset shape {}x{} does not match index {}x{}",
            dataset.len(),
            dataset.dim(),
            self.dataset_len,
            self.dataset_dim
        );
        Ok(())
    }
}

/// State of the full-graph phase at a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub features: FeatureVector,
    /// Current top-k ids.
    pub top_ids: Vec<u32>,
}

enum Checkpoints<'a> {
    Off,
    On {
        rule: &'a dyn StopRule,
        observer: Option<&'a mut dyn FnMut(&Checkpoint)>,
    },
}

fn two_phase(
    index: &DualIndex,
    hot: &HotGraph,
    dataset: &VectorDataset,
    q: &[f32],
    params: &SearchParams,
    mut checkpoints: Checkpoints<'_>,
) -> Result<(ResultList, SearchTrace)> {
    params.validate()?;
    index.check_dataset(dataset)?;
    dataset.check_query(q)?;
    ensure!(!hot.is_empty(), "hot graph is empty");
    let k = params.k;

    let mut trace = SearchTrace::default();

    // Hot phase.
    let hot_entries = hot.local_entry_points();
    let mut walk = Walk::new(&hot.graph, dataset, Some(&hot.members), q, params.s_l);
    walk.seed_entries(&hot_entries);
    walk.run();
    trace.hot_dist_count = walk.dist_count;
    trace.hot_first = walk.pool.first();
    trace.hot_kth = walk.pool.kth(k);
    // `members` is ascending, so mapping to global ids keeps the (distance, id) order.
    let seeds: Vec<Neighbor> = walk
        .pool
        .slots
        .iter()
        .map(|s| Neighbor::new(hot.global(s.nb.id), s.nb.distance))
        .collect();
    let hot_expansions = walk.expansions;

    // Full phase: hot results become unexpanded seeds.
    let mut walk = Walk::new(&index.full.graph, dataset, None, q, params.l);
    walk.seed_scored(&seeds);
    let mut next_checkpoint = params.eval_gap as u64;
    let mut remaining: Option<usize> = None;
    let mut observed_at: Option<u64> = None;
    loop {
        if remaining == Some(0) {
            break;
        }
        if !walk.step() {
            break;
        }
        if let Some(r) = remaining.as_mut() {
            *r -= 1;
            continue;
        }
        let Checkpoints::On { rule, observer } = &mut checkpoints else {
            continue;
        };
        if walk.dist_count < next_checkpoint {
            continue;
        }
        let gap = params.eval_gap as u64;
        next_checkpoint = (walk.dist_count / gap + 1) * gap;
        trace.checkpoints_evaluated += 1;
        trace.dist_count = walk.dist_count;
        trace.update_count = walk.update_count;
        trace.full_first = walk.pool.first();
        trace.full_kth = walk.pool.kth(k);
        let features = extract_features(&trace);
        if let Some(obs) = observer.as_mut() {
            obs(&Checkpoint { features, top_ids: walk.pool.top_ids(k) });
            observed_at = Some(walk.dist_count);
        }
        if rule.verdict(&features) == Verdict::Terminate {
            trace.terminated_early = true;
            remaining = Some(params.add_step);
        }
    }
    trace.dist_count = walk.dist_count;
    trace.update_count = walk.update_count;
    trace.full_first = walk.pool.first();
    trace.full_kth = walk.pool.kth(k);
    trace.expansions = hot_expansions + walk.expansions;
    // An observer also sees the state at exhaustion, so the last observation
    // of a completed search is always its final result.
    if let Checkpoints::On { observer: Some(obs), .. } = &mut checkpoints {
        if !trace.terminated_early && observed_at != Some(walk.dist_count) {
            obs(&Checkpoint { features: extract_features(&trace), top_ids: walk.pool.top_ids(k) });
        }
    }
    Ok((walk.pool.top(k), trace))
}

/// Two-phase search: beam search in the hot graph, then continue in the full
/// graph from the hot results, consulting `rule` every `eval_gap` distance
/// computations. The final top-k ids are recorded in the access counter.
pub fn dynamic_search(
    index: &DualIndex,
    dataset: &VectorDataset,
    q: &[f32],
    params: &SearchParams,
    rule: &dyn StopRule,
) -> Result<(ResultList, SearchTrace)> {
    rule.check()?;
    let hot = index.hot();
    let out = two_phase(
        index,
        &hot,
        dataset,
        q,
        params,
        Checkpoints::On { rule, observer: None },
    )?;
    for nb in &out.0 {
        index.counter.record_access(nb.id)?;
    }
    Ok(out)
}

/// Hot phase followed by an unconditional full phase, with no checkpoints
/// and no access recording.
pub fn two_phase_search(
    index: &DualIndex,
    dataset: &VectorDataset,
    q: &[f32],
    params: &SearchParams,
) -> Result<(ResultList, SearchTrace)> {
    let hot = index.hot();
    two_phase(index, &hot, dataset, q, params, Checkpoints::Off)
}

/// Runs the two-phase search under `rule` without touching the access
/// counter, reporting every checkpoint to `observer`.
pub fn observe_checkpoints(
    index: &DualIndex,
    dataset: &VectorDataset,
    q: &[f32],
    params: &SearchParams,
    rule: &dyn StopRule,
    observer: &mut dyn FnMut(&Checkpoint),
) -> Result<(ResultList, SearchTrace)> {
    rule.check()?;
    let hot = index.hot();
    two_phase(
        index,
        &hot,
        dataset,
        q,
        params,
        Checkpoints::On { rule, observer: Some(observer) },
    )
}

impl From<Verdict> for Always {
    fn from(v: Verdict) -> Self {
        Always(v)
    }
}
