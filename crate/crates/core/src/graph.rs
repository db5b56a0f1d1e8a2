//! Full-index construction: NN-descent k-NN graph, angular pruning over
//! two-hop candidates, and connectivity repair from the medoid entry point.

use std::collections::VecDeque;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::vectors::{l2, Neighbor, VectorDataset};

/// Directed graph over dataset ids. Each list is sorted by ascending
/// distance to its owner.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct NeighborGraph {
    adjacency: Vec<Vec<u32>>,
    max_degree: usize,
}

impl NeighborGraph {
    pub fn from_adjacency(adjacency: Vec<Vec<u32>>, max_degree: usize) -> Result<Self> {
        let g = Self { adjacency, max_degree };
        g.validate()?;
        Ok(g)
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    #[inline]
    pub fn neighbors(&self, id: u32) -> &[u32] {
        &self.adjacency[id as usize]
    }

    pub fn adjacency(&self) -> &[Vec<u32>] {
        &self.adjacency
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum()
    }

    /// Checks for self-loops, duplicates, out-of-range ids and the degree cap.
    pub fn validate(&self) -> Result<()> {
        let n = self.adjacency.len();
        for (owner, list) in self.adjacency.iter().enumerate() {
            ensure!(
                list.len() <= self.max_degree,
                "node {owner} has degree {} > cap {}",
                list.len(),
                self.max_degree
            );
            let mut sorted = list.clone();
            sorted.sort_unstable();
            ensure!(
                sorted.windows(2).all(|w| w[0] != w[1]),
                "node {owner} has duplicate neighbors"
            );
            for &v in list {
                ensure!((v as usize) < n, "node {owner} links to out-of-range id {v}");
                ensure!(v as usize != owner, "node {owner} has a self-loop");
            }
        }
        Ok(())
    }

    /// Marks every node reachable from `entries`.
    pub fn reachable_from(&self, entries: &[u32]) -> Vec<bool> {
        let mut seen = vec![false; self.node_count()];
        let mut queue = VecDeque::new();
        for &e in entries {
            if !seen[e as usize] {
                seen[e as usize] = true;
                queue.push_back(e);
            }
        }
        self.bfs(&mut seen, queue);
        seen
    }

    fn bfs(&self, seen: &mut [bool], mut queue: VecDeque<u32>) {
        while let Some(u) = queue.pop_front() {
            for &v in self.neighbors(u) {
                if !seen[v as usize] {
                    seen[v as usize] = true;
                    queue.push_back(v);
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildParams {
    /// Degree of the k-NN graph the pruning starts from.
    pub knng_k: usize,
    pub nn_descent_iters: usize,
    /// Minimum angle, in degrees, between two retained edges of a node.
    pub angle_threshold_degrees: f64,
    pub max_degree: usize,
    pub seed: u64,
}

impl Default for BuildParams {
    fn default() -> Self {
        Self {
            knng_k: 100,
            nn_descent_iters: 8,
            angle_threshold_degrees: 60.0,
            max_degree: 50,
            seed: 0x5eed,
        }
    }
}

impl BuildParams {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.knng_k >= 1, "knng_k must be positive");
        ensure!(self.max_degree >= 1, "max_degree must be positive");
        ensure!(
            self.angle_threshold_degrees > 0.0 && self.angle_threshold_degrees < 180.0,
            "angle threshold {} outside (0, 180)",
            self.angle_threshold_degrees
        );
        Ok(())
    }
}

/// A built graph plus the ids searches start from.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphIndex {
    pub graph: NeighborGraph,
    pub entry_points: Vec<u32>,
}

fn node_rng(seed: u64, round: u64, node: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(round.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ node as u64);
    rng
}

#[derive(Clone, Copy)]
struct Slot {
    nb: Neighbor,
    fresh: bool,
}

/// Fraction of each list sampled into the local join per round.
const JOIN_SAMPLE_RATE: f64 = 0.5;

/// Approximate k-NN graph by NN-descent.
///
/// Each round every node pulls candidates from the lists of its sampled
/// forward and reverse neighbors, reading only the previous round's state,
/// so the result depends on the seed alone and not on thread scheduling.
pub fn build_knng(dataset: &VectorDataset, params: &BuildParams) -> Result<NeighborGraph> {
    params.validate()?;
    let n = dataset.len();
    let k = params.knng_k;
    ensure!(k < n, "knng_k = {k} must be smaller than the point count {n}");

    let mut lists: Vec<Vec<Slot>> = (0..n)
        .into_par_iter()
        .map(|p| {
            let mut rng = node_rng(params.seed, 0, p);
            let mut list: Vec<Slot> = sample(&mut rng, n - 1, k)
                .into_iter()
                .map(|i| if i >= p { i + 1 } else { i })
                .map(|q| Slot {
                    nb: Neighbor::new(q as u32, l2(dataset.row(p), dataset.row(q))),
                    fresh: true,
                })
                .collect();
            list.sort_unstable_by(|a, b| a.nb.cmp_rank(&b.nb));
            list
        })
        .collect();

    let per_side = ((k as f64 * JOIN_SAMPLE_RATE).ceil() as usize).max(1);

    for round in 1..=params.nn_descent_iters as u64 {
        // Split each list into sampled-new and old forward neighbors.
        let split: Vec<(Vec<u32>, Vec<u32>)> = lists
            .par_iter()
            .enumerate()
            .map(|(p, list)| {
                let mut rng = node_rng(params.seed, round, p);
                let mut fresh: Vec<u32> = list.iter().filter(|s| s.fresh).map(|s| s.nb.id).collect();
                if fresh.len() > per_side {
                    let picks = sample(&mut rng, fresh.len(), per_side).into_vec();
                    fresh = picks.into_iter().map(|i| fresh[i]).collect();
                }
                fresh.sort_unstable();
                let old: Vec<u32> = list.iter().filter(|s| !s.fresh).map(|s| s.nb.id).collect();
                (fresh, old)
            })
            .collect();

        for (list, (fresh, _)) in lists.iter_mut().zip(&split) {
            for s in list.iter_mut() {
                if s.fresh && fresh.binary_search(&s.nb.id).is_ok() {
                    s.fresh = false;
                }
            }
        }

        let mut rev_new: Vec<Vec<u32>> = vec![Vec::new(); n];
        let mut rev_old: Vec<Vec<u32>> = vec![Vec::new(); n];
        for (p, (fresh, old)) in split.iter().enumerate() {
            for &q in fresh {
                rev_new[q as usize].push(p as u32);
            }
            for &q in old {
                rev_old[q as usize].push(p as u32);
            }
        }
        let cap = |v: &mut Vec<u32>, rng: &mut ChaCha8Rng| {
            if v.len() > per_side {
                let mut keep: Vec<u32> = sample(rng, v.len(), per_side).into_iter().map(|i| v[i]).collect();
                keep.sort_unstable();
                *v = keep;
            }
        };
        let (new_sets, old_sets): (Vec<Vec<u32>>, Vec<Vec<u32>>) = split
            .into_par_iter()
            .zip(rev_new.into_par_iter().zip(rev_old.into_par_iter()))
            .enumerate()
            .map(|(p, ((mut fresh, mut old), (mut rn, mut ro)))| {
                let mut rng = node_rng(params.seed ^ 0xa5a5, round, p);
                cap(&mut rn, &mut rng);
                cap(&mut ro, &mut rng);
                fresh.extend(rn);
                fresh.sort_unstable();
                fresh.dedup();
                old.extend(ro);
                old.sort_unstable();
                old.dedup();
                (fresh, old)
            })
            .unzip();

        lists = lists
            .into_par_iter()
            .enumerate()
            .map(|(p, mut list)| {
                let mut cand: Vec<u32> = Vec::new();
                for &q in &new_sets[p] {
                    cand.extend_from_slice(&new_sets[q as usize]);
                    cand.extend_from_slice(&old_sets[q as usize]);
                }
                for &q in &old_sets[p] {
                    cand.extend_from_slice(&new_sets[q as usize]);
                }
                cand.sort_unstable();
                cand.dedup();
                let mut present: Vec<u32> = list.iter().map(|s| s.nb.id).collect();
                present.sort_unstable();
                let worst = list.last().map(|s| s.nb);
                for c in cand {
                    if c as usize == p || present.binary_search(&c).is_ok() {
                        continue;
                    }
                    let nb = Neighbor::new(c, l2(dataset.row(p), dataset.row(c as usize)));
                    if let Some(w) = worst {
                        if nb.cmp_rank(&w).is_ge() && list.len() >= k {
                            continue;
                        }
                    }
                    list.push(Slot { nb, fresh: true });
                }
                list.sort_unstable_by(|a, b| a.nb.cmp_rank(&b.nb));
                list.truncate(k);
                list
            })
            .collect();
    }

    let adjacency = lists
        .into_iter()
        .map(|l| l.into_iter().map(|s| s.nb.id).collect())
        .collect();
    NeighborGraph::from_adjacency(adjacency, k)
}

fn squared_f64(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = *x as f64 - *y as f64;
            d * d
        })
        .sum()
}

/// Two-hop candidates of `node` in `knng`, sorted by `(distance, id)`.
fn two_hop_candidates(knng: &NeighborGraph, dataset: &VectorDataset, node: u32) -> Vec<Neighbor> {
    let mut ids: Vec<u32> = Vec::new();
    for &j in knng.neighbors(node) {
        ids.push(j);
        ids.extend_from_slice(knng.neighbors(j));
    }
    ids.sort_unstable();
    ids.dedup();
    let here = dataset.row(node as usize);
    let mut cands: Vec<Neighbor> = ids
        .into_iter()
        .filter(|&c| c != node)
        .map(|c| Neighbor::new(c, l2(here, dataset.row(c as usize))))
        .collect();
    cands.sort_unstable_by(Neighbor::cmp_rank);
    cands
}

/// Greedy angular selection over distance-sorted candidates.
///
/// A candidate is kept iff the cosine of the angle it forms at `origin` with
/// every already kept neighbor is at most `cos(angle)`. Candidates coinciding
/// with `origin` are skipped since their angle is undefined.
pub fn angular_select(
    dataset: &VectorDataset,
    origin: &[f32],
    sorted: &[Neighbor],
    angle_degrees: f64,
    max_degree: usize,
) -> Vec<u32> {
    let cos_limit = angle_degrees.to_radians().cos();
    // (id, squared distance to origin)
    let mut kept: Vec<(u32, f64)> = Vec::new();
    for cand in sorted {
        if kept.len() >= max_degree {
            break;
        }
        let cv = dataset.row(cand.id as usize);
        let a2 = squared_f64(origin, cv);
        if a2 == 0.0 {
            continue;
        }
        let ok = kept.iter().all(|&(kid, b2)| {
            let c2 = squared_f64(cv, dataset.row(kid as usize));
            let cos = (a2 + b2 - c2) / (2.0 * (a2 * b2).sqrt());
            cos <= cos_limit
        });
        if ok {
            kept.push((cand.id, a2));
        }
    }
    kept.into_iter().map(|(id, _)| id).collect()
}

/// Prunes the two-hop k-NN neighborhood of `node` to an angularly spread set
/// of at most `max_degree` neighbors.
pub fn ssg_prune(
    knng: &NeighborGraph,
    dataset: &VectorDataset,
    node: u32,
    angle_degrees: f64,
    max_degree: usize,
) -> Result<Vec<u32>> {
    ensure!(
        (node as usize) < knng.node_count(),
        "node {node} out of range for graph of {} nodes",
        knng.node_count()
    );
    let cands = two_hop_candidates(knng, dataset, node);
    Ok(angular_select(
        dataset,
        dataset.row(node as usize),
        &cands,
        angle_degrees,
        max_degree,
    ))
}

/// Approximate medoid: the point closest to the centroid, as a singleton list.
pub fn select_entry_points(dataset: &VectorDataset) -> Vec<u32> {
    let dim = dataset.dim();
    let mut centroid = vec![0f64; dim];
    for row in dataset.rows() {
        for (c, v) in centroid.iter_mut().zip(row) {
            *c += *v as f64;
        }
    }
    let n = dataset.len() as f64;
    centroid.iter_mut().for_each(|c| *c /= n);
    let mut best = (f64::INFINITY, 0u32);
    for (i, row) in dataset.rows().enumerate() {
        let d: f64 = row.iter().zip(&centroid).map(|(v, c)| (*v as f64 - c).powi(2)).sum();
        if d < best.0 {
            best = (d, i as u32);
        }
    }
    vec![best.1]
}

/// Links every node unreachable from `entries` to its nearest reachable node.
///
/// When the chosen owner is at the degree cap, its longest edge whose target
/// keeps another in-edge is evicted (falling back to its longest edge).
fn repair_connectivity(
    adjacency: &mut [Vec<u32>],
    dataset: &VectorDataset,
    entries: &[u32],
    max_degree: usize,
) {
    let n = adjacency.len();
    loop {
        let graph = NeighborGraph { adjacency: adjacency.to_vec(), max_degree };
        let mut seen = graph.reachable_from(entries);
        if seen.iter().all(|&s| s) {
            return;
        }
        let mut indegree = vec![0u32; n];
        for list in adjacency.iter() {
            for &v in list {
                indegree[v as usize] += 1;
            }
        }
        for u in 0..n {
            if seen[u] {
                continue;
            }
            let target = dataset.row(u);
            let owner = (0..n)
                .filter(|&v| seen[v])
                .map(|v| Neighbor::new(v as u32, l2(target, dataset.row(v))))
                .min_by(Neighbor::cmp_rank)
                .expect("entry points are always reachable")
                .id as usize;

            let owner_row = dataset.row(owner);
            let list = &mut adjacency[owner];
            if list.len() >= max_degree {
                let victim = list
                    .iter()
                    .rposition(|&v| indegree[v as usize] >= 2)
                    .unwrap_or(list.len() - 1);
                let removed = list.remove(victim);
                indegree[removed as usize] -= 1;
            }
            let du = Neighbor::new(u as u32, l2(owner_row, target));
            let pos = list.partition_point(|&v| {
                Neighbor::new(v, l2(owner_row, dataset.row(v as usize))).cmp_rank(&du).is_lt()
            });
            list.insert(pos, u as u32);
            indegree[u] += 1;

            // Mark the newly attached region as reached.
            seen[u] = true;
            let mut queue = VecDeque::from([u as u32]);
            while let Some(x) = queue.pop_front() {
                for &y in &adjacency[x as usize] {
                    if !seen[y as usize] {
                        seen[y as usize] = true;
                        queue.push_back(y);
                    }
                }
            }
        }
    }
}

/// Builds the angularly pruned graph over the whole dataset, with every node
/// reachable from the returned entry points.
pub fn build_full_index(dataset: &VectorDataset, params: &BuildParams) -> Result<GraphIndex> {
    ensure!(dataset.len() >= 2, "need at least two points to build a graph");
    let knng = build_knng(dataset, params)?;
    let mut adjacency: Vec<Vec<u32>> = (0..dataset.len() as u32)
        .into_par_iter()
        .map(|p| {
            let cands = two_hop_candidates(&knng, dataset, p);
            angular_select(
                dataset,
                dataset.row(p as usize),
                &cands,
                params.angle_threshold_degrees,
                params.max_degree,
            )
        })
        .collect();
    let entry_points = select_entry_points(dataset);
    repair_connectivity(&mut adjacency, dataset, &entry_points, params.max_degree);
    let graph = NeighborGraph::from_adjacency(adjacency, params.max_degree)?;
    Ok(GraphIndex { graph, entry_points })
}

/// Walks greedily from `start`, always moving to the neighbor closest to `q`,
/// until no neighbor improves. Returns the final node.
pub fn greedy_walk(graph: &NeighborGraph, dataset: &VectorDataset, start: u32, q: &[f32]) -> u32 {
    let mut cur = Neighbor::new(start, l2(q, dataset.row(start as usize)));
    loop {
        let best = graph
            .neighbors(cur.id)
            .iter()
            .map(|&v| Neighbor::new(v, l2(q, dataset.row(v as usize))))
            .min_by(Neighbor::cmp_rank);
        match best {
            Some(b) if b.cmp_rank(&cur).is_lt() => cur = b,
            _ => return cur.id,
        }
    }
}
