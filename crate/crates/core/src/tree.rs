//! Checkpoint features, training-data generation, and a CART-style binary
//! decision tree that predicts whether the full-graph phase can stop.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::search::{observe_checkpoints, Always, Checkpoint, DualIndex, SearchParams, StopRule};
use crate::vectors::{recall_of_ids, VectorDataset};

pub const FEATURE_COUNT: usize = 6;

/// Feature names in column order.
pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "hotIdx_1st",
    "hotIdx_1st_div_kth",
    "fullIdx_1st",
    "fullIdx_1st_div_kth",
    "dist_count",
    "update_count",
];

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureVector {
    /// Distance to the nearest hot-phase result.
    pub hot_first: f64,
    pub hot_first_div_kth: f64,
    /// Distance to the current nearest full-phase candidate.
    pub full_first: f64,
    pub full_first_div_kth: f64,
    pub dist_count: f64,
    pub update_count: f64,
}

impl FeatureVector {
    pub fn to_array(&self) -> [f64; FEATURE_COUNT] {
        [
            self.hot_first,
            self.hot_first_div_kth,
            self.full_first,
            self.full_first_div_kth,
            self.dist_count,
            self.update_count,
        ]
    }

    pub fn from_array(a: [f64; FEATURE_COUNT]) -> Self {
        Self {
            hot_first: a[0],
            hot_first_div_kth: a[1],
            full_first: a[2],
            full_first_div_kth: a[3],
            dist_count: a[4],
            update_count: a[5],
        }
    }

    #[inline]
    pub fn get(&self, feature: usize) -> f64 {
        self.to_array()[feature]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verdict {
    Continue,
    Terminate,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Continue => "continue",
            Verdict::Terminate => "terminate",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub features: FeatureVector,
    pub label: Verdict,
}

/// Checkpoints of one training query's full, never-terminated search.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryTrace {
    /// Position of the query in the caller's list.
    pub query: usize,
    pub checkpoints: Vec<Checkpoint>,
    pub labels: Vec<Verdict>,
    pub final_ids: Vec<u32>,
    pub dist_count_total: u64,
}

impl QueryTrace {
    /// Recall of the top-k at checkpoint `i` against the final top-k.
    pub fn checkpoint_recall(&self, i: usize) -> f64 {
        recall_of_ids(&self.checkpoints[i].top_ids, &self.final_ids)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingSet {
    pub samples: Vec<LabeledSample>,
    pub traces: Vec<QueryTrace>,
}

/// Drops exact duplicate vectors, keeping first occurrences. Returns the
/// indices kept.
pub fn dedup_queries(queries: &[&[f32]]) -> Vec<usize> {
    let mut seen: HashSet<Vec<u32>> = HashSet::new();
    queries
        .iter()
        .enumerate()
        .filter(|(_, q)| seen.insert(q.iter().map(|v| v.to_bits()).collect()))
        .map(|(i, _)| i)
        .collect()
}

/// Runs every distinct query through the two-phase search with no early
/// termination and labels each checkpoint: `Continue` iff the top-k set
/// still changes afterwards.
pub fn generate_training_data(
    index: &DualIndex,
    dataset: &VectorDataset,
    historical_queries: &[&[f32]],
    params: &SearchParams,
) -> Result<TrainingSet> {
    ensure!(!historical_queries.is_empty(), "no historical queries");
    let mut set = TrainingSet::default();
    for qi in dedup_queries(historical_queries) {
        let q = historical_queries[qi];
        let mut checkpoints = Vec::new();
        let (res, trace) = observe_checkpoints(
            index,
            dataset,
            q,
            params,
            &Always(Verdict::Continue),
            &mut |c| checkpoints.push(c.clone()),
        )?;
        let mut final_ids: Vec<u32> = res.iter().map(|n| n.id).collect();
        final_ids.sort_unstable();
        let labels: Vec<Verdict> = checkpoints
            .iter()
            .map(|c: &Checkpoint| {
                let mut ids = c.top_ids.clone();
                ids.sort_unstable();
                if ids == final_ids {
                    Verdict::Terminate
                } else {
                    Verdict::Continue
                }
            })
            .collect();
        for (c, &label) in checkpoints.iter().zip(&labels) {
            set.samples.push(LabeledSample { features: c.features, label });
        }
        set.traces.push(QueryTrace {
            query: qi,
            checkpoints,
            labels,
            final_ids: res.iter().map(|n| n.id).collect(),
            dist_count_total: trace.dist_count,
        });
    }
    Ok(set)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        /// Preorder index of the right child; the left child is the next node.
        right: usize,
        /// Weighted impurity decrease of this split.
        gain: f64,
    },
    Leaf {
        verdict: Verdict,
        continue_weight: f64,
        terminate_weight: f64,
        samples: usize,
    },
}

/// Binary axis-aligned classifier stored as a preorder node list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<TreeNode>,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub seed: u64,
}

impl DecisionTree {
    pub const DEFAULT_MAX_DEPTH: usize = 10;
    pub const DEFAULT_MIN_LEAF: usize = 20;

    /// A single leaf that always returns `verdict`.
    pub fn constant(verdict: Verdict) -> Self {
        Self {
            nodes: vec![TreeNode::Leaf {
                verdict,
                continue_weight: 0.0,
                terminate_weight: 0.0,
                samples: 0,
            }],
            max_depth: 0,
            min_leaf: 1,
            seed: 0,
        }
    }

    pub fn is_trained(&self) -> bool {
        !self.nodes.is_empty()
    }

    /// Depth of the deepest leaf (a single leaf has depth 0).
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], i: usize) -> usize {
            match nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { right, .. } => 1 + walk(nodes, i + 1).max(walk(nodes, right)),
            }
        }
        if self.nodes.is_empty() {
            0
        } else {
            walk(&self.nodes, 0)
        }
    }

    pub fn predict(&self, f: &FeatureVector) -> Verdict {
        let x = f.to_array();
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf { verdict, .. } => return verdict,
                TreeNode::Split { feature, threshold, right, .. } => {
                    i = if x[feature] <= threshold { i + 1 } else { right };
                }
            }
        }
    }

    /// Per-feature share of the total weighted impurity decrease. All zeros
    /// when the tree has no split.
    pub fn feature_importance(&self) -> [f64; FEATURE_COUNT] {
        let mut imp = [0.0; FEATURE_COUNT];
        for n in &self.nodes {
            if let TreeNode::Split { feature, gain, .. } = n {
                imp[*feature] += gain;
            }
        }
        let total: f64 = imp.iter().sum();
        if total > 0.0 {
            imp.iter_mut().for_each(|v| *v /= total);
        }
        imp
    }

    /// Structural checks for a tree loaded from disk.
    pub fn validate(&self) -> Result<()> {
        ensure!(self.is_trained(), "decision tree has no nodes");
        let mut reached = vec![false; self.nodes.len()];
        let mut stack = vec![(0usize, 0usize)];
        while let Some((i, depth)) = stack.pop() {
            ensure!(i < self.nodes.len(), "child index {i} out of range");
            ensure!(!reached[i], "node {i} reached twice");
            reached[i] = true;
            if let TreeNode::Split { feature, threshold, right, .. } = self.nodes[i] {
                ensure!(feature < FEATURE_COUNT, "feature index {feature} out of range");
                ensure!(threshold.is_finite(), "non-finite threshold at node {i}");
                ensure!(right > i + 1, "right child must follow the left subtree");
                stack.push((i + 1, depth + 1));
                stack.push((right, depth + 1));
            }
        }
        ensure!(reached.iter().all(|&r| r), "unreachable nodes in tree");
        Ok(())
    }
}

impl StopRule for DecisionTree {
    fn verdict(&self, features: &FeatureVector) -> Verdict {
        self.predict(features)
    }

    fn check(&self) -> Result<()> {
        ensure!(self.is_trained(), "decision tree is untrained");
        Ok(())
    }
}

struct Trainer {
    x: Vec<[f64; FEATURE_COUNT]>,
    y: Vec<Verdict>,
    weight: [f64; 2],
    max_depth: usize,
    min_leaf: usize,
    nodes: Vec<TreeNode>,
}

fn class(v: Verdict) -> usize {
    match v {
        Verdict::Continue => 0,
        Verdict::Terminate => 1,
    }
}

/// Weighted Gini impurity times total weight.
fn weighted_gini(w: [f64; 2]) -> f64 {
    let t = w[0] + w[1];
    if t <= 0.0 {
        0.0
    } else {
        t - (w[0] * w[0] + w[1] * w[1]) / t
    }
}

struct Split {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl Trainer {
    fn totals(&self, idx: &[usize]) -> [f64; 2] {
        let mut w = [0.0; 2];
        for &i in idx {
            let c = class(self.y[i]);
            w[c] += self.weight[c];
        }
        w
    }

    fn best_split(&self, idx: &[usize], parent: [f64; 2]) -> Option<Split> {
        let parent_imp = weighted_gini(parent);
        let mut best: Option<Split> = None;
        let mut order = idx.to_vec();
        for f in 0..FEATURE_COUNT {
            order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]).then(a.cmp(&b)));
            let mut left = [0.0; 2];
            for pos in 0..order.len() - 1 {
                let i = order[pos];
                let c = class(self.y[i]);
                left[c] += self.weight[c];
                let (a, b) = (self.x[i][f], self.x[order[pos + 1]][f]);
                if a == b {
                    continue;
                }
                let n_left = pos + 1;
                if n_left < self.min_leaf || order.len() - n_left < self.min_leaf {
                    continue;
                }
                let right = [parent[0] - left[0], parent[1] - left[1]];
                let gain = parent_imp - weighted_gini(left) - weighted_gini(right);
                if best.as_ref().is_none_or(|s| gain > s.gain) {
                    let mut threshold = a + (b - a) / 2.0;
                    if threshold >= b {
                        threshold = a;
                    }
                    best = Some(Split { feature: f, threshold, gain: gain.max(0.0) });
                }
            }
        }
        best
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize) {
        let w = self.totals(&idx);
        let pure = w[0] == 0.0 || w[1] == 0.0;
        let split = if pure || depth >= self.max_depth || idx.len() < 2 * self.min_leaf.max(1) {
            None
        } else {
            self.best_split(&idx, w)
        };
        match split {
            None => self.nodes.push(TreeNode::Leaf {
                verdict: if w[1] > w[0] { Verdict::Terminate } else { Verdict::Continue },
                continue_weight: w[0],
                terminate_weight: w[1],
                samples: idx.len(),
            }),
            Some(s) => {
                let at = self.nodes.len();
                self.nodes.push(TreeNode::Split {
                    feature: s.feature,
                    threshold: s.threshold,
                    right: 0,
                    gain: s.gain,
                });
                let (l, r): (Vec<usize>, Vec<usize>) =
                    idx.into_iter().partition(|&i| self.x[i][s.feature] <= s.threshold);
                self.grow(l, depth + 1);
                let right_at = self.nodes.len();
                if let TreeNode::Split { right, .. } = &mut self.nodes[at] {
                    *right = right_at;
                }
                self.grow(r, depth + 1);
            }
        }
    }
}

/// Greedy CART growth on weighted Gini impurity.
///
/// Classes are weighted by inverse frequency. A node becomes a leaf at
/// `max_depth`, when pure, or when no split leaves `min_leaf` samples on
/// both sides. Among equal-gain splits the lowest feature index, then the
/// lowest threshold, wins; `seed` is recorded but does not affect the result.
pub fn train_tree(
    samples: &[LabeledSample],
    max_depth: usize,
    min_leaf: usize,
    seed: u64,
) -> Result<DecisionTree> {
    ensure!(!samples.is_empty(), "no training samples");
    ensure!(min_leaf >= 1, "min_leaf must be positive");
    let x: Vec<[f64; FEATURE_COUNT]> = samples.iter().map(|s| s.features.to_array()).collect();
    ensure!(
        x.iter().flatten().all(|v| v.is_finite()),
        "training features must be finite"
    );
    let y: Vec<Verdict> = samples.iter().map(|s| s.label).collect();
    let mut counts = [0usize; 2];
    y.iter().for_each(|&v| counts[class(v)] += 1);
    let n = samples.len() as f64;
    let weight = counts.map(|c| if c == 0 { 0.0 } else { n / (2.0 * c as f64) });
    let mut t = Trainer {
        x,
        y,
        weight,
        max_depth,
        min_leaf,
        nodes: Vec::new(),
    };
    t.grow((0..samples.len()).collect(), 0);
    Ok(DecisionTree { nodes: t.nodes, max_depth, min_leaf, seed })
}
