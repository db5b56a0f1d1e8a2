//! Graph-based approximate nearest neighbor search over a dual-layer index.
//!
//! A full proximity graph covers the whole corpus. A small hot graph covers
//! the most frequently returned points and is rebuilt as query interest
//! shifts. Searches walk the hot graph first, then continue in the full graph
//! until a decision tree, consulted at fixed distance-computation intervals,
//! predicts that the top-k will not improve any further.

pub mod error;
pub mod graph;
pub mod hot;
pub mod persist;
pub mod search;
pub mod synth;
pub mod tree;
pub mod vectors;
pub mod workload;

pub use error::{Error, Result};
pub use graph::{build_full_index, build_knng, BuildParams, GraphIndex, NeighborGraph};
pub use hot::{build_hot_index, select_hot_nodes, AccessCounter, HotGraph, HotIndexConfig};
pub use persist::{load_index, load_tree, save_index, save_tree, IndexLayout};
pub use search::{
    beam_search, dynamic_search, extract_features, two_phase_search, Always, DualIndex,
    SearchParams, SearchTrace, StopRule,
};
pub use tree::{
    generate_training_data, train_tree, DecisionTree, FeatureVector, LabeledSample, TrainingSet,
    Verdict, FEATURE_NAMES,
};
pub use vectors::{brute_force_knn, distance, recall_at_k, Neighbor, ResultList, VectorDataset};
pub use workload::{build_workload, Workload, WorkloadSpec, ZipfParams, ZipfSampler};

