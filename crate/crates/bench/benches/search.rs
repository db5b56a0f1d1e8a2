use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use hotgraph_core::{
    beam_search, build_workload, distance, dynamic_search, generate_training_data, synth, train_tree,
    two_phase_search, Always, BuildParams, DecisionTree, DualIndex, HotIndexConfig, SearchParams,
    Verdict, Workload, WorkloadSpec, ZipfParams,
};

struct Setup {
    w: Workload,
    index: DualIndex,
    tree: DecisionTree,
    params: SearchParams,
}

fn setup() -> Setup {
    let ds = synth::gaussian(5_500, 16, 7);
    let spec = WorkloadSpec { history_count: 5_000, eval_count: 200, truth_k: 10, ..WorkloadSpec::default() };
    let w = build_workload(&ds, &spec, &ZipfParams { beta: 1.2, universe: 1, seed: 8 }).unwrap();
    let config = HotIndexConfig { n_query: 5_000, index_ratio: 0.01, build: BuildParams::default() };
    let index = DualIndex::build(&w.base, config).unwrap();
    let params = SearchParams::default();
    for q in w.history_queries() {
        dynamic_search(&index, &w.base, q, &params, &Always(Verdict::Continue)).unwrap();
    }
    index.publish_hot(index.build_hot_from_counts(&w.base).unwrap()).unwrap();
    let set = generate_training_data(&index, &w.base, &w.history_queries(), &params).unwrap();
    let tree = train_tree(&set.samples, 10, 20, 9).unwrap();
    Setup { w, index, tree, params }
}

fn benches(c: &mut Criterion) {
    let s = setup();
    let eval = s.w.eval_queries();
    let (a, b) = (s.w.base.row(0), s.w.base.row(1));
    c.bench_function("distance_d16", |bn| bn.iter(|| distance(black_box(a), black_box(b)).unwrap()));

    let mut i = 0;
    let mut next = || {
        i = (i + 1) % eval.len();
        eval[i]
    };
    c.bench_function("beam_search_l100", |bn| {
        bn.iter(|| beam_search(&s.index.full.graph, &s.index.full.entry_points, &s.w.base, next(), 10, 100).unwrap())
    });
    c.bench_function("two_phase_search_l100", |bn| {
        bn.iter(|| two_phase_search(&s.index, &s.w.base, next(), &s.params).unwrap())
    });
    c.bench_function("dynamic_search_l100", |bn| {
        bn.iter(|| dynamic_search(&s.index, &s.w.base, next(), &s.params, &s.tree).unwrap())
    });

    let set = generate_training_data(&s.index, &s.w.base, &eval[..20], &s.params).unwrap();
    let features: Vec<_> = set.samples.iter().map(|x| x.features).collect();
    let mut j = 0;
    c.bench_function("tree_predict", |bn| {
        bn.iter(|| {
            j = (j + 1) % features.len();
            s.tree.predict(black_box(&features[j]))
        })
    });
    c.bench_function("hot_rebuild_1pct", |bn| bn.iter(|| s.index.build_hot_from_counts(&s.w.base).unwrap()));
}

criterion_group! {
    name = search;
    config = Criterion::default().sample_size(20);
    targets = benches
}
criterion_main!(search);
