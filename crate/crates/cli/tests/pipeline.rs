use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;

use hotgraph_cli::pipeline::{self, recall_of, BenchOutput};
use hotgraph_cli::{Mode, Paths, RunConfig};
use hotgraph_core::persist::{load_index, load_tree};
use hotgraph_core::vectors::load_ivecs;
use hotgraph_core::{dynamic_search, FEATURE_NAMES};

struct Fixture {
    _dir: tempfile::TempDir,
    cfg: RunConfig,
    bench: BenchOutput,
}

/// One small seeded corpus built, trained and benched over a five-point IR sweep.
fn fixture() -> &'static Fixture {
    static FX: OnceLock<Fixture> = OnceLock::new();
    FX.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = RunConfig::default();
        cfg.apply_text(&format!(
            "dataset = {}\nout_dir = {}\nsynth_n = 4400\nsynth_dim = 12\nseed = 5\n\
             history_count = 5000\neval_count = 500\nn_query = 5000\n\
             sweep_axis = ir\nsweep_values = 0.005, 0.01, 0.02, 0.05, 0.1\n",
            dir.path().join("base.fvecs").display(),
            dir.path().join("out").display()
        ))
        .unwrap();
        pipeline::gen_data(&cfg).unwrap();
        pipeline::build(&cfg).unwrap();
        pipeline::train(&cfg).unwrap();
        let bench = pipeline::bench(&cfg).unwrap();
        Fixture { _dir: dir, cfg, bench }
    })
}

#[derive(serde::Deserialize)]
struct ResultLine {
    row: usize,
    mode: Mode,
    query: usize,
    ids: String,
}

fn read_results(path: &Path) -> Vec<ResultLine> {
    csv::Reader::from_path(path).unwrap().deserialize().map(|r| r.unwrap()).collect()
}

#[test]
fn ir_sweep_has_one_row_per_value_and_mode() {
    let fx = fixture();
    assert_eq!(fx.bench.records.len(), 5 * 4);
    for (row, ir) in [0.005, 0.01, 0.02, 0.05, 0.1].into_iter().enumerate() {
        let rows: Vec<_> = fx.bench.records.iter().filter(|r| r.row == row).collect();
        assert_eq!(rows.len(), 4);
        for r in rows {
            assert_eq!(r.index_ratio, ir);
            assert_eq!(r.hot_size, (ir * 3960.0f64).ceil() as usize);
        }
    }
}

#[test]
fn reported_recall_matches_results_and_ground_truth() {
    let fx = fixture();
    let paths = Paths::new(&fx.cfg);
    let truth = load_ivecs(paths.ground_truth()).unwrap();
    let (w, _) = pipeline::load_workload(&fx.cfg).unwrap();
    let k = fx.cfg.search_params().k;
    let mut sums: HashMap<(usize, Mode), (f64, usize)> = HashMap::new();
    for line in read_results(&paths.results_csv()) {
        let ids: Vec<u32> = line.ids.split_whitespace().map(|s| s.parse().unwrap()).collect();
        let exact: Vec<u32> = truth[line.query][..k].iter().map(|&v| v as u32).collect();
        assert_eq!(exact, w.ground_truth[line.query][..k].iter().map(|n| n.id).collect::<Vec<_>>());
        let hits = ids.iter().filter(|id| exact.contains(id)).count();
        let e = sums.entry((line.row, line.mode)).or_default();
        e.0 += hits as f64 / k as f64;
        e.1 += 1;
    }
    for r in &fx.bench.records {
        let (sum, n) = sums[&(r.row, r.mode)];
        assert_eq!(n, r.queries);
        assert!((sum / n as f64 - r.recall).abs() < 1e-9, "{:?} row {}", r.mode, r.row);
    }
}

#[test]
fn continue_rows_match_two_phase_rows() {
    let fx = fixture();
    for row in 0..5 {
        let get = |m: Mode| fx.bench.records.iter().find(|r| r.row == row && r.mode == m).unwrap();
        let (c, t) = (get(Mode::Continue), get(Mode::TwoPhase));
        assert!((c.recall - t.recall).abs() <= 1e-9);
        assert_eq!(c.mean_dist_count, t.mean_dist_count);
        assert_eq!(c.early_termination_rate, 0.0);
    }
}

#[test]
fn popular_queries_cost_less_than_rare_ones() {
    let fx = fixture();
    let paths = Paths::new(&fx.cfg);
    let (w, _) = pipeline::load_workload(&fx.cfg).unwrap();
    let index = load_index(paths.index(), &w.base).unwrap();
    let tree = load_tree(paths.tree()).unwrap();
    let params = fx.cfg.search_params();
    let mut rank = vec![0usize; w.test.len()];
    for (r, &t) in w.rank_to_test.iter().enumerate() {
        rank[t as usize] = r + 1;
    }
    let mut costs: Vec<(usize, u64)> = w
        .eval
        .iter()
        .map(|&t| {
            let (_, trace) = dynamic_search(&index, &w.base, w.test.row(t as usize), &params, &tree).unwrap();
            (rank[t as usize], trace.dist_count)
        })
        .collect();
    costs.sort_by_key(|c| c.0);
    let decile = costs.len() / 10;
    let mean = |s: &[(usize, u64)]| s.iter().map(|c| c.1 as f64).sum::<f64>() / s.len() as f64;
    let (head, tail) = (mean(&costs[..decile]), mean(&costs[costs.len() - decile..]));
    assert!(head < tail, "popular {head} vs rare {tail}");
}

#[test]
fn retraining_reproduces_tree_bytes() {
    let fx = fixture();
    let paths = Paths::new(&fx.cfg);
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = fx.cfg.clone();
    cfg.set("out_dir", dir.path().to_str().unwrap()).unwrap();
    for f in ["index.dqf", "workload.json", "ground_truth.ivecs", "build.json"] {
        std::fs::copy(paths.out.join(f), dir.path().join(f)).unwrap();
    }
    let first = std::fs::read(paths.tree()).unwrap();
    let report = pipeline::train(&cfg).unwrap();
    assert_eq!(std::fs::read(dir.path().join("tree.json")).unwrap(), first);
    assert_eq!(report.importance.len(), FEATURE_NAMES.len());
    assert!((report.importance.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    let printed = report.to_string();
    for name in FEATURE_NAMES {
        assert_eq!(printed.lines().filter(|l| l.split_whitespace().next() == Some(name)).count(), 1, "{name}");
    }
}

#[test]
fn bench_recall_helper_agrees_with_manual_count() {
    let truth: Vec<_> = (0..5).map(|i| hotgraph_core::Neighbor::new(i, i as f32)).collect();
    assert_eq!(recall_of(&[0, 1, 9, 3, 8], &truth, 5).unwrap(), 0.6);
}

fn hotgraph(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_hotgraph")).args(args).output().unwrap()
}

#[test]
fn analyze_prints_optimum_and_rejects_flat_skew() {
    let out = hotgraph(&["analyze", "--n", "1000000", "--beta", "1.2"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("2.231"), "{text}");
    let bad = hotgraph(&["analyze", "--beta", "1.0"]);
    assert!(!bad.status.success());
}

#[test]
fn cli_runs_every_stage_and_honours_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let out: PathBuf = dir.path().join("out");
    let data = dir.path().join("base.fvecs");
    let common = [
        "--dataset",
        data.to_str().unwrap(),
        "--out-dir",
        out.to_str().unwrap(),
        "--synth-n",
        "1200",
        "--synth-dim",
        "8",
        "--set",
        "history_count=800",
        "--set",
        "eval_count=50",
    ];
    for verb in ["gen-data", "build", "train-tree", "bench"] {
        let mut args = vec![verb];
        args.extend_from_slice(&common);
        let o = hotgraph(&args);
        assert!(o.status.success(), "{verb}: {}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["index.dqf", "tree.json", "training.csv", "bench.csv", "timing.csv", "results.csv", "run.conf"] {
        assert!(out.join(f).metadata().unwrap().len() > 0, "{f}");
    }
    let echoed = std::fs::read_to_string(out.join("run.conf")).unwrap();
    assert!(echoed.contains("history_count = 800"));
    let o = hotgraph(&["build", "--set", "no_such_key=1"]);
    assert!(!o.status.success());
}
