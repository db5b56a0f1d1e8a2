//! The harness steps behind each CLI verb.

use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufWriter};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use hotgraph_core::persist::{self, write_index, DatasetDigest};
use hotgraph_core::tree::FEATURE_COUNT;
use hotgraph_core::vectors::{load_fvecs, save_fvecs, write_ivecs};
use hotgraph_core::workload::{complexity, grid_argmin, log_grid, optimal_index_ratio, p_miss};
use hotgraph_core::{
    build_full_index, build_hot_index, build_workload, dynamic_search, generate_training_data,
    recall_at_k, select_hot_nodes, synth, train_tree, two_phase_search, AccessCounter,
    DecisionTree, DualIndex, HotGraph, HotIndexConfig, IndexLayout, SearchParams, SearchTrace,
    TrainingSet, VectorDataset, Verdict, Workload, FEATURE_NAMES,
};
use hotgraph_core::Always;

use crate::config::{RunConfig, SweepAxis};

/// Artifact locations inside the output directory.
#[derive(Debug, Clone)]
pub struct Paths {
    pub out: PathBuf,
}

impl Paths {
    pub fn new(cfg: &RunConfig) -> Self {
        Self { out: cfg.out_dir.clone() }
    }

    pub fn index(&self) -> PathBuf {
        self.out.join("index.dqf")
    }
    pub fn tree(&self) -> PathBuf {
        self.out.join("tree.json")
    }
    pub fn training_csv(&self) -> PathBuf {
        self.out.join("training.csv")
    }
    pub fn bench_csv(&self) -> PathBuf {
        self.out.join("bench.csv")
    }
    pub fn timing_csv(&self) -> PathBuf {
        self.out.join("timing.csv")
    }
    pub fn results_csv(&self) -> PathBuf {
        self.out.join("results.csv")
    }
    pub fn ground_truth(&self) -> PathBuf {
        self.out.join("ground_truth.ivecs")
    }
    pub fn manifest(&self) -> PathBuf {
        self.out.join("workload.json")
    }
    pub fn build_report(&self) -> PathBuf {
        self.out.join("build.json")
    }
    pub fn config_echo(&self) -> PathBuf {
        self.out.join("run.conf")
    }
}

/// Writes the synthetic corpus described by `cfg.synth` to `cfg.dataset`.
pub fn gen_data(cfg: &RunConfig) -> Result<VectorDataset> {
    cfg.validate()?;
    let s = &cfg.synth;
    let ds = if s.clusters == 1 && s.spread == 1.0 {
        synth::gaussian(s.n, s.dim, cfg.data_seed())
    } else {
        synth::gaussian_mixture(s.n, s.dim, s.clusters, s.spread, cfg.data_seed())?
    };
    if let Some(dir) = cfg.dataset.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    save_fvecs(&cfg.dataset, &ds).with_context(|| format!("writing {}", cfg.dataset.display()))?;
    Ok(ds)
}

/// Replayable description of the query streams.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadManifest {
    pub dataset: String,
    pub dataset_sha256: String,
    pub count: usize,
    pub dim: usize,
    pub base_count: usize,
    pub test_count: usize,
    pub beta: f64,
    pub zipf_seed: u64,
    /// Streams derived from `zipf_seed`: split, rank permutation, history, eval.
    pub streams: [u64; 4],
    pub split: f64,
    pub history_count: usize,
    pub eval_count: usize,
    pub truth_k: usize,
    pub uniform_eval: bool,
}

/// Loads the corpus and regenerates the deterministic workload.
pub fn load_workload(cfg: &RunConfig) -> Result<(Workload, WorkloadManifest)> {
    cfg.validate()?;
    let ds = load_fvecs(&cfg.dataset).with_context(|| format!("reading {}", cfg.dataset.display()))?;
    let zipf = cfg.zipf();
    let w = build_workload(&ds, &cfg.workload, &zipf)?;
    let digest = DatasetDigest::of(&ds);
    let manifest = WorkloadManifest {
        dataset: cfg.dataset.display().to_string(),
        dataset_sha256: digest.sha256.iter().map(|b| format!("{b:02x}")).collect(),
        count: ds.len(),
        dim: ds.dim(),
        base_count: w.base.len(),
        test_count: w.test.len(),
        beta: zipf.beta,
        zipf_seed: zipf.seed,
        streams: [1, 2, 3, 4],
        split: cfg.workload.split,
        history_count: cfg.workload.history_count,
        eval_count: cfg.workload.eval_count,
        truth_k: cfg.workload.truth_k,
        uniform_eval: cfg.workload.uniform_eval,
    };
    Ok((w, manifest))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub full_build_secs: f64,
    /// Wall time of every hot build from counts, in order.
    pub hot_build_secs: Vec<f64>,
    pub hot_size: usize,
    pub layout: IndexLayout,
}

impl BuildReport {
    pub fn last_hot_build_secs(&self) -> f64 {
        self.hot_build_secs.last().copied().unwrap_or(0.0)
    }
}

impl fmt::Display for BuildReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "build time   full {:.3}s + hot {:.3}s", self.full_build_secs, self.last_hot_build_secs())?;
        writeln!(f, "index size   full {} B + hot {} B", self.layout.full, self.layout.hot)?;
        write!(f, "hot rebuilds {} ({} nodes)", self.hot_build_secs.len(), self.hot_size)
    }
}

fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let t = Instant::now();
    let v = f()?;
    Ok((v, t.elapsed().as_secs_f64()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

/// Builds the full graph, replays the history through two-phase search to
/// heat the access counters (rebuilding the hot graph whenever the trigger
/// trips), closes the last epoch with a final hot rebuild, and persists the
/// combined index.
pub fn build(cfg: &RunConfig) -> Result<BuildReport> {
    let (w, manifest) = load_workload(cfg)?;
    let paths = Paths::new(cfg);
    fs::create_dir_all(&paths.out)?;
    let base = &w.base;
    let hot_cfg = cfg.hot_config();
    hot_cfg.validate(base.len())?;

    let (full, full_build_secs) = timed(|| Ok(build_full_index(base, &hot_cfg.build)?))?;
    let n_idx = hot_cfg.hot_size(base.len());
    let counter = AccessCounter::new(base.len());
    let initial = select_hot_nodes(&counter.snapshot(), n_idx)?;
    let hot = build_hot_index(base, &initial, &hot_cfg.hot_build_params(n_idx))?;
    let index = DualIndex::new(base, full, hot, counter, hot_cfg)?;

    let params = cfg.search_params();
    let heat = Always(Verdict::Continue);
    let mut hot_build_secs = Vec::new();
    let rebuild = |index: &DualIndex, log: &mut Vec<f64>| -> Result<()> {
        let (hot, secs) = timed(|| Ok(index.build_hot_from_counts(base)?))?;
        index.publish_hot(hot)?;
        log.push(secs);
        Ok(())
    };
    for batch in w.history_queries().chunks(cfg.heat_batch) {
        for q in batch {
            dynamic_search(&index, base, q, &params, &heat)?;
        }
        if index.counter.should_rebuild(&index.config) {
            rebuild(&index, &mut hot_build_secs)?;
        }
    }
    if index.counter.total_since_rebuild() > 0 || hot_build_secs.is_empty() {
        rebuild(&index, &mut hot_build_secs)?;
    }

    let layout = persist::save_index(paths.index(), &index, base)?;
    let truth: Vec<Vec<i32>> = w
        .ground_truth
        .iter()
        .map(|t| t.iter().map(|n| n.id as i32).collect())
        .collect();
    write_ivecs(BufWriter::new(File::create(paths.ground_truth())?), &truth)?;
    write_json(&paths.manifest(), &manifest)?;
    let report = BuildReport { full_build_secs, hot_build_secs, hot_size: n_idx, layout };
    write_json(&paths.build_report(), &report)?;
    Ok(report)
}

fn load_built(cfg: &RunConfig) -> Result<(Workload, DualIndex)> {
    let (w, _) = load_workload(cfg)?;
    let path = Paths::new(cfg).index();
    if !path.exists() {
        bail!("index {} not found; run build first", path.display());
    }
    let index = persist::load_index(&path, &w.base)
        .with_context(|| format!("loading {}", path.display()))?;
    Ok((w, index))
}

/// Labels checkpoints of the distinct history queries and trains a tree.
pub fn train_on_history(
    index: &DualIndex,
    w: &Workload,
    params: &SearchParams,
    max_depth: usize,
    min_leaf: usize,
    seed: u64,
) -> Result<(DecisionTree, TrainingSet)> {
    let set = generate_training_data(index, &w.base, &w.history_queries(), params)?;
    let tree = train_tree(&set.samples, max_depth, min_leaf, seed)?;
    Ok((tree, set))
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub tree: DecisionTree,
    pub importance: [f64; FEATURE_COUNT],
    pub queries: usize,
    pub samples: usize,
    pub terminate_share: f64,
}

impl fmt::Display for TrainReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} checkpoints from {} distinct queries, {:.1}% terminal; depth {}, {} nodes",
            self.samples,
            self.queries,
            100.0 * self.terminate_share,
            self.tree.depth(),
            self.tree.nodes.len()
        )?;
        writeln!(f, "{:<22} {:>10}", "feature", "importance")?;
        for (name, v) in FEATURE_NAMES.iter().zip(self.importance) {
            writeln!(f, "{name:<22} {:>9.2}%", 100.0 * v)?;
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct TrainingRow<'a> {
    query_id: usize,
    #[serde(rename = "hotIdx_1st")]
    hot_first: f64,
    #[serde(rename = "hotIdx_1st_div_kth")]
    hot_first_div_kth: f64,
    #[serde(rename = "fullIdx_1st")]
    full_first: f64,
    #[serde(rename = "fullIdx_1st_div_kth")]
    full_first_div_kth: f64,
    dist_count: f64,
    update_count: f64,
    label: &'a str,
    dist_count_total: u64,
    recall: f64,
}

pub fn write_training_csv(path: &Path, set: &TrainingSet) -> Result<()> {
    let mut out = csv::Writer::from_path(path)?;
    for t in &set.traces {
        for (i, (c, label)) in t.checkpoints.iter().zip(&t.labels).enumerate() {
            let f = c.features;
            out.serialize(TrainingRow {
                query_id: t.query,
                hot_first: f.hot_first,
                hot_first_div_kth: f.hot_first_div_kth,
                full_first: f.full_first,
                full_first_div_kth: f.full_first_div_kth,
                dist_count: f.dist_count,
                update_count: f.update_count,
                label: match label {
                    Verdict::Continue => "continue",
                    Verdict::Terminate => "terminate",
                },
                dist_count_total: t.dist_count_total,
                recall: t.checkpoint_recall(i),
            })?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Generates labeled checkpoints from the history, trains and persists the tree.
pub fn train(cfg: &RunConfig) -> Result<TrainReport> {
    let (w, index) = load_built(cfg)?;
    let paths = Paths::new(cfg);
    let (tree, set) = train_on_history(
        &index,
        &w,
        &cfg.search_params(),
        cfg.max_depth,
        cfg.min_leaf,
        cfg.tree_seed(),
    )?;
    persist::save_tree(paths.tree(), &tree)?;
    write_training_csv(&paths.training_csv(), &set)?;
    let terminal = set.samples.iter().filter(|s| s.label == Verdict::Terminate).count();
    Ok(TrainReport {
        importance: tree.feature_importance(),
        queries: set.traces.len(),
        samples: set.samples.len(),
        terminate_share: terminal as f64 / set.samples.len().max(1) as f64,
        tree,
    })
}

/// Search strategy of one bench row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Plain beam search over the full graph.
    Baseline,
    /// Hot then full phase with no checkpoints.
    TwoPhase,
    /// Checkpointed search whose rule always continues.
    Continue,
    /// Checkpointed search under the trained tree.
    Dynamic,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Baseline, Mode::TwoPhase, Mode::Continue, Mode::Dynamic];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::TwoPhase => "two_phase",
            Mode::Continue => "continue",
            Mode::Dynamic => "dynamic",
        }
    }
}

/// Deterministic metrics of one (setting, mode) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub row: usize,
    pub mode: Mode,
    pub axis: String,
    pub value: f64,
    pub k: usize,
    pub l: usize,
    pub s_l: usize,
    pub eval_gap: usize,
    pub add_step: usize,
    pub index_ratio: f64,
    pub max_depth: usize,
    pub beta: f64,
    pub seed: u64,
    pub queries: usize,
    pub recall: f64,
    /// Full-graph distance computations per query.
    pub mean_dist_count: f64,
    /// Hot plus full distance computations per query.
    pub mean_total_dist_count: f64,
    pub mean_update_count: f64,
    pub early_termination_rate: f64,
    pub hot_size: usize,
    pub full_index_bytes: u64,
    pub hot_index_bytes: u64,
}

/// Wall-clock measurements, kept apart so the metric CSV is reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub row: usize,
    pub mode: Mode,
    pub seconds: f64,
    pub qps: f64,
    pub full_build_secs: f64,
    pub hot_build_secs: f64,
}

#[derive(Serialize)]
struct ResultRow {
    row: usize,
    mode: Mode,
    query: usize,
    ids: String,
}

#[derive(Debug, Clone)]
struct RowSetting {
    value: f64,
    params: SearchParams,
    index_ratio: f64,
    max_depth: usize,
}

fn row_settings(cfg: &RunConfig) -> Vec<RowSetting> {
    let base = RowSetting {
        value: f64::NAN,
        params: cfg.search_params(),
        index_ratio: cfg.index_ratio,
        max_depth: cfg.max_depth,
    };
    if cfg.sweep_axis == SweepAxis::None {
        return vec![RowSetting { value: 0.0, ..base }];
    }
    cfg.sweep_values
        .iter()
        .map(|&v| {
            let mut r = RowSetting { value: v, ..base.clone() };
            let u = v as usize;
            match cfg.sweep_axis {
                SweepAxis::None => {}
                SweepAxis::L => {
                    r.params.l = u;
                    r.params.s_l = cfg.fixed_s_l().unwrap_or(u);
                }
                SweepAxis::K => r.params.k = u,
                SweepAxis::IndexRatio => r.index_ratio = v,
                SweepAxis::Depth => r.max_depth = u,
                SweepAxis::EvalGap => r.params.eval_gap = u,
                SweepAxis::AddStep => r.params.add_step = u,
            }
            r
        })
        .collect()
}

fn hot_for_ratio(
    base: &VectorDataset,
    counts: &[u64],
    config: &HotIndexConfig,
) -> Result<(HotGraph, f64)> {
    let n_idx = config.hot_size(base.len());
    config.validate(base.len())?;
    timed(|| {
        let ids = select_hot_nodes(counts, n_idx)?;
        Ok(build_hot_index(base, &ids, &config.hot_build_params(n_idx))?)
    })
}

#[derive(Debug, Clone)]
pub struct BenchOutput {
    pub records: Vec<BenchRecord>,
    pub timings: Vec<TimingRecord>,
}

/// Runs the evaluation queries single-threaded in every mode for every sweep
/// setting. Each setting starts from the persisted index state. Unless
/// `freeze_tree` is set, a setting that differs from the persisted one gets
/// its own tree trained on the history against that setting's index.
pub fn bench(cfg: &RunConfig) -> Result<BenchOutput> {
    let (w, persisted) = load_built(cfg)?;
    let paths = Paths::new(cfg);
    let tree_path = paths.tree();
    if !tree_path.exists() {
        bail!("tree {} not found; run train-tree first", tree_path.display());
    }
    let stored_tree = persist::load_tree(&tree_path)?;
    let report: BuildReport = serde_json::from_slice(&fs::read(paths.build_report())?)
        .context("reading build report")?;
    let base = &w.base;
    let counts = persisted.counter.snapshot();
    let since = persisted.counter.total_since_rebuild();
    let queries = w.eval_queries();
    let default_params = cfg.search_params();

    let mut out = BenchOutput { records: Vec::new(), timings: Vec::new() };
    let mut results = csv::Writer::from_path(paths.results_csv())?;
    for (row, setting) in row_settings(cfg).into_iter().enumerate() {
        let params = &setting.params;
        let mut config = persisted.config.clone();
        let (hot, hot_build_secs) = if setting.index_ratio == persisted.config.index_ratio {
            ((*persisted.hot()).clone(), report.last_hot_build_secs())
        } else {
            config.index_ratio = setting.index_ratio;
            hot_for_ratio(base, &counts, &config)?
        };
        let index = DualIndex::new(
            base,
            persisted.full.clone(),
            hot,
            AccessCounter::from_snapshot(&counts, since),
            config,
        )?;
        let layout = write_index(io::sink(), &index, base)?;

        let same_setup = *params == default_params
            && setting.index_ratio == cfg.index_ratio
            && setting.max_depth == cfg.max_depth;
        let tree = if cfg.freeze_tree || same_setup {
            stored_tree.clone()
        } else {
            train_on_history(&index, &w, params, setting.max_depth, cfg.min_leaf, cfg.tree_seed())?.0
        };

        for mode in Mode::ALL {
            let started = Instant::now();
            let mut runs: Vec<(Vec<u32>, SearchTrace)> = Vec::with_capacity(queries.len());
            for q in &queries {
                let (res, trace) = match mode {
                    Mode::Baseline => index.search_full(base, q, params.k, params.l)?,
                    Mode::TwoPhase => two_phase_search(&index, base, q, params)?,
                    Mode::Continue => dynamic_search(&index, base, q, params, &Always(Verdict::Continue))?,
                    Mode::Dynamic => dynamic_search(&index, base, q, params, &tree)?,
                };
                runs.push((res.iter().map(|n| n.id).collect(), trace));
            }
            let seconds = started.elapsed().as_secs_f64();

            let mut recall = 0.0;
            for (qi, ((ids, _), truth)) in runs.iter().zip(&w.ground_truth).enumerate() {
                recall += recall_of(ids, truth, params.k)?;
                results.serialize(ResultRow {
                    row,
                    mode,
                    query: qi,
                    ids: ids.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" "),
                })?;
            }
            let n = runs.len().max(1) as f64;
            let mean = |f: &dyn Fn(&SearchTrace) -> f64| runs.iter().map(|(_, t)| f(t)).sum::<f64>() / n;
            out.records.push(BenchRecord {
                row,
                mode,
                axis: cfg.sweep_axis.name().to_string(),
                value: setting.value,
                k: params.k,
                l: params.l,
                s_l: params.s_l,
                eval_gap: params.eval_gap,
                add_step: params.add_step,
                index_ratio: setting.index_ratio,
                max_depth: setting.max_depth,
                beta: cfg.beta,
                seed: cfg.seed,
                queries: runs.len(),
                recall: recall / n,
                mean_dist_count: mean(&|t| t.dist_count as f64),
                mean_total_dist_count: mean(&|t| t.total_dist_count() as f64),
                mean_update_count: mean(&|t| t.update_count as f64),
                early_termination_rate: mean(&|t| t.terminated_early as u8 as f64),
                hot_size: index.hot().len(),
                full_index_bytes: layout.full,
                hot_index_bytes: layout.hot,
            });
            out.timings.push(TimingRecord {
                row,
                mode,
                seconds,
                qps: if seconds > 0.0 { runs.len() as f64 / seconds } else { 0.0 },
                full_build_secs: report.full_build_secs,
                hot_build_secs,
            });
        }
    }
    results.flush()?;
    write_csv(&paths.bench_csv(), &out.records)?;
    write_csv(&paths.timing_csv(), &out.timings)?;
    fs::write(paths.config_echo(), cfg.echo())?;
    Ok(out)
}

/// Recall of `ids` against the first `k` ground-truth entries.
pub fn recall_of(ids: &[u32], truth: &[hotgraph_core::Neighbor], k: usize) -> Result<f64> {
    let approx: Vec<hotgraph_core::Neighbor> =
        ids.iter().map(|&id| hotgraph_core::Neighbor::new(id, 0.0)).collect();
    Ok(recall_at_k(&approx, &truth[..k.min(truth.len())], k)?)
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Cost-model evaluation for a corpus of `n` points.
#[derive(Debug, Clone)]
pub struct AnalyzeReport {
    pub n: u64,
    pub beta: f64,
    /// (index ratio, miss probability, cost).
    pub rows: Vec<(f64, f64, f64)>,
    pub optimal: f64,
    pub optimal_cost: f64,
    pub derivative_at_optimal: f64,
    pub grid_argmin: f64,
    pub grid_points: usize,
    /// Log-spacing of the search grid.
    pub grid_step: f64,
}

pub fn analyze(n: u64, beta: f64, grid_points: usize) -> Result<AnalyzeReport> {
    if !(beta > 1.0) {
        bail!("analyze needs beta > 1, got {beta}");
    }
    let optimal = optimal_index_ratio(n, beta)?;
    let mut irs: Vec<f64> = [1e-4, 2e-4, 5e-4, 1e-3, 2e-3, 5e-3, 1e-2, 2e-2, 5e-2, 0.1, 0.2, 0.5, 1.0]
        .into_iter()
        .filter(|&ir| ir * n as f64 >= 1.0)
        .collect();
    irs.push(optimal);
    irs.sort_by(f64::total_cmp);
    let rows = irs
        .into_iter()
        .map(|ir| Ok((ir, p_miss(ir, n, beta)?, complexity(ir, n, beta)?)))
        .collect::<Result<Vec<_>>>()?;
    let grid = log_grid(n, grid_points);
    Ok(AnalyzeReport {
        n,
        beta,
        rows,
        optimal,
        optimal_cost: complexity(optimal, n, beta)?,
        derivative_at_optimal: hotgraph_core::workload::complexity_derivative(optimal, n, beta)?,
        grid_argmin: grid_argmin(n, beta, grid_points)?,
        grid_points,
        grid_step: (grid[1] / grid[0]).ln(),
    })
}

impl fmt::Display for AnalyzeReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "n = {}, beta = {}", self.n, self.beta)?;
        writeln!(f, "{:>12} {:>12} {:>12}", "IR", "p_miss", "C(IR)")?;
        for &(ir, p, c) in &self.rows {
            writeln!(f, "{ir:>12.6e} {p:>12.6} {c:>12.6}")?;
        }
        writeln!(
            f,
            "optimal IR (closed form) = {:.6e}  C = {:.6}  dC/dIR = {:.3e}",
            self.optimal, self.optimal_cost, self.derivative_at_optimal
        )?;
        write!(
            f,
            "grid argmin ({} points)  = {:.6e}  |ln ratio| = {:.3e} (step {:.3e})",
            self.grid_points,
            self.grid_argmin,
            (self.grid_argmin / self.optimal).ln().abs(),
            self.grid_step
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analyze_rejects_small_beta() {
        assert!(analyze(1_000_000, 1.0, 100).is_err());
        assert!(analyze(1_000_000, 0.5, 100).is_err());
    }

    #[test]
    fn analyze_boundary_row() {
        let r = analyze(1_000_000, 1.2, 10_000).unwrap();
        let last = r.rows.last().unwrap();
        assert_eq!(last.0, 1.0);
        assert!((last.2 - (1e6f64).ln()).abs() < 1e-9);
        assert!((r.grid_argmin.ln() - r.optimal.ln()).abs() <= r.grid_step + 1e-12);
    }

    #[test]
    fn sweep_rows_follow_axis() {
        let mut cfg = RunConfig::default();
        cfg.set("sweep_axis", "ir").unwrap();
        cfg.set("sweep_values", "0.001,0.005,0.01,0.05,0.1").unwrap();
        let rows = row_settings(&cfg);
        assert_eq!(rows.len(), 5);
        assert_eq!(rows[3].index_ratio, 0.05);
        cfg.set("sweep_axis", "l").unwrap();
        cfg.set("sweep_values", "20,40").unwrap();
        let rows = row_settings(&cfg);
        assert_eq!((rows[1].params.l, rows[1].params.s_l), (40, 40));
    }
}
