//! Run configuration: a plain-text `key = value` file plus per-key overrides.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use hotgraph_core::{BuildParams, HotIndexConfig, SearchParams, WorkloadSpec, ZipfParams};

/// Parameter varied by `bench`, one CSV row group per value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    None,
    L,
    K,
    IndexRatio,
    Depth,
    EvalGap,
    AddStep,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::None => "none",
            SweepAxis::L => "l",
            SweepAxis::K => "k",
            SweepAxis::IndexRatio => "ir",
            SweepAxis::Depth => "depth",
            SweepAxis::EvalGap => "eval_gap",
            SweepAxis::AddStep => "add_step",
        }
    }
}

impl FromStr for SweepAxis {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "none" | "" => SweepAxis::None,
            "l" => SweepAxis::L,
            "k" => SweepAxis::K,
            "ir" | "index_ratio" => SweepAxis::IndexRatio,
            "depth" | "max_depth" => SweepAxis::Depth,
            "eval_gap" => SweepAxis::EvalGap,
            "add_step" => SweepAxis::AddStep,
            other => bail!("unknown sweep axis {other:?}"),
        })
    }
}

/// Shape of the corpus written by `gen-data`.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n: usize,
    pub dim: usize,
    /// 1 gives a single standard normal cloud.
    pub clusters: usize,
    pub spread: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub out_dir: PathBuf,
    pub seed: u64,
    build_seed: Option<u64>,
    zipf_seed: Option<u64>,
    data_seed: Option<u64>,
    pub build: BuildParams,
    pub n_query: u64,
    pub index_ratio: f64,
    pub search: SearchParams,
    /// Hot pool size; follows `l` unless set.
    s_l: Option<usize>,
    pub beta: f64,
    pub workload: WorkloadSpec,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Use the persisted tree for every bench row instead of retraining.
    pub freeze_tree: bool,
    /// History queries between two rebuild polls.
    pub heat_batch: usize,
    pub sweep_axis: SweepAxis,
    pub sweep_values: Vec<f64>,
    pub synth: SynthSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::from("run/base.fvecs"),
            out_dir: PathBuf::from("run"),
            seed: 42,
            build_seed: None,
            zipf_seed: None,
            data_seed: None,
            build: BuildParams::default(),
            n_query: 10_000,
            index_ratio: 0.01,
            search: SearchParams::default(),
            s_l: None,
            beta: 1.2,
            workload: WorkloadSpec::default(),
            max_depth: 10,
            min_leaf: 20,
            freeze_tree: false,
            heat_batch: 100,
            sweep_axis: SweepAxis::None,
            sweep_values: Vec::new(),
            synth: SynthSpec { n: 10_000, dim: 16, clusters: 1, spread: 1.0 },
        }
    }
}

/// Every accepted key, in echo order.
pub const KEYS: &[&str] = &[
    "dataset",
    "out_dir",
    "seed",
    "build_seed",
    "zipf_seed",
    "data_seed",
    "knng_k",
    "nn_descent_iters",
    "angle",
    "max_degree",
    "n_query",
    "index_ratio",
    "k",
    "l",
    "s_l",
    "eval_gap",
    "add_step",
    "beta",
    "history_count",
    "eval_count",
    "split",
    "truth_k",
    "uniform_eval",
    "max_depth",
    "min_leaf",
    "freeze_tree",
    "heat_batch",
    "sweep_axis",
    "sweep_values",
    "synth_n",
    "synth_dim",
    "synth_clusters",
    "synth_spread",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e| anyhow!("{key} = {value:?}: {e}"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => bail!("{key} = {value:?}: expected a boolean"),
    }
}

fn optional<T: FromStr>(key: &str, value: &str) -> Result<Option<T>>
where
    T::Err: fmt::Display,
{
    if value == "auto" || value.is_empty() {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "dataset" => self.dataset = PathBuf::from(v),
            "out_dir" => self.out_dir = PathBuf::from(v),
            "seed" => self.seed = parse(key, v)?,
            "build_seed" => self.build_seed = optional(key, v)?,
            "zipf_seed" => self.zipf_seed = optional(key, v)?,
            "data_seed" => self.data_seed = optional(key, v)?,
            "knng_k" => self.build.knng_k = parse(key, v)?,
            "nn_descent_iters" => self.build.nn_descent_iters = parse(key, v)?,
            "angle" => self.build.angle_threshold_degrees = parse(key, v)?,
            "max_degree" => self.build.max_degree = parse(key, v)?,
            "n_query" => self.n_query = parse(key, v)?,
            "index_ratio" => self.index_ratio = parse(key, v)?,
            "k" => self.search.k = parse(key, v)?,
            "l" => self.search.l = parse(key, v)?,
            "s_l" => self.s_l = optional(key, v)?,
            "eval_gap" => self.search.eval_gap = parse(key, v)?,
            "add_step" => self.search.add_step = parse(key, v)?,
            "beta" => self.beta = parse(key, v)?,
            "history_count" => self.workload.history_count = parse(key, v)?,
            "eval_count" => self.workload.eval_count = parse(key, v)?,
            "split" => self.workload.split = parse(key, v)?,
            "truth_k" => self.workload.truth_k = parse(key, v)?,
            "uniform_eval" => self.workload.uniform_eval = parse_bool(key, v)?,
            "max_depth" => self.max_depth = parse(key, v)?,
            "min_leaf" => self.min_leaf = parse(key, v)?,
            "freeze_tree" => self.freeze_tree = parse_bool(key, v)?,
            "heat_batch" => self.heat_batch = parse(key, v)?,
            "sweep_axis" => self.sweep_axis = v.parse()?,
            "sweep_values" => {
                self.sweep_values = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| parse(key, s))
                    .collect::<Result<_>>()?
            }
            "synth_n" => self.synth.n = parse(key, v)?,
            "synth_dim" => self.synth.dim = parse(key, v)?,
            "synth_clusters" => self.synth.clusters = parse(key, v)?,
            "synth_spread" => self.synth.spread = parse(key, v)?,
            _ => bail!("unknown configuration key {key:?}"),
        }
        Ok(())
    }

    /// Applies a `key = value` document. Blank lines and `#` comments are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected key = value", no + 1))?;
            self.set(k.trim(), v).with_context(|| format!("line {}", no + 1))?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn get(&self, key: &str) -> String {
        let opt = |o: Option<u64>| o.map_or("auto".to_string(), |v| v.to_string());
        match key {
            "dataset" => self.dataset.display().to_string(),
            "out_dir" => self.out_dir.display().to_string(),
            "seed" => self.seed.to_string(),
            "build_seed" => opt(self.build_seed),
            "zipf_seed" => opt(self.zipf_seed),
            "data_seed" => opt(self.data_seed),
            "knng_k" => self.build.knng_k.to_string(),
            "nn_descent_iters" => self.build.nn_descent_iters.to_string(),
            "angle" => self.build.angle_threshold_degrees.to_string(),
            "max_degree" => self.build.max_degree.to_string(),
            "n_query" => self.n_query.to_string(),
            "index_ratio" => self.index_ratio.to_string(),
            "k" => self.search.k.to_string(),
            "l" => self.search.l.to_string(),
            "s_l" => self.s_l.map_or("auto".to_string(), |v| v.to_string()),
            "eval_gap" => self.search.eval_gap.to_string(),
            "add_step" => self.search.add_step.to_string(),
            "beta" => self.beta.to_string(),
            "history_count" => self.workload.history_count.to_string(),
            "eval_count" => self.workload.eval_count.to_string(),
            "split" => self.workload.split.to_string(),
            "truth_k" => self.workload.truth_k.to_string(),
            "uniform_eval" => self.workload.uniform_eval.to_string(),
            "max_depth" => self.max_depth.to_string(),
            "min_leaf" => self.min_leaf.to_string(),
            "freeze_tree" => self.freeze_tree.to_string(),
            "heat_batch" => self.heat_batch.to_string(),
            "sweep_axis" => self.sweep_axis.name().to_string(),
            "sweep_values" => {
                self.sweep_values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
            }
            "synth_n" => self.synth.n.to_string(),
            "synth_dim" => self.synth.dim.to_string(),
            "synth_clusters" => self.synth.clusters.to_string(),
            "synth_spread" => self.synth.spread.to_string(),
            _ => String::new(),
        }
    }

    /// The effective configuration as a `key = value` document that
    /// reproduces this run when read back.
    pub fn echo(&self) -> String {
        KEYS.iter().map(|k| format!("{k} = {}\n", self.get(k))).collect()
    }

    pub fn build_params(&self) -> BuildParams {
        BuildParams { seed: self.build_seed.unwrap_or(self.seed), ..self.build.clone() }
    }

    pub fn hot_config(&self) -> HotIndexConfig {
        HotIndexConfig {
            n_query: self.n_query,
            index_ratio: self.index_ratio,
            build: self.build_params(),
        }
    }

    pub fn search_params(&self) -> SearchParams {
        SearchParams { s_l: self.s_l.unwrap_or(self.search.l), ..self.search.clone() }
    }

    /// `s_l` explicitly set, or `None` when it follows `l`.
    pub fn fixed_s_l(&self) -> Option<usize> {
        self.s_l
    }

    pub fn zipf(&self) -> ZipfParams {
        ZipfParams {
            beta: self.beta,
            universe: 1,
            seed: self.zipf_seed.unwrap_or(self.seed.wrapping_add(1)),
        }
    }

    pub fn data_seed(&self) -> u64 {
        self.data_seed.unwrap_or(self.seed.wrapping_add(2))
    }

    pub fn tree_seed(&self) -> u64 {
        self.seed
    }

    /// Checks every value against its domain.
    pub fn validate(&self) -> Result<()> {
        self.build_params().validate().map_err(|e| anyhow!("{e}"))?;
        self.search_params().validate().map_err(|e| anyhow!("{e}"))?;
        if !(self.index_ratio > 0.0 && self.index_ratio <= 1.0) {
            bail!("index_ratio {} outside (0, 1]", self.index_ratio);
        }
        if self.n_query == 0 {
            bail!("n_query must be positive");
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            bail!("beta must be finite and nonnegative");
        }
        if !(self.workload.split > 0.0 && self.workload.split < 1.0) {
            bail!("split {} outside (0, 1)", self.workload.split);
        }
        if self.workload.truth_k < self.search.k {
            bail!("truth_k = {} is below k = {}", self.workload.truth_k, self.search.k);
        }
        if self.min_leaf == 0 || self.heat_batch == 0 {
            bail!("min_leaf and heat_batch must be positive");
        }
        if self.sweep_axis != SweepAxis::None && self.sweep_values.is_empty() {
            bail!("sweep_axis {} needs sweep_values", self.sweep_axis.name());
        }
        for &v in &self.sweep_values {
            let ok = match self.sweep_axis {
                SweepAxis::None => true,
                SweepAxis::IndexRatio => v > 0.0 && v <= 1.0,
                SweepAxis::L | SweepAxis::K | SweepAxis::EvalGap => v >= 1.0 && v.fract() == 0.0,
                SweepAxis::Depth | SweepAxis::AddStep => v >= 0.0 && v.fract() == 0.0,
            };
            if !ok {
                bail!("sweep value {v} is outside the domain of {}", self.sweep_axis.name());
            }
            if self.sweep_axis == SweepAxis::K && v as usize > self.workload.truth_k {
                bail!("sweep k = {v} exceeds truth_k = {}", self.workload.truth_k);
            }
        }
        if self.synth.n == 0 || self.synth.dim == 0 || self.synth.clusters == 0 {
            bail!("synth_n, synth_dim and synth_clusters must be positive");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_table_values() {
        let c = RunConfig::default();
        let s = c.search_params();
        assert_eq!((s.k, s.eval_gap, s.add_step, c.max_depth), (10, 50, 0, 10));
        assert_eq!(c.index_ratio, 0.01);
        assert_eq!(s.s_l, s.l);
        c.validate().unwrap();
    }

    #[test]
    fn text_round_trips_through_echo() {
        let mut c = RunConfig::default();
        c.apply_text("# comment\nl = 64\n s_l = 32 \nbeta=0.8\nsweep_axis = ir\nsweep_values = 0.001, 0.01\nuniform_eval = yes\n")
            .unwrap();
        assert_eq!(c.search_params().s_l, 32);
        assert_eq!(c.sweep_values, vec![0.001, 0.01]);
        let mut back = RunConfig::default();
        back.apply_text(&c.echo()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_bad_input() {
        let mut c = RunConfig::default();
        assert!(c.apply_text("nonsense = 1").is_err());
        assert!(c.apply_text("k").is_err());
        assert!(c.set("k", "ten").is_err());
        c.set("sweep_axis", "ir").unwrap();
        assert!(c.validate().is_err());
        c.set("sweep_values", "0.5,2").unwrap();
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.set("l", "5").unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn seeds_derive_from_master_unless_set() {
        let mut c = RunConfig::default();
        c.set("seed", "7").unwrap();
        assert_eq!(c.build_params().seed, 7);
        assert_eq!(c.zipf().seed, 8);
        c.set("build_seed", "99").unwrap();
        assert_eq!(c.build_params().seed, 99);
        assert_eq!(c.hot_config().build.seed, 99);
    }
}
