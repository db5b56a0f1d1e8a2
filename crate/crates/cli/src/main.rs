use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use hotgraph_cli::{analyze, bench, build, gen_data, train, Paths, RunConfig};

#[derive(Parser)]
#[command(name = "hotgraph", version, about = "Dual-layer graph ANN index harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded synthetic corpus in fvecs format.
    GenData(ConfigArgs),
    /// Build the full index, heat it with the history, persist the combined index.
    Build(ConfigArgs),
    /// Train the early-termination tree on the history and persist it.
    TrainTree(ConfigArgs),
    /// Run the evaluation queries across the configured sweep.
    Bench(ConfigArgs),
    /// Evaluate the index-ratio cost model.
    Analyze {
        #[arg(long, default_value_t = 1_000_000)]
        n: u64,
        #[arg(long, default_value_t = 1.2)]
        beta: f64,
        #[arg(long, default_value_t = 10_000)]
        grid_points: usize,
    },
}

macro_rules! config_flags {
    ($($field:ident),* $(,)?) => {
        #[derive(Args)]
        struct ConfigArgs {
            /// `key = value` configuration file.
            #[arg(long)]
            config: Option<PathBuf>,
            /// Extra override, repeatable.
            #[arg(long = "set", value_name = "KEY=VALUE")]
            set: Vec<String>,
            $(#[arg(long)] $field: Option<String>,)*
        }

        impl ConfigArgs {
            fn overrides(&self) -> Vec<(&'static str, &str)> {
                let mut v = Vec::new();
                $(if let Some(x) = &self.$field { v.push((stringify!($field), x.as_str())); })*
                v
            }
        }
    };
}

config_flags!(
    dataset, out_dir, seed, build_seed, zipf_seed, data_seed, knng_k, nn_descent_iters, angle,
    max_degree, n_query, index_ratio, k, l, s_l, eval_gap, add_step, beta, history_count,
    eval_count, split, truth_k, uniform_eval, max_depth, min_leaf, freeze_tree, heat_batch,
    sweep_axis, sweep_values, synth_n, synth_dim, synth_clusters, synth_spread,
);

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| anyhow::anyhow!("--set expects KEY=VALUE, got {kv:?}"))?;
            cfg.set(k.trim(), v)?;
        }
        for (k, v) in self.overrides() {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => {
            let cfg = a.resolve()?;
            let ds = gen_data(&cfg)?;
            println!("wrote {} x {} to {}", ds.len(), ds.dim(), cfg.dataset.display());
        }
        Command::Build(a) => {
            let cfg = a.resolve()?;
            let report = build(&cfg)?;
            println!("{report}");
            println!("index written to {}", Paths::new(&cfg).index().display());
        }
        Command::TrainTree(a) => {
            let cfg = a.resolve()?;
            let report = train(&cfg)?;
            print!("{report}");
            println!("tree written to {}", Paths::new(&cfg).tree().display());
        }
        Command::Bench(a) => {
            let cfg = a.resolve()?;
            let out = bench(&cfg)?;
            println!(
                "{:>4} {:<10} {:>8} {:>6} {:>8} {:>12} {:>10}",
                "row", "mode", "value", "l", "recall", "dist_count", "qps"
            );
            for (r, t) in out.records.iter().zip(&out.timings) {
                println!(
                    "{:>4} {:<10} {:>8} {:>6} {:>8.4} {:>12.1} {:>10.0}",
                    r.row,
                    r.mode.name(),
                    r.value,
                    r.l,
                    r.recall,
                    r.mean_dist_count,
                    t.qps
                );
            }
            println!("metrics written to {}", Paths::new(&cfg).bench_csv().display());
        }
        Command::Analyze { n, beta, grid_points } => {
            println!("{}", analyze(n, beta, grid_points)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
