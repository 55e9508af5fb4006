//! `qllm`: run experiments, sweeps, needle grids and oracle checks.
//!
//! Exit codes: 0 success, 1 configuration error, 2 runtime error,
//! 3 oracle-check failure.

use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use qllm_bench::config::{Config, Overrides};
use qllm_bench::experiment::run_experiment;
use qllm_bench::oracle::{run_oracle_check, OracleSizes};
use qllm_bench::report::{emit_report, emit_timings, write_json};
use qllm_bench::sweep::{
    emit_needle_grid, emit_sweep, needle_grid, sweep, Axis, SweepParam, DEFAULT_DEPTHS, DEFAULT_LENGTHS,
};
use qllm_bench::{formats, workload::WorkloadError};
use qllm_core::model::ToyModel;

#[derive(Parser, Debug)]
#[command(name = "qllm", version, about = "Query-aware block memory experiments on a toy decoder")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML config file; flags below override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Load model weights from a dump instead of generating them.
    #[arg(long, global = true)]
    weights: Option<PathBuf>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    beta: Option<f64>,
    #[arg(long, global = true)]
    block_size: Option<usize>,
    #[arg(long, global = true)]
    num_blocks: Option<usize>,
    #[arg(long, global = true)]
    num_repr: Option<usize>,
    #[arg(long, global = true)]
    local_window: Option<usize>,
    #[arg(long, global = true)]
    chunk_size: Option<usize>,
    #[arg(long, global = true)]
    hot_capacity: Option<usize>,
    /// qllm, current-only or local-only.
    #[arg(long, global = true)]
    policy: Option<String>,
    /// Workload seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "qllm-out")]
    out_dir: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// One workload under one policy; writes metrics, heatmaps and trace.
    Run,
    /// Grid over beta, num-repr, block-size or num-blocks.
    Sweep {
        /// `PARAM=V1,V2,...`; repeat for a product grid.
        #[arg(long = "axis", required = true)]
        axes: Vec<String>,
    },
    /// Planted-needle recall over context lengths × depths.
    NeedleGrid {
        #[arg(long, value_delimiter = ',')]
        lengths: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        depths: Vec<f64>,
    },
    /// Compare engine pieces with reference implementations.
    OracleCheck {
        /// Fewer cases per check.
        #[arg(long)]
        quick: bool,
    },
    /// Write the model weights in the binary dump format.
    DumpWeights { path: PathBuf },
}

enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
    Acceptance(String),
}

fn config_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Config(e.into())
}

fn runtime_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Runtime(e.into())
}

fn parse_axis(s: &str) -> Result<Axis, Failure> {
    let (name, values) =
        s.split_once('=').ok_or_else(|| config_err(anyhow::anyhow!("axis {s:?} is not PARAM=V1,V2,...")))?;
    let param: SweepParam = name.parse().map_err(|e: String| config_err(anyhow::anyhow!(e)))?;
    let values = values
        .split(',')
        .map(|v| v.trim().parse::<f64>().with_context(|| format!("axis {name}: bad value {v:?}")))
        .collect::<anyhow::Result<Vec<_>>>()
        .map_err(config_err)?;
    Ok(Axis { param, values })
}

fn load(common: &Common) -> Result<(Config, ToyModel), Failure> {
    let base = match &common.config {
        Some(path) => Config::load(path).map_err(config_err)?,
        None => Config::default(),
    };
    let overrides = Overrides {
        beta: common.beta,
        block_size: common.block_size,
        num_blocks: common.num_blocks,
        num_repr: common.num_repr,
        local_window: common.local_window,
        chunk_size: common.chunk_size,
        hot_capacity: common.hot_capacity,
        policy: common.policy.clone(),
        seed: common.seed,
    };
    let mut config = base.with_overrides(&overrides).map_err(config_err)?;
    let model = match &common.weights {
        Some(path) => {
            let file = std::fs::File::open(path)
                .with_context(|| format!("cannot open {}", path.display()))
                .map_err(config_err)?;
            let model = formats::read_weights(&mut BufReader::new(file))
                .with_context(|| format!("cannot load weights from {}", path.display()))
                .map_err(config_err)?;
            config.model = model.config().clone();
            model
        }
        None => ToyModel::new(config.model.clone()).map_err(config_err)?,
    };
    Ok((config, model))
}

/// The error and its causes, skipping causes the message already ends with.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let m = cause.to_string();
        if !out.ends_with(&m) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&m);
        }
    }
    out
}

fn written(dir: &Path) {
    log::info!("wrote outputs to {}", dir.display());
}

fn execute(cli: Cli) -> Result<(), Failure> {
    let (config, model) = load(&cli.common)?;
    let out = &cli.common.out_dir;
    let engine = config.engine;
    match cli.command {
        Command::Run => {
            let report =
                run_experiment(&model, &engine, config.policy, &config.workload).map_err(|e| match e.source {
                    WorkloadError::Spec(_) => config_err(e),
                    _ => runtime_err(e),
                })?;
            emit_report(&report, out).map_err(runtime_err)?;
            emit_timings(&report, out).map_err(runtime_err)?;
            written(out);
            match report.mean_recall {
                Some(r) => println!(
                    "{}: mean recall {r:.4} over {} repetitions",
                    report.policy.name(),
                    report.repetitions.len()
                ),
                None => println!(
                    "{}: {} repetitions (no ground-truth block)",
                    report.policy.name(),
                    report.repetitions.len()
                ),
            }
        }
        Command::Sweep { axes } => {
            let axes = axes.iter().map(|a| parse_axis(a)).collect::<Result<Vec<_>, _>>()?;
            let report = sweep(&model, &engine, config.policy, &config.workload, &axes).map_err(|e| match e {
                qllm_bench::sweep::SweepError::Grid(_) => config_err(e),
                other => runtime_err(other),
            })?;
            emit_sweep(&report, out).map_err(runtime_err)?;
            written(out);
            for row in &report.rows {
                let status = if row.skipped.is_empty() {
                    row.mean_recall.map_or("-".into(), |r| format!("{r:.4}"))
                } else {
                    format!("skipped ({})", row.skipped)
                };
                println!(
                    "beta={} n_r={} l_b={} n_b={}: {status}",
                    row.beta, row.representatives, row.block_size, row.blocks_per_lookup
                );
            }
        }
        Command::NeedleGrid { lengths, depths } => {
            let lengths = if lengths.is_empty() { DEFAULT_LENGTHS.to_vec() } else { lengths };
            let depths = if depths.is_empty() { DEFAULT_DEPTHS.to_vec() } else { depths };
            let report = needle_grid(&model, &engine, config.policy, &config.workload, &lengths, &depths)
                .map_err(runtime_err)?;
            emit_needle_grid(&report, out).map_err(runtime_err)?;
            written(out);
            for c in &report.cells {
                let r = c.mean_recall.map_or(format!("skipped ({})", c.skipped), |r| format!("{r:.4}"));
                println!("{} tokens, depth {}: {r}", c.context_length, c.depth);
            }
        }
        Command::OracleCheck { quick } => {
            let sizes = if quick {
                OracleSizes {
                    dense_prompts: 2,
                    scoring_instances: 100,
                    lru_traces: 10,
                    stream_tokens: 512,
                    ..Default::default()
                }
            } else {
                OracleSizes::default()
            };
            let report = run_oracle_check(&model, &config.effective_engine(), config.workload.seed, sizes);
            std::fs::create_dir_all(out).map_err(runtime_err)?;
            write_json(&out.join("oracle_report.json"), &report).map_err(runtime_err)?;
            for c in &report.checks {
                println!(
                    "{} {}: max error {:e}, {} mismatches",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.max_error,
                    c.mismatches
                );
            }
            if !report.passed {
                return Err(Failure::Acceptance("oracle check failed".into()));
            }
        }
        Command::DumpWeights { path } => {
            let file = std::fs::File::create(&path)
                .with_context(|| format!("cannot create {}", path.display()))
                .map_err(runtime_err)?;
            let mut w = std::io::BufWriter::new(file);
            formats::write_weights(&mut w, &model).and_then(|_| std::io::Write::flush(&mut w)).map_err(runtime_err)?;
            println!("wrote {} (checksum {:016x})", path.display(), model.checksum());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(2)
        }
        Err(Failure::Acceptance(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(3)
        }
    }
}
