use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use grnn_cli::compare::compare;
use grnn_cli::config::{ExperimentConfig, ExperimentKind, ResolvedConfig};
use grnn_cli::error::{CliError, Result};
use grnn_cli::run::{eval_run, generate, metrics_identical, replay, run, MetricRow};

#[derive(Parser)]
#[command(name = "grnn", version, about = "Graph recurrent network experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to the config's `out` or `runs/<experiment>-<seed>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Use the full-size defaults instead of the desk-scale ones (slow).
    #[arg(long)]
    paper_scale: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write the graph, shift operator and dataset of a training experiment.
    Generate(RunArgs),
    /// Train every configured architecture and write metrics and checkpoints.
    Train(RunArgs),
    /// Re-evaluate the checkpoints of a run directory.
    Eval {
        #[arg(long)]
        run: PathBuf,
    },
    /// Run a stability sweep.
    Stability(RunArgs),
    /// Check permutation equivariance of every gating variant.
    Equivariance(RunArgs),
    /// Relative metric deltas against the first run, or against `grnn` within one run.
    Compare {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Also write the comparison as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-run a run directory and check its metrics are reproduced bit for bit.
    Replay {
        run: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(args: &RunArgs, fallback: Option<ExperimentKind>) -> Result<(ResolvedConfig, PathBuf)> {
    let mut cfg = match (&args.config, fallback) {
        (Some(path), _) => ExperimentConfig::parse(&fs::read_to_string(path)?)?,
        (None, Some(kind)) => ExperimentConfig::preset(kind, args.seed.unwrap_or(0)),
        (None, None) => {
            return Err(CliError::Config {
                field: "--config".into(),
                message: "a config file is required".into(),
            })
        }
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let resolved = cfg.resolve(args.paper_scale)?;
    let out = args
        .out
        .clone()
        .or(cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from(format!("runs/{:?}-{}", resolved.experiment, resolved.seed)));
    Ok((resolved, out))
}

fn require(cfg: &ResolvedConfig, ok: bool, what: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(CliError::Config {
            field: "experiment".into(),
            message: format!("{:?} is not {what}", cfg.experiment),
        })
    }
}

fn print_metrics(dir: &Path, rows: &[MetricRow]) {
    println!("{}", dir.display());
    for r in rows {
        println!("  {:<12} {:<24} {}", r.architecture, r.metric, r.value);
    }
}

fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Generate(args) => {
            let (cfg, out) = load(&args, None)?;
            require(&cfg, cfg.experiment.is_training(), "a training experiment")?;
            let ds = generate(&cfg, &out)?;
            println!(
                "{}: n={} train={} val={} test={}",
                out.display(),
                ds.n,
                ds.train.len(),
                ds.val.len(),
                ds.test.len()
            );
        }
        Command::Train(args) => {
            let (cfg, out) = load(&args, None)?;
            require(&cfg, cfg.experiment.is_training(), "a training experiment")?;
            let outcome = run(&cfg, &out)?;
            print_metrics(&outcome.dir, &outcome.metrics);
        }
        Command::Eval { run: dir } => {
            let rows = eval_run(&dir)?;
            print_metrics(&dir, &rows);
        }
        Command::Stability(args) => {
            let (cfg, out) = load(&args, None)?;
            require(&cfg, cfg.experiment.is_stability(), "a stability sweep")?;
            let outcome = run(&cfg, &out)?;
            print_metrics(&outcome.dir, &outcome.metrics);
        }
        Command::Equivariance(args) => {
            let (cfg, out) = load(&args, Some(ExperimentKind::Equivariance))?;
            require(&cfg, cfg.experiment == ExperimentKind::Equivariance, "an equivariance check")?;
            let outcome = run(&cfg, &out)?;
            print_metrics(&outcome.dir, &outcome.metrics);
            let failed = outcome.metrics.iter().any(|r| r.metric == "passed" && r.value != 1.0);
            return Ok(!failed);
        }
        Command::Compare { runs, out } => {
            let c = compare(&runs)?;
            print!("{}", c.to_table());
            if let Some(path) = out {
                fs::write(path, c.to_csv())?;
            }
        }
        Command::Replay { run: dir, out } => {
            replay(&dir, &out)?;
            let same = metrics_identical(&dir, &out)?;
            println!("{}", if same { "metrics reproduced bit for bit" } else { "metrics differ" });
            return Ok(same);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
