//! Subcommand implementations behind the `pegrad` binary.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use pegrad_core::runner::{eval_seeds, evaluate_policy, EvalSummary};
use pegrad_core::Combiner;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::plot::{aggregate_curve, bootstrap_rng, curves_svg, pareto_svg, CurveMetric};
use crate::run::{
    pareto_points, run_all, sweep_jobs, write_pareto_csv, RunIndex, RunStatus, RunSummary, PARETO_FILE,
};

#[derive(Debug, Parser)]
#[command(name = "pegrad", version, about = "Train and compare energy-aware multi-objective policies")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train every seed listed in a run config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint with deterministic actions.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 50)]
        episodes: usize,
        /// Seed for the episode start states.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the summary as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a grid of trade-off weights plus the projected combiners.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated scalarisation weights.
        #[arg(long, value_delimiter = ',', required = true)]
        lambdas: Vec<f64>,
        /// Skip the pegrad and pcgrad_plus runs.
        #[arg(long)]
        no_projected: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render an SVG from a run index.
    Plot {
        #[arg(long)]
        runs: PathBuf,
        #[arg(long, value_enum, default_value_t = PlotKind::Return)]
        kind: PlotKind,
        #[arg(long)]
        out: PathBuf,
        /// Seed of the bootstrap resampler.
        #[arg(long, default_value_t = 0)]
        bootstrap_seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlotKind {
    /// Evaluation return against environment steps.
    Return,
    /// Evaluation energy against environment steps.
    Energy,
    /// Final return against final energy, one point per label.
    Pareto,
}

fn load_config(path: &Path, out: Option<PathBuf>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(out) = out {
        cfg.output_dir = out;
    }
    Ok(cfg)
}

fn any_failed(summaries: &[RunSummary]) -> bool {
    summaries.iter().any(|s| s.status == RunStatus::Failed)
}

pub fn train(config: &Path, out: Option<PathBuf>) -> Result<Vec<RunSummary>> {
    let cfg = load_config(config, out)?;
    let jobs: Vec<_> = cfg.seeds.iter().map(|&s| (cfg.clone(), s)).collect();
    run_all(&jobs, &cfg.output_dir, cfg.jobs)
}

/// Combiners covered by a sweep: one scalarised run per weight, then the two
/// projected combiners unless disabled.
pub fn sweep_combiners(lambdas: &[f64], projected: bool) -> Result<Vec<Combiner>> {
    let mut out = Vec::new();
    for &lambda in lambdas {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(CliError::Config(format!("lambdas: weight must be finite and >= 0, got {lambda}")));
        }
        let c = Combiner::Scalarized { lambda };
        if out.contains(&c) {
            return Err(CliError::Config(format!("lambdas: duplicate weight {lambda}")));
        }
        out.push(c);
    }
    if projected {
        out.extend([Combiner::PeGrad, Combiner::PcGradPlus]);
    }
    Ok(out)
}

pub fn sweep(config: &Path, lambdas: &[f64], projected: bool, out: Option<PathBuf>) -> Result<Vec<RunSummary>> {
    let cfg = load_config(config, out)?;
    let combiners = sweep_combiners(lambdas, projected)?;
    let summaries = run_all(&sweep_jobs(&cfg, &combiners), &cfg.output_dir, cfg.jobs)?;
    write_pareto_csv(&pareto_points(&summaries), &cfg.output_dir.join(PARETO_FILE))?;
    Ok(summaries)
}

pub fn eval(checkpoint: &Path, episodes: usize, seed: u64) -> Result<EvalSummary> {
    if episodes == 0 {
        return Err(CliError::Config("episodes: must be >= 1".into()));
    }
    let ck = Checkpoint::load(checkpoint)?;
    let policy = ck.policy()?;
    Ok(evaluate_policy(
        &policy,
        ck.metadata.env,
        ck.metadata.energy_mode,
        &eval_seeds(seed, episodes),
    )?)
}

pub fn plot(index_path: &Path, kind: PlotKind, out: &Path, bootstrap_seed: u64) -> Result<()> {
    let index = RunIndex::load(index_path)?;
    let root = index_path.parent().unwrap_or(Path::new("."));
    let labels = index.labels();
    let svg = match kind {
        PlotKind::Pareto => {
            let mut summaries = Vec::new();
            for l in &labels {
                summaries.extend(index.summaries(root, l)?);
            }
            pareto_svg("Final return vs energy", &pareto_points(&summaries))
        }
        PlotKind::Return | PlotKind::Energy => {
            let (metric, name) = match kind {
                PlotKind::Return => (CurveMetric::Return, "evaluation return"),
                _ => (CurveMetric::Energy, "evaluation energy"),
            };
            let mut rng = bootstrap_rng(bootstrap_seed);
            let mut curves = Vec::new();
            for l in &labels {
                let logs = index.metrics(root, l)?;
                if !logs.is_empty() {
                    curves.push(aggregate_curve(l, &logs, metric, &mut rng));
                }
            }
            curves_svg(&format!("{name} (mean, 95% bootstrap CI)"), name, &curves)
        }
    };
    std::fs::write(out, svg).map_err(|e| CliError::io(format!("writing {}", out.display()), e))
}

/// Runs a parsed command and maps the result to a process exit code.
pub fn dispatch(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Train { config, out } => train(&config, out).map(|s| any_failed(&s)),
        Command::Sweep {
            config,
            lambdas,
            no_projected,
            out,
        } => sweep(&config, &lambdas, !no_projected, out).map(|s| any_failed(&s)),
        Command::Eval {
            checkpoint,
            episodes,
            seed,
            out,
        } => eval(&checkpoint, episodes, seed).and_then(|summary| {
            let json = serde_json::to_string_pretty(&summary).expect("summary serialises") + "\n";
            print!("{json}");
            if let Some(out) = out {
                std::fs::write(&out, json).map_err(|e| CliError::io(format!("writing {}", out.display()), e))?;
            }
            Ok(false)
        }),
        Command::Plot {
            runs,
            kind,
            out,
            bootstrap_seed,
        } => plot(&runs, kind, &out, bootstrap_seed).map(|_| false),
    };
    match result {
        Ok(false) => 0,
        Ok(true) => {
            eprintln!("one or more runs failed; see FAILED markers");
            1
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
