//! Training orchestration: one directory per (label, seed), seeds trained
//! concurrently, and the index and Pareto files that tie a batch together.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use pegrad_core::runner::{EvalSummary, RunOutcome};
use pegrad_core::{Combiner, EnergyMode, EnvId, MetricsLog};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, CheckpointMeta};
use crate::config::{Algorithm, RunConfig};
use crate::error::{CliError, Result};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const BEST_CHECKPOINT_FILE: &str = "best_checkpoint.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const FAILED_FILE: &str = "FAILED";
pub const INDEX_FILE: &str = "index.json";
pub const PARETO_FILE: &str = "pareto.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestSummary {
    pub step: u64,
    pub eval: EvalSummary,
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub label: String,
    pub algorithm: Algorithm,
    pub env: EnvId,
    pub energy_mode: EnergyMode,
    pub combiner: Combiner,
    pub seed: u64,
    pub total_steps: u64,
    pub steps_done: u64,
    pub status: RunStatus,
    pub failure: Option<String>,
    pub final_eval: Option<EvalSummary>,
    pub best: Option<BestSummary>,
    pub actor_updates: usize,
    /// Fraction of actor updates in which the energy gradient was projected.
    pub projected_fraction: Option<f64>,
    pub mean_beta_scale: Option<f64>,
    pub clamped_actions: u64,
}

/// Directory name of one run.
pub fn run_dir_name(label: &str, seed: u64) -> String {
    format!("{label}_seed{seed}")
}

/// Label used for directories and plots: the combiner label.
pub fn run_label(cfg: &RunConfig) -> String {
    cfg.combiner.label()
}

fn write(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| CliError::io(format!("writing {}", path.display()), e))
}

fn total_steps(cfg: &RunConfig) -> u64 {
    match cfg.algorithm {
        Algorithm::Sac => cfg.sac_config().total_steps,
        Algorithm::Ppo => cfg.ppo_config().total_steps,
    }
}

/// Trains one seed into `dir`, streaming `metrics.csv` as it goes. A run that
/// fails numerically still leaves its partial metrics, a `FAILED` marker and a
/// summary; only I/O and setup problems return `Err`.
pub fn train_one(cfg: &RunConfig, seed: u64, dir: &Path) -> Result<RunSummary> {
    let env = cfg.env_id()?;
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(format!("creating {}", dir.display()), e))?;
    let _ = std::fs::remove_file(dir.join(FAILED_FILE));
    let mut single = cfg.clone();
    single.seeds = vec![seed];
    write(&dir.join(CONFIG_FILE), &single.to_toml())?;

    let metrics_path = dir.join(METRICS_FILE);
    let sink = std::fs::File::create(&metrics_path)
        .map_err(|e| CliError::io(format!("creating {}", metrics_path.display()), e))?;
    let sink: Box<dyn std::io::Write + Send> = Box::new(std::io::BufWriter::new(sink));
    let outcome: RunOutcome = match cfg.algorithm {
        Algorithm::Sac => pegrad_core::sac::train(env, cfg.energy_mode, &cfg.sac_config(), seed, Some(sink))?,
        Algorithm::Ppo => pegrad_core::ppo::train(env, cfg.energy_mode, &cfg.ppo_config(), seed, Some(sink))?,
    };

    let meta = |step| CheckpointMeta {
        algorithm: cfg.algorithm,
        env,
        energy_mode: cfg.energy_mode,
        combiner: cfg.combiner,
        seed,
        step,
        policy: outcome.policy.spec().clone(),
    };
    let mut failure = outcome.failure.clone();
    match Checkpoint::new(meta(outcome.steps_done), outcome.policy.params(), &outcome.networks) {
        Ok(ck) => ck.save(&dir.join(CHECKPOINT_FILE))?,
        Err(e) => failure = failure.or(Some(e.to_string())),
    }
    if let Some(best) = &outcome.best {
        Checkpoint::new(meta(best.step), &best.policy_params, &[])?.save(&dir.join(BEST_CHECKPOINT_FILE))?;
    }

    let n = outcome.trace.len();
    let summary = RunSummary {
        label: run_label(cfg),
        algorithm: cfg.algorithm,
        env,
        energy_mode: cfg.energy_mode,
        combiner: cfg.combiner,
        seed,
        total_steps: total_steps(cfg),
        steps_done: outcome.steps_done,
        status: if failure.is_some() { RunStatus::Failed } else { RunStatus::Ok },
        failure: failure.clone(),
        final_eval: outcome.final_eval,
        best: outcome.best.as_ref().map(|b| BestSummary { step: b.step, eval: b.eval }),
        actor_updates: n,
        projected_fraction: (n > 0).then(|| outcome.trace.iter().filter(|d| d.projected).count() as f64 / n as f64),
        mean_beta_scale: (n > 0).then(|| outcome.trace.iter().map(|d| d.beta_scale).sum::<f64>() / n as f64),
        clamped_actions: outcome.clamped_actions,
    };
    write(
        &dir.join(SUMMARY_FILE),
        &(serde_json::to_string_pretty(&summary).expect("summary serialises") + "\n"),
    )?;
    if let Some(reason) = &failure {
        write(&dir.join(FAILED_FILE), &format!("{reason}\n"))?;
    }
    Ok(summary)
}

/// One entry of `index.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub label: String,
    pub combiner: Combiner,
    pub seed: u64,
    /// Relative to the index file.
    pub dir: String,
    pub status: RunStatus,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunIndex {
    pub runs: Vec<IndexEntry>,
}

impl RunIndex {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Format {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write(path, &(serde_json::to_string_pretty(self).expect("index serialises") + "\n"))
    }

    /// Labels in first-seen order.
    pub fn labels(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.runs {
            if !out.contains(&r.label) {
                out.push(r.label.clone());
            }
        }
        out
    }

    /// Summaries of the successful runs under `label`, read from disk.
    pub fn summaries(&self, root: &Path, label: &str) -> Result<Vec<RunSummary>> {
        self.runs
            .iter()
            .filter(|r| r.label == label && r.status == RunStatus::Ok)
            .map(|r| read_summary(&root.join(&r.dir)))
            .collect()
    }

    pub fn metrics(&self, root: &Path, label: &str) -> Result<Vec<MetricsLog>> {
        self.runs
            .iter()
            .filter(|r| r.label == label && r.status == RunStatus::Ok)
            .map(|r| {
                let path = root.join(&r.dir).join(METRICS_FILE);
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
                Ok(MetricsLog::read_csv(text.as_bytes())?)
            })
            .collect()
    }
}

pub fn read_summary(dir: &Path) -> Result<RunSummary> {
    let path = dir.join(SUMMARY_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Format {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

/// Trains every `(config, seed)` job into `out_dir`, at most `jobs` at a
/// time, and writes `index.json`. Results come back in job order regardless
/// of scheduling, and each run is independent of the others.
pub fn run_all(work: &[(RunConfig, u64)], out_dir: &Path, jobs: usize) -> Result<Vec<RunSummary>> {
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(format!("creating {}", out_dir.display()), e))?;
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<RunSummary>>>> = Mutex::new((0..work.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, work.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some((cfg, seed)) = work.get(i) else { break };
                let dir = out_dir.join(run_dir_name(&run_label(cfg), *seed));
                let r = train_one(cfg, *seed, &dir);
                match &r {
                    Ok(s) if s.status == RunStatus::Ok => eprintln!("[{}] done", dir.display()),
                    Ok(s) => eprintln!("[{}] FAILED: {}", dir.display(), s.failure.as_deref().unwrap_or("")),
                    Err(e) => eprintln!("[{}] error: {e}", dir.display()),
                }
                results.lock().expect("no worker panics while holding the lock")[i] = Some(r);
            });
        }
    });
    let summaries: Vec<RunSummary> = results
        .into_inner()
        .expect("workers finished")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect::<Result<_>>()?;
    let index = RunIndex {
        runs: summaries
            .iter()
            .map(|s| IndexEntry {
                label: s.label.clone(),
                combiner: s.combiner,
                seed: s.seed,
                dir: run_dir_name(&s.label, s.seed),
                status: s.status,
            })
            .collect(),
    };
    index.save(&out_dir.join(INDEX_FILE))?;
    Ok(summaries)
}

/// Mean final evaluation of one label across its successful seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub label: String,
    pub combiner: Combiner,
    pub seeds: usize,
    pub return_mean: f64,
    pub energy_mean: f64,
    pub seed_returns: Vec<f64>,
    pub seed_energies: Vec<f64>,
    /// No other point has at least the return and at most the energy, with
    /// one of the two strictly better.
    pub nondominated: bool,
}

pub fn pareto_points(summaries: &[RunSummary]) -> Vec<ParetoPoint> {
    let mut labels: Vec<(&str, Combiner)> = Vec::new();
    for s in summaries {
        if !labels.iter().any(|(l, _)| *l == s.label) {
            labels.push((&s.label, s.combiner));
        }
    }
    let mut points: Vec<ParetoPoint> = labels
        .into_iter()
        .filter_map(|(label, combiner)| {
            let evals: Vec<&EvalSummary> = summaries
                .iter()
                .filter(|s| s.label == label && s.status == RunStatus::Ok)
                .filter_map(|s| s.final_eval.as_ref())
                .collect();
            if evals.is_empty() {
                return None;
            }
            let seed_returns: Vec<f64> = evals.iter().map(|e| e.return_mean).collect();
            let seed_energies: Vec<f64> = evals.iter().map(|e| e.energy_mean).collect();
            let n = evals.len() as f64;
            Some(ParetoPoint {
                label: label.to_string(),
                combiner,
                seeds: evals.len(),
                return_mean: seed_returns.iter().sum::<f64>() / n,
                energy_mean: seed_energies.iter().sum::<f64>() / n,
                seed_returns,
                seed_energies,
                nondominated: true,
            })
        })
        .collect();
    let snapshot: Vec<(f64, f64)> = points.iter().map(|p| (p.return_mean, p.energy_mean)).collect();
    for p in &mut points {
        p.nondominated = !snapshot.iter().any(|&(r, e)| {
            r >= p.return_mean && e <= p.energy_mean && (r > p.return_mean || e < p.energy_mean)
        });
    }
    points
}

pub fn write_pareto_csv(points: &[ParetoPoint], path: &Path) -> Result<()> {
    let join = |xs: &[f64]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";");
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Run(format!("{}: {e}", path.display())))?;
    let rows = std::iter::once(
        [
            "label",
            "combiner",
            "seeds",
            "return_mean",
            "energy_mean",
            "nondominated",
            "seed_returns",
            "seed_energies",
        ]
        .map(String::from),
    )
    .chain(points.iter().map(|p| {
        [
            p.label.clone(),
            p.combiner.to_string(),
            p.seeds.to_string(),
            p.return_mean.to_string(),
            p.energy_mean.to_string(),
            p.nondominated.to_string(),
            join(&p.seed_returns),
            join(&p.seed_energies),
        ]
    }));
    for r in rows {
        w.write_record(&r).map_err(|e| CliError::Run(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| CliError::io(format!("writing {}", path.display()), e))
}

/// Expands a base config into one training job per combiner and seed.
pub fn sweep_jobs(base: &RunConfig, combiners: &[Combiner]) -> Vec<(RunConfig, u64)> {
    combiners
        .iter()
        .flat_map(|c| {
            let cfg = RunConfig {
                combiner: *c,
                ..base.clone()
            };
            base.seeds.iter().map(move |&s| (cfg.clone(), s))
        })
        .collect()
}

/// Path of a run directory given an index file and an entry.
pub fn entry_dir(index_path: &Path, entry: &IndexEntry) -> PathBuf {
    index_path.parent().unwrap_or(Path::new(".")).join(&entry.dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(label: &str, ret: f64, energy: f64) -> RunSummary {
        RunSummary {
            label: label.into(),
            algorithm: Algorithm::Ppo,
            env: EnvId::Pointmass,
            energy_mode: EnergyMode::AbsTorque,
            combiner: Combiner::PeGrad,
            seed: 0,
            total_steps: 1,
            steps_done: 1,
            status: RunStatus::Ok,
            failure: None,
            final_eval: Some(EvalSummary::from_episodes(&[ret], &[energy])),
            best: None,
            actor_updates: 0,
            projected_fraction: None,
            mean_beta_scale: None,
            clamped_actions: 0,
        }
    }

    #[test]
    fn pareto_dominance() {
        let s = vec![
            summary("a", 10.0, 5.0),
            summary("a", 12.0, 7.0),
            summary("b", 10.0, 8.0),
            summary("c", 5.0, 1.0),
        ];
        let p = pareto_points(&s);
        assert_eq!(p.len(), 3);
        assert_eq!(p[0].return_mean, 11.0);
        assert_eq!(p[0].seed_returns, vec![10.0, 12.0]);
        assert!(p[0].nondominated);
        assert!(!p[1].nondominated);
        assert!(p[2].nondominated);
    }

    #[test]
    fn sweep_expands_combiners_times_seeds() {
        let mut base = RunConfig::from_toml("env = \"pointmass\"\nseeds = [0, 1, 2]").unwrap();
        base.algorithm = Algorithm::Ppo;
        let combos: Vec<Combiner> = [0.001, 0.01, 0.1, 0.5]
            .iter()
            .map(|&lambda| Combiner::Scalarized { lambda })
            .chain([Combiner::PeGrad, Combiner::PcGradPlus])
            .collect();
        let jobs = sweep_jobs(&base, &combos);
        assert_eq!(jobs.len(), 18);
        let dirs: std::collections::BTreeSet<String> =
            jobs.iter().map(|(c, s)| run_dir_name(&run_label(c), *s)).collect();
        assert_eq!(dirs.len(), 18);
    }
}
