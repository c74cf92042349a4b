//! Paired benchmark of the two inference engines.
//!
//! [`BenchConfig`] fixes the operating point, priors, budgets and the
//! scenario table. Every record is reproducible from the master seed:
//! realization `r` of scenario `k` is simulated from
//! [`record_seed`]`(seed, k, r)`, and both engines see the same series.

pub mod config;
pub mod ppc;
pub mod report;

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{BenchConfig, Budgets, McmcBudget, ScenarioSpec};
pub use report::{AccuracyRow, BenchmarkReport, CostSummary, EngineRun};

use crate::degradation::LatentTrajectory;
use crate::error::{Error, Result};
use crate::mcmc::run_mcmc;
use crate::metrics::score_param;
use crate::npe::train::generate_training_set;
use crate::npe::{infer, train, TrainedPosterior};
use crate::observation::{simulate, write_record, ObservationSeries, RecordMetadata, RECORD_FORMAT};
use crate::posterior::PosteriorEnsemble;
use crate::prior::PARAM_NAMES;
use crate::rng::{derive_seed, stream};

const TRAINING_SET_SALT: u64 = 1;
const TRAINING_INIT_SALT: u64 = 2;
const RECORD_SALT: u64 = 100;
const SBI_SALT: u64 = 200;
const MCMC_SALT: u64 = 300;

pub const MANIFEST_FORMAT: &str = "hxdiag-manifest/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Mcmc,
    Sbi,
}

impl Engine {
    pub fn label(self) -> &'static str {
        match self {
            Engine::Mcmc => "mcmc",
            Engine::Sbi => "sbi",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mcmc" => Some(Engine::Mcmc),
            "sbi" | "npe" => Some(Engine::Sbi),
            _ => None,
        }
    }
}

/// Seed of realization `r` of scenario index `k`.
pub fn record_seed(seed: u64, k: usize, r: usize) -> u64 {
    derive_seed(derive_seed(seed, RECORD_SALT + k as u64), r as u64)
}

fn engine_seed(seed: u64, engine: Engine, k: usize, r: usize) -> u64 {
    let salt = match engine {
        Engine::Mcmc => MCMC_SALT,
        Engine::Sbi => SBI_SALT,
    };
    derive_seed(derive_seed(seed, salt + k as u64), r as u64)
}

pub fn training_set_seed(seed: u64) -> u64 {
    derive_seed(seed, TRAINING_SET_SALT)
}

/// Simulate realization `r` of scenario `k`.
pub fn simulate_record(cfg: &BenchConfig, k: usize, r: usize) -> Result<(LatentTrajectory, ObservationSeries, RecordMetadata)> {
    let sc = &cfg.scenarios[k];
    let theta = sc.theta(&cfg.prior);
    let seed = record_seed(cfg.seed, k, r);
    let (traj, obs) = simulate(&theta, &cfg.conditions, &mut stream(seed, 0))?;
    let meta = RecordMetadata {
        format: RECORD_FORMAT.into(),
        theta,
        seed,
        conditions: cfg.conditions.clone(),
        scenario: Some(sc.name.clone()),
    };
    Ok((traj, obs, meta))
}

/// An output file and what it holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub description: String,
}

/// Listing of everything a command wrote under `--out`, with the seeds
/// needed to regenerate it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub command: String,
    pub seed: u64,
    pub seeds: Vec<(String, u64)>,
    pub artifacts: Vec<Artifact>,
}

impl Manifest {
    pub fn new(command: &str, seed: u64) -> Self {
        Self {
            format: MANIFEST_FORMAT.into(),
            command: command.into(),
            seed,
            seeds: Vec::new(),
            artifacts: Vec::new(),
        }
    }

    pub fn add(&mut self, out: &Path, path: &Path, description: &str) {
        let rel = path.strip_prefix(out).unwrap_or(path);
        self.artifacts.push(Artifact {
            path: rel.to_string_lossy().replace('\\', "/"),
            description: description.into(),
        });
    }

    /// Write `manifest.json` into `out`.
    pub fn write(&self, out: &Path) -> Result<PathBuf> {
        let path = out.join("manifest.json");
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(&path, text)?;
        Ok(path)
    }
}

/// Write `n_realizations` records per selected scenario under
/// `out/data/<scenario>/`, each as `rNNNN.csv` (sensor channels),
/// `rNNNN.json` (ground truth) and `rNNNN_latent.csv` (true latent path).
pub fn gen_data(cfg: &BenchConfig, scenarios: &[usize], out: &Path, manifest: &mut Manifest) -> Result<()> {
    for &k in scenarios {
        let sc = &cfg.scenarios[k];
        let dir = out.join("data").join(&sc.name);
        std::fs::create_dir_all(&dir)?;
        for r in 0..sc.n_realizations {
            let (traj, obs, meta) = simulate_record(cfg, k, r)?;
            let stem = dir.join(format!("r{r:04}"));
            let (csv, json) = write_record(&stem, &obs, &meta)?;
            let latent = dir.join(format!("r{r:04}_latent.csv"));
            ppc::write_latent_csv(&traj, &latent)?;
            manifest.add(out, &csv, "sensor record");
            manifest.add(out, &json, "record ground truth");
            manifest.add(out, &latent, "true latent trajectory");
        }
        manifest
            .seeds
            .push((format!("records/{}", sc.name), derive_seed(cfg.seed, RECORD_SALT + k as u64)));
    }
    Ok(())
}

/// Simulate the training set and train the amortized posterior.
pub fn train_npe(cfg: &BenchConfig) -> Result<(TrainedPosterior, crate::npe::train::TrainingSet)> {
    let start = Instant::now();
    let ts = generate_training_set(
        cfg.budgets.npe_simulations,
        &cfg.prior,
        &cfg.conditions,
        training_set_seed(cfg.seed),
    )?;
    let generation_time = start.elapsed().as_secs_f64();
    let train_cfg = crate::npe::train::TrainConfig {
        seed: derive_seed(cfg.seed ^ cfg.training.seed, TRAINING_INIT_SALT),
        ..cfg.training.clone()
    };
    let mut tp = train(&ts, &cfg.prior, &train_cfg)?;
    tp.metadata.generation_time = generation_time;
    Ok((tp, ts))
}

fn run_engine(
    cfg: &BenchConfig,
    tp: Option<&TrainedPosterior>,
    engine: Engine,
    k: usize,
    r: usize,
    obs: &ObservationSeries,
) -> Result<PosteriorEnsemble> {
    let seed = engine_seed(cfg.seed, engine, k, r);
    match engine {
        Engine::Mcmc => run_mcmc(obs, &cfg.conditions, &cfg.prior, &cfg.budgets.mcmc.chain_config(seed)),
        Engine::Sbi => {
            let tp = tp.ok_or_else(|| Error::Config("the sbi engine needs a trained checkpoint".into()))?;
            infer(tp, obs, cfg.budgets.npe_posterior_samples, seed)
        }
    }
}

/// Run every selected engine on every realization of the selected scenarios
/// and score the results. Engine failures are recorded per record and do
/// not stop the run.
pub fn run_benchmark(
    cfg: &BenchConfig,
    scenarios: &[usize],
    engines: &[Engine],
    tp: Option<&TrainedPosterior>,
) -> Result<BenchmarkReport> {
    cfg.validate()?;
    if engines.contains(&Engine::Sbi) && tp.is_none() {
        return Err(Error::Config("the sbi engine needs a trained checkpoint".into()));
    }
    let jobs: Vec<(usize, usize)> = scenarios
        .iter()
        .flat_map(|&k| (0..cfg.scenarios[k].n_realizations).map(move |r| (k, r)))
        .collect();
    let runs: Vec<Vec<EngineRun>> = jobs
        .par_iter()
        .map(|&(k, r)| paired_run(cfg, tp, engines, k, r))
        .collect::<Result<_>>()?;
    let runs: Vec<EngineRun> = runs.into_iter().flatten().collect();
    Ok(BenchmarkReport::assemble(cfg, scenarios, engines, runs, tp))
}

fn paired_run(
    cfg: &BenchConfig,
    tp: Option<&TrainedPosterior>,
    engines: &[Engine],
    k: usize,
    r: usize,
) -> Result<Vec<EngineRun>> {
    let sc = &cfg.scenarios[k];
    let (_, obs, meta) = simulate_record(cfg, k, r)?;
    let truth = meta.theta.continuous();
    let results: Vec<(Engine, Result<PosteriorEnsemble>)> = engines
        .iter()
        .map(|&e| (e, run_engine(cfg, tp, e, k, r, &obs)))
        .collect();
    let reference = results.iter().find_map(|(e, res)| match (e, res) {
        (Engine::Mcmc, Ok(ens)) => Some(ens),
        _ => None,
    });
    let mut out = Vec::with_capacity(results.len());
    for (engine, res) in &results {
        let run = match res {
            Ok(ens) => {
                let mut scores = Vec::new();
                for &p in &sc.active_params() {
                    let samples = ens.param(p);
                    let reference = match engine {
                        Engine::Sbi => reference.map(|m| m.param(p)),
                        Engine::Mcmc => None,
                    };
                    scores.push(score_param(PARAM_NAMES[p], &samples, truth[p], reference.as_deref())?);
                }
                let predicted = ens.predicted_mode();
                EngineRun {
                    scenario: sc.name.clone(),
                    realization: r,
                    engine: *engine,
                    true_mode: sc.mode,
                    predicted_mode: Some(predicted),
                    wall_time: ens.wall_time,
                    simulator_calls: ens.simulator_call_count,
                    max_r_hat: ens
                        .diagnostics
                        .iter()
                        .filter_map(|d| d.r_hat)
                        .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v)))),
                    scores,
                    error: None,
                }
            }
            Err(e) => {
                log::warn!("{} failed on {} realization {r}: {e}", engine.label(), sc.name);
                EngineRun {
                    scenario: sc.name.clone(),
                    realization: r,
                    engine: *engine,
                    true_mode: sc.mode,
                    predicted_mode: None,
                    wall_time: 0.0,
                    simulator_calls: 0,
                    max_r_hat: None,
                    scores: Vec::new(),
                    error: Some(e.to_string()),
                }
            }
        };
        out.push(run);
    }
    Ok(out)
}
