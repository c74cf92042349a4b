//! Benchmark results and their CSV form.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BenchConfig, Engine, Manifest};
use crate::degradation::FailureMode;
use crate::error::Result;
use crate::metrics::ParamScore;
use crate::npe::TrainedPosterior;
use crate::observation::format_f64;

pub const RUNS_HEADER: [&str; 10] = [
    "scenario",
    "realization",
    "engine",
    "true_mode",
    "predicted_mode",
    "correct",
    "wall_time",
    "simulator_calls",
    "max_r_hat",
    "error",
];
pub const SCORES_HEADER: [&str; 11] = [
    "scenario",
    "realization",
    "engine",
    "param",
    "truth",
    "median",
    "crps",
    "covered_50",
    "covered_90",
    "wasserstein_normalized",
    "wasserstein_unnormalized",
];
pub const ACCURACY_HEADER: [&str; 7] = [
    "scenario",
    "mode",
    "n",
    "mcmc_accuracy",
    "sbi_accuracy",
    "mcmc_failed",
    "sbi_failed",
];
pub const COST_HEADER: [&str; 2] = ["metric", "value"];
pub const BREAK_EVEN_HEADER: [&str; 5] = ["calls", "sbi_simulations", "mcmc_simulations", "sbi_seconds", "mcmc_seconds"];
pub const MEDIANS_HEADER: [&str; 6] = ["scenario", "realization", "param", "truth", "mcmc_median", "sbi_median"];

/// One engine applied to one record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineRun {
    pub scenario: String,
    pub realization: usize,
    pub engine: Engine,
    pub true_mode: FailureMode,
    /// `None` when the engine failed.
    pub predicted_mode: Option<FailureMode>,
    pub wall_time: f64,
    pub simulator_calls: u64,
    pub max_r_hat: Option<f64>,
    pub scores: Vec<ParamScore>,
    pub error: Option<String>,
}

impl EngineRun {
    pub fn correct(&self) -> Option<bool> {
        self.predicted_mode.map(|m| m == self.true_mode)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub scenario: String,
    pub mode: FailureMode,
    pub n: usize,
    /// Fraction correct among records the engine completed.
    pub mcmc_accuracy: Option<f64>,
    pub sbi_accuracy: Option<f64>,
    pub mcmc_failed: usize,
    pub sbi_failed: usize,
}

impl AccuracyRow {
    /// `1 - accuracy`; the false-positive rate for a healthy scenario.
    pub fn error_rate(&self, engine: Engine) -> Option<f64> {
        match engine {
            Engine::Mcmc => self.mcmc_accuracy,
            Engine::Sbi => self.sbi_accuracy,
        }
        .map(|a| 1.0 - a)
    }
}

/// Per-call cost of each engine and the amortization break-even.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CostSummary {
    pub mcmc_simulator_calls_per_inference: Option<f64>,
    pub sbi_simulator_calls_per_inference: Option<f64>,
    pub sbi_training_simulations: Option<usize>,
    pub mcmc_time_per_call: Option<f64>,
    pub sbi_time_per_call: Option<f64>,
    /// Training-set simulation plus network training, seconds.
    pub sbi_training_time: Option<f64>,
    pub speedup: Option<f64>,
    /// Break-even in simulator calls: the smallest number of inference calls
    /// after which SBI's training simulations plus per-call simulations fall
    /// below MCMC's per-call simulations.
    pub break_even_calls: Option<u64>,
    /// The same break-even measured in wall time (machine dependent).
    pub break_even_calls_wall_time: Option<u64>,
}

/// Smallest `k >= 1` with `fixed + k * per_call < k * reference`.
pub fn break_even(fixed: f64, per_call: f64, reference: f64) -> Option<u64> {
    let gain = reference - per_call;
    if !(gain > 0.0) || !fixed.is_finite() {
        return None;
    }
    let k = (fixed / gain).floor() + 1.0;
    Some(k.max(1.0) as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub runs: Vec<EngineRun>,
    pub accuracy: Vec<AccuracyRow>,
    pub cost: CostSummary,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn opt(v: Option<f64>) -> String {
    v.map(format_f64).unwrap_or_default()
}

impl BenchmarkReport {
    pub fn assemble(
        cfg: &BenchConfig,
        scenarios: &[usize],
        engines: &[Engine],
        runs: Vec<EngineRun>,
        tp: Option<&TrainedPosterior>,
    ) -> Self {
        let accuracy = scenarios
            .iter()
            .map(|&k| {
                let sc = &cfg.scenarios[k];
                let stats = |engine: Engine| {
                    let of: Vec<&EngineRun> = runs
                        .iter()
                        .filter(|r| r.scenario == sc.name && r.engine == engine)
                        .collect();
                    let done: Vec<bool> = of.iter().filter_map(|r| r.correct()).collect();
                    let acc = (engines.contains(&engine) && !done.is_empty())
                        .then(|| done.iter().filter(|&&c| c).count() as f64 / done.len() as f64);
                    (acc, of.len() - done.len())
                };
                let (mcmc_accuracy, mcmc_failed) = stats(Engine::Mcmc);
                let (sbi_accuracy, sbi_failed) = stats(Engine::Sbi);
                AccuracyRow {
                    scenario: sc.name.clone(),
                    mode: sc.mode,
                    n: sc.n_realizations,
                    mcmc_accuracy,
                    sbi_accuracy,
                    mcmc_failed,
                    sbi_failed,
                }
            })
            .collect();

        let per_engine = |engine: Engine, f: fn(&EngineRun) -> f64| -> Vec<f64> {
            runs.iter()
                .filter(|r| r.engine == engine && r.error.is_none())
                .map(f)
                .collect()
        };
        let mcmc_time = mean(&per_engine(Engine::Mcmc, |r| r.wall_time));
        let sbi_time = mean(&per_engine(Engine::Sbi, |r| r.wall_time));
        let mcmc_calls = mean(&per_engine(Engine::Mcmc, |r| r.simulator_calls as f64));
        let sbi_calls = mean(&per_engine(Engine::Sbi, |r| r.simulator_calls as f64));
        let train_sims = tp.map(|t| t.metadata.simulation_budget);
        let train_time = tp.map(|t| t.metadata.wall_time + t.metadata.generation_time);
        let cost = CostSummary {
            mcmc_simulator_calls_per_inference: mcmc_calls,
            sbi_simulator_calls_per_inference: sbi_calls,
            sbi_training_simulations: train_sims,
            mcmc_time_per_call: mcmc_time,
            sbi_time_per_call: sbi_time,
            sbi_training_time: train_time,
            speedup: mcmc_time.zip(sbi_time).map(|(m, s)| m / s),
            break_even_calls: match (train_sims, sbi_calls, mcmc_calls) {
                (Some(n), Some(s), Some(m)) => break_even(n as f64, s, m),
                _ => None,
            },
            break_even_calls_wall_time: match (train_time, sbi_time, mcmc_time) {
                (Some(t), Some(s), Some(m)) => break_even(t, s, m),
                _ => None,
            },
        };
        Self { runs, accuracy, cost }
    }

    pub fn accuracy_row(&self, scenario: &str) -> Option<&AccuracyRow> {
        self.accuracy.iter().find(|a| a.scenario == scenario)
    }

    /// Write the report CSVs into `out` and list them in `manifest`.
    pub fn write_csvs(&self, out: &Path, manifest: &mut Manifest) -> Result<()> {
        let open = |name: &str| -> Result<csv::Writer<BufWriter<File>>> {
            Ok(csv::Writer::from_writer(BufWriter::new(File::create(out.join(name))?)))
        };

        let mut w = open("runs.csv")?;
        w.write_record(RUNS_HEADER)?;
        for r in &self.runs {
            w.write_record([
                r.scenario.clone(),
                r.realization.to_string(),
                r.engine.label().into(),
                r.true_mode.label().into(),
                r.predicted_mode.map(|m| m.label().to_string()).unwrap_or_default(),
                r.correct().map(|c| c.to_string()).unwrap_or_default(),
                format_f64(r.wall_time),
                r.simulator_calls.to_string(),
                opt(r.max_r_hat),
                r.error.clone().unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        manifest.add(out, &out.join("runs.csv"), "per-record engine outcomes, timings and call counts");

        let mut w = open("scores.csv")?;
        w.write_record(SCORES_HEADER)?;
        for r in &self.runs {
            for s in &r.scores {
                w.write_record([
                    r.scenario.clone(),
                    r.realization.to_string(),
                    r.engine.label().into(),
                    s.name.clone(),
                    format_f64(s.truth),
                    format_f64(s.median),
                    format_f64(s.crps),
                    s.covered_50.to_string(),
                    s.covered_90.to_string(),
                    opt(s.wasserstein_normalized),
                    s.wasserstein_unnormalized.to_string(),
                ])?;
            }
        }
        w.flush()?;
        manifest.add(out, &out.join("scores.csv"), "CRPS, coverage and SBI-vs-MCMC Wasserstein per parameter");

        let mut w = open("accuracy.csv")?;
        w.write_record(ACCURACY_HEADER)?;
        for a in &self.accuracy {
            w.write_record([
                a.scenario.clone(),
                a.mode.label().into(),
                a.n.to_string(),
                opt(a.mcmc_accuracy),
                opt(a.sbi_accuracy),
                a.mcmc_failed.to_string(),
                a.sbi_failed.to_string(),
            ])?;
        }
        w.flush()?;
        manifest.add(out, &out.join("accuracy.csv"), "failure-mode accuracy per scenario and engine");

        let c = &self.cost;
        let mut w = open("cost.csv")?;
        w.write_record(COST_HEADER)?;
        let rows: [(&str, String); 9] = [
            ("mcmc_simulator_calls_per_inference", opt(c.mcmc_simulator_calls_per_inference)),
            ("sbi_simulator_calls_per_inference", opt(c.sbi_simulator_calls_per_inference)),
            ("sbi_training_simulations", c.sbi_training_simulations.map(|v| v.to_string()).unwrap_or_default()),
            ("mcmc_time_per_call", opt(c.mcmc_time_per_call)),
            ("sbi_time_per_call", opt(c.sbi_time_per_call)),
            ("sbi_training_time", opt(c.sbi_training_time)),
            ("speedup", opt(c.speedup)),
            ("break_even_calls", c.break_even_calls.map(|v| v.to_string()).unwrap_or_default()),
            (
                "break_even_calls_wall_time",
                c.break_even_calls_wall_time.map(|v| v.to_string()).unwrap_or_default(),
            ),
        ];
        for (k, v) in rows {
            w.write_record([k.to_string(), v])?;
        }
        w.flush()?;
        manifest.add(out, &out.join("cost.csv"), "per-call cost, speedup and break-even");

        // scatter pairs of posterior medians, one row per record and parameter
        let mut pairs: BTreeMap<(String, usize, String), (f64, Option<f64>, Option<f64>)> = BTreeMap::new();
        for r in &self.runs {
            for s in &r.scores {
                let e = pairs
                    .entry((r.scenario.clone(), r.realization, s.name.clone()))
                    .or_insert((s.truth, None, None));
                match r.engine {
                    Engine::Mcmc => e.1 = Some(s.median),
                    Engine::Sbi => e.2 = Some(s.median),
                }
            }
        }
        let mut w = open("medians.csv")?;
        w.write_record(MEDIANS_HEADER)?;
        for ((scenario, r, param), (truth, m, s)) in pairs {
            w.write_record([scenario, r.to_string(), param, format_f64(truth), opt(m), opt(s)])?;
        }
        w.flush()?;
        manifest.add(out, &out.join("medians.csv"), "posterior-median pairs for engine scatter plots");

        if let (Some(n), Some(sc), Some(mc)) = (
            c.sbi_training_simulations,
            c.sbi_simulator_calls_per_inference,
            c.mcmc_simulator_calls_per_inference,
        ) {
            let horizon = c.break_even_calls_wall_time.max(c.break_even_calls).unwrap_or(10).max(10) * 2;
            let mut w = open("break_even.csv")?;
            w.write_record(BREAK_EVEN_HEADER)?;
            for k in 1..=horizon {
                let kf = k as f64;
                let times = c.sbi_training_time.zip(c.sbi_time_per_call).zip(c.mcmc_time_per_call);
                let (st, mt) = match times {
                    Some(((t0, s), m)) => (format_f64(t0 + kf * s), format_f64(kf * m)),
                    None => (String::new(), String::new()),
                };
                w.write_record([k.to_string(), format_f64(n as f64 + kf * sc), format_f64(kf * mc), st, mt])?;
            }
            w.flush()?;
            manifest.add(out, &out.join("break_even.csv"), "cumulative cost of both engines against inference calls");
        }
        Ok(())
    }

    /// Accuracy table in the study's row format.
    pub fn accuracy_table(&self) -> String {
        let pct = |v: Option<f64>| v.map(|a| format!("{:.1}%", 100.0 * a)).unwrap_or_else(|| "-".into());
        let mut s = format!("{:<16} {:<8} {:>8} {:>8}\n", "Scenario", "Mode", "MCMC", "SBI");
        for (i, a) in self.accuracy.iter().enumerate() {
            s += &format!(
                "{:<16} {:<8} {:>8} {:>8}\n",
                format!("{}: {}", i + 1, a.scenario),
                a.mode.label(),
                pct(a.mcmc_accuracy),
                pct(a.sbi_accuracy)
            );
        }
        s
    }
}
