//! Posterior sample sets produced by either inference engine.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::degradation::FailureMode;
use crate::error::{Error, Result};
use crate::observation::format_f64;
use crate::prior::{DegradationTheta, PriorSpec};

/// Convergence summary of one continuous parameter across chains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDiagnostics {
    pub name: String,
    /// `None` when the statistic is undefined (e.g. a chain never moved).
    pub r_hat: Option<f64>,
    pub ess: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorEnsemble {
    pub thetas: Vec<DegradationTheta>,
    /// Chain index of each draw; all zero for the amortized engine.
    pub chain_ids: Vec<usize>,
    pub mode_counts: [usize; 4],
    /// Classifier probabilities, when the engine produces them.
    pub mode_probabilities: Option<[f64; 4]>,
    pub diagnostics: Vec<ParamDiagnostics>,
    /// Seconds spent inside the inference call.
    pub wall_time: f64,
    pub simulator_call_count: u64,
}

pub const SAMPLES_HEADER: [&str; 6] = ["chain", "mode", "tau", "beta_f", "beta_l", "lambda"];

impl PosteriorEnsemble {
    pub fn from_draws(
        thetas: Vec<DegradationTheta>,
        chain_ids: Vec<usize>,
        mode_probabilities: Option<[f64; 4]>,
    ) -> Self {
        let mut mode_counts = [0usize; 4];
        for t in &thetas {
            mode_counts[t.mode.index()] += 1;
        }
        Self {
            thetas,
            chain_ids,
            mode_counts,
            mode_probabilities,
            diagnostics: Vec::new(),
            wall_time: 0.0,
            simulator_call_count: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }

    /// Point prediction of the failure mode: argmax of the classifier
    /// probabilities when present, otherwise the most frequent sampled label.
    pub fn predicted_mode(&self) -> FailureMode {
        let argmax = |v: &[f64]| {
            v.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &x)| {
                    if x > best.1 {
                        (i, x)
                    } else {
                        best
                    }
                })
                .0
        };
        let idx = match self.mode_probabilities {
            Some(p) => argmax(&p),
            None => argmax(&self.mode_counts.map(|c| c as f64)),
        };
        FailureMode::from_index(idx).expect("index < 4")
    }

    /// Samples of continuous parameter `k` (0 = tau, 1 = beta_f, 2 = beta_l, 3 = lambda).
    pub fn param(&self, k: usize) -> Vec<f64> {
        self.thetas.iter().map(|t| t.continuous()[k]).collect()
    }

    pub fn write_samples_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(SAMPLES_HEADER)?;
        for (t, c) in self.thetas.iter().zip(&self.chain_ids) {
            let p = t.continuous();
            w.write_record([
                c.to_string(),
                t.mode.label().to_string(),
                format_f64(p[0]),
                format_f64(p[1]),
                format_f64(p[2]),
                format_f64(p[3]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Read a samples file. Sharpness constants come from `spec`.
    pub fn read_samples_csv<R: Read>(reader: R, spec: &PriorSpec) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        if r.headers()?.iter().collect::<Vec<_>>() != SAMPLES_HEADER {
            return Err(Error::Format("unexpected samples header".into()));
        }
        let mut thetas = Vec::new();
        let mut chains = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let num = |i: usize| -> Result<f64> {
                rec.get(i)
                    .ok_or_else(|| Error::Format("short samples row".into()))?
                    .parse()
                    .map_err(|e| Error::Format(format!("bad number: {e}")))
            };
            let chain = rec[0]
                .parse()
                .map_err(|e| Error::Format(format!("bad chain id: {e}")))?;
            let mode = FailureMode::parse(&rec[1])
                .ok_or_else(|| Error::Format(format!("bad mode label {}", &rec[1])))?;
            thetas.push(DegradationTheta::new(
                mode,
                spec.params(num(2)?, num(3)?, num(4)?, num(5)?),
            ));
            chains.push(chain);
        }
        Ok(Self::from_draws(thetas, chains, None))
    }
}
