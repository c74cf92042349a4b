//! Training-set generation and joint training of the flow and classifier.

use std::io::{Read, Write};
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::classifier::ModeClassifier;
use super::flow::{SplineFlow, DIM};
use crate::error::{Error, Result};
use crate::observation::{format_f64, simulate, OperatingConditions};
use crate::prior::{sample_prior, to_unconstrained, PriorSpec};
use crate::rng::stream;
use crate::summaries::{column_names, summarize, SUMMARY_DIM};

pub const THETA_COLUMNS: [&str; DIM] = ["x_tau", "x_beta_f", "x_beta_l", "x_lambda"];
pub const LABEL_COLUMN: &str = "label";

/// Rows held out for validation: the last tenth of the set.
pub fn validation_len(n: usize) -> usize {
    (n / 10).max(1)
}

/// Per-column affine standardization. Constant columns keep unit scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub summary_mean: Vec<f64>,
    pub summary_std: Vec<f64>,
    pub theta_mean: [f64; DIM],
    pub theta_std: [f64; DIM],
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    (mean, if std > 0.0 { std } else { 1.0 })
}

impl Standardizer {
    pub fn fit(theta_t: &[[f64; DIM]], summaries: &[[f64; SUMMARY_DIM]]) -> Self {
        let (summary_mean, summary_std) = (0..SUMMARY_DIM)
            .map(|j| mean_std(summaries.iter().map(move |s| s[j])))
            .unzip();
        let cols: [(f64, f64); DIM] = std::array::from_fn(|j| mean_std(theta_t.iter().map(move |x| x[j])));
        Self {
            summary_mean,
            summary_std,
            theta_mean: cols.map(|c| c.0),
            theta_std: cols.map(|c| c.1),
        }
    }

    pub fn summary(&self, s: &[f64]) -> Vec<f64> {
        s.iter()
            .zip(self.summary_mean.iter().zip(&self.summary_std))
            .map(|(v, (m, sd))| (v - m) / sd)
            .collect()
    }

    pub fn theta(&self, x: &[f64; DIM]) -> [f64; DIM] {
        std::array::from_fn(|j| (x[j] - self.theta_mean[j]) / self.theta_std[j])
    }

    pub fn theta_inverse(&self, z: &[f64; DIM]) -> [f64; DIM] {
        std::array::from_fn(|j| self.theta_mean[j] + self.theta_std[j] * z[j])
    }

    /// `ln |d standardized / d raw|` of the parameter map.
    pub fn theta_log_jacobian(&self) -> f64 {
        -self.theta_std.iter().map(|s| s.ln()).sum::<f64>()
    }
}

/// Simulated `(transformed theta, mode label, summary)` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub theta_t: Vec<[f64; DIM]>,
    pub labels: Vec<usize>,
    pub summaries: Vec<[f64; SUMMARY_DIM]>,
    /// Fitted on the training split only.
    pub standardizer: Standardizer,
}

/// Training rows mapped through the standardizer.
#[derive(Debug, Clone)]
pub struct StandardizedRows {
    pub theta: Vec<[f64; DIM]>,
    pub summary: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl TrainingSet {
    pub fn new(theta_t: Vec<[f64; DIM]>, labels: Vec<usize>, summaries: Vec<[f64; SUMMARY_DIM]>) -> Result<Self> {
        let n = theta_t.len();
        if labels.len() != n || summaries.len() != n {
            return Err(Error::DimensionMismatch {
                what: "training set columns",
                expected: n,
                actual: labels.len().min(summaries.len()),
            });
        }
        if n < 2 {
            return Err(Error::Degenerate(format!("training set needs at least 2 rows, got {n}")));
        }
        if theta_t.iter().flatten().chain(summaries.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::Degenerate("non-finite entry in training set".into()));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= 4) {
            return Err(Error::Domain(format!("mode label {l} out of range")));
        }
        let n_train = n - validation_len(n);
        let standardizer = Standardizer::fit(&theta_t[..n_train], &summaries[..n_train]);
        Ok(Self {
            theta_t,
            labels,
            summaries,
            standardizer,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_train(&self) -> usize {
        self.len() - validation_len(self.len())
    }

    pub fn standardized(&self) -> StandardizedRows {
        StandardizedRows {
            theta: self.theta_t.iter().map(|x| self.standardizer.theta(x)).collect(),
            summary: self.summaries.iter().map(|s| self.standardizer.summary(s)).collect(),
            labels: self.labels.clone(),
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = column_names();
        header.extend(THETA_COLUMNS.iter().map(|s| s.to_string()));
        header.push(LABEL_COLUMN.into());
        w.write_record(&header)?;
        for i in 0..self.len() {
            let row = self.summaries[i]
                .iter()
                .chain(&self.theta_t[i])
                .map(|&v| format_f64(v))
                .chain(std::iter::once(self.labels[i].to_string()));
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let mut header = column_names();
        header.extend(THETA_COLUMNS.iter().map(|s| s.to_string()));
        header.push(LABEL_COLUMN.into());
        if r.headers()?.iter().ne(header.iter().map(String::as_str)) {
            return Err(Error::Format("unexpected training-set header".into()));
        }
        let (mut theta_t, mut labels, mut summaries) = (Vec::new(), Vec::new(), Vec::new());
        for rec in r.records() {
            let rec = rec?;
            if rec.len() != header.len() {
                return Err(Error::Format("short training-set row".into()));
            }
            let num = |i: usize| -> Result<f64> {
                rec[i]
                    .parse()
                    .map_err(|e| Error::Format(format!("bad number {:?}: {e}", &rec[i])))
            };
            let mut s = [0.0; SUMMARY_DIM];
            for (j, v) in s.iter_mut().enumerate() {
                *v = num(j)?;
            }
            let mut x = [0.0; DIM];
            for (j, v) in x.iter_mut().enumerate() {
                *v = num(SUMMARY_DIM + j)?;
            }
            let label = rec[SUMMARY_DIM + DIM]
                .parse()
                .map_err(|e| Error::Format(format!("bad label: {e}")))?;
            summaries.push(s);
            theta_t.push(x);
            labels.push(label);
        }
        Self::new(theta_t, labels, summaries)
    }
}

/// `n` prior draws pushed through the simulator and summarized. Row `i` uses
/// its own random stream, so the set does not depend on thread scheduling.
pub fn generate_training_set(n: usize, spec: &PriorSpec, cond: &OperatingConditions, seed: u64) -> Result<TrainingSet> {
    if n < 100 {
        return Err(Error::Domain(format!("training set size must be >= 100, got {n}")));
    }
    spec.validate()?;
    cond.validate()?;
    if spec.horizon != cond.horizon {
        return Err(Error::Config(format!(
            "prior horizon {} differs from operating horizon {}",
            spec.horizon, cond.horizon
        )));
    }
    let rows: Vec<([f64; DIM], usize, [f64; SUMMARY_DIM])> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, i as u64);
            let theta = sample_prior(spec, &mut rng);
            let (_, obs) = simulate(&theta, cond, &mut rng)?;
            let s = summarize(&obs)?;
            Ok((to_unconstrained(&theta.params, spec), theta.mode.index(), s.0))
        })
        .collect::<Result<_>>()?;
    let (mut theta_t, mut labels, mut summaries) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for (x, l, s) in rows {
        theta_t.push(x);
        labels.push(l);
        summaries.push(s);
    }
    TrainingSet::new(theta_t, labels, summaries)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    pub early_stopping: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            batch_size: 256,
            patience: 20,
            max_epochs: 1000,
            early_stopping: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config(format!("invalid training config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    /// Epochs actually run.
    pub epochs: usize,
    /// Epoch (1-based) of the returned checkpoint.
    pub best_epoch: usize,
    pub best_validation_loss: f64,
    /// Mean flow log-density of the validation rows at the returned
    /// checkpoint, in standardized coordinates.
    pub final_validation_log_prob: f64,
    /// Seconds spent training, excluding training-set generation.
    pub wall_time: f64,
    /// Seconds spent simulating the training set, when known.
    #[serde(default)]
    pub generation_time: f64,
    pub simulation_budget: usize,
    pub train_loss_history: Vec<f64>,
    pub validation_loss_history: Vec<f64>,
}

/// The flow and classifier trained together on one shared loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Networks {
    pub flow: SplineFlow,
    pub classifier: ModeClassifier,
}

impl Networks {
    pub fn new(context_dim: usize, seed: u64) -> Self {
        let mut rng = stream(seed, 0);
        let flow = SplineFlow::new(context_dim, &mut rng);
        let classifier = ModeClassifier::new(context_dim, &mut rng);
        Self { flow, classifier }
    }

    pub fn zero_grads(&self) -> Vec<Vec<f64>> {
        self.params().map(|p| vec![0.0; p.len()]).collect()
    }

    pub fn params(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.flow
            .layers
            .iter()
            .map(|l| &l.net.params)
            .chain(std::iter::once(&self.classifier.net.params))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        self.flow
            .layers
            .iter_mut()
            .map(|l| &mut l.net.params)
            .chain(std::iter::once(&mut self.classifier.net.params))
    }

    /// Mean over `rows` of `-ln q(theta | s) - ln p(label | s)`.
    pub fn loss(&self, data: &StandardizedRows, rows: &[usize]) -> f64 {
        let total: f64 = rows
            .iter()
            .map(|&i| {
                -self.flow.log_prob(&data.theta[i], &data.summary[i])
                    + self.classifier.cross_entropy(&data.summary[i], data.labels[i])
            })
            .sum();
        total / rows.len() as f64
    }

    /// [`Networks::loss`] with its gradient accumulated into `grads`
    /// (flow layers first, classifier last).
    pub fn loss_and_grad(&self, data: &StandardizedRows, rows: &[usize], grads: &mut [Vec<f64>]) -> f64 {
        let w = 1.0 / rows.len() as f64;
        let (flow_grads, clf_grad) = grads.split_at_mut(self.flow.layers.len());
        rows.iter()
            .map(|&i| {
                let s = &data.summary[i];
                self.flow.nll_backward(&data.theta[i], s, w, flow_grads)
                    + self.classifier.cross_entropy_backward(s, data.labels[i], w, &mut clf_grad[0])
            })
            .sum()
    }

    pub fn mean_flow_log_prob(&self, data: &StandardizedRows, rows: &[usize]) -> f64 {
        rows.iter()
            .map(|&i| self.flow.log_prob(&data.theta[i], &data.summary[i]))
            .sum::<f64>()
            / rows.len() as f64
    }
}

/// Adaptive-moment optimizer over a list of parameter vectors.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64, shapes: &[Vec<f64>]) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: shapes.iter().map(|g| vec![0.0; g.len()]).collect(),
            v: shapes.iter().map(|g| vec![0.0; g.len()]).collect(),
        }
    }

    pub fn step<'a>(&mut self, params: impl Iterator<Item = &'a mut Vec<f64>>, grads: &[Vec<f64>]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (k, p) in params.enumerate() {
            let (m, v, g) = (&mut self.m[k], &mut self.v[k], &grads[k]);
            for j in 0..p.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                p[j] -= self.learning_rate * (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
            }
        }
    }
}

/// Minimize the joint loss with minibatch Adam; returns the networks from
/// the epoch with the lowest validation loss.
pub fn train_networks(ts: &TrainingSet, cfg: &TrainConfig) -> Result<(Networks, TrainingMetadata)> {
    cfg.validate()?;
    let start = Instant::now();
    let data = ts.standardized();
    let n_train = ts.n_train();
    let val: Vec<usize> = (n_train..ts.len()).collect();
    let mut order: Vec<usize> = (0..n_train).collect();

    let mut nets = Networks::new(SUMMARY_DIM, cfg.seed);
    let mut grads = nets.zero_grads();
    let mut adam = Adam::new(cfg.learning_rate, &grads);
    let mut shuffle_rng = stream(cfg.seed, 1);

    let mut best = nets.clone();
    let mut best_loss = nets.loss(&data, &val);
    let mut best_epoch = 0;
    let mut train_hist = Vec::new();
    let mut val_hist = Vec::new();
    let mut epoch = 0;
    while epoch < cfg.max_epochs {
        epoch += 1;
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grads.iter_mut().for_each(|g| g.fill(0.0));
            let loss = nets.loss_and_grad(&data, batch, &mut grads);
            if !loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(Error::TrainingDiverged(format!("non-finite loss at epoch {epoch}")));
            }
            total += loss * batch.len() as f64;
            adam.step(nets.params_mut(), &grads);
        }
        let train_loss = total / n_train as f64;
        let val_loss = nets.loss(&data, &val);
        if !val_loss.is_finite() {
            return Err(Error::TrainingDiverged(format!("non-finite validation loss at epoch {epoch}")));
        }
        log::debug!("epoch {epoch}: train {train_loss:.4} val {val_loss:.4}");
        train_hist.push(train_loss);
        val_hist.push(val_loss);
        if val_loss < best_loss {
            best_loss = val_loss;
            best_epoch = epoch;
            best = nets.clone();
        } else if cfg.early_stopping && epoch - best_epoch >= cfg.patience {
            break;
        }
    }
    let meta = TrainingMetadata {
        epochs: epoch,
        best_epoch,
        best_validation_loss: best_loss,
        final_validation_log_prob: best.mean_flow_log_prob(&data, &val),
        wall_time: start.elapsed().as_secs_f64(),
        generation_time: 0.0,
        simulation_budget: ts.len(),
        train_loss_history: train_hist,
        validation_loss_history: val_hist,
    };
    Ok((best, meta))
}
