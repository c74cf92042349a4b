//! Amortized neural posterior estimation.
//!
//! A [`train::TrainingSet`] of simulated `(theta, mode, summary)` rows trains
//! two networks on one joint loss: a conditional rational-quadratic spline
//! flow ([`flow::SplineFlow`]) over the transformed continuous parameters and
//! a softmax mode classifier ([`classifier::ModeClassifier`]). Inference
//! summarizes a record once and then only evaluates the networks, so it
//! needs no simulator calls.

pub mod classifier;
pub mod flow;
pub mod mlp;
pub mod spline;
pub mod train;

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::degradation::FailureMode;
use crate::error::{Error, Result};
use crate::observation::{simulator_calls, ObservationSeries};
use crate::posterior::PosteriorEnsemble;
use crate::prior::{from_unconstrained, PriorSpec};
use crate::rng::stream;
use crate::summaries::{summarize, SummaryVector, SUMMARY_DIM};
use classifier::{ModeClassifier, N_MODES};
use flow::{SplineFlow, DIM};
use train::{train_networks, Standardizer, TrainConfig, TrainingMetadata, TrainingSet};

pub const CHECKPOINT_FORMAT: &str = "hxdiag-npe/1";

/// Architecture constants stored with every checkpoint and checked on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub param_dim: usize,
    pub summary_dim: usize,
    pub flow_layers: usize,
    pub hidden: usize,
    pub spline_bins: usize,
    pub tail_bound: f64,
    pub masks: Vec<[bool; DIM]>,
}

impl Architecture {
    pub fn current() -> Self {
        Self {
            param_dim: DIM,
            summary_dim: SUMMARY_DIM,
            flow_layers: flow::N_LAYERS,
            hidden: flow::HIDDEN,
            spline_bins: spline::BINS,
            tail_bound: spline::TAIL_BOUND,
            masks: flow::MASKS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedPosterior {
    pub format: String,
    pub architecture: Architecture,
    pub flow: SplineFlow,
    pub classifier: ModeClassifier,
    pub standardizer: Standardizer,
    /// Prior the training set was drawn from; fixes the tau support and
    /// sharpness constants of inferred parameters.
    pub spec: PriorSpec,
    pub metadata: TrainingMetadata,
}

/// Train both networks on `ts` and package the best-validation checkpoint.
pub fn train(ts: &TrainingSet, spec: &PriorSpec, cfg: &TrainConfig) -> Result<TrainedPosterior> {
    spec.validate()?;
    let (nets, metadata) = train_networks(ts, cfg)?;
    Ok(TrainedPosterior {
        format: CHECKPOINT_FORMAT.into(),
        architecture: Architecture::current(),
        flow: nets.flow,
        classifier: nets.classifier,
        standardizer: ts.standardizer.clone(),
        spec: spec.clone(),
        metadata,
    })
}

impl TrainedPosterior {
    pub fn validate(&self) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!(
                "checkpoint format {:?}, expected {CHECKPOINT_FORMAT:?}",
                self.format
            )));
        }
        if self.architecture != Architecture::current() {
            return Err(Error::Format(format!(
                "checkpoint architecture {:?} does not match this build",
                self.architecture
            )));
        }
        let ok_flow = self.flow.context_dim == SUMMARY_DIM
            && self.flow.layers.len() == flow::N_LAYERS
            && self.flow.layers.iter().zip(flow::MASKS).all(|(l, m)| {
                l.mask == m && l.net.params.len() == mlp::Mlp::n_params_for(&l.net.sizes)
            });
        let ok_clf = self.classifier.net.sizes == [SUMMARY_DIM, classifier::HIDDEN, classifier::HIDDEN, N_MODES]
            && self.classifier.net.params.len() == mlp::Mlp::n_params_for(&self.classifier.net.sizes);
        let ok_std = self.standardizer.summary_mean.len() == SUMMARY_DIM
            && self.standardizer.summary_std.len() == SUMMARY_DIM
            && self
                .standardizer
                .summary_std
                .iter()
                .chain(&self.standardizer.theta_std)
                .all(|&s| s > 0.0);
        if !(ok_flow && ok_clf && ok_std) {
            return Err(Error::Format("checkpoint weights inconsistent with architecture".into()));
        }
        self.spec.validate()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(w, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let tp: Self = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        tp.validate()?;
        Ok(tp)
    }

    /// Standardized summary fed to both networks.
    pub fn context(&self, s: &SummaryVector) -> Vec<f64> {
        self.standardizer.summary(s.as_slice())
    }

    pub fn mode_probabilities(&self, s: &SummaryVector) -> [f64; N_MODES] {
        self.classifier.probabilities(&self.context(s))
    }

    /// `ln q(theta_t | s)` for transformed parameters `theta_t`.
    pub fn log_prob_transformed(&self, theta_t: &[f64; DIM], s: &SummaryVector) -> f64 {
        self.flow.log_prob(&self.standardizer.theta(theta_t), &self.context(s))
            + self.standardizer.theta_log_jacobian()
    }
}

fn sample_label(p: &[f64; N_MODES], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    p.iter().rposition(|&v| v > 0.0).unwrap_or(N_MODES - 1)
}

/// Draw `n_samples` posterior samples for `obs`. Labels are sampled from the
/// classifier's categorical; the ensemble also carries the probabilities,
/// whose argmax is the point prediction.
pub fn infer(tp: &TrainedPosterior, obs: &ObservationSeries, n_samples: usize, seed: u64) -> Result<PosteriorEnsemble> {
    if n_samples == 0 {
        return Err(Error::Domain("n_samples must be >= 1".into()));
    }
    let calls_before = simulator_calls();
    let start = Instant::now();
    let s = summarize(obs)?;
    let ctx = tp.context(&s);
    let probs = tp.classifier.probabilities(&ctx);
    let mut label_rng = stream(seed, 0);
    let mut flow_rng = stream(seed, 1);
    let thetas = (0..n_samples)
        .map(|_| {
            let mode = FailureMode::from_index(sample_label(&probs, &mut label_rng)).expect("label < 4");
            let z = tp.flow.sample(&ctx, &mut flow_rng);
            from_unconstrained(mode, &tp.standardizer.theta_inverse(&z), &tp.spec)
        })
        .collect();
    let mut ens = PosteriorEnsemble::from_draws(thetas, vec![0; n_samples], Some(probs));
    ens.wall_time = start.elapsed().as_secs_f64();
    ens.simulator_call_count = simulator_calls() - calls_before;
    Ok(ens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observation::{simulate, OperatingConditions};
    use crate::prior::DegradationTheta;
    use train::generate_training_set;

    fn quick_posterior() -> TrainedPosterior {
        let spec = PriorSpec::default();
        let ts = generate_training_set(400, &spec, &OperatingConditions::default(), 5).unwrap();
        let cfg = TrainConfig {
            max_epochs: 15,
            ..TrainConfig::default()
        };
        train(&ts, &spec, &cfg).unwrap()
    }

    fn record(seed: u64) -> ObservationSeries {
        let spec = PriorSpec::default();
        let theta = DegradationTheta::new(FailureMode::Fouling, spec.params(18.0, 0.03, 0.0004, 0.5));
        simulate(&theta, &OperatingConditions::default(), &mut stream(seed, 0)).unwrap().1
    }

    #[test]
    fn inference_is_deterministic_simulation_free_and_in_support() {
        let tp = quick_posterior();
        let obs = record(1);
        let a = infer(&tp, &obs, 500, 9).unwrap();
        let b = infer(&tp, &obs, 500, 9).unwrap();
        assert_eq!(a.thetas, b.thetas);
        assert_eq!(a.simulator_call_count, 0);
        let (lo, hi) = tp.spec.tau_bounds();
        for t in &a.thetas {
            assert!(t.params.tau > lo && t.params.tau < hi);
            assert!(t.params.beta_f > 0.0 && t.params.beta_l > 0.0 && t.params.lambda > 0.0);
        }
        let p = a.mode_probabilities.unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert_eq!(a.mode_counts.iter().sum::<usize>(), 500);
    }

    #[test]
    fn sampled_labels_follow_the_classifier() {
        let mut rng = stream(3, 0);
        let p = [0.1, 0.2, 0.3, 0.4];
        let mut counts = [0usize; 4];
        for _ in 0..100_000 {
            counts[sample_label(&p, &mut rng)] += 1;
        }
        for (c, pi) in counts.iter().zip(p) {
            assert!((*c as f64 / 1e5 - pi).abs() < 0.005);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let tp = quick_posterior();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("npe.json");
        tp.save(&path).unwrap();
        let back = TrainedPosterior::load(&path).unwrap();
        assert_eq!(back, tp);
        let obs = record(2);
        assert_eq!(infer(&back, &obs, 50, 1).unwrap().thetas, infer(&tp, &obs, 50, 1).unwrap().thetas);

        let mut bad = tp.clone();
        bad.format = "hxdiag-npe/0".into();
        bad.save(&path).unwrap();
        assert!(matches!(TrainedPosterior::load(&path), Err(Error::Format(_))));
    }

    #[test]
    fn density_integrates_to_one_on_a_grid() {
        let tp = quick_posterior();
        let s = summarize(&record(4)).unwrap();
        let ctx = tp.context(&s);
        // midpoint rule on [-4, 4]^4 in the flow's standardized coordinates
        let m = 20;
        let h = 8.0 / m as f64;
        let pts: Vec<f64> = (0..m).map(|i| -4.0 + h * (i as f64 + 0.5)).collect();
        let mut total = 0.0;
        for &a in &pts {
            for &b in &pts {
                for &c in &pts {
                    for &d in &pts {
                        total += tp.flow.log_prob(&[a, b, c, d], &ctx).exp();
                    }
                }
            }
        }
        total *= h.powi(4);
        assert!((total - 1.0).abs() < 0.02, "mass {total}");
    }
}
