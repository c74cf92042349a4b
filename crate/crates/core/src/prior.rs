//! Priors over the failure mode and degradation parameters, and the joint
//! log-density of parameters, latent draws and observations.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::degradation::{
    DegradationParams, FailureMode, LatentDraws, DEFAULT_K_GATE, DEFAULT_K_RELAX,
};
use crate::error::{Error, Result};
use crate::observation::{gaussian_log_likelihood, ObservationSeries, OperatingConditions};
use crate::rng::SimRng;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// The inference target: failure mode plus continuous degradation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegradationTheta {
    pub mode: FailureMode,
    pub params: DegradationParams,
}

impl DegradationTheta {
    pub fn new(mode: FailureMode, params: DegradationParams) -> Self {
        Self { mode, params }
    }

    /// `[tau, beta_f, beta_l, lambda]`
    pub fn continuous(&self) -> [f64; 4] {
        [
            self.params.tau,
            self.params.beta_f,
            self.params.beta_l,
            self.params.lambda,
        ]
    }
}

pub const PARAM_NAMES: [&str; 4] = ["tau", "beta_f", "beta_l", "lambda"];

/// Log-normal distribution parameterized by the mean and standard deviation
/// of the underlying normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogNormal {
    pub location: f64,
    pub scale: f64,
}

impl LogNormal {
    /// From a median and log-scale standard deviation.
    pub fn from_median(median: f64, scale: f64) -> Self {
        Self {
            location: median.ln(),
            scale,
        }
    }

    pub fn median(&self) -> f64 {
        self.location.exp()
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        if !(x > 0.0) || !x.is_finite() {
            return f64::NEG_INFINITY;
        }
        let z = (x.ln() - self.location) / self.scale;
        -0.5 * z * z - x.ln() - self.scale.ln() - LN_SQRT_2PI
    }

    pub fn sample(&self, rng: &mut SimRng) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        (self.location + self.scale * z).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    /// Probabilities of (none, fouling, leakage, both).
    pub mode_probs: [f64; 4],
    /// Horizon `T`; `tau ~ U(1, T - 1)`.
    pub horizon: usize,
    pub beta_f: LogNormal,
    pub beta_l: LogNormal,
    pub lambda: LogNormal,
    #[serde(default = "default_k_gate")]
    pub k_gate: f64,
    #[serde(default = "default_k_relax")]
    pub k_relax: f64,
}

fn default_k_gate() -> f64 {
    DEFAULT_K_GATE
}

fn default_k_relax() -> f64 {
    DEFAULT_K_RELAX
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            mode_probs: [0.4, 0.2, 0.2, 0.2],
            horizon: 100,
            beta_f: LogNormal::from_median(0.015, 1.0),
            beta_l: LogNormal::from_median(0.0004, 0.4),
            lambda: LogNormal::from_median(2.0, 0.5),
            k_gate: DEFAULT_K_GATE,
            k_relax: DEFAULT_K_RELAX,
        }
    }
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.mode_probs.iter().sum();
        if self.mode_probs.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "mode probabilities must be non-negative and sum to 1, got {:?}",
                self.mode_probs
            )));
        }
        if self.horizon < 3 {
            return Err(Error::Config(format!(
                "horizon must be >= 3, got {}",
                self.horizon
            )));
        }
        for (name, ln) in [
            ("beta_f", self.beta_f),
            ("beta_l", self.beta_l),
            ("lambda", self.lambda),
        ] {
            if !(ln.scale > 0.0) || !ln.location.is_finite() {
                return Err(Error::Config(format!("bad log-normal for {name}: {ln:?}")));
            }
        }
        if !(self.k_gate > 0.0 && self.k_relax > 0.0) {
            return Err(Error::Config("sigmoid sharpness must be positive".into()));
        }
        Ok(())
    }

    pub fn tau_bounds(&self) -> (f64, f64) {
        (1.0, self.horizon as f64 - 1.0)
    }

    /// Parameters with the given values and this prior's sharpness constants.
    pub fn params(&self, tau: f64, beta_f: f64, beta_l: f64, lambda: f64) -> DegradationParams {
        DegradationParams::new(tau, beta_f, beta_l, lambda)
            .with_sharpness(self.k_gate, self.k_relax)
    }
}

/// One draw from the prior. All four continuous parameters are drawn for
/// every mode; the mode only gates their effect.
pub fn sample_prior(spec: &PriorSpec, rng: &mut SimRng) -> DegradationTheta {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut mode = FailureMode::Both;
    for (m, &p) in FailureMode::ALL.iter().zip(&spec.mode_probs) {
        acc += p;
        if u < acc {
            mode = *m;
            break;
        }
    }
    let (lo, hi) = spec.tau_bounds();
    let tau = lo + (hi - lo) * rng.random::<f64>();
    let beta_f = spec.beta_f.sample(rng);
    let beta_l = spec.beta_l.sample(rng);
    let lambda = spec.lambda.sample(rng);
    DegradationTheta {
        mode,
        params: spec.params(tau, beta_f, beta_l, lambda),
    }
}

/// Map the continuous parameters to unconstrained coordinates
/// `[logit((tau-1)/(T-2)), ln beta_f, ln beta_l, ln lambda]`.
pub fn to_unconstrained(params: &DegradationParams, spec: &PriorSpec) -> [f64; 4] {
    let (lo, hi) = spec.tau_bounds();
    let s = (params.tau - lo) / (hi - lo);
    [
        (s / (1.0 - s)).ln(),
        params.beta_f.ln(),
        params.beta_l.ln(),
        params.lambda.ln(),
    ]
}

/// Inverse of [`to_unconstrained`]. Extreme logits are kept a hair inside
/// the onset interval so the result is always a valid parameter set.
pub fn from_unconstrained(mode: FailureMode, x: &[f64; 4], spec: &PriorSpec) -> DegradationTheta {
    let (lo, hi) = spec.tau_bounds();
    let s = (1.0 / (1.0 + (-x[0]).exp())).clamp(1e-12, 1.0 - 1e-12);
    let pos = |v: f64| v.exp().clamp(f64::MIN_POSITIVE, f64::MAX);
    DegradationTheta::new(
        mode,
        spec.params(lo + (hi - lo) * s, pos(x[1]), pos(x[2]), pos(x[3])),
    )
}

pub fn log_prior(theta: &DegradationTheta, spec: &PriorSpec) -> f64 {
    let (lo, hi) = spec.tau_bounds();
    let tau = theta.params.tau;
    if !(lo..=hi).contains(&tau) {
        return f64::NEG_INFINITY;
    }
    spec.mode_probs[theta.mode.index()].ln() - (hi - lo).ln()
        + spec.beta_f.ln_pdf(theta.params.beta_f)
        + spec.beta_l.ln_pdf(theta.params.beta_l)
        + spec.lambda.ln_pdf(theta.params.lambda)
}

/// Log-density of the latent draws given the scale parameters:
/// `u_i ~ U(0,1)`, `J_i ~ Exp(mean beta_f)`, `dL_i ~ Exp(mean beta_l)`.
pub fn log_latent_density(params: &DegradationParams, draws: &LatentDraws) -> f64 {
    if draws.uniforms.iter().any(|u| !(0.0..=1.0).contains(u))
        || draws.jump_sizes.iter().any(|&j| !(j >= 0.0))
        || draws.leak_increments.iter().any(|&d| !(d >= 0.0))
    {
        return f64::NEG_INFINITY;
    }
    let n = draws.horizon() as f64;
    let sum_j: f64 = draws.jump_sizes.iter().sum();
    let sum_l: f64 = draws.leak_increments.iter().sum();
    -n * params.beta_f.ln() - sum_j / params.beta_f - n * params.beta_l.ln() - sum_l / params.beta_l
}

/// Full joint log-density `log p(theta) + log p(latents | theta) + log p(obs | theta, latents)`.
pub fn log_joint(
    theta: &DegradationTheta,
    latents: &LatentDraws,
    obs: &ObservationSeries,
    cond: &OperatingConditions,
    spec: &PriorSpec,
) -> Result<f64> {
    latents.check(cond.horizon)?;
    let lp = log_prior(theta, spec);
    if lp == f64::NEG_INFINITY {
        return Ok(lp);
    }
    let ll = log_latent_density(&theta.params, latents);
    if ll == f64::NEG_INFINITY {
        return Ok(ll);
    }
    Ok(lp + ll + gaussian_log_likelihood(theta.mode, &theta.params, latents, obs, cond)?)
}
