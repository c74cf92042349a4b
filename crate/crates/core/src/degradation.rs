//! Stochastic degradation of the exchanger.
//!
//! Fouling is a discretized, relaxed compound-Poisson process on the fouling
//! factor `R(t)`; leakage is an exponential-increment growth of the diverted
//! hot-stream fraction `L(t)`. Both switch on through a logistic gate centred
//! on the changepoint `tau`. Time runs over integer steps `t = 1..=T`; array
//! index `i` holds step `i + 1`.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SimRng;

/// Saturation of the leak fraction.
pub const LEAK_MAX: f64 = 0.95;
/// Default sharpness of the onset gate, per timestep.
pub const DEFAULT_K_GATE: f64 = 2.0;
/// Default sharpness of the relaxed jump indicator.
pub const DEFAULT_K_RELAX: f64 = 500.0;

const EXP_CLAMP: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FailureMode {
    None,
    Fouling,
    Leakage,
    Both,
}

impl FailureMode {
    pub const ALL: [FailureMode; 4] = [
        FailureMode::None,
        FailureMode::Fouling,
        FailureMode::Leakage,
        FailureMode::Both,
    ];

    pub fn index(self) -> usize {
        match self {
            FailureMode::None => 0,
            FailureMode::Fouling => 1,
            FailureMode::Leakage => 2,
            FailureMode::Both => 3,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Fouling indicator `g_f`.
    pub fn fouling(self) -> bool {
        matches!(self, FailureMode::Fouling | FailureMode::Both)
    }

    /// Leakage indicator `g_l`.
    pub fn leakage(self) -> bool {
        matches!(self, FailureMode::Leakage | FailureMode::Both)
    }

    pub fn label(self) -> &'static str {
        match self {
            FailureMode::None => "none",
            FailureMode::Fouling => "fouling",
            FailureMode::Leakage => "leakage",
            FailureMode::Both => "both",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" => Some(FailureMode::None),
            "fouling" => Some(FailureMode::Fouling),
            "leakage" | "leak" => Some(FailureMode::Leakage),
            "both" => Some(FailureMode::Both),
            _ => None,
        }
    }
}

impl std::fmt::Display for FailureMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Continuous degradation parameters plus the two sigmoid sharpness constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegradationParams {
    /// Changepoint, in timesteps.
    pub tau: f64,
    /// Mean fouling jump size.
    pub beta_f: f64,
    /// Mean per-step leak increment.
    pub beta_l: f64,
    /// Fouling event rate per timestep.
    pub lambda: f64,
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

impl DegradationParams {
    pub fn new(tau: f64, beta_f: f64, beta_l: f64, lambda: f64) -> Self {
        Self {
            tau,
            beta_f,
            beta_l,
            lambda,
            k_gate: DEFAULT_K_GATE,
            k_relax: DEFAULT_K_RELAX,
        }
    }

    pub fn with_sharpness(mut self, k_gate: f64, k_relax: f64) -> Self {
        self.k_gate = k_gate;
        self.k_relax = k_relax;
        self
    }

    pub fn validate(&self, horizon: usize) -> Result<()> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if !(pos(self.beta_f) && pos(self.beta_l) && pos(self.lambda))
            || !(pos(self.k_gate) && pos(self.k_relax))
        {
            return Err(Error::Domain(format!(
                "degradation parameters must be positive: {self:?}"
            )));
        }
        if !(self.tau > 0.0 && self.tau < horizon as f64) {
            return Err(Error::Domain(format!(
                "tau = {} outside (0, {horizon})",
                self.tau
            )));
        }
        Ok(())
    }
}

/// The raw random inputs behind one trajectory: uniforms for the relaxed
/// jump indicators, jump sizes and leak increments, one per timestep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentDraws {
    pub uniforms: Vec<f64>,
    pub jump_sizes: Vec<f64>,
    pub leak_increments: Vec<f64>,
}

impl LatentDraws {
    /// Draw `u_i ~ U(0,1)`, `J_i ~ Exp(mean beta_f)`, `dL_i ~ Exp(mean beta_l)`.
    ///
    /// All three arrays are drawn regardless of failure mode so that the
    /// random stream consumed is the same for every mode.
    pub fn sample(params: &DegradationParams, horizon: usize, rng: &mut SimRng) -> Self {
        let uniforms = (0..horizon).map(|_| rng.random::<f64>()).collect();
        let jump_sizes = (0..horizon)
            .map(|_| params.beta_f * standard_exp(rng))
            .collect();
        let leak_increments = (0..horizon)
            .map(|_| params.beta_l * standard_exp(rng))
            .collect();
        Self {
            uniforms,
            jump_sizes,
            leak_increments,
        }
    }

    pub fn horizon(&self) -> usize {
        self.uniforms.len()
    }

    pub fn check(&self, horizon: usize) -> Result<()> {
        for (what, v) in [
            ("uniforms", &self.uniforms),
            ("jump_sizes", &self.jump_sizes),
            ("leak_increments", &self.leak_increments),
        ] {
            if v.len() != horizon {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: horizon,
                    actual: v.len(),
                });
            }
        }
        Ok(())
    }
}

/// Per-timestep latent degradation state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentTrajectory {
    pub fouling_factor: Vec<f64>,
    pub leak_fraction: Vec<f64>,
    pub jump_gates: Vec<f64>,
    pub jump_sizes: Vec<f64>,
    pub leak_increments: Vec<f64>,
}

impl LatentTrajectory {
    /// Deterministic trajectory from latent draws.
    pub fn from_draws(params: &DegradationParams, mode: FailureMode, draws: &LatentDraws) -> Self {
        let (fouling_factor, jump_gates) = fouling_path(params, mode, draws);
        let leak_fraction = leak_path(params, mode, &draws.leak_increments);
        Self {
            fouling_factor,
            leak_fraction,
            jump_gates,
            jump_sizes: draws.jump_sizes.clone(),
            leak_increments: draws.leak_increments.clone(),
        }
    }

    pub fn horizon(&self) -> usize {
        self.fouling_factor.len()
    }
}

#[inline]
pub(crate) fn standard_exp(rng: &mut SimRng) -> f64 {
    Exp1.sample(rng)
}

#[inline]
fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x.clamp(-EXP_CLAMP, EXP_CLAMP)).exp())
}

/// Onset gate `S(t) = 1 / (1 + exp(-k (t - tau)))`.
#[inline]
pub fn sigmoid_gate(t: f64, tau: f64, k: f64) -> f64 {
    logistic(k * (t - tau))
}

/// Per-step probability of at least one fouling event, `1 - exp(-lambda)`.
#[inline]
pub fn jump_probability(lambda: f64) -> f64 {
    -(-lambda).exp_m1()
}

/// Smooth stand-in for the indicator `1{u < p_jump}`.
#[inline]
pub fn relaxed_indicator(p_jump: f64, u: f64, k: f64) -> f64 {
    logistic(k * (p_jump - u))
}

/// Fouling factor path and relaxed jump gates for the given draws.
pub fn fouling_path(
    params: &DegradationParams,
    mode: FailureMode,
    draws: &LatentDraws,
) -> (Vec<f64>, Vec<f64>) {
    let p = jump_probability(params.lambda);
    let gates: Vec<f64> = draws
        .uniforms
        .iter()
        .map(|&u| relaxed_indicator(p, u, params.k_relax))
        .collect();
    let horizon = draws.uniforms.len();
    if !mode.fouling() {
        return (vec![0.0; horizon], gates);
    }
    let mut r = Vec::with_capacity(horizon);
    let mut acc = 0.0;
    for (i, (&gate, &jump)) in gates.iter().zip(&draws.jump_sizes).enumerate() {
        acc += sigmoid_gate((i + 1) as f64, params.tau, params.k_gate) * gate * jump;
        r.push(acc);
    }
    (r, gates)
}

/// Leak fraction path `L(t) = L_max (1 - exp(-sum S(i) dL_i))`.
pub fn leak_path(params: &DegradationParams, mode: FailureMode, increments: &[f64]) -> Vec<f64> {
    if !mode.leakage() {
        return vec![0.0; increments.len()];
    }
    let mut acc = 0.0;
    increments
        .iter()
        .enumerate()
        .map(|(i, &dl)| {
            acc += sigmoid_gate((i + 1) as f64, params.tau, params.k_gate) * dl;
            // -expm1 keeps L strictly below L_max until acc is astronomically large
            (LEAK_MAX * -(-acc).exp_m1()).min(LEAK_MAX * (1.0 - f64::EPSILON))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoulingSample {
    pub fouling_factor: Vec<f64>,
    pub jump_gates: Vec<f64>,
    pub jump_sizes: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeakSample {
    pub leak_fraction: Vec<f64>,
    pub leak_increments: Vec<f64>,
}

fn check_horizon(horizon: usize) -> Result<()> {
    if horizon < 2 {
        return Err(Error::Domain(format!(
            "horizon must be >= 2, got {horizon}"
        )));
    }
    Ok(())
}

/// Draw a fouling trajectory: uniforms first, then jump sizes.
pub fn sample_fouling_trajectory(
    params: &DegradationParams,
    mode: FailureMode,
    horizon: usize,
    rng: &mut SimRng,
) -> Result<FoulingSample> {
    check_horizon(horizon)?;
    let uniforms: Vec<f64> = (0..horizon).map(|_| rng.random::<f64>()).collect();
    let jump_sizes: Vec<f64> = (0..horizon)
        .map(|_| params.beta_f * standard_exp(rng))
        .collect();
    let draws = LatentDraws {
        uniforms,
        jump_sizes,
        leak_increments: vec![0.0; horizon],
    };
    let (fouling_factor, jump_gates) = fouling_path(params, mode, &draws);
    Ok(FoulingSample {
        fouling_factor,
        jump_gates,
        jump_sizes: draws.jump_sizes,
    })
}

pub fn sample_leak_trajectory(
    params: &DegradationParams,
    mode: FailureMode,
    horizon: usize,
    rng: &mut SimRng,
) -> Result<LeakSample> {
    check_horizon(horizon)?;
    let leak_increments: Vec<f64> = (0..horizon)
        .map(|_| params.beta_l * standard_exp(rng))
        .collect();
    Ok(LeakSample {
        leak_fraction: leak_path(params, mode, &leak_increments),
        leak_increments,
    })
}

/// Fouled conductance `UA_clean / (1 + R)`.
#[inline]
pub fn effective_ua(ua_clean: f64, fouling_factor: f64) -> f64 {
    ua_clean / (1.0 + fouling_factor)
}

/// Hot-stream flow left after the leak diverts a fraction `l_t`.
#[inline]
pub fn effective_hot_flow(m_in: f64, leak_fraction: f64) -> f64 {
    m_in * (1.0 - leak_fraction)
}

/// Expected post-onset growth of `R` per timestep, `(1 - e^-lambda) beta_f g_f`.
pub fn expected_fouling_slope(params: &DegradationParams, mode: FailureMode) -> f64 {
    if mode.fouling() {
        jump_probability(params.lambda) * params.beta_f
    } else {
        0.0
    }
}
