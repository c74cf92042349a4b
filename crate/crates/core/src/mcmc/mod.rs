//! Reference posterior sampler: Metropolis-within-Gibbs on the
//! latent-augmented model.
//!
//! Each chain state holds the failure mode, the continuous parameters in
//! unconstrained coordinates `x = [logit((tau-1)/(T-2)), ln beta_f, ln beta_l,
//! ln lambda]`, and three latent arrays: `logit u_i`, `ln e_i` with
//! `J_i = beta_f e_i`, and `ln f_i` with `dL_i = beta_l f_i`. One sweep is
//!
//! 1. a Gibbs draw of the mode from its exact conditional (4 evaluations);
//! 2. a random-walk proposal on each coordinate of `x` (4);
//! 3. [`ONSET_MOVES`] changepoint moves: a new `tau` with the latents of the
//!    steps between the old and new onset redrawn, mostly as quiet steps.
//!    The last two draw `tau` from an onset proposal built from a likelihood
//!    scan of the record and, after warmup, the chain's own warmup draws;
//! 4. [`ROUNDS`] rounds of three moves that change a scale parameter while
//!    holding the simulated trajectory fixed (`beta_f` with the `e_i`,
//!    `beta_l` with the `f_i`, `lambda` with the `u_i`), each followed by
//!    [`SPLITS`] proposals that split a jump across the next step or merge
//!    two adjacent jumps;
//! 5. [`REFRESHES`] single-step redraws of `(u_i, e_i, f_i)` from the prior;
//! 6. random-walk proposals on each latent array in blocks of
//!    [`LATENT_BLOCK`] steps.
//!
//! Chains start from latents that reproduce a smoothed inversion of the
//! record, with the onset drawn from the scan. The scan costs one evaluation
//! per unit onset cell, shared by all chains.
//!
//! Every target evaluation is one simulator call. Proposal scales adapt by
//! Robbins-Monro toward [`ChainConfig::target_accept`] during warmup only.

pub mod diagnostics;
mod init;

use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::degradation::{jump_probability, sigmoid_gate, FailureMode};
use crate::error::{Error, Result};
use crate::observation::{
    count_call, streamed_log_likelihood, ObservationSeries, OperatingConditions,
};
use crate::posterior::{ParamDiagnostics, PosteriorEnsemble};
use crate::prior::{log_prior, sample_prior, DegradationTheta, PriorSpec, PARAM_NAMES};
use crate::rng::{stream, SimRng};
use init::WarmStart;

pub const LATENT_BLOCK: usize = 10;
/// Single-step prior refreshes per sweep.
pub const REFRESHES: usize = 5;
/// RNG stream of the onset scan, disjoint from the chain streams.
const ONSET_SCAN_STREAM: u64 = 1 << 32;
/// Changepoint proposals per sweep.
pub const ONSET_MOVES: usize = 5;
/// How many of the changepoint proposals are drawn from the onset proposal.
const GLOBAL_ONSET_MOVES: usize = 2;
/// Rounds of scale moves followed by split/merge proposals per sweep.
pub const ROUNDS: usize = 12;
/// Split/merge proposals per round.
pub const SPLITS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub n_chains: usize,
    pub n_warmup: usize,
    pub n_samples: usize,
    pub target_accept: f64,
    pub rng_seed: u64,
}

impl ChainConfig {
    /// 4 chains of 150 warmup + 75 kept sweeps.
    pub fn compact(rng_seed: u64) -> Self {
        Self {
            n_chains: 4,
            n_warmup: 150,
            n_samples: 75,
            target_accept: 0.3,
            rng_seed,
        }
    }

    /// 4 chains of 2000 warmup + 3000 kept sweeps.
    pub fn full(rng_seed: u64) -> Self {
        Self {
            n_warmup: 2000,
            n_samples: 3000,
            ..Self::compact(rng_seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_chains == 0 || self.n_warmup == 0 || self.n_samples == 0 {
            return Err(Error::Config(format!(
                "chain counts must be >= 1: {self:?}"
            )));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::Config(format!(
                "target_accept must lie in (0,1), got {}",
                self.target_accept
            )));
        }
        Ok(())
    }
}

/// Simulator calls per sweep for horizon `horizon`.
/// Exact simulator calls of [`run_mcmc`]: the onset scan plus every sweep.
pub fn expected_simulator_calls(cfg: &ChainConfig, spec: &PriorSpec) -> u64 {
    let sweeps = cfg.n_chains * (cfg.n_warmup + cfg.n_samples);
    (WarmStart::onset_grid(spec).len() + sweeps * proposals_per_sweep(spec.horizon)) as u64
}

pub fn proposals_per_sweep(horizon: usize) -> usize {
    4 + 4 + ONSET_MOVES + ROUNDS * (3 + SPLITS) + REFRESHES + 3 * horizon.div_ceil(LATENT_BLOCK)
}

/// Exact conditional of the mode given log-joint values under each mode.
pub fn mode_conditional(log_joints: [f64; 4]) -> [f64; 4] {
    let max = log_joints.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return [0.25; 4];
    }
    let w = log_joints.map(|l| (l - max).exp());
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

fn sample_categorical(p: &[f64; 4], rng: &mut SimRng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    p.iter().rposition(|&v| v > 0.0).unwrap_or(3)
}

fn gauss(rng: &mut SimRng) -> f64 {
    StandardNormal.sample(rng)
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(sigma(x) (1 - sigma(x)))`
fn ln_logistic_slope(x: f64) -> f64 {
    let a = x.abs();
    -a - 2.0 * (-a).exp().ln_1p()
}

/// Prior log-density of one step's latents in sampler coordinates:
/// logistic for `logit u`, log-standard-exponential for `ln e` and `ln f`.
fn latent_prior(logit_u: f64, log_e: f64, log_f: f64) -> f64 {
    ln_logistic_slope(logit_u) + log_e - log_e.exp() + log_f - log_f.exp()
}

/// Robbins-Monro controller for one proposal scale.
#[derive(Debug, Clone)]
pub struct AdaptiveScale {
    pub log_scale: f64,
    target: f64,
    updates: usize,
}

impl AdaptiveScale {
    pub fn new(scale: f64, target: f64) -> Self {
        Self {
            log_scale: scale.ln(),
            target,
            updates: 0,
        }
    }

    pub fn scale(&self) -> f64 {
        self.log_scale.exp()
    }

    pub fn adapt(&mut self, accept_prob: f64) {
        self.updates += 1;
        let gain = (self.updates as f64).powf(-0.6);
        self.log_scale = (self.log_scale + gain * (accept_prob - self.target)).clamp(-12.0, 3.0);
    }
}

/// Metropolis accept/reject on a log ratio. Returns `(accepted, min(1, ratio))`.
fn metropolis(log_ratio: f64, rng: &mut SimRng) -> (bool, f64) {
    let a = if log_ratio.is_nan() {
        0.0
    } else {
        log_ratio.min(0.0).exp()
    };
    (rng.random::<f64>() < a, a)
}

/// Gaussian random-walk Metropolis kernel on an arbitrary log-density.
pub struct RandomWalk {
    pub scale: AdaptiveScale,
}

impl RandomWalk {
    pub fn new(scale: f64, target_accept: f64) -> Self {
        Self {
            scale: AdaptiveScale::new(scale, target_accept),
        }
    }

    /// One proposal on `x` in place; `lp` tracks the current log-density.
    pub fn step<F: FnMut(&[f64]) -> f64>(
        &mut self,
        x: &mut [f64],
        lp: &mut f64,
        mut log_density: F,
        adapt: bool,
        rng: &mut SimRng,
    ) -> bool {
        let s = self.scale.scale();
        let prop: Vec<f64> = x.iter().map(|v| v + s * gauss(rng)).collect();
        let lp_new = log_density(&prop);
        let (ok, a) = metropolis(lp_new - *lp, rng);
        if adapt {
            self.scale.adapt(a);
        }
        if ok {
            x.copy_from_slice(&prop);
            *lp = lp_new;
        }
        ok
    }
}

#[derive(Debug, Clone)]
struct State {
    mode: FailureMode,
    x: [f64; 4],
    logit_u: Vec<f64>,
    log_e: Vec<f64>,
    log_f: Vec<f64>,
}

#[derive(Clone, Copy)]
enum Latent {
    Uniform,
    Jump,
    Leak,
}

/// Which parts of the state are held fixed, for sampling conditional
/// posteriors.
#[derive(Debug, Clone, Default)]
pub struct Clamp {
    pub mode: Option<FailureMode>,
    /// Fixed `(u, e, f)`: jump uniforms and unit-scale jump sizes and leak
    /// increments (the latent draws divided by `beta_f` and `beta_l`).
    pub latents: Option<(Vec<f64>, Vec<f64>, Vec<f64>)>,
    /// `(tau, beta_f, beta_l, lambda)` values to hold fixed.
    pub params: [Option<f64>; 4],
}

struct Target<'a> {
    obs: &'a ObservationSeries,
    cond: &'a OperatingConditions,
    spec: &'a PriorSpec,
    calls: u64,
    scratch: Vec<(f64, f64, f64)>,
}

impl Target<'_> {
    fn horizon(&self) -> usize {
        self.cond.horizon
    }

    fn theta(&self, mode: FailureMode, x: &[f64; 4]) -> DegradationTheta {
        let (lo, hi) = self.spec.tau_bounds();
        let tau = lo + (hi - lo) * logistic(x[0]);
        DegradationTheta::new(
            mode,
            self.spec.params(tau, x[1].exp(), x[2].exp(), x[3].exp()),
        )
    }

    fn to_unconstrained(&self, theta: &DegradationTheta) -> [f64; 4] {
        let (lo, hi) = self.spec.tau_bounds();
        let s = (theta.params.tau - lo) / (hi - lo);
        [
            (s / (1.0 - s)).ln(),
            theta.params.beta_f.ln(),
            theta.params.beta_l.ln(),
            theta.params.lambda.ln(),
        ]
    }

    /// Log-density in sampler coordinates: the joint plus the log-Jacobians
    /// of every transform. Per step, the latent density and Jacobian terms
    /// collapse to [`latent_prior`].
    fn eval(&mut self, mode: FailureMode, x: &[f64; 4], lu: &[f64], le: &[f64], lf: &[f64]) -> f64 {
        self.calls += 1;
        count_call();
        let theta = self.theta(mode, x);
        let lp = log_prior(&theta, self.spec);
        if !lp.is_finite() {
            return f64::NEG_INFINITY;
        }
        let (lo, hi) = self.spec.tau_bounds();
        let globals = (hi - lo).ln() + ln_logistic_slope(x[0]) + x[1] + x[2] + x[3];
        let (bf, bl) = (theta.params.beta_f, theta.params.beta_l);
        self.scratch.resize(lu.len(), (0.0, 0.0, 0.0));
        // one exponential per latent serves both the prior terms and the likelihood
        let mut latents = 0.0;
        for i in 0..lu.len() {
            let (ee, ef) = (le[i].exp(), lf[i].exp());
            let a = lu[i].abs();
            let z = (-a).exp();
            let sig = 1.0 / (1.0 + z);
            latents += -a - 2.0 * z.ln_1p() + le[i] - ee + lf[i] - ef;
            let u = if lu[i] >= 0.0 { sig } else { z * sig };
            self.scratch[i] = (u, bf * ee, bl * ef);
        }
        let scratch = &self.scratch;
        let ll = streamed_log_likelihood(mode, &theta.params, self.obs, self.cond, |i| scratch[i]);
        let v = lp + globals + latents + ll;
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    }

    fn eval_state(&mut self, s: &State) -> f64 {
        self.eval(s.mode, &s.x, &s.logit_u, &s.log_e, &s.log_f)
    }
}

/// Starting state; with free latents `warm` supplies the estimate and the onset.
fn initial_state(
    target: &Target,
    clamp: &Clamp,
    warm: Option<(&WarmStart, f64)>,
    rng: &mut SimRng,
) -> State {
    let (mode, mut x, logit_u, log_e, log_f) = match (&clamp.latents, warm) {
        (Some((u, e, f)), _) => {
            let theta = sample_prior(target.spec, rng);
            (
                theta.mode,
                target.to_unconstrained(&theta),
                u.iter().map(|&v| (v / (1.0 - v)).ln()).collect(),
                e.iter().map(|v| v.ln()).collect(),
                f.iter().map(|v| v.ln()).collect(),
            )
        }
        (None, Some((w, tau))) => {
            let (m, p, u, e, f) = w.draw(target.spec, tau, rng);
            let theta = DegradationTheta::new(
                FailureMode::ALL[m],
                target.spec.params(p[0], p[1], p[2], p[3]),
            );
            (
                theta.mode,
                target.to_unconstrained(&theta),
                u.iter().map(|&v| (v / (1.0 - v)).ln()).collect(),
                e.iter().map(|v| v.ln()).collect(),
                f.iter().map(|v| v.ln()).collect(),
            )
        }
        (None, None) => unreachable!("free latents always come with a warm start"),
    };
    let (lo, hi) = target.spec.tau_bounds();
    for (k, fixed) in clamp.params.iter().enumerate() {
        if let Some(v) = *fixed {
            x[k] = if k == 0 {
                let s = (v - lo) / (hi - lo);
                (s / (1.0 - s)).ln()
            } else {
                v.ln()
            };
        }
    }
    State {
        mode: clamp.mode.unwrap_or(mode),
        x,
        logit_u,
        log_e,
        log_f,
    }
}

fn run_chain(
    target: &mut Target,
    cfg: &ChainConfig,
    clamp: &Clamp,
    warm: Option<&WarmStart>,
    rng: &mut SimRng,
) -> Vec<DegradationTheta> {
    let n = target.horizon();
    let n_blocks = n.div_ceil(LATENT_BLOCK);
    let ta = cfg.target_accept;
    let free: Vec<usize> = (0..4).filter(|&k| clamp.params[k].is_none()).collect();
    let latents_free = clamp.latents.is_none();

    let start = warm.map(|w| (w, w.pick_onset(target.spec, rng)));
    let mut s = initial_state(target, clamp, start, rng);
    // With a free mode the first Gibbs step supplies the current density.
    let mut lp = if clamp.mode.is_some() {
        target.eval_state(&s)
    } else {
        f64::NAN
    };

    let mut coord = [0.1; 4].map(|v| AdaptiveScale::new(v, ta));
    let mut onset = AdaptiveScale::new(0.1, ta);
    let mut joint = [
        AdaptiveScale::new(0.1, ta),
        AdaptiveScale::new(0.1, ta),
        AdaptiveScale::new(0.1, ta),
    ];
    let mut blocks: Vec<AdaptiveScale> = (0..3 * n_blocks)
        .map(|_| AdaptiveScale::new(0.5, ta))
        .collect();

    let total = cfg.n_warmup + cfg.n_samples;
    let mut thetas = Vec::with_capacity(cfg.n_samples);
    let mut onset_q: Vec<f64> = warm.map(|w| w.onset_log_q.clone()).unwrap_or_default();
    let mut onset_counts = vec![0.0; onset_q.len()];

    for it in 0..total {
        let adapt = it < cfg.n_warmup;
        if let (Some(w), false) = (warm, onset_q.is_empty()) {
            if it == cfg.n_warmup {
                onset_q = init::blend_onset_proposal(&w.onset_log_q, &onset_counts);
            } else if adapt && 2 * it >= cfg.n_warmup {
                let (lo, hi) = target.spec.tau_bounds();
                let k = (((hi - lo) * logistic(s.x[0])) as usize).min(onset_counts.len() - 1);
                onset_counts[k] += 1.0;
            }
        }

        // (a) mode
        if clamp.mode.is_none() {
            let lps =
                FailureMode::ALL.map(|m| target.eval(m, &s.x, &s.logit_u, &s.log_e, &s.log_f));
            let m = sample_categorical(&mode_conditional(lps), rng);
            s.mode = FailureMode::ALL[m];
            lp = lps[m];
        }

        // (b) each free global coordinate in turn
        for &k in &free {
            let mut x = s.x;
            x[k] += coord[k].scale() * gauss(rng);
            let lp_new = target.eval(s.mode, &x, &s.logit_u, &s.log_e, &s.log_f);
            let (ok, a) = metropolis(lp_new - lp, rng);
            if adapt {
                coord[k].adapt(a);
            }
            if ok {
                s.x = x;
                lp = lp_new;
            }
        }

        if latents_free && clamp.params[0].is_none() {
            // (c) changepoint moves with fresh latents around the onset: local
            // random walks, the last ones drawn from the onset proposal
            let (lo, hi) = target.spec.tau_bounds();
            let tau_of = |x0: f64| lo + (hi - lo) * logistic(x0);
            for m in 0..ONSET_MOVES {
                let global = (m + GLOBAL_ONSET_MOVES >= ONSET_MOVES && !onset_q.is_empty())
                    .then_some(&onset_q);
                let mut x = s.x;
                let mut log_h = 0.0;
                if let Some(q) = global {
                    let k = init::sample_cell(q, rng);
                    let tau = lo + k as f64 + rng.random::<f64>();
                    if tau >= hi {
                        continue_with_identity(target, &s, &mut lp);
                        continue;
                    }
                    x[0] = ((tau - lo) / (hi - tau)).ln();
                    let log_qx = |x0: f64| {
                        init::cell_log_density(q, tau_of(x0) - lo)
                            + (hi - lo).ln()
                            + ln_logistic_slope(x0)
                    };
                    log_h += log_qx(s.x[0]) - log_qx(x[0]);
                } else {
                    x[0] += onset.scale() * gauss(rng);
                }
                let (t_old, t_new) = (tau_of(s.x[0]), tau_of(x[0]));
                // steps whose index lies between the two onsets
                let first = (t_old.min(t_new).ceil() as usize).saturating_sub(1);
                let last = (t_old.max(t_new).floor() as usize).min(n);
                let p = jump_probability(s.x[3].exp());
                let (mut lu, mut le, mut lf) =
                    (s.logit_u.clone(), s.log_e.clone(), s.log_f.clone());
                for i in first..last {
                    log_h += window_log_q(p, s.logit_u[i], s.log_e[i], s.log_f[i]);
                    (lu[i], le[i], lf[i]) = window_draw(p, rng);
                    log_h -= window_log_q(p, lu[i], le[i], lf[i]);
                }
                let lp_new = target.eval(s.mode, &x, &lu, &le, &lf);
                let (ok, a) = metropolis(lp_new - lp + log_h, rng);
                if adapt && global.is_none() {
                    onset.adapt(a);
                }
                if ok {
                    s.x = x;
                    s.logit_u = lu;
                    s.log_e = le;
                    s.log_f = lf;
                    lp = lp_new;
                }
            }
        }

        if latents_free {
            // (d) scale moves that preserve the trajectory; only latents that
            // reach the likelihood are shifted, the set being fixed by the move
            let theta = target.theta(s.mode, &s.x);
            let p = jump_probability(theta.params.lambda);
            let live: Vec<bool> = (0..n)
                .map(|i| sigmoid_gate((i + 1) as f64, theta.params.tau, theta.params.k_gate) > 1e-3)
                .collect();
            let jumping: Vec<bool> = (0..n)
                .map(|i| live[i] && logistic(s.logit_u[i]) < p)
                .collect();
            for _ in 0..ROUNDS {
                for (j, k) in [(0, 1), (1, 2), (2, 3)] {
                    if clamp.params[k].is_some() {
                        continue;
                    }
                    let d = joint[j].scale() * gauss(rng);
                    let mut x = s.x;
                    x[k] += d;
                    let (lp_new, ok, a) = match k {
                        1 => {
                            let le: Vec<f64> = s
                                .log_e
                                .iter()
                                .zip(&jumping)
                                .map(|(v, &on)| if on { v - d } else { *v })
                                .collect();
                            let lp_new = target.eval(s.mode, &x, &s.logit_u, &le, &s.log_f);
                            let (ok, a) = metropolis(lp_new - lp, rng);
                            if ok {
                                s.log_e = le;
                            }
                            (lp_new, ok, a)
                        }
                        2 => {
                            let lf: Vec<f64> = s
                                .log_f
                                .iter()
                                .zip(&live)
                                .map(|(v, &on)| if on { v - d } else { *v })
                                .collect();
                            let lp_new = target.eval(s.mode, &x, &s.logit_u, &s.log_e, &lf);
                            let (ok, a) = metropolis(lp_new - lp, rng);
                            if ok {
                                s.log_f = lf;
                            }
                            (lp_new, ok, a)
                        }
                        _ => {
                            let sub: Vec<f64> =
                                (0..n).filter(|&i| live[i]).map(|i| s.logit_u[i]).collect();
                            let (sub, log_jac) = rescale_uniforms(&sub, s.x[3].exp(), x[3].exp());
                            let mut lu = s.logit_u.clone();
                            for (i, v) in (0..n).filter(|&i| live[i]).zip(sub) {
                                lu[i] = v;
                            }
                            let lp_new = target.eval(s.mode, &x, &lu, &s.log_e, &s.log_f);
                            let (ok, a) = metropolis(lp_new - lp + log_jac, rng);
                            if ok {
                                s.logit_u = lu;
                            }
                            (lp_new, ok, a)
                        }
                    };
                    if adapt {
                        joint[j].adapt(a);
                    }
                    if ok {
                        s.x = x;
                        lp = lp_new;
                    }
                }

                // (f) split or merge adjacent jumps
                for _ in 0..SPLITS {
                    let p = jump_probability(s.x[3].exp());
                    let eligible = |lu: &[f64]| {
                        (0..n - 1)
                            .filter(|&k| live[k] && logistic(lu[k]) < p)
                            .collect::<Vec<_>>()
                    };
                    let on = eligible(&s.logit_u);
                    if on.is_empty() {
                        continue_with_identity(target, &s, &mut lp);
                        continue;
                    }
                    let i = on[rng.random_range(0..on.len())];
                    let (lu, le, log_h) = split_merge(&s.logit_u, &s.log_e, i, s.x[3].exp(), rng);
                    let lp_new = target.eval(s.mode, &s.x, &lu, &le, &s.log_f);
                    let n_new = eligible(&lu).len();
                    let log_sel = (on.len() as f64).ln() - (n_new as f64).ln();
                    if metropolis(lp_new - lp + log_h + log_sel, rng).0 {
                        s.logit_u = lu;
                        s.log_e = le;
                        lp = lp_new;
                    }
                }
            }

            // (e) redraw one step's latents from the prior; the prior terms
            // cancel and acceptance is the likelihood ratio
            for _ in 0..REFRESHES {
                let i = rng.random_range(0..n);
                let (mut lu, mut le, mut lf) =
                    (s.logit_u.clone(), s.log_e.clone(), s.log_f.clone());
                let u: f64 = rng.random::<f64>().clamp(1e-300, 1.0 - 1e-16);
                lu[i] = u.ln() - (-u).ln_1p();
                le[i] = crate::degradation::standard_exp(rng).max(1e-300).ln();
                lf[i] = crate::degradation::standard_exp(rng).max(1e-300).ln();
                let log_q = latent_prior(lu[i], le[i], lf[i])
                    - latent_prior(s.logit_u[i], s.log_e[i], s.log_f[i]);
                let lp_new = target.eval(s.mode, &s.x, &lu, &le, &lf);
                if metropolis(lp_new - lp - log_q, rng).0 {
                    s.logit_u = lu;
                    s.log_e = le;
                    s.log_f = lf;
                    lp = lp_new;
                }
            }

            // (g) latent blocks
            for (which, kind) in [Latent::Uniform, Latent::Jump, Latent::Leak]
                .into_iter()
                .enumerate()
            {
                for b in 0..n_blocks {
                    let range = b * LATENT_BLOCK..((b + 1) * LATENT_BLOCK).min(n);
                    let ctl = &mut blocks[which * n_blocks + b];
                    let sc = ctl.scale();
                    let mut arr = match kind {
                        Latent::Uniform => s.logit_u.clone(),
                        Latent::Jump => s.log_e.clone(),
                        Latent::Leak => s.log_f.clone(),
                    };
                    for v in &mut arr[range] {
                        *v += sc * gauss(rng);
                    }
                    let lp_new = match kind {
                        Latent::Uniform => target.eval(s.mode, &s.x, &arr, &s.log_e, &s.log_f),
                        Latent::Jump => target.eval(s.mode, &s.x, &s.logit_u, &arr, &s.log_f),
                        Latent::Leak => target.eval(s.mode, &s.x, &s.logit_u, &s.log_e, &arr),
                    };
                    let (ok, a) = metropolis(lp_new - lp, rng);
                    if adapt {
                        ctl.adapt(a);
                    }
                    if ok {
                        lp = lp_new;
                        match kind {
                            Latent::Uniform => s.logit_u = arr,
                            Latent::Jump => s.log_e = arr,
                            Latent::Leak => s.log_f = arr,
                        }
                    }
                }
            }
        }

        if !adapt {
            thetas.push(target.theta(s.mode, &s.x));
        }
    }
    thetas
}

/// Move every `u_i` with the jump threshold `p = 1 - exp(-lambda)` so that
/// `u_i < p` is preserved: below the threshold `u` scales by `p'/p`, above it
/// `1 - u` scales by `(1-p')/(1-p)`. Returns the new logits and the
/// log-Jacobian of the map in logit coordinates.
fn rescale_uniforms(logit_u: &[f64], lambda: f64, lambda_new: f64) -> (Vec<f64>, f64) {
    let p = jump_probability(lambda);
    let p_new = jump_probability(lambda_new);
    // 1 - p = exp(-lambda), computed without cancellation
    let q = (-lambda).exp();
    let q_new = (-lambda_new).exp();
    let mut log_jac = 0.0;
    let out = logit_u
        .iter()
        .map(|&l| {
            let u = logistic(l);
            let (a, b, ratio) = if u < p {
                let a = u * p_new / p;
                (a, 1.0 - a, p_new / p)
            } else {
                let b = logistic(-l) * q_new / q;
                (1.0 - b, b, q_new / q)
            };
            let l_new = a.ln() - b.ln();
            log_jac += ratio.ln() + ln_logistic_slope(l) - ln_logistic_slope(l_new);
            l_new
        })
        .collect();
    (out, log_jac)
}

/// Probability that a latent redrawn around the onset is a jump step.
const WINDOW_JUMP_RATE: f64 = 0.1;

/// Latents for one step of the onset window: mostly quiet `u`, prior sizes.
fn window_draw(p: f64, rng: &mut SimRng) -> (f64, f64, f64) {
    let v = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let lu = if rng.random::<f64>() < WINDOW_JUMP_RATE {
        let u = p * v;
        u.ln() - (-u).ln_1p()
    } else {
        let b = (1.0 - p) * v;
        (-b).ln_1p() - b.ln()
    };
    let le = crate::degradation::standard_exp(rng)
        .max(f64::MIN_POSITIVE)
        .ln();
    let lf = crate::degradation::standard_exp(rng)
        .max(f64::MIN_POSITIVE)
        .ln();
    (lu, le, lf)
}

/// Log density of [`window_draw`] in sampler coordinates.
fn window_log_q(p: f64, logit_u: f64, log_e: f64, log_f: f64) -> f64 {
    let du = if logistic(logit_u) < p {
        (WINDOW_JUMP_RATE / p).ln()
    } else {
        ((1.0 - WINDOW_JUMP_RATE) / (1.0 - p)).ln()
    };
    du + ln_logistic_slope(logit_u) + log_e - log_e.exp() + log_f - log_f.exp()
}

/// Re-evaluates the current state so a skipped proposal still costs one call.
fn continue_with_identity(target: &mut Target, s: &State, lp: &mut f64) {
    *lp = target.eval_state(s);
}

/// Split a jump at `i` across step `i + 1`, or merge two adjacent jumps.
///
/// `i` must be a jump step (`u_i < p`). With `i + 1` quiet the jump size
/// `e_i` is divided by a uniform fraction and `u_{i+1}` drawn below `p`; with
/// `i + 1` jumping the sizes are summed and step `i + 1` gets fresh quiet
/// latents. Returns the new arrays and the log Hastings term excluding the
/// target ratio and the pair-selection probabilities.
fn split_merge(
    logit_u: &[f64],
    log_e: &[f64],
    i: usize,
    lambda: f64,
    rng: &mut SimRng,
) -> (Vec<f64>, Vec<f64>, f64) {
    let p = jump_probability(lambda);
    let q = (-lambda).exp();
    let (mut lu, mut le) = (logit_u.to_vec(), log_e.to_vec());
    let j = i + 1;
    let (ei, ej) = (log_e[i].exp(), log_e[j].exp());
    // log |d(u, e) / d(logit u, log e)| of the changed coordinates
    let jac = |lu: &[f64], le: &[f64]| ln_logistic_slope(lu[j]) + le[i] + le[j];
    let before = jac(logit_u, log_e);
    let extra = if logistic(logit_u[j]) >= p {
        let w: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
        let u = p * rng.random::<f64>().max(f64::MIN_POSITIVE);
        lu[j] = u.ln() - (-u).ln_1p();
        le[i] = log_e[i] + w.ln();
        le[j] = log_e[i] + (-w).ln_1p();
        -ej - q.ln() + p.ln() + log_e[i]
    } else {
        let b = q * rng.random::<f64>().max(f64::MIN_POSITIVE);
        lu[j] = (-b).ln_1p() - b.ln();
        let aux = crate::degradation::standard_exp(rng).max(f64::MIN_POSITIVE);
        le[i] = (ei + ej).ln();
        le[j] = aux.ln();
        aux - p.ln() + q.ln() - (ei + ej).ln()
    };
    let log_h = extra - (jac(&lu, &le) - before);
    (lu, le, log_h)
}

pub fn run_mcmc(
    obs: &ObservationSeries,
    cond: &OperatingConditions,
    spec: &PriorSpec,
    cfg: &ChainConfig,
) -> Result<PosteriorEnsemble> {
    run_clamped(obs, cond, spec, cfg, &Clamp::default())
}

/// [`run_mcmc`] with the clamped parts of the state held at their given
/// values.
pub fn run_clamped(
    obs: &ObservationSeries,
    cond: &OperatingConditions,
    spec: &PriorSpec,
    cfg: &ChainConfig,
    clamp: &Clamp,
) -> Result<PosteriorEnsemble> {
    cfg.validate()?;
    cond.validate()?;
    spec.validate()?;
    obs.validate()?;
    if obs.len() != cond.horizon || spec.horizon != cond.horizon {
        return Err(Error::DimensionMismatch {
            what: "record length / prior horizon",
            expected: cond.horizon,
            actual: if obs.len() != cond.horizon {
                obs.len()
            } else {
                spec.horizon
            },
        });
    }
    if !(cond.noise_temp > 0.0 && cond.noise_flow > 0.0) {
        return Err(Error::Domain(
            "MCMC needs strictly positive noise levels".into(),
        ));
    }
    if let Some((u, e, f)) = &clamp.latents {
        for (what, v) in [("clamped uniforms", u), ("clamped jumps", e), ("clamped leak increments", f)] {
            if v.len() != cond.horizon {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: cond.horizon,
                    actual: v.len(),
                });
            }
        }
        let in_unit = u.iter().all(|&x| x > 0.0 && x < 1.0);
        if !in_unit || !e.iter().chain(f).all(|&x| x > 0.0 && x.is_finite()) {
            return Err(Error::Domain("clamped latents out of range".into()));
        }
    }
    if clamp.params.iter().flatten().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::Domain("clamped parameters must be positive".into()));
    }

    let start = Instant::now();
    let mut warm = clamp
        .latents
        .is_none()
        .then(|| WarmStart::estimate(obs, cond, spec));
    let mut scan_calls = 0;
    if let Some(w) = warm.as_mut().filter(|_| clamp.params[0].is_none()) {
        let mut target = Target {
            obs,
            cond,
            spec,
            calls: 0,
            scratch: Vec::new(),
        };
        let mut rng = stream(cfg.rng_seed, ONSET_SCAN_STREAM);
        let scan_clamp = Clamp {
            mode: Some(clamp.mode.unwrap_or(FailureMode::Both)),
            ..clamp.clone()
        };
        let scores = WarmStart::onset_grid(spec)
            .into_iter()
            .map(|tau| {
                let s = initial_state(&target, &scan_clamp, Some((&*w, tau)), &mut rng);
                (tau, target.eval_state(&s))
            })
            .collect();
        w.set_scores(scores);
        scan_calls = target.calls;
    }
    let per_chain: Vec<(Vec<DegradationTheta>, u64)> = (0..cfg.n_chains)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream(cfg.rng_seed, c as u64);
            let mut target = Target {
                obs,
                cond,
                spec,
                calls: 0,
                scratch: Vec::new(),
            };
            let thetas = run_chain(&mut target, cfg, clamp, warm.as_ref(), &mut rng);
            (thetas, target.calls)
        })
        .collect();
    let wall_time = start.elapsed().as_secs_f64();

    let mut diagnostics_out = Vec::with_capacity(4);
    for (k, name) in PARAM_NAMES.iter().enumerate() {
        let chains: Vec<Vec<f64>> = per_chain
            .iter()
            .map(|(t, _)| t.iter().map(|th| th.continuous()[k]).collect())
            .collect();
        let (r_hat, ess) = match diagnostics::diagnostics(&chains) {
            Ok((r, e)) => (Some(r), Some(e)),
            Err(e) => {
                log::warn!("diagnostics undefined for {name}: {e}");
                (None, None)
            }
        };
        diagnostics_out.push(ParamDiagnostics {
            name: name.to_string(),
            r_hat,
            ess,
        });
    }

    let calls = scan_calls + per_chain.iter().map(|(_, c)| c).sum::<u64>();
    let mut thetas = Vec::with_capacity(cfg.n_chains * cfg.n_samples);
    let mut chain_ids = Vec::with_capacity(cfg.n_chains * cfg.n_samples);
    for (c, (t, _)) in per_chain.into_iter().enumerate() {
        chain_ids.extend(std::iter::repeat_n(c, t.len()));
        thetas.extend(t);
    }
    let mut ens = PosteriorEnsemble::from_draws(thetas, chain_ids, None);
    ens.diagnostics = diagnostics_out;
    ens.wall_time = wall_time;
    ens.simulator_call_count = calls;
    Ok(ens)
}
