//! Data-driven chain initialization.
//!
//! The fouling factor and leak fraction at each step are recovered by
//! inverting the steady-state model on the measured record, smoothed into
//! non-decreasing paths, and a hinge fit locates the onset. Chains start from
//! latents that reproduce these paths, with jitter, instead of from the prior:
//! a chain whose onset starts far from the data's changepoint explains the
//! accumulated fouling with one large jump and cannot leave that state by
//! local moves.

use rand::Rng;

use crate::degradation::{jump_probability, sigmoid_gate, standard_exp, LEAK_MAX};
use crate::observation::{ObservationSeries, OperatingConditions};
use crate::prior::{sample_prior, PriorSpec};
use crate::rng::SimRng;
use crate::thermal::effectiveness_unchecked;

/// Share of the onset proposal spread uniformly over all cells.
const ONSET_FLOOR: f64 = 0.1;

/// Smoothed per-step degradation estimates from a record.
#[derive(Debug, Clone)]
pub(crate) struct WarmStart {
    /// Hinge-fit onset of the dominant signal.
    pub tau: f64,
    /// Candidate onsets with their log target scores, filled by the sampler.
    pub onset_scores: Vec<(f64, f64)>,
    /// Log probability of each unit onset cell `[lo + k, lo + k + 1)` under
    /// the scan proposal; empty until [`WarmStart::set_scores`].
    pub onset_log_q: Vec<f64>,
    /// Non-negative increments of the fouling factor.
    pub fouling_steps: Vec<f64>,
    /// Non-negative increments of `-ln(1 - L / LEAK_MAX)`.
    pub leak_steps: Vec<f64>,
}

/// Pool-adjacent-violators fit of a non-decreasing sequence.
pub(crate) fn isotonic(y: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(y.len());
    for &v in y {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (m2, n2) = blocks[blocks.len() - 1];
            let (m1, n1) = blocks[blocks.len() - 2];
            if m1 <= m2 {
                break;
            }
            blocks.pop();
            let n = n1 + n2;
            *blocks.last_mut().unwrap() = ((m1 * n1 as f64 + m2 * n2 as f64) / n as f64, n);
        }
    }
    blocks
        .iter()
        .flat_map(|&(m, n)| std::iter::repeat_n(m, n))
        .collect()
}

/// Least-squares fit of `a + b max(0, t - tau)` over half-step onsets.
/// Returns `(tau, reduction in squared error over a constant fit)`.
pub(crate) fn hinge_fit(y: &[f64], tau_bounds: (f64, f64)) -> (f64, f64) {
    let n = y.len();
    let mean = y.iter().sum::<f64>() / n as f64;
    let sse0: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    let mut best = (tau_bounds.0, 0.0);
    let mut tau = tau_bounds.0;
    while tau <= tau_bounds.1 {
        let h: Vec<f64> = (1..=n).map(|t| (t as f64 - tau).max(0.0)).collect();
        let hm = h.iter().sum::<f64>() / n as f64;
        let sxy: f64 = h.iter().zip(y).map(|(a, b)| (a - hm) * (b - mean)).sum();
        let sxx: f64 = h.iter().map(|a| (a - hm) * (a - hm)).sum();
        if sxx > 0.0 && sxy > 0.0 {
            let gain = sxy * sxy / sxx;
            if gain > best.1 {
                best = (tau, gain);
            }
        }
        tau += 0.5;
    }
    (best.0, best.1 / sse0.max(f64::MIN_POSITIVE))
}

/// NTU giving effectiveness `eps` at capacity ratio `r`, by bisection.
fn invert_effectiveness(eps: f64, r: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, 60.0);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if effectiveness_unchecked(mid, r) < eps {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn increments(path: &[f64]) -> Vec<f64> {
    let mut prev = 0.0;
    path.iter()
        .map(|&v| {
            let d = v - prev;
            prev = v;
            d.max(0.0)
        })
        .collect()
}

impl WarmStart {
    pub fn estimate(obs: &ObservationSeries, cond: &OperatingConditions, spec: &PriorSpec) -> Self {
        let cp_h = cond.hot_inlet.specific_heat;
        let c_cold = cond.cold_inlet.capacity_rate();
        let th_in = cond.hot_inlet.inlet_temp;
        let tc_in = cond.cold_inlet.inlet_temp;
        let m_in = cond.hot_inlet.mass_flow;

        let mut fouling = Vec::with_capacity(obs.len());
        let mut leak = Vec::with_capacity(obs.len());
        for i in 0..obs.len() {
            let lf =
                ((obs.m_hot_in[i] - obs.m_hot_out[i]) / obs.m_hot_in[i]).clamp(0.0, 0.9 * LEAK_MAX);
            leak.push(-(1.0 - lf / LEAK_MAX).ln());

            let c_hot = m_in * (1.0 - lf) * cp_h;
            // inverse-variance blend of the two duty estimates
            let q_h = c_hot * (th_in - obs.t_hot_out[i]);
            let q_c = c_cold * (obs.t_cold_out[i] - tc_in);
            let (w_h, w_c) = (1.0 / (c_hot * c_hot), 1.0 / (c_cold * c_cold));
            let q = (w_h * q_h + w_c * q_c) / (w_h + w_c);
            let (c_min, c_max) = (c_hot.min(c_cold), c_hot.max(c_cold));
            let eps = (q / (c_min * (th_in - tc_in))).clamp(1e-6, 1.0 - 1e-6);
            let ua = invert_effectiveness(eps, c_min / c_max) * c_min;
            fouling.push((cond.ua_clean / ua.max(1e-9) - 1.0).max(0.0));
        }
        let fouling = isotonic(&fouling);
        let leak = isotonic(&leak);

        let bounds = spec.tau_bounds();
        let (tau_f, gain_f) = hinge_fit(&fouling, bounds);
        let (tau_l, gain_l) = hinge_fit(&leak, bounds);
        let tau = if gain_f >= gain_l { tau_f } else { tau_l };
        Self {
            tau,
            onset_scores: Vec::new(),
            onset_log_q: Vec::new(),
            fouling_steps: increments(&fouling),
            leak_steps: increments(&leak),
        }
    }

    /// Candidate onsets for the scan: unit spacing inside the prior support.
    pub fn onset_grid(spec: &PriorSpec) -> Vec<f64> {
        let (lo, hi) = spec.tau_bounds();
        let mut grid = Vec::new();
        let mut t = lo + 0.5;
        while t < hi {
            grid.push(t);
            t += 1.0;
        }
        grid
    }

    /// Store scan scores and derive the onset proposal: the normalized scores
    /// mixed with a uniform floor.
    pub fn set_scores(&mut self, scores: Vec<(f64, f64)>) {
        let top = scores.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = scores.iter().map(|s| (s.1 - top).exp()).collect();
        let total: f64 = w.iter().sum();
        let floor = ONSET_FLOOR / w.len() as f64;
        self.onset_log_q = w
            .iter()
            .map(|v| ((1.0 - ONSET_FLOOR) * v / total + floor).ln())
            .collect();
        self.onset_scores = scores;
    }

    /// An onset drawn from the scan scores with sub-step jitter, or the hinge
    /// estimate when no scan was run.
    pub fn pick_onset(&self, spec: &PriorSpec, rng: &mut SimRng) -> f64 {
        if self.onset_scores.is_empty() {
            return self.tau;
        }
        let top = self
            .onset_scores
            .iter()
            .map(|s| s.1)
            .fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = self
            .onset_scores
            .iter()
            .map(|s| (s.1 - top).exp())
            .collect();
        let mut r = rng.random::<f64>() * w.iter().sum::<f64>();
        let mut k = 0;
        while k + 1 < w.len() && r >= w[k] {
            r -= w[k];
            k += 1;
        }
        let (lo, hi) = spec.tau_bounds();
        (self.onset_scores[k].0 + rng.random_range(-0.5..0.5)).clamp(lo + 0.25, hi - 0.25)
    }

    /// A starting point with onset `tau`: `(mode index, [tau, beta_f, beta_l, lambda], u, e, f)`.
    #[allow(clippy::type_complexity)]
    pub fn draw(
        &self,
        spec: &PriorSpec,
        tau: f64,
        rng: &mut SimRng,
    ) -> (usize, [f64; 4], Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = self.fouling_steps.len();
        let prior = sample_prior(spec, rng);
        let gate: Vec<f64> = (1..=n)
            .map(|t| sigmoid_gate(t as f64, tau, spec.k_gate))
            .collect();
        let active: Vec<usize> = (0..n).filter(|&i| gate[i] > 0.5).collect();

        let jumps: Vec<usize> = active
            .iter()
            .copied()
            .filter(|&i| self.fouling_steps[i] > 0.0)
            .collect();
        let (beta_f, lambda) = if jumps.is_empty() {
            (prior.params.beta_f, prior.params.lambda)
        } else {
            let size = jumps
                .iter()
                .map(|&i| self.fouling_steps[i] / gate[i])
                .sum::<f64>()
                / jumps.len() as f64;
            let frac = (jumps.len() as f64 / active.len() as f64).clamp(0.05, 0.95);
            (size.max(1e-6), -(1.0 - frac).ln())
        };
        let beta_l = if active.is_empty() {
            prior.params.beta_l
        } else {
            let total: f64 = active.iter().map(|&i| self.leak_steps[i] / gate[i]).sum();
            (total / active.len() as f64).max(prior.params.beta_l * 0.1)
        };

        let p = jump_probability(lambda);
        let mut u = Vec::with_capacity(n);
        let mut e = Vec::with_capacity(n);
        let mut f = Vec::with_capacity(n);
        for i in 0..n {
            let w: f64 = rng.random_range(0.1..0.9);
            if gate[i] > 0.5 {
                if self.fouling_steps[i] > 0.0 {
                    u.push(p * w);
                    e.push((self.fouling_steps[i] / gate[i] / beta_f).max(1e-3));
                } else {
                    u.push(p + (1.0 - p) * w);
                    e.push(standard_exp(rng).max(1e-12));
                }
                f.push((self.leak_steps[i] / gate[i] / beta_l).max(0.05));
            } else {
                u.push(rng.random::<f64>().clamp(1e-12, 1.0 - 1e-12));
                e.push(standard_exp(rng).max(1e-12));
                f.push(standard_exp(rng).max(1e-12));
            }
        }
        (prior.mode.index(), [tau, beta_f, beta_l, lambda], u, e, f)
    }
}

/// A cell index drawn from per-cell log probabilities.
pub(crate) fn sample_cell(log_q: &[f64], rng: &mut SimRng) -> usize {
    let mut r = rng.random::<f64>();
    for (k, lq) in log_q.iter().enumerate() {
        r -= lq.exp();
        if r < 0.0 {
            return k;
        }
    }
    log_q.len() - 1
}

/// Log density of a unit-cell proposal at offset `d = tau - lo`.
pub(crate) fn cell_log_density(log_q: &[f64], d: f64) -> f64 {
    log_q[(d.max(0.0) as usize).min(log_q.len() - 1)]
}

/// Onset proposal after warmup: mostly the chain's smoothed warmup
/// histogram, mixed with the scan proposal and a uniform floor.
pub(crate) fn blend_onset_proposal(scan_log_q: &[f64], counts: &[f64]) -> Vec<f64> {
    let n = counts.len();
    let mut smooth = vec![0.0; n];
    for k in 0..n {
        for (j, w) in [(k.wrapping_sub(1), 0.25), (k, 0.5), (k + 1, 0.25)] {
            if j < n {
                smooth[j] += w * counts[k];
            }
        }
    }
    let total: f64 = smooth.iter().sum();
    (0..n)
        .map(|k| {
            let hist = if total > 0.0 {
                smooth[k] / total
            } else {
                1.0 / n as f64
            };
            (0.6 * hist + 0.3 * scan_log_q[k].exp() + 0.1 / n as f64).ln()
        })
        .collect()
}
