//! Conditional coupling flow of rational-quadratic splines.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::mlp::{Mlp, MlpCache};
use super::spline::{self, raw_len, BINS};
use crate::rng::SimRng;

/// Dimension of the continuous parameter vector.
pub const DIM: usize = 4;
pub const N_LAYERS: usize = 5;
pub const HIDDEN: usize = 50;

/// Masks per layer: `true` coordinates pass through and condition the rest.
/// Parity masks alternate with half masks so every pair of coordinates is
/// split by some layer.
pub const MASKS: [[bool; DIM]; N_LAYERS] = [
    [true, false, true, false],
    [false, true, false, true],
    [true, true, false, false],
    [false, false, true, true],
    [true, false, true, false],
];

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    pub mask: [bool; DIM],
    pub net: Mlp,
}

impl Coupling {
    fn kept(&self) -> impl Iterator<Item = usize> + '_ {
        (0..DIM).filter(|&i| self.mask[i])
    }

    fn moved(&self) -> impl Iterator<Item = usize> + '_ {
        (0..DIM).filter(|&i| !self.mask[i])
    }

    fn conditioner_input(&self, z: &[f64; DIM], s: &[f64]) -> Vec<f64> {
        self.kept().map(|i| z[i]).chain(s.iter().copied()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineFlow {
    pub layers: Vec<Coupling>,
    pub context_dim: usize,
}

/// Per-layer state from a forward pass, kept for backpropagation.
struct LayerTrace {
    cache: MlpCache,
    evals: Vec<spline::SplineEval>,
}

fn base_log_density(z: &[f64; DIM]) -> f64 {
    -0.5 * z.iter().map(|v| v * v).sum::<f64>() - 0.5 * DIM as f64 * LN_2PI
}

impl SplineFlow {
    /// A flow whose conditioners output zeros, so every layer is the identity.
    pub fn new(context_dim: usize, rng: &mut SimRng) -> Self {
        let layers = MASKS
            .iter()
            .map(|&mask| {
                let n_kept = mask.iter().filter(|&&m| m).count();
                let sizes = [n_kept + context_dim, HIDDEN, HIDDEN, (DIM - n_kept) * raw_len(BINS)];
                Coupling {
                    mask,
                    net: Mlp::new(&sizes, true, rng),
                }
            })
            .collect();
        Self { layers, context_dim }
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.net.params.len()).sum()
    }

    /// Data-to-base map with the accumulated log |det J|.
    pub fn forward(&self, x: &[f64; DIM], s: &[f64]) -> ([f64; DIM], f64) {
        let mut z = *x;
        let mut logdet = 0.0;
        for layer in &self.layers {
            let raw = layer.net.eval(&layer.conditioner_input(&z, s));
            let r = raw_len(BINS);
            for (j, i) in layer.moved().enumerate() {
                let (y, ld) = spline::forward(z[i], &raw[j * r..(j + 1) * r]);
                z[i] = y;
                logdet += ld;
            }
        }
        (z, logdet)
    }

    /// Base-to-data map, the inverse of [`SplineFlow::forward`].
    pub fn inverse(&self, z: &[f64; DIM], s: &[f64]) -> [f64; DIM] {
        let mut x = *z;
        for layer in self.layers.iter().rev() {
            let raw = layer.net.eval(&layer.conditioner_input(&x, s));
            let r = raw_len(BINS);
            for (j, i) in layer.moved().enumerate() {
                x[i] = spline::inverse(x[i], &raw[j * r..(j + 1) * r]).0;
            }
        }
        x
    }

    pub fn log_prob(&self, x: &[f64; DIM], s: &[f64]) -> f64 {
        let (z, logdet) = self.forward(x, s);
        base_log_density(&z) + logdet
    }

    /// Draw from the flow conditioned on `s`.
    pub fn sample(&self, s: &[f64], rng: &mut SimRng) -> [f64; DIM] {
        let z: [f64; DIM] = std::array::from_fn(|_| StandardNormal.sample(rng));
        self.inverse(&z, s)
    }

    /// `-weight * log_prob(x | s)`, accumulating its parameter gradients into
    /// `grads` (one slice per layer).
    pub fn nll_backward(&self, x: &[f64; DIM], s: &[f64], weight: f64, grads: &mut [Vec<f64>]) -> f64 {
        let r = raw_len(BINS);
        let mut z = *x;
        let mut logdet = 0.0;
        let mut traces = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let mut cache = MlpCache::default();
            let raw = layer.net.forward(&layer.conditioner_input(&z, s), &mut cache);
            let mut evals = Vec::with_capacity(DIM);
            for (j, i) in layer.moved().enumerate() {
                let ev = spline::forward_with_grad(z[i], &raw[j * r..(j + 1) * r]);
                z[i] = ev.y;
                logdet += ev.logdet;
                evals.push(ev);
            }
            traces.push(LayerTrace { cache, evals });
        }
        let value = -weight * (base_log_density(&z) + logdet);

        // d(-log N(z))/dz = z
        let mut g: [f64; DIM] = std::array::from_fn(|i| weight * z[i]);
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let trace = &traces[l];
            let mut g_in = [0.0; DIM];
            let mut g_raw = vec![0.0; layer.net.output_dim()];
            for (j, i) in layer.moved().enumerate() {
                let ev = &trace.evals[j];
                g_in[i] = g[i] * ev.dy_dx - weight * ev.dlogdet_dx;
                for k in 0..r {
                    g_raw[j * r + k] = g[i] * ev.dy_draw[k] - weight * ev.dlogdet_draw[k];
                }
            }
            let g_cond = layer.net.backward(&trace.cache, &g_raw, &mut grads[l]);
            for (j, i) in layer.kept().enumerate() {
                g_in[i] = g[i] + g_cond[j];
            }
            g = g_in;
        }
        value
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    /// A flow with non-trivial weights in every layer.
    pub(crate) fn random_flow(seed: u64, context: usize) -> SplineFlow {
        let mut rng = stream(seed, 0);
        let mut flow = SplineFlow::new(context, &mut rng);
        for layer in &mut flow.layers {
            for p in &mut layer.net.params {
                if *p == 0.0 {
                    *p = rng.random_range(-0.2..0.2);
                }
            }
        }
        flow
    }

    #[test]
    fn identity_at_initialization() {
        let mut rng = stream(1, 0);
        let flow = SplineFlow::new(3, &mut rng);
        let x = [0.3, -1.2, 2.5, 0.0];
        let s = [1.0, -2.0, 0.5];
        let want = -0.5 * x.iter().map(|v| v * v).sum::<f64>() - 2.0 * (2.0 * std::f64::consts::PI).ln();
        assert!((flow.log_prob(&x, &s) - want).abs() < 1e-12);
        assert_eq!(flow.forward(&x, &s).0, x);
    }

    #[test]
    fn inverse_undoes_forward() {
        let mut rng = stream(2, 0);
        for seed in 0..20 {
            let flow = random_flow(seed, 3);
            let x: [f64; DIM] = std::array::from_fn(|_| rng.random_range(-4.0..4.0));
            let s: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let (z, _) = flow.forward(&x, &s);
            let back = flow.inverse(&z, &s);
            for i in 0..DIM {
                assert!((back[i] - x[i]).abs() < 1e-6, "{back:?} vs {x:?}");
            }
        }
    }

    /// Determinant of a 4x4 matrix by cofactor expansion.
    fn det4(m: &[[f64; 4]; 4]) -> f64 {
        let det3 = |r: [usize; 3], c: [usize; 3]| {
            m[r[0]][c[0]] * (m[r[1]][c[1]] * m[r[2]][c[2]] - m[r[1]][c[2]] * m[r[2]][c[1]])
                - m[r[0]][c[1]] * (m[r[1]][c[0]] * m[r[2]][c[2]] - m[r[1]][c[2]] * m[r[2]][c[0]])
                + m[r[0]][c[2]] * (m[r[1]][c[0]] * m[r[2]][c[1]] - m[r[1]][c[1]] * m[r[2]][c[0]])
        };
        let cols = [[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]];
        (0..4)
            .map(|j| {
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                sign * m[0][j] * det3([1, 2, 3], cols[j])
            })
            .sum()
    }

    #[test]
    fn log_det_matches_finite_difference_jacobian() {
        let mut rng = stream(3, 0);
        let h = 1e-6;
        for seed in 0..10 {
            let flow = random_flow(100 + seed, 2);
            let x: [f64; DIM] = std::array::from_fn(|_| rng.random_range(-3.0..3.0));
            let s = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let (_, logdet) = flow.forward(&x, &s);
            let mut jac = [[0.0; 4]; 4];
            for j in 0..DIM {
                let mut xp = x;
                let mut xm = x;
                xp[j] += h;
                xm[j] -= h;
                let (zp, _) = flow.forward(&xp, &s);
                let (zm, _) = flow.forward(&xm, &s);
                for i in 0..DIM {
                    jac[i][j] = (zp[i] - zm[i]) / (2.0 * h);
                }
            }
            let fd = det4(&jac).abs();
            let analytic = logdet.exp();
            assert!((analytic - fd).abs() / fd < 1e-4, "seed {seed}: {analytic} vs {fd}");
        }
    }

    #[test]
    fn nll_gradient_matches_finite_differences() {
        let mut rng = stream(4, 0);
        let flow = random_flow(7, 2);
        let x: [f64; DIM] = std::array::from_fn(|_| rng.random_range(-3.0..3.0));
        let s = [0.4, -0.9];
        let mut grads: Vec<Vec<f64>> = flow.layers.iter().map(|l| vec![0.0; l.net.params.len()]).collect();
        let v = flow.nll_backward(&x, &s, 0.5, &mut grads);
        assert!((v + 0.5 * flow.log_prob(&x, &s)).abs() < 1e-12);
        let h = 1e-6;
        for l in 0..N_LAYERS {
            for k in (0..flow.layers[l].net.params.len()).step_by(37) {
                let mut p = flow.clone();
                let mut m = flow.clone();
                p.layers[l].net.params[k] += h;
                m.layers[l].net.params[k] -= h;
                let fd = -0.5 * (p.log_prob(&x, &s) - m.log_prob(&x, &s)) / (2.0 * h);
                let a = grads[l][k];
                assert!((a - fd).abs() <= 1e-3 * a.abs().max(fd.abs()) + 1e-8, "layer {l} param {k}: {a} vs {fd}");
            }
        }
    }
}
