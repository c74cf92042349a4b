//! Failure-mode classifier: summary features to softmax probabilities.

use serde::{Deserialize, Serialize};

use super::mlp::{Mlp, MlpCache};
use crate::rng::SimRng;

pub const N_MODES: usize = 4;
pub const HIDDEN: usize = 50;

/// Numerically stable softmax.
pub fn softmax(logits: &[f64; N_MODES]) -> [f64; N_MODES] {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: [f64; N_MODES] = std::array::from_fn(|i| (logits[i] - m).exp());
    let z: f64 = e.iter().sum();
    e.map(|v| v / z)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeClassifier {
    pub net: Mlp,
}

impl ModeClassifier {
    pub fn new(input_dim: usize, rng: &mut SimRng) -> Self {
        Self {
            net: Mlp::new(&[input_dim, HIDDEN, HIDDEN, N_MODES], false, rng),
        }
    }

    pub fn logits(&self, s: &[f64]) -> [f64; N_MODES] {
        let out = self.net.eval(s);
        std::array::from_fn(|i| out[i])
    }

    pub fn probabilities(&self, s: &[f64]) -> [f64; N_MODES] {
        softmax(&self.logits(s))
    }

    /// `-weight * ln softmax(logits)[label]`, accumulating parameter
    /// gradients into `grad`.
    pub fn cross_entropy_backward(&self, s: &[f64], label: usize, weight: f64, grad: &mut [f64]) -> f64 {
        let mut cache = MlpCache::default();
        let out = self.net.forward(s, &mut cache);
        let logits: [f64; N_MODES] = std::array::from_fn(|i| out[i]);
        let p = softmax(&logits);
        let g: Vec<f64> = (0..N_MODES)
            .map(|i| weight * (p[i] - if i == label { 1.0 } else { 0.0 }))
            .collect();
        self.net.backward(&cache, &g, grad);
        -weight * p[label].ln()
    }

    pub fn cross_entropy(&self, s: &[f64], label: usize) -> f64 {
        -self.probabilities(s)[label].ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn softmax_sums_to_one_and_ignores_shifts(
            l in prop::array::uniform4(-30.0f64..30.0),
            c in -500.0f64..500.0,
        ) {
            let p = softmax(&l);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(p.iter().all(|&v| v > 0.0));
            let q = softmax(&l.map(|v| v + c));
            for i in 0..N_MODES {
                prop_assert!((p[i] - q[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let clf = ModeClassifier::new(5, &mut stream(3, 0));
        let s = [0.2, -1.0, 0.7, 1.5, -0.3];
        let mut g = vec![0.0; clf.net.params.len()];
        let v = clf.cross_entropy_backward(&s, 2, 1.0, &mut g);
        assert!((v - clf.cross_entropy(&s, 2)).abs() < 1e-12);
        let h = 1e-6;
        for k in (0..g.len()).step_by(11) {
            let mut p = clf.clone();
            let mut m = clf.clone();
            p.net.params[k] += h;
            m.net.params[k] -= h;
            let fd = (p.cross_entropy(&s, 2) - m.cross_entropy(&s, 2)) / (2.0 * h);
            assert!((g[k] - fd).abs() <= 1e-3 * g[k].abs().max(fd.abs()) + 1e-9);
        }
    }
}
