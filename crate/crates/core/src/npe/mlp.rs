//! Fully connected ReLU network with explicit backpropagation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::SimRng;

/// Dense layers `sizes[0] -> sizes[1] -> ... -> sizes[n]`, ReLU between
/// layers and a linear output. Parameters are stored flat, layer by layer,
/// each as a row-major `out x in` weight matrix followed by the bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub params: Vec<f64>,
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct MlpCache {
    /// Post-activation values per layer, `acts[0]` being the input.
    acts: Vec<Vec<f64>>,
}

impl Mlp {
    pub fn n_params_for(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Uniform `±1/sqrt(fan_in)` initialization; the output layer is zeroed
    /// when `zero_output` is set.
    pub fn new(sizes: &[usize], zero_output: bool, rng: &mut SimRng) -> Self {
        let mut params = Vec::with_capacity(Self::n_params_for(sizes));
        let last = sizes.len() - 2;
        for (l, w) in sizes.windows(2).enumerate() {
            let bound = 1.0 / (w[0] as f64).sqrt();
            for _ in 0..w[0] * w[1] + w[1] {
                params.push(if zero_output && l == last {
                    0.0
                } else {
                    rng.random_range(-bound..bound)
                });
            }
        }
        Self {
            sizes: sizes.to_vec(),
            params,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("non-empty")
    }

    /// Output for `x`, recording activations in `cache`.
    pub fn forward(&self, x: &[f64], cache: &mut MlpCache) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.input_dim());
        cache.acts.clear();
        cache.acts.push(x.to_vec());
        let n_layers = self.sizes.len() - 1;
        let mut off = 0;
        for l in 0..n_layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            off += n_in * n_out + n_out;
            let input = cache.acts.last().expect("input pushed");
            let mut out: Vec<f64> = (0..n_out)
                .map(|o| b[o] + w[o * n_in..(o + 1) * n_in].iter().zip(input).map(|(a, v)| a * v).sum::<f64>())
                .collect();
            if l + 1 < n_layers {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            cache.acts.push(out);
        }
        cache.acts.pop().expect("output")
    }

    /// Output without keeping activations.
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x, &mut MlpCache::default())
    }

    /// Accumulate parameter gradients of a scalar loss into `grad` given
    /// `d loss / d output`; returns `d loss / d input`. `cache` must come from
    /// the forward pass on the same input.
    pub fn backward(&self, cache: &MlpCache, grad_out: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let n_layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for l in 0..n_layers {
            offsets.push(off);
            off += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
        }
        let mut delta = grad_out.to_vec();
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = offsets[l];
            let input = &cache.acts[l];
            let w = &self.params[off..off + n_in * n_out];
            let (gw, gb) = grad[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            let mut prev = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                let row = o * n_in;
                for i in 0..n_in {
                    gw[row + i] += d * input[i];
                    prev[i] += d * w[row + i];
                }
            }
            if l > 0 {
                // ReLU derivative: the stored activation is positive where the unit was active
                for (p, a) in prev.iter_mut().zip(input) {
                    if *a <= 0.0 {
                        *p = 0.0;
                    }
                }
            }
            delta = prev;
        }
        delta
    }
}
