//! Dense feed-forward network with tanh hidden layers and a linear head.
//!
//! Parameters are stored in one flat vector (per layer: row-major weights,
//! then bias) so the optimizer and finite-difference checks can treat the
//! network as a plain parameter vector.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Layer inputs recorded during a forward pass; `activations[0]` is the
/// network input and the last entry is the output.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("non-empty cache")
    }
}

pub fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    /// Uniform Glorot initialization; the output layer is scaled by
    /// `output_gain` (small gains start the policy near uniform).
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], output_gain: f64, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let mut params = Vec::with_capacity(param_count(sizes));
        let last = sizes.len() - 2;
        for (l, w) in sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let gain = if l == last { output_gain } else { 1.0 };
            for _ in 0..fan_in * fan_out {
                params.push(gain * rng.random_range(-limit..=limit));
            }
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Self {
            sizes: sizes.to_vec(),
            params,
        }
    }

    pub fn from_params(sizes: Vec<usize>, params: Vec<f64>) -> Option<Self> {
        (sizes.len() >= 2 && param_count(&sizes) == params.len()).then_some(Self { sizes, params })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("validated sizes")
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    fn layer(&self, offset: usize, fan_in: usize, fan_out: usize, x: &[f64], hidden: bool) -> Vec<f64> {
        let w = &self.params[offset..offset + fan_in * fan_out];
        let b = &self.params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
        (0..fan_out)
            .map(|j| {
                let row = &w[j * fan_in..(j + 1) * fan_in];
                let z = b[j] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                if hidden {
                    z.tanh()
                } else {
                    z
                }
            })
            .collect()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_cached(x).activations.pop().expect("output")
    }

    pub fn forward_cached(&self, x: &[f64]) -> ForwardCache {
        assert_eq!(x.len(), self.input_dim(), "input dimension mismatch");
        let n_layers = self.sizes.len() - 1;
        let mut activations = Vec::with_capacity(self.sizes.len());
        activations.push(x.to_vec());
        let mut offset = 0;
        for l in 0..n_layers {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let out = self.layer(offset, fan_in, fan_out, &activations[l], l + 1 < n_layers);
            activations.push(out);
            offset += fan_in * fan_out + fan_out;
        }
        ForwardCache { activations }
    }

    /// Accumulates `d loss / d params` into `grad` given `d loss / d output`.
    pub fn backward(&self, cache: &ForwardCache, grad_output: &[f64], grad: &mut [f64]) {
        debug_assert_eq!(grad.len(), self.params.len());
        let n_layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for l in 0..n_layers {
            offsets.push(off);
            off += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
        }

        let mut delta = grad_output.to_vec();
        for l in (0..n_layers).rev() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let input = &cache.activations[l];
            let offset = offsets[l];
            for j in 0..fan_out {
                let d = delta[j];
                if d == 0.0 {
                    continue;
                }
                let row = &mut grad[offset + j * fan_in..offset + (j + 1) * fan_in];
                for (g, &a) in row.iter_mut().zip(input) {
                    *g += d * a;
                }
                grad[offset + fan_in * fan_out + j] += d;
            }
            if l > 0 {
                let w = &self.params[offset..offset + fan_in * fan_out];
                let mut prev = vec![0.0; fan_in];
                for (j, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    for (p, &wij) in prev.iter_mut().zip(&w[j * fan_in..(j + 1) * fan_in]) {
                        *p += wij * d;
                    }
                }
                // input to layer l is tanh output of layer l-1
                for (p, &a) in prev.iter_mut().zip(input) {
                    *p *= 1.0 - a * a;
                }
                delta = prev;
            }
        }
    }

    /// Zeroes the output layer so the head emits all-zero outputs.
    pub fn zero_output_layer(&mut self) {
        let n = self.sizes.len();
        let (fan_in, fan_out) = (self.sizes[n - 2], self.sizes[n - 1]);
        let start = self.params.len() - (fan_in * fan_out + fan_out);
        self.params[start..].fill(0.0);
    }
}

/// Numerically stable softmax; `None` entries in `mask` get probability 0.
pub fn softmax(logits: &[f64], mask: Option<&[bool]>) -> Vec<f64> {
    let allowed = |i: usize| mask.is_none_or(|m| m[i]);
    let max = logits
        .iter()
        .enumerate()
        .filter(|(i, _)| allowed(*i))
        .map(|(_, &l)| l)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<f64> = logits
        .iter()
        .enumerate()
        .map(|(i, &l)| if allowed(i) { (l - max).exp() } else { 0.0 })
        .collect();
    let sum: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= sum;
    }
    probs
}
