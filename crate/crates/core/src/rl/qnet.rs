//! Fully-connected Q-network with hand-rolled backpropagation and an
//! Adam-style per-parameter adaptive optimizer. Parameters live in one flat
//! array (layer-major: weights row-major, then biases), which keeps
//! checkpoints, gradient checks, and the optimizer state simple.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Layer boundaries inside the flat parameter array.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LayerSpan {
    w_start: usize,
    b_start: usize,
    in_dim: usize,
    out_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QNetwork {
    /// Layer widths, input first and output last, e.g. [28, 64, 64, 4].
    pub sizes: Vec<usize>,
    /// All weights and biases, layer-major.
    pub params: Vec<f64>,
}

fn spans(sizes: &[usize]) -> Vec<LayerSpan> {
    let mut out = Vec::with_capacity(sizes.len() - 1);
    let mut offset = 0;
    for pair in sizes.windows(2) {
        let (in_dim, out_dim) = (pair[0], pair[1]);
        out.push(LayerSpan { w_start: offset, b_start: offset + in_dim * out_dim, in_dim, out_dim });
        offset += in_dim * out_dim + out_dim;
    }
    out
}

impl QNetwork {
    pub fn param_count_for(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|p| p[0] * p[1] + p[1]).sum()
    }

    /// Xavier-uniform initialization from the given RNG; biases start at zero.
    pub fn new(sizes: &[usize], rng: &mut impl Rng) -> QNetwork {
        assert!(sizes.len() >= 2, "need at least input and output widths");
        let mut params = vec![0.0; Self::param_count_for(sizes)];
        for span in spans(sizes) {
            let bound = (6.0 / (span.in_dim + span.out_dim) as f64).sqrt();
            for w in &mut params[span.w_start..span.b_start] {
                *w = rng.gen_range(-bound..bound);
            }
        }
        QNetwork { sizes: sizes.to_vec(), params }
    }

    pub fn zeros(sizes: &[usize]) -> QNetwork {
        QNetwork { sizes: sizes.to_vec(), params: vec![0.0; Self::param_count_for(sizes)] }
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    /// Forward pass: ReLU between layers, linear output.
    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        assert_eq!(input.len(), self.input_dim(), "feature vector length mismatch");
        let all = spans(&self.sizes);
        let mut x = input.to_vec();
        for (li, span) in all.iter().enumerate() {
            let mut y = vec![0.0; span.out_dim];
            for (o, slot) in y.iter_mut().enumerate() {
                let mut acc = self.params[span.b_start + o];
                let row = span.w_start + o * span.in_dim;
                for (i, &xi) in x.iter().enumerate() {
                    acc += self.params[row + i] * xi;
                }
                *slot = if li + 1 < all.len() { acc.max(0.0) } else { acc };
            }
            x = y;
        }
        x
    }

    /// Forward pass keeping every layer's post-activation output; index 0 is
    /// the input itself.
    fn forward_trace(&self, input: &[f64]) -> Vec<Vec<f64>> {
        let all = spans(&self.sizes);
        let mut acts = Vec::with_capacity(all.len() + 1);
        acts.push(input.to_vec());
        for (li, span) in all.iter().enumerate() {
            let x = &acts[li];
            let mut y = vec![0.0; span.out_dim];
            for (o, slot) in y.iter_mut().enumerate() {
                let mut acc = self.params[span.b_start + o];
                let row = span.w_start + o * span.in_dim;
                for (i, &xi) in x.iter().enumerate() {
                    acc += self.params[row + i] * xi;
                }
                *slot = if li + 1 < all.len() { acc.max(0.0) } else { acc };
            }
            acts.push(y);
        }
        acts
    }

    /// Accumulates dLoss/dparams into `grads` (same layout as `params`),
    /// given dLoss/doutput for one input.
    pub fn backward_into(&self, input: &[f64], grad_output: &[f64], grads: &mut [f64]) {
        debug_assert_eq!(grads.len(), self.params.len());
        let all = spans(&self.sizes);
        let acts = self.forward_trace(input);
        let mut delta = grad_output.to_vec();
        for (li, span) in all.iter().enumerate().rev() {
            let x = &acts[li];
            for o in 0..span.out_dim {
                let d = delta[o];
                grads[span.b_start + o] += d;
                let row = span.w_start + o * span.in_dim;
                for (i, &xi) in x.iter().enumerate() {
                    grads[row + i] += d * xi;
                }
            }
            if li > 0 {
                // Through the previous ReLU: derivative is 1 exactly where
                // its output is positive.
                let mut prev = vec![0.0; span.in_dim];
                for (i, p) in prev.iter_mut().enumerate() {
                    if x[i] > 0.0 {
                        let mut acc = 0.0;
                        for (o, &d) in delta.iter().enumerate() {
                            acc += d * self.params[span.w_start + o * span.in_dim + i];
                        }
                        *p = acc;
                    }
                }
                delta = prev;
            }
        }
    }
}

/// Adam optimizer state over the flat parameter array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(param_count: usize) -> AdamState {
        AdamState {
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    /// One Adam update with bias correction. A zero gradient leaves the
    /// parameters exactly unchanged.
    pub fn apply(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        debug_assert_eq!(params.len(), grads.len());
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let m_hat = self.m[i] / b1t;
            let v_hat = self.v[i] / b2t;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}
