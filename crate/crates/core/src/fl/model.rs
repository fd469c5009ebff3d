//! A small fully connected classifier with hand-written backpropagation.
//!
//! Parameters live in one flat `Vec<f64>` so the training loop can clip,
//! partition, and quantize the update vector without knowing the
//! architecture. Layout: per layer, the weight matrix row-major (one row per
//! output unit), then the biases.

use crate::fl::FlError;
use crate::rng::RandomStream;

/// Layer widths, input first. Hidden layers use ReLU; the output layer feeds
/// softmax cross-entropy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    layers: Vec<usize>,
}

impl MlpSpec {
    pub fn new(layers: &[usize]) -> Result<Self, FlError> {
        if layers.len() < 2 || layers.contains(&0) {
            return Err(FlError::BadArchitecture(layers.to_vec()));
        }
        Ok(MlpSpec {
            layers: layers.to_vec(),
        })
    }

    pub fn layers(&self) -> &[usize] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0]
    }

    pub fn classes(&self) -> usize {
        *self.layers.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.layers.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// He-initialized weights, zero biases.
    pub fn init(&self, stream: &mut RandomStream) -> Vec<f64> {
        let mut params = vec![0.0; self.param_count()];
        let mut off = 0;
        for w in self.layers.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let std = (2.0 / fan_in as f64).sqrt();
            let weights = &mut params[off..off + fan_in * fan_out];
            stream.fill_normal(weights);
            for v in weights.iter_mut() {
                *v *= std;
            }
            off += fan_in * fan_out + fan_out;
        }
        params
    }

    fn forward(&self, params: &[f64], input: &[f32]) -> Vec<Vec<f64>> {
        debug_assert_eq!(input.len(), self.input_dim());
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        acts.push(input.iter().map(|&p| f64::from(p)).collect());
        let mut off = 0;
        let last = self.layers.len() - 2;
        for (l, w) in self.layers.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let weights = &params[off..off + fan_in * fan_out];
            let biases = &params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
            let prev = acts.last().unwrap();
            let mut z = vec![0.0; fan_out];
            for o in 0..fan_out {
                let row = &weights[o * fan_in..(o + 1) * fan_in];
                let mut s = biases[o];
                for (wi, ai) in row.iter().zip(prev) {
                    s += wi * ai;
                }
                z[o] = if l < last { s.max(0.0) } else { s };
            }
            acts.push(z);
            off += fan_in * fan_out + fan_out;
        }
        acts
    }

    /// Cross-entropy loss of one example.
    pub fn loss(&self, params: &[f64], input: &[f32], label: usize) -> f64 {
        let acts = self.forward(params, input);
        let logits = acts.last().unwrap();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln() + max;
        lse - logits[label]
    }

    /// Loss and full gradient of one example. Every entry of `grad` is
    /// written, so the buffer needs no zeroing between calls.
    pub fn loss_and_grad(
        &self,
        params: &[f64],
        input: &[f32],
        label: usize,
        grad: &mut [f64],
    ) -> f64 {
        debug_assert_eq!(grad.len(), self.param_count());
        let acts = self.forward(params, input);
        let logits = acts.last().unwrap();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let loss = sum.ln() + max - logits[label];

        // dL/dz at the output, then walk the layers backwards
        let mut dz: Vec<f64> = exps.iter().map(|e| e / sum).collect();
        dz[label] -= 1.0;

        let mut offsets = Vec::with_capacity(self.layers.len() - 1);
        let mut off = 0;
        for w in self.layers.windows(2) {
            offsets.push(off);
            off += w[0] * w[1] + w[1];
        }

        for l in (0..self.layers.len() - 1).rev() {
            let (fan_in, fan_out) = (self.layers[l], self.layers[l + 1]);
            let off = offsets[l];
            let weights = &params[off..off + fan_in * fan_out];
            let prev = &acts[l];
            for o in 0..fan_out {
                let g = dz[o];
                let row = &mut grad[off + o * fan_in..off + (o + 1) * fan_in];
                for (gi, ai) in row.iter_mut().zip(prev) {
                    *gi = g * ai;
                }
            }
            for (o, g) in dz.iter().enumerate() {
                grad[off + fan_in * fan_out + o] = *g;
            }
            if l > 0 {
                let mut dprev = vec![0.0; fan_in];
                for o in 0..fan_out {
                    let row = &weights[o * fan_in..(o + 1) * fan_in];
                    let g = dz[o];
                    for (dp, wi) in dprev.iter_mut().zip(row) {
                        *dp += g * wi;
                    }
                }
                // ReLU gate: units that were clamped pass no gradient
                for (dp, ai) in dprev.iter_mut().zip(prev) {
                    if *ai <= 0.0 {
                        *dp = 0.0;
                    }
                }
                dz = dprev;
            }
        }
        loss
    }

    pub fn predict(&self, params: &[f64], input: &[f32]) -> usize {
        let acts = self.forward(params, input);
        let logits = acts.last().unwrap();
        let mut best = 0;
        for (i, z) in logits.iter().enumerate() {
            if *z > logits[best] {
                best = i;
            }
        }
        best
    }

    pub fn accuracy(&self, params: &[f64], data: &crate::fl::data::Dataset) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let hits = (0..data.len())
            .filter(|&i| self.predict(params, data.image(i)) == data.label(i))
            .count();
        hits as f64 / data.len() as f64
    }
}

/// Classical momentum: velocity <- momentum * velocity + grad, then
/// params <- params - lr * velocity.
pub fn momentum_step(
    params: &mut [f64],
    velocity: &mut [f64],
    grad: &[f64],
    lr: f64,
    momentum: f64,
) {
    for ((p, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(grad) {
        *v = momentum * *v + g;
        *p -= lr * *v;
    }
}
