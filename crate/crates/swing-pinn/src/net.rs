//! Fully connected multilayer perceptrons for the angle and inertia
//! predictors.
//!
//! Parameters are kept per layer (row-major weight matrices, bias vectors)
//! and flattened into one contiguous vector for the optimizer and the tape;
//! the flat order is layer by layer, weights then biases.

use crate::autodiff::{DiffValue, NodeId, Tape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NetError {
    #[error("layer sizes must list at least input and output widths")]
    TooFewLayers,
    #[error("layer width must be at least 1 (got 0 at position {0})")]
    ZeroWidth(usize),
    #[error("input has dimension {got}, network expects {expected}")]
    InputDimension { expected: usize, got: usize },
    #[error("parameter shapes are inconsistent with layer_sizes")]
    ShapeMismatch,
}

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
}

/// Output-head transform applied after the final linear layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputHead {
    Linear,
    /// Strictly positive outputs; used by the inertia predictor.
    Softplus,
}

/// Weights and biases of a fully connected network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layer_sizes: Vec<usize>,
    /// Row-major `layer_sizes[k+1] × layer_sizes[k]` matrices.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub activation: Activation,
    pub output_head: OutputHead,
}

impl MlpParams {
    /// Xavier-uniform weights in ±√(6/(fan_in+fan_out)), zero biases,
    /// fully determined by `seed`.
    pub fn init(layer_sizes: &[usize], head: OutputHead, seed: u64) -> Result<Self, NetError> {
        if layer_sizes.len() < 2 {
            return Err(NetError::TooFewLayers);
        }
        if let Some(pos) = layer_sizes.iter().position(|&w| w == 0) {
            return Err(NetError::ZeroWidth(pos));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let m: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            weights.push(m);
            biases.push(vec![0.0; fan_out]);
        }
        Ok(MlpParams {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            activation: Activation::Tanh,
            output_head: head,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    /// Total parameter count: Σ (n_in·n_out + n_out).
    pub fn n_params(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    pub fn check_shapes(&self) -> Result<(), NetError> {
        if self.layer_sizes.len() < 2 {
            return Err(NetError::TooFewLayers);
        }
        let pairs = self.layer_sizes.windows(2);
        if self.weights.len() != pairs.len() || self.biases.len() != pairs.len() {
            return Err(NetError::ShapeMismatch);
        }
        for (k, w) in self.layer_sizes.windows(2).enumerate() {
            if self.weights[k].len() != w[0] * w[1] || self.biases[k].len() != w[1] {
                return Err(NetError::ShapeMismatch);
            }
        }
        if self
            .weights
            .iter()
            .flatten()
            .chain(self.biases.iter().flatten())
            .any(|x| !x.is_finite())
        {
            return Err(NetError::ShapeMismatch);
        }
        Ok(())
    }

    /// Flatten into the canonical order (per layer: weights row-major, then
    /// biases), appending to `out`.
    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        for (w, b) in self.weights.iter().zip(self.biases.iter()) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
    }

    /// Read parameters back from the canonical flat layout.
    pub fn unflatten_from(&mut self, flat: &[f64]) {
        let mut pos = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let nw = w.len();
            w.copy_from_slice(&flat[pos..pos + nw]);
            pos += nw;
            let nb = b.len();
            b.copy_from_slice(&flat[pos..pos + nb]);
            pos += nb;
        }
        debug_assert_eq!(pos, flat.len());
    }

    /// Record the forward pass on a tape. Parameter slots start at
    /// `param_base` in canonical flat order; `inputs` are already-recorded
    /// nodes (normalized coordinates). Returns the output nodes.
    pub fn record(&self, tape: &mut Tape, param_base: usize, inputs: &[NodeId]) -> Vec<NodeId> {
        assert_eq!(inputs.len(), self.input_dim(), "input width mismatch");
        let mut current: Vec<NodeId> = inputs.to_vec();
        let mut offset = param_base;
        let n_layers = self.weights.len();
        for (k, sizes) in self.layer_sizes.windows(2).enumerate() {
            let (n_in, n_out) = (sizes[0], sizes[1]);
            let w_base = offset;
            let b_base = offset + n_in * n_out;
            offset = b_base + n_out;
            // Pre-activations must be consecutive nodes for affine fusion of
            // the next layer, so record them in one run before activations.
            let mut pre = Vec::with_capacity(n_out);
            for row in 0..n_out {
                pre.push(tape.affine(w_base + row * n_in, b_base + row, &current));
            }
            current = if k + 1 < n_layers {
                pre.iter().map(|&z| tape.tanh(z)).collect()
            } else {
                match self.output_head {
                    OutputHead::Linear => pre,
                    OutputHead::Softplus => pre.iter().map(|&z| tape.softplus(z)).collect(),
                }
            };
        }
        current
    }

    /// Forward pass on lifted inputs, propagating all derivative channels.
    ///
    /// Arithmetic order matches [`MlpParams::record`] term for term, so the
    /// two paths produce identical values.
    pub fn forward(&self, input: &[DiffValue]) -> Result<Vec<DiffValue>, NetError> {
        if input.len() != self.input_dim() {
            return Err(NetError::InputDimension {
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        let n_layers = self.weights.len();
        let mut current: Vec<DiffValue> = input.to_vec();
        for (k, sizes) in self.layer_sizes.windows(2).enumerate() {
            let (n_in, n_out) = (sizes[0], sizes[1]);
            let mut next = Vec::with_capacity(n_out);
            for row in 0..n_out {
                let mut acc = DiffValue::ZERO;
                for (col, x) in current.iter().enumerate() {
                    let w = self.weights[k][row * n_in + col];
                    acc.value += w * x.value;
                    acc.d_dt += w * x.d_dt;
                    acc.d2_dt2 += w * x.d2_dt2;
                }
                acc.value += self.biases[k][row];
                let z = if k + 1 < n_layers {
                    acc.tanh()
                } else {
                    match self.output_head {
                        OutputHead::Linear => acc,
                        OutputHead::Softplus => acc.softplus(),
                    }
                };
                next.push(z);
            }
            current = next;
        }
        Ok(current)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::TapeBuffer;

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn parameter_count_example() {
        let net = MlpParams::init(&[2, 32, 32, 1], OutputHead::Linear, 0).unwrap();
        assert_eq!(net.n_params(), 2 * 32 + 32 + 32 * 32 + 32 + 32 + 1);
        assert_eq!(net.n_params(), 1185);
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = MlpParams::init(&[2, 8, 1], OutputHead::Linear, 42).unwrap();
        let b = MlpParams::init(&[2, 8, 1], OutputHead::Linear, 42).unwrap();
        assert_eq!(a, b);
        let c = MlpParams::init(&[2, 8, 1], OutputHead::Linear, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn xavier_bounds_and_mean() {
        // fan_in = fan_out = 32 → bound √(6/64) ≈ 0.3062.
        let sizes = vec![32usize, 32];
        let mut all = Vec::new();
        for seed in 0..10 {
            let net = MlpParams::init(&sizes, OutputHead::Linear, seed).unwrap();
            all.extend_from_slice(&net.weights[0]);
        }
        assert!(all.len() >= 10_000);
        let bound = (6.0f64 / 64.0).sqrt();
        let (mut lo, mut hi, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
        for &w in &all {
            lo = lo.min(w);
            hi = hi.max(w);
            sum += w;
        }
        assert!(lo >= -bound && hi <= bound, "range [{lo}, {hi}]");
        close(sum / all.len() as f64, 0.0, 0.01);
        // Bounds are actually approached.
        assert!(lo < -0.9 * bound && hi > 0.9 * bound);
    }

    #[test]
    fn invalid_layer_sizes_rejected() {
        assert_eq!(
            MlpParams::init(&[2], OutputHead::Linear, 0),
            Err(NetError::TooFewLayers)
        );
        assert_eq!(
            MlpParams::init(&[2, 0, 1], OutputHead::Linear, 0),
            Err(NetError::ZeroWidth(1))
        );
    }

    #[test]
    fn zero_network_outputs_zero_jets() {
        let mut net = MlpParams::init(&[2, 4, 1], OutputHead::Linear, 0).unwrap();
        for w in &mut net.weights {
            w.fill(0.0);
        }
        let out = net
            .forward(&[DiffValue::input(0.3), DiffValue::constant(0.7)])
            .unwrap();
        assert_eq!(out[0], DiffValue::ZERO);
    }

    #[test]
    fn single_neuron_derivatives_at_zero() {
        // u = w2·tanh(w1 t + b1) + b2 with w1=1, b1=0, w2=2, b2=0.5 at t=0:
        // value 0.5, du/dt = 2, d²u/dt² = 0.
        let net = MlpParams {
            layer_sizes: vec![1, 1, 1],
            weights: vec![vec![1.0], vec![2.0]],
            biases: vec![vec![0.0], vec![0.5]],
            activation: Activation::Tanh,
            output_head: OutputHead::Linear,
        };
        let out = net.forward(&[DiffValue::input(0.0)]).unwrap();
        assert_eq!(out[0].value, 0.5);
        assert_eq!(out[0].d_dt, 2.0);
        assert_eq!(out[0].d2_dt2, 0.0);
    }

    #[test]
    fn forward_matches_independent_plain_evaluation() {
        // Hand-rolled scalar forward pass, written without the tape.
        let net = MlpParams::init(&[2, 8, 1], OutputHead::Linear, 5).unwrap();
        let x = [0.37, -0.81];
        let mut cur: Vec<f64> = x.to_vec();
        for (k, sizes) in net.layer_sizes.windows(2).enumerate() {
            let (n_in, n_out) = (sizes[0], sizes[1]);
            let mut next = vec![0.0; n_out];
            for (row, slot) in next.iter_mut().enumerate() {
                let mut acc = 0.0;
                let w_row = &net.weights[k][row * n_in..(row + 1) * n_in];
                for (w, x) in w_row.iter().zip(cur.iter()) {
                    acc += w * x;
                }
                acc += net.biases[k][row];
                *slot = if k + 1 < net.weights.len() { acc.tanh() } else { acc };
            }
            cur = next;
        }
        let out = net
            .forward(&[DiffValue::constant(x[0]), DiffValue::constant(x[1])])
            .unwrap();
        close(out[0].value, cur[0], 1e-12);
    }

    #[test]
    fn value_channel_independent_of_derivative_channels() {
        let net = MlpParams::init(&[2, 8, 3], OutputHead::Linear, 9).unwrap();
        let with_dt = net
            .forward(&[DiffValue::input(0.4), DiffValue::constant(-0.2)])
            .unwrap();
        let without = net
            .forward(&[DiffValue::constant(0.4), DiffValue::constant(-0.2)])
            .unwrap();
        for (a, b) in with_dt.iter().zip(without.iter()) {
            close(a.value, b.value, 1e-12);
            assert_eq!(b.d_dt, 0.0);
        }
    }

    #[test]
    fn softplus_head_is_positive() {
        let net = MlpParams::init(&[2, 16, 16, 1], OutputHead::Softplus, 3).unwrap();
        for i in 0..20 {
            let t = -1.0 + 0.1 * i as f64;
            let out = net
                .forward(&[DiffValue::constant(t), DiffValue::constant(-t)])
                .unwrap();
            assert!(out[0].value > 0.0);
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let net = MlpParams::init(&[2, 8, 2], OutputHead::Linear, 17).unwrap();
        let input = [DiffValue::input(0.1), DiffValue::constant(0.9)];
        let a = net.forward(&input).unwrap();
        let b = net.forward(&input).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn recorded_tape_agrees_with_direct_forward() {
        let net = MlpParams::init(&[2, 16, 16, 2], OutputHead::Softplus, 23).unwrap();
        let mut tape = Tape::new();
        let t = tape.input_time(0);
        let p = tape.input_value(1);
        let outs = net.record(&mut tape, 0, &[t, p]);
        let mut flat = Vec::new();
        net.flatten_into(&mut flat);
        assert_eq!(flat.len(), net.n_params());
        assert_eq!(tape.n_params(), net.n_params());

        let (tv, pv) = (0.62, -0.35);
        let mut buf = TapeBuffer::default();
        tape.forward(&flat, &[tv, pv], &mut buf);
        let direct = net
            .forward(&[DiffValue::input(tv), DiffValue::constant(pv)])
            .unwrap();
        for (node, d) in outs.iter().zip(direct.iter()) {
            assert_eq!(tape.value(&buf, *node), *d);
        }
    }

    #[test]
    fn output_continuous_in_parameters() {
        // Smoke bound: an ε-perturbation of one weight moves the output by
        // at most L·ε for a finite empirical L on bounded inputs.
        let net = MlpParams::init(&[2, 8, 1], OutputHead::Linear, 12).unwrap();
        let input = [DiffValue::constant(0.5), DiffValue::constant(-0.5)];
        let base = net.forward(&input).unwrap()[0].value;
        let eps = 1e-6;
        let mut worst_slope: f64 = 0.0;
        for layer in 0..net.weights.len() {
            for idx in [0usize, net.weights[layer].len() / 2] {
                let mut perturbed = net.clone();
                perturbed.weights[layer][idx] += eps;
                let out = perturbed.forward(&input).unwrap()[0].value;
                worst_slope = worst_slope.max((out - base).abs() / eps);
            }
        }
        assert!(worst_slope.is_finite());
        assert!(worst_slope < 100.0, "empirical Lipschitz slope {worst_slope}");
    }

    #[test]
    fn flatten_unflatten_round_trip() {
        let net = MlpParams::init(&[3, 5, 2], OutputHead::Linear, 8).unwrap();
        let mut flat = Vec::new();
        net.flatten_into(&mut flat);
        let mut copy = net.clone();
        for w in &mut copy.weights {
            w.fill(0.0);
        }
        copy.unflatten_from(&flat);
        assert_eq!(copy, net);
    }
}
