use serde::{Deserialize, Serialize};

use super::Rng;
use crate::error::{CmibError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation output `y = f(x)`.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

/// One dense layer: `y = f(W x + b)` with `W` stored row-major
/// (`out_dim` rows of `in_dim` entries).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

/// Multi-layer perceptron over f64 with explicit, hand-derived backprop.
///
/// The flat parameter layout is canonical everywhere (checkpoints, gradient
/// vectors, finite-difference checks): layers in forward order, each layer's
/// weights row-major followed by its biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedforwardNet {
    layers: Vec<Layer>,
}

/// Per-layer records of a forward pass, kept for the backward pass: the input
/// to each layer and each layer's post-activation output.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    inputs: Vec<Vec<f64>>,
    outputs: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        self.outputs.last().expect("trace has at least one layer")
    }
}

impl FeedforwardNet {
    /// Zero-initialized net with the given layer dimensions
    /// (`dims = [in, h1, ..., out]`) and one activation per layer.
    pub fn zeros(dims: &[usize], activations: &[Activation]) -> Result<Self> {
        if dims.len() < 2 {
            return Err(CmibError::invalid_parameter(
                "dims",
                "need at least input and output dimension",
            ));
        }
        if activations.len() != dims.len() - 1 {
            return Err(CmibError::DimMismatch {
                context: "FeedforwardNet activations",
                expected: dims.len() - 1,
                got: activations.len(),
            });
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(CmibError::invalid_parameter("dims", "dimensions must be positive"));
        }
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(w, &activation)| Layer {
                in_dim: w[0],
                out_dim: w[1],
                weights: vec![0.0; w[0] * w[1]],
                bias: vec![0.0; w[1]],
                activation,
            })
            .collect();
        Ok(FeedforwardNet { layers })
    }

    /// Random init: weights `N(0, 1/sqrt(in_dim))`, biases zero.
    pub fn random(dims: &[usize], activations: &[Activation], rng: &mut Rng) -> Result<Self> {
        let mut net = Self::zeros(dims, activations)?;
        for layer in &mut net.layers {
            let scale = 1.0 / (layer.in_dim as f64).sqrt();
            for w in &mut layer.weights {
                *w = scale * rng.normal();
            }
        }
        Ok(net)
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("nonempty").out_dim
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let trace = self.forward_trace(x)?;
        Ok(trace.outputs.into_iter().next_back().expect("nonempty"))
    }

    pub fn forward_trace(&self, x: &[f64]) -> Result<ForwardTrace> {
        if x.len() != self.in_dim() {
            return Err(CmibError::DimMismatch {
                context: "FeedforwardNet::forward",
                expected: self.in_dim(),
                got: x.len(),
            });
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_vec();
        for layer in &self.layers {
            let mut out = Vec::with_capacity(layer.out_dim);
            for r in 0..layer.out_dim {
                let row = &layer.weights[r * layer.in_dim..(r + 1) * layer.in_dim];
                let mut acc = layer.bias[r];
                for (w, v) in row.iter().zip(&cur) {
                    acc += w * v;
                }
                out.push(layer.activation.apply(acc));
            }
            inputs.push(cur);
            cur = out.clone();
            outputs.push(out);
        }
        Ok(ForwardTrace { inputs, outputs })
    }

    /// Backward pass. `cotangent` is dLoss/dOutput; parameter gradients are
    /// accumulated into `grad` (canonical flat layout, same length as
    /// [`FeedforwardNet::param_count`]); the return value is dLoss/dInput.
    pub fn backward(&self, trace: &ForwardTrace, cotangent: &[f64], grad: &mut [f64]) -> Vec<f64> {
        assert_eq!(grad.len(), self.param_count(), "gradient buffer size");
        assert_eq!(cotangent.len(), self.out_dim(), "cotangent size");
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for layer in &self.layers {
            offsets.push(off);
            off += layer.weights.len() + layer.bias.len();
        }

        let mut delta = cotangent.to_vec();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let out = &trace.outputs[li];
            let input = &trace.inputs[li];
            // dLoss/dPreactivation for this layer.
            let mut dpre = vec![0.0; layer.out_dim];
            for r in 0..layer.out_dim {
                dpre[r] = delta[r] * layer.activation.derivative_from_output(out[r]);
            }
            let base = offsets[li];
            let wlen = layer.weights.len();
            for r in 0..layer.out_dim {
                let row = base + r * layer.in_dim;
                for c in 0..layer.in_dim {
                    grad[row + c] += dpre[r] * input[c];
                }
                grad[base + wlen + r] += dpre[r];
            }
            let mut dinput = vec![0.0; layer.in_dim];
            for r in 0..layer.out_dim {
                let row = &layer.weights[r * layer.in_dim..(r + 1) * layer.in_dim];
                for c in 0..layer.in_dim {
                    dinput[c] += dpre[r] * row[c];
                }
            }
            delta = dinput;
        }
        delta
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Canonical flattening: layers in forward order, weights row-major
    /// before biases.
    pub fn flatten_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            out.extend_from_slice(&layer.weights);
            out.extend_from_slice(&layer.bias);
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(CmibError::DimMismatch {
                context: "FeedforwardNet::set_params",
                expected: self.param_count(),
                got: flat.len(),
            });
        }
        let mut off = 0;
        for layer in &mut self.layers {
            let wlen = layer.weights.len();
            layer.weights.copy_from_slice(&flat[off..off + wlen]);
            off += wlen;
            let blen = layer.bias.len();
            layer.bias.copy_from_slice(&flat[off..off + blen]);
            off += blen;
        }
        Ok(())
    }

    /// Architecture descriptor used in checkpoints: `[in, h1, ..., out]`
    /// plus the activation list.
    pub fn descriptor(&self) -> (Vec<usize>, Vec<Activation>) {
        let mut dims = vec![self.in_dim()];
        let mut acts = Vec::new();
        for layer in &self.layers {
            dims.push(layer.out_dim);
            acts.push(layer.activation);
        }
        (dims, acts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{central_difference, max_relative_error};

    #[test]
    fn identity_single_layer_is_affine() {
        let mut net = FeedforwardNet::zeros(&[2, 2], &[Activation::Identity]).unwrap();
        net.set_params(&[1.0, 0.0, 0.0, 1.0, 0.5, -0.5]).unwrap();
        let y = net.forward(&[3.0, 4.0]).unwrap();
        assert_eq!(y, vec![3.5, 3.5]);
    }

    #[test]
    fn zero_weights_yield_activated_bias() {
        let mut net = FeedforwardNet::zeros(&[3, 2], &[Activation::Tanh]).unwrap();
        let mut params = vec![0.0; 6];
        params.extend([0.7, -0.3]);
        net.set_params(&params).unwrap();
        let y = net.forward(&[1.0, -2.0, 0.5]).unwrap();
        assert!((y[0] - 0.7f64.tanh()).abs() < 1e-15);
        assert!((y[1] - (-0.3f64).tanh()).abs() < 1e-15);
    }

    #[test]
    fn forward_matches_hand_rolled_matmul() {
        // Independent oracle: explicit loop over a fixed two-layer net.
        let mut rng = Rng::new(31);
        let net = FeedforwardNet::random(&[4, 3, 2], &[Activation::Tanh, Activation::Identity], &mut rng)
            .unwrap();
        let x = [0.3, -1.1, 0.2, 0.9];

        let l0 = &net.layers()[0];
        let mut h = vec![0.0; 3];
        for r in 0..3 {
            let mut acc = l0.bias[r];
            for c in 0..4 {
                acc += l0.weights[r * 4 + c] * x[c];
            }
            h[r] = acc.tanh();
        }
        let l1 = &net.layers()[1];
        let mut expect = vec![0.0; 2];
        for r in 0..2 {
            let mut acc = l1.bias[r];
            for c in 0..3 {
                acc += l1.weights[r * 3 + c] * h[c];
            }
            expect[r] = acc;
        }

        let y = net.forward(&x).unwrap();
        for (a, b) in y.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn gradient_of_linear_loss_on_identity_layer_is_input() {
        // loss = w . x + b with scalar output; dLoss/dw = x, dLoss/db = 1.
        let mut rng = Rng::new(5);
        let net = FeedforwardNet::random(&[3, 1], &[Activation::Identity], &mut rng).unwrap();
        let x = [0.4, -0.7, 2.0];
        let trace = net.forward_trace(&x).unwrap();
        let mut grad = vec![0.0; net.param_count()];
        net.backward(&trace, &[1.0], &mut grad);
        assert_eq!(&grad[..3], &x);
        assert_eq!(grad[3], 1.0);
    }

    #[test]
    fn gradient_of_quadratic_loss_matches_closed_form() {
        // loss = 0.5 * ||y||^2 on a one-layer identity net:
        // dLoss/dW = y x^T, dLoss/db = y, dLoss/dx = W^T y.
        let mut rng = Rng::new(6);
        let net = FeedforwardNet::random(&[2, 2], &[Activation::Identity], &mut rng).unwrap();
        let x = [1.2, -0.3];
        let trace = net.forward_trace(&x).unwrap();
        let y = trace.output().to_vec();
        let mut grad = vec![0.0; net.param_count()];
        let dinput = net.backward(&trace, &y, &mut grad);

        for r in 0..2 {
            for c in 0..2 {
                assert!((grad[r * 2 + c] - y[r] * x[c]).abs() < 1e-14);
            }
            assert!((grad[4 + r] - y[r]).abs() < 1e-14);
        }
        let l = &net.layers()[0];
        for c in 0..2 {
            let expect = l.weights[c] * y[0] + l.weights[2 + c] * y[1];
            assert!((dinput[c] - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn backward_matches_central_differences() {
        let mut rng = Rng::new(101);
        let net =
            FeedforwardNet::random(&[5, 7, 3], &[Activation::Tanh, Activation::Tanh], &mut rng)
                .unwrap();
        let x: Vec<f64> = rng.normal_vec(5);
        // Scalar loss: sum of squared outputs.
        let loss = |params: &[f64]| {
            let mut n = net.clone();
            n.set_params(params).unwrap();
            let y = n.forward(&x).unwrap();
            y.iter().map(|v| v * v).sum::<f64>()
        };
        let params = net.flatten_params();
        let mut loss = loss;
        let numeric = central_difference(&mut loss, &params, 1e-5);

        let trace = net.forward_trace(&x).unwrap();
        let cot: Vec<f64> = trace.output().iter().map(|v| 2.0 * v).collect();
        let mut analytic = vec![0.0; net.param_count()];
        net.backward(&trace, &cot, &mut analytic);

        let err = max_relative_error(&analytic, &numeric);
        assert!(err < 1e-6, "max relative error {err}");
    }

    #[test]
    fn param_flattening_round_trips() {
        let mut rng = Rng::new(77);
        let net =
            FeedforwardNet::random(&[4, 6, 2], &[Activation::Tanh, Activation::Identity], &mut rng)
                .unwrap();
        let flat = net.flatten_params();
        let mut copy = FeedforwardNet::zeros(&[4, 6, 2], &[Activation::Tanh, Activation::Identity])
            .unwrap();
        copy.set_params(&flat).unwrap();
        assert_eq!(net, copy);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(FeedforwardNet::zeros(&[3], &[]).is_err());
        assert!(FeedforwardNet::zeros(&[3, 2], &[]).is_err());
        assert!(FeedforwardNet::zeros(&[3, 0], &[Activation::Identity]).is_err());
        let net = FeedforwardNet::zeros(&[3, 2], &[Activation::Identity]).unwrap();
        assert!(net.forward(&[1.0]).is_err());
    }
}
