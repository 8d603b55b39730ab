//! Minimal dense-network engine: forward pass, exact reverse-mode
//! gradients, Adam, and the Gaussian negative log-likelihood.
//!
//! All math is in f64. Batched forward/backward walk whole point sets
//! through each layer as matrix products, which is what makes episodic
//! training and pool scoring affordable; summation orders are fixed, so
//! results are bit-reproducible run to run.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("gradient/state shape does not match the network parameters")]
    ShapeMismatch,
    #[error("variance must be strictly positive, got {var}")]
    NonPositiveVariance { var: f64 },
    #[error("loss is not finite")]
    NonFiniteLoss,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Identity,
}

/// One dense layer: `y = act(W x + b)` with `W` stored row-major `[out x in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

/// Feed-forward network of chained dense layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    layers: Vec<Layer>,
}

/// Per-layer parameter gradients, shape-congruent with a [`DenseNet`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseNet {
    /// Build from `dims = [in, h1, ..., out]` with relu on hidden layers and
    /// identity on the output layer. Weights are He-style uniform fan-in
    /// scaled, biases zero; seeded through the caller's RNG.
    pub fn new(dims: &[usize], rng: &mut ChaCha8Rng) -> Self {
        assert!(dims.len() >= 2, "need at least one layer");
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / fan_in as f64).sqrt();
            let weights = (0..fan_in * fan_out)
                .map(|_| rng.gen_range(-limit..limit))
                .collect();
            let activation = if layers.len() + 2 == dims.len() {
                Activation::Identity
            } else {
                Activation::Relu
            };
            layers.push(Layer {
                in_dim: fan_in,
                out_dim: fan_out,
                weights,
                bias: vec![0.0; fan_out],
                activation,
            });
        }
        DenseNet { layers }
    }

    pub fn from_layers(layers: Vec<Layer>) -> Self {
        for pair in layers.windows(2) {
            assert_eq!(pair[0].out_dim, pair[1].in_dim, "layer dims must chain");
        }
        DenseNet { layers }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Flat parameter view: layer 0 weights row-major, layer 0 bias, layer 1
    /// weights, ... Used by the finite-difference harness.
    pub fn param(&self, index: usize) -> f64 {
        let (layer, offset) = self.locate(index);
        let l = &self.layers[layer];
        if offset < l.weights.len() {
            l.weights[offset]
        } else {
            l.bias[offset - l.weights.len()]
        }
    }

    pub fn param_mut(&mut self, index: usize) -> &mut f64 {
        let (layer, offset) = self.locate(index);
        let l = &mut self.layers[layer];
        if offset < l.weights.len() {
            &mut l.weights[offset]
        } else {
            let n = l.weights.len();
            &mut l.bias[offset - n]
        }
    }

    fn locate(&self, mut index: usize) -> (usize, usize) {
        for (i, l) in self.layers.iter().enumerate() {
            let here = l.weights.len() + l.bias.len();
            if index < here {
                return (i, index);
            }
            index -= here;
        }
        panic!("parameter index out of range");
    }

    pub fn params_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|p| p.is_finite()))
    }

    /// Single-point forward pass.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        let trace = self.forward_batch(x, 1)?;
        Ok(trace.output().to_vec())
    }

    /// Forward over `n` stacked input rows (`xs.len() == n * input_dim`),
    /// keeping per-layer activations for the backward pass.
    ///
    /// Weights are transposed into scratch per layer so the inner product
    /// runs in accumulate-into-row form, which vectorizes without changing
    /// summation order and skips zero inputs (binary fingerprints and relu
    /// activations are about half zeros).
    pub fn forward_batch(&self, xs: &[f64], n: usize) -> Result<BatchTrace, NnError> {
        let in_dim = self.input_dim();
        if xs.len() != n * in_dim {
            return Err(NnError::DimensionMismatch {
                expected: n * in_dim,
                got: xs.len(),
            });
        }
        let mut outputs: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let mut scratch = Vec::new();
        let mut cur = xs;
        for layer in &self.layers {
            let (out_dim, in_dim) = (layer.out_dim, layer.in_dim);
            scratch.clear();
            scratch.resize(in_dim * out_dim, 0.0);
            for o in 0..out_dim {
                for i in 0..in_dim {
                    scratch[i * out_dim + o] = layer.weights[o * in_dim + i];
                }
            }
            let mut z = Vec::with_capacity(n * out_dim);
            for _ in 0..n {
                z.extend_from_slice(&layer.bias);
            }
            matmul_nn(&mut z, cur, &scratch, n, in_dim, out_dim);
            if layer.activation == Activation::Relu {
                for v in &mut z {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            outputs.push(z);
            cur = outputs.last().unwrap();
        }
        Ok(BatchTrace { n, outputs })
    }

    /// Exact reverse-mode gradients of `sum_i <upstream_i, forward(x_i)>`
    /// for a batch, plus the gradient with respect to the inputs (needed to
    /// chain decoder gradients back through an aggregated representation).
    pub fn backward_batch(
        &self,
        xs: &[f64],
        trace: &BatchTrace,
        upstream: &[f64],
    ) -> Result<(Gradients, Vec<f64>), NnError> {
        let n = trace.n;
        if upstream.len() != n * self.output_dim() {
            return Err(NnError::DimensionMismatch {
                expected: n * self.output_dim(),
                got: upstream.len(),
            });
        }
        let mut grads = Gradients::zeros_like(self);
        let mut d = upstream.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            // through the activation; relu derivative read off the outputs
            if layer.activation == Activation::Relu {
                for (di, &oi) in d.iter_mut().zip(&trace.outputs[l]) {
                    if oi <= 0.0 {
                        *di = 0.0;
                    }
                }
            }
            let input: &[f64] = if l == 0 { xs } else { &trace.outputs[l - 1] };
            let g = &mut grads.layers[l];
            matmul_tn(&mut g.weights, &d, input, n, layer.out_dim, layer.in_dim);
            for row in d.chunks_exact(layer.out_dim) {
                for (b, v) in g.bias.iter_mut().zip(row) {
                    *b += v;
                }
            }
            let mut dx = vec![0.0; n * layer.in_dim];
            matmul_nn(&mut dx, &d, &layer.weights, n, layer.out_dim, layer.in_dim);
            d = dx;
        }
        Ok((grads, d))
    }

    /// Single-point backward: gradient of `<upstream, forward(net, x)>`.
    pub fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<(Gradients, Vec<f64>), NnError> {
        let trace = self.forward_batch(x, 1)?;
        self.backward_batch(x, &trace, upstream)
    }
}

/// Activations of every layer for a batch, output of [`DenseNet::forward_batch`].
#[derive(Debug, Clone)]
pub struct BatchTrace {
    n: usize,
    outputs: Vec<Vec<f64>>,
}

impl BatchTrace {
    /// Final-layer activations, `n x output_dim` row-major.
    pub fn output(&self) -> &[f64] {
        self.outputs.last().expect("at least one layer")
    }

    pub fn rows(&self) -> usize {
        self.n
    }
}

impl Gradients {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        assert_eq!(self.layers.len(), other.layers.len());
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weights.iter_mut().zip(&b.weights) {
                *x += y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            for x in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *x *= factor;
            }
        }
    }

    pub fn param(&self, mut index: usize) -> f64 {
        for l in &self.layers {
            let here = l.weights.len() + l.bias.len();
            if index < here {
                return if index < l.weights.len() {
                    l.weights[index]
                } else {
                    l.bias[index - l.weights.len()]
                };
            }
            index -= here;
        }
        panic!("gradient index out of range");
    }

    pub fn is_zero(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|&g| g == 0.0))
    }

    fn matches(&self, net: &DenseNet) -> bool {
        self.layers.len() == net.layers.len()
            && self
                .layers
                .iter()
                .zip(&net.layers)
                .all(|(g, l)| g.weights.len() == l.weights.len() && g.bias.len() == l.bias.len())
    }
}

/// Adam optimizer state: first/second moment accumulators plus step count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    /// Default hyperparameters: lr 1e-3, beta1 0.9, beta2 0.999, eps 1e-8.
    pub fn new(net: &DenseNet, learning_rate: f64) -> Self {
        let shapes: Vec<Vec<f64>> = net
            .layers
            .iter()
            .map(|l| vec![0.0; l.weights.len() + l.bias.len()])
            .collect();
        AdamState {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: shapes.clone(),
            v: shapes,
        }
    }
}

/// One Adam update with bias correction; increments the step count.
pub fn adam_step(
    net: &mut DenseNet,
    grads: &Gradients,
    state: &mut AdamState,
) -> Result<(), NnError> {
    if !grads.matches(net)
        || state.m.len() != net.layers.len()
        || state
            .m
            .iter()
            .zip(&net.layers)
            .any(|(m, l)| m.len() != l.weights.len() + l.bias.len())
    {
        return Err(NnError::ShapeMismatch);
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for (l, layer) in net.layers.iter_mut().enumerate() {
        let g = &grads.layers[l];
        let nw = layer.weights.len();
        let m = &mut state.m[l];
        let v = &mut state.v[l];
        for (i, p) in layer
            .weights
            .iter_mut()
            .chain(layer.bias.iter_mut())
            .enumerate()
        {
            let gi = if i < nw {
                g.weights[i]
            } else {
                g.bias[i - nw]
            };
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * gi;
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            *p -= state.learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
    Ok(())
}

/// Negative log-density of `N(y; mu, var)`:
/// `0.5 ln(2 pi var) + (y - mu)^2 / (2 var)`.
pub fn gaussian_nll(mu: f64, var: f64, y: f64) -> Result<f64, NnError> {
    if !(var > 0.0) {
        return Err(NnError::NonPositiveVariance { var });
    }
    let two_pi = 2.0 * std::f64::consts::PI;
    Ok(0.5 * (two_pi * var).ln() + (y - mu) * (y - mu) / (2.0 * var))
}

/// Central-difference check of an analytic gradient over every parameter.
///
/// `eval` returns the loss and its analytic parameter gradients at a given
/// network. Returns the maximum relative error
/// `|fd - g| / max(|fd|, |g|, 1e-6)` across parameters.
pub fn gradient_check<F>(net: &DenseNet, eval: F, h: f64) -> Result<f64, NnError>
where
    F: Fn(&DenseNet) -> Result<(f64, Gradients), NnError>,
{
    let (loss0, analytic) = eval(net)?;
    if !loss0.is_finite() {
        return Err(NnError::NonFiniteLoss);
    }
    let mut worst = 0.0f64;
    let mut probe = net.clone();
    for i in 0..net.param_count() {
        let base = net.param(i);
        *probe.param_mut(i) = base + h;
        let (up, _) = eval(&probe)?;
        *probe.param_mut(i) = base - h;
        let (down, _) = eval(&probe)?;
        *probe.param_mut(i) = base;
        if !up.is_finite() || !down.is_finite() {
            return Err(NnError::NonFiniteLoss);
        }
        let fd = (up - down) / (2.0 * h);
        let g = analytic.param(i);
        let err = (fd - g).abs() / fd.abs().max(g.abs()).max(1e-6);
        worst = worst.max(err);
    }
    Ok(worst)
}

// --- flat row-major matrix kernels ------------------------------------------
//
// Shapes are (rows x cols); all kernels accumulate into `out`.

/// `out[m x n] += a[m x k] * b[k x n]`.
///
/// Accumulate-into-row form: vectorizes without reassociation, skips zero
/// inputs, and blocks four rows to reuse each `b` row from registers.
pub(crate) fn matmul_nn(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(out.len(), m * n);
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let blocks = m / 4 * 4;
    let mut i = 0;
    while i < blocks {
        let (r0, rest) = out[i * n..(i + 4) * n].split_at_mut(n);
        let (r1, rest) = rest.split_at_mut(n);
        let (r2, r3) = rest.split_at_mut(n);
        let (a0, a1, a2, a3) = (
            &a[i * k..(i + 1) * k],
            &a[(i + 1) * k..(i + 2) * k],
            &a[(i + 2) * k..(i + 3) * k],
            &a[(i + 3) * k..(i + 4) * k],
        );
        for l in 0..k {
            let (v0, v1, v2, v3) = (a0[l], a1[l], a2[l], a3[l]);
            if v0 == 0.0 && v1 == 0.0 && v2 == 0.0 && v3 == 0.0 {
                continue;
            }
            let br = &b[l * n..(l + 1) * n];
            for ((o0, o1), ((o2, o3), &bv)) in r0
                .iter_mut()
                .zip(r1.iter_mut())
                .zip(r2.iter_mut().zip(r3.iter_mut()).zip(br))
            {
                *o0 += v0 * bv;
                *o1 += v1 * bv;
                *o2 += v2 * bv;
                *o3 += v3 * bv;
            }
        }
        i += 4;
    }
    for i in blocks..m {
        let or = &mut out[i * n..(i + 1) * n];
        let ar = &a[i * k..(i + 1) * k];
        for (l, &av) in ar.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let br = &b[l * n..(l + 1) * n];
            for (o, y) in or.iter_mut().zip(br) {
                *o += av * y;
            }
        }
    }
}

/// `out[m x n] += a[k x m]^T * b[k x n]` (sum of row outer products).
pub(crate) fn matmul_tn(out: &mut [f64], a: &[f64], b: &[f64], k: usize, m: usize, n: usize) {
    debug_assert_eq!(out.len(), m * n);
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    for l in 0..k {
        let ar = &a[l * m..(l + 1) * m];
        let br = &b[l * n..(l + 1) * n];
        for (i, &av) in ar.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let or = &mut out[i * n..(i + 1) * n];
            for (o, y) in or.iter_mut().zip(br) {
                *o += av * y;
            }
        }
    }
}
