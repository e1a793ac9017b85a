//! Minimal fully-connected network machinery: parameter container,
//! seeded initialization, forward pass with inverted dropout, softmax
//! cross-entropy, analytic backprop, and Adam.
//!
//! Design contracts:
//! - pure functions over explicit state — no interior mutability, no
//!   global RNG; every stochastic step takes a seeded generator;
//! - `f64` everywhere so finite-difference checks can resolve gradients
//!   to a relative error of 1e-4 and below;
//! - hidden activations are ReLU, the output layer emits raw logits;
//! - dropout is inverted (kept units scaled by `1/(1-rate)` at train
//!   time) so evaluation needs no rescaling.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Weight matrix (row-major, `out_dim x in_dim`) and bias vector for one
/// dense layer. Also used as the per-layer gradient container, since
/// gradients have exactly the parameter shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTensors {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl LayerTensors {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        LayerTensors {
            w: vec![0.0; in_dim * out_dim],
            b: vec![0.0; out_dim],
        }
    }
}

/// Parameters of a multi-layer perceptron with layer widths `dims`
/// (`dims[0]` = input dimension, last entry = number of output logits).
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    dims: Vec<usize>,
    pub layers: Vec<LayerTensors>,
}

/// Gradients of every parameter in an [`MlpParams`], same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    dims: Vec<usize>,
    pub layers: Vec<LayerTensors>,
}

/// Forward-pass mode: `Train` applies dropout, `Eval` ignores it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Dropout configuration. `rate` is the probability of zeroing a hidden
/// unit at train time; surviving units are scaled by `1/(1-rate)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropoutSpec {
    pub rate: f64,
}

impl DropoutSpec {
    pub fn new(rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) || !rate.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "dropout rate must lie in [0, 1), got {rate}"
            )));
        }
        Ok(DropoutSpec { rate })
    }

    pub fn off() -> Self {
        DropoutSpec { rate: 0.0 }
    }
}

/// Everything `backward` needs from a forward pass: the input to each
/// layer, hidden pre-activations (for the ReLU derivative), and the
/// dropout multiplier actually applied to each hidden unit.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    dims: Vec<usize>,
    mode: Mode,
    /// `layer_inputs[l]` is the vector fed into layer `l`; entry 0 is the
    /// network input, later entries are post-ReLU, post-dropout.
    layer_inputs: Vec<Vec<f64>>,
    /// Pre-activations of each hidden layer (not the output layer).
    hidden_pre: Vec<Vec<f64>>,
    /// Per-unit multiplier applied after ReLU: `0` (dropped) or
    /// `1/(1-rate)` (kept); all-ones in eval mode or at rate 0.
    dropout_scale: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Dropout multipliers for hidden layer `l` (test observability).
    pub fn dropout_scale(&self, layer: usize) -> &[f64] {
        &self.dropout_scale[layer]
    }
}

fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "a network needs an input and an output dimension, got {dims:?}"
        )));
    }
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::InvalidConfig(format!(
            "layer widths must be positive, got {dims:?}"
        )));
    }
    Ok(())
}

impl MlpParams {
    /// Assembles parameters from explicit per-layer tensors, validating
    /// that shapes agree with `dims`. Intended for hand-built networks
    /// in tests and for constant-output stubs.
    pub fn from_layers(dims: Vec<usize>, layers: Vec<LayerTensors>) -> Result<Self> {
        validate_dims(&dims)?;
        if layers.len() != dims.len() - 1 {
            return Err(Error::ShapeMismatch(format!(
                "{} layers supplied for dims {dims:?}",
                layers.len()
            )));
        }
        for (l, layer) in layers.iter().enumerate() {
            let (in_dim, out_dim) = (dims[l], dims[l + 1]);
            if layer.w.len() != in_dim * out_dim || layer.b.len() != out_dim {
                return Err(Error::ShapeMismatch(format!(
                    "layer {l} tensors do not match {in_dim}x{out_dim}"
                )));
            }
        }
        Ok(MlpParams { dims, layers })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("validated dims")
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Flat copy of all parameters (weights then bias, layer by layer);
    /// used by bitwise-equality tests.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for layer in &self.layers {
            out.extend_from_slice(&layer.w);
            out.extend_from_slice(&layer.b);
        }
        out
    }
}

impl MlpGrads {
    pub fn zeros_like(params: &MlpParams) -> Self {
        let layers = (0..params.dims.len() - 1)
            .map(|l| LayerTensors::zeros(params.dims[l], params.dims[l + 1]))
            .collect();
        MlpGrads {
            dims: params.dims.clone(),
            layers,
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// Adds `other` into `self` (for minibatch accumulation).
    pub fn add_assign(&mut self, other: &MlpGrads) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::ShapeMismatch(
                "gradient accumulation across different architectures".into(),
            ));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.w.iter_mut().zip(&b.w) {
                *x += y;
            }
            for (x, y) in a.b.iter_mut().zip(&b.b) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for layer in &mut self.layers {
            for x in &mut layer.w {
                *x *= factor;
            }
            for x in &mut layer.b {
                *x *= factor;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().all(|x| x.is_finite()) && l.b.iter().all(|x| x.is_finite()))
    }
}

/// Seeded He(-fan-in) initialization: weights drawn from a zero-mean
/// normal with standard deviation `sqrt(2 / fan_in)`, biases zero.
/// Identical seeds produce bitwise-identical parameters.
pub fn init_params(dims: &[usize], seed: u64) -> Result<MlpParams> {
    validate_dims(dims)?;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(dims.len() - 1);
    for l in 0..dims.len() - 1 {
        let (in_dim, out_dim) = (dims[l], dims[l + 1]);
        let std = (2.0 / in_dim as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        let w = (0..in_dim * out_dim)
            .map(|_| normal.sample(&mut rng))
            .collect();
        layers.push(LayerTensors {
            w,
            b: vec![0.0; out_dim],
        });
    }
    Ok(MlpParams {
        dims: dims.to_vec(),
        layers,
    })
}

fn affine(layer: &LayerTensors, in_dim: usize, out_dim: usize, x: &[f64]) -> Vec<f64> {
    let mut z = layer.b.clone();
    for (o, zo) in z.iter_mut().enumerate().take(out_dim) {
        let row = &layer.w[o * in_dim..(o + 1) * in_dim];
        let mut acc = 0.0;
        for (wi, xi) in row.iter().zip(x) {
            acc += wi * xi;
        }
        *zo += acc;
    }
    z
}

/// Full forward pass returning output logits and the cache `backward`
/// consumes. In `Mode::Train` with a positive dropout rate, one uniform
/// draw per hidden unit is taken from `rng` (a fixed number of draws,
/// so generator consumption is reproducible); `Mode::Eval` never touches
/// the generator.
pub fn forward(
    params: &MlpParams,
    input: &[f64],
    mode: Mode,
    dropout: &DropoutSpec,
    rng: &mut impl Rng,
) -> Result<(Vec<f64>, ForwardCache)> {
    if input.len() != params.input_dim() {
        return Err(Error::ShapeMismatch(format!(
            "input has {} features, network expects {}",
            input.len(),
            params.input_dim()
        )));
    }
    let n_layers = params.layers.len();
    let mut layer_inputs = Vec::with_capacity(n_layers);
    let mut hidden_pre = Vec::with_capacity(n_layers.saturating_sub(1));
    let mut dropout_scale = Vec::with_capacity(n_layers.saturating_sub(1));
    let mut x = input.to_vec();
    for (l, layer) in params.layers.iter().enumerate() {
        let (in_dim, out_dim) = (params.dims[l], params.dims[l + 1]);
        let z = affine(layer, in_dim, out_dim, &x);
        layer_inputs.push(x);
        if l + 1 == n_layers {
            // Output layer: raw logits.
            x = z;
        } else {
            let mut h: Vec<f64> = z.iter().map(|&v| v.max(0.0)).collect();
            let scale = if mode == Mode::Train && dropout.rate > 0.0 {
                let keep_scale = 1.0 / (1.0 - dropout.rate);
                let s: Vec<f64> = (0..out_dim)
                    .map(|_| {
                        if rng.random::<f64>() < dropout.rate {
                            0.0
                        } else {
                            keep_scale
                        }
                    })
                    .collect();
                for (hv, sv) in h.iter_mut().zip(&s) {
                    *hv *= sv;
                }
                s
            } else {
                vec![1.0; out_dim]
            };
            hidden_pre.push(z);
            dropout_scale.push(scale);
            x = h;
        }
    }
    let cache = ForwardCache {
        dims: params.dims.clone(),
        mode,
        layer_inputs,
        hidden_pre,
        dropout_scale,
    };
    Ok((x, cache))
}

/// Evaluation-mode forward pass without cache allocation or RNG.
/// Produces logits bitwise-identical to `forward(..., Mode::Eval, ..)`.
pub fn forward_eval(params: &MlpParams, input: &[f64]) -> Result<Vec<f64>> {
    if input.len() != params.input_dim() {
        return Err(Error::ShapeMismatch(format!(
            "input has {} features, network expects {}",
            input.len(),
            params.input_dim()
        )));
    }
    let n_layers = params.layers.len();
    let mut x = input.to_vec();
    for (l, layer) in params.layers.iter().enumerate() {
        let (in_dim, out_dim) = (params.dims[l], params.dims[l + 1]);
        let mut z = affine(layer, in_dim, out_dim, &x);
        if l + 1 < n_layers {
            for v in &mut z {
                *v = v.max(0.0);
            }
        }
        x = z;
    }
    Ok(x)
}

/// Numerically stable softmax (shifts by the max logit).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// Softmax cross-entropy against an integer target class. Returns the
/// loss and its gradient with respect to the logits
/// (`softmax(logits) - onehot(target)`), computed with max-subtraction
/// so extreme logits neither overflow nor produce NaN.
pub fn softmax_cross_entropy(logits: &[f64], target: usize) -> Result<(f64, Vec<f64>)> {
    if target >= logits.len() {
        return Err(Error::IndexOutOfRange(format!(
            "target class {target} for {} logits",
            logits.len()
        )));
    }
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() - (logits[target] - m);
    let mut dlogits: Vec<f64> = exps.iter().map(|&e| e / sum).collect();
    dlogits[target] -= 1.0;
    Ok((loss, dlogits))
}

/// Analytic backprop through the cached forward pass. `dlogits` is the
/// loss gradient at the output logits; the result holds exact gradients
/// for every weight and bias.
pub fn backward(params: &MlpParams, cache: &ForwardCache, dlogits: &[f64]) -> Result<MlpGrads> {
    if cache.dims != params.dims {
        return Err(Error::ContractViolation(format!(
            "forward cache built for dims {:?}, parameters have dims {:?}",
            cache.dims, params.dims
        )));
    }
    if dlogits.len() != params.output_dim() {
        return Err(Error::ShapeMismatch(format!(
            "dlogits has length {}, network emits {} logits",
            dlogits.len(),
            params.output_dim()
        )));
    }
    let n_layers = params.layers.len();
    let mut grads = MlpGrads::zeros_like(params);
    // Gradient flowing into the linear part of the current layer.
    let mut dz = dlogits.to_vec();
    for l in (0..n_layers).rev() {
        let (in_dim, out_dim) = (params.dims[l], params.dims[l + 1]);
        let x = &cache.layer_inputs[l];
        let g = &mut grads.layers[l];
        for o in 0..out_dim {
            let go = dz[o];
            g.b[o] = go;
            let row = &mut g.w[o * in_dim..(o + 1) * in_dim];
            for (wi, xi) in row.iter_mut().zip(x) {
                *wi = go * xi;
            }
        }
        if l > 0 {
            // Propagate to the previous layer's output: through this
            // layer's weights, then through dropout and ReLU.
            let w = &params.layers[l].w;
            let mut dx = vec![0.0; in_dim];
            for o in 0..out_dim {
                let go = dz[o];
                let row = &w[o * in_dim..(o + 1) * in_dim];
                for (dxi, wi) in dx.iter_mut().zip(row) {
                    *dxi += go * wi;
                }
            }
            let pre = &cache.hidden_pre[l - 1];
            let scale = &cache.dropout_scale[l - 1];
            for i in 0..in_dim {
                dx[i] *= scale[i] * if pre[i] > 0.0 { 1.0 } else { 0.0 };
            }
            dz = dx;
        }
    }
    Ok(grads)
}

/// Adam optimizer state: first/second moment estimates plus the step
/// counter used for bias correction.
#[derive(Debug, Clone)]
pub struct AdamState {
    dims: Vec<usize>,
    pub m: Vec<LayerTensors>,
    pub v: Vec<LayerTensors>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    /// Fresh state (zero moments, step 0) with the standard
    /// beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8.
    pub fn new(params: &MlpParams) -> Self {
        let zeros = || {
            (0..params.dims.len() - 1)
                .map(|l| LayerTensors::zeros(params.dims[l], params.dims[l + 1]))
                .collect::<Vec<_>>()
        };
        AdamState {
            dims: params.dims.clone(),
            m: zeros(),
            v: zeros(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One bias-corrected Adam update, applied in place:
/// `p -= lr * m_hat / (sqrt(v_hat) + epsilon)`.
pub fn adam_step(
    params: &mut MlpParams,
    grads: &MlpGrads,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if !(lr.is_finite() && lr > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "learning rate must be positive and finite, got {lr}"
        )));
    }
    if grads.dims != params.dims || state.dims != params.dims {
        return Err(Error::ShapeMismatch(
            "optimizer step across mismatched architectures".into(),
        ));
    }
    if !grads.is_finite() {
        return Err(Error::Numeric(
            "non-finite gradient entering optimizer step".into(),
        ));
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for (l, layer) in params.layers.iter_mut().enumerate() {
        let g = &grads.layers[l];
        let m = &mut state.m[l];
        let v = &mut state.v[l];
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = state.beta1 * *m + (1.0 - state.beta1) * g;
            *v = state.beta2 * *v + (1.0 - state.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + state.epsilon);
        };
        for i in 0..layer.w.len() {
            update(&mut layer.w[i], g.w[i], &mut m.w[i], &mut v.w[i]);
        }
        for i in 0..layer.b.len() {
            update(&mut layer.b[i], g.b[i], &mut m.b[i], &mut v.b[i]);
        }
    }
    Ok(())
}
