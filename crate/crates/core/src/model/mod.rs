//! The sine-activated coordinate MLP.
//!
//! Parameters are plain `ndarray` matrices, one [`LayerParams`] per linear
//! layer with weights stored `out × in`. Hidden layers apply the configured
//! [`Activation`]; the last layer of a full network is linear.

mod adam;
mod checkpoint;
pub mod sincos;

pub use adam::AdamState;
pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint,
    CheckpointMeta, CHECKPOINT_VERSION,
};

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

pub const DEFAULT_OMEGA: f64 = 30.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    /// `sin(ω z)`
    Sine,
    /// `sin(ω (|z| + 1) z)`
    Finer,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Activation {
    pub kind: ActivationKind,
    pub omega: f64,
}

impl Default for Activation {
    fn default() -> Self {
        Self::sine(DEFAULT_OMEGA)
    }
}

impl Activation {
    pub fn sine(omega: f64) -> Self {
        Self {
            kind: ActivationKind::Sine,
            omega,
        }
    }

    pub fn finer(omega: f64) -> Self {
        Self {
            kind: ActivationKind::Finer,
            omega,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega > 0.0 && self.omega.is_finite()) {
            return Err(Error::invalid(format!("omega must be positive, got {}", self.omega)));
        }
        Ok(())
    }

    #[inline]
    pub fn apply(&self, z: f64) -> f64 {
        self.apply_with_derivative(z).0
    }

    /// `(σ(z), σ'(z))` from a single sine/cosine evaluation.
    #[inline(always)]
    pub fn apply_with_derivative(&self, z: f64) -> (f64, f64) {
        match self.kind {
            ActivationKind::Sine => {
                let (s, c) = sincos::sin_cos(self.omega * z);
                (s, self.omega * c)
            }
            ActivationKind::Finer => {
                let a = z.abs();
                let (s, c) = sincos::sin_cos(self.omega * (a + 1.0) * z);
                (s, self.omega * (2.0 * a + 1.0) * c)
            }
        }
    }

    /// Derivative with respect to `z`. For FINER, `d/dz[(|z|+1)z] = 2|z| + 1`
    /// using sign(0) = 0.
    #[inline]
    pub fn derivative(&self, z: f64) -> f64 {
        self.apply_with_derivative(z).1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    /// `out × in`
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
}

impl LayerParams {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weights: Array2::zeros((fan_out, fan_in)),
            biases: Array1::zeros(fan_out),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weights.ncols()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.nrows()
    }

    pub fn len(&self) -> usize {
        self.weights.len() + self.biases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.fan_in(), self.fan_out())
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(self.biases.iter()).all(|v| v.is_finite())
    }

    /// Weights (row-major) followed by biases.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.weights.iter().copied().chain(self.biases.iter().copied())
    }

    pub fn scale(&mut self, s: f64) {
        self.weights *= s;
        self.biases *= s;
    }

    pub fn add_scaled(&mut self, other: &LayerParams, s: f64) {
        self.weights.scaled_add(s, &other.weights);
        self.biases.scaled_add(s, &other.biases);
    }

    /// `z = input · Wᵀ + b`
    pub fn affine(&self, input: ArrayView2<f64>) -> Array2<f64> {
        let mut z = input.dot(&self.weights.t());
        z += &self.biases;
        z
    }
}

/// Uniform bound of layer `index` under the SIREN scheme: `1/fan_in` for
/// the first layer, `√(6/fan_in)/ω` afterwards.
pub fn siren_bound(index: usize, fan_in: usize, omega: f64) -> f64 {
    if index == 0 {
        1.0 / fan_in as f64
    } else {
        (6.0 / fan_in as f64).sqrt() / omega
    }
}

/// Draws one layer: weights row-major, then biases.
pub fn init_layer(
    index: usize,
    fan_in: usize,
    fan_out: usize,
    activation: Activation,
    rng: &mut Rng,
) -> LayerParams {
    let bound = siren_bound(index, fan_in, activation.omega);
    let weights = Array2::from_shape_simple_fn((fan_out, fan_in), || rng.uniform(-bound, bound));
    let bias_bound = if index == 0 && activation.kind == ActivationKind::Finer {
        std::f64::consts::FRAC_1_SQRT_2
    } else {
        bound
    };
    let biases = Array1::from_shape_simple_fn(fan_out, || rng.uniform(-bias_bound, bias_bound));
    LayerParams { weights, biases }
}

/// Intermediate values kept from a forward pass for backpropagation.
///
/// A cache can be passed back into [`forward_layers_into`] to reuse its
/// buffers across iterations.
#[derive(Clone, Debug, Default)]
pub struct ForwardCache {
    pub input: Array2<f64>,
    /// Pre-activations of every activated layer.
    pub pre: Vec<Array2<f64>>,
    /// Post-activations of every activated layer.
    pub post: Vec<Array2<f64>>,
    /// Activation derivatives at `pre`.
    pub slope: Vec<Array2<f64>>,
    /// Output of a linear final layer; unused when `activate_last`.
    linear_out: Array2<f64>,
    pub activate_last: bool,
}

impl ForwardCache {
    pub fn batch(&self) -> usize {
        self.input.nrows()
    }

    /// Output of the layer stack.
    pub fn output(&self) -> ArrayView2<'_, f64> {
        if self.activate_last {
            self.post.last().expect("activated stack is nonempty").view()
        } else {
            self.linear_out.view()
        }
    }
}

fn ensure_dim(a: &mut Array2<f64>, dim: (usize, usize)) {
    if a.dim() != dim {
        *a = Array2::zeros(dim);
    }
}

fn ensure_len(v: &mut Vec<Array2<f64>>, n: usize) {
    v.resize_with(n, || Array2::zeros((0, 0)));
}

/// `z = x · Wᵀ + b` written into `z`.
fn affine_into(layer: &LayerParams, x: ArrayView2<f64>, z: &mut Array2<f64>) {
    ensure_dim(z, (x.nrows(), layer.fan_out()));
    let dim = z.dim();
    z.assign(&layer.biases.broadcast(dim).expect("bias matches width"));
    general_mat_mul(1.0, &x, &layer.weights.t(), 1.0, z);
}

/// Runs a stack of layers. All but the last layer are activated; the last is
/// activated only when `activate_last` is set (an encoder stack).
pub fn forward_layers_into(
    layers: &[LayerParams],
    activation: Activation,
    input: ArrayView2<f64>,
    activate_last: bool,
    cache: &mut ForwardCache,
) -> Result<()> {
    let first = layers
        .first()
        .ok_or_else(|| Error::invalid("network has no layers"))?;
    if input.ncols() != first.fan_in() {
        return Err(Error::invalid(format!(
            "input has {} columns, network expects {}",
            input.ncols(),
            first.fan_in()
        )));
    }
    let n = layers.len();
    let activated = if activate_last { n } else { n - 1 };
    ensure_len(&mut cache.pre, activated);
    ensure_len(&mut cache.post, activated);
    ensure_len(&mut cache.slope, activated);
    cache.activate_last = activate_last;
    ensure_dim(&mut cache.input, input.dim());
    cache.input.assign(&input);
    let ForwardCache {
        input,
        pre,
        post,
        slope,
        linear_out,
        ..
    } = cache;
    for (i, layer) in layers.iter().enumerate() {
        let x = if i == 0 { input.view() } else { post[i - 1].view() };
        if i < activated {
            affine_into(layer, x, &mut pre[i]);
            let dim = pre[i].dim();
            ensure_dim(&mut post[i], dim);
            ensure_dim(&mut slope[i], dim);
            sincos::activate_slice(
                pre[i].as_slice().expect("standard layout"),
                post[i].as_slice_mut().expect("standard layout"),
                slope[i].as_slice_mut().expect("standard layout"),
                activation.omega,
                activation.kind == ActivationKind::Finer,
            );
        } else {
            affine_into(layer, x, linear_out);
        }
    }
    Ok(())
}

pub fn forward_layers(
    layers: &[LayerParams],
    activation: Activation,
    input: ArrayView2<f64>,
    activate_last: bool,
) -> Result<(Array2<f64>, ForwardCache)> {
    let mut cache = ForwardCache::default();
    forward_layers_into(layers, activation, input, activate_last, &mut cache)?;
    Ok((cache.output().to_owned(), cache))
}

/// Reusable outputs of [`backward_layers_into`].
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    /// Per-layer parameter gradients.
    pub layers: Vec<LayerParams>,
    /// Gradient with respect to the stack input.
    pub input: Array2<f64>,
    /// Gradients with respect to each layer's pre-activation.
    deltas: Vec<Array2<f64>>,
}

impl Gradients {
    pub fn refs(&self) -> Vec<&LayerParams> {
        self.layers.iter().collect()
    }

    /// Per-sample gradients with respect to each layer's pre-activation,
    /// from the last backward pass.
    pub fn deltas(&self) -> &[Array2<f64>] {
        &self.deltas
    }
}

/// Backpropagates `grad_output` (gradient of a scalar loss with respect to
/// the stack output) through the layers, filling `out` with per-layer
/// parameter gradients and the gradient with respect to the stack input.
pub fn backward_layers_into(
    layers: &[LayerParams],
    cache: &ForwardCache,
    grad_output: ArrayView2<f64>,
    out: &mut Gradients,
) -> Result<()> {
    let n = layers.len();
    let activated = if cache.activate_last { n } else { n.saturating_sub(1) };
    if n == 0 || cache.pre.len() != activated || cache.slope.len() != activated {
        return Err(Error::invalid("forward cache does not match the layer stack"));
    }
    let out_width = layers[n - 1].fan_out();
    if grad_output.dim() != (cache.batch(), out_width) {
        return Err(Error::invalid(format!(
            "output gradient has shape {:?}, expected ({}, {out_width})",
            grad_output.dim(),
            cache.batch()
        )));
    }
    for (i, layer) in layers.iter().enumerate().take(activated) {
        if cache.pre[i].ncols() != layer.fan_out() {
            return Err(Error::invalid("forward cache does not match the layer stack"));
        }
    }
    if out.layers.len() != n
        || out
            .layers
            .iter()
            .zip(layers)
            .any(|(g, l)| g.weights.dim() != l.weights.dim())
    {
        out.layers = layers.iter().map(LayerParams::zeros_like).collect();
    }
    ensure_len(&mut out.deltas, n);
    ensure_dim(&mut out.deltas[n - 1], grad_output.dim());
    out.deltas[n - 1].assign(&grad_output);
    if cache.activate_last {
        out.deltas[n - 1] *= &cache.slope[n - 1];
    }
    for i in (0..n).rev() {
        let x = if i == 0 {
            cache.input.view()
        } else {
            cache.post[i - 1].view()
        };
        let (before, rest) = out.deltas.split_at_mut(i);
        let delta = &rest[0];
        let g = &mut out.layers[i];
        general_mat_mul(1.0, &delta.t(), &x, 0.0, &mut g.weights);
        g.biases.assign(&delta.sum_axis(Axis(0)));
        let target = if i > 0 {
            &mut before[i - 1]
        } else {
            &mut out.input
        };
        ensure_dim(target, (delta.nrows(), layers[i].fan_in()));
        general_mat_mul(1.0, delta, &layers[i].weights, 0.0, target);
        if i > 0 {
            *target *= &cache.slope[i - 1];
        }
    }
    Ok(())
}

pub fn backward_layers(
    layers: &[LayerParams],
    cache: &ForwardCache,
    grad_output: ArrayView2<f64>,
) -> Result<(Vec<LayerParams>, Array2<f64>)> {
    let mut g = Gradients::default();
    backward_layers_into(layers, cache, grad_output, &mut g)?;
    Ok((g.layers, g.input))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SineMlpParams {
    layers: Vec<LayerParams>,
    activation: Activation,
    layout: Vec<usize>,
}

/// Default image layout: 2-D input, five hidden sine layers of width 256,
/// `channels` outputs.
pub fn default_layout(channels: usize) -> Vec<usize> {
    layout_with(2, 256, 5, channels)
}

/// `(d_in, hidden × depth, d_out)`
pub fn layout_with(d_in: usize, width: usize, hidden: usize, d_out: usize) -> Vec<usize> {
    let mut l = vec![d_in];
    l.extend(std::iter::repeat_n(width, hidden));
    l.push(d_out);
    l
}

pub fn validate_layout(layout: &[usize]) -> Result<()> {
    if layout.len() < 2 {
        return Err(Error::invalid(format!(
            "layout needs at least 2 entries, got {}",
            layout.len()
        )));
    }
    if layout.contains(&0) {
        return Err(Error::invalid("layout widths must be at least 1"));
    }
    Ok(())
}

pub fn init_siren(layout: &[usize], activation: Activation, rng: &mut Rng) -> Result<SineMlpParams> {
    validate_layout(layout)?;
    activation.validate()?;
    let layers = layout
        .windows(2)
        .enumerate()
        .map(|(i, w)| init_layer(i, w[0], w[1], activation, rng))
        .collect();
    Ok(SineMlpParams {
        layers,
        activation,
        layout: layout.to_vec(),
    })
}

impl SineMlpParams {
    pub fn from_layers(layers: Vec<LayerParams>, activation: Activation) -> Result<Self> {
        activation.validate()?;
        let first = layers
            .first()
            .ok_or_else(|| Error::invalid("network has no layers"))?;
        let mut layout = vec![first.fan_in()];
        for (i, l) in layers.iter().enumerate() {
            if l.fan_in() != *layout.last().unwrap() {
                return Err(Error::invalid(format!(
                    "layer {i} expects {} inputs, previous layer gives {}",
                    l.fan_in(),
                    layout.last().unwrap()
                )));
            }
            if l.biases.len() != l.fan_out() {
                return Err(Error::invalid(format!("layer {i} bias length mismatch")));
            }
            if !l.is_finite() {
                return Err(Error::invalid(format!("layer {i} has non-finite entries")));
            }
            layout.push(l.fan_out());
        }
        validate_layout(&layout)?;
        Ok(Self {
            layers,
            activation,
            layout,
        })
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LayerParams] {
        &mut self.layers
    }

    pub fn into_layers(self) -> Vec<LayerParams> {
        self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn layout(&self) -> &[usize] {
        &self.layout
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerParams::len).sum()
    }

    pub fn forward(&self, coords: ArrayView2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
        forward_layers(&self.layers, self.activation, coords, false)
    }

    /// Forward pass without keeping the cache.
    pub fn predict(&self, coords: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.forward(coords).map(|(out, _)| out)
    }

    pub fn forward_into(&self, coords: ArrayView2<f64>, cache: &mut ForwardCache) -> Result<()> {
        forward_layers_into(&self.layers, self.activation, coords, false, cache)
    }

    pub fn backward_into(
        &self,
        cache: &ForwardCache,
        grad_outputs: ArrayView2<f64>,
        out: &mut Gradients,
    ) -> Result<()> {
        if cache.activate_last || cache.pre.len() + 1 != self.layers.len() {
            return Err(Error::invalid("forward cache was not produced by this network"));
        }
        backward_layers_into(&self.layers, cache, grad_outputs, out)
    }

    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_outputs: ArrayView2<f64>,
    ) -> Result<Vec<LayerParams>> {
        if cache.activate_last || cache.pre.len() + 1 != self.layers.len() {
            return Err(Error::invalid("forward cache was not produced by this network"));
        }
        backward_layers(&self.layers, cache, grad_outputs).map(|(g, _)| g)
    }
}

/// Gradient of `mean((pred − target)²)` with respect to `pred`, and the loss.
pub fn mse_grad(pred: ArrayView2<f64>, target: &Array2<f64>) -> (f64, Array2<f64>) {
    let n = pred.len() as f64;
    let diff = &pred - target;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    (loss, diff * (2.0 / n))
}
