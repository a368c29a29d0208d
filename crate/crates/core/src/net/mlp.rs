use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::{axpy, dot, Matrix};
use crate::error::{DsrlError, Result};

/// Pre-activations are clamped here before the output `tanh` so that a
/// bounded head never reaches its bounds exactly.
const TANH_CLAMP: f64 = 18.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutputActivation {
    Identity,
    /// `center + half_width * tanh(z)` mapping onto `(lower, upper)` per output.
    ScaledTanh { lower: Vec<f64>, upper: Vec<f64> },
}

/// Weights and biases of a fully connected network.
///
/// `weights[l]` has shape `(layer_sizes[l + 1], layer_sizes[l])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMlp")]
pub struct MlpParams {
    layer_sizes: Vec<usize>,
    weights: Vec<Matrix>,
    biases: Vec<Vec<f64>>,
    hidden_activation: Activation,
    output_activation: OutputActivation,
}

#[derive(Deserialize)]
struct RawMlp {
    layer_sizes: Vec<usize>,
    weights: Vec<Matrix>,
    biases: Vec<Vec<f64>>,
    hidden_activation: Activation,
    output_activation: OutputActivation,
}

impl TryFrom<RawMlp> for MlpParams {
    type Error = DsrlError;

    fn try_from(raw: RawMlp) -> Result<Self> {
        let params = MlpParams {
            layer_sizes: raw.layer_sizes,
            weights: raw.weights,
            biases: raw.biases,
            hidden_activation: raw.hidden_activation,
            output_activation: raw.output_activation,
        };
        params.validate()?;
        Ok(params)
    }
}

/// Activations recorded by a single-sample forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache(BatchCache);

/// Activations recorded by a batched forward pass.
#[derive(Debug, Clone)]
pub struct BatchCache {
    /// Input to each layer, `batch x layer_sizes[l]`.
    inputs: Vec<Matrix>,
    /// Pre-activation of each layer, `batch x layer_sizes[l + 1]`.
    pre: Vec<Matrix>,
    /// Output of each layer after its activation.
    post: Vec<Matrix>,
}

impl BatchCache {
    pub fn batch(&self) -> usize {
        self.inputs.first().map_or(0, Matrix::rows)
    }
}

/// Gradients mirroring an [`MlpParams`], plus the gradient with respect to
/// the network input (one row per sample).
#[derive(Debug, Clone, PartialEq)]
pub struct GradBundle {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
    pub input_grad: Matrix,
}

impl GradBundle {
    pub fn zeros_like(params: &MlpParams) -> Self {
        GradBundle {
            weights: params.weights.iter().map(|w| Matrix::zeros(w.rows(), w.cols())).collect(),
            biases: params.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            input_grad: Matrix::zeros(0, params.input_size()),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.weights.iter().all(|w| w.data().iter().all(|&v| v == 0.0))
            && self.biases.iter().all(|b| b.iter().all(|&v| v == 0.0))
            && self.input_grad.data().iter().all(|&v| v == 0.0)
    }

    /// Multiplies every parameter gradient (not the input gradient) by `s`.
    pub fn scale_params(&mut self, s: f64) {
        self.weights.iter_mut().for_each(|w| w.scale_mut(s));
        self.biases.iter_mut().flatten().for_each(|v| *v *= s);
    }

    pub fn input_grad_vec(&self) -> Vec<f64> {
        self.input_grad.row(0).to_vec()
    }
}

impl MlpParams {
    /// All-zero network.
    pub fn zeros(
        layer_sizes: &[usize],
        hidden_activation: Activation,
        output_activation: OutputActivation,
    ) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.iter().any(|&s| s == 0) {
            return Err(DsrlError::Shape(format!("invalid layer sizes {layer_sizes:?}")));
        }
        let params = MlpParams {
            layer_sizes: layer_sizes.to_vec(),
            weights: layer_sizes.windows(2).map(|w| Matrix::zeros(w[1], w[0])).collect(),
            biases: layer_sizes[1..].iter().map(|&s| vec![0.0; s]).collect(),
            hidden_activation,
            output_activation,
        };
        params.validate()?;
        Ok(params)
    }

    /// Fan-in uniform initialization; the last layer is drawn from
    /// `±final_scale` so initial outputs sit near the middle of their range.
    pub fn init<R: Rng + ?Sized>(
        layer_sizes: &[usize],
        hidden_activation: Activation,
        output_activation: OutputActivation,
        final_scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut params = Self::zeros(layer_sizes, hidden_activation, output_activation)?;
        let last = params.weights.len() - 1;
        for (l, (w, b)) in params.weights.iter_mut().zip(&mut params.biases).enumerate() {
            let bound = if l == last { final_scale } else { 1.0 / (w.cols() as f64).sqrt() };
            for v in w.data_mut().iter_mut().chain(b.iter_mut()) {
                *v = rng.gen_range(-bound..=bound);
            }
        }
        Ok(params)
    }

    fn validate(&self) -> Result<()> {
        let layers = self.layer_sizes.len().saturating_sub(1);
        if layers == 0 || self.weights.len() != layers || self.biases.len() != layers {
            return Err(DsrlError::Shape("layer count disagrees with weights/biases".into()));
        }
        for l in 0..layers {
            let (rows, cols) = self.weights[l].shape();
            if rows != self.layer_sizes[l + 1] || cols != self.layer_sizes[l] {
                return Err(DsrlError::Shape(format!(
                    "layer {l}: weight {rows}x{cols} but sizes {}->{}",
                    self.layer_sizes[l],
                    self.layer_sizes[l + 1]
                )));
            }
            if self.biases[l].len() != rows {
                return Err(DsrlError::Shape(format!("layer {l}: bias length {}", self.biases[l].len())));
            }
            if !self.weights[l].is_finite() || self.biases[l].iter().any(|v| !v.is_finite()) {
                return Err(DsrlError::non_finite(format!("layer {l} parameters")));
            }
        }
        if let OutputActivation::ScaledTanh { lower, upper } = &self.output_activation {
            let out = self.output_size();
            if lower.len() != out || upper.len() != out {
                return Err(DsrlError::Shape("scaled_tanh bounds length".into()));
            }
            if lower.iter().zip(upper).any(|(l, u)| !(l.is_finite() && u.is_finite() && l < u)) {
                return Err(DsrlError::Argument("scaled_tanh bounds must be finite with lower < upper".into()));
            }
        }
        Ok(())
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_size(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.layer_sizes.last().expect("validated")
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [Matrix] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.biases
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden_activation
    }

    pub fn output_activation(&self) -> &OutputActivation {
        &self.output_activation
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.data().len()).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    pub fn same_shape(&self, other: &MlpParams) -> bool {
        self.layer_sizes == other.layer_sizes
    }

    /// Visits each layer's weight and bias storage mutably, paired with the
    /// matching storage of `other`.
    pub fn zip_layers_mut<'a>(
        &'a mut self,
        other: &'a MlpParams,
    ) -> Result<impl Iterator<Item = (&'a mut [f64], &'a [f64])>> {
        if !self.same_shape(other) {
            return Err(DsrlError::Shape("networks differ in layer sizes".into()));
        }
        let w = self.weights.iter_mut().zip(&other.weights).map(|(a, b)| (a.data_mut(), b.data()));
        let b = self.biases.iter_mut().zip(&other.biases).map(|(a, b)| (a.as_mut_slice(), b.as_slice()));
        Ok(w.chain(b))
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        let x = Matrix::from_vec(1, input.len(), input.to_vec())?;
        let (y, cache) = self.forward_batch(&x)?;
        Ok((y.row(0).to_vec(), ForwardCache(cache)))
    }

    /// Forward pass without keeping the activation record.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.forward(input).map(|(y, _)| y)
    }

    /// Forward pass on a `batch x input_size` matrix.
    pub fn forward_batch(&self, x: &Matrix) -> Result<(Matrix, BatchCache)> {
        if x.cols() != self.input_size() {
            return Err(DsrlError::Shape(format!(
                "network expects {} inputs, got {}",
                self.input_size(),
                x.cols()
            )));
        }
        let batch = x.rows();
        let last = self.num_layers() - 1;
        let mut cache = BatchCache {
            inputs: Vec::with_capacity(self.num_layers()),
            pre: Vec::with_capacity(self.num_layers()),
            post: Vec::with_capacity(self.num_layers()),
        };
        let mut current = x.clone();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let wt = w.transpose();
            let mut z = Matrix::zeros(batch, w.rows());
            for s in 0..batch {
                let out = z.row_mut(s);
                out.copy_from_slice(b);
                for (i, &xi) in current.row(s).iter().enumerate() {
                    if xi != 0.0 {
                        axpy(xi, wt.row(i), out);
                    }
                }
            }
            let mut a = z.clone();
            if l < last {
                a.data_mut().iter_mut().for_each(|v| *v = self.hidden_activation.apply(*v));
            } else if let OutputActivation::ScaledTanh { lower, upper } = &self.output_activation {
                for s in 0..batch {
                    for (j, v) in a.row_mut(s).iter_mut().enumerate() {
                        *v = scaled_tanh(*v, lower[j], upper[j]);
                    }
                }
            }
            cache.inputs.push(current);
            cache.pre.push(z);
            cache.post.push(a.clone());
            current = a;
        }
        Ok((current, cache))
    }

    /// Gradient of `upstream · output` with respect to every parameter and
    /// the input.
    pub fn backward(&self, cache: &ForwardCache, upstream: &[f64]) -> Result<GradBundle> {
        let up = Matrix::from_vec(1, upstream.len(), upstream.to_vec())?;
        self.backward_batch(&cache.0, &up)
    }

    /// Batched backward pass. Parameter gradients are summed over the batch;
    /// input gradients are kept per sample.
    pub fn backward_batch(&self, cache: &BatchCache, upstream: &Matrix) -> Result<GradBundle> {
        let layers = self.num_layers();
        let consistent = cache.inputs.len() == layers
            && cache.pre.len() == layers
            && (0..layers).all(|l| {
                cache.inputs[l].cols() == self.layer_sizes[l]
                    && cache.pre[l].cols() == self.layer_sizes[l + 1]
            });
        if !consistent {
            return Err(DsrlError::Shape("activation cache does not match network".into()));
        }
        let batch = cache.batch();
        if upstream.shape() != (batch, self.output_size()) {
            return Err(DsrlError::Shape(format!(
                "upstream {:?}, expected ({batch}, {})",
                upstream.shape(),
                self.output_size()
            )));
        }
        let mut grads = GradBundle::zeros_like(self);
        let mut delta = upstream.clone();
        for l in (0..layers).rev() {
            // delta currently holds d/d(post-activation); turn it into d/d(pre).
            let z = &cache.pre[l];
            let a = &cache.post[l];
            if l + 1 < layers {
                for (d, (zv, av)) in delta.data_mut().iter_mut().zip(z.data().iter().zip(a.data())) {
                    *d *= self.hidden_activation.derivative(*zv, *av);
                }
            } else if let OutputActivation::ScaledTanh { lower, upper } = &self.output_activation {
                for s in 0..batch {
                    let zr = z.row(s);
                    for (j, d) in delta.row_mut(s).iter_mut().enumerate() {
                        *d *= scaled_tanh_derivative(zr[j], lower[j], upper[j]);
                    }
                }
            }
            let input = &cache.inputs[l];
            let gw = &mut grads.weights[l];
            let gb = &mut grads.biases[l];
            for s in 0..batch {
                let ds = delta.row(s);
                axpy(1.0, ds, gb);
                for (o, &d) in ds.iter().enumerate() {
                    if d != 0.0 {
                        axpy(d, input.row(s), gw.row_mut(o));
                    }
                }
            }
            let w = &self.weights[l];
            let mut prev = Matrix::zeros(batch, w.cols());
            for s in 0..batch {
                let out = prev.row_mut(s);
                for (o, &d) in delta.row(s).iter().enumerate() {
                    if d != 0.0 {
                        axpy(d, w.row(o), out);
                    }
                }
            }
            delta = prev;
        }
        grads.input_grad = delta;
        Ok(grads)
    }

    /// `self ← tau * source + (1 - tau) * self`.
    pub fn blend_from(&mut self, source: &MlpParams, tau: f64) -> Result<()> {
        for (dst, src) in self.zip_layers_mut(source)? {
            for (d, s) in dst.iter_mut().zip(src) {
                *d = tau * s + (1.0 - tau) * *d;
            }
        }
        Ok(())
    }

    /// Sum of `grads · params` style inner product; used by tests.
    pub fn dot_params(&self, grads: &GradBundle) -> f64 {
        self.weights.iter().zip(&grads.weights).map(|(w, g)| dot(w.data(), g.data())).sum::<f64>()
            + self.biases.iter().zip(&grads.biases).map(|(b, g)| dot(b, g)).sum::<f64>()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

fn scaled_tanh(z: f64, lower: f64, upper: f64) -> f64 {
    let center = 0.5 * (lower + upper);
    let half = 0.5 * (upper - lower);
    let y = center + half * z.clamp(-TANH_CLAMP, TANH_CLAMP).tanh();
    // rounding can still land on a bound for wide or offset ranges
    if y >= upper {
        upper.next_down()
    } else if y <= lower {
        lower.next_up()
    } else {
        y
    }
}

fn scaled_tanh_derivative(z: f64, lower: f64, upper: f64) -> f64 {
    if z.abs() > TANH_CLAMP {
        return 0.0;
    }
    let t = z.tanh();
    0.5 * (upper - lower) * (1.0 - t * t)
}
