//! Discriminative classifiers `x -> logits`, with softmax on top.
//!
//! Parameters live in one flat vector. Layer `l` maps `fan_in -> fan_out` and
//! occupies `fan_out * fan_in` weights (row-major, `W[out][in]`) followed by
//! `fan_out` biases; layers are laid out in order from input to output. That
//! layout is a pure function of the architecture, so checkpoints are portable.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_for, Stream};
use crate::simplex::SimplexVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `pre` and output `out`.
    /// ReLU uses 0 at the kink.
    fn derivative(self, pre: f64, out: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - out * out,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    Linear,
    Mlp {
        hidden: Vec<usize>,
        activation: Activation,
    },
}

impl Architecture {
    fn validate(&self) -> Result<()> {
        if let Architecture::Mlp { hidden, .. } = self {
            if hidden.is_empty() {
                return Err(Error::InvalidArchitecture(
                    "mlp needs at least one hidden layer; use linear instead".into(),
                ));
            }
            if hidden.contains(&0) {
                return Err(Error::InvalidArchitecture("hidden layer of width 0".into()));
            }
        }
        Ok(())
    }

    fn widths(&self, input_dim: usize, n_classes: usize) -> Vec<usize> {
        let mut widths = vec![input_dim];
        if let Architecture::Mlp { hidden, .. } = self {
            widths.extend(hidden);
        }
        widths.push(n_classes);
        widths
    }
}

/// Slice of the flat parameter vector belonging to one layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerLayout {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: Range<usize>,
    pub bias: Range<usize>,
}

/// The layer layout for an architecture.
pub fn layout(arch: &Architecture, input_dim: usize, n_classes: usize) -> Vec<LayerLayout> {
    let widths = arch.widths(input_dim, n_classes);
    let mut offset = 0;
    widths
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let weights = offset..offset + fan_in * fan_out;
            let bias = weights.end..weights.end + fan_out;
            offset = bias.end;
            LayerLayout {
                fan_in,
                fan_out,
                weights,
                bias,
            }
        })
        .collect()
}

/// Parameters of a classifier plus the shape information needed to use them.
///
/// Checkpoints serialize as
/// `{"architecture": .., "input_dim": .., "n_classes": .., "flat": [..]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Checkpoint", into = "Checkpoint")]
pub struct ClassifierParams {
    pub architecture: Architecture,
    pub input_dim: usize,
    pub n_classes: usize,
    pub flat: Vec<f64>,
    layers: Vec<LayerLayout>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    architecture: Architecture,
    input_dim: usize,
    n_classes: usize,
    flat: Vec<f64>,
}

impl TryFrom<Checkpoint> for ClassifierParams {
    type Error = Error;
    fn try_from(c: Checkpoint) -> Result<Self> {
        Self::from_flat(c.architecture, c.input_dim, c.n_classes, c.flat)
    }
}

impl From<ClassifierParams> for Checkpoint {
    fn from(p: ClassifierParams) -> Self {
        Checkpoint {
            architecture: p.architecture,
            input_dim: p.input_dim,
            n_classes: p.n_classes,
            flat: p.flat,
        }
    }
}

/// Intermediate values of one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    // activations[0] is the input; the last entry is the logits
    activations: Vec<Vec<f64>>,
    pre_activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn logits(&self) -> &[f64] {
        self.activations.last().expect("at least one layer")
    }
}

impl ClassifierParams {
    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` weights and zero biases.
    pub fn init(
        architecture: Architecture,
        input_dim: usize,
        n_classes: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut params = Self::zeros(architecture, input_dim, n_classes)?;
        let mut rng = rng_for(seed, Stream::ModelInit);
        for layer in params.layers.clone() {
            let bound = 1.0 / (layer.fan_in as f64).sqrt();
            for w in &mut params.flat[layer.weights] {
                *w = rng.random_range(-bound..bound);
            }
        }
        Ok(params)
    }

    pub fn zeros(architecture: Architecture, input_dim: usize, n_classes: usize) -> Result<Self> {
        let n = layout(&architecture, input_dim, n_classes)
            .last()
            .map_or(0, |l| l.bias.end);
        Self::from_flat(architecture, input_dim, n_classes, vec![0.0; n])
    }

    /// Wraps an existing flat vector, checking its length against the layout.
    pub fn from_flat(
        architecture: Architecture,
        input_dim: usize,
        n_classes: usize,
        flat: Vec<f64>,
    ) -> Result<Self> {
        architecture.validate()?;
        if input_dim < 1 {
            return Err(Error::InvalidArchitecture("input_dim must be at least 1".into()));
        }
        if n_classes < 2 {
            return Err(Error::InvalidClassCount(n_classes));
        }
        let layers = layout(&architecture, input_dim, n_classes);
        let expected = layers.last().map_or(0, |l| l.bias.end);
        if flat.len() != expected {
            return Err(Error::DimensionMismatch {
                context: "flat parameter vector",
                expected,
                found: flat.len(),
            });
        }
        Ok(Self {
            architecture,
            input_dim,
            n_classes,
            flat,
            layers,
        })
    }

    pub fn n_params(&self) -> usize {
        self.flat.len()
    }

    pub fn layers(&self) -> &[LayerLayout] {
        &self.layers
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                context: "feature vector",
                expected: self.input_dim,
                found: x.len(),
            });
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput(i));
        }
        Ok(())
    }

    pub fn forward_logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(x)?.activations.pop().expect("logits"))
    }

    /// Forward pass that records what the backward pass needs.
    pub fn forward_cached(&self, x: &[f64]) -> Result<ForwardCache> {
        self.check_input(x)?;
        let n_layers = self.layers.len();
        let mut activations = Vec::with_capacity(n_layers + 1);
        let mut pre_activations = Vec::with_capacity(n_layers);
        activations.push(x.to_vec());
        for (l, layer) in self.layers.iter().enumerate() {
            let input = &activations[l];
            let w = &self.flat[layer.weights.clone()];
            let b = &self.flat[layer.bias.clone()];
            let pre: Vec<f64> = (0..layer.fan_out)
                .map(|o| {
                    let row = &w[o * layer.fan_in..(o + 1) * layer.fan_in];
                    b[o] + row.iter().zip(input).map(|(a, v)| a * v).sum::<f64>()
                })
                .collect();
            let out = match (&self.architecture, l + 1 < n_layers) {
                (Architecture::Mlp { activation, .. }, true) => {
                    pre.iter().map(|&v| activation.apply(v)).collect()
                }
                _ => pre.clone(),
            };
            pre_activations.push(pre);
            activations.push(out);
        }
        Ok(ForwardCache {
            activations,
            pre_activations,
        })
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<SimplexVector> {
        let logits = self.forward_logits(x)?;
        Ok(SimplexVector::with_tolerance(softmax(&logits), 1e-12)
            .expect("softmax output is a probability vector"))
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.forward_logits(x)?))
    }

    /// Gradient of `upstream . logits(x)` with respect to the flat parameters.
    pub fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        let cache = self.forward_cached(x)?;
        let mut grad = vec![0.0; self.n_params()];
        self.backward_accumulate(&cache, upstream, 1.0, &mut grad)?;
        Ok(grad)
    }

    /// Adds `scale * d(upstream . logits)/dW` into `grad`.
    pub fn backward_accumulate(
        &self,
        cache: &ForwardCache,
        upstream: &[f64],
        scale: f64,
        grad: &mut [f64],
    ) -> Result<()> {
        if upstream.len() != self.n_classes {
            return Err(Error::DimensionMismatch {
                context: "upstream gradient",
                expected: self.n_classes,
                found: upstream.len(),
            });
        }
        if grad.len() != self.n_params() {
            return Err(Error::DimensionMismatch {
                context: "gradient buffer",
                expected: self.n_params(),
                found: grad.len(),
            });
        }
        let n_layers = self.layers.len();
        // delta = d(objective)/d(pre-activation of layer l)
        let mut delta: Vec<f64> = upstream.iter().map(|u| u * scale).collect();
        for l in (0..n_layers).rev() {
            let layer = &self.layers[l];
            let input = &cache.activations[l];
            let gw = &mut grad[layer.weights.clone()];
            for o in 0..layer.fan_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &mut gw[o * layer.fan_in..(o + 1) * layer.fan_in];
                for (g, v) in row.iter_mut().zip(input) {
                    *g += d * v;
                }
            }
            for (g, d) in grad[layer.bias.clone()].iter_mut().zip(&delta) {
                *g += d;
            }
            if l == 0 {
                break;
            }
            let w = &self.flat[layer.weights.clone()];
            let mut prev = vec![0.0; layer.fan_in];
            for o in 0..layer.fan_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &w[o * layer.fan_in..(o + 1) * layer.fan_in];
                for (p, a) in prev.iter_mut().zip(row) {
                    *p += d * a;
                }
            }
            if let Architecture::Mlp { activation, .. } = &self.architecture {
                let pre = &cache.pre_activations[l - 1];
                let out = &cache.activations[l];
                for ((p, &z), &a) in prev.iter_mut().zip(pre).zip(out) {
                    *p *= activation.derivative(z, a);
                }
            }
            delta = prev;
        }
        Ok(())
    }
}

/// Numerically stable softmax (max subtraction).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `log softmax(logits)` via log-sum-exp.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|&l| l - lse).collect()
}

/// `log sum exp(v)`; `-inf` entries contribute nothing, and an empty or
/// all-`-inf` input gives `-inf`.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + v.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Row-major `n x d` matrix of finite features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n: usize,
    d: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(n: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * d {
            return Err(Error::DimensionMismatch {
                context: "feature matrix",
                expected: n * d,
                found: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput(i));
        }
        Ok(Self { n, d, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::DimensionMismatch {
                context: "feature rows",
                expected: d,
                found: r.len(),
            });
        }
        Self::new(rows.len(), d, rows.concat())
    }

    pub fn n_rows(&self) -> usize {
        self.n
    }

    pub fn n_cols(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.d.max(1)).take(self.n)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Rows selected by `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self {
            n: indices.len(),
            d: self.d,
            data,
        }
    }
}

/// Fraction of rows whose argmax prediction equals the target.
pub fn accuracy(params: &ClassifierParams, features: &FeatureMatrix, targets: &[usize]) -> Result<f64> {
    if features.n_rows() != targets.len() {
        return Err(Error::DimensionMismatch {
            context: "accuracy targets",
            expected: features.n_rows(),
            found: targets.len(),
        });
    }
    if targets.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut correct = 0usize;
    for (x, &t) in features.rows().zip(targets) {
        if params.predict(x)? == t {
            correct += 1;
        }
    }
    Ok(correct as f64 / targets.len() as f64)
}
