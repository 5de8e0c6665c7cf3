//! Dense feed-forward networks with backpropagation.
//!
//! Parameters are addressed through a single flat index space. The canonical
//! order walks layers first to last; inside a layer every weight comes first in
//! row-major `[out × in]` order, followed by every bias. [`ParamRef`] names a
//! slot in that space and [`Model::locate`] maps it back to its layer position.
//!
//! The per-class gradient used for parameter sensitivity differentiates the
//! pre-softmax logit, summed over every sample of a batch, in one backward pass.

mod metrics;
mod optim;

pub use metrics::{BatchMetrics, ClassTally};
pub use optim::{OptimizerKind, OptimizerState};

use rand::Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Row-major block of `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} holds {expected} values, got {}",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite tensor value at {pos}")));
        }
        Ok(Tensor { shape, values })
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], values)
    }

    /// Stacks equally sized rows into an `[n × d]` matrix.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut values = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            let row = row.as_ref();
            if row.len() != cols {
                return Err(Error::Shape(format!("ragged rows: {} vs {cols}", row.len())));
            }
            values.extend_from_slice(row);
        }
        Tensor::matrix(rows.len(), cols, values)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 0,
            1 => 1,
            _ => self.shape[1..].iter().product(),
        }
    }

    pub fn row(&self, k: usize) -> &[f64] {
        let c = self.cols();
        &self.values[k * c..(k + 1) * c]
    }

    pub(crate) fn from_raw(rows: usize, cols: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(rows * cols, values.len());
        Tensor {
            shape: vec![rows, cols],
            values,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Identity,
    Relu,
}

impl Activation {
    fn code(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
        }
    }
}

/// Affine map followed by an element-wise activation. Weights are `[out × in]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    inputs: usize,
    outputs: usize,
    weights: Vec<f64>,
    biases: Vec<f64>,
    activation: Activation,
}

impl DenseLayer {
    pub fn new(
        inputs: usize,
        outputs: usize,
        weights: Vec<f64>,
        biases: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        if inputs == 0 || outputs == 0 {
            return Err(Error::Shape("layer widths must be positive".into()));
        }
        if weights.len() != inputs * outputs || biases.len() != outputs {
            return Err(Error::Shape(format!(
                "layer {inputs}->{outputs} needs {} weights and {outputs} biases, got {} and {}",
                inputs * outputs,
                weights.len(),
                biases.len()
            )));
        }
        if weights.iter().chain(&biases).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite layer parameter".into()));
        }
        Ok(DenseLayer {
            inputs,
            outputs,
            weights,
            biases,
            activation,
        })
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }

    /// Pre-activation `z = x Wᵀ + b` for an `[n × in]` row-major input.
    fn affine(&self, input: &[f64], n: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(n * self.outputs);
        for row in input.chunks_exact(self.inputs) {
            for (w_row, b) in self.weights.chunks_exact(self.inputs).zip(&self.biases) {
                let dot: f64 = w_row.iter().zip(row).map(|(w, x)| w * x).sum();
                out.push(dot + b);
            }
        }
        out
    }

    fn activate(&self, z: &[f64]) -> Vec<f64> {
        match self.activation {
            Activation::Identity => z.to_vec(),
            Activation::Relu => z.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(),
        }
    }
}

/// Index into the flat parameter vector of a [`Model`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamRef(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight { row: usize, col: usize },
    Bias { row: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamLocation {
    pub layer: usize,
    pub kind: ParamKind,
}

/// Labelled samples: `inputs` is `[n × d]`, one class index per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    inputs: Tensor,
    labels: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: Tensor, labels: Vec<usize>) -> Result<Self> {
        if inputs.shape().len() != 2 {
            return Err(Error::Shape("batch inputs must be a matrix".into()));
        }
        if inputs.rows() == 0 {
            return Err(Error::InvalidArgument("batch must contain at least one sample".into()));
        }
        if inputs.rows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} input rows but {} labels",
                inputs.rows(),
                labels.len()
            )));
        }
        Ok(Batch { inputs, labels })
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Concatenates two batches with the same feature width.
    pub fn concat(&self, other: &Batch) -> Result<Batch> {
        if self.inputs.cols() != other.inputs.cols() {
            return Err(Error::Shape("cannot concatenate batches of different widths".into()));
        }
        let mut values = self.inputs.values().to_vec();
        values.extend_from_slice(other.inputs.values());
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        Batch::new(
            Tensor::matrix(labels.len(), self.inputs.cols(), values)?,
            labels,
        )
    }
}

/// Ordered stack of dense layers; the final layer emits class logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    layers: Vec<DenseLayer>,
}

struct ForwardCache {
    /// Input to each layer, `activations[0]` being the batch itself.
    activations: Vec<Vec<f64>>,
    pre_activations: Vec<Vec<f64>>,
    logits: Vec<f64>,
    rows: usize,
}

impl Model {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        let Some(last) = layers.last() else {
            return Err(Error::Shape("model needs at least one layer".into()));
        };
        if last.activation != Activation::Identity {
            return Err(Error::InvalidArgument("final layer must emit raw logits".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs != pair[1].inputs {
                return Err(Error::Shape(format!(
                    "layer {i} emits {} values but layer {} expects {}",
                    pair[0].outputs,
                    i + 1,
                    pair[1].inputs
                )));
            }
        }
        Ok(Model { layers })
    }

    /// Glorot-uniform weights and zero biases. Hidden layers use ReLU, the last is linear.
    ///
    /// `widths` lists every layer width including input and output, e.g. `[32, 64, 32, 6]`.
    pub fn init<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Shape("need at least input and output widths".into()));
        }
        if widths.contains(&0) {
            return Err(Error::Shape("layer widths must be positive".into()));
        }
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (inputs, outputs) = (w[0], w[1]);
                let limit = (6.0 / (inputs + outputs) as f64).sqrt();
                let weights = (0..inputs * outputs)
                    .map(|_| rng.random_range(-limit..=limit))
                    .collect();
                let activation = if i == last {
                    Activation::Identity
                } else {
                    Activation::Relu
                };
                DenseLayer::new(inputs, outputs, weights, vec![0.0; outputs], activation)
            })
            .collect::<Result<Vec<_>>>()?;
        Model::new(layers)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn class_count(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::param_count).sum()
    }

    /// Layer widths from input to output.
    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_width())
            .chain(self.layers.iter().map(|l| l.outputs))
            .collect()
    }

    /// 64-bit digest of the architecture (widths and activations), not of the values.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Sha256::new();
        h.update(b"edgekt-arch-v1");
        for l in &self.layers {
            h.update((l.inputs as u32).to_le_bytes());
            h.update((l.outputs as u32).to_le_bytes());
            h.update([l.activation.code()]);
        }
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
    }

    /// SHA-256 over the exact bit patterns of every parameter in canonical order.
    pub fn state_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for l in &self.layers {
            for v in l.weights.iter().chain(&l.biases) {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        h.finalize().into()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.biases);
        }
        out
    }

    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite parameter".into()));
        }
        let mut rest = params;
        for l in &mut self.layers {
            let (w, tail) = rest.split_at(l.weights.len());
            let (b, tail) = tail.split_at(l.biases.len());
            l.weights.copy_from_slice(w);
            l.biases.copy_from_slice(b);
            rest = tail;
        }
        Ok(())
    }

    pub fn locate(&self, param: ParamRef) -> Option<ParamLocation> {
        let mut idx = param.0;
        for (layer, l) in self.layers.iter().enumerate() {
            if idx < l.weights.len() {
                return Some(ParamLocation {
                    layer,
                    kind: ParamKind::Weight {
                        row: idx / l.inputs,
                        col: idx % l.inputs,
                    },
                });
            }
            idx -= l.weights.len();
            if idx < l.biases.len() {
                return Some(ParamLocation {
                    layer,
                    kind: ParamKind::Bias { row: idx },
                });
            }
            idx -= l.biases.len();
        }
        None
    }

    pub fn param_ref(&self, loc: ParamLocation) -> Option<ParamRef> {
        let l = self.layers.get(loc.layer)?;
        let base: usize = self.layers[..loc.layer].iter().map(DenseLayer::param_count).sum();
        match loc.kind {
            ParamKind::Weight { row, col } if row < l.outputs && col < l.inputs => {
                Some(ParamRef(base + row * l.inputs + col))
            }
            ParamKind::Bias { row } if row < l.outputs => {
                Some(ParamRef(base + l.weights.len() + row))
            }
            _ => None,
        }
    }

    pub fn param(&self, loc: ParamLocation) -> Option<f64> {
        let l = self.layers.get(loc.layer)?;
        match loc.kind {
            ParamKind::Weight { row, col } if row < l.outputs && col < l.inputs => {
                Some(l.weights[row * l.inputs + col])
            }
            ParamKind::Bias { row } => l.biases.get(row).copied(),
            _ => None,
        }
    }

    fn check_inputs(&self, inputs: &Tensor) -> Result<()> {
        if inputs.shape().len() != 2 || inputs.cols() != self.input_width() {
            return Err(Error::Shape(format!(
                "inputs of shape {:?} do not match model input width {}",
                inputs.shape(),
                self.input_width()
            )));
        }
        Ok(())
    }

    fn check_labels(&self, labels: &[usize]) -> Result<()> {
        let c = self.class_count();
        match labels.iter().find(|&&y| y >= c) {
            Some(y) => Err(Error::InvalidArgument(format!("label {y} outside {c} classes"))),
            None => Ok(()),
        }
    }

    fn forward_cached(&self, inputs: &Tensor) -> ForwardCache {
        let rows = inputs.rows();
        let mut activations = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut current = inputs.values().to_vec();
        for l in &self.layers {
            let z = l.affine(&current, rows);
            let a = l.activate(&z);
            activations.push(current);
            pre_activations.push(z);
            current = a;
        }
        ForwardCache {
            activations,
            pre_activations,
            logits: current,
            rows,
        }
    }

    /// Class logits `[n × C]`.
    pub fn forward(&self, inputs: &Tensor) -> Result<Tensor> {
        self.check_inputs(inputs)?;
        let cache = self.forward_cached(inputs);
        if cache.logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure("non-finite logits".into()));
        }
        Ok(Tensor::from_raw(cache.rows, self.class_count(), cache.logits))
    }

    /// Argmax class per row; ties go to the lowest class index.
    pub fn predict(&self, inputs: &Tensor) -> Result<Vec<usize>> {
        let logits = self.forward(inputs)?;
        Ok(argmax_rows(&logits))
    }

    /// Row-wise softmax of the logits.
    pub fn probabilities(&self, inputs: &Tensor) -> Result<Tensor> {
        Ok(softmax_rows(&self.forward(inputs)?))
    }

    /// Backpropagates `upstream` (∂objective/∂logits, `[n × C]`) into a flat gradient.
    fn backward(&self, cache: &ForwardCache, upstream: Vec<f64>) -> Vec<f64> {
        let mut grad = vec![0.0; self.param_count()];
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for l in &self.layers {
            offsets.push(off);
            off += l.param_count();
        }

        let n = cache.rows;
        let mut delta = upstream;
        for (li, l) in self.layers.iter().enumerate().rev() {
            if l.activation == Activation::Relu {
                for (d, z) in delta.iter_mut().zip(&cache.pre_activations[li]) {
                    if *z <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let input = &cache.activations[li];
            let (gw, rest) = grad[offsets[li]..].split_at_mut(l.weights.len());
            let gb = &mut rest[..l.biases.len()];
            for s in 0..n {
                let d_row = &delta[s * l.outputs..(s + 1) * l.outputs];
                let x_row = &input[s * l.inputs..(s + 1) * l.inputs];
                for (o, &d) in d_row.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    gb[o] += d;
                    for (g, &x) in gw[o * l.inputs..(o + 1) * l.inputs].iter_mut().zip(x_row) {
                        *g += d * x;
                    }
                }
            }
            if li > 0 {
                let mut prev = vec![0.0; n * l.inputs];
                for s in 0..n {
                    let d_row = &delta[s * l.outputs..(s + 1) * l.outputs];
                    let p_row = &mut prev[s * l.inputs..(s + 1) * l.inputs];
                    for (o, &d) in d_row.iter().enumerate() {
                        if d == 0.0 {
                            continue;
                        }
                        for (p, &w) in p_row.iter_mut().zip(&l.weights[o * l.inputs..]) {
                            *p += d * w;
                        }
                    }
                }
                delta = prev;
            }
        }
        grad
    }

    /// Gradient of `Σ_samples logit[class]` with respect to every parameter, in flat order.
    pub fn class_logit_gradient(&self, inputs: &Tensor, class: usize) -> Result<Vec<f64>> {
        self.check_inputs(inputs)?;
        let c = self.class_count();
        if class >= c {
            return Err(Error::InvalidArgument(format!("class {class} outside {c} classes")));
        }
        let cache = self.forward_cached(inputs);
        let mut upstream = vec![0.0; cache.rows * c];
        for s in 0..cache.rows {
            upstream[s * c + class] = 1.0;
        }
        Ok(self.backward(&cache, upstream))
    }

    /// Gradients for several classes from a single forward pass.
    pub fn class_logit_gradients(&self, inputs: &Tensor, classes: &[usize]) -> Result<Vec<Vec<f64>>> {
        self.check_inputs(inputs)?;
        let c = self.class_count();
        if let Some(bad) = classes.iter().find(|&&k| k >= c) {
            return Err(Error::InvalidArgument(format!("class {bad} outside {c} classes")));
        }
        let cache = self.forward_cached(inputs);
        Ok(classes
            .iter()
            .map(|&class| {
                let mut upstream = vec![0.0; cache.rows * c];
                for s in 0..cache.rows {
                    upstream[s * c + class] = 1.0;
                }
                self.backward(&cache, upstream)
            })
            .collect())
    }

    /// One optimizer step on mean softmax cross-entropy. The returned metrics describe
    /// the model as it was before the step.
    pub fn train_batch(&mut self, batch: &Batch, opt: &mut OptimizerState) -> Result<BatchMetrics> {
        self.check_inputs(batch.inputs())?;
        self.check_labels(batch.labels())?;
        let c = self.class_count();
        let cache = self.forward_cached(batch.inputs());
        let n = cache.rows;
        if cache.logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure("non-finite logits during training".into()));
        }

        let logits = Tensor::from_raw(n, c, cache.logits.clone());
        let probs = softmax_rows(&logits);
        let metrics = BatchMetrics::from_probabilities(&probs, batch.labels(), c);
        if !metrics.mean_loss.is_finite() {
            return Err(Error::NumericalFailure("non-finite training loss".into()));
        }

        let mut upstream = probs.into_values();
        for (s, &y) in batch.labels().iter().enumerate() {
            upstream[s * c + y] -= 1.0;
        }
        let scale = 1.0 / n as f64;
        upstream.iter_mut().for_each(|g| *g *= scale);

        let grad = self.backward(&cache, upstream);
        let mut params = self.flat_params();
        opt.step(&mut params, &grad)?;
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure("optimizer produced non-finite parameters".into()));
        }
        self.set_flat_params(&params)?;
        Ok(metrics)
    }
}

pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let c = logits.cols();
    let mut out = Vec::with_capacity(logits.values().len());
    for row in logits.values().chunks_exact(c.max(1)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        out.extend(exps.into_iter().map(|e| e / sum));
    }
    Tensor::from_raw(logits.rows(), c, out)
}

/// First index of the row maximum.
pub fn argmax_rows(scores: &Tensor) -> Vec<usize> {
    let c = scores.cols();
    scores
        .values()
        .chunks_exact(c.max(1))
        .map(|row| {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}
