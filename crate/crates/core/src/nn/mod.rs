//! A small ReLU MLP with an expandable classifier head, trained by
//! hand-written backprop and plain SGD.

mod checkpoint;
mod loss;

use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use loss::{ce_batch_loss, ce_loss, tts_loss, tts_loss_weighted, LogitsSplit, TtsParams};

use crate::data::ClassId;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::rng_from;

/// Fully connected layer; `weight` is `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Matrix::zeros(output, input),
            bias: vec![0.0; output],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.output_dim())
            .map(|o| {
                self.weight
                    .row(o)
                    .iter()
                    .zip(x)
                    .fold(self.bias[o], |acc, (w, v)| acc + w * v)
            })
            .collect()
    }

    fn same_shape(&self, other: &Dense) -> bool {
        self.weight.rows() == other.weight.rows()
            && self.weight.cols() == other.weight.cols()
            && self.bias.len() == other.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    hidden: Vec<Dense>,
    head: Dense,
    class_order: Vec<ClassId>,
    boundary: usize,
}

/// Gradients with the same layout as a [`Model`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub hidden: Vec<Dense>,
    pub head: Dense,
}

impl Gradients {
    pub fn zeros_like(model: &Model) -> Self {
        Self {
            hidden: model
                .hidden
                .iter()
                .map(|l| Dense::zeros(l.input_dim(), l.output_dim()))
                .collect(),
            head: Dense::zeros(model.head.input_dim(), model.head.output_dim()),
        }
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense> {
        self.hidden
            .iter_mut()
            .chain(std::iter::once(&mut self.head))
    }
}

/// Activations recorded by a forward pass: input, each hidden output, logits.
pub struct Trace {
    activations: Vec<Vec<f64>>,
}

impl Trace {
    pub fn logits(&self) -> &[f64] {
        self.activations.last().expect("trace always holds logits")
    }

    pub fn features(&self) -> &[f64] {
        &self.activations[self.activations.len() - 2]
    }
}

impl Model {
    /// He-initialized MLP `d_in → hidden[0] → … → hidden[last]` with an
    /// empty head. Call [`Model::expand_head`] to add classes.
    pub fn new(d_in: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        if d_in == 0 || hidden.is_empty() || hidden.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "bad architecture d_in={d_in}, hidden={hidden:?}"
            )));
        }
        let mut rng = rng_from(seed);
        let mut layers = Vec::with_capacity(hidden.len());
        let mut fan_in = d_in;
        for &width in hidden {
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            let data = (0..width * fan_in)
                .map(|_| normal.sample(&mut rng))
                .collect();
            layers.push(Dense {
                weight: Matrix::new(width, fan_in, data)?,
                bias: vec![0.0; width],
            });
            fan_in = width;
        }
        Ok(Self {
            hidden: layers,
            head: Dense::zeros(fan_in, 0),
            class_order: Vec::new(),
            boundary: 0,
        })
    }

    /// Assemble a model from explicit layers, checking that shapes chain.
    pub fn from_parts(
        hidden: Vec<Dense>,
        head: Dense,
        class_order: Vec<ClassId>,
        boundary: usize,
    ) -> Result<Self> {
        let mut fan_in = hidden
            .first()
            .map(Dense::input_dim)
            .ok_or_else(|| Error::InvalidArgument("model needs a hidden layer".into()))?;
        for l in hidden.iter().chain(std::iter::once(&head)) {
            if l.input_dim() != fan_in || l.bias.len() != l.output_dim() {
                return Err(Error::ShapeMismatch("layer dimensions do not chain".into()));
            }
            fan_in = l.output_dim();
        }
        if class_order.len() != head.output_dim() || boundary > class_order.len() {
            return Err(Error::ShapeMismatch(
                "class order does not match the head".into(),
            ));
        }
        let mut sorted = class_order.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != class_order.len() {
            return Err(Error::InvalidArgument(
                "duplicate class in class order".into(),
            ));
        }
        Ok(Self {
            hidden,
            head,
            class_order,
            boundary,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.hidden[0].input_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.head.input_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.class_order.len()
    }

    pub fn class_order(&self) -> &[ClassId] {
        &self.class_order
    }

    /// Number of leading head rows that belong to old classes.
    pub fn boundary(&self) -> usize {
        self.boundary
    }

    pub fn hidden(&self) -> &[Dense] {
        &self.hidden
    }

    pub fn head(&self) -> &Dense {
        &self.head
    }

    /// Position of `class` in the head, if present.
    pub fn position_of(&self, class: ClassId) -> Option<usize> {
        self.class_order.iter().position(|&c| c == class)
    }

    fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.hidden.iter().chain(std::iter::once(&self.head))
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense> {
        self.hidden
            .iter_mut()
            .chain(std::iter::once(&mut self.head))
    }

    pub fn trace(&self, x: &[f64]) -> Result<Trace> {
        if x.len() != self.input_dim() {
            return Err(Error::InvalidInput(format!(
                "input has {} features, model expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        let mut activations = Vec::with_capacity(self.hidden.len() + 2);
        activations.push(x.to_vec());
        for layer in &self.hidden {
            let mut h = layer.apply(activations.last().unwrap());
            h.iter_mut().for_each(|v| *v = v.max(0.0));
            activations.push(h);
        }
        let logits = self.head.apply(activations.last().unwrap());
        activations.push(logits);
        Ok(Trace { activations })
    }

    /// Features of the last hidden layer and logits split at the boundary.
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, LogitsSplit)> {
        let trace = self.trace(x)?;
        let logits = trace.logits();
        let split = LogitsSplit {
            z_old: logits[..self.boundary].to_vec(),
            z_new: logits[self.boundary..].to_vec(),
        };
        Ok((trace.features().to_vec(), split))
    }

    pub fn features(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.trace(x)?.features().to_vec())
    }

    /// Head position with the largest logit.
    pub fn predict_position(&self, x: &[f64]) -> Result<usize> {
        let trace = self.trace(x)?;
        trace
            .logits()
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .ok_or_else(|| Error::InvalidArgument("model has no classes".into()))
    }

    pub fn predict(&self, x: &[f64]) -> Result<ClassId> {
        Ok(self.class_order[self.predict_position(x)?])
    }

    /// Accumulate parameter gradients for one sample given `dL/dlogits`.
    pub fn backward(&self, trace: &Trace, grad_logits: &[f64], grads: &mut Gradients) {
        let acts = &trace.activations;
        let mut delta = grad_logits.to_vec();
        let layers: Vec<&Dense> = self.layers().collect();
        let grad_layers: Vec<&mut Dense> = grads.layers_mut().collect();
        for (li, (layer, g)) in layers.iter().zip(grad_layers).enumerate().rev() {
            let input = &acts[li];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                g.bias[o] += d;
                for (gw, &xv) in g.weight.row_mut(o).iter_mut().zip(input) {
                    *gw += d * xv;
                }
            }
            if li == 0 {
                break;
            }
            let mut next = vec![0.0; layer.input_dim()];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                for (n, &w) in next.iter_mut().zip(layer.weight.row(o)) {
                    *n += d * w;
                }
            }
            // input is post-ReLU, so zero entries mark inactive units
            for (n, &a) in next.iter_mut().zip(input) {
                if a <= 0.0 {
                    *n = 0.0;
                }
            }
            delta = next;
        }
    }

    /// `w ← w − lr·(g + wd·w)` for weights, `b ← b − lr·g` for biases.
    pub fn sgd_step(&self, grads: &Gradients, lr: f64, weight_decay: f64) -> Result<Model> {
        if grads.hidden.len() != self.hidden.len()
            || !self.head.same_shape(&grads.head)
            || self
                .hidden
                .iter()
                .zip(&grads.hidden)
                .any(|(a, b)| !a.same_shape(b))
        {
            return Err(Error::ShapeMismatch(
                "gradients do not match the model".into(),
            ));
        }
        let mut next = self.clone();
        let grad_layers = grads.hidden.iter().chain(std::iter::once(&grads.head));
        for (layer, g) in next.layers_mut().zip(grad_layers) {
            for (w, gw) in layer.weight.data_mut().iter_mut().zip(g.weight.data()) {
                *w -= lr * (gw + weight_decay * *w);
            }
            for (b, gb) in layer.bias.iter_mut().zip(&g.bias) {
                *b -= lr * gb;
            }
        }
        Ok(next)
    }

    /// Append one head row per new class (Gaussian init, std 0.01, zero
    /// bias) and mark every previously seen class as old.
    pub fn expand_head(&self, new_classes: &[ClassId], seed: u64) -> Result<Model> {
        for (i, c) in new_classes.iter().enumerate() {
            if self.class_order.contains(c) || new_classes[..i].contains(c) {
                return Err(Error::InvalidArgument(format!("class {c} already in head")));
            }
        }
        let mut next = self.clone();
        next.boundary = self.class_order.len();
        if new_classes.is_empty() {
            return Ok(next);
        }
        let d = self.feature_dim();
        let mut rng = rng_from(seed);
        let normal = Normal::new(0.0, 0.01).expect("positive std");
        let mut data = self.head.weight.data().to_vec();
        data.extend((0..new_classes.len() * d).map(|_| normal.sample(&mut rng)));
        let rows = self.head.output_dim() + new_classes.len();
        next.head.weight = Matrix::new(rows, d, data)?;
        next.head
            .bias
            .extend(std::iter::repeat_n(0.0, new_classes.len()));
        next.class_order.extend_from_slice(new_classes);
        Ok(next)
    }

    /// All parameter buffers in a fixed order.
    pub fn param_slices(&self) -> Vec<&[f64]> {
        self.layers()
            .flat_map(|l| [l.weight.data(), l.bias.as_slice()])
            .collect()
    }

    pub(crate) fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers_mut()
            .flat_map(|l| {
                let Dense { weight, bias } = l;
                [weight.data_mut(), bias.as_mut_slice()]
            })
            .collect()
    }

    pub fn same_architecture(&self, other: &Model) -> bool {
        self.hidden.len() == other.hidden.len()
            && self
                .layers()
                .zip(other.layers())
                .all(|(a, b)| a.same_shape(b))
            && self.class_order == other.class_order
            && self.boundary == other.boundary
    }

    /// Hex SHA-256 prefix over parameter bits and class layout.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for s in self.param_slices() {
            for v in s {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        for c in &self.class_order {
            h.update((*c as u64).to_le_bytes());
        }
        h.update((self.boundary as u64).to_le_bytes());
        h.finalize()[..8]
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
