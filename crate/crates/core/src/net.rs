//! A small feed-forward network with a token-embedding branch.
//!
//! Layout:
//!
//! ```text
//! tokens ─ Embedding ─ SpatialDropout1D ─ Flatten ─┐
//!                                                   ├─ Concat ─ [Dense ─ Dropout]* ─ Dense(1, identity)
//! dense features ──────────────────────────────────┘
//! ```
//!
//! The concatenated input places the dense features first, followed by the
//! flattened `max_len × embed_dim` embedding block. Dropout is inverted: kept
//! activations are scaled by `1 / (1 - p)` during training so inference needs
//! no rescaling. Gradients are computed by hand for exactly these layer kinds.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::FeatureMatrix;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
    Sigmoid,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
            Activation::Sigmoid => sigmoid(z),
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
            Activation::Sigmoid => {
                let s = sigmoid(z);
                s * (1.0 - s)
            }
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// User-facing architecture settings; input sizes come from the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub embed_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub spatial_dropout: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            embed_dim: 10,
            hidden: vec![64, 64],
            activation: Activation::Relu,
            spatial_dropout: 0.2,
        }
    }
}

/// Complete shape description of a network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    pub n_dense: usize,
    /// Zero disables the embedding branch.
    pub vocab_size: usize,
    pub max_len: usize,
    pub embed_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub dropout: f64,
    pub spatial_dropout: f64,
}

impl NetSpec {
    /// `dropout` is the rate after each hidden layer.
    pub fn new(
        n_dense: usize,
        vocab_size: usize,
        max_len: usize,
        cfg: &NetConfig,
        dropout: f64,
    ) -> Self {
        NetSpec {
            n_dense,
            vocab_size,
            max_len,
            embed_dim: cfg.embed_dim,
            hidden: cfg.hidden.clone(),
            activation: cfg.activation,
            dropout,
            spatial_dropout: cfg.spatial_dropout,
        }
    }

    pub fn has_embedding(&self) -> bool {
        self.vocab_size > 0 && self.max_len > 0 && self.embed_dim > 0
    }

    fn embed_width(&self) -> usize {
        if self.has_embedding() {
            self.max_len * self.embed_dim
        } else {
            0
        }
    }

    pub fn input_dim(&self) -> usize {
        self.n_dense + self.embed_width()
    }

    fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("dropout", self.dropout),
            ("spatial_dropout", self.spatial_dropout),
        ] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!(
                    "{name} rate must lie in [0, 1), got {p}"
                )));
            }
        }
        if self.input_dim() == 0 {
            return Err(Error::Config("network has no inputs".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config(
                "hidden layers must have at least one unit".into(),
            ));
        }
        Ok(())
    }

    /// (fan_in, fan_out) of each dense layer, output layer last.
    fn dense_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.input_dim()];
        dims.extend(&self.hidden);
        dims.push(1);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    /// Layer-by-layer description used in artifact manifests.
    pub fn manifest(&self) -> Vec<LayerKind> {
        let mut layers = Vec::new();
        if self.has_embedding() {
            layers.push(LayerKind::Embedding {
                vocab_size: self.vocab_size,
                dim: self.embed_dim,
            });
            layers.push(LayerKind::SpatialDropout1D {
                rate: self.spatial_dropout,
            });
            layers.push(LayerKind::Flatten);
        }
        layers.push(LayerKind::Concat);
        let shapes = self.dense_shapes();
        for (l, &(n_in, n_out)) in shapes.iter().enumerate() {
            let last = l + 1 == shapes.len();
            layers.push(LayerKind::Dense {
                n_in,
                n_out,
                activation: if last {
                    Activation::Identity
                } else {
                    self.activation
                },
            });
            if !last {
                layers.push(LayerKind::Dropout { rate: self.dropout });
            }
        }
        layers
    }

    pub fn n_params(&self) -> usize {
        let emb = if self.has_embedding() {
            self.vocab_size * self.embed_dim
        } else {
            0
        };
        emb + self
            .dense_shapes()
            .iter()
            .map(|(i, o)| i * o + o)
            .sum::<usize>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Embedding {
        vocab_size: usize,
        dim: usize,
    },
    #[serde(rename = "spatial_dropout_1d")]
    SpatialDropout1D {
        rate: f64,
    },
    Flatten,
    Concat,
    Dense {
        n_in: usize,
        n_out: usize,
        activation: Activation,
    },
    Dropout {
        rate: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub n_in: usize,
    pub n_out: usize,
    pub activation: Activation,
    /// Row-major `n_in × n_out`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    fn zeros(n_in: usize, n_out: usize, activation: Activation) -> Self {
        DenseLayer {
            n_in,
            n_out,
            activation,
            weights: vec![0.0; n_in * n_out],
            bias: vec![0.0; n_out],
        }
    }

    /// `out[r, o] = bias[o] + Σ_i x[r, i] · w[i, o]`
    fn affine(&self, x: &[f64], n_rows: usize, out: &mut Vec<f64>) {
        out.clear();
        out.reserve(n_rows * self.n_out);
        for r in 0..n_rows {
            let start = out.len();
            out.extend_from_slice(&self.bias);
            let z = &mut out[start..];
            for (i, &xi) in x[r * self.n_in..(r + 1) * self.n_in].iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                let w = &self.weights[i * self.n_out..(i + 1) * self.n_out];
                for (zo, wo) in z.iter_mut().zip(w) {
                    *zo += xi * wo;
                }
            }
        }
    }
}

/// Trainable parameters, also used as the gradient container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    /// Row-major `vocab_size × embed_dim`; empty without an embedding branch.
    pub embedding: Vec<f64>,
    pub layers: Vec<DenseLayer>,
}

impl Params {
    /// All parameter slices in a fixed order: embedding, then weights and
    /// bias of each dense layer.
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = vec![&self.embedding];
        for l in &self.layers {
            v.push(&l.weights);
            v.push(&l.bias);
        }
        v
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = vec![&mut self.embedding];
        for l in &mut self.layers {
            v.push(&mut l.weights);
            v.push(&mut l.bias);
        }
        v
    }

    /// Name of each slice in [`Params::slices`] order, for diagnostics.
    pub fn slice_names(&self) -> Vec<String> {
        let mut v = vec!["embedding".to_string()];
        for l in 0..self.layers.len() {
            v.push(format!("dense[{l}].weights"));
            v.push(format!("dense[{l}].bias"));
        }
        v
    }

    pub fn zeros_like(&self) -> Params {
        Params {
            embedding: vec![0.0; self.embedding.len()],
            layers: self
                .layers
                .iter()
                .map(|l| DenseLayer::zeros(l.n_in, l.n_out, l.activation))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.slices().into_iter().flat_map(|s| s.iter().copied())
    }

    pub fn fill(&mut self, value: f64) {
        for s in self.slices_mut() {
            s.fill(value);
        }
    }
}

pub type Gradients = Params;

/// A borrowed batch of model inputs.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub n_rows: usize,
    /// Row-major `n_rows × n_dense`.
    pub dense: &'a [f64],
    /// Row-major `n_rows × max_len`.
    pub tokens: &'a [u32],
}

impl<'a> From<&'a FeatureMatrix> for Batch<'a> {
    fn from(m: &'a FeatureMatrix) -> Self {
        Batch {
            n_rows: m.n_rows,
            dense: &m.dense,
            tokens: &m.token_seqs,
        }
    }
}

/// Cached values from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    training: bool,
    n_rows: usize,
    tokens: Vec<u32>,
    /// `n_rows × embed_dim`, kept-channel scale or zero.
    channel_masks: Vec<f64>,
    /// Input to each dense layer; `inputs[0]` is the concatenated input.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of each dense layer.
    pre: Vec<Vec<f64>>,
    /// Dropout mask after each hidden layer; empty when dropout is off.
    masks: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    /// Spatial-dropout channel scales, row-major `n_rows × embed_dim`.
    pub fn channel_masks(&self) -> &[f64] {
        &self.channel_masks
    }

    /// The concatenated network input (dense features, then flattened
    /// embeddings after spatial dropout).
    pub fn concat_input(&self) -> &[f64] {
        &self.inputs[0]
    }

    /// Output of hidden layer `l` after dropout.
    pub fn hidden_output(&self, l: usize) -> &[f64] {
        &self.inputs[l + 1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawNetwork")]
pub struct Network {
    spec: NetSpec,
    params: Params,
}

#[derive(Deserialize)]
struct RawNetwork {
    spec: NetSpec,
    params: Params,
}

impl TryFrom<RawNetwork> for Network {
    type Error = Error;

    fn try_from(raw: RawNetwork) -> Result<Self> {
        let net = Network {
            spec: raw.spec,
            params: raw.params,
        };
        net.check_shapes()?;
        Ok(net)
    }
}

fn mask_value(rng: &mut Rng, p: f64) -> f64 {
    if rng.random::<f64>() < p {
        0.0
    } else {
        1.0 / (1.0 - p)
    }
}

impl Network {
    /// All parameters zero.
    pub fn zeros(spec: NetSpec) -> Result<Self> {
        spec.validate()?;
        let embedding = if spec.has_embedding() {
            vec![0.0; spec.vocab_size * spec.embed_dim]
        } else {
            Vec::new()
        };
        let shapes = spec.dense_shapes();
        let layers = shapes
            .iter()
            .enumerate()
            .map(|(l, &(i, o))| {
                let act = if l + 1 == shapes.len() {
                    Activation::Identity
                } else {
                    spec.activation
                };
                DenseLayer::zeros(i, o, act)
            })
            .collect();
        Ok(Network {
            spec,
            params: Params { embedding, layers },
        })
    }

    /// Dense weights uniform in ±√(6 / (fan_in + fan_out)) with zero bias;
    /// embeddings uniform in ±0.05.
    pub fn new(spec: NetSpec, rng: &mut Rng) -> Result<Self> {
        let mut net = Network::zeros(spec)?;
        for e in &mut net.params.embedding {
            *e = rng.random_range(-0.05..0.05);
        }
        for l in &mut net.params.layers {
            let limit = (6.0 / (l.n_in + l.n_out) as f64).sqrt();
            for w in &mut l.weights {
                *w = rng.random_range(-limit..limit);
            }
        }
        Ok(net)
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    fn check_shapes(&self) -> Result<()> {
        self.spec.validate()?;
        let expected = Network::zeros(self.spec.clone())?;
        let mismatch = |what: String| Err(Error::Artifact(format!("shape mismatch: {what}")));
        if expected.params.embedding.len() != self.params.embedding.len() {
            return mismatch(format!(
                "embedding has {} values, spec requires {}",
                self.params.embedding.len(),
                expected.params.embedding.len()
            ));
        }
        if expected.params.layers.len() != self.params.layers.len() {
            return mismatch(format!(
                "{} dense layers, spec requires {}",
                self.params.layers.len(),
                expected.params.layers.len()
            ));
        }
        for (l, (e, a)) in expected
            .params
            .layers
            .iter()
            .zip(&self.params.layers)
            .enumerate()
        {
            if e.n_in != a.n_in
                || e.n_out != a.n_out
                || e.activation != a.activation
                || a.weights.len() != e.weights.len()
                || a.bias.len() != e.bias.len()
            {
                return mismatch(format!("dense layer {l}"));
            }
        }
        Ok(())
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        let n = batch.n_rows;
        if batch.dense.len() != n * self.spec.n_dense {
            return Err(Error::Bounds(format!(
                "batch has {} dense values, expected {} rows × {}",
                batch.dense.len(),
                n,
                self.spec.n_dense
            )));
        }
        let expected_tokens = if self.spec.has_embedding() {
            n * self.spec.max_len
        } else {
            0
        };
        if batch.tokens.len() != expected_tokens && self.spec.has_embedding() {
            return Err(Error::Bounds(format!(
                "batch has {} token indices, expected {expected_tokens}",
                batch.tokens.len()
            )));
        }
        if self.spec.has_embedding() {
            if let Some(&t) = batch
                .tokens
                .iter()
                .find(|&&t| t as usize >= self.spec.vocab_size)
            {
                return Err(Error::Bounds(format!(
                    "token index {t} ≥ vocabulary size {}",
                    self.spec.vocab_size
                )));
            }
        }
        Ok(())
    }

    /// Inference-mode predictions (dropout off).
    pub fn predict_batch(&self, batch: Batch) -> Result<Vec<f64>> {
        self.forward(batch, None).map(|(p, _)| p)
    }

    /// Train-mode forward pass drawing dropout masks from `rng`.
    pub fn forward_train(&self, batch: Batch, rng: &mut Rng) -> Result<(Vec<f64>, ForwardTrace)> {
        self.forward(batch, Some(rng))
    }

    /// Forward pass; `rng = Some(_)` selects train mode.
    pub fn forward(
        &self,
        batch: Batch,
        mut rng: Option<&mut Rng>,
    ) -> Result<(Vec<f64>, ForwardTrace)> {
        self.check_batch(&batch)?;
        let spec = &self.spec;
        let n = batch.n_rows;
        let training = rng.is_some();
        let dim = spec.embed_dim;
        let width = spec.input_dim();

        let mut channel_masks = Vec::new();
        if spec.has_embedding() && training && spec.spatial_dropout > 0.0 {
            let rng = rng.as_deref_mut().expect("training mode");
            channel_masks = (0..n * dim)
                .map(|_| mask_value(rng, spec.spatial_dropout))
                .collect();
        }

        let mut x0 = Vec::with_capacity(n * width);
        for r in 0..n {
            x0.extend_from_slice(&batch.dense[r * spec.n_dense..(r + 1) * spec.n_dense]);
            if spec.has_embedding() {
                for &t in &batch.tokens[r * spec.max_len..(r + 1) * spec.max_len] {
                    let row = &self.params.embedding[t as usize * dim..(t as usize + 1) * dim];
                    if channel_masks.is_empty() {
                        x0.extend_from_slice(row);
                    } else {
                        let m = &channel_masks[r * dim..(r + 1) * dim];
                        x0.extend(row.iter().zip(m).map(|(e, m)| e * m));
                    }
                }
            }
        }

        let n_layers = self.params.layers.len();
        let mut inputs = Vec::with_capacity(n_layers);
        let mut pre = Vec::with_capacity(n_layers);
        let mut masks = Vec::with_capacity(n_layers);
        inputs.push(x0);
        for (l, layer) in self.params.layers.iter().enumerate() {
            let mut z = Vec::new();
            layer.affine(&inputs[l], n, &mut z);
            if l + 1 == n_layers {
                pre.push(z);
                break;
            }
            let mut a: Vec<f64> = z.iter().map(|&v| layer.activation.apply(v)).collect();
            let mut mask = Vec::new();
            if training && spec.dropout > 0.0 {
                let rng = rng.as_deref_mut().expect("training mode");
                mask = (0..a.len())
                    .map(|_| mask_value(rng, spec.dropout))
                    .collect();
                for (ai, mi) in a.iter_mut().zip(&mask) {
                    *ai *= mi;
                }
            }
            pre.push(z);
            masks.push(mask);
            inputs.push(a);
        }

        let predictions = pre[n_layers - 1].clone();
        let trace = ForwardTrace {
            training,
            n_rows: n,
            tokens: if spec.has_embedding() {
                batch.tokens.to_vec()
            } else {
                Vec::new()
            },
            channel_masks,
            inputs,
            pre,
            masks,
        };
        Ok((predictions, trace))
    }

    /// Gradients of `Σ_r d_pred[r] · prediction[r]` with respect to every
    /// parameter. Embedding rows not referenced by the batch get zero.
    pub fn backward(&self, trace: &ForwardTrace, d_pred: &[f64]) -> Result<Gradients> {
        if !trace.training {
            return Err(Error::State(
                "backward requires a train-mode forward trace".into(),
            ));
        }
        let layers = &self.params.layers;
        if trace.pre.len() != layers.len()
            || trace.inputs.first().map(Vec::len) != Some(trace.n_rows * self.spec.input_dim())
        {
            return Err(Error::State(
                "forward trace does not match this network".into(),
            ));
        }
        if d_pred.len() != trace.n_rows {
            return Err(Error::State(format!(
                "upstream gradient has {} entries for a batch of {}",
                d_pred.len(),
                trace.n_rows
            )));
        }

        let n = trace.n_rows;
        let mut grads = self.params.zeros_like();
        let mut upstream = d_pred.to_vec();
        for l in (0..layers.len()).rev() {
            let layer = &layers[l];
            let (n_in, n_out) = (layer.n_in, layer.n_out);
            let mut dz = std::mem::take(&mut upstream);
            if l + 1 < layers.len() {
                let mask = &trace.masks[l];
                for (k, d) in dz.iter_mut().enumerate() {
                    let m = if mask.is_empty() { 1.0 } else { mask[k] };
                    *d *= m * layer.activation.derivative(trace.pre[l][k]);
                }
            }

            let x = &trace.inputs[l];
            let g = &mut grads.layers[l];
            for r in 0..n {
                let dzr = &dz[r * n_out..(r + 1) * n_out];
                for (b, d) in g.bias.iter_mut().zip(dzr) {
                    *b += d;
                }
                for (i, &xi) in x[r * n_in..(r + 1) * n_in].iter().enumerate() {
                    if xi == 0.0 {
                        continue;
                    }
                    for (w, d) in g.weights[i * n_out..(i + 1) * n_out].iter_mut().zip(dzr) {
                        *w += xi * d;
                    }
                }
            }

            // Gradient w.r.t. this layer's input. For the first layer only
            // the embedding columns are needed.
            let first_needed = if l == 0 { self.spec.n_dense } else { 0 };
            if l == 0 && !self.spec.has_embedding() {
                break;
            }
            let mut dx = vec![0.0; n * n_in];
            for r in 0..n {
                let dzr = &dz[r * n_out..(r + 1) * n_out];
                for i in first_needed..n_in {
                    let w = &layer.weights[i * n_out..(i + 1) * n_out];
                    dx[r * n_in + i] = w.iter().zip(dzr).map(|(w, d)| w * d).sum();
                }
            }
            upstream = dx;
        }

        if self.spec.has_embedding() {
            let (dim, len, nd) = (self.spec.embed_dim, self.spec.max_len, self.spec.n_dense);
            let width = self.spec.input_dim();
            let dx0 = &upstream;
            for r in 0..n {
                for p in 0..len {
                    let t = trace.tokens[r * len + p] as usize;
                    let src = &dx0[r * width + nd + p * dim..r * width + nd + (p + 1) * dim];
                    let dst = &mut grads.embedding[t * dim..(t + 1) * dim];
                    for c in 0..dim {
                        let m = if trace.channel_masks.is_empty() {
                            1.0
                        } else {
                            trace.channel_masks[r * dim + c]
                        };
                        dst[c] += src[c] * m;
                    }
                }
            }
        }
        Ok(grads)
    }

    /// `w ← w − lr · g` for every parameter. Refuses non-finite gradients
    /// without touching the weights.
    pub fn sgd_step(&mut self, grads: &Gradients, lr: f64) -> Result<()> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {lr}"
            )));
        }
        check_finite(grads)?;
        for (w, g) in self.params.slices_mut().into_iter().zip(grads.slices()) {
            for (wi, gi) in w.iter_mut().zip(g) {
                *wi -= lr * gi;
            }
        }
        Ok(())
    }
}

/// Errors naming the first parameter block holding a non-finite gradient.
pub fn check_finite(grads: &Gradients) -> Result<()> {
    for (name, s) in grads.slice_names().iter().zip(grads.slices()) {
        if let Some(g) = s.iter().find(|g| !g.is_finite()) {
            let max = s
                .iter()
                .filter(|g| g.is_finite())
                .fold(0.0f64, |m, g| m.max(g.abs()));
            return Err(Error::Numeric(format!(
                "non-finite gradient {g} in {name} (largest finite magnitude {max:.3e})"
            )));
        }
    }
    Ok(())
}
