//! Categorical-embedding neural classifier.
//!
//! Architecture: one embedding table per categorical variable, a projection
//! of the normalized bag-of-words text vector, the standardized numerics,
//! all concatenated and fed through hard-sigmoid dense layers into a single
//! sigmoid output unit. Parameters live in one flat vector so any
//! [`Optimizer`] can train them.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::NamedArray;
use crate::featurize::{FeatureVector, CategoricalVar, N_CATEGORICAL, N_NUMERIC, TEXT_BUCKETS};
use crate::optim::{OptimError, Optimizer};

/// Probabilities are clamped to `[P_CLAMP, 1 - P_CLAMP]`.
pub const P_CLAMP: f64 = 1e-7;

#[derive(Debug, Error, PartialEq)]
pub enum NetError {
    #[error("{var} index {index} outside vocabulary of size {cardinality}")]
    IndexOutOfRange {
        var: &'static str,
        index: usize,
        cardinality: usize,
    },
    #[error("text bucket {0} outside [0, {TEXT_BUCKETS})")]
    BucketOutOfRange(u32),
    #[error("non-finite value in {layer}")]
    NonFinite { layer: String },
    #[error("training data is empty")]
    EmptyData,
    #[error("training data contains a single class")]
    SingleClass,
    #[error("invalid network configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed network parameters: {0}")]
    Malformed(String),
    #[error(transparent)]
    Optim(#[from] OptimError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CategoricalMode {
    /// Learned `m_i x d` table per variable.
    Embedding,
    /// One-hot indicators wired straight into the first dense layer.
    OneHot,
}

/// `clamp(0.2 x + 0.5, 0, 1)`
#[inline]
pub fn hard_sigmoid(x: f64) -> f64 {
    (0.2 * x + 0.5).clamp(0.0, 1.0)
}

#[inline]
pub fn hard_sigmoid_grad(x: f64) -> f64 {
    if x > -2.5 && x < 2.5 {
        0.2
    } else {
        0.0
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy on the clamped probability.
pub fn loss(p: f64, y: f64) -> f64 {
    let p = p.clamp(P_CLAMP, 1.0 - P_CLAMP);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Shape hyperparameters; everything needed to rebuild the parameter layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetShape {
    pub cardinalities: [usize; N_CATEGORICAL],
    pub embed_dim: usize,
    pub text_dim: usize,
    pub text_buckets: usize,
    pub hidden: Vec<usize>,
    pub mode: CategoricalMode,
}

impl NetShape {
    pub fn validate(&self) -> Result<(), NetError> {
        if self.cardinalities.contains(&0) {
            return Err(NetError::InvalidConfig("zero cardinality".into()));
        }
        if self.mode == CategoricalMode::Embedding && self.embed_dim == 0 {
            return Err(NetError::InvalidConfig("embed_dim must be positive".into()));
        }
        if self.hidden.contains(&0) {
            return Err(NetError::InvalidConfig("hidden layer of width 0".into()));
        }
        Ok(())
    }

    fn categorical_width(&self) -> usize {
        match self.mode {
            CategoricalMode::Embedding => N_CATEGORICAL * self.embed_dim,
            CategoricalMode::OneHot => self.cardinalities.iter().sum(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.categorical_width() + self.text_dim + N_NUMERIC
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Segment {
    name: String,
    offset: usize,
    shape: Vec<usize>,
}

impl Segment {
    fn len(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    segments: Vec<Segment>,
    // indices into `segments`
    embeddings: Vec<usize>,
    text: usize,
    dense: Vec<(usize, usize)>,
    total: usize,
}

impl Layout {
    fn new(shape: &NetShape) -> Self {
        let mut segments = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, dims: Vec<usize>| {
            let seg = Segment {
                name,
                offset,
                shape: dims,
            };
            offset += seg.len();
            segments.push(seg);
            segments.len() - 1
        };
        let mut embeddings = Vec::new();
        if shape.mode == CategoricalMode::Embedding {
            for (var, &m) in CategoricalVar::ALL.iter().zip(&shape.cardinalities) {
                embeddings.push(push(
                    format!("embedding.{}", var.name()),
                    vec![m, shape.embed_dim],
                ));
            }
        }
        let text = push(
            "text_projection".into(),
            vec![shape.text_buckets, shape.text_dim],
        );
        let mut dense = Vec::new();
        let mut fan_in = shape.input_dim();
        for (l, &width) in shape.hidden.iter().chain(std::iter::once(&1)).enumerate() {
            let w = push(format!("dense{l}.weight"), vec![fan_in, width]);
            let b = push(format!("dense{l}.bias"), vec![width]);
            dense.push((w, b));
            fan_in = width;
        }
        Layout {
            segments,
            embeddings,
            text,
            dense,
            total: offset,
        }
    }

    fn range(&self, seg: usize) -> std::ops::Range<usize> {
        let s = &self.segments[seg];
        s.offset..s.offset + s.len()
    }
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct Activations {
    input: Vec<f64>,
    /// Pre-activations per dense layer; the last holds the output logit.
    pre: Vec<Vec<f64>>,
    /// Hard-sigmoid outputs of the hidden layers.
    post: Vec<Vec<f64>>,
    text_weights: Vec<(usize, f64)>,
    pub logit: f64,
    pub probability: f64,
}

impl Activations {
    /// Pre-activations per dense layer; the last holds the output logit.
    pub fn pre_activations(&self) -> &[Vec<f64>] {
        &self.pre
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "NetArtifact", try_from = "NetArtifact")]
pub struct EmbeddingNet {
    shape: NetShape,
    layout: Layout,
    params: Vec<f64>,
}

impl EmbeddingNet {
    /// Seeded initialization: embeddings and text projection
    /// `U(-0.05, 0.05)`, dense weights Glorot-uniform, biases zero.
    pub fn new(shape: NetShape, seed: u64) -> Result<Self, NetError> {
        shape.validate()?;
        let layout = Layout::new(&shape);
        let mut params = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for &seg in layout.embeddings.iter().chain(std::iter::once(&layout.text)) {
            for p in &mut params[layout.range(seg)] {
                *p = rng.random_range(-0.05..0.05);
            }
        }
        for &(w, _) in &layout.dense {
            let dims = &layout.segments[w].shape;
            let limit = (6.0 / (dims[0] + dims[1]) as f64).sqrt();
            for p in &mut params[layout.range(w)] {
                *p = rng.random_range(-limit..limit);
            }
        }
        Ok(EmbeddingNet {
            shape,
            layout,
            params,
        })
    }

    /// All-zero parameters.
    pub fn zeros(shape: NetShape) -> Result<Self, NetError> {
        shape.validate()?;
        let layout = Layout::new(&shape);
        let params = vec![0.0; layout.total];
        Ok(EmbeddingNet {
            shape,
            layout,
            params,
        })
    }

    pub fn shape(&self) -> &NetShape {
        &self.shape
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// `(name, offset, len)` of each parameter segment, in layout order.
    pub fn segments(&self) -> Vec<(String, usize, usize)> {
        self.layout
            .segments
            .iter()
            .map(|s| (s.name.clone(), s.offset, s.len()))
            .collect()
    }

    /// Row-major `m_i x d` embedding table of variable `var`.
    pub fn embedding_table(&self, var: usize) -> Option<&[f64]> {
        self.layout
            .embeddings
            .get(var)
            .map(|&seg| &self.params[self.layout.range(seg)])
    }

    pub fn embedding_row(&self, var: usize, index: usize) -> Option<&[f64]> {
        let d = self.shape.embed_dim;
        let table = self.embedding_table(var)?;
        table.get(index * d..(index + 1) * d)
    }

    fn check(&self, fv: &FeatureVector) -> Result<(), NetError> {
        for (i, (&idx, &m)) in fv
            .cat_indices
            .iter()
            .zip(&self.shape.cardinalities)
            .enumerate()
        {
            if idx >= m {
                return Err(NetError::IndexOutOfRange {
                    var: CategoricalVar::ALL[i].name(),
                    index: idx,
                    cardinality: m,
                });
            }
        }
        if let Some(&(b, _)) = fv
            .text
            .iter()
            .find(|(b, _)| *b as usize >= self.shape.text_buckets)
        {
            return Err(NetError::BucketOutOfRange(b));
        }
        Ok(())
    }

    pub fn forward(&self, fv: &FeatureVector) -> Result<Activations, NetError> {
        self.check(fv)?;
        let shape = &self.shape;
        let mut input = vec![0.0; shape.input_dim()];
        let mut at = 0;
        match shape.mode {
            CategoricalMode::Embedding => {
                let d = shape.embed_dim;
                for (var, &idx) in fv.cat_indices.iter().enumerate() {
                    let row = self.embedding_row(var, idx).expect("checked index");
                    input[at..at + d].copy_from_slice(row);
                    at += d;
                }
            }
            CategoricalMode::OneHot => {
                for (&idx, &m) in fv.cat_indices.iter().zip(&shape.cardinalities) {
                    input[at + idx] = 1.0;
                    at += m;
                }
            }
        }
        let total: u32 = fv.text.iter().map(|e| e.1).sum();
        let text_weights: Vec<(usize, f64)> = fv
            .text
            .iter()
            .map(|&(b, c)| (b as usize, f64::from(c) / f64::from(total)))
            .collect();
        let td = shape.text_dim;
        let proj = &self.params[self.layout.range(self.layout.text)];
        for &(b, w) in &text_weights {
            let row = &proj[b * td..(b + 1) * td];
            for (x, r) in input[at..at + td].iter_mut().zip(row) {
                *x += w * r;
            }
        }
        at += td;
        input[at..at + N_NUMERIC].copy_from_slice(&fv.numeric);

        let n_layers = self.layout.dense.len();
        let mut pre = Vec::with_capacity(n_layers);
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(n_layers - 1);
        for (l, &(wseg, bseg)) in self.layout.dense.iter().enumerate() {
            let x = if l == 0 { &input } else { &post[l - 1] };
            let width = self.layout.segments[wseg].shape[1];
            let w = &self.params[self.layout.range(wseg)];
            let mut z = self.params[self.layout.range(bseg)].to_vec();
            for (i, &xi) in x.iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                let row = &w[i * width..(i + 1) * width];
                for (zj, wij) in z.iter_mut().zip(row) {
                    *zj += xi * wij;
                }
            }
            if z.iter().any(|v| !v.is_finite()) {
                return Err(NetError::NonFinite {
                    layer: self.layout.segments[wseg].name.clone(),
                });
            }
            if l + 1 < n_layers {
                post.push(z.iter().map(|&v| hard_sigmoid(v)).collect());
            }
            pre.push(z);
        }
        let logit = pre[n_layers - 1][0];
        let probability = sigmoid(logit).clamp(P_CLAMP, 1.0 - P_CLAMP);
        Ok(Activations {
            input,
            pre,
            post,
            text_weights,
            logit,
            probability,
        })
    }

    pub fn predict(&self, fv: &FeatureVector) -> Result<f64, NetError> {
        Ok(self.forward(fv)?.probability)
    }

    /// Adds `scale * dLoss/dParams` for one example into `grad` and returns
    /// the example's loss.
    pub fn accumulate_gradient(
        &self,
        fv: &FeatureVector,
        y: f64,
        scale: f64,
        grad: &mut [f64],
    ) -> Result<f64, NetError> {
        let act = self.forward(fv)?;
        let p = act.probability;
        let raw = sigmoid(act.logit);
        // loss is flat where the probability is clamped
        let d_logit = if raw > P_CLAMP && raw < 1.0 - P_CLAMP {
            p - y
        } else {
            0.0
        };
        let mut delta = vec![d_logit * scale];
        let n_layers = self.layout.dense.len();
        for l in (0..n_layers).rev() {
            let (wseg, bseg) = self.layout.dense[l];
            let width = self.layout.segments[wseg].shape[1];
            let x = if l == 0 { &act.input } else { &act.post[l - 1] };
            let wr = self.layout.range(wseg);
            let br = self.layout.range(bseg);
            for (g, d) in grad[br].iter_mut().zip(&delta) {
                *g += d;
            }
            let w = &self.params[wr.clone()];
            let gw = &mut grad[wr];
            let mut upstream = vec![0.0; x.len()];
            for (i, &xi) in x.iter().enumerate() {
                let wrow = &w[i * width..(i + 1) * width];
                let grow = &mut gw[i * width..(i + 1) * width];
                let mut acc = 0.0;
                for j in 0..width {
                    grow[j] += xi * delta[j];
                    acc += wrow[j] * delta[j];
                }
                upstream[i] = acc;
            }
            if l > 0 {
                for (u, &z) in upstream.iter_mut().zip(&act.pre[l - 1]) {
                    *u *= hard_sigmoid_grad(z);
                }
            }
            delta = upstream;
        }
        if delta.iter().any(|v| !v.is_finite()) {
            return Err(NetError::NonFinite {
                layer: "input".into(),
            });
        }

        // delta now holds dLoss/dInput
        let mut at = 0;
        if self.shape.mode == CategoricalMode::Embedding {
            let d = self.shape.embed_dim;
            for (var, &idx) in fv.cat_indices.iter().enumerate() {
                let seg = &self.layout.segments[self.layout.embeddings[var]];
                let start = seg.offset + idx * d;
                for (g, dv) in grad[start..start + d].iter_mut().zip(&delta[at..at + d]) {
                    *g += dv;
                }
                at += d;
            }
        } else {
            at += self.shape.categorical_width();
        }
        let td = self.shape.text_dim;
        let text_off = self.layout.segments[self.layout.text].offset;
        for &(b, w) in &act.text_weights {
            let start = text_off + b * td;
            for (g, dv) in grad[start..start + td].iter_mut().zip(&delta[at..at + td]) {
                *g += w * dv;
            }
        }
        Ok(loss(p, y))
    }

    /// Gradient of the loss of one example, aligned with [`Self::params`].
    pub fn backward(&self, fv: &FeatureVector, y: f64) -> Result<Vec<f64>, NetError> {
        let mut grad = vec![0.0; self.params.len()];
        self.accumulate_gradient(fv, y, 1.0, &mut grad)?;
        Ok(grad)
    }

    pub fn mean_loss(&self, data: &[(FeatureVector, f64)]) -> Result<f64, NetError> {
        if data.is_empty() {
            return Err(NetError::EmptyData);
        }
        let mut total = 0.0;
        for (fv, y) in data {
            total += loss(self.predict(fv)?, *y);
        }
        Ok(total / data.len() as f64)
    }

    pub fn to_arrays(&self) -> Vec<NamedArray> {
        self.layout
            .segments
            .iter()
            .map(|s| NamedArray {
                name: s.name.clone(),
                shape: s.shape.clone(),
                data: self.params[s.offset..s.offset + s.len()].to_vec(),
            })
            .collect()
    }

    pub fn from_arrays(shape: NetShape, arrays: &[NamedArray]) -> Result<Self, NetError> {
        let mut net = EmbeddingNet::zeros(shape)?;
        if arrays.len() != net.layout.segments.len() {
            return Err(NetError::Malformed(format!(
                "expected {} arrays, found {}",
                net.layout.segments.len(),
                arrays.len()
            )));
        }
        for (seg, arr) in net.layout.segments.iter().zip(arrays) {
            if seg.name != arr.name || seg.shape != arr.shape || arr.data.len() != seg.len() {
                return Err(NetError::Malformed(format!(
                    "array `{}` {:?} does not match expected `{}` {:?}",
                    arr.name, arr.shape, seg.name, seg.shape
                )));
            }
            net.params[seg.offset..seg.offset + seg.len()].copy_from_slice(&arr.data);
        }
        Ok(net)
    }
}

/// Serialized form: the shape plus one named array per parameter segment.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetArtifact {
    pub shape: NetShape,
    pub arrays: Vec<NamedArray>,
}

impl From<EmbeddingNet> for NetArtifact {
    fn from(net: EmbeddingNet) -> Self {
        NetArtifact {
            arrays: net.to_arrays(),
            shape: net.shape,
        }
    }
}

impl TryFrom<NetArtifact> for EmbeddingNet {
    type Error = NetError;

    fn try_from(a: NetArtifact) -> Result<Self, NetError> {
        EmbeddingNet::from_arrays(a.shape, &a.arrays)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    pub embed_dim: usize,
    pub text_dim: usize,
    pub hidden: Vec<usize>,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs without `min_delta` improvement before stopping; 0 disables
    /// early stopping.
    pub patience: usize,
    pub min_delta: f64,
    pub categorical_mode: CategoricalMode,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            embed_dim: 30,
            text_dim: 30,
            hidden: vec![128, 64],
            batch_size: 64,
            epochs: 50,
            patience: 10,
            min_delta: 1e-5,
            categorical_mode: CategoricalMode::Embedding,
        }
    }
}

impl NetConfig {
    pub fn shape(&self, cardinalities: [usize; N_CATEGORICAL]) -> NetShape {
        NetShape {
            cardinalities,
            embed_dim: self.embed_dim,
            text_dim: self.text_dim,
            text_buckets: TEXT_BUCKETS,
            hidden: self.hidden.clone(),
            mode: self.categorical_mode,
        }
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if self.batch_size == 0 {
            return Err(NetError::InvalidConfig("batch_size must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(NetError::InvalidConfig("epochs must be positive".into()));
        }
        if self.hidden.contains(&0) {
            return Err(NetError::InvalidConfig("hidden layer of width 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Entry 0 is the loss of the untrained net over the data; entry `e` is
    /// the mean batch loss of epoch `e`.
    pub loss_trace: Vec<f64>,
    pub stopped_early: bool,
}

/// Mini-batch training with per-epoch seeded shuffling and batch-mean
/// gradients.
pub fn train_nn(
    net: &mut EmbeddingNet,
    data: &[(FeatureVector, f64)],
    optimizer: &mut dyn Optimizer,
    config: &NetConfig,
    seed: u64,
) -> Result<TrainReport, NetError> {
    config.validate()?;
    if data.is_empty() {
        return Err(NetError::EmptyData);
    }
    let positives = data.iter().filter(|(_, y)| *y > 0.5).count();
    if positives == 0 || positives == data.len() {
        return Err(NetError::SingleClass);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grad = vec![0.0; net.params.len()];
    let mut trace = vec![net.mean_loss(data)?];
    let mut best = f64::INFINITY;
    let mut stale = 0;
    let mut stopped_early = false;
    for _epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(config.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for &i in batch {
                let (fv, y) = &data[i];
                batch_loss += net.accumulate_gradient(fv, *y, scale, &mut grad)?;
            }
            optimizer.step(&grad, &mut net.params)?;
            epoch_loss += batch_loss / batch.len() as f64;
            batches += 1;
        }
        let epoch_loss = epoch_loss / batches as f64;
        if !epoch_loss.is_finite() {
            return Err(NetError::NonFinite {
                layer: "loss".into(),
            });
        }
        trace.push(epoch_loss);
        if epoch_loss < best - config.min_delta {
            best = epoch_loss;
            stale = 0;
        } else {
            stale += 1;
            if config.patience > 0 && stale >= config.patience {
                stopped_early = true;
                break;
            }
        }
    }
    Ok(TrainReport {
        loss_trace: trace,
        stopped_early,
    })
}
