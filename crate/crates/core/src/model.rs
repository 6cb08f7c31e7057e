//! The task encoder: a compact pre-activation residual network over stacked
//! `(in, out)` images, plus the projection head used only during training.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Split;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::checkpoint::config_digest;
use crate::nn::{
    global_avg_pool, global_avg_pool_backward, residual_add, BatchNorm2d, Checkpoint, Conv2d, L2Normalize, Linear,
    MaxPool2, ParamSet, Real, Relu, Tensor4,
};
use crate::seed;
use crate::task_synth::{TaskInstance, VisualTaskKey};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    /// Side of the square network input; images are resized to it.
    pub input_side: usize,
    /// 6 for stacked task instances, 3 for the single-image baseline.
    pub in_channels: usize,
    pub widths: Vec<usize>,
    pub blocks_per_stage: usize,
    pub feature_dim: usize,
    pub projector_hidden: usize,
    pub projector_dim: usize,
    pub tau: f64,
    pub normalize_projector: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            input_side: 64,
            in_channels: 6,
            widths: vec![16, 32, 64],
            blocks_per_stage: 2,
            feature_dim: 128,
            projector_hidden: 128,
            projector_dim: 32,
            tau: 0.07,
            normalize_projector: true,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("input_side", self.input_side),
            ("in_channels", self.in_channels),
            ("blocks_per_stage", self.blocks_per_stage),
            ("feature_dim", self.feature_dim),
            ("projector_hidden", self.projector_hidden),
            ("projector_dim", self.projector_dim),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::Config("widths must be a nonempty list of positive values".into()));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        // Stem stride, pooling, then one halving per stage after the first.
        let reduction = 1usize << (self.widths.len() + 1);
        if self.input_side < reduction {
            return Err(Error::Config(format!(
                "input_side {} is too small for {} stages (needs at least {reduction})",
                self.input_side,
                self.widths.len()
            )));
        }
        Ok(())
    }

    pub fn digest(&self) -> [u8; 32] {
        config_digest(&serde_json::to_string(self).expect("config serializes"))
    }
}

/// Resizes `image` to `side x side` and appends its channels, planar, to `out`.
fn push_planes(image: &Image, side: usize, out: &mut Vec<f32>) {
    let resized;
    let img = if image.dims() == (side, side) {
        image
    } else {
        resized = image.resize_bilinear(side, side);
        &resized
    };
    for c in 0..Image::CHANNELS {
        out.extend(img.data().iter().skip(c).step_by(Image::CHANNELS));
    }
}

fn check_rgb(image: &Image) -> Result<()> {
    let (h, w) = image.dims();
    if image.data().len() != h * w * Image::CHANNELS {
        return Err(Error::Shape(format!("expected a 3-channel image of {h}x{w}")));
    }
    Ok(())
}

/// `1 x 6 x S x S` tensor with the input image in channels 0..3 and the output in 3..6.
pub fn stack_instance(t: &TaskInstance, side: usize) -> Result<Tensor4<f32>> {
    check_rgb(&t.input)?;
    check_rgb(&t.output)?;
    let mut data = Vec::with_capacity(6 * side * side);
    push_planes(&t.input, side, &mut data);
    push_planes(&t.output, side, &mut data);
    Tensor4::from_vec([1, 6, side, side], data)
}

/// `1 x 3 x S x S` tensor of a single image.
pub fn image_tensor(image: &Image, side: usize) -> Result<Tensor4<f32>> {
    check_rgb(image)?;
    let mut data = Vec::with_capacity(3 * side * side);
    push_planes(image, side, &mut data);
    Tensor4::from_vec([1, 3, side, side], data)
}

#[derive(Clone, Debug)]
struct Block<T: Real> {
    bn1: BatchNorm2d<T>,
    relu1: Relu,
    conv1: Conv2d<T>,
    bn2: BatchNorm2d<T>,
    relu2: Relu,
    conv2: Conv2d<T>,
    shortcut: Option<Conv2d<T>>,
}

impl<T: Real> Block<T> {
    fn new(ps: &mut ParamSet<T>, name: &str, cin: usize, cout: usize, stride: usize, rng: &mut seed::Rng) -> Self {
        let shortcut =
            (stride != 1 || cin != cout).then(|| Conv2d::new(ps, &format!("{name}.shortcut"), cin, cout, 1, stride, 0, false, rng));
        Self {
            bn1: BatchNorm2d::new(ps, &format!("{name}.bn1"), cin),
            relu1: Relu::default(),
            conv1: Conv2d::new(ps, &format!("{name}.conv1"), cin, cout, 3, stride, 1, false, rng),
            bn2: BatchNorm2d::new(ps, &format!("{name}.bn2"), cout),
            relu2: Relu::default(),
            conv2: Conv2d::new(ps, &format!("{name}.conv2"), cout, cout, 3, 1, 1, false, rng),
            shortcut,
        }
    }

    fn infer(&self, ps: &ParamSet<T>, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        let a = Relu::infer(&self.bn1.infer(ps, x)?);
        let h = self.conv1.infer(ps, &a)?;
        let h = self.conv2.infer(ps, &Relu::infer(&self.bn2.infer(ps, &h)?))?;
        match &self.shortcut {
            Some(s) => residual_add(&h, &s.infer(ps, &a)?),
            None => residual_add(&h, x),
        }
    }

    fn forward(&mut self, ps: &mut ParamSet<T>, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        let a = self.relu1.forward(&self.bn1.forward(ps, x)?);
        let h = self.conv1.forward(ps, &a)?;
        let h = self.relu2.forward(&self.bn2.forward(ps, &h)?);
        let h = self.conv2.forward(ps, &h)?;
        match &mut self.shortcut {
            Some(s) => residual_add(&h, &s.forward(ps, &a)?),
            None => residual_add(&h, x),
        }
    }

    fn backward(&mut self, ps: &mut ParamSet<T>, dy: &Tensor4<T>) -> Result<Tensor4<T>> {
        let dh = self.conv2.backward(ps, dy)?;
        let dh = self.bn2.backward(ps, &self.relu2.backward(&dh)?)?;
        let mut da = self.conv1.backward(ps, &dh)?;
        if let Some(s) = &mut self.shortcut {
            da.add_assign(&s.backward(ps, dy)?)?;
        }
        let mut dx = self.bn1.backward(ps, &self.relu1.backward(&da)?)?;
        if self.shortcut.is_none() {
            dx.add_assign(dy)?;
        }
        Ok(dx)
    }
}

/// Encoder θ and projector φ with their parameters.
///
/// Layout: 3x3 stride-2 stem, BN, ReLU, 2x2 max pool; residual stages (the
/// first block of every stage after the first halves the resolution); BN,
/// ReLU, 1x1 expansion to `feature_dim`, BN, ReLU, global average pool.
/// The projector is linear, ReLU, linear, optionally row-normalized.
#[derive(Clone, Debug)]
pub struct Model<T: Real = f32> {
    config: EncoderConfig,
    pub params: ParamSet<T>,
    stem: Conv2d<T>,
    stem_bn: BatchNorm2d<T>,
    stem_relu: Relu,
    pool: MaxPool2,
    blocks: Vec<Block<T>>,
    head_bn: BatchNorm2d<T>,
    head_relu: Relu,
    expand: Conv2d<T>,
    expand_bn: BatchNorm2d<T>,
    expand_relu: Relu,
    pooled_shape: Option<[usize; 4]>,
    proj1: Linear<T>,
    proj_relu: Relu,
    proj2: Linear<T>,
    l2: L2Normalize<T>,
}

impl<T: Real> Model<T> {
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::rng(seed, &[seed::hash_str("model-init")]);
        let mut ps = ParamSet::new();
        let w0 = config.widths[0];
        let stem = Conv2d::new(&mut ps, "stem", config.in_channels, w0, 3, 2, 1, false, &mut rng);
        let stem_bn = BatchNorm2d::new(&mut ps, "stem.bn", w0);
        let mut blocks = Vec::new();
        let mut cin = w0;
        for (s, &width) in config.widths.iter().enumerate() {
            for b in 0..config.blocks_per_stage {
                let stride = if s > 0 && b == 0 { 2 } else { 1 };
                blocks.push(Block::new(&mut ps, &format!("stage{s}.block{b}"), cin, width, stride, &mut rng));
                cin = width;
            }
        }
        let head_bn = BatchNorm2d::new(&mut ps, "head.bn", cin);
        let expand = Conv2d::new(&mut ps, "head.expand", cin, config.feature_dim, 1, 1, 0, false, &mut rng);
        let expand_bn = BatchNorm2d::new(&mut ps, "head.expand_bn", config.feature_dim);
        let proj1 = Linear::new(&mut ps, "projector.fc1", config.feature_dim, config.projector_hidden, &mut rng);
        let proj2 = Linear::new(&mut ps, "projector.fc2", config.projector_hidden, config.projector_dim, &mut rng);
        Ok(Self {
            config,
            params: ps,
            stem,
            stem_bn,
            stem_relu: Relu::default(),
            pool: MaxPool2::default(),
            blocks,
            head_bn,
            head_relu: Relu::default(),
            expand,
            expand_bn,
            expand_relu: Relu::default(),
            pooled_shape: None,
            proj1,
            proj_relu: Relu::default(),
            proj2,
            l2: L2Normalize::default(),
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    fn check_batch(&self, x: &Tensor4<T>) -> Result<()> {
        let s = self.config.input_side;
        x.expect_shape([x.n(), self.config.in_channels, s, s], "encoder input")?;
        if x.n() == 0 {
            return Err(Error::Shape("encoder input batch is empty".into()));
        }
        Ok(())
    }

    /// Evaluation-mode features `N x D` (stored as `N x D x 1 x 1`).
    pub fn encode(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.check_batch(x)?;
        let ps = &self.params;
        let h = self.stem.infer(ps, x)?;
        let mut h = MaxPool2::infer(&Relu::infer(&self.stem_bn.infer(ps, &h)?))?;
        for b in &self.blocks {
            h = b.infer(ps, &h)?;
        }
        let h = self.expand.infer(ps, &Relu::infer(&self.head_bn.infer(ps, &h)?))?;
        let f = global_avg_pool(&Relu::infer(&self.expand_bn.infer(ps, &h)?));
        f.ensure_finite("encoder")?;
        Ok(f)
    }

    /// Evaluation-mode projection of features.
    pub fn project(&self, features: &Tensor4<T>) -> Result<Tensor4<T>> {
        let ps = &self.params;
        let h = Relu::infer(&self.proj1.infer(ps, features)?);
        let z = self.proj2.infer(ps, &h)?;
        Ok(if self.config.normalize_projector { L2Normalize::infer(&z) } else { z })
    }

    /// Training-mode encoder pass (batch statistics, caches for backward).
    pub fn encode_train(&mut self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.check_batch(x)?;
        let ps = &mut self.params;
        let h = self.stem.forward(ps, x)?;
        let h = self.stem_relu.forward(&self.stem_bn.forward(ps, &h)?);
        let mut h = self.pool.forward(&h)?;
        for b in &mut self.blocks {
            h = b.forward(ps, &h)?;
        }
        let h = self.head_relu.forward(&self.head_bn.forward(ps, &h)?);
        let h = self.expand.forward(ps, &h)?;
        let h = self.expand_relu.forward(&self.expand_bn.forward(ps, &h)?);
        self.pooled_shape = Some(h.shape());
        let f = global_avg_pool(&h);
        f.ensure_finite("encoder")?;
        Ok(f)
    }

    pub fn project_train(&mut self, features: &Tensor4<T>) -> Result<Tensor4<T>> {
        let ps = &self.params;
        let h = self.proj_relu.forward(&self.proj1.forward(ps, features)?);
        let z = self.proj2.forward(ps, &h)?;
        Ok(if self.config.normalize_projector { self.l2.forward(&z) } else { z })
    }

    /// Backpropagates `dz` through the projector, returning the feature gradient.
    pub fn project_backward(&mut self, dz: &Tensor4<T>) -> Result<Tensor4<T>> {
        let ps = &mut self.params;
        let dz = if self.config.normalize_projector { self.l2.backward(dz)? } else { dz.clone() };
        let dh = self.proj2.backward(ps, &dz)?;
        self.proj1.backward(ps, &self.proj_relu.backward(&dh)?)
    }

    /// Backpropagates a feature gradient through the encoder, returning the input gradient.
    pub fn encode_backward(&mut self, df: &Tensor4<T>) -> Result<Tensor4<T>> {
        let shape = self
            .pooled_shape
            .take()
            .ok_or_else(|| Error::State("encoder backward called without a training forward".into()))?;
        let ps = &mut self.params;
        let dh = global_avg_pool_backward(df, shape)?;
        let dh = self.expand_bn.backward(ps, &self.expand_relu.backward(&dh)?)?;
        let dh = self.expand.backward(ps, &dh)?;
        let mut dh = self.head_bn.backward(ps, &self.head_relu.backward(&dh)?)?;
        for b in self.blocks.iter_mut().rev() {
            dh = b.backward(ps, &dh)?;
        }
        let dh = self.pool.backward(&dh)?;
        let dh = self.stem_bn.backward(ps, &self.stem_relu.backward(&dh)?)?;
        self.stem.backward(ps, &dh)
    }

    /// Full training pass: features then projections.
    pub fn forward_train(&mut self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        let f = self.encode_train(x)?;
        self.project_train(&f)
    }

    pub fn backward_train(&mut self, dz: &Tensor4<T>) -> Result<()> {
        let df = self.project_backward(dz)?;
        self.encode_backward(&df)?;
        Ok(())
    }
}

/// Configuration and provenance stored in a checkpoint header.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub model: EncoderConfig,
    /// Free-form training context (seen tasks, loss mode, iteration).
    #[serde(default)]
    pub training: serde_json::Value,
}

impl Model<f32> {
    pub fn save(&self, path: &Path, training: serde_json::Value) -> Result<()> {
        let header = CheckpointHeader {
            model: self.config.clone(),
            training,
        };
        Checkpoint::from_params(serde_json::to_string(&header)?, &self.params).save(path)
    }

    /// Loads a checkpoint; with `expected`, the stored model configuration
    /// must have the same digest.
    pub fn load(path: &Path, expected: Option<&EncoderConfig>) -> Result<(Self, CheckpointHeader)> {
        let ck = Checkpoint::load(path)?;
        let header: CheckpointHeader = serde_json::from_str(&ck.config)
            .map_err(|e| Error::Version(format!("unreadable checkpoint header: {e}")))?;
        if let Some(exp) = expected {
            if exp.digest() != header.model.digest() {
                return Err(Error::Version(format!(
                    "checkpoint {} was written for a different model configuration",
                    path.display()
                )));
            }
        }
        let mut model = Model::new(header.model.clone(), 0)?;
        ck.restore(&mut model.params)?;
        Ok((model, header))
    }
}

/// Per-record annotations that do not come from the instance itself.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RecordMeta {
    pub split: Split,
    pub seen_task: bool,
    pub seen_dataset: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingRecord {
    pub vector: Vec<f32>,
    pub key: VisualTaskKey,
    pub sample_id: String,
    pub split: Split,
    pub is_failure: bool,
    pub seen_task: bool,
    pub seen_dataset: bool,
}

pub const DEFAULT_EMBED_BATCH: usize = 32;

/// Evaluation-mode embeddings of `instances`, projector omitted.
///
/// A 6-channel model embeds the stacked pair. A 3-channel model embeds each
/// half separately and concatenates the two feature vectors.
pub fn encode_instances(model: &Model<f32>, instances: &[TaskInstance], batch_size: usize) -> Result<Vec<Vec<f32>>> {
    let cfg = model.config();
    let side = cfg.input_side;
    let batch_size = batch_size.max(1);
    let mut out = Vec::with_capacity(instances.len());
    for chunk in instances.chunks(batch_size) {
        if cfg.in_channels == 6 {
            let items = chunk.iter().map(|t| stack_instance(t, side)).collect::<Result<Vec<_>>>()?;
            let f = model.encode(&Tensor4::stack(&items)?)?;
            out.extend((0..f.n()).map(|i| f.row(i).to_vec()));
        } else if cfg.in_channels == 3 {
            let ins = chunk.iter().map(|t| image_tensor(&t.input, side)).collect::<Result<Vec<_>>>()?;
            let outs = chunk.iter().map(|t| image_tensor(&t.output, side)).collect::<Result<Vec<_>>>()?;
            let fi = model.encode(&Tensor4::stack(&ins)?)?;
            let fo = model.encode(&Tensor4::stack(&outs)?)?;
            out.extend((0..fi.n()).map(|i| [fi.row(i), fo.row(i)].concat()));
        } else {
            return Err(Error::Config(format!(
                "cannot embed task instances with a {}-channel model",
                cfg.in_channels
            )));
        }
    }
    Ok(out)
}

pub fn embed_instances(
    model: &Model<f32>,
    instances: &[TaskInstance],
    batch_size: usize,
    meta: impl Fn(&TaskInstance) -> RecordMeta,
) -> Result<Vec<EmbeddingRecord>> {
    let vectors = encode_instances(model, instances, batch_size)?;
    Ok(instances
        .iter()
        .zip(vectors)
        .map(|(t, vector)| {
            let m = meta(t);
            EmbeddingRecord {
                vector,
                key: t.key.clone(),
                sample_id: t.source_sample_id.clone(),
                split: m.split,
                is_failure: t.is_failure,
                seen_task: m.seen_task,
                seen_dataset: m.seen_dataset,
            }
        })
        .collect())
}
