//! Contrastive objectives and the training loop.

pub mod loss;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::model::{image_tensor, stack_instance, EncoderConfig, Model};
use crate::nn::{sgd_step, SgdConfig, Tensor4};
use crate::sampling::{draw_batch, BalancedSampler, BatchSpec, CorpusIndex};
use crate::seed::{self, Rng};
use crate::task_synth::{ClassLabel, TaskInstance, TaskParams, TaskType};

pub use loss::{self_contrastive_loss, sup_contrastive_loss, Aggregation, LossReport};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Supervised contrastive loss over stacked `(in, out)` instances.
    #[default]
    Taco,
    /// Single-image contrastive baseline on a 3-channel encoder.
    SimclrBaseline,
}

impl LossMode {
    pub fn as_str(self) -> &'static str {
        match self {
            LossMode::Taco => "taco",
            LossMode::SimclrBaseline => "simclr_baseline",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "taco" => Ok(LossMode::Taco),
            "simclr_baseline" => Ok(LossMode::SimclrBaseline),
            other => Err(Error::Config(format!("unknown loss mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Encoder and projector shape plus the temperature.
    pub model: EncoderConfig,
    pub batch: BatchSpec,
    /// First iteration (0-based) that uses `failure_batch`; `null` disables failure tasks.
    pub failure_start: Option<usize>,
    pub failure_batch: BatchSpec,
    pub loss_mode: LossMode,
    pub aggregation: Aggregation,
    pub seed: u64,
    /// Write an intermediate checkpoint every this many iterations (0: final only).
    pub checkpoint_every: usize,
    /// Log the loss of a fixed probe batch every this many iterations (0: never).
    pub eval_every: usize,
    /// Task types trained on; they are the "seen" tasks downstream.
    pub tasks: Vec<TaskType>,
    pub task_params: TaskParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 5000,
            lr: 0.001,
            momentum: 0.9,
            weight_decay: 1e-4,
            model: EncoderConfig::default(),
            batch: BatchSpec::PLAIN,
            failure_start: Some(1000),
            failure_batch: BatchSpec::WITH_FAILURES,
            loss_mode: LossMode::Taco,
            aggregation: Aggregation::Mean,
            seed: 0,
            checkpoint_every: 0,
            eval_every: 0,
            tasks: TaskType::ALL.iter().copied().filter(|t| t.default_seen()).collect(),
            task_params: TaskParams::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.batch.validate()?;
        self.failure_batch.validate()?;
        for (name, v) in [("lr", self.lr), ("momentum", self.momentum), ("weight_decay", self.weight_decay)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be a finite non-negative number")));
            }
        }
        if self.tasks.is_empty() {
            return Err(Error::Config("at least one training task is required".into()));
        }
        let channels = match self.loss_mode {
            LossMode::Taco => 6,
            LossMode::SimclrBaseline => 3,
        };
        if self.model.in_channels != channels {
            return Err(Error::Config(format!(
                "loss mode {} needs a {channels}-channel encoder, config has {}",
                self.loss_mode.as_str(),
                self.model.in_channels
            )));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Switches to the baseline objective and its 3-channel encoder.
    pub fn with_loss_mode(mut self, mode: LossMode) -> Self {
        self.loss_mode = mode;
        self.model.in_channels = match mode {
            LossMode::Taco => 6,
            LossMode::SimclrBaseline => 3,
        };
        self
    }

    pub fn failure_active(&self, iteration: usize) -> bool {
        self.failure_start.is_some_and(|s| iteration >= s)
    }

    pub fn batch_spec(&self, iteration: usize) -> BatchSpec {
        if self.failure_active(iteration) {
            self.failure_batch
        } else {
            self.batch
        }
    }

    fn sgd(&self) -> SgdConfig {
        SgdConfig {
            lr: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iter: usize,
    pub loss: f64,
    pub lr: f64,
    pub failure_active: bool,
    pub visual_instances: usize,
    pub failure_instances: usize,
    pub distinct_tasks: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub probe_loss: Option<f64>,
}

/// Class ids in order of first appearance of each label.
pub fn class_ids(batch: &[TaskInstance]) -> Vec<usize> {
    let mut ids: BTreeMap<ClassLabel, usize> = BTreeMap::new();
    batch
        .iter()
        .map(|t| {
            let next = ids.len();
            *ids.entry(t.label()).or_insert(next)
        })
        .collect()
}

pub const SIMCLR_CROP: f32 = 0.8;
pub const SIMCLR_BRIGHTNESS: f32 = 0.2;

/// Random square-ish crop covering `SIMCLR_CROP` of each side (resized back),
/// horizontal flip with probability 1/2, brightness factor in `1 +- SIMCLR_BRIGHTNESS`.
pub fn simclr_augment(image: &Image, rng: &mut Rng) -> Image {
    let (h, w) = image.dims();
    let (ch, cw) = (
        ((h as f32 * SIMCLR_CROP).round() as usize).clamp(1, h),
        ((w as f32 * SIMCLR_CROP).round() as usize).clamp(1, w),
    );
    let (y0, x0) = (rng.gen_range(0..=h - ch), rng.gen_range(0..=w - cw));
    let flip = rng.gen_bool(0.5);
    let factor = 1.0 + rng.gen_range(-SIMCLR_BRIGHTNESS..=SIMCLR_BRIGHTNESS);
    let mut crop = Image::new(ch, cw);
    for y in 0..ch {
        for x in 0..cw {
            let sx = if flip { x0 + cw - 1 - x } else { x0 + x };
            let p = image.pixel(y0 + y, sx);
            crop.set_pixel(y, x, p.map(|v| (v * factor).clamp(0.0, 1.0)));
        }
    }
    crop.resize_bilinear(h, w)
}

/// Owns the model and optimizer state for one run.
pub struct Trainer<'a> {
    config: TrainConfig,
    index: &'a CorpusIndex,
    sampler: BalancedSampler,
    model: Model<f32>,
    iteration: usize,
    probe: Option<(Tensor4<f32>, Vec<usize>)>,
}

impl<'a> Trainer<'a> {
    pub fn new(config: TrainConfig, index: &'a CorpusIndex) -> Result<Self> {
        config.validate()?;
        let sampler = BalancedSampler::new(index)?;
        let model = Model::new(config.model.clone(), seed::derive(config.seed, &[seed::hash_str("init")]))?;
        let mut trainer = Self {
            config,
            index,
            sampler,
            model,
            iteration: 0,
            probe: None,
        };
        if trainer.config.eval_every > 0 {
            let mut rng = seed::rng(trainer.config.seed, &[seed::hash_str("probe")]);
            trainer.probe = Some(trainer.prepare_batch(trainer.config.batch, &mut rng)?);
        }
        Ok(trainer)
    }

    pub fn model(&self) -> &Model<f32> {
        &self.model
    }

    pub fn into_model(self) -> Model<f32> {
        self.model
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Network input and class ids for one batch.
    fn prepare_batch(&self, spec: BatchSpec, rng: &mut Rng) -> Result<(Tensor4<f32>, Vec<usize>)> {
        let side = self.config.model.input_side;
        match self.config.loss_mode {
            LossMode::Taco => {
                let batch = draw_batch(self.index, &self.sampler, spec, rng)?;
                let items = batch.par_iter().map(|t| stack_instance(t, side)).collect::<Result<Vec<_>>>()?;
                Ok((Tensor4::stack(&items)?, class_ids(&batch)))
            }
            LossMode::SimclrBaseline => {
                // Same image budget: each drawn instance yields two images,
                // each seen under two augmentations.
                let total = spec.total().max(4);
                let draws = total.div_ceil(4);
                let mut images = Vec::with_capacity(2 * draws);
                while images.len() < 2 * draws {
                    let (task, member) = self.sampler.draw(rng);
                    match self.index.synthesize(task, member, rng.gen()) {
                        Ok(t) => {
                            images.push(t.input);
                            images.push(t.output);
                        }
                        Err(e) if e.is_skip() => continue,
                        Err(e) => return Err(e),
                    }
                }
                let seeds: Vec<u64> = (0..2 * images.len()).map(|_| rng.gen()).collect();
                let views = seeds
                    .par_iter()
                    .enumerate()
                    .map(|(v, &s)| image_tensor(&simclr_augment(&images[v / 2], &mut seed::rng(s, &[])), side))
                    .collect::<Result<Vec<_>>>()?;
                let labels = (0..views.len()).map(|v| v / 2).collect();
                Ok((Tensor4::stack(&views)?, labels))
            }
        }
    }

    fn loss(&self, z: &Tensor4<f32>, labels: &[usize]) -> Result<(LossReport, Vec<f64>)> {
        let zd: Vec<f64> = z.data().iter().map(|&v| v as f64).collect();
        let (dim, tau, agg) = (z.item_len(), self.config.model.tau, self.config.aggregation);
        match self.config.loss_mode {
            LossMode::Taco => sup_contrastive_loss(&zd, dim, labels, tau, agg),
            LossMode::SimclrBaseline => {
                let pair_of: Vec<usize> = (0..labels.len()).map(|i| i ^ 1).collect();
                self_contrastive_loss(&zd, dim, &pair_of, tau, agg)
            }
        }
    }

    fn probe_loss(&self) -> Result<Option<f64>> {
        let Some((x, labels)) = &self.probe else {
            return Ok(None);
        };
        let z = self.model.project(&self.model.encode(x)?)?;
        Ok(Some(self.loss(&z, labels)?.0.loss))
    }

    /// One optimization step; errors carry the iteration number.
    pub fn step(&mut self) -> Result<IterationMetrics> {
        let iter = self.iteration;
        self.step_inner(iter).map_err(|e| Error::Training {
            iteration: iter,
            source: Box::new(e),
        })
    }

    fn step_inner(&mut self, iter: usize) -> Result<IterationMetrics> {
        let spec = self.config.batch_spec(iter);
        let mut rng = seed::rng(self.config.seed, &[seed::hash_str("batch"), iter as u64]);
        let (x, labels) = self.prepare_batch(spec, &mut rng)?;
        let z = self.model.forward_train(&x)?;
        let (report, grad) = self.loss(&z, &labels)?;
        let dz = Tensor4::from_vec(z.shape(), grad.iter().map(|&g| g as f32).collect())?;
        self.model.backward_train(&dz)?;
        sgd_step(&mut self.model.params, self.config.sgd())?;
        self.iteration += 1;
        let failure_instances = if self.config.loss_mode == LossMode::Taco { spec.failure_count } else { 0 };
        let mut distinct: Vec<usize> = labels.clone();
        distinct.sort_unstable();
        distinct.dedup();
        let probe_loss = if self.config.eval_every > 0 && self.iteration.is_multiple_of(self.config.eval_every) {
            self.probe_loss()?
        } else {
            None
        };
        Ok(IterationMetrics {
            iter,
            loss: report.loss,
            lr: self.config.lr,
            failure_active: self.config.failure_active(iter) && self.config.loss_mode == LossMode::Taco,
            visual_instances: labels.len() - failure_instances,
            failure_instances,
            distinct_tasks: distinct.len() - usize::from(failure_instances > 0),
            probe_loss,
        })
    }

    /// Training context stored in checkpoint headers.
    pub fn header(&self) -> serde_json::Value {
        serde_json::json!({
            "loss_mode": self.config.loss_mode,
            "iterations": self.iteration,
            "seed": self.config.seed,
            "seen_tasks": self.config.tasks,
        })
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub model: Model<f32>,
    pub losses: Vec<f64>,
}

pub const FINAL_CHECKPOINT: &str = "model.ckpt";
pub const METRICS_LOG: &str = "metrics.jsonl";

/// Runs the configured number of iterations, logging one JSON line per
/// iteration and writing checkpoints into `out_dir`.
pub fn train(config: TrainConfig, index: &CorpusIndex, out_dir: &Path) -> Result<TrainOutcome> {
    fs::create_dir_all(out_dir)?;
    let mut trainer = Trainer::new(config, index)?;
    let metrics_path = out_dir.join(METRICS_LOG);
    let mut log = std::io::BufWriter::new(fs::File::create(&metrics_path)?);
    let mut losses = Vec::with_capacity(trainer.config.iterations);
    for _ in 0..trainer.config.iterations {
        let m = trainer.step()?;
        writeln!(log, "{}", serde_json::to_string(&m)?)?;
        losses.push(m.loss);
        let done = trainer.iteration();
        if trainer.config.checkpoint_every > 0 && done % trainer.config.checkpoint_every == 0 {
            log.flush()?;
            trainer
                .model
                .save(&out_dir.join(format!("checkpoint_{done:06}.ckpt")), trainer.header())?;
        }
    }
    log.flush()?;
    let checkpoint = out_dir.join(FINAL_CHECKPOINT);
    trainer.model.save(&checkpoint, trainer.header())?;
    Ok(TrainOutcome {
        checkpoint,
        metrics: metrics_path,
        model: trainer.into_model(),
        losses,
    })
}
