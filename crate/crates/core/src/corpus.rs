//! Segmentation-labeled corpora: procedural generation, the on-disk layout,
//! ingestion and per-dataset train/val/test splitting.
//!
//! On disk a corpus looks like
//!
//! ```text
//! <root>/<dataset_id>/meta.json
//! <root>/<dataset_id>/images/<sample_id>.png   8-bit RGB
//! <root>/<dataset_id>/masks/<sample_id>.png    8-bit gray, value = class id
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::f32::consts::PI;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, Mask};
use crate::seed;

pub const MIN_SIDE: usize = 32;
pub const MIN_SAMPLES: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Image,
    pub mask: Mask,
    pub dataset_id: String,
    pub sample_id: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub dataset_id: String,
    pub is_grayscale: bool,
    pub num_classes: u8,
    pub seen: bool,
    #[serde(default)]
    pub modality_tag: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Corpus {
    pub datasets: Vec<DatasetMeta>,
    pub samples: Vec<Sample>,
}

impl Corpus {
    pub fn meta(&self, dataset_id: &str) -> Option<&DatasetMeta> {
        self.datasets.iter().find(|d| d.dataset_id == dataset_id)
    }

    pub fn sample(&self, sample_id: &str) -> Option<&Sample> {
        self.samples.iter().find(|s| s.sample_id == sample_id)
    }

    pub fn samples_of<'a>(&'a self, dataset_id: &'a str) -> impl Iterator<Item = &'a Sample> + 'a {
        self.samples.iter().filter(move |s| s.dataset_id == dataset_id)
    }
}

/// Generation parameters for one synthetic dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub dataset_id: String,
    pub height: usize,
    pub width: usize,
    pub num_samples: usize,
    #[serde(default)]
    pub grayscale: bool,
    #[serde(default = "default_num_classes")]
    pub num_classes: u8,
    #[serde(default = "default_true")]
    pub seen: bool,
    #[serde(default)]
    pub modality_tag: String,
    /// Inclusive range of blobs per image.
    #[serde(default = "default_blob_count")]
    pub blob_count: (usize, usize),
    /// Blob radius range as a fraction of the shorter side.
    #[serde(default = "default_blob_radius")]
    pub blob_radius: (f32, f32),
    #[serde(default = "default_texture_amplitude")]
    pub texture_amplitude: f32,
}

fn default_true() -> bool {
    true
}
fn default_num_classes() -> u8 {
    2
}
fn default_blob_count() -> (usize, usize) {
    (1, 3)
}
fn default_blob_radius() -> (f32, f32) {
    (0.10, 0.22)
}
fn default_texture_amplitude() -> f32 {
    0.12
}

impl DatasetSpec {
    pub fn new(dataset_id: impl Into<String>, side: usize, num_samples: usize) -> Self {
        Self {
            dataset_id: dataset_id.into(),
            height: side,
            width: side,
            num_samples,
            grayscale: false,
            num_classes: default_num_classes(),
            seen: true,
            modality_tag: String::new(),
            blob_count: default_blob_count(),
            blob_radius: default_blob_radius(),
            texture_amplitude: default_texture_amplitude(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    pub datasets: Vec<DatasetSpec>,
    pub seed: u64,
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.datasets.is_empty() {
            return Err(Error::Config("corpus spec lists no datasets".into()));
        }
        let mut ids = BTreeSet::new();
        for d in &self.datasets {
            if !ids.insert(d.dataset_id.as_str()) {
                return Err(Error::Config(format!("duplicate dataset id {}", d.dataset_id)));
            }
            if d.dataset_id.is_empty() || d.dataset_id.contains(['/', '\\']) {
                return Err(Error::Config(format!("invalid dataset id {:?}", d.dataset_id)));
            }
            if d.height < MIN_SIDE || d.width < MIN_SIDE {
                return Err(Error::Config(format!(
                    "dataset {}: image side must be at least {MIN_SIDE}, got {}x{}",
                    d.dataset_id, d.height, d.width
                )));
            }
            if d.num_samples < MIN_SAMPLES {
                return Err(Error::Config(format!(
                    "dataset {}: needs at least {MIN_SAMPLES} samples, got {}",
                    d.dataset_id, d.num_samples
                )));
            }
            if d.num_classes < 1 {
                return Err(Error::Config(format!("dataset {}: class count must be >= 1", d.dataset_id)));
            }
            let (lo, hi) = d.blob_count;
            if lo < 1 || hi < lo {
                return Err(Error::Config(format!("dataset {}: invalid blob count range", d.dataset_id)));
            }
            let (rlo, rhi) = d.blob_radius;
            if !(rlo > 0.0 && rhi >= rlo && rhi <= 0.5) {
                return Err(Error::Config(format!("dataset {}: invalid blob radius range", d.dataset_id)));
            }
            if !(0.0..=0.5).contains(&d.texture_amplitude) {
                return Err(Error::Config(format!("dataset {}: texture amplitude out of range", d.dataset_id)));
            }
        }
        Ok(())
    }
}

/// The fixed appearance of one synthetic modality.
struct Modality {
    base: f32,
    tint: [f32; 3],
    waves: Vec<(f32, f32, f32)>,
    object_gain: Vec<f32>,
}

impl Modality {
    fn new(spec: &DatasetSpec, index: usize, global_seed: u64) -> Self {
        let mut rng = seed::rng(global_seed, &[seed::hash_str(&spec.dataset_id), 0xA11CE]);
        // Spread base intensities over the index so modalities stay apart.
        let golden = 0.618_034_f32;
        let base = 0.2 + 0.55 * ((index as f32 * golden) % 1.0);
        let tint = if spec.grayscale {
            [1.0; 3]
        } else {
            let mut t = [0.0; 3];
            for v in &mut t {
                *v = rng.gen_range(0.55..1.0);
            }
            t
        };
        // Dataset-specific spatial frequencies (cycles per image) and orientations.
        let n_waves = 2 + index % 3;
        let waves = (0..n_waves)
            .map(|k| {
                let freq = 1.0 + ((index * 3 + k * 5) % 7) as f32 * 0.75 + rng.gen_range(0.0..0.5);
                let angle = rng.gen_range(0.0..PI);
                let weight = rng.gen_range(0.5..1.0);
                (freq, angle, weight)
            })
            .collect();
        let object_gain = (0..spec.num_classes)
            .map(|c| {
                let sign = if (c as usize + index).is_multiple_of(2) { 1.0 } else { -1.0 };
                sign * (0.18 + 0.08 * c as f32)
            })
            .collect();
        Self {
            base,
            tint,
            waves,
            object_gain,
        }
    }
}

pub fn sample_id(dataset_id: &str, index: usize) -> String {
    format!("{dataset_id}_{index:05}")
}

fn generate_sample(spec: &DatasetSpec, modality: &Modality, index: usize, global_seed: u64) -> Sample {
    let mut rng = seed::rng(global_seed, &[seed::hash_str(&spec.dataset_id), index as u64]);
    let (h, w) = (spec.height, spec.width);
    let side = h.min(w) as f32;

    let phases: Vec<f32> = modality.waves.iter().map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
    let weight_sum: f32 = modality.waves.iter().map(|wv| wv.2).sum();

    let mut mask = Mask::new(h, w);
    let mut gain_field = vec![0.0f32; h * w];
    let blobs = rng.gen_range(spec.blob_count.0..=spec.blob_count.1);
    for _ in 0..blobs {
        let class = rng.gen_range(1..=spec.num_classes);
        let r = rng.gen_range(spec.blob_radius.0..=spec.blob_radius.1) * side;
        let cy = rng.gen_range(r..(h as f32 - r).max(r + 1.0));
        let cx = rng.gen_range(r..(w as f32 - r).max(r + 1.0));
        let polygon = rng.gen_bool(0.4);
        let aspect = rng.gen_range(0.6..1.0f32);
        let theta = rng.gen_range(0.0..PI);
        let (s, c) = theta.sin_cos();
        let vertices = rng.gen_range(3..=6);
        let rot = rng.gen_range(0.0..2.0 * PI);
        for y in 0..h {
            for x in 0..w {
                let dy = y as f32 + 0.5 - cy;
                let dx = x as f32 + 0.5 - cx;
                let u = c * dx + s * dy;
                let v = (-s * dx + c * dy) / aspect;
                let inside = if polygon {
                    // Regular polygon test via the polar apothem bound.
                    let ang = v.atan2(u) - rot;
                    let sector = 2.0 * PI / vertices as f32;
                    let local = ang.rem_euclid(sector) - sector / 2.0;
                    let apothem = r * (PI / vertices as f32).cos();
                    (u * u + v * v).sqrt() * local.cos() <= apothem
                } else {
                    u * u + v * v <= r * r
                };
                if inside {
                    mask.set(y, x, class);
                    gain_field[y * w + x] = modality.object_gain[(class - 1) as usize];
                }
            }
        }
    }

    let mut data = Vec::with_capacity(h * w * 3);
    let grain = 0.02;
    for y in 0..h {
        for x in 0..w {
            let (fy, fx) = (y as f32 / h as f32, x as f32 / w as f32);
            let mut tex = 0.0;
            for ((freq, angle, weight), phase) in modality.waves.iter().zip(&phases) {
                let t = fx * angle.cos() + fy * angle.sin();
                tex += weight * (2.0 * PI * freq * t + phase).sin();
            }
            tex /= weight_sum;
            let noise = rng.gen_range(-grain..grain);
            let v = modality.base + spec.texture_amplitude * tex + gain_field[y * w + x] + noise;
            if spec.grayscale {
                let v = v.clamp(0.0, 1.0);
                data.extend_from_slice(&[v, v, v]);
            } else {
                for t in modality.tint {
                    data.push((v * t + (1.0 - t) * 0.5 * fy).clamp(0.0, 1.0));
                }
            }
        }
    }
    Sample {
        image: Image::from_vec(h, w, data).expect("sized buffer"),
        mask,
        dataset_id: spec.dataset_id.clone(),
        sample_id: sample_id(&spec.dataset_id, index),
    }
}

/// Generates every dataset of `spec`. Samples are ordered by dataset, then index.
pub fn generate_synthetic_corpus(spec: &CorpusSpec) -> Result<Corpus> {
    spec.validate()?;
    let mut corpus = Corpus::default();
    for (index, ds) in spec.datasets.iter().enumerate() {
        let modality = Modality::new(ds, index, spec.seed);
        let samples: Vec<Sample> = (0..ds.num_samples)
            .into_par_iter()
            .map(|i| generate_sample(ds, &modality, i, spec.seed))
            .collect();
        corpus.samples.extend(samples);
        corpus.datasets.push(DatasetMeta {
            dataset_id: ds.dataset_id.clone(),
            is_grayscale: ds.grayscale,
            num_classes: ds.num_classes,
            seen: ds.seen,
            modality_tag: ds.modality_tag.clone(),
        });
    }
    Ok(corpus)
}

pub fn write_corpus(corpus: &Corpus, root: &Path) -> Result<()> {
    for meta in &corpus.datasets {
        let dir = root.join(&meta.dataset_id);
        fs::create_dir_all(dir.join("images"))?;
        fs::create_dir_all(dir.join("masks"))?;
        fs::write(dir.join("meta.json"), serde_json::to_string_pretty(meta)?)?;
    }
    for s in &corpus.samples {
        let dir = root.join(&s.dataset_id);
        s.image.save_png(&dir.join("images").join(format!("{}.png", s.sample_id)))?;
        s.mask.save_png(&dir.join("masks").join(format!("{}.png", s.sample_id)))?;
    }
    Ok(())
}

fn png_stems(dir: &Path) -> Result<Vec<String>> {
    let mut stems = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("png") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                stems.push(stem.to_owned());
            }
        }
    }
    stems.sort();
    Ok(stems)
}

/// Loads a corpus written in the directory layout above. Datasets and samples
/// come back in lexicographic order.
pub fn ingest_corpus(root: &Path) -> Result<Corpus> {
    let mut dataset_dirs = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| Error::Ingest {
        path: root.to_owned(),
        reason: e.to_string(),
    })? {
        let path = entry?.path();
        if path.is_dir() {
            dataset_dirs.push(path);
        }
    }
    dataset_dirs.sort();

    let mut corpus = Corpus::default();
    for dir in dataset_dirs {
        let meta_path = dir.join("meta.json");
        let text = fs::read_to_string(&meta_path).map_err(|e| Error::Ingest {
            path: meta_path.clone(),
            reason: e.to_string(),
        })?;
        let meta: DatasetMeta = serde_json::from_str(&text).map_err(|e| Error::Ingest {
            path: meta_path.clone(),
            reason: e.to_string(),
        })?;
        if corpus.meta(&meta.dataset_id).is_some() {
            return Err(Error::Validation(format!("duplicate dataset id {}", meta.dataset_id)));
        }

        let images_dir = dir.join("images");
        let masks_dir = dir.join("masks");
        let stems = png_stems(&images_dir).map_err(|e| Error::Ingest {
            path: images_dir.clone(),
            reason: e.to_string(),
        })?;
        for stem in stems {
            let image_path = images_dir.join(format!("{stem}.png"));
            let mask_path = masks_dir.join(format!("{stem}.png"));
            if !mask_path.is_file() {
                return Err(Error::Ingest {
                    path: image_path,
                    reason: "no matching mask".into(),
                });
            }
            let image = Image::load_png(&image_path)?;
            let mask = Mask::load_png(&mask_path)?;
            if image.dims() != mask.dims() {
                return Err(Error::Ingest {
                    path: mask_path,
                    reason: format!("mask is {:?} but image is {:?}", mask.dims(), image.dims()),
                });
            }
            if mask.max_label() > meta.num_classes {
                return Err(Error::Validation(format!(
                    "{}: mask value {} exceeds num_classes {}",
                    mask_path.display(),
                    mask.max_label(),
                    meta.num_classes
                )));
            }
            if meta.is_grayscale && image.max_channel_spread() > 0.0 {
                return Err(Error::Validation(format!(
                    "{}: dataset {} is declared grayscale but the image has color",
                    image_path.display(),
                    meta.dataset_id
                )));
            }
            corpus.samples.push(Sample {
                image,
                mask,
                dataset_id: meta.dataset_id.clone(),
                sample_id: stem,
            });
        }
        corpus.datasets.push(meta);
    }
    Ok(corpus)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SplitAssignment(pub BTreeMap<String, Split>);

impl SplitAssignment {
    pub fn get(&self, sample_id: &str) -> Option<Split> {
        self.0.get(sample_id).copied()
    }

    pub fn ids(&self, split: Split) -> impl Iterator<Item = &str> {
        self.0.iter().filter(move |(_, &s)| s == split).map(|(k, _)| k.as_str())
    }

    pub fn count(&self, split: Split) -> usize {
        self.0.values().filter(|&&s| s == split).count()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.0)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(Self(serde_json::from_str(text)?))
    }
}

pub const DEFAULT_RATIOS: (f64, f64, f64) = (0.70, 0.15, 0.15);

/// Stratified per-dataset split. Validation and test sizes are floored, the
/// remainder goes to train.
pub fn split_corpus(samples: &[Sample], ratios: (f64, f64, f64), seed: u64) -> Result<SplitAssignment> {
    let (tr, va, te) = ratios;
    if [tr, va, te].iter().any(|r| !(0.0..=1.0).contains(r)) || (tr + va + te - 1.0).abs() > 1e-9 {
        return Err(Error::Param(format!("split ratios {ratios:?} must be non-negative and sum to 1")));
    }
    let mut by_dataset: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for s in samples {
        by_dataset.entry(&s.dataset_id).or_default().push(&s.sample_id);
    }
    let mut out = BTreeMap::new();
    for (dataset, mut ids) in by_dataset {
        let n = ids.len();
        if n < 3 {
            return Err(Error::Validation(format!(
                "dataset {dataset} has {n} samples, at least 3 are needed to split"
            )));
        }
        ids.sort_unstable();
        ids.shuffle(&mut seed::rng(seed, &[seed::hash_str(dataset), 0x5011]));
        let n_val = (n as f64 * va + 1e-9).floor() as usize;
        let n_test = (n as f64 * te + 1e-9).floor() as usize;
        for (i, id) in ids.into_iter().enumerate() {
            let split = if i < n_val {
                Split::Val
            } else if i < n_val + n_test {
                Split::Test
            } else {
                Split::Train
            };
            if out.insert(id.to_owned(), split).is_some() {
                return Err(Error::Validation(format!("duplicate sample id {id}")));
            }
        }
    }
    Ok(SplitAssignment(out))
}
