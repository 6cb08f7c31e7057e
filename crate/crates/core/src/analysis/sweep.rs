//! Iterative task adaptation: distance of gradually altered instances to a
//! reference task's mean representation.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Sample};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::model::{encode_instances, Model, DEFAULT_EMBED_BATCH};
use crate::seed;
use crate::task_synth::{
    geometry::rotate, noisy_segmentation, photometric_transform, synthesize_for_samples, Palette, Photometric,
    TaskInstance, TaskParams, TaskType, VisualTaskKey,
};

use super::similarity::cosine_similarity_f64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    /// Output is the input scaled by the grid factor.
    Brightness,
    /// Output is the input rotated by the grid angle in degrees.
    Rotation,
    /// Output is the segmentation with the grid fraction of pixels recolored.
    NoisySegmentation,
}

impl SweepKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepKind::Brightness => "brightness",
            SweepKind::Rotation => "rotation",
            SweepKind::NoisySegmentation => "noisy_segmentation",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        [SweepKind::Brightness, SweepKind::Rotation, SweepKind::NoisySegmentation]
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown sweep {s:?}")))
    }

    /// Brightness 0.5..=2.0 by 0.1; rotation 0..=360 by 15 degrees; noise
    /// 0..=10% by 2%, then 20..=100% by 10%.
    pub fn default_grid(self) -> Vec<f64> {
        match self {
            SweepKind::Brightness => (5..=20).map(|i| i as f64 / 10.0).collect(),
            SweepKind::Rotation => (0..=24).map(|i| (i * 15) as f64).collect(),
            SweepKind::NoisySegmentation => (0..=5)
                .map(|i| i as f64 * 0.02)
                .chain((2..=10).map(|i| i as f64 / 10.0))
                .collect(),
        }
    }

    /// Task whose mean the curve is most naturally compared with.
    pub fn default_reference(self) -> TaskType {
        match self {
            SweepKind::Brightness | SweepKind::Rotation => TaskType::Identity,
            SweepKind::NoisySegmentation => TaskType::Segmentation,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub kind: SweepKind,
    pub grid: Vec<f64>,
    pub reference_tasks: Vec<TaskType>,
    pub probe_count: usize,
    pub seed: u64,
}

impl SweepSpec {
    pub fn new(kind: SweepKind, probe_count: usize, seed: u64) -> Self {
        Self {
            kind,
            grid: kind.default_grid(),
            reference_tasks: vec![kind.default_reference()],
            probe_count,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() || self.grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("sweep grid must be nonempty and strictly increasing".into()));
        }
        if self.probe_count < 10 {
            return Err(Error::Config(format!("sweep needs at least 10 probes, got {}", self.probe_count)));
        }
        if self.reference_tasks.is_empty() {
            return Err(Error::Config("sweep needs a reference task".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCurve {
    pub reference: TaskType,
    pub points: Vec<SweepPoint>,
}

impl SweepCurve {
    /// Grid value with the smallest mean distance (first on ties).
    pub fn argmin(&self) -> f64 {
        self.points
            .iter()
            .min_by(|a, b| a.mean.total_cmp(&b.mean))
            .map(|p| p.value)
            .unwrap_or(f64::NAN)
    }
}

fn task_instances(corpus: &Corpus, samples: &[&Sample], task: TaskType, params: &TaskParams, seed: u64) -> Result<Vec<TaskInstance>> {
    synthesize_for_samples(corpus, samples, &[task], params, seed)
}

/// Computes one curve per reference task over the samples in `test_ids`.
pub fn adaptation_sweep(
    model: &Model<f32>,
    corpus: &Corpus,
    test_ids: &[&str],
    spec: &SweepSpec,
    params: &TaskParams,
) -> Result<Vec<SweepCurve>> {
    spec.validate()?;
    let palette = Palette::default();
    let mut test: Vec<&Sample> = test_ids
        .iter()
        .map(|id| corpus.sample(id).ok_or_else(|| Error::Index(format!("unknown sample {id}"))))
        .collect::<Result<_>>()?;
    test.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));

    // Probes: a seeded subset of the test samples.
    let mut order: Vec<usize> = (0..test.len()).collect();
    {
        use rand::seq::SliceRandom;
        order.shuffle(&mut seed::rng(spec.seed, &[seed::hash_str("sweep-probes")]));
    }
    let probes: Vec<&Sample> = order.iter().take(spec.probe_count).map(|&i| test[i]).collect();
    if probes.len() < spec.probe_count {
        return Err(Error::Contract(format!(
            "sweep needs {} probe samples, the test split has {}",
            spec.probe_count,
            probes.len()
        )));
    }
    let segs = if spec.kind == SweepKind::NoisySegmentation {
        task_instances(corpus, &probes, TaskType::Segmentation, params, spec.seed)?
    } else {
        Vec::new()
    };
    if spec.kind == SweepKind::NoisySegmentation && segs.len() != probes.len() {
        return Err(Error::Contract("segmentation could not be rendered for every probe".into()));
    }

    // Altered instances, grid-major.
    let mut altered = Vec::with_capacity(spec.grid.len() * probes.len());
    for (gi, &g) in spec.grid.iter().enumerate() {
        for (pi, p) in probes.iter().enumerate() {
            let input = p.image.clone();
            let output = match spec.kind {
                SweepKind::Brightness => photometric_transform(&input, Photometric::Brightness(g as f32))?,
                SweepKind::Rotation => rotate(&input, g as f32),
                SweepKind::NoisySegmentation => {
                    let mut rng = seed::rng(spec.seed, &[seed::hash_str("sweep-noise"), gi as u64, pi as u64]);
                    noisy_segmentation(&segs[pi].output, g as f32, &palette, &mut rng)?
                }
            };
            altered.push(TaskInstance {
                input,
                output,
                key: VisualTaskKey::new(spec.kind.default_reference(), &p.dataset_id),
                is_failure: false,
                source_sample_id: p.sample_id.clone(),
            });
        }
    }
    let vectors = encode_instances(model, &altered, DEFAULT_EMBED_BATCH)?;

    let mut curves = Vec::new();
    for &reference in &spec.reference_tasks {
        let refs = task_instances(corpus, &test, reference, params, spec.seed)?;
        if refs.is_empty() {
            return Err(Error::Contract(format!("reference task {reference} has no test instances")));
        }
        let ref_vecs = encode_instances(model, &refs, DEFAULT_EMBED_BATCH)?;
        let dim = ref_vecs[0].len();
        let mut mean = vec![0.0f64; dim];
        for v in &ref_vecs {
            for (m, &x) in mean.iter_mut().zip(v) {
                *m += x as f64;
            }
        }
        mean.iter_mut().for_each(|m| *m /= ref_vecs.len() as f64);

        let mut points = Vec::with_capacity(spec.grid.len());
        for (gi, &g) in spec.grid.iter().enumerate() {
            let dists = vectors[gi * probes.len()..(gi + 1) * probes.len()]
                .iter()
                .map(|v| {
                    let v: Vec<f64> = v.iter().map(|&x| x as f64).collect();
                    Ok(1.0 - cosine_similarity_f64(&v, &mean)?)
                })
                .collect::<Result<Vec<f64>>>()?;
            let n = dists.len() as f64;
            let mu = dists.iter().sum::<f64>() / n;
            let var = dists.iter().map(|d| (d - mu).powi(2)).sum::<f64>() / n;
            points.push(SweepPoint {
                value: g,
                mean: mu,
                std: var.sqrt(),
            });
        }
        curves.push(SweepCurve { reference, points });
    }
    Ok(curves)
}

/// `reference,value,mean,std` rows.
pub fn curves_to_csv(kind: SweepKind, curves: &[SweepCurve]) -> String {
    let mut out = String::from("sweep,reference,value,mean,std\n");
    for c in curves {
        for p in &c.points {
            let _ = writeln!(out, "{},{},{},{},{}", kind.as_str(), c.reference, p.value, p.mean, p.std);
        }
    }
    out
}

/// Plots curves as a PNG line chart with a shaded one-std band.
pub fn render_curves(curves: &[SweepCurve], width: usize, height: usize) -> Image {
    let mut img = Image::filled(height, width, 1.0);
    let colors = Palette::default();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for c in curves {
        for p in &c.points {
            lo = lo.min(p.mean - p.std);
            hi = hi.max(p.mean + p.std);
        }
    }
    // Also catches an empty or non-finite range.
    if hi.partial_cmp(&lo) != Some(std::cmp::Ordering::Greater) {
        hi = lo + 1.0;
    }
    let margin = 4usize;
    let to_y = |v: f64| -> usize {
        let t = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
        margin + ((1.0 - t) * (height - 2 * margin - 1) as f64).round() as usize
    };
    for (ci, c) in curves.iter().enumerate() {
        let color = colors.color(ci as u8 + 1);
        let n = c.points.len().max(2) - 1;
        let to_x = |i: usize| margin + i * (width - 2 * margin - 1) / n;
        for (i, p) in c.points.iter().enumerate() {
            let x = to_x(i);
            let band = color.map(|v| 0.75 + 0.25 * v);
            for y in to_y(p.mean + p.std)..=to_y(p.mean - p.std) {
                img.set_pixel(y, x, band);
            }
        }
        for i in 0..c.points.len().saturating_sub(1) {
            let (x0, x1) = (to_x(i), to_x(i + 1));
            let (y0, y1) = (to_y(c.points[i].mean) as f64, to_y(c.points[i + 1].mean) as f64);
            for x in x0..=x1 {
                let t = if x1 > x0 { (x - x0) as f64 / (x1 - x0) as f64 } else { 0.0 };
                img.set_pixel((y0 + t * (y1 - y0)).round() as usize, x, color);
            }
        }
    }
    img
}
