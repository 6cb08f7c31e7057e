use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::corpus::{DatasetMeta, Sample};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::seed::Rng;

use super::degrade::{degrade, Degradation, Rect};
use super::geometry::{geometric_transform, Geometric};
use super::morphology::{distance_map, geodesic_map, semantic_hulls, skeleton};
use super::palette::Palette;
use super::photometric::{photometric_transform, Photometric};
use super::semantic::{semantic_render, SemanticKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskCategory {
    Semantic,
    Transformation,
    Generative,
}

macro_rules! task_types {
    ($( $variant:ident => $name:literal, $cat:ident, $seen:literal; )*) => {
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum TaskType {
            $( $variant, )*
        }

        impl TaskType {
            pub const ALL: [TaskType; 30] = [ $( TaskType::$variant, )* ];

            pub fn name(self) -> &'static str {
                match self { $( TaskType::$variant => $name, )* }
            }

            pub fn category(self) -> TaskCategory {
                match self { $( TaskType::$variant => TaskCategory::$cat, )* }
            }

            /// Whether the task belongs to the reference training set.
            pub fn default_seen(self) -> bool {
                match self { $( TaskType::$variant => $seen, )* }
            }
        }

        impl FromStr for TaskType {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $( $name => Ok(TaskType::$variant), )*
                    other => Err(Error::Param(format!("unknown task {other:?}"))),
                }
            }
        }
    };
}

task_types! {
    Segmentation => "segmentation", Semantic, true;
    BoundingBoxes => "bounding_boxes", Semantic, true;
    InteractiveSegmentation => "interactive_segmentation", Semantic, true;
    Points => "points", Semantic, true;
    SemanticEdges => "semantic_edges", Semantic, true;
    Skeletons => "skeletons", Semantic, true;
    SemanticHulls => "semantic_hulls", Semantic, false;
    DecreaseBrightness => "decrease_brightness", Transformation, true;
    DistanceMap => "distance_map", Transformation, true;
    FalseColorization => "false_colorization", Transformation, true;
    Geodesic => "geodesic", Transformation, true;
    GeodesicAndEuclid => "geodesic_and_euclid", Transformation, true;
    HorizontalFlip => "horizontal_flip", Transformation, true;
    VerticalFlip => "vertical_flip", Transformation, false;
    Identity => "identity", Transformation, true;
    IncreaseContrast => "increase_contrast", Transformation, true;
    Rotate45 => "rotate45", Transformation, false;
    Rotate90 => "rotate90", Transformation, true;
    Rotate180 => "rotate180", Transformation, true;
    Rotate270 => "rotate270", Transformation, true;
    ZoomIn => "zoom_in", Transformation, true;
    Invert => "invert", Transformation, false;
    Inpainting => "inpainting", Generative, true;
    Inpainting3x => "inpainting_3x", Generative, true;
    ImageGeneration => "image_generation", Generative, true;
    SaltPepperNoise => "salt_pepper_noise", Generative, true;
    SuperResolution => "super_resolution", Generative, true;
    Colorization => "colorization", Generative, false;
    Denoising => "denoising", Generative, false;
    Outpainting => "outpainting", Generative, false;
}

impl fmt::Display for TaskType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for TaskType {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for TaskType {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A task type applied to one dataset.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VisualTaskKey {
    pub task: TaskType,
    pub dataset_id: String,
}

impl VisualTaskKey {
    pub fn new(task: TaskType, dataset_id: impl Into<String>) -> Self {
        Self {
            task,
            dataset_id: dataset_id.into(),
        }
    }
}

impl fmt::Display for VisualTaskKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.task, self.dataset_id)
    }
}

/// Training class of an instance: a visual task, or the shared failure class.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ClassLabel {
    Visual(VisualTaskKey),
    Failure,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskInstance {
    pub input: Image,
    pub output: Image,
    /// For failure instances, the task both halves were taken from.
    pub key: VisualTaskKey,
    pub is_failure: bool,
    pub source_sample_id: String,
}

impl TaskInstance {
    pub fn label(&self) -> ClassLabel {
        if self.is_failure {
            ClassLabel::Failure
        } else {
            ClassLabel::Visual(self.key.clone())
        }
    }
}

/// Fixed task parameters; every value can be overridden from configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskParams {
    pub decrease_brightness: f32,
    pub increase_contrast: f32,
    pub zoom_factor: f32,
    pub inpainting_side: (f32, f32),
    pub inpainting_3x_side: (f32, f32),
    pub denoising_sigma: f32,
    pub salt_pepper_p: f32,
    pub super_resolution_factor: usize,
    pub outpainting_keep: f32,
    /// Excludes false colorization from color datasets. Off by default so the
    /// full catalogue loses exactly one task (colorization) per gray dataset.
    pub false_color_grayscale_only: bool,
}

impl Default for TaskParams {
    fn default() -> Self {
        Self {
            decrease_brightness: 0.5,
            increase_contrast: 1.5,
            zoom_factor: 2.0,
            inpainting_side: (0.25, 0.40),
            inpainting_3x_side: (0.10, 0.15),
            denoising_sigma: 0.1,
            salt_pepper_p: 0.1,
            super_resolution_factor: 4,
            outpainting_keep: 0.5,
            false_color_grayscale_only: false,
        }
    }
}

pub fn task_applicability(task: TaskType, meta: &DatasetMeta, params: &TaskParams) -> bool {
    match task {
        TaskType::Colorization => !meta.is_grayscale,
        TaskType::FalseColorization if params.false_color_grayscale_only => meta.is_grayscale,
        _ => true,
    }
}

fn random_rects(h: usize, w: usize, count: usize, side: (f32, f32), rng: &mut Rng) -> Vec<Rect> {
    let min_side = h.min(w) as f32;
    (0..count)
        .map(|_| {
            let s = ((rng.gen_range(side.0..=side.1) * min_side).round() as usize).clamp(1, h.min(w));
            Rect {
                y: rng.gen_range(0..=h - s),
                x: rng.gen_range(0..=w - s),
                height: s,
                width: s,
            }
        })
        .collect()
}

/// The fixed `in -> out` map of a transformation task.
pub fn transformation_output(task: TaskType, sample: &Sample, params: &TaskParams) -> Result<Image> {
    let img = &sample.image;
    use Photometric as P;
    match task {
        TaskType::DecreaseBrightness => photometric_transform(img, P::Brightness(params.decrease_brightness)),
        TaskType::IncreaseContrast => photometric_transform(img, P::Contrast(params.increase_contrast)),
        TaskType::Invert => photometric_transform(img, P::Invert),
        TaskType::FalseColorization => photometric_transform(img, P::FalseColor),
        TaskType::Identity => Ok(img.clone()),
        TaskType::HorizontalFlip => geometric_transform(img, Geometric::HFlip),
        TaskType::VerticalFlip => geometric_transform(img, Geometric::VFlip),
        TaskType::Rotate45 => geometric_transform(img, Geometric::Rotate(45.0)),
        TaskType::Rotate90 => geometric_transform(img, Geometric::Rotate(90.0)),
        TaskType::Rotate180 => geometric_transform(img, Geometric::Rotate(180.0)),
        TaskType::Rotate270 => geometric_transform(img, Geometric::Rotate(270.0)),
        TaskType::ZoomIn => geometric_transform(img, Geometric::Zoom(params.zoom_factor)),
        TaskType::DistanceMap => distance_map(&sample.mask),
        TaskType::Geodesic => geodesic_map(img, &sample.mask, 1.0),
        TaskType::GeodesicAndEuclid => geodesic_map(img, &sample.mask, 0.5),
        other => Err(Error::Contract(format!("{other} is not a transformation task"))),
    }
}

pub fn synthesize_task_instance(
    sample: &Sample,
    meta: &DatasetMeta,
    task: TaskType,
    params: &TaskParams,
    palette: &Palette,
    rng: &mut Rng,
) -> Result<TaskInstance> {
    if !task_applicability(task, meta, params) {
        return Err(Error::NotApplicable {
            task: task.name().into(),
            dataset: meta.dataset_id.clone(),
        });
    }
    let (h, w) = sample.image.dims();
    let original = &sample.image;
    let (input, output) = match task.category() {
        TaskCategory::Semantic => match task {
            TaskType::Skeletons => (original.clone(), skeleton(&sample.mask, palette)?),
            TaskType::SemanticHulls => (original.clone(), semantic_hulls(&sample.mask, palette)?),
            _ => {
                let kind = match task {
                    TaskType::Segmentation => SemanticKind::Segmentation,
                    TaskType::BoundingBoxes => SemanticKind::Boxes,
                    TaskType::InteractiveSegmentation => SemanticKind::Interactive,
                    TaskType::Points => SemanticKind::Points,
                    TaskType::SemanticEdges => SemanticKind::Edges,
                    _ => unreachable!("semantic task list is exhaustive"),
                };
                semantic_render(sample, kind, palette, rng)?
            }
        },
        TaskCategory::Transformation => (original.clone(), transformation_output(task, sample, params)?),
        TaskCategory::Generative => {
            let degraded = match task {
                TaskType::Inpainting => {
                    let rects = random_rects(h, w, 1, params.inpainting_side, rng);
                    degrade(original, &Degradation::Erase(rects), rng)?
                }
                TaskType::Inpainting3x => {
                    let rects = random_rects(h, w, 3, params.inpainting_3x_side, rng);
                    degrade(original, &Degradation::Erase(rects), rng)?
                }
                TaskType::ImageGeneration => degrade(original, &Degradation::NoiseFill, rng)?,
                TaskType::SaltPepperNoise => degrade(original, &Degradation::SaltPepper(params.salt_pepper_p), rng)?,
                TaskType::SuperResolution => {
                    degrade(original, &Degradation::Downsample(params.super_resolution_factor), rng)?
                }
                TaskType::Colorization => photometric_transform(original, Photometric::ToGrayscale)?,
                TaskType::Denoising => degrade(original, &Degradation::Gaussian(params.denoising_sigma), rng)?,
                TaskType::Outpainting => degrade(original, &Degradation::BorderErase(params.outpainting_keep), rng)?,
                _ => unreachable!("generative task list is exhaustive"),
            };
            (degraded, original.clone())
        }
    };
    debug_assert!(input.is_valid() && output.is_valid(), "{task} produced values outside [0, 1]");
    Ok(TaskInstance {
        input,
        output,
        key: VisualTaskKey::new(task, &meta.dataset_id),
        is_failure: false,
        source_sample_id: sample.sample_id.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Mask;
    use rand::SeedableRng;

    fn meta(gray: bool) -> DatasetMeta {
        DatasetMeta {
            dataset_id: "d".into(),
            is_grayscale: gray,
            num_classes: 2,
            seen: true,
            modality_tag: String::new(),
        }
    }

    fn sample() -> Sample {
        let mut image = Image::new(32, 32);
        let mut mask = Mask::new(32, 32);
        for y in 0..32 {
            for x in 0..32 {
                let v = (x + 2 * y) as f32 / 96.0;
                image.set_pixel(y, x, [v, 0.5 * v, 1.0 - v]);
                if (8..20).contains(&y) && (10..24).contains(&x) {
                    mask.set(y, x, 1);
                }
            }
        }
        Sample {
            image,
            mask,
            dataset_id: "d".into(),
            sample_id: "d_00000".into(),
        }
    }

    #[test]
    fn catalogue_has_thirty_tasks_and_seven_unseen() {
        assert_eq!(TaskType::ALL.len(), 30);
        let unseen: Vec<&str> = TaskType::ALL.iter().filter(|t| !t.default_seen()).map(|t| t.name()).collect();
        assert_eq!(
            unseen,
            ["semantic_hulls", "vertical_flip", "rotate45", "invert", "colorization", "denoising", "outpainting"]
        );
        let cats = |c| TaskType::ALL.iter().filter(|t| t.category() == c).count();
        assert_eq!(cats(TaskCategory::Semantic), 7);
        assert_eq!(cats(TaskCategory::Transformation), 15);
        assert_eq!(cats(TaskCategory::Generative), 8);
    }

    #[test]
    fn names_round_trip() {
        for t in TaskType::ALL {
            assert_eq!(t.name().parse::<TaskType>().unwrap(), t);
        }
    }

    #[test]
    fn colorization_needs_color() {
        let p = TaskParams::default();
        assert!(!task_applicability(TaskType::Colorization, &meta(true), &p));
        assert!(task_applicability(TaskType::Colorization, &meta(false), &p));
        assert!(task_applicability(TaskType::Segmentation, &meta(true), &p));
    }

    #[test]
    fn thirty_nine_datasets_yield_1134_visual_tasks() {
        // 36 gray datasets exclude colorization; 3 color datasets keep everything.
        let p = TaskParams::default();
        let metas: Vec<DatasetMeta> = (0..39).map(|i| meta(i < 36)).collect();
        let count: usize = metas
            .iter()
            .map(|m| TaskType::ALL.iter().filter(|&&t| task_applicability(t, m, &p)).count())
            .sum();
        assert_eq!(count, 1134);
    }

    #[test]
    fn grayscale_only_false_color_policy() {
        let p = TaskParams {
            false_color_grayscale_only: true,
            ..TaskParams::default()
        };
        assert!(!task_applicability(TaskType::FalseColorization, &meta(false), &p));
        assert!(task_applicability(TaskType::FalseColorization, &meta(true), &p));
    }

    #[test]
    fn every_task_synthesizes_valid_instances() {
        let s = sample();
        let m = meta(false);
        for task in TaskType::ALL {
            let mut rng = Rng::seed_from_u64(1);
            let t = synthesize_task_instance(&s, &m, task, &TaskParams::default(), &Palette::default(), &mut rng)
                .unwrap_or_else(|e| panic!("{task}: {e}"));
            assert_eq!(t.input.dims(), (32, 32));
            assert_eq!(t.output.dims(), (32, 32));
            assert!(t.input.is_valid() && t.output.is_valid(), "{task}");
        }
    }

    #[test]
    fn identity_and_rotation_are_definitional() {
        let s = sample();
        let m = meta(false);
        let mut rng = Rng::seed_from_u64(1);
        let (p, pal) = (TaskParams::default(), Palette::default());
        let id = synthesize_task_instance(&s, &m, TaskType::Identity, &p, &pal, &mut rng).unwrap();
        assert_eq!(id.input, id.output);
        let r = synthesize_task_instance(&s, &m, TaskType::Rotate90, &p, &pal, &mut rng).unwrap();
        assert_eq!(r.output, geometric_transform(&r.input, Geometric::Rotate(90.0)).unwrap());
        let b = synthesize_task_instance(&s, &m, TaskType::DecreaseBrightness, &p, &pal, &mut rng).unwrap();
        assert_eq!(b.output, b.input.map(|v| (0.5 * v).clamp(0.0, 1.0)));
    }

    #[test]
    fn inapplicable_task_is_an_error() {
        let mut rng = Rng::seed_from_u64(1);
        let err = synthesize_task_instance(
            &sample(),
            &meta(true),
            TaskType::Colorization,
            &TaskParams::default(),
            &Palette::default(),
            &mut rng,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NotApplicable { .. }));
    }
}
