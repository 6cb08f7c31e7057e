//! The small reference setup used for end-to-end runs on a workstation:
//! four seen datasets plus one held-out dataset of 64x64 images, six
//! training tasks and one held-out task.

use crate::corpus::{CorpusSpec, DatasetSpec};
use crate::task_synth::TaskType;
use crate::training::TrainConfig;

pub const DESK_SIDE: usize = 64;
pub const DESK_SAMPLES: usize = 200;

pub const DESK_SEEN_TASKS: [TaskType; 6] = [
    TaskType::Identity,
    TaskType::DecreaseBrightness,
    TaskType::Segmentation,
    TaskType::Rotate90,
    TaskType::HorizontalFlip,
    TaskType::Inpainting,
];

pub const DESK_UNSEEN_TASK: TaskType = TaskType::Denoising;

/// Seen and unseen desk tasks.
pub fn desk_tasks() -> Vec<TaskType> {
    DESK_SEEN_TASKS.iter().copied().chain([DESK_UNSEEN_TASK]).collect()
}

pub fn desk_corpus_spec(seed: u64) -> CorpusSpec {
    let datasets = (0..5)
        .map(|i| DatasetSpec {
            grayscale: i % 2 == 1,
            num_classes: 2 + (i % 2) as u8,
            seen: i < 4,
            modality_tag: if i % 2 == 1 { "gray".into() } else { "color".into() },
            ..DatasetSpec::new(format!("desk{i}"), DESK_SIDE, DESK_SAMPLES)
        })
        .collect();
    CorpusSpec { datasets, seed }
}

/// Default training configuration restricted to the desk tasks.
pub fn desk_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        tasks: DESK_SEEN_TASKS.to_vec(),
        ..TrainConfig::default()
    }
}
