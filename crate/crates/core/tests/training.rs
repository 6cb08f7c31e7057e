mod common;

use std::fs;
use std::sync::Arc;

use taco_core::corpus::{generate_synthetic_corpus, split_corpus, Split, DEFAULT_RATIOS};
use taco_core::desk::{desk_corpus_spec, desk_train_config};
use taco_core::model::Model;
use taco_core::sampling::{BatchSpec, CorpusIndex};
use taco_core::task_synth::{TaskParams, TaskType};
use taco_core::training::{train, LossMode, TrainConfig, Trainer, FINAL_CHECKPOINT, METRICS_LOG};
use taco_core::Error;

use common::{small_corpus, tiny_config};

fn tiny_setup(mode: LossMode) -> (TrainConfig, CorpusIndex) {
    let tasks = vec![TaskType::Identity, TaskType::Invert, TaskType::HorizontalFlip, TaskType::Segmentation];
    let corpus = Arc::new(small_corpus(3, 6, 32));
    let index = CorpusIndex::build(corpus, &tasks, TaskParams::default(), |_| true).unwrap();
    let mut config = TrainConfig {
        iterations: 6,
        batch: BatchSpec { base_pairs: 4, failure_count: 0 },
        failure_start: Some(3),
        failure_batch: BatchSpec { base_pairs: 4, failure_count: 2 },
        tasks,
        seed: 5,
        ..TrainConfig::default()
    }
    .with_loss_mode(mode);
    let channels = config.model.in_channels;
    config.model = tiny_config(channels, 16);
    (config, index)
}

#[test]
fn zero_iterations_saves_the_initialization() {
    let (mut config, index) = tiny_setup(LossMode::Taco);
    config.iterations = 0;
    let dir = tempfile::tempdir().unwrap();
    let out = train(config.clone(), &index, dir.path()).unwrap();
    let (saved, _) = Model::<f32>::load(&dir.path().join(FINAL_CHECKPOINT), Some(&config.model)).unwrap();
    let fresh = Trainer::new(config, &index).unwrap().into_model();
    for ((a, b), c) in saved.params.entries().iter().zip(fresh.params.entries()).zip(out.model.params.entries()) {
        assert_eq!(a.value, b.value, "{}", a.name);
        assert_eq!(a.value, c.value, "{}", a.name);
    }
    assert!(fs::read_to_string(dir.path().join(METRICS_LOG)).unwrap().is_empty());
}

#[test]
fn fixed_seed_reproduces_the_metrics_log() {
    for mode in [LossMode::Taco, LossMode::SimclrBaseline] {
        let (config, index) = tiny_setup(mode);
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        train(config.clone(), &index, a.path()).unwrap();
        train(config, &index, b.path()).unwrap();
        let log = fs::read_to_string(a.path().join(METRICS_LOG)).unwrap();
        assert_eq!(log.lines().count(), 6);
        assert_eq!(log, fs::read_to_string(b.path().join(METRICS_LOG)).unwrap());
        assert_eq!(fs::read(a.path().join(FINAL_CHECKPOINT)).unwrap(), fs::read(b.path().join(FINAL_CHECKPOINT)).unwrap());
    }
}

#[test]
fn failure_tasks_start_on_schedule() {
    let (config, index) = tiny_setup(LossMode::Taco);
    let mut trainer = Trainer::new(config, &index).unwrap();
    for i in 0..6 {
        let m = trainer.step().unwrap();
        assert_eq!(m.failure_active, i >= 3);
        assert_eq!(m.failure_instances, if i >= 3 { 2 } else { 0 });
        assert!(m.loss.is_finite());
    }
}

#[test]
fn intermediate_checkpoints_follow_the_interval() {
    let (mut config, index) = tiny_setup(LossMode::Taco);
    config.checkpoint_every = 2;
    let dir = tempfile::tempdir().unwrap();
    train(config, &index, dir.path()).unwrap();
    for done in [2, 4, 6] {
        assert!(dir.path().join(format!("checkpoint_{done:06}.ckpt")).exists());
    }
}

#[test]
fn mismatched_channels_are_a_config_error() {
    let (mut config, index) = tiny_setup(LossMode::Taco);
    config.model.in_channels = 3;
    assert!(matches!(Trainer::new(config, &index), Err(Error::Config(_))));
    assert!(matches!(TrainConfig::from_json(r#"{"lr": -1.0}"#), Err(Error::Config(_))));
    assert!(matches!(TrainConfig::from_json(r#"{"learning_rate": 0.1}"#), Err(Error::Config(_))));
}

#[test]
fn desk_loss_falls_over_five_hundred_iterations() {
    let corpus = Arc::new(generate_synthetic_corpus(&desk_corpus_spec(7)).unwrap());
    let splits = split_corpus(&corpus.samples, DEFAULT_RATIOS, 7).unwrap();
    let config = TrainConfig { iterations: 500, ..desk_train_config(11) };
    let seen: Vec<String> = corpus.datasets.iter().filter(|d| d.seen).map(|d| d.dataset_id.clone()).collect();
    let index = CorpusIndex::build(corpus.clone(), &config.tasks, config.task_params.clone(), |s| {
        splits.get(&s.sample_id) == Some(Split::Train) && seen.contains(&s.dataset_id)
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let losses = train(config, &index, dir.path()).unwrap().losses;
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let (first, last) = (mean(&losses[..50]), mean(&losses[450..]));
    assert!(last <= 0.7 * first, "first 50: {first}, last 50: {last}");
}
