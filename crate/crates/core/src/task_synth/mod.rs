//! Raster primitives and the thirty task constructors that turn a labeled
//! sample into an `(in, out)` task instance.

pub mod degrade;
pub mod geometry;
pub mod morphology;
pub mod palette;
pub mod photometric;
pub mod semantic;
mod tasks;

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

pub use degrade::{degrade, Degradation, Rect};
pub use geometry::{geometric_transform, Geometric};
pub use morphology::{distance_map, euclidean_distance, geodesic_distance, geodesic_map, semantic_hulls, skeleton};
pub use palette::Palette;
pub use photometric::{photometric_transform, Photometric};
pub use semantic::{noisy_segmentation, semantic_render, SemanticKind};
pub use tasks::{
    synthesize_task_instance, task_applicability, transformation_output, ClassLabel, TaskCategory, TaskInstance,
    TaskParams, TaskType, VisualTaskKey,
};

use crate::corpus::{Corpus, Sample};
use crate::error::{Error, Result};
use crate::seed;

/// Seed of the instance of `task` synthesized from `sample` under `base`.
pub fn instance_seed(base: u64, task: TaskType, sample_id: &str) -> u64 {
    seed::derive(base, &[seed::hash_str(task.name()), seed::hash_str(sample_id)])
}

/// One instance per applicable `(sample, task)` pair, in sample-major order.
/// Samples for which a task has nothing to render are skipped.
pub fn synthesize_for_samples(
    corpus: &Corpus,
    samples: &[&Sample],
    tasks: &[TaskType],
    params: &TaskParams,
    base_seed: u64,
) -> Result<Vec<TaskInstance>> {
    use rayon::prelude::*;
    let palette = Palette::default();
    let per_sample = samples
        .par_iter()
        .map(|s| {
            let meta = corpus
                .meta(&s.dataset_id)
                .ok_or_else(|| Error::Index(format!("dataset {} has no metadata", s.dataset_id)))?;
            let mut out = Vec::with_capacity(tasks.len());
            for &task in tasks {
                if !task_applicability(task, meta, params) {
                    continue;
                }
                let mut rng = seed::rng(instance_seed(base_seed, task, &s.sample_id), &[]);
                match synthesize_task_instance(s, meta, task, params, &palette, &mut rng) {
                    Ok(t) => out.push(t),
                    Err(e) if e.is_skip() => {}
                    Err(e) => return Err(e),
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_sample.into_iter().flatten().collect())
}

#[derive(Serialize)]
struct IndexLine<'a> {
    sample_id: &'a str,
    dataset_id: &'a str,
    task: &'a str,
    seed: u64,
    is_failure: bool,
}

/// Writes `<root>/<dataset>/<task>/<sample>_{in,out}.png` for each instance
/// plus a JSONL index at `<root>/index.jsonl`.
pub fn materialize_instances(instances: &[(TaskInstance, u64)], root: &Path) -> Result<()> {
    fs::create_dir_all(root)?;
    let mut index = fs::File::create(root.join("index.jsonl"))?;
    for (inst, seed) in instances {
        let dir = root.join(&inst.key.dataset_id).join(inst.key.task.name());
        fs::create_dir_all(&dir)?;
        inst.input.save_png(&dir.join(format!("{}_in.png", inst.source_sample_id)))?;
        inst.output.save_png(&dir.join(format!("{}_out.png", inst.source_sample_id)))?;
        let line = IndexLine {
            sample_id: &inst.source_sample_id,
            dataset_id: &inst.key.dataset_id,
            task: inst.key.task.name(),
            seed: *seed,
            is_failure: inst.is_failure,
        };
        writeln!(index, "{}", serde_json::to_string(&line)?)?;
    }
    Ok(())
}
