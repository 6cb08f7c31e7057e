//! Input/output consistency probes: does swapping in a different sample's
//! output move an instance away from its task's mean representation?

use std::collections::BTreeMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Sample};
use crate::error::{Error, Result};
use crate::model::{encode_instances, Model, DEFAULT_EMBED_BATCH};
use crate::seed;
use crate::task_synth::{synthesize_for_samples, TaskInstance, TaskParams, TaskType, VisualTaskKey};

use super::similarity::cosine_similarity_f64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MismatchReport {
    pub probes: usize,
    /// Probes whose mismatched pair lies farther from the task mean than the matched pair.
    pub separated: usize,
    pub fraction: f64,
    pub mean_matched_distance: f64,
    pub mean_mismatched_distance: f64,
}

fn mean_of(vectors: &[&Vec<f32>]) -> Vec<f64> {
    let mut m = vec![0.0; vectors[0].len()];
    for v in vectors {
        for (a, &x) in m.iter_mut().zip(v.iter()) {
            *a += x as f64;
        }
    }
    m.iter_mut().for_each(|a| *a /= vectors.len() as f64);
    m
}

fn distance(v: &[f32], mean: &[f64]) -> Result<f64> {
    let v: Vec<f64> = v.iter().map(|&x| x as f64).collect();
    Ok(1.0 - cosine_similarity_f64(&v, mean)?)
}

/// Draws `probe_count` pairs `(in_j, out_l)`, `j != l`, within one visual
/// task of `samples`, and compares their cosine distance to the visual task's
/// mean with that of the matched `(in_j, out_j)`.
pub fn mismatch_separation(
    model: &Model<f32>,
    corpus: &Corpus,
    samples: &[&Sample],
    tasks: &[TaskType],
    params: &TaskParams,
    probe_count: usize,
    seed: u64,
) -> Result<MismatchReport> {
    if probe_count == 0 {
        return Err(Error::Config("mismatch probing needs at least one probe".into()));
    }
    let instances = synthesize_for_samples(corpus, samples, tasks, params, seed)?;
    let vectors = encode_instances(model, &instances, DEFAULT_EMBED_BATCH)?;
    let mut groups: BTreeMap<&VisualTaskKey, Vec<usize>> = BTreeMap::new();
    for (i, t) in instances.iter().enumerate() {
        groups.entry(&t.key).or_default().push(i);
    }
    let groups: Vec<Vec<usize>> = groups.into_values().filter(|g| g.len() >= 2).collect();
    if groups.is_empty() {
        return Err(Error::Contract("no visual task has two instances to mismatch".into()));
    }
    let means: Vec<Vec<f64>> = groups
        .iter()
        .map(|g| mean_of(&g.iter().map(|&i| &vectors[i]).collect::<Vec<_>>()))
        .collect();

    let mut rng = seed::rng(seed, &[seed::hash_str("mismatch-probes")]);
    let mut picks = Vec::with_capacity(probe_count);
    let mut mismatched = Vec::with_capacity(probe_count);
    for _ in 0..probe_count {
        let gi = rng.gen_range(0..groups.len());
        let g = &groups[gi];
        let j = g[rng.gen_range(0..g.len())];
        let l = loop {
            let l = g[rng.gen_range(0..g.len())];
            if l != j {
                break l;
            }
        };
        picks.push((gi, j));
        mismatched.push(TaskInstance {
            input: instances[j].input.clone(),
            output: instances[l].output.clone(),
            key: instances[j].key.clone(),
            is_failure: true,
            source_sample_id: format!("{}+{}", instances[j].source_sample_id, instances[l].source_sample_id),
        });
    }
    let mis_vectors = encode_instances(model, &mismatched, DEFAULT_EMBED_BATCH)?;

    let (mut separated, mut sum_match, mut sum_mis) = (0usize, 0.0, 0.0);
    for ((gi, j), mv) in picks.into_iter().zip(&mis_vectors) {
        let d_match = distance(&vectors[j], &means[gi])?;
        let d_mis = distance(mv, &means[gi])?;
        separated += usize::from(d_mis > d_match);
        sum_match += d_match;
        sum_mis += d_mis;
    }
    let n = probe_count as f64;
    Ok(MismatchReport {
        probes: probe_count,
        separated,
        fraction: separated as f64 / n,
        mean_matched_distance: sum_match / n,
        mean_mismatched_distance: sum_mis / n,
    })
}
