//! Cosine k-nearest-neighbor classification and macro-F1.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::EmbeddingRecord;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    VisualTask,
    Task,
    Dataset,
}

impl Granularity {
    pub const ALL: [Granularity; 3] = [Granularity::VisualTask, Granularity::Task, Granularity::Dataset];

    pub fn as_str(self) -> &'static str {
        match self {
            Granularity::VisualTask => "visual_task",
            Granularity::Task => "task",
            Granularity::Dataset => "dataset",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Granularity::ALL
            .into_iter()
            .find(|g| g.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown granularity {s:?}")))
    }

    pub fn label(self, r: &EmbeddingRecord) -> String {
        match self {
            Granularity::VisualTask => r.key.to_string(),
            Granularity::Task => r.key.task.name().to_string(),
            Granularity::Dataset => r.key.dataset_id.clone(),
        }
    }
}

pub fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
}

/// `1 - <u, v> / (|u| |v|)`.
pub fn cosine_distance(u: &[f32], v: &[f32]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Contract(format!("vectors of length {} and {}", u.len(), v.len())));
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::Numeric("cosine distance of a zero-norm vector".into()));
    }
    let dot: f64 = u.iter().zip(v).map(|(&a, &b)| a as f64 * b as f64).sum();
    Ok(1.0 - dot / (nu * nv))
}

fn same_item(a: &EmbeddingRecord, b: &EmbeddingRecord) -> bool {
    a.sample_id == b.sample_id && a.key == b.key && a.is_failure == b.is_failure
}

/// Unit vectors of a reference set, for repeated queries.
pub struct KnnIndex<'a> {
    records: &'a [EmbeddingRecord],
    units: Vec<Vec<f64>>,
    dim: usize,
}

impl<'a> KnnIndex<'a> {
    pub fn new(records: &'a [EmbeddingRecord]) -> Result<Self> {
        let Some(first) = records.first() else {
            return Err(Error::Contract("kNN reference set is empty".into()));
        };
        let dim = first.vector.len();
        let units = records
            .iter()
            .map(|r| unit(&r.vector, dim))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { records, units, dim })
    }

    /// Predicted labels for each `k`, at one granularity.
    pub fn classify(&self, query: &EmbeddingRecord, ks: &[usize], granularity: Granularity) -> Result<Vec<String>> {
        let q = unit(&query.vector, self.dim)?;
        let mut scored = Vec::with_capacity(self.records.len());
        for (r, u) in self.records.iter().zip(&self.units) {
            if same_item(query, r) {
                return Err(Error::Contract(format!(
                    "query {} ({}) is part of the reference set",
                    query.sample_id, query.key
                )));
            }
            let d = 1.0 - q.iter().zip(u).map(|(a, b)| a * b).sum::<f64>();
            scored.push((d, granularity.label(r)));
        }
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
        ks.iter()
            .map(|&k| {
                if k == 0 {
                    return Err(Error::Contract("k must be at least 1".into()));
                }
                Ok(vote(&scored[..k.min(scored.len())]))
            })
            .collect()
    }
}

fn unit(v: &[f32], dim: usize) -> Result<Vec<f64>> {
    if v.len() != dim {
        return Err(Error::Contract(format!("embedding of length {} in a set of dimension {dim}", v.len())));
    }
    let n = norm(v);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::Numeric("embedding vector has zero or non-finite norm".into()));
    }
    Ok(v.iter().map(|&x| x as f64 / n).collect())
}

/// Majority label; ties go to the smaller summed distance, then the smaller label.
fn vote(neighbors: &[(f64, String)]) -> String {
    let mut tally: BTreeMap<&str, (usize, f64)> = BTreeMap::new();
    for (d, l) in neighbors {
        let e = tally.entry(l.as_str()).or_insert((0, 0.0));
        e.0 += 1;
        e.1 += d;
    }
    tally
        .into_iter()
        .min_by(|a, b| b.1 .0.cmp(&a.1 .0).then(a.1 .1.total_cmp(&b.1 .1)).then(a.0.cmp(b.0)))
        .map(|(l, _)| l.to_string())
        .expect("at least one neighbor")
}

pub fn knn_classify(
    query: &EmbeddingRecord,
    reference: &[EmbeddingRecord],
    k: usize,
    granularity: Granularity,
) -> Result<String> {
    Ok(KnnIndex::new(reference)?.classify(query, &[k], granularity)?.remove(0))
}

/// Unweighted mean of per-class F1 over the classes present in `truths`.
pub fn macro_f1(predictions: &[String], truths: &[String]) -> Result<f64> {
    if predictions.len() != truths.len() {
        return Err(Error::Contract(format!(
            "{} predictions for {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    if truths.is_empty() {
        return Err(Error::Contract("macro F1 of an empty set".into()));
    }
    let classes: BTreeSet<&String> = truths.iter().collect();
    let mut total = 0.0;
    for c in &classes {
        let tp = predictions.iter().zip(truths).filter(|(p, t)| p == c && t == c).count() as f64;
        let predicted = predictions.iter().filter(|p| p == c).count() as f64;
        let actual = truths.iter().filter(|t| t == c).count() as f64;
        let (precision, recall) = (if predicted > 0.0 { tp / predicted } else { 0.0 }, tp / actual);
        if precision + recall > 0.0 {
            total += 2.0 * precision * recall / (precision + recall);
        }
    }
    Ok(total / classes.len() as f64)
}
