//! Mean representations and their cosine similarity matrices.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::EmbeddingRecord;

use super::knn::Granularity;

/// Arithmetic mean of the raw vectors per label.
pub fn mean_task_embeddings(records: &[EmbeddingRecord], granularity: Granularity) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut sums: BTreeMap<String, (Vec<f64>, usize)> = BTreeMap::new();
    for r in records {
        let e = sums
            .entry(granularity.label(r))
            .or_insert_with(|| (vec![0.0; r.vector.len()], 0));
        if e.0.len() != r.vector.len() {
            return Err(Error::Contract("embeddings of different dimensions".into()));
        }
        for (s, &v) in e.0.iter_mut().zip(&r.vector) {
            *s += v as f64;
        }
        e.1 += 1;
    }
    Ok(sums
        .into_iter()
        .map(|(k, (s, n))| (k, s.into_iter().map(|v| v / n as f64).collect()))
        .collect())
}

/// Mean vector of the records matching `keep`; errors on an empty group.
pub fn group_mean(records: &[EmbeddingRecord], keep: impl Fn(&EmbeddingRecord) -> bool) -> Result<Vec<f64>> {
    let mut sum: Option<Vec<f64>> = None;
    let mut n = 0usize;
    for r in records.iter().filter(|r| keep(r)) {
        let s = sum.get_or_insert_with(|| vec![0.0; r.vector.len()]);
        for (a, &v) in s.iter_mut().zip(&r.vector) {
            *a += v as f64;
        }
        n += 1;
    }
    let sum = sum.ok_or_else(|| Error::Contract("cannot average an empty group of embeddings".into()))?;
    Ok(sum.into_iter().map(|v| v / n as f64).collect())
}

pub fn cosine_similarity_f64(u: &[f64], v: &[f64]) -> Result<f64> {
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::Numeric("cosine similarity of a zero-norm vector".into()));
    }
    Ok(u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() / (nu * nv))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub labels: Vec<String>,
    pub raw: Vec<Vec<f64>>,
    /// Row-wise min-max over off-diagonal entries; diagonal fixed to 1.
    pub normalized: Vec<Vec<f64>>,
}

/// Cosine similarities between `means`, in the given order.
pub fn similarity_matrix(means: &[(String, Vec<f64>)]) -> Result<SimilarityMatrix> {
    let n = means.len();
    let mut raw = vec![vec![0.0; n]; n];
    for i in 0..n {
        raw[i][i] = cosine_similarity_f64(&means[i].1, &means[i].1)?;
        for j in i + 1..n {
            let s = cosine_similarity_f64(&means[i].1, &means[j].1)?;
            raw[i][j] = s;
            raw[j][i] = s;
        }
    }
    let normalized = raw
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let off = row.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &v)| v);
            let (lo, hi) = off.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
            row.iter()
                .enumerate()
                .map(|(j, &v)| {
                    if j == i {
                        1.0
                    } else if hi > lo {
                        (v - lo) / (hi - lo)
                    } else {
                        1.0
                    }
                })
                .collect()
        })
        .collect();
    Ok(SimilarityMatrix {
        labels: means.iter().map(|(l, _)| l.clone()).collect(),
        raw,
        normalized,
    })
}

impl SimilarityMatrix {
    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// CSV with a header row of labels; `normalized` picks the variant.
    pub fn to_csv(&self, normalized: bool) -> String {
        let m = if normalized { &self.normalized } else { &self.raw };
        let mut out = String::from("task");
        for l in &self.labels {
            let _ = write!(out, ",{l}");
        }
        out.push('\n');
        for (l, row) in self.labels.iter().zip(m) {
            out.push_str(l);
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}
