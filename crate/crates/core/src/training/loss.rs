//! Contrastive objectives over rows of `z` with analytic gradients.
//!
//! For an anchor `i` with positives `P_i`, the term is
//! `-(1/|P_i|) * sum_{p in P_i} s_ip / tau + log sum_{a != i} exp(s_ia / tau)`
//! where `s` are inner products of rows. The single-positive objective is the
//! special case `P_i = {pair_of[i]}`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Sum over contributing anchors divided by their count.
    #[default]
    Mean,
    /// Plain sum over anchors.
    Sum,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossReport {
    pub loss: f64,
    /// Unscaled per-anchor terms; zero for anchors without positives.
    pub per_anchor: Vec<f64>,
    /// `|P_i|` -> number of anchors with that many positives.
    pub positive_histogram: BTreeMap<usize, usize>,
}

fn check_rows(z: &[f64], n: usize, dim: usize, tau: f64) -> Result<()> {
    if n < 2 {
        return Err(Error::Contract(format!("contrastive loss needs at least 2 rows, got {n}")));
    }
    if z.len() != n * dim {
        return Err(Error::Contract(format!("{} values do not form {n} rows of {dim}", z.len())));
    }
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::Contract(format!("temperature must be positive, got {tau}")));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite value in contrastive loss input".into()));
    }
    Ok(())
}

fn contrastive(
    z: &[f64],
    n: usize,
    dim: usize,
    positives: &[Vec<usize>],
    tau: f64,
    agg: Aggregation,
) -> Result<(LossReport, Vec<f64>)> {
    let row = |i: usize| &z[i * dim..(i + 1) * dim];
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let contributing = positives.iter().filter(|p| !p.is_empty()).count();
    if contributing == 0 {
        return Err(Error::Contract("no anchor in the batch has a positive".into()));
    }
    let scale = match agg {
        Aggregation::Mean => 1.0 / contributing as f64,
        Aggregation::Sum => 1.0,
    };
    let mut per_anchor = vec![0.0; n];
    let mut grad = vec![0.0; n * dim];
    let mut histogram = BTreeMap::new();
    let mut logits = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let pos = &positives[i];
        *histogram.entry(pos.len()).or_insert(0) += 1;
        if pos.is_empty() {
            continue;
        }
        let zi = row(i);
        let mut max = f64::NEG_INFINITY;
        for a in (0..n).filter(|&a| a != i) {
            logits[a] = dot(zi, row(a)) / tau;
            max = max.max(logits[a]);
        }
        let denom: f64 = (0..n).filter(|&a| a != i).map(|a| (logits[a] - max).exp()).sum();
        let lse = max + denom.ln();
        let inv_p = 1.0 / pos.len() as f64;
        let mean_pos: f64 = pos.iter().map(|&p| logits[p]).sum::<f64>() * inv_p;
        per_anchor[i] = lse - mean_pos;

        // d term / d logit_a = softmax_a - [a in P_i] / |P_i|.
        weights.fill(0.0);
        for a in (0..n).filter(|&a| a != i) {
            weights[a] = (logits[a] - lse).exp();
        }
        for &p in pos {
            weights[p] -= inv_p;
        }
        let g = scale / tau;
        for a in (0..n).filter(|&a| a != i) {
            let w = weights[a] * g;
            if w == 0.0 {
                continue;
            }
            let za = row(a);
            for d in 0..dim {
                grad[i * dim + d] += w * za[d];
                grad[a * dim + d] += w * zi[d];
            }
        }
    }
    let loss = per_anchor.iter().sum::<f64>() * scale;
    if !loss.is_finite() {
        return Err(Error::Numeric("contrastive loss is not finite".into()));
    }
    Ok((
        LossReport {
            loss,
            per_anchor,
            positive_histogram: histogram,
        },
        grad,
    ))
}

/// Single-positive objective: anchor `i` is pulled towards row `pair_of[i]`.
pub fn self_contrastive_loss(
    z: &[f64],
    dim: usize,
    pair_of: &[usize],
    tau: f64,
    agg: Aggregation,
) -> Result<(LossReport, Vec<f64>)> {
    let n = pair_of.len();
    check_rows(z, n, dim, tau)?;
    let positives = pair_of
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            if p == i || p >= n {
                Err(Error::Contract(format!("anchor {i} has no valid positive (got {p})")))
            } else {
                Ok(vec![p])
            }
        })
        .collect::<Result<Vec<_>>>()?;
    contrastive(z, n, dim, &positives, tau, agg)
}

/// Supervised objective: positives of `i` are all other rows with the same
/// label. Anchors whose class has no other member contribute nothing.
pub fn sup_contrastive_loss(
    z: &[f64],
    dim: usize,
    labels: &[usize],
    tau: f64,
    agg: Aggregation,
) -> Result<(LossReport, Vec<f64>)> {
    let n = labels.len();
    check_rows(z, n, dim, tau)?;
    let positives: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&p| p != i && labels[p] == labels[i]).collect())
        .collect();
    contrastive(z, n, dim, &positives, tau, agg)
}
