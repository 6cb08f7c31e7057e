//! The seen/unseen evaluation grid.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::EmbeddingRecord;

use super::knn::{macro_f1, Granularity, KnnIndex};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Filter {
    Seen,
    Unseen,
    All,
}

impl Filter {
    pub const ALL: [Filter; 3] = [Filter::Seen, Filter::Unseen, Filter::All];

    pub fn accepts(self, seen: bool) -> bool {
        match self {
            Filter::Seen => seen,
            Filter::Unseen => !seen,
            Filter::All => true,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Filter::Seen => "seen",
            Filter::Unseen => "unseen",
            Filter::All => "all",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Filter::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown filter {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub tasks: Filter,
    pub datasets: Filter,
    pub ks: Vec<usize>,
    pub granularities: Vec<Granularity>,
}

impl Scenario {
    pub fn new(tasks: Filter, datasets: Filter) -> Self {
        Self {
            tasks,
            datasets,
            ks: vec![1, 3, 5],
            granularities: Granularity::ALL.to_vec(),
        }
    }

    /// The nine task x dataset filter combinations with default k and granularities.
    pub fn grid() -> Vec<Scenario> {
        Filter::ALL
            .iter()
            .flat_map(|&t| Filter::ALL.iter().map(move |&d| Scenario::new(t, d)))
            .collect()
    }

    /// Parses `tasks:datasets`, e.g. `seen:unseen`.
    pub fn parse(s: &str) -> Result<Self> {
        let (t, d) = s
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("scenario {s:?} is not of the form tasks:datasets")))?;
        Ok(Scenario::new(Filter::parse(t)?, Filter::parse(d)?))
    }

    pub fn accepts(&self, r: &EmbeddingRecord) -> bool {
        !r.is_failure && self.tasks.accepts(r.seen_task) && self.datasets.accepts(r.seen_dataset)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ks.is_empty() || self.ks.contains(&0) {
            return Err(Error::Config("k values must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub embeddings: String,
    pub tasks: Filter,
    pub datasets: Filter,
    pub k: usize,
    pub granularity: Granularity,
    /// `None` when the cell has no queries or no reference after filtering.
    pub f1: Option<f64>,
    pub queries: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub cells: Vec<Cell>,
}

/// Classifies each query against the identically filtered reference set.
pub fn eval_scenarios(
    name: &str,
    queries: &[EmbeddingRecord],
    reference: &[EmbeddingRecord],
    scenarios: &[Scenario],
) -> Result<Report> {
    let mut report = Report::default();
    for sc in scenarios {
        sc.validate()?;
        let q: Vec<&EmbeddingRecord> = queries.iter().filter(|r| sc.accepts(r)).collect();
        let refs: Vec<EmbeddingRecord> = reference.iter().filter(|r| sc.accepts(r)).cloned().collect();
        let index = if q.is_empty() || refs.is_empty() { None } else { Some(KnnIndex::new(&refs)?) };
        for &g in &sc.granularities {
            let f1s = match &index {
                None => vec![None; sc.ks.len()],
                Some(index) => {
                    let truths: Vec<String> = q.iter().map(|r| g.label(r)).collect();
                    let mut per_k = vec![Vec::with_capacity(q.len()); sc.ks.len()];
                    for r in &q {
                        for (slot, label) in per_k.iter_mut().zip(index.classify(r, &sc.ks, g)?) {
                            slot.push(label);
                        }
                    }
                    per_k
                        .iter()
                        .map(|p| macro_f1(p, &truths).map(Some))
                        .collect::<Result<Vec<_>>>()?
                }
            };
            for (&k, f1) in sc.ks.iter().zip(f1s) {
                report.cells.push(Cell {
                    embeddings: name.to_string(),
                    tasks: sc.tasks,
                    datasets: sc.datasets,
                    k,
                    granularity: g,
                    f1,
                    queries: q.len(),
                });
            }
        }
    }
    Ok(report)
}

impl Report {
    pub fn merge(&mut self, other: Report) {
        self.cells.extend(other.cells);
    }

    pub fn get(&self, embeddings: &str, tasks: Filter, datasets: Filter, k: usize, g: Granularity) -> Option<&Cell> {
        self.cells
            .iter()
            .find(|c| c.embeddings == embeddings && c.tasks == tasks && c.datasets == datasets && c.k == k && c.granularity == g)
    }

    /// One block per granularity: rows are embedding sets and k, columns the
    /// task x dataset filter pairs. Absent cells print as `-`.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let mut names: Vec<&str> = Vec::new();
        let mut ks: Vec<usize> = Vec::new();
        let mut grans: Vec<Granularity> = Vec::new();
        let mut cols: Vec<(Filter, Filter)> = Vec::new();
        for c in &self.cells {
            if !names.contains(&c.embeddings.as_str()) {
                names.push(&c.embeddings);
            }
            if !ks.contains(&c.k) {
                ks.push(c.k);
            }
            if !grans.contains(&c.granularity) {
                grans.push(c.granularity);
            }
            if !cols.contains(&(c.tasks, c.datasets)) {
                cols.push((c.tasks, c.datasets));
            }
        }
        for g in grans {
            let _ = writeln!(out, "granularity: {}", g.as_str());
            let _ = write!(out, "{:<24}{:>4}", "embeddings", "k");
            for (t, d) in &cols {
                let _ = write!(out, "{:>16}", format!("{}/{}", t.as_str(), d.as_str()));
            }
            out.push('\n');
            for name in &names {
                for &k in &ks {
                    let _ = write!(out, "{name:<24}{k:>4}");
                    for &(t, d) in &cols {
                        let v = match self.get(name, t, d, k, g).and_then(|c| c.f1) {
                            Some(f) => format!("{:.1}", 100.0 * f),
                            None => "-".into(),
                        };
                        let _ = write!(out, "{v:>16}");
                    }
                    out.push('\n');
                }
            }
            out.push('\n');
        }
        out
    }
}
