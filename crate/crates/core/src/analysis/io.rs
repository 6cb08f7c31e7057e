//! Text embedding files.
//!
//! ```text
//! #taco-embeddings v1 dim=D
//! sample_id,dataset_id,task_name,split,seen_task,seen_dataset,is_failure,v1,...,vD
//! ```
//!
//! Flags are `true`/`false`. Reals use the shortest decimal form that parses
//! back to the same `f32`, so round trips are exact.

use std::fmt::Write as _;
use std::path::Path;

use crate::corpus::Split;
use crate::error::{Error, Result};
use crate::model::EmbeddingRecord;
use crate::task_synth::{TaskType, VisualTaskKey};

pub const HEADER_PREFIX: &str = "#taco-embeddings v1 dim=";

fn check_field(value: &str, what: &str) -> Result<()> {
    if value.is_empty() || value.contains([',', '\n', '\r']) {
        return Err(Error::Validation(format!("{what} {value:?} cannot be written to an embedding file")));
    }
    Ok(())
}

pub fn format_embeddings(records: &[EmbeddingRecord], dim: usize) -> Result<String> {
    let mut out = format!("{HEADER_PREFIX}{dim}\n");
    for r in records {
        if r.vector.len() != dim {
            return Err(Error::Contract(format!(
                "record {} has {} values, file dimension is {dim}",
                r.sample_id,
                r.vector.len()
            )));
        }
        check_field(&r.sample_id, "sample id")?;
        check_field(&r.key.dataset_id, "dataset id")?;
        let _ = write!(
            out,
            "{},{},{},{},{},{},{}",
            r.sample_id,
            r.key.dataset_id,
            r.key.task.name(),
            r.split.as_str(),
            r.seen_task,
            r.seen_dataset,
            r.is_failure
        );
        for v in &r.vector {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    Ok(out)
}

/// Writes `records`; the dimension is taken from the first record, or `dim` if empty.
pub fn export_embeddings(records: &[EmbeddingRecord], dim: usize, path: &Path) -> Result<()> {
    let dim = records.first().map_or(dim, |r| r.vector.len());
    std::fs::write(path, format_embeddings(records, dim)?)?;
    Ok(())
}

fn parse_flag(s: &str, line: usize) -> Result<bool> {
    match s {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(Error::Import {
            line,
            reason: format!("expected true or false, found {other:?}"),
        }),
    }
}

/// Parses an embedding file; returns the declared dimension and the records.
pub fn parse_embeddings(text: &str) -> Result<(usize, Vec<EmbeddingRecord>)> {
    let mut lines = text.lines().enumerate();
    let header = lines.next().map(|(_, l)| l).unwrap_or_default();
    let dim: usize = header
        .strip_prefix(HEADER_PREFIX)
        .and_then(|d| d.trim().parse().ok())
        .ok_or_else(|| Error::Import {
            line: 1,
            reason: format!("expected header `{HEADER_PREFIX}<D>`"),
        })?;
    let mut records = Vec::new();
    for (i, line) in lines {
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let err = |reason: String| Error::Import { line: n, reason };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 + dim {
            return Err(err(format!("expected {} fields, found {}", 7 + dim, fields.len())));
        }
        let task: TaskType = fields[2].parse().map_err(|_| err(format!("unknown task {:?}", fields[2])))?;
        let split = Split::parse(fields[3]).ok_or_else(|| err(format!("unknown split {:?}", fields[3])))?;
        let vector = fields[7..]
            .iter()
            .map(|s| {
                s.trim()
                    .parse::<f32>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| err(format!("invalid value {s:?}")))
            })
            .collect::<Result<Vec<f32>>>()?;
        records.push(EmbeddingRecord {
            vector,
            key: VisualTaskKey::new(task, fields[1]),
            sample_id: fields[0].to_string(),
            split,
            is_failure: parse_flag(fields[6], n)?,
            seen_task: parse_flag(fields[4], n)?,
            seen_dataset: parse_flag(fields[5], n)?,
        });
    }
    Ok((dim, records))
}

pub fn import_embeddings(path: &Path) -> Result<Vec<EmbeddingRecord>> {
    Ok(parse_embeddings(&std::fs::read_to_string(path)?)?.1)
}
