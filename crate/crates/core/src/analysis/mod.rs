//! Downstream analysis of embeddings: kNN evaluation over seen/unseen
//! scenarios, mean-task similarity matrices, adaptation sweeps and
//! embedding files.

pub mod io;
pub mod knn;
pub mod probes;
pub mod scenarios;
pub mod similarity;
pub mod sweep;

pub use io::{export_embeddings, import_embeddings, parse_embeddings};
pub use knn::{cosine_distance, knn_classify, macro_f1, Granularity, KnnIndex};
pub use probes::{mismatch_separation, MismatchReport};
pub use scenarios::{eval_scenarios, Cell, Filter, Report, Scenario};
pub use similarity::{group_mean, mean_task_embeddings, similarity_matrix, SimilarityMatrix};
pub use sweep::{adaptation_sweep, curves_to_csv, render_curves, SweepCurve, SweepKind, SweepPoint, SweepSpec};

use crate::corpus::{Corpus, Sample, Split, SplitAssignment};
use crate::error::Result;
use crate::model::{embed_instances, EmbeddingRecord, Model, RecordMeta, DEFAULT_EMBED_BATCH};
use crate::task_synth::{synthesize_for_samples, TaskParams, TaskType};

/// Samples of `split`, ordered by sample id.
pub fn split_samples<'a>(corpus: &'a Corpus, splits: &SplitAssignment, split: Split) -> Vec<&'a Sample> {
    let mut v: Vec<&Sample> = corpus.samples.iter().filter(|s| splits.get(&s.sample_id) == Some(split)).collect();
    v.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    v
}

/// Embeds every applicable `(sample, task)` instance of one split. Tasks in
/// `seen_tasks` and datasets flagged seen in the corpus are annotated as seen.
#[allow(clippy::too_many_arguments)]
pub fn embed_split(
    model: &Model<f32>,
    corpus: &Corpus,
    splits: &SplitAssignment,
    split: Split,
    tasks: &[TaskType],
    seen_tasks: &[TaskType],
    params: &TaskParams,
    seed: u64,
) -> Result<Vec<EmbeddingRecord>> {
    let samples = split_samples(corpus, splits, split);
    let instances = synthesize_for_samples(corpus, &samples, tasks, params, seed)?;
    embed_instances(model, &instances, DEFAULT_EMBED_BATCH, |t| RecordMeta {
        split,
        seen_task: seen_tasks.contains(&t.key.task),
        seen_dataset: corpus.meta(&t.key.dataset_id).is_some_and(|m| m.seen),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Split;
    use crate::model::EmbeddingRecord;
    use crate::task_synth::{TaskType, VisualTaskKey};

    fn rec(id: &str, task: TaskType, v: Vec<f32>) -> EmbeddingRecord {
        EmbeddingRecord {
            vector: v,
            key: VisualTaskKey::new(task, "d"),
            sample_id: id.into(),
            split: Split::Train,
            is_failure: false,
            seen_task: true,
            seen_dataset: true,
        }
    }

    #[test]
    fn duplicate_vector_wins_at_k1() {
        let reference = vec![rec("a", TaskType::Invert, vec![1.0, 2.0]), rec("b", TaskType::Identity, vec![2.0, -1.0])];
        let q = rec("q", TaskType::Identity, vec![1.0, 2.0]);
        assert_eq!(knn_classify(&q, &reference, 1, Granularity::Task).unwrap(), "invert");
    }

    #[test]
    fn majority_of_three() {
        let reference = vec![
            rec("a", TaskType::Invert, vec![1.0, 0.1]),
            rec("b", TaskType::Invert, vec![1.0, 0.3]),
            rec("c", TaskType::Identity, vec![1.0, 0.0]),
            rec("d", TaskType::Identity, vec![-1.0, 0.0]),
        ];
        let q = rec("q", TaskType::Identity, vec![1.0, 0.05]);
        assert_eq!(knn_classify(&q, &reference, 3, Granularity::Task).unwrap(), "invert");
    }

    #[test]
    fn tie_goes_to_smaller_summed_distance() {
        let reference = vec![
            rec("a", TaskType::Invert, vec![1.0, 0.0]),
            rec("b", TaskType::Identity, vec![1.0, 0.5]),
        ];
        let q = rec("q", TaskType::Identity, vec![1.0, 0.01]);
        assert_eq!(knn_classify(&q, &reference, 2, Granularity::Task).unwrap(), "invert");
    }

    #[test]
    fn query_in_reference_and_zero_vectors_are_rejected() {
        let reference = vec![rec("a", TaskType::Invert, vec![1.0, 0.0])];
        assert!(matches!(
            knn_classify(&reference[0], &reference, 1, Granularity::Task),
            Err(crate::Error::Contract(_))
        ));
        let zero = rec("z", TaskType::Invert, vec![0.0, 0.0]);
        assert!(matches!(
            knn_classify(&zero, &reference, 1, Granularity::Task),
            Err(crate::Error::Numeric(_))
        ));
    }

    #[test]
    fn macro_f1_examples() {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        assert_eq!(macro_f1(&s(&["A", "B"]), &s(&["A", "B"])).unwrap(), 1.0);
        let f = macro_f1(&s(&["A", "A", "A", "A"]), &s(&["A", "A", "B", "B"])).unwrap();
        assert!((f - 1.0 / 3.0).abs() < 1e-12);
        assert!(matches!(macro_f1(&s(&["A"]), &s(&["A", "B"])), Err(crate::Error::Contract(_))));
    }

    #[test]
    fn similarity_of_identical_and_orthogonal_means() {
        let same = vec![("a".to_string(), vec![1.0, 1.0]), ("b".to_string(), vec![2.0, 2.0])];
        let m = similarity_matrix(&same).unwrap();
        assert!(m.raw.iter().flatten().all(|&v| (v - 1.0).abs() < 1e-12));
        let ortho = vec![("a".to_string(), vec![1.0, 0.0]), ("b".to_string(), vec![0.0, 3.0])];
        let m = similarity_matrix(&ortho).unwrap();
        assert_eq!(m.raw, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let zero = vec![("a".to_string(), vec![0.0, 0.0])];
        assert!(matches!(similarity_matrix(&zero), Err(crate::Error::Numeric(_))));
    }

    #[test]
    fn normalized_rows_span_unit_interval_off_diagonal() {
        let means = vec![
            ("a".to_string(), vec![1.0, 0.0]),
            ("b".to_string(), vec![1.0, 1.0]),
            ("c".to_string(), vec![0.0, 1.0]),
        ];
        let m = similarity_matrix(&means).unwrap();
        assert_eq!(m.normalized[0], vec![1.0, 1.0, 0.0]);
        assert_eq!(m.normalized[1][1], 1.0);
    }

    #[test]
    fn means_of_single_and_opposite_vectors() {
        let recs = vec![rec("a", TaskType::Invert, vec![1.0, -2.0]), rec("b", TaskType::Identity, vec![3.0, 4.0]), rec("c", TaskType::Identity, vec![-3.0, -4.0])];
        let m = mean_task_embeddings(&recs, Granularity::Task).unwrap();
        assert_eq!(m["invert"], vec![1.0, -2.0]);
        assert_eq!(m["identity"], vec![0.0, 0.0]);
    }

    #[test]
    fn single_task_scenario_is_perfect_and_absent_cells_are_marked() {
        let reference: Vec<_> = (0..4).map(|i| rec(&format!("r{i}"), TaskType::Invert, vec![1.0, i as f32])).collect();
        let queries: Vec<_> = (0..3).map(|i| rec(&format!("q{i}"), TaskType::Invert, vec![i as f32, 1.0])).collect();
        let report = eval_scenarios("x", &queries, &reference, &Scenario::grid()).unwrap();
        assert_eq!(report.cells.len(), 9 * 3 * 3);
        let c = report.get("x", Filter::Seen, Filter::Seen, 5, Granularity::VisualTask).unwrap();
        assert_eq!(c.f1, Some(1.0));
        let c = report.get("x", Filter::Unseen, Filter::Seen, 1, Granularity::Task).unwrap();
        assert_eq!(c.f1, None);
        assert!(report.render_table().contains("seen/seen"));
    }

    #[test]
    fn embedding_file_round_trip_and_bad_row() {
        let recs = vec![
            rec("a", TaskType::Invert, vec![0.1, -3.5e-8]),
            EmbeddingRecord {
                split: Split::Test,
                is_failure: true,
                seen_dataset: false,
                ..rec("b", TaskType::Rotate45, vec![f32::MAX, 1.0 / 3.0])
            },
        ];
        let text = io::format_embeddings(&recs, 2).unwrap();
        assert!(text.starts_with("#taco-embeddings v1 dim=2\n"));
        let (dim, back) = parse_embeddings(&text).unwrap();
        assert_eq!((dim, back), (2, recs));
        let bad = format!("{text}c,d,invert,train,true,true,false,1.0\n");
        match parse_embeddings(&bad) {
            Err(crate::Error::Import { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
        assert_eq!(parse_embeddings("#taco-embeddings v1 dim=4\n").unwrap().1, vec![]);
    }

    #[test]
    fn default_grids() {
        let b = SweepKind::Brightness.default_grid();
        assert_eq!(b.len(), 16);
        assert_eq!((b[0], b[15]), (0.5, 2.0));
        assert_eq!(SweepKind::Rotation.default_grid().len(), 25);
        let n = SweepKind::NoisySegmentation.default_grid();
        assert_eq!(n.len(), 15);
        assert!((n[5] - 0.1).abs() < 1e-12 && (n[6] - 0.2).abs() < 1e-12);
    }
}
