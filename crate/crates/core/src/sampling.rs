//! Balanced sampling over visual tasks, task-augmented batches and failure
//! task injection.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng as _;

use crate::corpus::{Corpus, Sample};
use crate::error::{Error, Result};
use crate::seed::{self, Rng};
use crate::task_synth::{synthesize_task_instance, task_applicability, Palette, TaskInstance, TaskParams, TaskType, VisualTaskKey};

pub const MAX_RETRIES: usize = 100;

/// Visual tasks and the corpus samples they can be synthesized from.
#[derive(Clone, Debug)]
pub struct CorpusIndex {
    corpus: Arc<Corpus>,
    params: TaskParams,
    palette: Palette,
    /// `(key, positions into corpus.samples)`, sorted by key.
    tasks: Vec<(VisualTaskKey, Vec<usize>)>,
}

impl CorpusIndex {
    /// Indexes every applicable `(task, dataset)` pair over the samples accepted by `keep`.
    pub fn build(
        corpus: Arc<Corpus>,
        tasks: &[TaskType],
        params: TaskParams,
        keep: impl Fn(&Sample) -> bool,
    ) -> Result<Self> {
        let mut by_dataset: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, s) in corpus.samples.iter().enumerate() {
            if keep(s) {
                by_dataset.entry(s.dataset_id.as_str()).or_default().push(i);
            }
        }
        let mut entries = Vec::new();
        for meta in &corpus.datasets {
            let Some(samples) = by_dataset.get(meta.dataset_id.as_str()) else {
                continue;
            };
            for &task in tasks {
                if task_applicability(task, meta, &params) {
                    entries.push((VisualTaskKey::new(task, &meta.dataset_id), samples.clone()));
                }
            }
        }
        Self::from_entries(corpus, params, entries)
    }

    pub fn from_entries(corpus: Arc<Corpus>, params: TaskParams, mut tasks: Vec<(VisualTaskKey, Vec<usize>)>) -> Result<Self> {
        if tasks.is_empty() {
            return Err(Error::Index("no visual tasks to index".into()));
        }
        tasks.sort_by(|a, b| a.0.cmp(&b.0));
        for (key, samples) in &tasks {
            if samples.len() < 2 {
                return Err(Error::Index(format!(
                    "visual task {key} has {} instance(s); at least 2 are needed",
                    samples.len()
                )));
            }
            if let Some(&bad) = samples.iter().find(|&&i| i >= corpus.samples.len()) {
                return Err(Error::Index(format!("visual task {key} refers to missing sample {bad}")));
            }
        }
        Ok(Self {
            corpus,
            params,
            palette: Palette::default(),
            tasks,
        })
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    pub fn params(&self) -> &TaskParams {
        &self.params
    }

    pub fn palette(&self) -> &Palette {
        &self.palette
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &VisualTaskKey> {
        self.tasks.iter().map(|(k, _)| k)
    }

    pub fn task_size(&self, task: usize) -> usize {
        self.tasks[task].1.len()
    }

    pub fn key(&self, task: usize) -> &VisualTaskKey {
        &self.tasks[task].0
    }

    /// Synthesizes the instance of visual task `task` from its `member`-th sample.
    pub fn synthesize(&self, task: usize, member: usize, seed: u64) -> Result<TaskInstance> {
        let (key, samples) = &self.tasks[task];
        let sample = &self.corpus.samples[samples[member]];
        let meta = self
            .corpus
            .meta(&sample.dataset_id)
            .ok_or_else(|| Error::Index(format!("dataset {} has no metadata", sample.dataset_id)))?;
        let mut rng = seed::rng(seed, &[]);
        synthesize_task_instance(sample, meta, key.task, &self.params, &self.palette, &mut rng)
    }
}

/// Per-instance multinomial with weight `1 / |T_i|`, so each visual task is
/// drawn with equal probability regardless of its size.
#[derive(Clone, Debug)]
pub struct BalancedSampler {
    /// Flattened `(task, member)` of every indexed instance.
    instances: Vec<(usize, usize)>,
    dist: WeightedIndex<f64>,
}

impl BalancedSampler {
    pub fn new(index: &CorpusIndex) -> Result<Self> {
        let mut instances = Vec::new();
        let mut weights = Vec::new();
        for (t, (_, samples)) in index.tasks.iter().enumerate() {
            let w = 1.0 / samples.len() as f64;
            for m in 0..samples.len() {
                instances.push((t, m));
                weights.push(w);
            }
        }
        let dist = WeightedIndex::new(&weights).map_err(|e| Error::Index(format!("cannot build sampler: {e}")))?;
        Ok(Self { instances, dist })
    }

    /// Draws one `(task, member)` instance.
    pub fn draw(&self, rng: &mut Rng) -> (usize, usize) {
        self.instances[self.dist.sample(rng)]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchSpec {
    pub base_pairs: usize,
    pub failure_count: usize,
}

impl BatchSpec {
    pub const PLAIN: BatchSpec = BatchSpec {
        base_pairs: 20,
        failure_count: 0,
    };
    pub const WITH_FAILURES: BatchSpec = BatchSpec {
        base_pairs: 15,
        failure_count: 10,
    };

    pub fn total(&self) -> usize {
        2 * self.base_pairs + self.failure_count
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_pairs == 0 {
            return Err(Error::Config("a batch needs at least one visual task pair".into()));
        }
        Ok(())
    }
}

/// Draws `spec.base_pairs` visual-task instances, each with a second instance
/// of the same task from a different sample, then appends failure instances.
pub fn draw_batch(index: &CorpusIndex, sampler: &BalancedSampler, spec: BatchSpec, rng: &mut Rng) -> Result<Vec<TaskInstance>> {
    spec.validate()?;
    // Plan every draw sequentially so the batch is fixed by `rng` alone,
    // then synthesize in parallel.
    let mut batch = Vec::with_capacity(spec.total());
    for _ in 0..spec.base_pairs {
        let mut retries = 0;
        loop {
            let (task, j) = sampler.draw(rng);
            let n = index.task_size(task);
            let mut k = rng.gen_range(0..n - 1);
            if k >= j {
                k += 1;
            }
            let seeds = (rng.gen::<u64>(), rng.gen::<u64>());
            let pair = rayon::join(|| index.synthesize(task, j, seeds.0), || index.synthesize(task, k, seeds.1));
            match pair {
                (Ok(a), Ok(b)) => {
                    batch.push(a);
                    batch.push(b);
                    break;
                }
                (Err(e), _) | (_, Err(e)) if e.is_skip() => {
                    retries += 1;
                    if retries > MAX_RETRIES {
                        return Err(Error::Sampling(format!(
                            "gave up after {MAX_RETRIES} redraws of skipped instances (last task {})",
                            index.key(task)
                        )));
                    }
                }
                (Err(e), _) | (_, Err(e)) => return Err(e),
            }
        }
    }
    inject_failure_tasks(&mut batch, spec.failure_count, rng)?;
    Ok(batch)
}

/// Appends `count` mismatched pairs `(in_j, out_l)` built from two instances
/// of one task present in the batch; all carry the failure label.
pub fn inject_failure_tasks(batch: &mut Vec<TaskInstance>, count: usize, rng: &mut Rng) -> Result<()> {
    if count == 0 {
        return Ok(());
    }
    let mut groups: BTreeMap<&VisualTaskKey, Vec<usize>> = BTreeMap::new();
    for (i, t) in batch.iter().enumerate() {
        if !t.is_failure {
            groups.entry(&t.key).or_default().push(i);
        }
    }
    let eligible: Vec<Vec<usize>> = groups
        .into_values()
        .filter(|members| {
            members
                .iter()
                .any(|&a| members.iter().any(|&b| batch[a].source_sample_id != batch[b].source_sample_id))
        })
        .collect();
    if eligible.is_empty() {
        return Err(Error::Sampling(
            "no task in the batch has two instances from different samples".into(),
        ));
    }
    let mut failures = Vec::with_capacity(count);
    for _ in 0..count {
        let members = &eligible[rng.gen_range(0..eligible.len())];
        let (a, b) = loop {
            let a = members[rng.gen_range(0..members.len())];
            let b = members[rng.gen_range(0..members.len())];
            if batch[a].source_sample_id != batch[b].source_sample_id {
                break (a, b);
            }
        };
        let (j, l) = if rng.gen_bool(0.5) { (a, b) } else { (b, a) };
        let (tj, tl) = (&batch[j], &batch[l]);
        failures.push(TaskInstance {
            input: tj.input.clone(),
            output: tl.output.clone(),
            key: tj.key.clone(),
            is_failure: true,
            source_sample_id: format!("{}+{}", tj.source_sample_id, tl.source_sample_id),
        });
    }
    batch.extend(failures);
    Ok(())
}
