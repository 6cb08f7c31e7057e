use std::fs;
use std::path::Path;
use std::sync::Arc;

use taco_core::analysis::{
    adaptation_sweep, curves_to_csv, embed_split, eval_scenarios, export_embeddings, import_embeddings,
    mean_task_embeddings, render_curves, similarity_matrix, Granularity, Report, Scenario, SweepKind, SweepSpec,
};
use taco_core::corpus::{generate_synthetic_corpus, ingest_corpus, split_corpus, Corpus, CorpusSpec, Split, SplitAssignment, DEFAULT_RATIOS};
use taco_core::model::{CheckpointHeader, EmbeddingRecord, Model};
use taco_core::sampling::CorpusIndex;
use taco_core::task_synth::TaskType;
use taco_core::training::{self, LossMode, TrainConfig, FINAL_CHECKPOINT, METRICS_LOG};
use taco_core::{Error, Result};

use crate::manifest::RunManifest;
use crate::{EmbedArgs, EvalArgs, ModelArgs, SimmatrixArgs, SweepArgs, SynthArgs, TrainArgs};

pub const SPLITS_FILE: &str = "splits.json";
pub const EMBEDDINGS_FILE: &str = "embeddings.csv";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TABLE: &str = "report.txt";

fn read_config(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))
}

pub fn synth_corpus(a: &SynthArgs) -> Result<()> {
    let mut spec: CorpusSpec = serde_json::from_str(&read_config(&a.config)?).map_err(|e| Error::Config(e.to_string()))?;
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    spec.validate()?;
    let corpus = generate_synthetic_corpus(&spec)?;
    let mut manifest = RunManifest::new("synth-corpus", serde_json::to_value(&spec)?)
        .seed("corpus", spec.seed)
        .input("config", &a.config);
    for d in &spec.datasets {
        manifest = manifest.output(a.out.join(&d.dataset_id));
    }
    manifest.write(&a.out)?;
    taco_core::corpus::write_corpus(&corpus, &a.out)
}

fn seen_train_index(corpus: Arc<Corpus>, splits: &SplitAssignment, config: &TrainConfig) -> Result<CorpusIndex> {
    let seen: Vec<String> = corpus.datasets.iter().filter(|d| d.seen).map(|d| d.dataset_id.clone()).collect();
    CorpusIndex::build(corpus.clone(), &config.tasks, config.task_params.clone(), |s| {
        splits.get(&s.sample_id) == Some(Split::Train) && seen.contains(&s.dataset_id)
    })
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let mut config = match &a.config {
        Some(p) => TrainConfig::from_json(&read_config(p)?)?,
        None => TrainConfig::default(),
    };
    if let Some(mode) = &a.loss_mode {
        config = config.with_loss_mode(LossMode::parse(mode)?);
    }
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    if let Some(tau) = a.tau {
        config.model.tau = tau;
    }
    config.validate()?;

    let corpus = Arc::new(ingest_corpus(&a.corpus)?);
    let splits = split_corpus(&corpus.samples, DEFAULT_RATIOS, config.seed)?;
    let index = seen_train_index(corpus, &splits, &config)?;

    let mut manifest = RunManifest::new("train", serde_json::to_value(&config)?)
        .seed("train", config.seed)
        .seed("split", config.seed)
        .input("corpus", &a.corpus);
    if let Some(p) = &a.config {
        manifest = manifest.input("config", p);
    }
    manifest
        .output(a.out.join(SPLITS_FILE))
        .output(a.out.join(METRICS_LOG))
        .output(a.out.join(FINAL_CHECKPOINT))
        .write(&a.out)?;
    fs::write(a.out.join(SPLITS_FILE), splits.to_json()?)?;
    let outcome = training::train(config, &index, &a.out)?;
    if let Some(last) = outcome.losses.last() {
        eprintln!("trained {} iterations, final loss {last:.4}", outcome.losses.len());
    }
    Ok(())
}

/// Everything an analysis command needs from a checkpoint and its corpus.
struct Loaded {
    model: Model<f32>,
    header: CheckpointHeader,
    corpus: Corpus,
    splits: SplitAssignment,
    split_seed: u64,
    seen_tasks: Vec<TaskType>,
    tasks: Vec<TaskType>,
}

impl Loaded {
    fn embed(&self, split: Split, seed: u64) -> Result<Vec<EmbeddingRecord>> {
        let params = TrainConfig::default().task_params;
        embed_split(&self.model, &self.corpus, &self.splits, split, &self.tasks, &self.seen_tasks, &params, seed)
    }

    fn name(&self) -> String {
        self.header.training["loss_mode"].as_str().unwrap_or("model").to_string()
    }

    fn manifest(&self, command: &str, m: &ModelArgs, extra: serde_json::Value) -> RunManifest {
        let config = serde_json::json!({
            "model": self.header.model,
            "training": self.header.training,
            "tasks": self.tasks,
            "seen_tasks": self.seen_tasks,
            "options": extra,
        });
        let mut manifest = RunManifest::new(command, config)
            .seed("synthesis", m.seed)
            .seed("split", self.split_seed)
            .input("checkpoint", &m.checkpoint)
            .input("corpus", &m.corpus);
        if let Some(p) = &m.config {
            manifest = manifest.input("config", p);
        }
        manifest
    }
}

fn parse_tasks(names: &[String]) -> Result<Vec<TaskType>> {
    names.iter().map(|n| n.trim().parse()).collect()
}

fn load(m: &ModelArgs) -> Result<Loaded> {
    let expected = match &m.config {
        Some(p) => Some(TrainConfig::from_json(&read_config(p)?)?.model),
        None => None,
    };
    let (model, header) = Model::<f32>::load(&m.checkpoint, expected.as_ref())?;
    let corpus = ingest_corpus(&m.corpus)?;
    // Checkpoints written by `train` record the seed that also drew the split.
    let split_seed = header.training["seed"].as_u64().unwrap_or(m.seed);
    let splits = split_corpus(&corpus.samples, DEFAULT_RATIOS, split_seed)?;
    let seen_tasks = match header.training.get("seen_tasks") {
        Some(v) => serde_json::from_value(v.clone()).map_err(|e| Error::Version(format!("checkpoint seen_tasks: {e}")))?,
        None => TrainConfig::default().tasks,
    };
    let tasks = if m.tasks.is_empty() { TaskType::ALL.to_vec() } else { parse_tasks(&m.tasks)? };
    Ok(Loaded { model, header, corpus, splits, split_seed, seen_tasks, tasks })
}

pub fn embed(a: &EmbedArgs) -> Result<()> {
    let splits = match a.split.as_str() {
        "all" => vec![Split::Train, Split::Val, Split::Test],
        s => vec![Split::parse(s).ok_or_else(|| Error::Config(format!("unknown split {s:?}")))?],
    };
    let ctx = load(&a.model)?;
    let path = a.model.out.join(EMBEDDINGS_FILE);
    ctx.manifest("embed", &a.model, serde_json::json!({ "splits": splits }))
        .output(path.clone())
        .write(&a.model.out)?;
    let mut records = Vec::new();
    for split in splits {
        records.extend(ctx.embed(split, a.model.seed)?);
    }
    export_embeddings(&records, ctx.model.config().feature_dim * embedding_width(&ctx.model), &path)
}

/// Baseline encoders concatenate the features of both halves.
fn embedding_width(model: &Model<f32>) -> usize {
    if model.config().in_channels == 3 {
        2
    } else {
        1
    }
}

fn scenarios(a: &EvalArgs) -> Result<Vec<Scenario>> {
    let granularities = a.granularity.iter().map(|g| Granularity::parse(g.trim())).collect::<Result<Vec<_>>>()?;
    let mut list = if a.scenario.is_empty() {
        Scenario::grid()
    } else {
        a.scenario.iter().map(|s| Scenario::parse(s)).collect::<Result<Vec<_>>>()?
    };
    for s in &mut list {
        s.ks = a.k.clone();
        s.granularities = granularities.clone();
        s.validate()?;
    }
    Ok(list)
}

fn by_split(records: &[EmbeddingRecord], split: Split) -> Vec<EmbeddingRecord> {
    records.iter().filter(|r| r.split == split).cloned().collect()
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let scenarios = scenarios(a)?;
    let ctx = load(&a.model)?;
    let out = &a.model.out;
    let options = serde_json::json!({
        "scenarios": scenarios,
        "baselines": a.baseline_embeddings,
    });
    let mut manifest = ctx
        .manifest("eval", &a.model, options)
        .output(out.join(REPORT_JSON))
        .output(out.join(REPORT_TABLE));
    for p in &a.baseline_embeddings {
        manifest = manifest.input(&format!("baseline:{}", baseline_name(p)), p);
    }
    manifest.write(out)?;

    let queries = ctx.embed(Split::Test, a.model.seed)?;
    let reference = ctx.embed(Split::Train, a.model.seed)?;
    let mut report: Report = eval_scenarios(&ctx.name(), &queries, &reference, &scenarios)?;
    for p in &a.baseline_embeddings {
        let records = import_embeddings(p)?;
        let (q, r) = (by_split(&records, Split::Test), by_split(&records, Split::Train));
        report.merge(eval_scenarios(&baseline_name(p), &q, &r, &scenarios)?);
    }
    fs::write(out.join(REPORT_JSON), serde_json::to_string_pretty(&report)?)?;
    fs::write(out.join(REPORT_TABLE), report.render_table())?;
    print!("{}", report.render_table());
    Ok(())
}

fn baseline_name(path: &Path) -> String {
    path.file_stem().map_or_else(|| "baseline".into(), |s| s.to_string_lossy().into_owned())
}

pub fn sweep(a: &SweepArgs) -> Result<()> {
    let kind = SweepKind::parse(&a.kind)?;
    let mut spec = SweepSpec::new(kind, a.probes, a.model.seed);
    if !a.reference.is_empty() {
        spec.reference_tasks = parse_tasks(&a.reference)?;
    }
    spec.validate()?;
    let ctx = load(&a.model)?;
    let out = &a.model.out;
    let (csv, png) = (out.join(format!("sweep_{}.csv", kind.as_str())), out.join(format!("sweep_{}.png", kind.as_str())));
    ctx.manifest("sweep", &a.model, serde_json::to_value(&spec)?)
        .output(csv.clone())
        .output(png.clone())
        .write(out)?;
    let test_ids: Vec<&str> = ctx.splits.ids(Split::Test).collect();
    let curves = adaptation_sweep(&ctx.model, &ctx.corpus, &test_ids, &spec, &TrainConfig::default().task_params)?;
    fs::write(&csv, curves_to_csv(kind, &curves))?;
    render_curves(&curves, 480, 320).save_png(&png)
}

pub fn simmatrix(a: &SimmatrixArgs) -> Result<()> {
    let granularity = Granularity::parse(&a.granularity)?;
    let ctx = load(&a.model)?;
    let out = &a.model.out;
    let (raw, norm) = (out.join("similarity_raw.csv"), out.join("similarity_normalized.csv"));
    ctx.manifest("simmatrix", &a.model, serde_json::json!({ "granularity": granularity }))
        .output(raw.clone())
        .output(norm.clone())
        .write(out)?;
    let records = ctx.embed(Split::Test, a.model.seed)?;
    let means: Vec<(String, Vec<f64>)> = mean_task_embeddings(&records, granularity)?.into_iter().collect();
    if means.is_empty() {
        return Err(Error::Contract("no test embeddings to compare".into()));
    }
    let m = similarity_matrix(&means)?;
    fs::write(&raw, m.to_csv(false))?;
    fs::write(&norm, m.to_csv(true))?;
    Ok(())
}
