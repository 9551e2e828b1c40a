//! Experiment orchestration: configuration files, per-seed runs, result
//! directories, ablation sweeps and fusion-weight export.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::evaluation::{node_classification, ClassifierConfig, LabeledEmbeddings, LinkMetrics};
use crate::graph::{
    chronological_split, hide_nodes_for_inductive, remove_new_nodes, NodeId, TemporalGraph, DEFAULT_RATIOS,
};
use crate::io::{load_dataset, load_labels, DatasetFormat, DatasetSpec, NodeLabel};
use crate::model::{save_checkpoint, TipGnn, TipGnnConfig};
use crate::training::{evaluate_links, fit, mix, EpochRecord, EvalSet, FitReport, TrainConfig, TrainSet};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    #[default]
    LinkTransductive,
    LinkInductive,
    NodeClassification,
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().replace('-', "_").as_str() {
            "link_transductive" | "transductive" => Ok(Task::LinkTransductive),
            "link_inductive" | "inductive" => Ok(Task::LinkInductive),
            "node_classification" => Ok(Task::NodeClassification),
            other => Err(Error::Config(format!("unknown task `{other}`"))),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::LinkTransductive => "link_transductive",
            Task::LinkInductive => "link_inductive",
            Task::NodeClassification => "node_classification",
        })
    }
}

/// Everything one experiment needs. Serialized as flat `key = value` text.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    /// `node_id,timestamp,label` file; required for node classification.
    pub labels: Option<PathBuf>,
    pub task: Task,
    pub model: TipGnnConfig,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    /// Share of nodes hidden from training in inductive runs.
    pub hidden_fraction: f64,
    /// Results directory; nothing is written when absent.
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetSpec::default(),
            labels: None,
            task: Task::default(),
            model: TipGnnConfig::default(),
            train: TrainConfig::default(),
            seeds: vec![0, 1, 2, 3, 4],
            hidden_fraction: 0.1,
            out: None,
        }
    }
}

fn parse_seeds(value: &str) -> Result<Vec<u64>> {
    let mut seeds = Vec::new();
    for part in value.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let bad = || Error::Config(format!("cannot parse seeds `{value}`"));
        // `a..b` is inclusive, so `1..5` is five seeds.
        if let Some((a, b)) = part.split_once("..") {
            let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
            if a > b {
                return Err(bad());
            }
            seeds.extend(a..=b);
        } else {
            seeds.push(part.parse().map_err(|_| bad())?);
        }
    }
    if seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    Ok(seeds)
}

impl ExperimentConfig {
    /// Applies one setting. Model and training keys are forwarded.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let path = || (!value.is_empty()).then(|| PathBuf::from(value));
        match key.trim() {
            "dataset" => self.dataset.path = PathBuf::from(value),
            "format" => self.dataset.format = Some(value.parse::<DatasetFormat>()?),
            "node_feature_file" => self.dataset.node_features = path(),
            "labels" => self.labels = path(),
            "task" => self.task = value.parse()?,
            "seeds" | "seed" => self.seeds = parse_seeds(value)?,
            "hidden_fraction" => {
                self.hidden_fraction = value
                    .parse()
                    .map_err(|_| Error::Config(format!("cannot parse hidden_fraction `{value}`")))?
            }
            "out" => self.out = path(),
            k => {
                if !self.model.set(k, value)? && !self.train.set(k, value)? {
                    return Err(Error::Config(format!("unknown setting `{k}`")));
                }
            }
        }
        Ok(())
    }

    /// Reads `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            cfg.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.task == Task::NodeClassification && self.labels.is_none() {
            return Err(Error::Config("node_classification needs a `labels` file".into()));
        }
        if self.task == Task::LinkInductive && !(self.hidden_fraction > 0.0 && self.hidden_fraction < 1.0) {
            return Err(Error::Config(format!(
                "hidden_fraction = {} must lie in (0, 1)",
                self.hidden_fraction
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        Ok(())
    }

    /// Settings that determine results, excluding seeds and the output
    /// location, in a fixed order.
    fn result_pairs(&self) -> Vec<(String, String)> {
        let opt = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let mut pairs = vec![
            ("dataset".to_string(), self.dataset.path.display().to_string()),
            (
                "format".to_string(),
                match self.dataset.format {
                    Some(DatasetFormat::Csv) => "csv".into(),
                    Some(DatasetFormat::EdgeList) => "edge_list".into(),
                    None => String::new(),
                },
            ),
            ("node_feature_file".to_string(), opt(&self.dataset.node_features)),
            ("labels".to_string(), opt(&self.labels)),
            ("task".to_string(), self.task.to_string()),
            ("hidden_fraction".to_string(), self.hidden_fraction.to_string()),
        ];
        // Neither the seed nor the cache size changes what a run computes.
        let relevant = self
            .model
            .to_pairs()
            .into_iter()
            .chain(self.train.to_pairs())
            .filter(|(k, _)| !matches!(*k, "seed" | "cache_capacity"));
        pairs.extend(relevant.map(|(k, v)| (k.to_string(), v)));
        pairs
    }

    /// The configuration as text that [`ExperimentConfig::parse`] reads back.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.result_pairs() {
            if !v.is_empty() {
                out.push_str(&format!("{k} = {v}\n"));
            }
        }
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        out.push_str(&format!("seeds = {}\n", seeds.join(",")));
        if let Some(o) = &self.out {
            out.push_str(&format!("out = {}\n", o.display()));
        }
        out
    }

    /// First 16 hex digits of the SHA-256 of the result-relevant settings.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.result_pairs() {
            h.update(k.as_bytes());
            h.update(b"=");
            h.update(v.as_bytes());
            h.update(b"\n");
        }
        hex::encode(&h.finalize()[..8])
    }
}

/// Outcome of one seed.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunRecord {
    pub kind: &'static str,
    pub config_hash: String,
    pub seed: u64,
    pub task: Task,
    pub status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub metrics: BTreeMap<String, f64>,
    pub best_epoch: usize,
    pub epochs: usize,
    pub seconds: f64,
}

impl RunRecord {
    pub fn succeeded(&self) -> bool {
        self.status == "ok"
    }
}

/// Mean and sample standard deviation over the successful seeds.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Aggregate {
    pub kind: &'static str,
    pub config_hash: String,
    pub task: Task,
    pub seeds: Vec<u64>,
    pub succeeded: usize,
    pub failed: usize,
    pub mean: BTreeMap<String, f64>,
    pub std: BTreeMap<String, f64>,
}

impl Aggregate {
    pub fn of(hash: &str, task: Task, runs: &[RunRecord]) -> Self {
        let ok: Vec<&RunRecord> = runs.iter().filter(|r| r.succeeded()).collect();
        let mut mean = BTreeMap::new();
        let mut std = BTreeMap::new();
        if let Some(first) = ok.first() {
            for key in first.metrics.keys() {
                let xs: Vec<f64> = ok.iter().filter_map(|r| r.metrics.get(key).copied()).collect();
                let n = xs.len() as f64;
                let m = xs.iter().sum::<f64>() / n;
                let var = if xs.len() > 1 {
                    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
                } else {
                    0.0
                };
                mean.insert(key.clone(), m);
                std.insert(key.clone(), var.sqrt());
            }
        }
        Aggregate {
            kind: "aggregate",
            config_hash: hash.to_string(),
            task,
            seeds: runs.iter().map(|r| r.seed).collect(),
            succeeded: ok.len(),
            failed: runs.len() - ok.len(),
            mean,
            std,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub runs: Vec<RunRecord>,
    pub aggregate: Aggregate,
}

impl ExperimentReport {
    /// One JSON object per line: every run, then the aggregate.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for r in &self.runs {
            out.push_str(&serde_json::to_string(r).expect("serializable"));
            out.push('\n');
        }
        out.push_str(&serde_json::to_string(&self.aggregate).expect("serializable"));
        out.push('\n');
        out
    }
}

/// Loaded inputs shared by every seed of an experiment.
pub struct Inputs {
    pub graph: TemporalGraph,
    pub labels: Vec<NodeLabel>,
}

impl Inputs {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self> {
        let graph = load_dataset(&cfg.dataset)?;
        let labels = match &cfg.labels {
            Some(p) => load_labels(p)?,
            None => Vec::new(),
        };
        Ok(Inputs { graph, labels })
    }
}

/// Artifacts of one trained seed.
pub struct TrainedRun {
    pub model: TipGnn,
    pub fit: FitReport,
    pub metrics: BTreeMap<String, f64>,
}

fn link_metrics(prefix: &str, m: &LinkMetrics, out: &mut BTreeMap<String, f64>) {
    out.insert(format!("{prefix}_accuracy"), m.accuracy);
    out.insert(format!("{prefix}_auc"), m.auc);
    out.insert(format!("{prefix}_ap"), m.ap);
}

fn eval_set(g: &TemporalGraph, positions: &[usize], seed: u64, what: &str) -> Result<EvalSet> {
    let set = EvalSet::draw(g, positions, seed)?;
    if set.is_empty() {
        return Err(Error::Empty(format!("the {what} set has no usable interactions")));
    }
    Ok(set)
}

/// Trains and evaluates one seed. `on_epoch` sees each epoch record.
pub fn run_seed(
    cfg: &ExperimentConfig,
    inputs: &Inputs,
    seed: u64,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainedRun> {
    let g = &inputs.graph;
    let split = chronological_split(g, DEFAULT_RATIOS)?;
    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = seed;
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0x1417));

    let (train_graph, train_positions, val_positions, test_positions) = match cfg.task {
        Task::LinkTransductive | Task::NodeClassification => {
            let f = remove_new_nodes(g, &split);
            (None, split.train.clone().collect::<Vec<_>>(), f.val, f.test)
        }
        Task::LinkInductive => {
            let ind = hide_nodes_for_inductive(g, &split, cfg.hidden_fraction, mix(seed, 0x41d))?;
            let keep: std::collections::HashSet<usize> = ind.train.iter().copied().collect();
            let sub = g.filtered(|s| keep.contains(&s.edge_index));
            let positions = (0..sub.num_edges()).collect();
            (Some(sub), positions, ind.val, ind.test)
        }
    };
    let train_g = train_graph.as_ref().unwrap_or(g);
    let train = TrainSet {
        graph: train_g,
        positions: &train_positions,
        boundary: match cfg.task {
            Task::LinkInductive => train_g.num_edges(),
            _ => split.train.end,
        },
    };
    let val = eval_set(g, &val_positions, mix(seed, 1), "validation")?;
    let mut model = TipGnn::new(cfg.model.clone(), train_g, &mut rng)?;
    let fit_report = fit(&mut model, train, g, &val, &train_cfg, on_epoch)?;

    let mut metrics = BTreeMap::new();
    match cfg.task {
        Task::LinkTransductive | Task::LinkInductive => {
            let test = eval_set(g, &test_positions, mix(seed, 2), "test")?;
            link_metrics("test", &evaluate_links(&model, g, &test)?, &mut metrics);
            link_metrics("val", &evaluate_links(&model, g, &val)?, &mut metrics);
        }
        Task::NodeClassification => {
            let data = label_embeddings(&model, g, &inputs.labels)?;
            let report = node_classification(
                &data,
                &ClassifierConfig {
                    seed: mix(seed, 3),
                    ..ClassifierConfig::default()
                },
            )?;
            metrics.insert("test_auc".into(), report.test_auc);
            metrics.insert("val_auc".into(), report.val_auc);
        }
    }
    Ok(TrainedRun {
        model,
        fit: fit_report,
        metrics,
    })
}

/// Test-split link metrics of a trained model with the filtering and
/// negatives a transductive run with `seed` would use.
pub fn evaluate_test_split(model: &TipGnn, g: &TemporalGraph, seed: u64) -> Result<BTreeMap<String, f64>> {
    let split = chronological_split(g, DEFAULT_RATIOS)?;
    let f = remove_new_nodes(g, &split);
    let test = eval_set(g, &f.test, mix(seed, 2), "test")?;
    let mut metrics = BTreeMap::new();
    link_metrics("test", &evaluate_links(model, g, &test)?, &mut metrics);
    Ok(metrics)
}

/// Embeds every labeled `(node, t)` from interactions strictly before `t`.
/// Labels of nodes absent from the graph are skipped.
pub fn label_embeddings(model: &TipGnn, g: &TemporalGraph, labels: &[NodeLabel]) -> Result<LabeledEmbeddings> {
    let mut data = LabeledEmbeddings::default();
    let mut missing = 0;
    for l in labels {
        let Some(u) = g.node_id(l.node) else {
            missing += 1;
            continue;
        };
        data.features.push(model.embed(g, u, l.t)?);
        data.labels.push(l.label);
    }
    if missing > 0 {
        log::warn!("{missing} labels refer to nodes absent from the graph");
    }
    Ok(data)
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in rows {
        serde_json::to_writer(&mut w, r).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Runs every seed. A failing seed is recorded and the rest continue.
///
/// With `cfg.out` set, each seed gets `<out>/<hash>/seed-<seed>/` holding
/// `config.txt`, `epochs.jsonl`, `checkpoint.bin` and `metrics.jsonl`, and
/// `<out>/<hash>/summary.jsonl` collects all rows.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let inputs = Inputs::load(cfg)?;
    run_experiment_on(cfg, &inputs)
}

/// [`run_experiment`] with inputs already loaded.
pub fn run_experiment_on(cfg: &ExperimentConfig, inputs: &Inputs) -> Result<ExperimentReport> {
    cfg.validate()?;
    let hash = cfg.hash();
    let root = cfg.out.as_ref().map(|o| o.join(&hash));
    let mut runs = Vec::new();
    for &seed in &cfg.seeds {
        let started = Instant::now();
        let dir = root.as_ref().map(|r| r.join(format!("seed-{seed}")));
        if let Some(d) = &dir {
            fs::create_dir_all(d)?;
            fs::write(d.join("config.txt"), cfg.to_text())?;
        }
        let mut epochs = Vec::new();
        let outcome = run_seed(cfg, inputs, seed, |r| {
            log::info!(
                "seed {seed} epoch {}: loss {:.4}, val auc {:.4}, {:.1}s",
                r.epoch,
                r.loss,
                r.val_auc,
                r.seconds
            );
            epochs.push(r.clone());
        });
        let mut record = RunRecord {
            kind: "run",
            config_hash: hash.clone(),
            seed,
            task: cfg.task,
            status: "ok",
            error: None,
            metrics: BTreeMap::new(),
            best_epoch: 0,
            epochs: epochs.len(),
            seconds: 0.0,
        };
        match outcome {
            Ok(run) => {
                record.metrics = run.metrics;
                record.best_epoch = run.fit.best_epoch;
                if let Some(d) = &dir {
                    save_checkpoint(&run.model, &d.join("checkpoint.bin"))?;
                }
            }
            Err(e) => {
                log::error!("seed {seed} failed: {e}");
                record.status = "failed";
                record.error = Some(e.to_string());
            }
        }
        record.seconds = started.elapsed().as_secs_f64();
        if let Some(d) = &dir {
            write_jsonl(&d.join("epochs.jsonl"), &epochs)?;
            write_jsonl(&d.join("metrics.jsonl"), std::slice::from_ref(&record))?;
        }
        runs.push(record);
    }
    let report = ExperimentReport {
        aggregate: Aggregate::of(&hash, cfg.task, &runs),
        runs,
    };
    if let Some(r) = &root {
        fs::write(r.join("summary.jsonl"), report.to_json_lines())?;
    }
    Ok(report)
}

/// One aggregate per propagation-step count.
pub fn ablate_steps(cfg: &ExperimentConfig, steps: &[usize]) -> Result<Vec<(usize, ExperimentReport)>> {
    cfg.validate()?;
    let inputs = Inputs::load(cfg)?;
    steps
        .iter()
        .map(|&k| {
            let mut c = cfg.clone();
            c.model.steps = k;
            Ok((k, run_experiment_on(&c, &inputs)?))
        })
        .collect()
}

/// Last-layer fusion weights at one `(node, t)` query.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttentionRow {
    pub node: u64,
    pub t: f64,
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttentionExport {
    pub rows: Vec<AttentionRow>,
    /// Per-step mean over all rows.
    pub mean: Vec<f64>,
}

/// Queries both endpoints of up to `limit` interactions drawn uniformly
/// from `positions`, at the interaction time.
pub fn attention_queries(g: &TemporalGraph, positions: &[usize], limit: usize, seed: u64) -> Vec<(NodeId, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, positions.len(), limit.min(positions.len())).into_vec();
    picked.sort_unstable();
    picked
        .into_iter()
        .flat_map(|i| {
            let s = g.interaction(positions[i]);
            [(s.src, s.t), (s.dst, s.t)]
        })
        .collect()
}

/// Fusion weights of the last layer for each query, plus their means.
pub fn export_attention(model: &TipGnn, g: &TemporalGraph, queries: &[(NodeId, f64)]) -> Result<AttentionExport> {
    let steps = model.config().steps + 1;
    let mut rows = Vec::with_capacity(queries.len());
    let mut sum = vec![0.0; steps];
    for part in queries.chunks(64) {
        let mut session = model.session(g, false, 0);
        for &(u, t) in part {
            let weights = session.fusion_weights(u, t)?;
            for (s, w) in sum.iter_mut().zip(&weights) {
                *s += w;
            }
            rows.push(AttentionRow {
                node: g.external_id(u),
                t,
                weights,
            });
        }
    }
    let n = rows.len().max(1) as f64;
    Ok(AttentionExport {
        rows,
        mean: sum.into_iter().map(|s| s / n).collect(),
    })
}
