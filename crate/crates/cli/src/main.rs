//! `tipgnn`: train, evaluate and inspect transition-propagation GNN models on temporal
//! interaction datasets. Results go to stdout as one JSON object per line;
//! progress goes to stderr.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use tipgnn::experiment::{
    ablate_steps, attention_queries, evaluate_test_split, export_attention, run_experiment, ExperimentConfig,
};
use tipgnn::graph::{chronological_split, remove_new_nodes, DEFAULT_RATIOS};
use tipgnn::io::{load_dataset, DatasetSpec};
use tipgnn::model::load_checkpoint;
use tipgnn::Error;

#[derive(Parser, Debug)]
#[command(name = "tipgnn", version, about = "Transition-propagation GNN for temporal networks")]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

const MORE_SETTINGS: &str = "\
Further settings (config file or --set KEY=VALUE), with defaults:
  d_t = 128              time-encoding width
  node_features = zeros  zeros | table | learned
  sampler = recent       recent | uniform
  row_normalize = false  row-normalize the transition matrix
  weight_decay = 1e-5    L2 penalty added to gradients
  negatives = 1          negatives per positive during training
  shuffle = false        visit training batches in random order
  chunk_size = 8         samples per tape inside a batch
  cache_capacity = 200000  cached sampled contexts (0 disables)
  hidden_fraction = 0.1  nodes hidden in link_inductive runs";

#[derive(Subcommand, Debug)]
enum Command {
    /// Train and evaluate one model per seed.
    #[command(after_help = MORE_SETTINGS)]
    Train(Experiment),
    /// Evaluate a saved checkpoint on the test split of a dataset.
    Evaluate(Evaluate),
    /// Repeat an experiment for several propagation-step counts.
    #[command(after_help = MORE_SETTINGS)]
    Ablate(Ablate),
    /// Dump last-layer fusion weights of a saved model.
    ExportAttention(Export),
    /// Print dataset statistics.
    InspectDataset(Inspect),
}

#[derive(Args, Debug, Default)]
struct DataArgs {
    /// Interaction file (edge list, or csv when the name ends in .csv).
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Force the input format: edge_list or csv.
    #[arg(long)]
    format: Option<String>,
    /// Optional `node_id,f1,…` feature table.
    #[arg(long)]
    node_features: Option<PathBuf>,
}

impl DataArgs {
    fn spec(&self) -> Result<DatasetSpec, Error> {
        let path = self
            .dataset
            .clone()
            .ok_or_else(|| Error::Config("--dataset is required".into()))?;
        Ok(DatasetSpec {
            path,
            format: self.format.as_deref().map(str::parse).transpose()?,
            node_features: self.node_features.clone(),
        })
    }
}

/// Every knob of an experiment. Flags override values from `--config`.
#[derive(Args, Debug)]
struct Experiment {
    #[command(flatten)]
    data: DataArgs,
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// link_transductive, link_inductive or node_classification.
    #[arg(long)]
    task: Option<String>,
    /// `node_id,timestamp,label` file for node classification.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Embedding width d [default: 128].
    #[arg(long)]
    dim: Option<usize>,
    /// Graph convolution layers L [default: 2].
    #[arg(long)]
    layers: Option<usize>,
    /// Attention heads [default: 2].
    #[arg(long)]
    heads: Option<usize>,
    /// Transition propagation steps K [default: 2].
    #[arg(long)]
    steps: Option<usize>,
    /// Affine layers per propagation MLP [default: 2].
    #[arg(long)]
    mlp_depth: Option<usize>,
    /// Damping factor in [0, 1] [default: 0].
    #[arg(long)]
    alpha: Option<f64>,
    /// Sampled interactions per node b [default: 20].
    #[arg(long)]
    neighbors: Option<usize>,
    /// Dropout rate [default: 0.1].
    #[arg(long)]
    dropout: Option<f64>,
    /// Interactions per batch [default: 200].
    #[arg(long)]
    batch_size: Option<usize>,
    /// Adam learning rate [default: 1e-4].
    #[arg(long)]
    lr: Option<f64>,
    /// Epoch limit [default: 50].
    #[arg(long)]
    max_epochs: Option<usize>,
    /// Early-stopping patience in epochs [default: 3].
    #[arg(long)]
    patience: Option<usize>,
    /// Seeds as a list or inclusive range, e.g. `1,2,3` or `1..5` [default: 0..4].
    #[arg(long)]
    seeds: Option<String>,
    /// Results directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Any other setting as `key=value`; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Experiment {
    fn config(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            cfg.set(k, v)?;
        }
        let mut put = |k: &str, v: Option<String>| match v {
            Some(v) => cfg.set(k, &v),
            None => Ok(()),
        };
        let s = |x: &Option<PathBuf>| x.as_ref().map(|p| p.display().to_string());
        put("dataset", s(&self.data.dataset))?;
        put("format", self.data.format.clone())?;
        put("node_feature_file", s(&self.data.node_features))?;
        put("task", self.task.clone())?;
        put("labels", s(&self.labels))?;
        put("d", self.dim.map(|x| x.to_string()))?;
        put("layers", self.layers.map(|x| x.to_string()))?;
        put("heads", self.heads.map(|x| x.to_string()))?;
        put("steps", self.steps.map(|x| x.to_string()))?;
        put("mlp_depth", self.mlp_depth.map(|x| x.to_string()))?;
        put("alpha", self.alpha.map(|x| x.to_string()))?;
        put("neighbors", self.neighbors.map(|x| x.to_string()))?;
        put("dropout", self.dropout.map(|x| x.to_string()))?;
        put("batch_size", self.batch_size.map(|x| x.to_string()))?;
        put("lr", self.lr.map(|x| x.to_string()))?;
        put("max_epochs", self.max_epochs.map(|x| x.to_string()))?;
        put("patience", self.patience.map(|x| x.to_string()))?;
        put("seeds", self.seeds.clone())?;
        put("out", s(&self.out))?;
        if cfg.dataset.path.as_os_str().is_empty() {
            return Err(Error::Config("--dataset is required".into()));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct Evaluate {
    #[command(flatten)]
    data: DataArgs,
    /// Checkpoint written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Seed for the evaluation negatives.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct Ablate {
    #[command(flatten)]
    experiment: Experiment,
    /// Propagation-step counts to compare.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3")]
    steps_list: Vec<usize>,
}

#[derive(Args, Debug)]
struct Export {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Test interactions to query; both endpoints are exported.
    #[arg(long, default_value_t = 500)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct Inspect {
    #[command(flatten)]
    data: DataArgs,
}

/// Exit codes by failure category.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => 2,
        Error::Parse { .. } | Error::Empty(_) | Error::InvalidRecord { .. } | Error::Io(_) => 3,
        Error::Checkpoint(_) => 4,
        Error::NonFiniteGradient(_) => 5,
        _ => 1,
    }
}

/// Some seeds failed but the others produced results.
const PARTIAL_FAILURE: u8 = 6;

fn emit(value: &serde_json::Value) {
    println!("{value}");
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Train(args) => {
            let report = run_experiment(&args.config()?)?;
            print!("{}", report.to_json_lines());
            Ok(if report.aggregate.failed > 0 { PARTIAL_FAILURE } else { 0 })
        }
        Command::Evaluate(args) => {
            let g = load_dataset(&args.data.spec()?)?;
            let model = load_checkpoint(&args.checkpoint, &g)?;
            let metrics = evaluate_test_split(&model, &g, args.seed)?;
            emit(&json!({ "kind": "evaluation", "seed": args.seed, "metrics": metrics }));
            Ok(0)
        }
        Command::Ablate(args) => {
            let cfg = args.experiment.config()?;
            let mut failed = false;
            for (k, report) in ablate_steps(&cfg, &args.steps_list)? {
                failed |= report.aggregate.failed > 0;
                emit(&json!({ "kind": "ablation", "steps": k, "aggregate": report.aggregate }));
            }
            Ok(if failed { PARTIAL_FAILURE } else { 0 })
        }
        Command::ExportAttention(args) => {
            let g = load_dataset(&args.data.spec()?)?;
            let model = load_checkpoint(&args.checkpoint, &g)?;
            let split = chronological_split(&g, DEFAULT_RATIOS)?;
            let test = remove_new_nodes(&g, &split).test;
            let export = export_attention(&model, &g, &attention_queries(&g, &test, args.samples, args.seed))?;
            for row in &export.rows {
                emit(&json!({ "kind": "attention", "node": row.node, "t": row.t, "weights": row.weights }));
            }
            emit(&json!({ "kind": "attention_mean", "rows": export.rows.len(), "mean": export.mean }));
            Ok(0)
        }
        Command::InspectDataset(args) => {
            let g = load_dataset(&args.data.spec()?)?;
            let s = g.summary();
            eprintln!(
                "|V| = {}, |E| = {}, density = {:.4}, repetition = {:.4}, timespan = {:.2} days",
                s.nodes, s.edges, s.density, s.repetition, s.timespan_days
            );
            emit(&json!(s));
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
