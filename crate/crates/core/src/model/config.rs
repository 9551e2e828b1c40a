use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Sampler;

/// Where layer-0 node representations come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeFeatureMode {
    /// All-zero vectors of width `d`; works for unseen nodes.
    #[default]
    Zeros,
    /// Fixed features supplied with the dataset.
    Table,
    /// A trainable per-node table of width `d`.
    Learned,
}

impl std::str::FromStr for NodeFeatureMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "zeros" => Ok(Self::Zeros),
            "table" => Ok(Self::Table),
            "learned" => Ok(Self::Learned),
            other => Err(format!("unknown node feature mode `{other}`")),
        }
    }
}

impl std::fmt::Display for NodeFeatureMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Zeros => "zeros",
            Self::Table => "table",
            Self::Learned => "learned",
        })
    }
}

/// Architecture hyperparameters. Edge- and node-feature widths are taken
/// from the graph the model is built for.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TipGnnConfig {
    /// Embedding width.
    pub d: usize,
    /// Time-encoding width.
    pub d_t: usize,
    pub layers: usize,
    /// Transition propagation steps.
    pub steps: usize,
    /// Depth of the per-step MLP; zero means identity.
    pub mlp_depth: usize,
    /// Damping between consecutive propagation steps.
    pub alpha: f64,
    pub heads: usize,
    /// Interactions sampled per query.
    pub neighbors: usize,
    pub dropout: f64,
    pub node_features: NodeFeatureMode,
    pub sampler: Sampler,
    /// Divide each row of `I + A` by its sum before propagating.
    pub row_normalize: bool,
    /// Capacity of the context cache; zero disables it.
    pub cache_capacity: usize,
}

impl Default for TipGnnConfig {
    fn default() -> Self {
        TipGnnConfig {
            d: 128,
            d_t: 128,
            layers: 2,
            steps: 2,
            mlp_depth: 2,
            alpha: 0.0,
            heads: 2,
            neighbors: 20,
            dropout: 0.1,
            node_features: NodeFeatureMode::Zeros,
            sampler: Sampler::Recent,
            row_normalize: false,
            cache_capacity: 200_000,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse `{value}` for `{key}`")))
}

impl TipGnnConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.d == 0 || self.d_t == 0 {
            return fail("d and d_t must be positive".into());
        }
        if self.heads == 0 || !self.d.is_multiple_of(self.heads) {
            return fail(format!("d = {} is not divisible by heads = {}", self.d, self.heads));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return fail(format!("alpha = {} outside [0, 1]", self.alpha));
        }
        if self.layers == 0 {
            return fail("at least one layer is required".into());
        }
        if self.neighbors == 0 {
            return fail("neighbors must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout = {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    /// Sets one field from its textual form. Returns `Ok(false)` for keys
    /// this struct does not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "d" => self.d = parse(key, value)?,
            "d_t" => self.d_t = parse(key, value)?,
            "layers" => self.layers = parse(key, value)?,
            "steps" => self.steps = parse(key, value)?,
            "mlp_depth" => self.mlp_depth = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "heads" => self.heads = parse(key, value)?,
            "neighbors" => self.neighbors = parse(key, value)?,
            "dropout" => self.dropout = parse(key, value)?,
            "node_features" => {
                self.node_features = value.trim().parse().map_err(Error::Config)?;
            }
            "sampler" => self.sampler = value.trim().parse().map_err(Error::Config)?,
            "row_normalize" => self.row_normalize = parse(key, value)?,
            "cache_capacity" => self.cache_capacity = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let sampler = match self.sampler {
            Sampler::Recent => "recent",
            Sampler::Uniform => "uniform",
        };
        vec![
            ("d", self.d.to_string()),
            ("d_t", self.d_t.to_string()),
            ("layers", self.layers.to_string()),
            ("steps", self.steps.to_string()),
            ("mlp_depth", self.mlp_depth.to_string()),
            ("alpha", self.alpha.to_string()),
            ("heads", self.heads.to_string()),
            ("neighbors", self.neighbors.to_string()),
            ("dropout", self.dropout.to_string()),
            ("node_features", self.node_features.to_string()),
            ("sampler", sampler.to_string()),
            ("row_normalize", self.row_normalize.to_string()),
            ("cache_capacity", self.cache_capacity.to_string()),
        ]
    }
}
