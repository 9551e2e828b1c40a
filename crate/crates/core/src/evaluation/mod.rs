//! Ranking metrics and the downstream node-classification probe.

mod metrics;
mod node_classification;

pub use metrics::{accuracy, auc_roc, average_precision, LinkMetrics};
pub use node_classification::{
    node_classification, oversample, ClassifierConfig, ClassifierReport, LabeledEmbeddings,
};
