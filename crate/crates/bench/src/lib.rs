//! Shared fixtures for the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tipgnn::model::{TipGnn, TipGnnConfig};
use tipgnn::synthetic::{planted_transitions, PlantedTransitions};
use tipgnn::graph::TemporalGraph;

/// The 200-node, 20,000-interaction planted-transition graph.
pub fn graph() -> TemporalGraph {
    planted_transitions(&PlantedTransitions::default()).expect("valid generator settings")
}

/// A model with the given width, layers and steps; other settings default.
pub fn model(g: &TemporalGraph, d: usize, layers: usize, steps: usize) -> TipGnn {
    let cfg = TipGnnConfig {
        d,
        d_t: d,
        layers,
        steps,
        ..TipGnnConfig::default()
    };
    TipGnn::new(cfg, g, &mut ChaCha8Rng::seed_from_u64(0)).expect("valid model settings")
}

/// Random neighbor sequence of length `len` over `values` symbols.
pub fn sequence(len: usize, values: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.gen_range(0..values)).collect()
}

/// Random scores with random labels containing both classes.
pub fn scored(n: usize, seed: u64) -> (Vec<f64>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scores = (0..n).map(|_| rng.gen()).collect();
    let mut labels: Vec<bool> = (0..n).map(|_| rng.gen()).collect();
    labels[0] = true;
    labels[1] = false;
    (scores, labels)
}
