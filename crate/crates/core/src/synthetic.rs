//! Synthetic datasets with known structure, used by tests, benches and the
//! CLI smoke paths.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::evaluation::LabeledEmbeddings;
use crate::graph::{RawEdge, TemporalGraph};

/// Session orderings over a 2×2 block `{u1, u2} × {i1, i2}`, as
/// `(user slot, item slot)`. In the palindromic order every participant
/// sees its two partners as `x y y x`; in the paired order as `x x y y`.
const PALINDROMIC: [(usize, usize); 8] = [(0, 0), (0, 1), (1, 0), (1, 1), (1, 1), (0, 1), (1, 0), (0, 0)];
const PAIRED: [(usize, usize); 8] = [(0, 0), (0, 0), (0, 1), (0, 1), (1, 0), (1, 0), (1, 1), (1, 1)];

/// Parameters of [`planted_transitions`].
#[derive(Clone, Copy, Debug)]
pub struct PlantedTransitions {
    /// Pairs per side and per class; the graph has `8 * pairs_per_class` nodes.
    pub pairs_per_class: usize,
    pub rounds: usize,
    /// Item-pair advance per round; must be coprime with `pairs_per_class`
    /// for every user to meet every item of its class.
    pub stride: usize,
    pub seed: u64,
}

impl Default for PlantedTransitions {
    /// 200 nodes and 20,000 interactions.
    fn default() -> Self {
        PlantedTransitions {
            pairs_per_class: 25,
            rounds: 50,
            stride: 7,
            seed: 0,
        }
    }
}

/// Bipartite graph in which each node's next neighbor is a fixed function
/// of its previous two.
///
/// Users and items come in fixed pairs, and every pair belongs to one of
/// two classes. In round `r` each user pair meets one item pair of its
/// own class in an eight-event session stamped with time `r`, and the item
/// pair it meets next is the current one advanced by `stride`. Both
/// classes give every participant two partners with two events each at a
/// single timestamp, so multiplicities and time gaps are identical. The
/// class shows only in the order of events inside a session (`x y y x`
/// versus `x x y y`), which is exactly what the transition graph records.
///
/// Positives in this graph always join nodes of the same class, while a
/// node's never-seen counterparts include both classes; a model that reads
/// the ordering can tell the two apart, one that sees only the multiset of
/// timed neighbors cannot.
pub fn planted_transitions(p: &PlantedTransitions) -> Result<TemporalGraph> {
    let n = p.pairs_per_class;
    let pairs = 2 * n;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    // Random external ids so node identity carries no class information.
    let mut ids: Vec<u64> = (0..4 * pairs as u64).collect();
    ids.shuffle(&mut rng);
    let user = |pair: usize, slot: usize| ids[2 * pair + slot];
    let item = |pair: usize, slot: usize| ids[2 * pairs + 2 * pair + slot];

    let mut edges = Vec::with_capacity(p.rounds * pairs * 8);
    for r in 0..p.rounds {
        let t = r as f64;
        for up in 0..pairs {
            let class = up / n;
            let within = up % n;
            let ip = class * n + (within + p.stride * r) % n;
            let order = if class == 0 { &PALINDROMIC } else { &PAIRED };
            for &(us, is) in order {
                edges.push(RawEdge::new(user(up, us), item(ip, is), t));
            }
        }
    }
    TemporalGraph::build(edges, Some(0), None)
}

/// Random sources; each interaction repeats the source's previous partner
/// with probability `repeat`, otherwise picks a uniform new one.
/// Timestamps are strictly increasing.
pub fn repetitive(nodes: usize, interactions: usize, repeat: f64, seed: u64) -> Result<TemporalGraph> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut last: Vec<Option<u64>> = vec![None; nodes];
    let mut edges = Vec::with_capacity(interactions);
    for i in 0..interactions {
        let u = rng.gen_range(0..nodes);
        let v = match last[u] {
            Some(prev) if rng.gen_bool(repeat) => prev,
            _ => loop {
                let c = rng.gen_range(0..nodes as u64);
                if c != u as u64 {
                    break c;
                }
            },
        };
        last[u] = Some(v);
        last[v as usize] = Some(u as u64);
        edges.push(RawEdge::new(u as u64, v, i as f64));
    }
    TemporalGraph::build(edges, Some(0), None)
}

/// Gaussian embeddings labeled by a random hyperplane, with rows closer
/// than `margin` to it dropped. About a quarter of the rows are positive.
pub fn planted_separation(records: usize, dim: usize, margin: f64, seed: u64) -> LabeledEmbeddings {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = |rng: &mut ChaCha8Rng| {
        // Box–Muller keeps this free of an extra distribution crate.
        let a: f64 = rng.gen_range(f64::EPSILON..1.0);
        let b: f64 = rng.gen_range(0.0..1.0);
        (-2.0 * a.ln()).sqrt() * (std::f64::consts::TAU * b).cos()
    };
    let w: Vec<f64> = (0..dim).map(|_| normal(&mut rng)).collect();
    let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
    // Offset so roughly 25% of standard-normal projections land above it.
    let offset = 0.674;
    let mut out = LabeledEmbeddings::default();
    while out.len() < records {
        let x: Vec<f64> = (0..dim).map(|_| normal(&mut rng)).collect();
        let s = x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / norm - offset;
        if s.abs() < margin {
            continue;
        }
        out.labels.push(s > 0.0);
        out.features.push(x);
    }
    out
}

/// The same embeddings with labels shuffled, which destroys any signal.
pub fn permute_labels(data: &LabeledEmbeddings, seed: u64) -> LabeledEmbeddings {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels = data.labels.clone();
    labels.shuffle(&mut rng);
    LabeledEmbeddings {
        features: data.features.clone(),
        labels,
    }
}
