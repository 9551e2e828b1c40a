//! Translation of an interaction sequence into its transition graph.
//!
//! For node `u` at time `t` the sampled interactions `s_1 .. s_n` (oldest
//! first) each point at a counterpart `v_i`. Distinct counterparts become
//! the vertices of a small directed graph in order of first appearance, with
//! an edge `v_i -> v_{i+1}` for every chronologically adjacent pair. The
//! incidence matrix maps each interaction to its counterpart's row.

use std::num::NonZeroUsize;
use std::sync::{Arc, Mutex};

use lru::LruCache;

use crate::error::{Error, Result};
use crate::graph::{sample, NodeId, Sampler, TemporalGraph};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct TransitionBundle {
    /// Distinct counterparts in order of first appearance.
    pub neighbor_ids: Vec<NodeId>,
    /// Row of `neighbor_ids` for each interaction.
    pub assignment: Vec<usize>,
    /// 0/1 transition matrix, `|N| × |N|`.
    pub a: Tensor,
    /// `I + A`, saturated at 1.
    pub a_tilde: Tensor,
    /// 0/1 incidence matrix, `|N| × |S|`.
    pub b: Tensor,
}

impl TransitionBundle {
    pub fn num_neighbors(&self) -> usize {
        self.neighbor_ids.len()
    }

    pub fn num_interactions(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbor_ids.is_empty()
    }

    /// `a_tilde` with each row divided by its sum.
    pub fn a_tilde_row_normalized(&self) -> Tensor {
        let mut out = self.a_tilde.clone();
        let n = self.num_neighbors();
        for r in 0..n {
            let row = &mut out.data_mut()[r * n..(r + 1) * n];
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|x| *x /= s);
        }
        out
    }
}

/// Builds the transition bundle of a chronological counterpart sequence.
pub fn build_transition(sequence: &[NodeId]) -> TransitionBundle {
    let mut neighbor_ids: Vec<NodeId> = Vec::new();
    let assignment: Vec<usize> = sequence
        .iter()
        .map(|v| match neighbor_ids.iter().position(|x| x == v) {
            Some(i) => i,
            None => {
                neighbor_ids.push(*v);
                neighbor_ids.len() - 1
            }
        })
        .collect();
    let n = neighbor_ids.len();
    let s = assignment.len();

    let mut a = vec![0.0; n * n];
    for w in assignment.windows(2) {
        a[w[0] * n + w[1]] = 1.0;
    }
    let mut a_tilde = a.clone();
    for i in 0..n {
        a_tilde[i * n + i] = 1.0;
    }
    let mut b = vec![0.0; n * s];
    for (col, &row) in assignment.iter().enumerate() {
        b[row * s + col] = 1.0;
    }
    TransitionBundle {
        neighbor_ids,
        assignment,
        a: Tensor::new(vec![n, n], a).expect("square"),
        a_tilde: Tensor::new(vec![n, n], a_tilde).expect("square"),
        b: Tensor::new(vec![n, s], b).expect("incidence"),
    }
}

/// Sampled history of one `(node, time)` query together with its
/// transition bundle.
#[derive(Clone, Debug)]
pub struct Context {
    pub node: NodeId,
    pub t: f64,
    /// Chronological positions of the sampled interactions.
    pub interactions: Vec<usize>,
    pub bundle: TransitionBundle,
    /// Latest interaction time per neighbor row.
    pub neighbor_times: Vec<f64>,
}

impl Context {
    pub fn build(g: &TemporalGraph, node: NodeId, t: f64, b: usize, sampler: Sampler) -> Self {
        let interactions = sample(g, node, t, b, sampler);
        let sequence: Vec<NodeId> = interactions
            .iter()
            .map(|&p| g.interaction(p).other(node))
            .collect();
        let bundle = build_transition(&sequence);
        let mut neighbor_times = vec![f64::NEG_INFINITY; bundle.num_neighbors()];
        for (&p, &row) in interactions.iter().zip(&bundle.assignment) {
            neighbor_times[row] = neighbor_times[row].max(g.interaction(p).t);
        }
        Context {
            node,
            t,
            interactions,
            bundle,
            neighbor_times,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }
}

/// `query_t - t_i` for each interaction; rejects interactions after the
/// query time.
pub fn time_deltas(g: &TemporalGraph, interactions: &[usize], query_t: f64) -> Result<Vec<f64>> {
    interactions
        .iter()
        .map(|&p| {
            let t = g.interaction(p).t;
            if t > query_t {
                Err(Error::Leakage { t, query_t })
            } else {
                Ok(query_t - t)
            }
        })
        .collect()
}

/// Stacks `[e_i, Φ(query_t - t_i)]` rows into the `|S| × (d_e + d_t)`
/// interaction feature matrix. `encode` maps a `[|S|, 1]` column of time
/// deltas to its `[|S|, d_t]` encoding on the tape.
pub fn stack_edge_features(
    tape: &mut Tape,
    g: &TemporalGraph,
    interactions: &[usize],
    query_t: f64,
    encode: impl FnOnce(&mut Tape, Tensor) -> Result<Var>,
) -> Result<Var> {
    let deltas = time_deltas(g, interactions, query_t)?;
    let n = deltas.len();
    let phi = encode(tape, Tensor::new(vec![n, 1], deltas)?)?;
    if g.edge_dim() == 0 {
        return Ok(phi);
    }
    let mut feats = Vec::with_capacity(n * g.edge_dim());
    for &p in interactions {
        feats.extend_from_slice(g.edge_feat(p));
    }
    let e = tape.constant(Tensor::new(vec![n, g.edge_dim()], feats)?);
    tape.concat(&[e, phi])
}

/// LRU cache of contexts keyed by graph, node, time and `b`; safe to share between
/// threads.
pub struct ContextCache {
    inner: Option<Mutex<LruCache<(u64, NodeId, u64, usize), Arc<Context>>>>,
}

impl ContextCache {
    /// A capacity of zero disables caching.
    pub fn new(capacity: usize) -> Self {
        ContextCache {
            inner: NonZeroUsize::new(capacity).map(|c| Mutex::new(LruCache::new(c))),
        }
    }

    pub fn get_or_build(
        &self,
        g: &TemporalGraph,
        node: NodeId,
        t: f64,
        b: usize,
        sampler: Sampler,
    ) -> Arc<Context> {
        let Some(lock) = &self.inner else {
            return Arc::new(Context::build(g, node, t, b, sampler));
        };
        let key = (g.uid(), node, t.to_bits(), b);
        if let Some(hit) = lock.lock().expect("cache lock").get(&key) {
            return Arc::clone(hit);
        }
        let ctx = Arc::new(Context::build(g, node, t, b, sampler));
        lock.lock().expect("cache lock").put(key, Arc::clone(&ctx));
        ctx
    }

    pub fn clear(&self) {
        if let Some(lock) = &self.inner {
            lock.lock().expect("cache lock").clear();
        }
    }

    pub fn len(&self) -> usize {
        self.inner
            .as_ref()
            .map_or(0, |l| l.lock().expect("cache lock").len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
