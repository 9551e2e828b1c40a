//! Timestamped multigraph storage with per-node chronological indices.

mod negative;
mod sampling;
mod split;

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

pub use negative::{negative_sample, NegativeMode};
pub use sampling::{recursive_sample, sample, sample_recent, SampledContext, SampledList, Sampler};
pub use split::{
    chronological_split, hide_nodes_for_inductive, remove_new_nodes, FilteredEval, InductiveSplit,
    Split, DEFAULT_RATIOS,
};

use crate::error::{Error, Result};

/// Dense node index assigned by [`TemporalGraph::build`].
pub type NodeId = usize;

/// One input record as read from a dataset, before indexing.
#[derive(Clone, Debug, PartialEq)]
pub struct RawEdge {
    pub src: u64,
    pub dst: u64,
    pub t: f64,
    pub feat: Vec<f64>,
}

impl RawEdge {
    pub fn new(src: u64, dst: u64, t: f64) -> Self {
        RawEdge {
            src,
            dst,
            t,
            feat: Vec::new(),
        }
    }

    pub fn with_feat(mut self, feat: Vec<f64>) -> Self {
        self.feat = feat;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interaction {
    pub src: NodeId,
    pub dst: NodeId,
    pub t: f64,
    /// Position in the global chronological order.
    pub edge_index: usize,
}

impl Interaction {
    /// The endpoint that is not `u` (or `u` itself for a self-loop).
    pub fn other(&self, u: NodeId) -> NodeId {
        if self.src == u {
            self.dst
        } else {
            self.src
        }
    }

    pub fn touches(&self, u: NodeId) -> bool {
        self.src == u || self.dst == u
    }
}

/// Node feature table keyed by external node id.
pub type NodeFeatures = HashMap<u64, Vec<f64>>;

/// Immutable after construction; safe to share across sampling workers.
#[derive(Clone, Debug)]
pub struct TemporalGraph {
    interactions: Vec<Interaction>,
    edge_dim: usize,
    edge_feats: Vec<f64>,
    node_dim: usize,
    node_feats: Option<Vec<f64>>,
    external_ids: Vec<u64>,
    id_map: HashMap<u64, NodeId>,
    /// Per node: positions into `interactions`, chronological.
    adjacency: Vec<Vec<usize>>,
    /// Per node: sorted distinct counterparts over the whole dataset.
    neighbors: Vec<Vec<NodeId>>,
    uid: u64,
}

static NEXT_UID: AtomicU64 = AtomicU64::new(0);

impl TemporalGraph {
    /// Sorts records by time (stable, so ties keep input order) and indexes
    /// them. Duplicate `(src, dst, t)` records stay distinct.
    ///
    /// `edge_dim` fixes the edge feature width; when `None` it is taken from
    /// the first record.
    pub fn build(
        mut edges: Vec<RawEdge>,
        edge_dim: Option<usize>,
        node_feats: Option<NodeFeatures>,
    ) -> Result<Self> {
        let edge_dim = edge_dim.unwrap_or_else(|| edges.first().map_or(0, |e| e.feat.len()));
        for (i, e) in edges.iter().enumerate() {
            if !e.t.is_finite() || e.t < 0.0 {
                return Err(Error::InvalidRecord {
                    record: i,
                    reason: format!("timestamp {} is not a finite non-negative number", e.t),
                });
            }
            if e.feat.len() != edge_dim {
                return Err(Error::InvalidRecord {
                    record: i,
                    reason: format!(
                        "edge feature dimension {} differs from graph dimension {edge_dim}",
                        e.feat.len()
                    ),
                });
            }
        }
        edges.sort_by(|a, b| a.t.total_cmp(&b.t));

        let mut id_map = HashMap::new();
        let mut external_ids = Vec::new();
        let mut intern = |x: u64| {
            *id_map.entry(x).or_insert_with(|| {
                external_ids.push(x);
                external_ids.len() - 1
            })
        };
        let mut interactions = Vec::with_capacity(edges.len());
        let mut edge_feats = Vec::with_capacity(edges.len() * edge_dim);
        for (i, e) in edges.iter().enumerate() {
            interactions.push(Interaction {
                src: intern(e.src),
                dst: intern(e.dst),
                t: e.t,
                edge_index: i,
            });
            edge_feats.extend_from_slice(&e.feat);
        }

        let (node_dim, node_table) = match node_feats {
            None => (0, None),
            Some(table) => {
                let mut keys: Vec<u64> = table.keys().copied().collect();
                keys.sort_unstable();
                for &k in &keys {
                    intern(k);
                }
                let dim = keys.first().map_or(0, |k| table[k].len());
                let mut flat = vec![0.0; external_ids.len() * dim];
                for k in keys {
                    let row = &table[&k];
                    if row.len() != dim {
                        return Err(Error::InvalidRecord {
                            record: k as usize,
                            reason: format!(
                                "node feature dimension {} differs from table dimension {dim}",
                                row.len()
                            ),
                        });
                    }
                    let id = id_map[&k];
                    flat[id * dim..(id + 1) * dim].copy_from_slice(row);
                }
                (dim, Some(flat))
            }
        };

        Ok(Self::index(
            interactions,
            edge_dim,
            edge_feats,
            node_dim,
            node_table,
            external_ids,
            id_map,
        ))
    }

    fn index(
        interactions: Vec<Interaction>,
        edge_dim: usize,
        edge_feats: Vec<f64>,
        node_dim: usize,
        node_feats: Option<Vec<f64>>,
        external_ids: Vec<u64>,
        id_map: HashMap<u64, NodeId>,
    ) -> Self {
        let n = external_ids.len();
        let mut adjacency = vec![Vec::new(); n];
        let mut neighbors = vec![Vec::new(); n];
        for (pos, s) in interactions.iter().enumerate() {
            adjacency[s.src].push(pos);
            neighbors[s.src].push(s.dst);
            if s.dst != s.src {
                adjacency[s.dst].push(pos);
                neighbors[s.dst].push(s.src);
            }
        }
        for list in &mut neighbors {
            list.sort_unstable();
            list.dedup();
        }
        TemporalGraph {
            interactions,
            edge_dim,
            edge_feats,
            node_dim,
            node_feats,
            external_ids,
            id_map,
            adjacency,
            neighbors,
            uid: NEXT_UID.fetch_add(1, Ordering::Relaxed),
        }
    }

    /// Builds from dense `(src, dst, t)` triples; node `i` keeps id `i` when
    /// ids are assigned in first-appearance order.
    pub fn from_triples(triples: &[(u64, u64, f64)]) -> Result<Self> {
        let edges = triples.iter().map(|&(s, d, t)| RawEdge::new(s, d, t)).collect();
        Self::build(edges, Some(0), None)
    }

    /// A graph over the same node id space holding only the interactions
    /// accepted by `keep`.
    pub fn filtered(&self, keep: impl Fn(&Interaction) -> bool) -> TemporalGraph {
        let mut interactions = Vec::new();
        let mut feats = Vec::new();
        for s in self.interactions.iter().filter(|s| keep(s)) {
            feats.extend_from_slice(self.edge_feat(s.edge_index));
            interactions.push(Interaction {
                edge_index: interactions.len(),
                ..*s
            });
        }
        Self::index(
            interactions,
            self.edge_dim,
            feats,
            self.node_dim,
            self.node_feats.clone(),
            self.external_ids.clone(),
            self.id_map.clone(),
        )
    }

    /// Distinguishes graphs built in this process; clones share it.
    pub fn uid(&self) -> u64 {
        self.uid
    }

    pub fn num_nodes(&self) -> usize {
        self.external_ids.len()
    }

    pub fn num_edges(&self) -> usize {
        self.interactions.len()
    }

    pub fn interactions(&self) -> &[Interaction] {
        &self.interactions
    }

    pub fn interaction(&self, pos: usize) -> &Interaction {
        &self.interactions[pos]
    }

    pub fn edge_dim(&self) -> usize {
        self.edge_dim
    }

    pub fn edge_feat(&self, pos: usize) -> &[f64] {
        &self.edge_feats[pos * self.edge_dim..(pos + 1) * self.edge_dim]
    }

    pub fn node_dim(&self) -> usize {
        self.node_dim
    }

    pub fn node_feat(&self, u: NodeId) -> Option<&[f64]> {
        self.node_feats
            .as_ref()
            .and_then(|f| f.get(u * self.node_dim..(u + 1) * self.node_dim))
    }

    pub fn has_node_features(&self) -> bool {
        self.node_feats.is_some()
    }

    pub fn external_id(&self, u: NodeId) -> u64 {
        self.external_ids[u]
    }

    pub fn node_id(&self, external: u64) -> Option<NodeId> {
        self.id_map.get(&external).copied()
    }

    pub fn contains_node(&self, u: NodeId) -> bool {
        u < self.num_nodes()
    }

    /// Chronological positions of the interactions touching `u`.
    pub fn history(&self, u: NodeId) -> &[usize] {
        self.adjacency.get(u).map_or(&[], Vec::as_slice)
    }

    /// Distinct nodes `u` interacts with anywhere in the dataset.
    pub fn neighbors(&self, u: NodeId) -> &[NodeId] {
        self.neighbors.get(u).map_or(&[], Vec::as_slice)
    }

    pub fn time_span(&self) -> f64 {
        match (self.interactions.first(), self.interactions.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0.0,
        }
    }

    pub fn summary(&self) -> GraphSummary {
        GraphSummary::of(self)
    }
}

/// Dataset statistics in the conventions of common temporal-network tables.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct GraphSummary {
    pub nodes: usize,
    pub edges: usize,
    /// `|E| / (|V|(|V| - 1) / 2)`.
    pub density: f64,
    /// Fraction of interactions whose source repeats the counterpart of its
    /// own previous interaction.
    pub repetition: f64,
    /// `(t_max - t_min)` in days, timestamps read as seconds.
    pub timespan_days: f64,
}

impl GraphSummary {
    fn of(g: &TemporalGraph) -> Self {
        let (n, m) = (g.num_nodes(), g.num_edges());
        let pairs = n as f64 * (n as f64 - 1.0) / 2.0;
        let mut last: Vec<Option<NodeId>> = vec![None; n];
        let mut repeats = 0usize;
        for s in &g.interactions {
            if last[s.src] == Some(s.dst) {
                repeats += 1;
            }
            last[s.src] = Some(s.dst);
            last[s.dst] = Some(s.src);
        }
        GraphSummary {
            nodes: n,
            edges: m,
            density: if pairs > 0.0 { m as f64 / pairs } else { 0.0 },
            repetition: if m > 0 { repeats as f64 / m as f64 } else { 0.0 },
            timespan_days: g.time_span() / 86_400.0,
        }
    }
}
