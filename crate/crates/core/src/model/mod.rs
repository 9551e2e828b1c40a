//! The transition-propagation network: parameters, the recursive embedding
//! of `(node, time)` queries and the link scorer.

mod checkpoint;
mod config;
pub mod layers;

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{
    decode_checkpoint, load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint,
};
pub use config::{NodeFeatureMode, TipGnnConfig};
use layers::{AttentionWeights, FusionWeights, HeadWeights, InitWeights, LayerWeights, Neighborhood};

use crate::error::{Error, Result};
use crate::graph::{NodeId, TemporalGraph};
use crate::tensor::{glorot_uniform, ParamId, ParamStore, Tape, Tensor, Var};
use crate::transition::{stack_edge_features, ContextCache};

#[derive(Clone, Debug)]
struct LayerIds {
    w_n: ParamId,
    w_e: ParamId,
    w: ParamId,
    b: ParamId,
    /// `[step][depth] -> (weight, bias)`.
    mlp: Vec<Vec<(ParamId, ParamId)>>,
    w_q: Vec<ParamId>,
    w_k: Vec<ParamId>,
    w_v: Vec<ParamId>,
    w_o: ParamId,
    fuse_w: Vec<ParamId>,
    fuse_b: Vec<ParamId>,
    fuse_q: ParamId,
}

#[derive(Clone, Debug)]
struct HeadIds {
    w_u: ParamId,
    w_v: ParamId,
    w: ParamId,
    b: ParamId,
}

/// Model parameters plus the shapes they were built for.
pub struct TipGnn {
    config: TipGnnConfig,
    store: ParamStore,
    omega: ParamId,
    layers: Vec<LayerIds>,
    head: HeadIds,
    node_table: Option<ParamId>,
    /// Width of layer-0 node representations.
    input_dim: usize,
    edge_dim: usize,
    cache: ContextCache,
}

/// Geometric frequencies from 1 down to `1 / timespan` (or 1 when the span
/// is shorter than a unit).
pub fn initial_frequencies(d_t: usize, timespan: f64) -> Vec<f64> {
    let slowest = if timespan > 1.0 { 1.0 / timespan } else { 1.0 };
    if d_t == 1 {
        return vec![1.0];
    }
    let decades = -slowest.log10();
    (0..d_t)
        .map(|i| 10f64.powf(-(i as f64) * decades / (d_t - 1) as f64))
        .collect()
}

impl TipGnn {
    /// Fresh Glorot-initialized parameters sized for `g`.
    pub fn new<R: Rng + ?Sized>(config: TipGnnConfig, g: &TemporalGraph, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = config.d;
        let input_dim = match config.node_features {
            NodeFeatureMode::Table => {
                if !g.has_node_features() {
                    return Err(Error::Config(
                        "node_features = table needs a node feature file".into(),
                    ));
                }
                g.node_dim()
            }
            NodeFeatureMode::Zeros | NodeFeatureMode::Learned => d,
        };
        let edge_dim = g.edge_dim();
        let mut store = ParamStore::new();
        let omega = store.add("omega", Tensor::row(initial_frequencies(config.d_t, g.time_span())));
        let mut glorot = |store: &mut ParamStore, name: String, i: usize, o: usize| {
            store.add(name, glorot_uniform(i, o, rng))
        };

        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let d_in = if l == 0 { input_dim } else { d };
            let p = format!("layer{l}");
            let dh = d / config.heads;
            let w_n = glorot(&mut store, format!("{p}.init.w_n"), d_in, d);
            let w_e = glorot(&mut store, format!("{p}.init.w_e"), edge_dim + config.d_t, d);
            let w = glorot(&mut store, format!("{p}.init.w"), d, d);
            let b = store.add(format!("{p}.init.b"), Tensor::zeros(&[1, d]));
            let mlp = (0..config.steps)
                .map(|k| {
                    (0..config.mlp_depth)
                        .map(|i| {
                            let w = glorot(&mut store, format!("{p}.mlp{k}.{i}.w"), d, d);
                            let b = store.add(format!("{p}.mlp{k}.{i}.b"), Tensor::zeros(&[1, d]));
                            (w, b)
                        })
                        .collect()
                })
                .collect();
            let mut w_q = Vec::new();
            let mut w_k = Vec::new();
            let mut w_v = Vec::new();
            for h in 0..config.heads {
                w_q.push(glorot(&mut store, format!("{p}.attn{h}.w_q"), d_in, dh));
                w_k.push(glorot(&mut store, format!("{p}.attn{h}.w_k"), d, dh));
                w_v.push(glorot(&mut store, format!("{p}.attn{h}.w_v"), d, dh));
            }
            let w_o = glorot(&mut store, format!("{p}.attn.w_o"), d, d);
            let mut fuse_w = Vec::new();
            let mut fuse_b = Vec::new();
            for k in 0..=config.steps {
                fuse_w.push(glorot(&mut store, format!("{p}.fuse{k}.w"), d, d));
                fuse_b.push(store.add(format!("{p}.fuse{k}.b"), Tensor::zeros(&[1, d])));
            }
            let fuse_q = glorot(&mut store, format!("{p}.fuse.q"), d, 1);
            layers.push(LayerIds { w_n, w_e, w, b, mlp, w_q, w_k, w_v, w_o, fuse_w, fuse_b, fuse_q });
        }
        let head = HeadIds {
            w_u: glorot(&mut store, "head.w_u".into(), d, d),
            w_v: glorot(&mut store, "head.w_v".into(), d, d),
            w: glorot(&mut store, "head.w".into(), d, 1),
            b: store.add("head.b", Tensor::zeros(&[1, 1])),
        };
        let node_table = (config.node_features == NodeFeatureMode::Learned)
            .then(|| glorot(&mut store, "node_table".into(), g.num_nodes(), d));
        let cache = ContextCache::new(config.cache_capacity);
        Ok(TipGnn {
            config,
            store,
            omega,
            layers,
            head,
            node_table,
            input_dim,
            edge_dim,
            cache,
        })
    }

    pub fn config(&self) -> &TipGnnConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn edge_dim(&self) -> usize {
        self.edge_dim
    }

    pub fn omega(&self) -> ParamId {
        self.omega
    }

    /// Drops cached contexts; needed only to bound memory.
    pub fn clear_cache(&self) {
        self.cache.clear();
    }

    /// A forward session over `g`. Dropout is active when `training`.
    pub fn session<'m>(&'m self, g: &'m TemporalGraph, training: bool, seed: u64) -> Session<'m> {
        Session::new(self, &self.store, g, training, seed)
    }

    /// Like [`TipGnn::session`] but reading parameter values from `store`,
    /// which must share this model's layout.
    pub fn session_with<'m>(
        &'m self,
        store: &'m ParamStore,
        g: &'m TemporalGraph,
        training: bool,
        seed: u64,
    ) -> Session<'m> {
        assert_eq!(store.len(), self.store.len(), "parameter layout mismatch");
        Session::new(self, store, g, training, seed)
    }

    /// Probability that `u` and `v` interact at `t`, in evaluation mode.
    pub fn predict_link(&self, g: &TemporalGraph, u: NodeId, v: NodeId, t: f64) -> Result<f64> {
        let mut s = self.session(g, false, 0);
        let logit = s.link_logit(u, v, t)?;
        let p = s.tape.sigmoid(logit);
        Ok(s.tape.value(p).item())
    }

    /// Final-layer embedding of `u` at `t`, in evaluation mode.
    pub fn embed(&self, g: &TemporalGraph, u: NodeId, t: f64) -> Result<Vec<f64>> {
        let mut s = self.session(g, false, 0);
        let h = s.embed(u, t)?;
        Ok(s.tape.value(h).data().to_vec())
    }
}

/// One embedding with the fusion weights that produced it.
#[derive(Clone, Copy, Debug)]
pub struct Embedding {
    pub h: Var,
    /// `[1, K+1]`; absent at layer 0.
    pub fusion: Option<Var>,
}

/// Shares sub-embeddings between queries evaluated on the same tape.
pub struct Session<'m> {
    model: &'m TipGnn,
    store: &'m ParamStore,
    g: &'m TemporalGraph,
    pub tape: Tape,
    rng: ChaCha8Rng,
    memo: HashMap<(NodeId, u64, usize), Embedding>,
}

impl<'m> Session<'m> {
    fn new(model: &'m TipGnn, store: &'m ParamStore, g: &'m TemporalGraph, training: bool, seed: u64) -> Self {
        let mut tape = Tape::new();
        tape.set_training(training);
        Session {
            model,
            store,
            g,
            tape,
            rng: ChaCha8Rng::seed_from_u64(seed),
            memo: HashMap::new(),
        }
    }

    pub fn model(&self) -> &'m TipGnn {
        self.model
    }

    pub fn graph(&self) -> &'m TemporalGraph {
        self.g
    }

    /// Hands over the tape, keeping every recorded handle valid.
    pub fn into_tape(self) -> Tape {
        self.tape
    }

    /// Top-layer embedding of `u` at `t` as a `[1, d]` row.
    pub fn embed(&mut self, u: NodeId, t: f64) -> Result<Var> {
        Ok(self.embed_at(u, t, self.model.config.layers)?.h)
    }

    /// Embedding at `level`; level 0 is the node representation.
    pub fn embed_at(&mut self, u: NodeId, t: f64, level: usize) -> Result<Embedding> {
        let key = (u, t.to_bits(), level);
        if let Some(e) = self.memo.get(&key) {
            return Ok(*e);
        }
        let e = if level == 0 {
            Embedding {
                h: self.node_rows(&[u])?,
                fusion: None,
            }
        } else {
            self.convolve(u, t, level - 1)?
        };
        self.memo.insert(key, e);
        Ok(e)
    }

    /// Fusion weights of the top layer for `(u, t)`.
    pub fn fusion_weights(&mut self, u: NodeId, t: f64) -> Result<Vec<f64>> {
        let e = self.embed_at(u, t, self.model.config.layers)?;
        let w = e.fusion.expect("layers >= 1");
        Ok(self.tape.value(w).data().to_vec())
    }

    /// Pre-sigmoid score of the `(u, v, t)` link.
    pub fn link_logit(&mut self, u: NodeId, v: NodeId, t: f64) -> Result<Var> {
        let h_u = self.embed(u, t)?;
        let h_v = self.embed(v, t)?;
        let m = self.model;
        let p = HeadWeights {
            w_u: self.tape.param(self.store, m.head.w_u),
            w_v: self.tape.param(self.store, m.head.w_v),
            w: self.tape.param(self.store, m.head.w),
            b: self.tape.param(self.store, m.head.b),
        };
        layers::link_logit(&mut self.tape, &p, h_u, h_v, m.config.dropout, &mut self.rng)
    }

    /// Layer-0 representations of `ids`, one row each.
    fn node_rows(&mut self, ids: &[NodeId]) -> Result<Var> {
        let m = self.model;
        let n = ids.len();
        match m.config.node_features {
            NodeFeatureMode::Zeros => Ok(self.tape.constant(Tensor::zeros(&[n, m.input_dim]))),
            NodeFeatureMode::Table => {
                let mut data = Vec::with_capacity(n * m.input_dim);
                for &u in ids {
                    data.extend_from_slice(self.g.node_feat(u).ok_or(Error::UnknownNode(u))?);
                }
                Ok(self.tape.constant(Tensor::new(vec![n, m.input_dim], data)?))
            }
            NodeFeatureMode::Learned => {
                let id = m.node_table.expect("learned table");
                let rows = self.store.get(id).rows();
                let table = self.tape.param(self.store, id);
                if ids.iter().all(|&u| u < rows) {
                    return self.tape.select_rows(table, ids);
                }
                let parts = ids
                    .iter()
                    .map(|&u| {
                        if u < rows {
                            self.tape.select_rows(table, &[u])
                        } else {
                            Ok(self.tape.constant(Tensor::zeros(&[1, m.input_dim])))
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                self.tape.stack_rows(&parts)
            }
        }
    }

    fn layer_weights(&mut self, l: usize) -> LayerWeights {
        let m = self.model;
        let ids = &m.layers[l];
        let tape = &mut self.tape;
        let mut p = |id: ParamId| tape.param(self.store, id);
        LayerWeights {
            init: InitWeights {
                w_n: p(ids.w_n),
                w_e: p(ids.w_e),
                w: p(ids.w),
                b: p(ids.b),
            },
            mlps: ids
                .mlp
                .iter()
                .map(|step| step.iter().map(|&(w, b)| (p(w), p(b))).collect())
                .collect(),
            attention: AttentionWeights {
                w_q: ids.w_q.iter().map(|&id| p(id)).collect(),
                w_k: ids.w_k.iter().map(|&id| p(id)).collect(),
                w_v: ids.w_v.iter().map(|&id| p(id)).collect(),
                w_o: p(ids.w_o),
            },
            fusion: FusionWeights {
                w: ids.fuse_w.iter().map(|&id| p(id)).collect(),
                b: ids.fuse_b.iter().map(|&id| p(id)).collect(),
                q: p(ids.fuse_q),
            },
        }
    }

    /// Computes level `l + 1` for `(u, t)` from level-`l` inputs.
    fn convolve(&mut self, u: NodeId, t: f64, l: usize) -> Result<Embedding> {
        let m = self.model;
        let cfg = &m.config;
        let ctx = m.cache.get_or_build(self.g, u, t, cfg.neighbors, cfg.sampler);
        let weights = self.layer_weights(l);
        // Evaluated even for empty contexts so unknown nodes are reported.
        let query = self.embed_at(u, t, l)?.h;
        if ctx.is_empty() {
            let (h, w) = layers::convolve_empty(&mut self.tape, &weights)?;
            return Ok(Embedding { h, fusion: Some(w) });
        }
        let bundle = &ctx.bundle;
        let h_n = if l == 0 {
            self.node_rows(&bundle.neighbor_ids)?
        } else {
            let rows = bundle
                .neighbor_ids
                .iter()
                .zip(&ctx.neighbor_times)
                .map(|(&v, &tv)| Ok(self.embed_at(v, tv, l)?.h))
                .collect::<Result<Vec<_>>>()?;
            if rows.len() == 1 { rows[0] } else { self.tape.stack_rows(&rows)? }
        };
        let omega = self.tape.param(self.store, m.omega);
        let h_s = stack_edge_features(&mut self.tape, self.g, &ctx.interactions, t, |tape, dt| {
            layers::time_encode(tape, omega, dt)
        })?;
        let incidence = self.tape.constant(bundle.b.clone());
        let a_tilde = self.tape.constant(if cfg.row_normalize {
            bundle.a_tilde_row_normalized()
        } else {
            bundle.a_tilde.clone()
        });
        let hood = Neighborhood { query, h_n, h_s, incidence, a_tilde };
        let (h, w) = layers::convolve(&mut self.tape, &weights, &hood, cfg.alpha, cfg.dropout, &mut self.rng)?;
        Ok(Embedding { h, fusion: Some(w) })
    }
}
