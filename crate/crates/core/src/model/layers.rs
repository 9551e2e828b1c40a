//! The building blocks of one convolution layer, written against a tape so
//! every piece is differentiable and testable on its own.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// `Φ(Δt) = cos(Δt · ω)` for a `[n, 1]` column of deltas and a `[1, d_t]`
/// frequency row.
pub fn time_encode(tape: &mut Tape, omega: Var, deltas: Tensor) -> Result<Var> {
    if let Some(bad) = deltas.data().iter().find(|x| !(**x >= 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "time deltas must be non-negative, got {bad}"
        )));
    }
    let dt = tape.constant(deltas);
    let arg = tape.matmul(dt, omega)?;
    Ok(tape.cos(arg))
}

/// Projections that turn a neighborhood into its initial embeddings.
#[derive(Clone, Copy, Debug)]
pub struct InitWeights {
    pub w_n: Var,
    pub w_e: Var,
    pub w: Var,
    pub b: Var,
}

/// `Z0 = ReLU(H_N W_n + (B H_S) W_e) W + b`, one row per neighbor.
pub fn init_neighbor_embeddings<R: Rng + ?Sized>(
    tape: &mut Tape,
    p: &InitWeights,
    incidence: Var,
    h_s: Var,
    h_n: Var,
    dropout: f64,
    rng: &mut R,
) -> Result<Var> {
    let per_neighbor = tape.matmul(incidence, h_s)?;
    let edge_part = tape.matmul(per_neighbor, p.w_e)?;
    let node_part = tape.matmul(h_n, p.w_n)?;
    let pre = tape.add(node_part, edge_part)?;
    let hidden = tape.relu(pre);
    let hidden = tape.dropout(hidden, dropout, rng);
    let out = tape.matmul(hidden, p.w)?;
    tape.add(out, p.b)
}

/// Affine layers with ReLU between them (none after the last).
pub fn mlp(tape: &mut Tape, layers: &[(Var, Var)], x: Var) -> Result<Var> {
    let mut h = x;
    for (i, &(w, b)) in layers.iter().enumerate() {
        if i > 0 {
            h = tape.relu(h);
        }
        let y = tape.matmul(h, w)?;
        h = tape.add(y, b)?;
    }
    Ok(h)
}

/// Returns `[Z^0, …, Z^K]` with `Z^{k+1} = αZ^k + (1−α)·Ã·MLP_k(Z^k)`.
/// `mlps[k]` holds the layers of step `k`; an empty list is the identity.
pub fn propagate(
    tape: &mut Tape,
    z0: Var,
    a_tilde: Var,
    mlps: &[Vec<(Var, Var)>],
    alpha: f64,
) -> Result<Vec<Var>> {
    let mut out = vec![z0];
    for layers in mlps {
        let z = *out.last().expect("z0");
        let next = if alpha == 1.0 {
            z
        } else {
            let moved = mlp(tape, layers, z)?;
            let hat = tape.matmul(a_tilde, moved)?;
            if alpha == 0.0 {
                hat
            } else {
                let keep = tape.scale(z, alpha);
                let mix = tape.scale(hat, 1.0 - alpha);
                tape.add(keep, mix)?
            }
        };
        out.push(next);
    }
    Ok(out)
}

/// Per-head query/key/value projections plus the output projection.
#[derive(Clone, Debug)]
pub struct AttentionWeights {
    pub w_q: Vec<Var>,
    pub w_k: Vec<Var>,
    pub w_v: Vec<Var>,
    pub w_o: Var,
}

/// Multi-head attention of a `[1, d_in]` query over the rows of `z`.
/// `valid[i]` marks rows that take part; with none valid, or no rows at
/// all, the result is a `[1, d]` zero row.
pub fn transition_pool(
    tape: &mut Tape,
    p: &AttentionWeights,
    query: Var,
    z: Var,
    valid: Option<&[bool]>,
) -> Result<Var> {
    let d = tape.shape(p.w_o)[1];
    if tape.value(z).rows() == 0 || valid.is_some_and(|m| !m.contains(&true)) {
        return Ok(tape.constant(Tensor::zeros(&[1, d])));
    }
    let mut heads = Vec::with_capacity(p.w_q.len());
    for h in 0..p.w_q.len() {
        let q = tape.matmul(query, p.w_q[h])?;
        let k = tape.matmul(z, p.w_k[h])?;
        let v = tape.matmul(z, p.w_v[h])?;
        let kt = tape.transpose(k);
        let scores = tape.matmul(q, kt)?;
        let att = tape.masked_softmax(scores, valid)?;
        heads.push(tape.matmul(att, v)?);
    }
    let joined = if heads.len() == 1 { heads[0] } else { tape.concat(&heads)? };
    tape.matmul(joined, p.w_o)
}

/// Per-step projections and the shared scoring vector of one fusion.
#[derive(Clone, Debug)]
pub struct FusionWeights {
    pub w: Vec<Var>,
    pub b: Vec<Var>,
    /// `[d, 1]`.
    pub q: Var,
}

/// Combines the per-step `[1, d]` embeddings. Returns the fused row and the
/// `[1, K+1]` weight row.
pub fn attention_fuse(tape: &mut Tape, p: &FusionWeights, hs: &[Var]) -> Result<(Var, Var)> {
    if hs.is_empty() || hs.len() > p.w.len() {
        return Err(Error::InvalidArgument(format!(
            "fusion over {} steps with {} step projections",
            hs.len(),
            p.w.len()
        )));
    }
    let mut scores = Vec::with_capacity(hs.len());
    for (k, &h) in hs.iter().enumerate() {
        let x = tape.matmul(h, p.w[k])?;
        let x = tape.add(x, p.b[k])?;
        let s = tape.sigmoid(x);
        scores.push(tape.matmul(s, p.q)?);
    }
    let row = if scores.len() == 1 { scores[0] } else { tape.concat(&scores)? };
    let weights = tape.softmax(row)?;
    let stacked = if hs.len() == 1 { hs[0] } else { tape.stack_rows(hs)? };
    let fused = tape.matmul(weights, stacked)?;
    Ok((fused, weights))
}

/// Every weight of one convolution layer.
#[derive(Clone, Debug)]
pub struct LayerWeights {
    pub init: InitWeights,
    pub mlps: Vec<Vec<(Var, Var)>>,
    pub attention: AttentionWeights,
    pub fusion: FusionWeights,
}

/// Inputs describing one non-empty neighborhood.
#[derive(Clone, Copy, Debug)]
pub struct Neighborhood {
    /// `[1, d_in]` representation of the queried node.
    pub query: Var,
    /// `[|N|, d_in]` representations of the neighbors.
    pub h_n: Var,
    /// `[|S|, d_e + d_t]` interaction features.
    pub h_s: Var,
    /// `[|N|, |S|]` incidence matrix.
    pub incidence: Var,
    /// `[|N|, |N|]` self-looped transition matrix.
    pub a_tilde: Var,
}

/// Initialization, propagation, per-step pooling and fusion. Returns the
/// `[1, d]` embedding and the `[1, K+1]` fusion weights.
pub fn convolve<R: Rng + ?Sized>(
    tape: &mut Tape,
    p: &LayerWeights,
    n: &Neighborhood,
    alpha: f64,
    dropout: f64,
    rng: &mut R,
) -> Result<(Var, Var)> {
    let z0 = init_neighbor_embeddings(tape, &p.init, n.incidence, n.h_s, n.h_n, dropout, rng)?;
    let zs = propagate(tape, z0, n.a_tilde, &p.mlps, alpha)?;
    let hs = zs
        .into_iter()
        .map(|z| transition_pool(tape, &p.attention, n.query, z, None))
        .collect::<Result<Vec<_>>>()?;
    attention_fuse(tape, &p.fusion, &hs)
}

/// The result for a node without history: every step pools to zero.
pub fn convolve_empty(tape: &mut Tape, p: &LayerWeights) -> Result<(Var, Var)> {
    let d = tape.shape(p.attention.w_o)[1];
    let zero = tape.constant(Tensor::zeros(&[1, d]));
    attention_fuse(tape, &p.fusion, &vec![zero; p.mlps.len() + 1])
}

/// Hidden layer and output weights of the link scorer.
#[derive(Clone, Copy, Debug)]
pub struct HeadWeights {
    pub w_u: Var,
    pub w_v: Var,
    pub w: Var,
    pub b: Var,
}

/// Pre-sigmoid link score `W·ReLU(h_u W_u + h_v W_v) + b` as a `[1, 1]`.
pub fn link_logit<R: Rng + ?Sized>(
    tape: &mut Tape,
    p: &HeadWeights,
    h_u: Var,
    h_v: Var,
    dropout: f64,
    rng: &mut R,
) -> Result<Var> {
    let a = tape.matmul(h_u, p.w_u)?;
    let b = tape.matmul(h_v, p.w_v)?;
    let pre = tape.add(a, b)?;
    let hidden = tape.relu(pre);
    let hidden = tape.dropout(hidden, dropout, rng);
    let out = tape.matmul(hidden, p.w)?;
    tape.add(out, p.b)
}
