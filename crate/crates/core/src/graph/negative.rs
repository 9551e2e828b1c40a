use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{NodeId, TemporalGraph};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NegativeMode {
    /// Uniform over every node.
    Train,
    /// Uniform over nodes that never interact with the source anywhere in the
    /// dataset (the source itself excluded).
    Eval,
}

/// Draws one corrupted destination for source `u`.
pub fn negative_sample<R: Rng + ?Sized>(
    g: &TemporalGraph,
    u: NodeId,
    mode: NegativeMode,
    rng: &mut R,
) -> Result<NodeId> {
    let n = g.num_nodes();
    if n == 0 {
        return Err(Error::Empty("graph has no nodes".into()));
    }
    match mode {
        NegativeMode::Train => Ok(rng.gen_range(0..n)),
        NegativeMode::Eval => {
            let nbrs = g.neighbors(u);
            let excluded = |v: NodeId| v == u || nbrs.binary_search(&v).is_ok();
            let self_counted = usize::from(u < n && nbrs.binary_search(&u).is_err());
            let eligible = n.saturating_sub(nbrs.len() + self_counted);
            if eligible == 0 {
                return Err(Error::NoNegative { node: u });
            }
            if eligible * 2 >= n {
                loop {
                    let v = rng.gen_range(0..n);
                    if !excluded(v) {
                        return Ok(v);
                    }
                }
            }
            let k = rng.gen_range(0..eligible);
            Ok((0..n).filter(|&v| !excluded(v)).nth(k).expect("eligible count"))
        }
    }
}
