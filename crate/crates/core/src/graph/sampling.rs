use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{NodeId, TemporalGraph};

/// How the `b` interactions preceding a query are chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampler {
    /// The `b` most recent interactions.
    #[default]
    Recent,
    /// `b` interactions drawn uniformly from the whole history, seeded by the
    /// query itself so the draw is a pure function of `(node, t, b)`.
    Uniform,
}

impl std::str::FromStr for Sampler {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "recent" | "temporal" => Ok(Sampler::Recent),
            "uniform" => Ok(Sampler::Uniform),
            other => Err(format!("unknown sampler `{other}`")),
        }
    }
}

/// Positions of interactions of `u` strictly before `t`.
fn before(g: &TemporalGraph, u: NodeId, t: f64) -> &[usize] {
    let h = g.history(u);
    let end = h.partition_point(|&p| g.interaction(p).t < t);
    &h[..end]
}

/// The `min(b, available)` latest interactions of `u` with timestamp
/// strictly below `t`, oldest first. Unknown nodes have no history.
pub fn sample_recent(g: &TemporalGraph, u: NodeId, t: f64, b: usize) -> Vec<usize> {
    let h = before(g, u, t);
    h[h.len().saturating_sub(b)..].to_vec()
}

pub fn sample(g: &TemporalGraph, u: NodeId, t: f64, b: usize, sampler: Sampler) -> Vec<usize> {
    match sampler {
        Sampler::Recent => sample_recent(g, u, t, b),
        Sampler::Uniform => {
            let h = before(g, u, t);
            if h.len() <= b {
                return h.to_vec();
            }
            let seed = (u as u64)
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                ^ t.to_bits().rotate_left(17)
                ^ (b as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut picked: Vec<usize> = index::sample(&mut rng, h.len(), b).into_vec();
            picked.sort_unstable();
            picked.into_iter().map(|i| h[i]).collect()
        }
    }
}

/// Interactions sampled for one `(node, time)` query, laid out in `b` slots.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledList {
    pub node: NodeId,
    pub t: f64,
    /// Chronological positions, oldest first; at most `b` long.
    pub interactions: Vec<usize>,
    /// One bit per slot; set for the padded tail past `interactions`.
    pub mask: Vec<bool>,
}

impl SampledList {
    fn new(g: &TemporalGraph, node: NodeId, t: f64, b: usize, sampler: Sampler) -> Self {
        let interactions = sample(g, node, t, b, sampler);
        let mask = (0..b).map(|i| i >= interactions.len()).collect();
        SampledList {
            node,
            t,
            interactions,
            mask,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }
}

/// Recursive neighborhood of a query: `layers[0]` holds the root's list and
/// `layers[k + 1]` one list per interaction found in `layers[k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledContext {
    pub root: (NodeId, f64),
    pub b: usize,
    pub layers: Vec<Vec<SampledList>>,
}

impl SampledContext {
    pub fn total_interactions(&self) -> usize {
        self.layers
            .iter()
            .flatten()
            .map(|l| l.interactions.len())
            .sum()
    }
}

/// Samples `depth` levels of history below `(u, t)`. Each neighbor reached
/// through an interaction at `t_i` is expanded with its own history before
/// `t_i`.
pub fn recursive_sample(
    g: &TemporalGraph,
    u: NodeId,
    t: f64,
    b: usize,
    depth: usize,
    sampler: Sampler,
) -> SampledContext {
    let mut layers = vec![vec![SampledList::new(g, u, t, b, sampler)]];
    for _ in 1..depth {
        let next: Vec<SampledList> = layers
            .last()
            .expect("root layer")
            .iter()
            .flat_map(|list| {
                list.interactions.iter().map(move |&p| {
                    let s = g.interaction(p);
                    SampledList::new(g, s.other(list.node), s.t, b, sampler)
                })
            })
            .collect();
        layers.push(next);
    }
    SampledContext {
        root: (u, t),
        b,
        layers,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn star(n: usize) -> TemporalGraph {
        // Node 0 talks to 1..=n at times 1..=n.
        let triples: Vec<_> = (1..=n).map(|i| (0, i as u64, i as f64)).collect();
        TemporalGraph::from_triples(&triples).unwrap()
    }

    #[test]
    fn under_budget_returns_everything_ascending() {
        let g = star(5);
        let s = sample_recent(&g, 0, 100.0, 20);
        assert_eq!(s, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn over_budget_keeps_latest() {
        let g = star(30);
        let s = sample_recent(&g, 0, 100.0, 20);
        assert_eq!(s.len(), 20);
        let ts: Vec<f64> = s.iter().map(|&p| g.interaction(p).t).collect();
        assert_eq!(ts, (11..=30).map(f64::from).collect::<Vec<_>>());
    }

    #[test]
    fn interaction_at_query_time_is_excluded() {
        let g = star(5);
        let s = sample_recent(&g, 0, 3.0, 20);
        assert!(s.iter().all(|&p| g.interaction(p).t < 3.0));
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn unknown_node_is_cold_start() {
        let g = star(3);
        assert!(sample_recent(&g, 999, 10.0, 5).is_empty());
    }

    #[test]
    fn single_layer_context_has_root_only() {
        let g = star(4);
        let c = recursive_sample(&g, 0, 10.0, 3, 1, Sampler::Recent);
        assert_eq!(c.layers.len(), 1);
        assert_eq!(c.layers[0][0].interactions.len(), 3);
        assert_eq!(c.layers[0][0].mask, vec![false, false, false]);
    }

    #[test]
    fn cold_neighbor_gives_masked_list() {
        // Leaf 1 only interacts at t=1; at its own time it has no history.
        let g = star(2);
        let c = recursive_sample(&g, 0, 10.0, 4, 2, Sampler::Recent);
        assert_eq!(c.layers[1].len(), 2);
        let first = &c.layers[1][0];
        assert!(first.is_empty());
        assert_eq!(first.mask, vec![true; 4]);
        assert!(c.total_interactions() <= 1 + 2 + 2 * 4);
    }

    #[test]
    fn uniform_sampler_is_deterministic_and_sorted() {
        let g = star(40);
        let a = sample(&g, 0, 100.0, 7, Sampler::Uniform);
        let b = sample(&g, 0, 100.0, 7, Sampler::Uniform);
        assert_eq!(a, b);
        assert_eq!(a.len(), 7);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
    }

    fn arb_graph() -> impl Strategy<Value = TemporalGraph> {
        prop::collection::vec((0u64..8, 0u64..8, 0u32..50), 1..60).prop_map(|raw| {
            let triples: Vec<_> = raw.into_iter().map(|(s, d, t)| (s, d, f64::from(t))).collect();
            TemporalGraph::from_triples(&triples).unwrap()
        })
    }

    proptest! {
        #[test]
        fn contexts_never_leak(g in arb_graph(), node in 0usize..8, t in 0u32..60, b in 1usize..6, uniform in any::<bool>()) {
            let sampler = if uniform { Sampler::Uniform } else { Sampler::Recent };
            let c = recursive_sample(&g, node, f64::from(t), b, 2, sampler);
            for list in c.layers.iter().flatten() {
                prop_assert!(list.interactions.len() <= b);
                prop_assert_eq!(list.mask.len(), b);
                for (slot, &m) in list.mask.iter().enumerate() {
                    prop_assert_eq!(m, slot >= list.interactions.len());
                }
                let ts: Vec<f64> = list.interactions.iter().map(|&p| g.interaction(p).t).collect();
                prop_assert!(ts.iter().all(|&x| x < list.t));
                prop_assert!(ts.windows(2).all(|w| w[0] <= w[1]));
                prop_assert!(list.interactions.iter().all(|&p| g.interaction(p).touches(list.node)));
            }
            prop_assert!(c.total_interactions() <= 1 + b + b * b);
        }
    }
}
