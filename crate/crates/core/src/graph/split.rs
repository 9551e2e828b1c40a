use std::collections::HashSet;
use std::ops::Range;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{NodeId, TemporalGraph};
use crate::error::{Error, Result};

pub const DEFAULT_RATIOS: (f64, f64, f64) = (0.70, 0.15, 0.15);

/// Contiguous ranges over the chronologically sorted interaction list.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

/// Splits at `floor(r_train·|E|)` and `floor((r_train + r_val)·|E|)`.
pub fn chronological_split(g: &TemporalGraph, ratios: (f64, f64, f64)) -> Result<Split> {
    let (a, b, c) = ratios;
    if [a, b, c].iter().any(|r| !(0.0..=1.0).contains(r)) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split ratios {ratios:?} must be non-negative and sum to 1"
        )));
    }
    let m = g.num_edges();
    if m < 3 {
        return Err(Error::Empty(format!("a split needs at least 3 interactions, got {m}")));
    }
    // The epsilon absorbs products such as 0.85 * 100 = 84.999...
    let cut = |r: f64| ((r * m as f64) + 1e-9).floor() as usize;
    let first = cut(a).min(m);
    let second = cut(a + b).clamp(first, m);
    Ok(Split {
        train: 0..first,
        val: first..second,
        test: second..m,
    })
}

/// Validation and test positions after filtering.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FilteredEval {
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

fn train_nodes(g: &TemporalGraph, train: Range<usize>) -> HashSet<NodeId> {
    g.interactions()[train]
        .iter()
        .flat_map(|s| [s.src, s.dst])
        .collect()
}

/// Keeps only validation/test interactions whose endpoints both appear in
/// the training range.
pub fn remove_new_nodes(g: &TemporalGraph, split: &Split) -> FilteredEval {
    let seen = train_nodes(g, split.train.clone());
    let keep = |range: Range<usize>| -> Vec<usize> {
        range
            .filter(|&p| {
                let s = g.interaction(p);
                seen.contains(&s.src) && seen.contains(&s.dst)
            })
            .collect()
    };
    let out = FilteredEval {
        val: keep(split.val.clone()),
        test: keep(split.test.clone()),
    };
    if out.val.is_empty() {
        log::warn!("validation set is empty after removing unseen nodes");
    }
    if out.test.is_empty() {
        log::warn!("test set is empty after removing unseen nodes");
    }
    out
}

/// Training positions with hidden nodes removed, and evaluation positions
/// restricted to interactions that touch a hidden node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InductiveSplit {
    pub hidden: Vec<NodeId>,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl InductiveSplit {
    pub fn is_hidden(&self, u: NodeId) -> bool {
        self.hidden.binary_search(&u).is_ok()
    }
}

/// Hides `round(fraction·|V|)` uniformly chosen nodes from training.
pub fn hide_nodes_for_inductive(
    g: &TemporalGraph,
    split: &Split,
    fraction: f64,
    seed: u64,
) -> Result<InductiveSplit> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "hidden fraction {fraction} must lie in (0, 1)"
        )));
    }
    let n = g.num_nodes();
    let count = (fraction * n as f64).round() as usize;
    if count == 0 {
        return Err(Error::InvalidArgument(format!(
            "hiding {fraction} of {n} nodes hides nothing"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hidden = index::sample(&mut rng, n, count).into_vec();
    hidden.sort_unstable();
    let is_hidden = |u: NodeId| hidden.binary_search(&u).is_ok();
    let touches = |p: &usize| {
        let s = g.interaction(*p);
        is_hidden(s.src) || is_hidden(s.dst)
    };
    let train = split.train.clone().filter(|p| !touches(p)).collect();
    let val = split.val.clone().filter(touches).collect();
    let test = split.test.clone().filter(touches).collect();
    Ok(InductiveSplit {
        hidden,
        train,
        val,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn chain(m: usize) -> TemporalGraph {
        let triples: Vec<_> = (0..m).map(|i| ((i % 7) as u64, ((i + 1) % 7) as u64, i as f64)).collect();
        TemporalGraph::from_triples(&triples).unwrap()
    }

    #[test]
    fn split_hundred() {
        let s = chronological_split(&chain(100), DEFAULT_RATIOS).unwrap();
        assert_eq!((s.train, s.val, s.test), (0..70, 70..85, 85..100));
    }

    #[test]
    fn split_ten() {
        let s = chronological_split(&chain(10), DEFAULT_RATIOS).unwrap();
        assert_eq!((s.train, s.val, s.test), (0..7, 7..8, 8..10));
    }

    #[test]
    fn split_equal_timestamps_follows_edge_order() {
        let triples: Vec<_> = (0..10).map(|i| (i as u64, (i + 1) as u64, 5.0)).collect();
        let g = TemporalGraph::from_triples(&triples).unwrap();
        let s = chronological_split(&g, DEFAULT_RATIOS).unwrap();
        assert_eq!(s.train, 0..7);
        assert_eq!(g.external_id(g.interaction(7).src), 7);
    }

    #[test]
    fn split_needs_three_edges() {
        assert!(chronological_split(&chain(2), DEFAULT_RATIOS).is_err());
    }

    #[test]
    fn new_node_test_interactions_dropped() {
        // Node 99 first appears at position 9 of 10.
        let mut triples: Vec<_> = (0..9).map(|i| ((i % 3) as u64, ((i + 1) % 3) as u64, i as f64)).collect();
        triples.push((0, 99, 9.0));
        let g = TemporalGraph::from_triples(&triples).unwrap();
        let s = chronological_split(&g, DEFAULT_RATIOS).unwrap();
        let f = remove_new_nodes(&g, &s);
        assert_eq!(f.test, vec![8]);
    }

    #[test]
    fn seen_endpoints_unchanged() {
        let g = chain(100);
        let s = chronological_split(&g, DEFAULT_RATIOS).unwrap();
        let f = remove_new_nodes(&g, &s);
        assert_eq!(f.test, s.test.collect::<Vec<_>>());
        assert_eq!(f.val, s.val.collect::<Vec<_>>());
    }

    #[test]
    fn bipartite_new_side_empties_test() {
        let mut triples: Vec<_> = (0..7).map(|i| (1, 10 + i as u64, i as f64)).collect();
        triples.extend((7..10).map(|i| (2, 100 + i as u64, i as f64)));
        let g = TemporalGraph::from_triples(&triples).unwrap();
        let s = chronological_split(&g, DEFAULT_RATIOS).unwrap();
        let f = remove_new_nodes(&g, &s);
        assert!(f.test.is_empty());
        assert!(f.val.is_empty());
    }

    #[test]
    fn hides_exact_count_deterministically() {
        let triples: Vec<_> = (0..500).map(|i| ((i % 100) as u64, ((i * 7 + 1) % 100) as u64, i as f64)).collect();
        let g = TemporalGraph::from_triples(&triples).unwrap();
        assert_eq!(g.num_nodes(), 100);
        let s = chronological_split(&g, DEFAULT_RATIOS).unwrap();
        let a = hide_nodes_for_inductive(&g, &s, 0.10, 3).unwrap();
        let b = hide_nodes_for_inductive(&g, &s, 0.10, 3).unwrap();
        assert_eq!(a.hidden.len(), 10);
        assert_eq!(a, b);
        for &p in &a.train {
            let i = g.interaction(p);
            assert!(!a.is_hidden(i.src) && !a.is_hidden(i.dst));
        }
        for &p in a.val.iter().chain(&a.test) {
            let i = g.interaction(p);
            assert!(a.is_hidden(i.src) || a.is_hidden(i.dst));
        }
    }

    #[test]
    fn train_only_hidden_node_contributes_nothing() {
        // Node 50 only interacts during the training range.
        let mut triples: Vec<_> = (0..100).map(|i| ((i % 5) as u64, ((i + 1) % 5) as u64, i as f64)).collect();
        triples[0] = (50, 1, 0.0);
        let g = TemporalGraph::from_triples(&triples).unwrap();
        let s = chronological_split(&g, DEFAULT_RATIOS).unwrap();
        let mut found = false;
        for seed in 0..200 {
            let ind = hide_nodes_for_inductive(&g, &s, 0.2, seed).unwrap();
            if ind.hidden == vec![g.node_id(50).unwrap()] {
                assert!(ind.val.is_empty() && ind.test.is_empty());
                found = true;
                break;
            }
        }
        assert!(found);
    }

    #[test]
    fn zero_hidden_rejected() {
        let g = chain(20);
        let s = chronological_split(&g, DEFAULT_RATIOS).unwrap();
        assert!(hide_nodes_for_inductive(&g, &s, 0.01, 0).is_err());
        assert!(hide_nodes_for_inductive(&g, &s, 1.0, 0).is_err());
    }

    proptest! {
        #[test]
        fn split_partitions(m in 3usize..2000) {
            let s = chronological_split(&chain(m), DEFAULT_RATIOS).unwrap();
            prop_assert_eq!(s.train.start, 0);
            prop_assert_eq!(s.train.end, s.val.start);
            prop_assert_eq!(s.val.end, s.test.start);
            prop_assert_eq!(s.test.end, m);
        }

        #[test]
        fn filtered_endpoints_are_train_endpoints(raw in prop::collection::vec((0u64..12, 0u64..12), 3..80)) {
            let triples: Vec<_> = raw.iter().enumerate().map(|(i, &(a, b))| (a, b, i as f64)).collect();
            let g = TemporalGraph::from_triples(&triples).unwrap();
            let s = chronological_split(&g, DEFAULT_RATIOS).unwrap();
            let seen = train_nodes(&g, s.train.clone());
            let f = remove_new_nodes(&g, &s);
            for p in f.val.iter().chain(&f.test) {
                let i = g.interaction(*p);
                prop_assert!(seen.contains(&i.src) && seen.contains(&i.dst));
            }
        }
    }
}
