//! Negative-sampling link training with Adam and validation early stopping.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::LinkMetrics;
use crate::graph::{negative_sample, NegativeMode, NodeId, TemporalGraph};
use crate::model::{Session, TipGnn};
use crate::optim::{Adam, EarlyStopping, StopDecision};
use crate::tensor::{Gradients, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Negatives drawn per positive.
    pub negatives: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Visit batches in random order instead of chronologically.
    pub shuffle: bool,
    /// Samples sharing one tape; bounds memory without changing results.
    pub chunk_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            weight_decay: 1e-5,
            batch_size: 200,
            negatives: 1,
            max_epochs: 50,
            patience: 3,
            seed: 0,
            shuffle: false,
            chunk_size: 8,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse `{value}` for `{key}`")))
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("lr = {} must be positive", self.lr)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        if self.patience == 0 || self.negatives == 0 || self.batch_size == 0 || self.chunk_size == 0 {
            return Err(Error::Config(
                "patience, negatives, batch_size and chunk_size must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Sets one field from text; `Ok(false)` for keys owned elsewhere.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "lr" => self.lr = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "negatives" => self.negatives = parse(key, value)?,
            "max_epochs" => self.max_epochs = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "shuffle" => self.shuffle = parse(key, value)?,
            "chunk_size" => self.chunk_size = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("lr", self.lr.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("negatives", self.negatives.to_string()),
            ("max_epochs", self.max_epochs.to_string()),
            ("patience", self.patience.to_string()),
            ("seed", self.seed.to_string()),
            ("shuffle", self.shuffle.to_string()),
            ("chunk_size", self.chunk_size.to_string()),
        ]
    }
}

/// One positive interaction with its corrupted destinations.
#[derive(Clone, Debug, PartialEq)]
pub struct LinkSample {
    pub u: NodeId,
    pub v: NodeId,
    pub t: f64,
    pub negatives: Vec<NodeId>,
}

/// Adds `−[log σ(s⁺) + Σ_j log σ(−s⁻_j)] / denom` for every sample to the
/// session tape and returns the scalar.
pub fn link_loss(session: &mut Session<'_>, samples: &[LinkSample], denom: f64) -> Result<Var> {
    if samples.is_empty() {
        return Err(Error::Empty("empty batch".into()));
    }
    let mut terms = Vec::new();
    for s in samples {
        let pos = session.link_logit(s.u, s.v, s.t)?;
        terms.push(session.tape.log_sigmoid(pos));
        for &j in &s.negatives {
            let neg = session.link_logit(s.u, j, s.t)?;
            let flipped = session.tape.scale(neg, -1.0);
            terms.push(session.tape.log_sigmoid(flipped));
        }
    }
    let row = session.tape.concat(&terms)?;
    let total = session.tape.sum(row);
    Ok(session.tape.scale(total, -1.0 / denom))
}

/// Samples drawn for `positions` with uniform training negatives.
pub fn draw_samples(
    g: &TemporalGraph,
    positions: &[usize],
    negatives: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<LinkSample>> {
    positions
        .iter()
        .map(|&p| {
            let s = g.interaction(p);
            let negatives = (0..negatives)
                .map(|_| negative_sample(g, s.src, NegativeMode::Train, rng))
                .collect::<Result<_>>()?;
            Ok(LinkSample { u: s.src, v: s.dst, t: s.t, negatives })
        })
        .collect()
}

/// Loss value and parameter gradients of one batch, evaluated in chunks of
/// `chunk` samples with one tape each.
pub fn batch_gradients(
    model: &TipGnn,
    g: &TemporalGraph,
    samples: &[LinkSample],
    training: bool,
    chunk: usize,
    seed: u64,
) -> Result<(f64, Gradients)> {
    let mut grads = Gradients::zeros_like(model.params());
    let mut loss = 0.0;
    let denom = samples.len() as f64;
    for (c, part) in samples.chunks(chunk.max(1)).enumerate() {
        let mut session = model.session(g, training, mix(seed, c as u64));
        let l = link_loss(&mut session, part, denom)?;
        session.tape.backward(l)?;
        loss += session.tape.value(l).item();
        session.tape.accumulate_into(&mut grads);
    }
    Ok((loss, grads))
}

pub(crate) fn mix(a: u64, b: u64) -> u64 {
    a.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(29) ^ b.wrapping_mul(0xBF58_476D_1CE4_E5B9)
}

/// Held-out positives with one fixed negative each.
#[derive(Clone, Debug)]
pub struct EvalSet {
    pub samples: Vec<LinkSample>,
}

impl EvalSet {
    /// Draws one evaluation negative per position (never a node the source
    /// interacts with anywhere). Sources without any eligible node are
    /// skipped.
    pub fn draw(g: &TemporalGraph, positions: &[usize], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut samples = Vec::with_capacity(positions.len());
        let mut skipped = 0;
        for &p in positions {
            let s = g.interaction(p);
            match negative_sample(g, s.src, NegativeMode::Eval, &mut rng) {
                Ok(j) => samples.push(LinkSample { u: s.src, v: s.dst, t: s.t, negatives: vec![j] }),
                Err(Error::NoNegative { .. }) => skipped += 1,
                Err(e) => return Err(e),
            }
        }
        if skipped > 0 {
            log::warn!("{skipped} evaluation interactions have no eligible negative");
        }
        Ok(EvalSet { samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Scores every positive and negative of `set` in evaluation mode.
pub fn score_links(model: &TipGnn, g: &TemporalGraph, set: &EvalSet, chunk: usize) -> Result<(Vec<f64>, Vec<bool>)> {
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for part in set.samples.chunks(chunk.max(1)) {
        let mut session = model.session(g, false, 0);
        for s in part {
            let targets = std::iter::once((s.v, true)).chain(s.negatives.iter().map(|&j| (j, false)));
            for (v, label) in targets {
                let logit = session.link_logit(s.u, v, s.t)?;
                let p = session.tape.sigmoid(logit);
                scores.push(session.tape.value(p).item());
                labels.push(label);
            }
        }
    }
    Ok((scores, labels))
}

pub fn evaluate_links(model: &TipGnn, g: &TemporalGraph, set: &EvalSet) -> Result<LinkMetrics> {
    if set.is_empty() {
        return Err(Error::Empty("evaluation set is empty".into()));
    }
    let (scores, labels) = score_links(model, g, set, 32)?;
    LinkMetrics::compute(&scores, &labels)
}

/// Per-epoch training record.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub val_accuracy: f64,
    pub val_auc: f64,
    pub val_ap: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FitReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_auc: f64,
    /// Training ended because `max_epochs` ran out, not by early stopping.
    pub hit_max_epochs: bool,
}

/// Training data: interactions of `graph` at `positions`, all of which
/// must lie below `boundary`.
#[derive(Clone, Copy, Debug)]
pub struct TrainSet<'a> {
    pub graph: &'a TemporalGraph,
    pub positions: &'a [usize],
    pub boundary: usize,
}

/// Contiguous batches of `positions`, optionally visited in shuffled order.
/// Fails if any position reaches `boundary`.
pub fn make_batches(
    positions: &[usize],
    batch_size: usize,
    boundary: usize,
    shuffle: Option<&mut ChaCha8Rng>,
) -> Result<Vec<Vec<usize>>> {
    if let Some(&p) = positions.iter().find(|&&p| p >= boundary) {
        return Err(Error::InvalidArgument(format!(
            "training position {p} is at or beyond the boundary {boundary}"
        )));
    }
    let mut batches: Vec<Vec<usize>> = positions.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect();
    if let Some(rng) = shuffle {
        batches.shuffle(rng);
    }
    Ok(batches)
}

/// Trains until validation AUC stops improving for `patience` epochs, then
/// restores the best parameters. `on_epoch` sees each record as it is made.
pub fn fit(
    model: &mut TipGnn,
    train: TrainSet<'_>,
    val_graph: &TemporalGraph,
    val: &EvalSet,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<FitReport> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(model.params(), cfg.lr, cfg.weight_decay);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = model.params().clone();
    let mut epochs = Vec::new();
    let mut stopped = false;

    for epoch in 1..=cfg.max_epochs {
        let started = Instant::now();
        let batches = make_batches(
            train.positions,
            cfg.batch_size,
            train.boundary,
            cfg.shuffle.then_some(&mut rng),
        )?;
        let mut loss_sum = 0.0;
        for (b, batch) in batches.iter().enumerate() {
            let samples = draw_samples(train.graph, batch, cfg.negatives, &mut rng)?;
            let seed = mix(mix(cfg.seed, epoch as u64), b as u64);
            let (loss, grads) = batch_gradients(model, train.graph, &samples, true, cfg.chunk_size, seed)?;
            adam.step(model.params_mut(), &grads).map_err(|e| {
                Error::NonFiniteGradient(format!("epoch {epoch}, batch {b}: {e}"))
            })?;
            loss_sum += loss;
        }
        let metrics = evaluate_links(model, val_graph, val)?;
        let record = EpochRecord {
            epoch,
            loss: loss_sum / batches.len().max(1) as f64,
            val_accuracy: metrics.accuracy,
            val_auc: metrics.auc,
            val_ap: metrics.ap,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: loss {:.4}, val auc {:.4}, val acc {:.4}",
            record.loss,
            record.val_auc,
            record.val_accuracy
        );
        on_epoch(&record);
        epochs.push(record);
        match stopper.observe(epoch, metrics.auc) {
            StopDecision::Improved => best = model.params().clone(),
            StopDecision::Continue => {}
            StopDecision::Stop => {
                stopped = true;
                break;
            }
        }
    }
    *model.params_mut() = best;
    Ok(FitReport {
        epochs,
        best_epoch: stopper.best_epoch().unwrap_or(0),
        best_val_auc: stopper.best(),
        hit_max_epochs: !stopped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{NodeFeatureMode, TipGnnConfig};

    fn tiny_model(g: &TemporalGraph) -> TipGnn {
        let cfg = TipGnnConfig {
            d: 4,
            d_t: 4,
            heads: 1,
            layers: 1,
            neighbors: 3,
            dropout: 0.0,
            node_features: NodeFeatureMode::Learned,
            ..Default::default()
        };
        TipGnn::new(cfg, g, &mut ChaCha8Rng::seed_from_u64(1)).unwrap()
    }

    #[test]
    fn even_predictions_cost_two_log_two() {
        let g = TemporalGraph::from_triples(&[(0, 1, 1.0), (1, 2, 2.0)]).unwrap();
        let mut m = tiny_model(&g);
        for id in m.params().ids().collect::<Vec<_>>() {
            m.params_mut().get_mut(id).data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
        let mut s = m.session(&g, false, 0);
        let samples = vec![
            LinkSample { u: 0, v: 1, t: 3.0, negatives: vec![2] },
            LinkSample { u: 1, v: 2, t: 3.0, negatives: vec![0] },
        ];
        let l = link_loss(&mut s, &samples, 2.0).unwrap();
        assert!((s.tape.value(l).item() - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
        assert!(link_loss(&mut s, &[], 1.0).is_err());
    }

    #[test]
    fn chunking_does_not_change_gradients() {
        let triples: Vec<_> = (0..12).map(|i| ((i % 4) as u64, ((i + 1) % 5) as u64, i as f64)).collect();
        let g = TemporalGraph::from_triples(&triples).unwrap();
        let m = tiny_model(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let samples = draw_samples(&g, &(4..12).collect::<Vec<_>>(), 2, &mut rng).unwrap();
        let (l1, g1) = batch_gradients(&m, &g, &samples, false, 1, 0).unwrap();
        let (l8, g8) = batch_gradients(&m, &g, &samples, false, 8, 0).unwrap();
        assert!((l1 - l8).abs() < 1e-12);
        for ((_, a), (_, b)) in g1.iter().zip(g8.iter()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn batches_respect_the_boundary() {
        let pos: Vec<usize> = (0..10).collect();
        let b = make_batches(&pos, 4, 10, None).unwrap();
        assert_eq!(b, vec![vec![0, 1, 2, 3], vec![4, 5, 6, 7], vec![8, 9]]);
        assert!(make_batches(&pos, 4, 9, None).is_err());
    }

    #[test]
    fn fit_is_reproducible_and_restores_best() {
        let triples: Vec<_> = (0..60).map(|i| ((i % 5) as u64, 5 + ((i * 3) % 7) as u64, i as f64)).collect();
        let g = TemporalGraph::from_triples(&triples).unwrap();
        let train: Vec<usize> = (0..42).collect();
        let val_pos: Vec<usize> = (42..51).collect();
        let cfg = TrainConfig { lr: 1e-2, batch_size: 10, max_epochs: 4, seed: 9, ..Default::default() };
        let run = || {
            let mut m = tiny_model(&g);
            let val = EvalSet::draw(&g, &val_pos, 5).unwrap();
            let set = TrainSet { graph: &g, positions: &train, boundary: 42 };
            let r = fit(&mut m, set, &g, &val, &cfg, |_| {}).unwrap();
            let after = evaluate_links(&m, &g, &val).unwrap().auc;
            (r, after)
        };
        let (a, auc_a) = run();
        let (b, _) = run();
        assert_eq!(
            a.epochs.iter().map(|e| e.loss).collect::<Vec<_>>(),
            b.epochs.iter().map(|e| e.loss).collect::<Vec<_>>()
        );
        assert_eq!(auc_a, a.best_val_auc);
    }
}
