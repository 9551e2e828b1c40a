//! Downstream binary node classification on frozen temporal embeddings.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::metrics::auc_roc;
use crate::error::{Error, Result};
use crate::optim::{Adam, EarlyStopping, StopDecision};
use crate::tensor::{glorot_uniform, Gradients, ParamId, ParamStore, Tape, Tensor, Var};

/// Embedding rows with binary labels, in chronological order.
#[derive(Clone, Debug, Default)]
pub struct LabeledEmbeddings {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<bool>,
}

impl LabeledEmbeddings {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassifierConfig {
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            hidden: vec![80, 10],
            lr: 1e-3,
            weight_decay: 0.0,
            batch_size: 200,
            max_epochs: 200,
            patience: 10,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassifierReport {
    pub val_auc: f64,
    pub test_auc: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

/// Batch indices with positives duplicated (uniformly, with replacement)
/// until they match the negatives. A batch without positives borrows from
/// `pool`.
pub fn oversample<R: Rng + ?Sized>(batch: &[usize], labels: &[bool], pool: &[usize], rng: &mut R) -> Vec<usize> {
    let pos: Vec<usize> = batch.iter().copied().filter(|&i| labels[i]).collect();
    let neg = batch.len() - pos.len();
    let mut out = batch.to_vec();
    let source = if pos.is_empty() { pool } else { &pos[..] };
    if source.is_empty() {
        return out;
    }
    let have = pos.len();
    for _ in have..neg {
        out.push(*source.choose(rng).expect("non-empty"));
    }
    out
}

struct Mlp {
    layers: Vec<(ParamId, ParamId)>,
}

impl Mlp {
    fn new(store: &mut ParamStore, widths: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let weight = store.add(format!("mlp{i}.w"), glorot_uniform(w[0], w[1], rng));
                let bias = store.add(format!("mlp{i}.b"), Tensor::zeros(&[1, w[1]]));
                (weight, bias)
            })
            .collect();
        Mlp { layers }
    }

    /// Logits as an `[n, 1]` column.
    fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            if i > 0 {
                h = tape.relu(h);
            }
            let w = tape.param(store, w);
            let b = tape.param(store, b);
            let y = tape.matmul(h, w)?;
            h = tape.add(y, b)?;
        }
        Ok(h)
    }

    fn scores(&self, store: &ParamStore, data: &LabeledEmbeddings, idx: &[usize]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let x = tape.constant(rows(data, idx)?);
        let z = self.forward(&mut tape, store, x)?;
        let p = tape.sigmoid(z);
        Ok(tape.value(p).data().to_vec())
    }
}

fn rows(data: &LabeledEmbeddings, idx: &[usize]) -> Result<Tensor> {
    let d = data.dim();
    let mut buf = Vec::with_capacity(idx.len() * d);
    for &i in idx {
        if data.features[i].len() != d {
            return Err(Error::InvalidArgument(format!(
                "embedding {i} has width {}, expected {d}",
                data.features[i].len()
            )));
        }
        buf.extend_from_slice(&data.features[i]);
    }
    Tensor::new(vec![idx.len(), d], buf)
}

/// Mean binary cross-entropy written with log-sigmoids.
fn bce(tape: &mut Tape, logits: Var, labels: &[bool]) -> Result<Var> {
    let y = Tensor::new(
        vec![labels.len(), 1],
        labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect(),
    )?;
    let not_y = Tensor::new(vec![labels.len(), 1], y.data().iter().map(|v| 1.0 - v).collect())?;
    let y = tape.constant(y);
    let not_y = tape.constant(not_y);
    let pos = tape.log_sigmoid(logits);
    let flipped = tape.scale(logits, -1.0);
    let neg = tape.log_sigmoid(flipped);
    let a = tape.mul(pos, y)?;
    let b = tape.mul(neg, not_y)?;
    let ll = tape.add(a, b)?;
    let m = tape.mean(ll);
    Ok(tape.scale(m, -1.0))
}

/// Trains a `d → hidden… → 1` classifier on the chronological first 70% of
/// records, early-stops on validation AUC over the next 15%, and reports
/// AUC on the rest.
pub fn node_classification(data: &LabeledEmbeddings, cfg: &ClassifierConfig) -> Result<ClassifierReport> {
    let n = data.len();
    if data.features.len() != n {
        return Err(Error::InvalidArgument("features and labels differ in length".into()));
    }
    if n < 3 {
        return Err(Error::Empty(format!("need at least 3 labeled records, got {n}")));
    }
    let cut1 = ((0.70 * n as f64) + 1e-9).floor() as usize;
    let cut2 = ((0.85 * n as f64) + 1e-9).floor() as usize;
    let train: Vec<usize> = (0..cut1).collect();
    let val: Vec<usize> = (cut1..cut2).collect();
    let test: Vec<usize> = (cut2..n).collect();
    let pool: Vec<usize> = train.iter().copied().filter(|&i| data.labels[i]).collect();
    if pool.is_empty() {
        return Err(Error::InvalidArgument("no positive labels in the training range".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParamStore::new();
    let mut widths = vec![data.dim()];
    widths.extend(&cfg.hidden);
    widths.push(1);
    let mlp = Mlp::new(&mut store, &widths, &mut rng);
    let mut adam = Adam::new(&store, cfg.lr, cfg.weight_decay);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = store.clone();
    let labels_of = |idx: &[usize]| idx.iter().map(|&i| data.labels[i]).collect::<Vec<_>>();

    // Validation AUC drives stopping; if validation has a single class the
    // negated loss stands in.
    let val_labels = labels_of(&val);
    let val_score = |store: &ParamStore| -> Result<f64> {
        if val.is_empty() {
            return Ok(0.0);
        }
        let s = mlp.scores(store, data, &val)?;
        match auc_roc(&s, &val_labels) {
            Ok(a) => Ok(a),
            Err(_) => {
                let mut tape = Tape::new();
                let x = tape.constant(rows(data, &val)?);
                let z = mlp.forward(&mut tape, store, x)?;
                let l = bce(&mut tape, z, &val_labels)?;
                Ok(-tape.value(l).item())
            }
        }
    };

    let mut epochs_run = 0;
    let mut order = train.clone();
    for epoch in 1..=cfg.max_epochs {
        epochs_run = epoch;
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let idx = oversample(chunk, &data.labels, &pool, &mut rng);
            let mut tape = Tape::new();
            let x = tape.constant(rows(data, &idx)?);
            let z = mlp.forward(&mut tape, &store, x)?;
            let loss = bce(&mut tape, z, &labels_of(&idx))?;
            tape.backward(loss)?;
            let mut grads = Gradients::zeros_like(&store);
            tape.accumulate_into(&mut grads);
            adam.step(&mut store, &grads)?;
        }
        match stopper.observe(epoch, val_score(&store)?) {
            StopDecision::Improved => best = store.clone(),
            StopDecision::Continue => {}
            StopDecision::Stop => break,
        }
    }
    let test_scores = mlp.scores(&best, data, &test)?;
    Ok(ClassifierReport {
        val_auc: val_score(&best)?,
        test_auc: auc_roc(&test_scores, &labels_of(&test))?,
        best_epoch: stopper.best_epoch().unwrap_or(0),
        epochs_run,
    })
}
