//! Adam with L2 weight decay, and validation-driven early stopping.

use crate::error::{Error, Result};
use crate::tensor::{Gradients, ParamStore, Tensor};

#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: i32,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64, weight_decay: f64) -> Self {
        let zeros = || store.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.step
    }

    /// One bias-corrected update. `weight_decay · θ` is added to each
    /// gradient first; a missing gradient counts as zero.
    ///
    /// Fails without touching any parameter if a gradient is not finite.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<()> {
        if let Some(id) = grads.first_non_finite() {
            return Err(Error::NonFiniteGradient(format!(
                "gradient of `{}` is not finite",
                store.name(id)
            )));
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let ids: Vec<_> = store.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            let g = grads.get(id);
            let theta = store.get_mut(id).data_mut();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for j in 0..theta.len() {
                let gj = g.map_or(0.0, |g| g.data()[j]) + self.weight_decay * theta[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                theta[j] -= self.lr * (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
            }
        }
        if !store.all_finite() {
            return Err(Error::NonFiniteGradient("parameters became non-finite".into()));
        }
        Ok(())
    }
}

/// Outcome of one validation check.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Stops once the monitored metric has not strictly improved for
/// `patience` consecutive epochs.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: Option<usize>,
    bad_epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience: patience.max(1),
            best: f64::NEG_INFINITY,
            best_epoch: None,
            bad_epochs: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, metric: f64) -> StopDecision {
        if metric > self.best {
            self.best = metric;
            self.best_epoch = Some(epoch);
            self.bad_epochs = 0;
            return StopDecision::Improved;
        }
        self.bad_epochs += 1;
        if self.bad_epochs >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(x: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("x", Tensor::scalar(x));
        s
    }

    fn grad(store: &ParamStore, g: f64) -> Gradients {
        let mut grads = Gradients::zeros_like(store);
        grads.accumulate(store.id("x").unwrap(), &Tensor::scalar(g));
        grads
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = 1 and v̂ = 1 after bias correction, so Δ = lr / (1 + eps).
        let mut s = scalar_store(1.0);
        let mut adam = Adam::new(&s, 0.01, 0.0);
        let g = grad(&s, 1.0);
        adam.step(&mut s, &g).unwrap();
        let x = s.get(s.id("x").unwrap()).item();
        assert!((x - (1.0 - 0.01 / (1.0 + 1e-8))).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut s = scalar_store(0.7);
        let mut adam = Adam::new(&s, 0.01, 0.0);
        for _ in 0..5 {
            let g = grad(&s, 0.0);
            adam.step(&mut s, &g).unwrap();
        }
        assert_eq!(s.get(s.id("x").unwrap()).item(), 0.7);
    }

    #[test]
    fn weight_decay_shrinks_toward_zero() {
        let mut s = scalar_store(0.7);
        let mut adam = Adam::new(&s, 0.01, 0.1);
        for _ in 0..10 {
            let g = grad(&s, 0.0);
            adam.step(&mut s, &g).unwrap();
        }
        let x = s.get(s.id("x").unwrap()).item();
        assert!(x < 0.7 && x > 0.0);
    }

    #[test]
    fn nan_gradient_aborts_untouched() {
        let mut s = scalar_store(0.7);
        let mut adam = Adam::new(&s, 0.01, 0.0);
        let g = grad(&s, f64::NAN);
        let err = adam.step(&mut s, &g).unwrap_err();
        assert!(err.to_string().contains('x'));
        assert_eq!(s.get(s.id("x").unwrap()).item(), 0.7);
        assert_eq!(adam.steps_taken(), 0);
    }

    #[test]
    fn patience_three_example() {
        let mut es = EarlyStopping::new(3);
        let auc = [0.7, 0.8, 0.79, 0.78, 0.77];
        let decisions: Vec<_> = auc.iter().enumerate().map(|(e, &a)| es.observe(e + 1, a)).collect();
        assert_eq!(decisions[4], StopDecision::Stop);
        assert!(decisions[..4].iter().all(|d| *d != StopDecision::Stop));
        assert_eq!(es.best_epoch(), Some(2));
    }

    #[test]
    fn monotone_metric_never_stops() {
        let mut es = EarlyStopping::new(3);
        for e in 0..50 {
            assert_eq!(es.observe(e, e as f64), StopDecision::Improved);
        }
    }
}
