//! Central finite-difference verification of tape gradients.

use super::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::Result;

/// Gradients smaller than this are compared in absolute rather than relative
/// terms; below it finite differences are dominated by rounding.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct CoordError {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// Coordinates whose relative error reached the tolerance.
    pub failures: Vec<CoordError>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    fn record(&mut self, index: usize, analytic: f64, numeric: f64, tol: f64) {
        let scale = analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
        let rel_error = (analytic - numeric).abs() / scale;
        self.checked += 1;
        self.max_rel_error = self.max_rel_error.max(rel_error);
        if rel_error >= tol {
            self.failures.push(CoordError {
                index,
                analytic,
                numeric,
                rel_error,
            });
        }
    }
}

/// Compares the tape gradient of scalar `f(x)` against
/// `(f(x + ε) - f(x - ε)) / 2ε` coordinate by coordinate.
///
/// `f` must be deterministic. With `tol == 0` every coordinate is listed.
pub fn finite_diff_check<F>(f: F, x: &Tensor, eps: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone(), true);
    let out = f(&mut tape, xv)?;
    tape.backward(out)?;
    let analytic = tape.grad(xv).cloned().unwrap_or_else(|| Tensor::zeros(x.shape()));

    let eval = |probe: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.leaf(probe.clone(), false);
        let out = f(&mut tape, v)?;
        Ok(tape.value(out).item())
    };

    let mut report = GradCheckReport::default();
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = eval(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let minus = eval(&probe)?;
        probe.data_mut()[i] = orig;
        report.record(i, analytic.data()[i], (plus - minus) / (2.0 * eps), tol);
    }
    Ok(report)
}

/// Finite-difference check of a loss against stored parameters, one report
/// per requested parameter.
pub fn finite_diff_params<F>(
    store: &ParamStore,
    ids: &[ParamId],
    f: F,
    eps: f64,
    tol: f64,
) -> Result<Vec<(ParamId, GradCheckReport)>>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = f(&mut tape, store)?;
    tape.backward(out)?;
    let analytic: Vec<Tensor> = ids
        .iter()
        .map(|&id| {
            tape.param_grads()
                .find(|(p, _)| *p == id)
                .map(|(_, g)| g.clone())
                .unwrap_or_else(|| Tensor::zeros(store.get(id).shape()))
        })
        .collect();
    drop(tape);

    let eval = |s: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let out = f(&mut tape, s)?;
        Ok(tape.value(out).item())
    };

    let mut probe = store.clone();
    let mut reports = Vec::with_capacity(ids.len());
    for (&id, grad) in ids.iter().zip(&analytic) {
        let mut report = GradCheckReport::default();
        for i in 0..grad.numel() {
            let orig = probe.get(id).data()[i];
            probe.get_mut(id).data_mut()[i] = orig + eps;
            let plus = eval(&probe)?;
            probe.get_mut(id).data_mut()[i] = orig - eps;
            let minus = eval(&probe)?;
            probe.get_mut(id).data_mut()[i] = orig;
            report.record(i, grad.data()[i], (plus - minus) / (2.0 * eps), tol);
        }
        reports.push((id, report));
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::glorot_uniform;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sigmoid_of_matmul_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let w = glorot_uniform(4, 3, &mut rng);
        let x = glorot_uniform(2, 4, &mut rng);
        let report = finite_diff_check(
            |tape, x| {
                let w = tape.constant(w.clone());
                let y = tape.matmul(x, w)?;
                let s = tape.sigmoid(y);
                Ok(tape.sum(s))
            },
            &x,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
        assert!(report.max_rel_error < 1e-4);
        assert_eq!(report.checked, 8);
    }

    #[test]
    fn constant_function_has_zero_grads() {
        let x = Tensor::row(vec![0.3, -0.7]);
        let report = finite_diff_check(
            |tape, _x| Ok(tape.constant(Tensor::scalar(4.2))),
            &x,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed());
        assert!(report.max_rel_error <= 1e-10 / REL_ERROR_FLOOR);
    }

    #[test]
    fn zero_tolerance_lists_every_coordinate() {
        let x = Tensor::row(vec![0.3, -0.7, 1.1]);
        let report =
            finite_diff_check(|tape, x| Ok(tape.sum(x)), &x, 1e-5, 0.0).unwrap();
        assert_eq!(report.failures.len(), 3);
    }

    #[test]
    fn random_three_op_graph() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = glorot_uniform(3, 3, &mut rng);
        let x = glorot_uniform(3, 3, &mut rng);
        let report = finite_diff_check(
            |tape, x| {
                let a = tape.constant(a.clone());
                let y = tape.matmul(a, x)?;
                let c = tape.cos(y);
                let m = tape.mul(c, x)?;
                Ok(tape.mean(m))
            },
            &x,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }
}
