//! Central finite-difference verification of analytic gradients.

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::TensorError;

/// Default perturbation for central differences.
pub const DEFAULT_EPS: f64 = 1e-4;

/// Relative error with denominator `max(|analytic|, |numeric|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Outcome of a gradient check over a set of coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub coordinates: usize,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Checks `f` against central differences at `x`, returning the maximum
/// relative error over all coordinates of `x`.
pub fn grad_check<F, E>(f: F, x: &Tensor, eps: f64) -> Result<f64, E>
where
    F: Fn(&mut Tape, Var) -> Result<Var, E>,
    E: From<TensorError>,
{
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone(), true);
    let out = f(&mut tape, xv)?;
    tape.backward(out)?;
    let analytic = tape.grad(xv).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; x.numel()]);

    let eval = |t: Tensor| -> Result<f64, E> {
        let mut tape = Tape::new();
        let v = tape.leaf(t, true);
        let out = f(&mut tape, v)?;
        Ok(tape.item(out))
    };
    let mut worst: f64 = 0.0;
    for (i, a) in analytic.iter().enumerate() {
        let mut plus = x.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x.clone();
        minus.data_mut()[i] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        worst = worst.max(relative_error(*a, numeric));
    }
    Ok(worst)
}

/// Checks the gradient of a scalar function of the store's parameters with
/// respect to every coordinate of `ids`.
pub fn grad_check_params<F, E>(store: &mut ParamStore, ids: &[ParamId], f: F, eps: f64) -> Result<GradCheckReport, E>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var, E>,
    E: From<TensorError>,
{
    let mut tape = Tape::new();
    let out = f(&mut tape, store)?;
    tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| {
            tape.param_grad(id)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; store.value(id).numel()])
        })
        .collect();
    drop(tape);

    let mut report = GradCheckReport { max_rel_err: 0.0, coordinates: 0, worst: None };
    for (&id, grads) in ids.iter().zip(&analytic) {
        for (k, &a) in grads.iter().enumerate() {
            let orig = store.value(id).data()[k];
            store.value_mut(id).data_mut()[k] = orig + eps;
            let fp = {
                let mut t = Tape::new();
                let o = f(&mut t, store)?;
                t.item(o)
            };
            store.value_mut(id).data_mut()[k] = orig - eps;
            let fm = {
                let mut t = Tape::new();
                let o = f(&mut t, store)?;
                t.item(o)
            };
            store.value_mut(id).data_mut()[k] = orig;
            let err = relative_error(a, (fp - fm) / (2.0 * eps));
            report.coordinates += 1;
            if err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(err);
                if err >= report.max_rel_err {
                    report.worst = Some((store.name(id).to_string(), k));
                }
            }
        }
    }
    Ok(report)
}
