//! Central finite-difference gradient checking.

use super::array::DenseArray;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Default step for central differences.
pub const FD_STEP: f64 = 1e-5;

/// Outcome of [`grad_check`].
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, floor)` over all checked entries.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
    /// (input, flat index) of the worst entry.
    pub worst: (usize, usize),
}

impl GradCheckReport {
    pub fn passes(&self, rel_tol: f64) -> bool {
        self.max_rel_error < rel_tol
    }
}

/// Relative error denominators never drop below this.
pub const REL_FLOOR: f64 = 1e-6;

/// Compare tape gradients of a scalar function against central differences.
///
/// `f` receives a fresh tape and one leaf per input each time it is called.
/// `max_entries` limits how many coordinates per input are perturbed (spread
/// evenly), which keeps checks on large parameter tensors affordable.
pub fn grad_check<F>(f: F, inputs: &[DenseArray], h: f64, max_entries: usize) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[DenseArray]| -> Result<f64> {
        let mut t = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|v| t.leaf(v.clone())).collect();
        let out = f(&mut t, &vars)?;
        Ok(t.value(out).data()[0])
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|v| tape.leaf(v.clone())).collect();
    let out = f(&mut tape, &vars)?;
    if tape.value(out).len() != 1 {
        return Err(Error::Dimension("grad_check needs a scalar function".into()));
    }
    let grads = tape.backward(out)?;
    let mut report = GradCheckReport { max_rel_error: 0.0, max_abs_error: 0.0, checked: 0, worst: (0, 0) };
    let mut work = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let n = inputs[k].len();
        let stride = (n / max_entries.max(1)).max(1);
        for idx in (0..n).step_by(stride) {
            let analytic = grads.wrt(*var).map(|g| g.data()[idx]).unwrap_or(0.0);
            let orig = work[k].data()[idx];
            work[k].data_mut()[idx] = orig + h;
            let fp = eval(&work)?;
            work[k].data_mut()[idx] = orig - h;
            let fm = eval(&work)?;
            work[k].data_mut()[idx] = orig;
            let numeric = (fp - fm) / (2.0 * h);
            let abs = (analytic - numeric).abs();
            let rel = abs / analytic.abs().max(numeric.abs()).max(REL_FLOOR);
            report.checked += 1;
            report.max_abs_error = report.max_abs_error.max(abs);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (k, idx);
            }
        }
    }
    Ok(report)
}
