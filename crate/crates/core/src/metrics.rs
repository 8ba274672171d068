//! Error metrics averaged over nodes and Monte Carlo trials.

use crate::vecn;
use crate::{Error, Result};

/// Mean navigation error per tick:
/// MNE(t) = (1/MN) Σ_m Σ_i ‖x̂ᵐ_i(t) − xᵐ_i(t)‖.
///
/// `estimates[m][t]` and `truths[m][t]` are node-major p-strided stacks.
pub fn mne(estimates: &[Vec<Vec<f64>>], truths: &[Vec<Vec<f64>>], dim: usize) -> Result<Vec<f64>> {
    if estimates.len() != truths.len() || estimates.is_empty() {
        return Err(Error::Shape(format!(
            "{} estimate trials vs {} truth trials",
            estimates.len(),
            truths.len()
        )));
    }
    let trials = estimates.len();
    let ticks = estimates[0].len();
    let mut out = vec![0.0; ticks];
    for (est_m, truth_m) in estimates.iter().zip(truths) {
        if est_m.len() != ticks || truth_m.len() != ticks {
            return Err(Error::Shape("tick counts differ across trials".into()));
        }
        for (t, (est, truth)) in est_m.iter().zip(truth_m).enumerate() {
            if est.len() != truth.len() || est.len() % dim != 0 {
                return Err(Error::Shape(format!("stack sizes differ at tick {t}")));
            }
            let n = est.len() / dim;
            for i in 0..n {
                out[t] += vecn::dist(&est[i * dim..(i + 1) * dim], &truth[i * dim..(i + 1) * dim]);
            }
        }
    }
    let n = estimates[0][0].len() / dim;
    for v in out.iter_mut() {
        *v /= (trials * n) as f64;
    }
    Ok(out)
}

/// Mean positioning error of a static experiment: the per-tick formula
/// without the time axis.
pub fn mpe(estimates: &[Vec<f64>], truths: &[Vec<f64>], dim: usize) -> Result<f64> {
    if estimates.len() != truths.len() || estimates.is_empty() {
        return Err(Error::Shape("trial counts differ".into()));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (est, truth) in estimates.iter().zip(truths) {
        if est.len() != truth.len() || est.len() % dim != 0 {
            return Err(Error::Shape("stack sizes differ".into()));
        }
        let n = est.len() / dim;
        for i in 0..n {
            total += vecn::dist(&est[i * dim..(i + 1) * dim], &truth[i * dim..(i + 1) * dim]);
            count += 1;
        }
    }
    Ok(total / count as f64)
}
