//! Centralized accelerated projected-gradient solver.
//!
//! Minimizes ½ zᵀMz − bᵀz over the product of per-component balls with a
//! fixed step 1/L, where L comes from the closed-form spectral bound below.
//! The momentum rule is selectable; both rules extrapolate the last two
//! iterates before the gradient-projection step.

use std::fmt::Write as _;

use crate::problem::{ConstraintSet, QuadraticOperator};
use crate::vecn;
use crate::{Error, Result};

/// Extrapolation coefficient sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MomentumRule {
    /// (k−2)/(k+1) on the iterate index k, the sequence with the classic
    /// O(1/k²) guarantee. In round terms (round κ produces iterate κ+1 from
    /// iterates κ and κ−1) the coefficient is (κ−2)/(κ+1) with κ = k.
    #[default]
    Classic,
    /// (κ−1)/κ on the round index.
    AlgorithmOne,
}

impl MomentumRule {
    /// Coefficient applied in round `round` (1-based). Both rules vanish in
    /// the first round, where the two momentum buffers coincide anyway.
    pub fn coefficient(self, round: usize) -> f64 {
        let k = round as f64;
        match self {
            MomentumRule::Classic => (k - 2.0) / (k + 1.0),
            MomentumRule::AlgorithmOne => (k - 1.0) / k,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolverConfig {
    pub max_iters: usize,
    /// Relative step tolerance: stop when ‖z⁺−z‖ / max(1, ‖z⁺‖) drops below.
    pub tolerance: f64,
    pub momentum: MomentumRule,
    /// Record the quadratic objective at every iterate (costs one extra
    /// operator application per iteration).
    pub log_costs: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 2000,
            tolerance: 1e-8,
            momentum: MomentumRule::Classic,
            log_costs: false,
        }
    }
}

/// Closed-form upper bound on the largest eigenvalue of M.
///
/// `sigma_node`, `sigma_anchor`, `sigma_vel` are the smallest standard
/// deviations of their measurement class (largest diagonal weights); pass
/// `None` for a class with no measurements, which then contributes nothing.
/// The temporal-chain degree is 0 for `window` = 1, 1 for 2, and 2 beyond.
pub fn lipschitz_bound(
    delta_max: usize,
    max_anchor_count: usize,
    window: usize,
    sigma_node: Option<f64>,
    sigma_anchor: Option<f64>,
    sigma_vel: Option<f64>,
) -> Result<f64> {
    let inv_sq = |s: Option<f64>| -> Result<f64> {
        match s {
            None => Ok(0.0),
            Some(v) if v > 0.0 && v.is_finite() => Ok(1.0 / (v * v)),
            Some(v) => Err(Error::Domain(format!("sigma {v} not positive finite"))),
        }
    };
    let wn = inv_sq(sigma_node)?;
    let wa = inv_sq(sigma_anchor)?;
    let wv = inv_sq(sigma_vel)?;
    let chain_degree = match window {
        0 => return Err(Error::Config("window must be at least 1".into())),
        1 => 0.0,
        2 => 1.0,
        _ => 2.0,
    };
    let k = wn + wa + wv;
    Ok(wn * 2.0 * delta_max as f64 + wa * max_anchor_count as f64 + wv * 2.0 * chain_degree + k)
}

/// Euclidean projection onto the constraint set: each ball component is
/// radially scaled back when outside, x is untouched.
pub fn project(z: &mut [f64], constraints: &ConstraintSet) {
    for ball in &constraints.balls {
        let block = &mut z[ball.offset..ball.offset + ball.len];
        let n = vecn::norm(block);
        if n > ball.radius {
            if ball.radius == 0.0 {
                block.fill(0.0);
            } else {
                let scale = ball.radius / n;
                for v in block.iter_mut() {
                    *v *= scale;
                }
            }
        }
    }
}

/// One record per completed gradient-projection step.
#[derive(Debug, Clone, Copy)]
pub struct IterRecord {
    /// Iterate index k (1-based count of prox steps taken).
    pub iter: usize,
    /// ½ zᵀMz − bᵀz at the new iterate, when cost logging is on.
    pub cost: Option<f64>,
    pub step_norm: f64,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub z: Vec<f64>,
    /// Number of gradient-projection steps performed.
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<IterRecord>,
}

/// Runs the accelerated projected-gradient iteration from `z0` (the origin
/// when `None`; any supplied start is projected to feasibility first).
pub fn fista_solve(
    form: &impl QuadraticOperator,
    constraints: &ConstraintSet,
    lipschitz: f64,
    config: &SolverConfig,
    z0: Option<&[f64]>,
) -> Result<SolveResult> {
    let dim = form.dim();
    if !(lipschitz > 0.0 && lipschitz.is_finite()) {
        return Err(Error::Domain(format!("Lipschitz constant {lipschitz} not positive")));
    }
    let mut z_curr = match z0 {
        Some(z) => {
            if z.len() != dim {
                return Err(Error::Shape(format!("z0 has {} values, want {dim}", z.len())));
            }
            let mut v = z.to_vec();
            project(&mut v, constraints);
            v
        }
        None => vec![0.0; dim],
    };
    let mut z_prev = z_curr.clone();
    let mut zhat = vec![0.0; dim];
    let mut grad = vec![0.0; dim];
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for round in 1..=config.max_iters {
        let beta = config.momentum.coefficient(round);
        for i in 0..dim {
            zhat[i] = z_curr[i] + beta * (z_curr[i] - z_prev[i]);
        }
        form.gradient(&zhat, &mut grad);
        let mut z_next = zhat.clone();
        vecn::axpy(-1.0 / lipschitz, &grad, &mut z_next);
        project(&mut z_next, constraints);

        let mut step_sq = 0.0;
        let mut norm_sq = 0.0;
        for i in 0..dim {
            let d = z_next[i] - z_curr[i];
            step_sq += d * d;
            norm_sq += z_next[i] * z_next[i];
        }
        let step_norm = step_sq.sqrt();
        if !step_norm.is_finite() || !norm_sq.is_finite() {
            return Err(Error::Divergence(round));
        }
        let cost = if config.log_costs {
            Some(form.quad_cost(&z_next))
        } else {
            None
        };
        trace.push(IterRecord {
            iter: round,
            cost,
            step_norm,
        });
        iterations = round;
        std::mem::swap(&mut z_prev, &mut z_curr);
        z_curr = z_next;
        if step_norm / norm_sq.sqrt().max(1.0) < config.tolerance {
            converged = true;
            break;
        }
    }
    Ok(SolveResult {
        z: z_curr,
        iterations,
        converged,
        trace,
    })
}

/// Renders an iteration trace as delimited text: iteration, cost, step norm.
pub fn trace_to_text(trace: &[IterRecord]) -> String {
    let mut s = String::from("iter,cost,step_norm\n");
    for r in trace {
        match r.cost {
            Some(c) => writeln!(s, "{},{},{}", r.iter, c, r.step_norm).unwrap(),
            None => writeln!(s, "{},,{}", r.iter, r.step_norm).unwrap(),
        }
    }
    s
}
