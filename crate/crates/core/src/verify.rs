//! Independent oracle routes for cross-checking the solver machinery.
//!
//! Everything here deliberately avoids the code paths it checks: gradients
//! come from finite differences of the raw cost, spectra from the dense
//! matrix assembled blockwise, and the distributed iteration is compared
//! against a from-scratch replication of the centralized one.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::distributed::{run_window, DistributedNetwork, RunOptions};
use crate::problem::{QuadraticForm, QuadraticOperator};
use crate::solver::{project, MomentumRule, SolverConfig};
use crate::synthetic::{random_instance, InstanceSpec};
use crate::vecn;
use crate::Result;

/// Central finite differences of the raw convex cost, with the step scaled
/// per component.
pub fn fd_gradient(form: &QuadraticForm, z: &[f64], h: f64) -> Vec<f64> {
    let mut out = vec![0.0; z.len()];
    let mut zp = z.to_vec();
    for i in 0..z.len() {
        let hi = h * z[i].abs().max(1.0);
        let orig = zp[i];
        zp[i] = orig + hi;
        let fp = form.relaxed_cost(&zp);
        zp[i] = orig - hi;
        let fm = form.relaxed_cost(&zp);
        zp[i] = orig;
        out[i] = (fp - fm) / (2.0 * hi);
    }
    out
}

#[derive(Debug, Clone, Copy)]
pub struct GradientCheck {
    pub seed: u64,
    pub dim: usize,
    pub rel_error: f64,
}

/// Compares the analytic gradient against finite differences on random
/// instances. Passing means every relative error is at most 1e-6.
pub fn gradient_checks(instances: usize, base_seed: u64) -> Result<Vec<GradientCheck>> {
    let mut out = Vec::with_capacity(instances);
    for idx in 0..instances {
        let seed = base_seed + idx as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
        let spec = InstanceSpec {
            seed,
            n_nodes: 3 + (idx % 4),
            n_anchors: 1 + (idx % 2),
            dim: if idx % 3 == 0 { 3 } else { 2 },
            window: [1, 2, 3][idx % 3],
            ..Default::default()
        };
        let inst = random_instance(&spec)?;
        let (form, _) = inst.assemble()?;
        let z: Vec<f64> = (0..form.dim()).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let mut grad = vec![0.0; form.dim()];
        form.gradient(&z, &mut grad);
        let fd = fd_gradient(&form, &z, 1e-5);
        let diff: f64 = grad
            .iter()
            .zip(&fd)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let rel_error = diff / vecn::norm(&grad).max(1.0);
        out.push(GradientCheck {
            seed,
            dim: form.dim(),
            rel_error,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
pub struct LipschitzCheck {
    pub seed: u64,
    pub window: usize,
    pub lambda_max: f64,
    pub bound: f64,
}

impl LipschitzCheck {
    pub fn holds(&self) -> bool {
        self.lambda_max <= self.bound * (1.0 + 1e-12)
    }
}

/// Verifies the closed-form bound against the spectrum of the dense matrix
/// on random instances across the requested window lengths.
pub fn lipschitz_checks(per_window: usize, windows: &[usize], base_seed: u64) -> Result<Vec<LipschitzCheck>> {
    let mut out = Vec::new();
    for (wi, &window) in windows.iter().enumerate() {
        for idx in 0..per_window {
            let seed = base_seed + (wi * per_window + idx) as u64;
            let spec = InstanceSpec {
                seed,
                n_nodes: 3 + (idx % 4),
                n_anchors: 1 + (idx % 3),
                dim: if idx % 2 == 0 { 2 } else { 3 },
                window,
                ..Default::default()
            };
            let inst = random_instance(&spec)?;
            let (form, _) = inst.assemble()?;
            let m = form.dense_m();
            let eig = m.symmetric_eigen();
            let lambda_max = eig.eigenvalues.iter().copied().fold(f64::MIN, f64::max);
            out.push(LipschitzCheck {
                seed,
                window,
                lambda_max,
                bound: inst.lipschitz()?,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
pub struct EquivalenceCheck {
    pub seed: u64,
    pub window: usize,
    pub rounds: usize,
    /// Worst per-round blockwise difference relative to the iterate norm.
    pub max_round_rel_diff: f64,
    /// Final-iterate difference relative to the final norm.
    pub final_rel_diff: f64,
}

/// Runs the distributed iteration and an independently coded centralized
/// iteration side by side on a random instance.
pub fn equivalence_check(seed: u64, n_nodes: usize, window: usize, rounds: usize) -> Result<EquivalenceCheck> {
    let spec = InstanceSpec {
        seed,
        n_nodes,
        n_anchors: 1 + (seed % 3) as usize,
        dim: if seed % 2 == 0 { 2 } else { 3 },
        window,
        ..Default::default()
    };
    let inst = random_instance(&spec)?;
    let inc = inst.incidence()?;
    let (form, cs) = inst.assemble()?;
    let lip = inst.lipschitz()?;
    let cfg = SolverConfig {
        max_iters: rounds,
        tolerance: 0.0,
        momentum: MomentumRule::Classic,
        log_costs: false,
    };
    let mut net = DistributedNetwork::build(&form, &inc)?;
    let dist = run_window(
        &mut net,
        lip,
        &cfg,
        &RunOptions {
            record_iterates: true,
            ..Default::default()
        },
    )?;
    let trace = dist.iterate_trace.as_ref().unwrap();

    let dim = form.dim();
    let mut z_prev = vec![0.0; dim];
    let mut z_curr = vec![0.0; dim];
    let mut grad = vec![0.0; dim];
    let mut max_round_rel_diff = 0.0f64;
    for round in 1..=rounds {
        let beta = cfg.momentum.coefficient(round);
        let zhat: Vec<f64> = z_curr
            .iter()
            .zip(&z_prev)
            .map(|(c, p)| c + beta * (c - p))
            .collect();
        form.gradient(&zhat, &mut grad);
        let mut z_next = zhat;
        vecn::axpy(-1.0 / lip, &grad, &mut z_next);
        project(&mut z_next, &cs);
        z_prev = std::mem::replace(&mut z_curr, z_next);
        let scale = vecn::norm(&z_curr).max(1.0);
        let mut worst = 0.0f64;
        for (a, b) in z_curr.iter().zip(&trace[round - 1]) {
            worst = worst.max((a - b).abs());
        }
        max_round_rel_diff = max_round_rel_diff.max(worst / scale);
    }
    let scale = vecn::norm(&z_curr).max(1.0);
    let final_rel_diff = z_curr
        .iter()
        .zip(&dist.z)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
        / scale;
    Ok(EquivalenceCheck {
        seed,
        window,
        rounds,
        max_round_rel_diff,
        final_rel_diff,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_suite_passes() {
        let checks = gradient_checks(6, 500).unwrap();
        for c in checks {
            assert!(c.rel_error <= 1e-6, "seed {}: {}", c.seed, c.rel_error);
        }
    }

    #[test]
    fn lipschitz_suite_passes() {
        let checks = lipschitz_checks(3, &[1, 2, 3], 900).unwrap();
        for c in checks {
            assert!(
                c.holds(),
                "seed {}: lambda {} exceeds bound {}",
                c.seed,
                c.lambda_max,
                c.bound
            );
        }
    }

    #[test]
    fn equivalence_spot_check() {
        let c = equivalence_check(42, 5, 2, 80).unwrap();
        assert!(c.max_round_rel_diff <= 1e-12, "{}", c.max_round_rel_diff);
        assert!(c.final_rel_diff <= 1e-9, "{}", c.final_rel_diff);
    }
}
