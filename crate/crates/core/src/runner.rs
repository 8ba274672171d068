//! Per-trial sliding-window navigation loop shared by the experiment modes.
//!
//! Feeds each tick's measurements into the window problem, solves it with
//! the centralized or the simulated-distributed engine, warm-starts the next
//! window from the shifted solution, and reports the newest-tick position
//! estimates.

use std::collections::VecDeque;

use crate::distributed::{run_window, DistributedNetwork, RunOptions};
use crate::graph::{incidence, max_anchor_count, max_degree, NetworkSnapshot};
use crate::measurement::{Dataset, NoiseParams};
use crate::problem::assemble;
use crate::solver::{fista_solve, lipschitz_bound, project, SolverConfig};
use crate::{Error, Result};

/// Which solver executes the per-window optimization. Both produce the same
/// iterates; the distributed engine additionally counts broadcasts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Engine {
    #[default]
    Centralized,
    Distributed,
}

#[derive(Debug, Clone)]
pub struct WindowRunner {
    pub window: usize,
    pub engine: Engine,
    pub solver: SolverConfig,
    ring: VecDeque<(NetworkSnapshot, Dataset)>,
    warm: Option<Vec<f64>>,
    pub total_messages: usize,
    pub total_iterations: usize,
}

impl WindowRunner {
    pub fn new(window: usize, engine: Engine, solver: SolverConfig) -> Result<Self> {
        if window == 0 {
            return Err(Error::Config("window must be at least 1".into()));
        }
        Ok(Self {
            window,
            engine,
            solver,
            ring: VecDeque::with_capacity(window),
            warm: None,
            total_messages: 0,
            total_iterations: 0,
        })
    }

    /// Ingests one tick and returns the current-tick position estimates for
    /// all nodes, node-major p-strided. Early ticks use a growing window.
    pub fn step(
        &mut self,
        snapshot: NetworkSnapshot,
        dataset: Dataset,
        params: &NoiseParams,
    ) -> Result<Vec<f64>> {
        if self.ring.len() == self.window {
            self.ring.pop_front();
        }
        self.ring.push_back((snapshot, dataset));
        let t0 = self.ring.len();
        let snaps: Vec<&NetworkSnapshot> = self.ring.iter().map(|(s, _)| s).collect();
        let datasets: Vec<&Dataset> = self.ring.iter().map(|(_, d)| d).collect();
        let last = snaps[t0 - 1];
        let inc = incidence(last, t0)?;
        let (form, constraints) = assemble(&inc, &snaps, &datasets, params)?;
        let (sn, sa, sv) = params.min_stds();
        let lip = lipschitz_bound(max_degree(last), max_anchor_count(last), t0, sn, sa, sv)?;
        let layout = form.layout;

        // warm start: previous window's solution shifted one step, projected
        // back to feasibility
        let z0 = self.warm.as_ref().map(|prev| {
            let mut z = shift_window(prev, &layout);
            project(&mut z, &constraints);
            z
        });

        let z = match self.engine {
            Engine::Centralized => {
                let res = fista_solve(&form, &constraints, lip, &self.solver, z0.as_deref())?;
                self.total_iterations += res.iterations;
                res.z
            }
            Engine::Distributed => {
                let mut net = DistributedNetwork::build(&form, &inc)?;
                if let Some(z0) = &z0 {
                    net.set_initial(z0)?;
                }
                let res = run_window(&mut net, lip, &self.solver, &RunOptions::default())?;
                self.total_iterations += res.iterations;
                self.total_messages += res.message_count;
                res.z
            }
        };

        let p = layout.dim;
        let n = layout.n_nodes;
        let mut estimate = vec![0.0; n * p];
        for i in 0..n {
            estimate[i * p..(i + 1) * p].copy_from_slice(&z[layout.x(t0 - 1, i)]);
        }
        self.warm = Some(z);
        Ok(estimate)
    }
}

/// Shifts a solved window one tick forward: drop the oldest tick, duplicate
/// the newest as the incoming tick's initial guess. Handles the growing
/// phase, where the stored window is one tick shorter than the new layout.
fn shift_window(prev: &[f64], new_layout: &crate::problem::Layout) -> Vec<f64> {
    let l = *new_layout;
    let t0 = l.window;
    let prev_t0_grown = prev_window_len(prev, &l);
    let mut z = vec![0.0; l.total()];
    let grow = prev_t0_grown < t0;
    let prev_l = crate::problem::Layout {
        window: prev_t0_grown,
        ..l
    };
    // map new window step τ to the previous window's step
    let src_step = |tau: usize| -> usize {
        if grow {
            // previous window had one fewer tick and keeps its alignment
            tau.min(prev_t0_grown - 1)
        } else {
            (tau + 1).min(prev_t0_grown - 1)
        }
    };
    for tau in 0..t0 {
        let pt = src_step(tau);
        for i in 0..l.n_nodes {
            z[l.x(tau, i)].copy_from_slice(&prev[prev_l.x(pt, i)]);
        }
        for e in 0..l.n_edges {
            z[l.y(tau, e)].copy_from_slice(&prev[prev_l.y(pt, e)]);
        }
        for ae in 0..l.n_anchor_edges {
            z[l.w(tau, ae)].copy_from_slice(&prev[prev_l.w(pt, ae)]);
        }
    }
    for link in 0..t0 - 1 {
        let pl = if grow {
            link.min(prev_t0_grown.saturating_sub(2))
        } else {
            (link + 1).min(prev_t0_grown - 2)
        };
        if prev_t0_grown >= 2 {
            for i in 0..l.n_nodes {
                z[l.s(link, i)].copy_from_slice(&prev[prev_l.s(pl, i)]);
            }
        }
    }
    z
}

/// Infers how many ticks the stored flat window spans under the new
/// structural dimensions.
fn prev_window_len(prev: &[f64], l: &crate::problem::Layout) -> usize {
    let per_tick = (l.n_nodes + l.n_edges + l.n_anchor_edges) * l.dim;
    let per_link = l.n_nodes * l.dim;
    // total = t0 * per_tick + (t0 − 1) * per_link
    let t0 = (prev.len() + per_link) / (per_tick + per_link);
    debug_assert_eq!(t0 * per_tick + t0.saturating_sub(1) * per_link, prev.len());
    t0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurement::synthesize_dataset;
    use crate::scenario::{lawnmower, LawnmowerParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn noiseless_run_tracks_truth() {
        let sc = lawnmower(&LawnmowerParams {
            legs: 2,
            leg_length: 15.0,
            ..Default::default()
        })
        .unwrap();
        let snap0 = sc.snapshot(0).unwrap();
        let params = NoiseParams::uniform(&snap0, 1e-4, 1e-4, 1e7, 1e7, 1e-4, 1e7);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut runner =
            WindowRunner::new(3, Engine::Centralized, SolverConfig::default()).unwrap();
        for t in 0..sc.ticks.min(12) {
            let snap = sc.snapshot(t).unwrap();
            let ds = synthesize_dataset(&snap, &sc.velocities[t], &params, sc.dt, &mut rng)
                .unwrap();
            let est = runner.step(snap, ds, &params).unwrap();
            let err = crate::vecn::dist(&est, sc.truth(t));
            assert!(err < 1e-3, "tick {t}: {err}");
        }
    }

    #[test]
    fn engines_agree_over_a_run() {
        let sc = lawnmower(&LawnmowerParams {
            legs: 2,
            leg_length: 10.0,
            ..Default::default()
        })
        .unwrap();
        let snap0 = sc.snapshot(0).unwrap();
        let params = NoiseParams::uniform(&snap0, 0.5, 0.5, 1000.0, 1000.0, 0.1, 1000.0);
        let run = |engine: Engine| {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let mut runner = WindowRunner::new(4, engine, SolverConfig::default()).unwrap();
            let mut out = Vec::new();
            for t in 0..10 {
                let snap = sc.snapshot(t).unwrap();
                let ds =
                    synthesize_dataset(&snap, &sc.velocities[t], &params, sc.dt, &mut rng)
                        .unwrap();
                out.push(runner.step(snap, ds, &params).unwrap());
            }
            out
        };
        let a = run(Engine::Centralized);
        let b = run(Engine::Distributed);
        for (ea, eb) in a.iter().zip(&b) {
            // stopping rules may differ by one iteration between engines,
            // so agreement is at the solve tolerance, not machine precision
            let d = crate::vecn::dist(ea, eb);
            assert!(d <= 1e-4, "engines diverge: {d}");
        }
    }
}
