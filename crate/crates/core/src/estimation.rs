//! Online noise-parameter estimation from solver residuals.
//!
//! After each tick's position estimate, the measured ranges, bearings and
//! velocities are compared against the values implied by the estimates.
//! Squared range residuals accumulate into running variance estimates;
//! measured directions, re-expressed in a frame where the estimated
//! direction is the pole, accumulate into the resultant vector whose length
//! feeds the concentration formula κ̂ = γ̄(p − γ̄²)/(1 − γ̄²). The formula
//! expects unit samples concentrated around a fixed mean; the frame
//! alignment supplies exactly that even though the true direction moves
//! every tick.
//!
//! Running estimates divide by the tick counter rather than the
//! per-accumulator sample count, so classes that start accumulating late
//! (velocity, below) carry a small-sample bias that washes out over the
//! run; the clamps keep early estimates from derailing the solver.
//!
//! Velocity residuals need a velocity estimate, which comes from lagged
//! central finite differences over the position history; it only becomes
//! available once eight past estimates exist, so estimation starts with
//! defaults during a warm-up phase.

use std::collections::BTreeMap;
use std::collections::VecDeque;

use crate::graph::NetworkSnapshot;
use crate::measurement::{Dataset, NoiseParams};
use crate::vecn;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct EstimationConfig {
    /// Default σ (m) used for every range class during warm-up.
    pub default_std: f64,
    /// Default κ used for every direction class during warm-up.
    pub default_kappa: f64,
    /// Samples every accumulator must hold before estimates replace defaults.
    pub min_samples: usize,
    /// Lower clamp for σ̂ (m).
    pub sigma_floor: f64,
    /// Upper clamp for κ̂.
    pub kappa_cap: f64,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self {
            default_std: 1.0,
            default_kappa: 500.0,
            min_samples: 10,
            sigma_floor: 1e-3,
            kappa_cap: 1e6,
        }
    }
}

#[derive(Debug, Clone, Default)]
struct ResidualAcc {
    sq_sum: f64,
    dir_sum: Vec<f64>,
    count: usize,
}

/// Running residual accumulators for every measurement class.
#[derive(Debug, Clone)]
pub struct ParamAccumulators {
    dim: usize,
    n_nodes: usize,
    /// Keyed by (i, j), i < j.
    edges: BTreeMap<(usize, usize), ResidualAcc>,
    /// Keyed by (node, anchor).
    anchors: BTreeMap<(usize, usize), ResidualAcc>,
    /// Per node.
    velocity: Vec<ResidualAcc>,
    /// Ticks processed so far (the divisor of every running estimate).
    ticks: usize,
    /// Per node: past position estimates, newest front, capacity 8.
    history: Vec<VecDeque<Vec<f64>>>,
}

/// The measured unit vector expressed in a frame whose first axis is the
/// estimated direction. Around an accurate estimate the samples concentrate
/// near the pole with the dispersion of the measurement noise, which is the
/// input the concentration formula is built for.
fn aligned_sample(measured: &[f64], estimated: &[f64]) -> Vec<f64> {
    let p = measured.len();
    if p == 2 {
        vec![
            estimated[0] * measured[0] + estimated[1] * measured[1],
            estimated[0] * measured[1] - estimated[1] * measured[0],
        ]
    } else {
        let (t1, t2) = crate::measurement::tangent_basis(estimated);
        vec![
            vecn::dot(measured, estimated),
            vecn::dot(measured, &t1),
            vecn::dot(measured, &t2),
        ]
    }
}

/// Lagged central-difference velocity estimate from past positions.
///
/// `past` holds the node's estimates x̂(t−1), x̂(t−2), … newest first and
/// must reach back seven ticks; returns the estimated displacement over one
/// tick, or `None` while the history is still warming up.
pub fn velocity_from_history(past: &VecDeque<Vec<f64>>, dim: usize) -> Option<Vec<f64>> {
    if past.len() < 7 {
        return None;
    }
    let at = |lag: usize| &past[lag - 1]; // lag 1 → x̂(t−1)
    let mut out = vec![0.0; dim];
    for c in 0..dim {
        out[c] = (5.0 * (at(3)[c] - at(5)[c]) + 4.0 * (at(2)[c] - at(6)[c])
            + (at(1)[c] - at(7)[c]))
            / 32.0;
    }
    Some(out)
}

impl ParamAccumulators {
    pub fn new(snapshot: &NetworkSnapshot) -> Self {
        let n = snapshot.n_nodes();
        let mut edges = BTreeMap::new();
        for &e in snapshot.range_edges() {
            edges.insert(e, ResidualAcc::default());
        }
        let mut anchors = BTreeMap::new();
        for ae in snapshot.anchor_edges() {
            anchors.insert(ae, ResidualAcc::default());
        }
        Self {
            dim: snapshot.dim(),
            n_nodes: n,
            edges,
            anchors,
            velocity: vec![ResidualAcc::default(); n],
            ticks: 0,
            history: vec![VecDeque::with_capacity(8); n],
        }
    }

    pub fn ticks(&self) -> usize {
        self.ticks
    }

    /// Folds one tick of residuals into the accumulators. `estimates` holds
    /// the tick's position estimates for all nodes, node-major p-strided.
    /// Velocity residuals only accumulate once the history is deep enough.
    pub fn residual_update(
        &mut self,
        snapshot: &NetworkSnapshot,
        estimates: &[f64],
        dataset: &Dataset,
    ) -> Result<()> {
        let p = self.dim;
        let n = self.n_nodes;
        if estimates.len() != n * p {
            return Err(Error::Shape(format!(
                "estimates: {} values for {n} nodes of dim {p}",
                estimates.len()
            )));
        }
        self.ticks += 1;
        let mut diff = vec![0.0; p];

        for (e, &(i, j)) in snapshot.range_edges().iter().enumerate() {
            let xi = &estimates[i * p..(i + 1) * p];
            let xj = &estimates[j * p..(j + 1) * p];
            let dhat = vecn::dist(xi, xj);
            let acc = self
                .edges
                .get_mut(&(i, j))
                .ok_or_else(|| Error::Config(format!("unknown edge {i}-{j}")))?;
            let r = dataset.node_ranges[e] - dhat;
            acc.sq_sum += r * r;
            acc.count += 1;
            if acc.dir_sum.is_empty() {
                acc.dir_sum = vec![0.0; p];
            }
        }
        for (be, &(i, j)) in snapshot.bearing_edges().iter().enumerate() {
            let xi = &estimates[i * p..(i + 1) * p];
            let xj = &estimates[j * p..(j + 1) * p];
            vecn::sub(xi, xj, &mut diff);
            if vecn::normalize(&mut diff) == 0.0 {
                continue; // estimated direction undefined this tick
            }
            let sample = aligned_sample(&dataset.node_bearings[be * p..(be + 1) * p], &diff);
            let acc = self.edges.get_mut(&(i, j)).unwrap();
            if acc.dir_sum.is_empty() {
                acc.dir_sum = vec![0.0; p];
            }
            for c in 0..p {
                acc.dir_sum[c] += sample[c];
            }
        }

        let anchor_edges = snapshot.anchor_edges();
        for (ae, &(i, k)) in anchor_edges.iter().enumerate() {
            let xi = &estimates[i * p..(i + 1) * p];
            let rhat = vecn::dist(xi, snapshot.anchor_position(k));
            let acc = self
                .anchors
                .get_mut(&(i, k))
                .ok_or_else(|| Error::Config(format!("unknown anchor pair {i}-{k}")))?;
            let r = dataset.anchor_ranges[ae] - rhat;
            acc.sq_sum += r * r;
            acc.count += 1;
            if acc.dir_sum.is_empty() {
                acc.dir_sum = vec![0.0; p];
            }
        }
        for (abe, &(i, k)) in snapshot.anchor_bearing_edges().iter().enumerate() {
            let xi = &estimates[i * p..(i + 1) * p];
            vecn::sub(xi, snapshot.anchor_position(k), &mut diff);
            if vecn::normalize(&mut diff) == 0.0 {
                continue;
            }
            let sample =
                aligned_sample(&dataset.anchor_bearings[abe * p..(abe + 1) * p], &diff);
            let acc = self.anchors.get_mut(&(i, k)).unwrap();
            if acc.dir_sum.is_empty() {
                acc.dir_sum = vec![0.0; p];
            }
            for c in 0..p {
                acc.dir_sum[c] += sample[c];
            }
        }

        for i in 0..n {
            if let Some(est_step) = velocity_from_history(&self.history[i], p) {
                let vhat_len = vecn::norm(&est_step);
                let measured_step = dataset.speeds[i] * dataset.dt;
                let acc = &mut self.velocity[i];
                let r = measured_step - vhat_len;
                acc.sq_sum += r * r;
                acc.count += 1;
                if acc.dir_sum.is_empty() {
                    acc.dir_sum = vec![0.0; p];
                }
                if vhat_len > 0.0 {
                    let vhat: Vec<f64> = est_step.iter().map(|v| v / vhat_len).collect();
                    let sample =
                        aligned_sample(&dataset.headings[i * p..(i + 1) * p], &vhat);
                    for c in 0..p {
                        acc.dir_sum[c] += sample[c];
                    }
                }
            }
        }

        // push current estimates into the history ring
        for i in 0..n {
            let h = &mut self.history[i];
            if h.len() == 8 {
                h.pop_back();
            }
            h.push_front(estimates[i * p..(i + 1) * p].to_vec());
        }
        Ok(())
    }

    fn sigma_hat(&self, acc: &ResidualAcc, cfg: &EstimationConfig) -> (f64, bool) {
        if self.ticks == 0 || acc.count == 0 {
            return (cfg.default_std, false);
        }
        let sigma = (acc.sq_sum / self.ticks as f64).sqrt();
        if sigma < cfg.sigma_floor {
            (cfg.sigma_floor, true)
        } else {
            (sigma, false)
        }
    }

    fn kappa_hat(&self, acc: &ResidualAcc, cfg: &EstimationConfig) -> (f64, bool) {
        if self.ticks == 0 || acc.dir_sum.is_empty() {
            return (cfg.default_kappa, false);
        }
        let gamma_bar = vecn::norm(&acc.dir_sum) / self.ticks as f64;
        let kappa = concentration_from_resultant(gamma_bar, self.dim);
        if !kappa.is_finite() || kappa > cfg.kappa_cap {
            (cfg.kappa_cap, true)
        } else if kappa <= 0.0 {
            // resultant length zero: no directional information yet
            (cfg.default_kappa, true)
        } else {
            (kappa, false)
        }
    }

    /// True once every accumulator holds at least `min_samples` residuals
    /// and the velocity lag has cleared.
    pub fn warmed_up(&self, cfg: &EstimationConfig) -> bool {
        if self.ticks <= 7 {
            return false;
        }
        let edge_ok = self.edges.values().all(|a| a.count >= cfg.min_samples);
        let anchor_ok = self.anchors.values().all(|a| a.count >= cfg.min_samples);
        let vel_ok = self.velocity.iter().all(|a| a.count >= cfg.min_samples);
        edge_ok && anchor_ok && vel_ok
    }

    /// Noise parameters for the snapshot: estimates when warmed up,
    /// defaults otherwise.
    pub fn current_params(
        &self,
        snapshot: &NetworkSnapshot,
        cfg: &EstimationConfig,
    ) -> NoiseParams {
        if !self.warmed_up(cfg) {
            return NoiseParams::uniform(
                snapshot,
                cfg.default_std,
                cfg.default_std,
                cfg.default_kappa,
                cfg.default_kappa,
                cfg.default_std,
                cfg.default_kappa,
            );
        }
        let lookup_sigma = |map: &BTreeMap<(usize, usize), ResidualAcc>, key: (usize, usize)| {
            map.get(&key)
                .map(|a| self.sigma_hat(a, cfg).0)
                .unwrap_or(cfg.default_std)
        };
        let lookup_kappa = |map: &BTreeMap<(usize, usize), ResidualAcc>, key: (usize, usize)| {
            map.get(&key)
                .map(|a| self.kappa_hat(a, cfg).0)
                .unwrap_or(cfg.default_kappa)
        };
        NoiseParams {
            node_range_std: snapshot
                .range_edges()
                .iter()
                .map(|&e| lookup_sigma(&self.edges, e))
                .collect(),
            node_bearing_kappa: snapshot
                .bearing_edges()
                .iter()
                .map(|&e| lookup_kappa(&self.edges, e))
                .collect(),
            anchor_range_std: snapshot
                .anchor_edges()
                .iter()
                .map(|&ae| lookup_sigma(&self.anchors, ae))
                .collect(),
            anchor_bearing_kappa: snapshot
                .anchor_bearing_edges()
                .iter()
                .map(|&ae| lookup_kappa(&self.anchors, ae))
                .collect(),
            speed_std: self
                .velocity
                .iter()
                .map(|a| self.sigma_hat(a, cfg).0)
                .collect(),
            heading_kappa: self
                .velocity
                .iter()
                .map(|a| self.kappa_hat(a, cfg).0)
                .collect(),
        }
    }

    /// Current per-edge range-σ estimates with their keys and clamp flags,
    /// for parameter traces.
    pub fn edge_sigma_rows(&self, cfg: &EstimationConfig) -> Vec<TraceRow> {
        self.edges
            .iter()
            .map(|(&(i, j), acc)| {
                let (sigma, s_clamped) = self.sigma_hat(acc, cfg);
                let (kappa, k_clamped) = self.kappa_hat(acc, cfg);
                TraceRow {
                    kind: "edge",
                    i,
                    j,
                    sigma,
                    kappa,
                    clamped: s_clamped || k_clamped,
                }
            })
            .collect()
    }

    pub fn anchor_sigma_rows(&self, cfg: &EstimationConfig) -> Vec<TraceRow> {
        self.anchors
            .iter()
            .map(|(&(i, k), acc)| {
                let (sigma, s_clamped) = self.sigma_hat(acc, cfg);
                let (kappa, k_clamped) = self.kappa_hat(acc, cfg);
                TraceRow {
                    kind: "anchor",
                    i,
                    j: k,
                    sigma,
                    kappa,
                    clamped: s_clamped || k_clamped,
                }
            })
            .collect()
    }

    pub fn velocity_sigma_rows(&self, cfg: &EstimationConfig) -> Vec<TraceRow> {
        self.velocity
            .iter()
            .enumerate()
            .map(|(i, acc)| {
                let (sigma, s_clamped) = self.sigma_hat(acc, cfg);
                let (kappa, k_clamped) = self.kappa_hat(acc, cfg);
                TraceRow {
                    kind: "velocity",
                    i,
                    j: i,
                    sigma,
                    kappa,
                    clamped: s_clamped || k_clamped,
                }
            })
            .collect()
    }
}

/// One row of a parameter trace.
#[derive(Debug, Clone, Copy)]
pub struct TraceRow {
    pub kind: &'static str,
    pub i: usize,
    pub j: usize,
    pub sigma: f64,
    pub kappa: f64,
    pub clamped: bool,
}

/// κ̂ = γ̄(p − γ̄²)/(1 − γ̄²); infinite at γ̄ = 1.
pub fn concentration_from_resultant(gamma_bar: f64, dim: usize) -> f64 {
    let p = dim as f64;
    let g2 = gamma_bar * gamma_bar;
    if (1.0 - g2).abs() < f64::EPSILON {
        return f64::INFINITY;
    }
    gamma_bar * (p - g2) / (1.0 - g2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::BearingPolicy;
    use proptest::prelude::*;

    #[test]
    fn constant_residuals_recover_their_square() {
        let s = NetworkSnapshot::build(
            2,
            0,
            vec![0.0, 0.0, 3.0, 0.0],
            vec![],
            5.0,
            &BearingPolicy::RangeOnly,
        )
        .unwrap();
        let mut acc = ParamAccumulators::new(&s);
        let cfg = EstimationConfig::default();
        let r = 0.7;
        let t = 50;
        for tick in 0..t {
            let ds = Dataset {
                tick,
                dt: 1.0,
                node_ranges: vec![3.0 + r],
                node_bearings: vec![],
                anchor_ranges: vec![],
                anchor_bearings: vec![],
                speeds: vec![0.0, 0.0],
                headings: vec![1.0, 0.0, 1.0, 0.0],
            };
            acc.residual_update(&s, &[0.0, 0.0, 3.0, 0.0], &ds).unwrap();
        }
        let rows = acc.edge_sigma_rows(&cfg);
        assert!((rows[0].sigma - r).abs() < 1e-12, "{}", rows[0].sigma);
    }

    #[test]
    fn concentration_formula_reference_point() {
        // γ̄ = 0.5, p = 3 → 0.5·(3 − 0.25)/(1 − 0.25) = 11/6
        let k = concentration_from_resultant(0.5, 3);
        assert!((k - 11.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_resultant_is_clamped() {
        let k = concentration_from_resultant(1.0, 2);
        assert!(k.is_infinite());
    }

    #[test]
    fn velocity_estimator_exact_on_linear_motion() {
        let c = [0.4, -1.1];
        let mut past = VecDeque::new();
        // history holds x̂(t−1) … x̂(t−8), newest first, with x(τ) = c·τ
        let t = 20.0;
        for lag in 1..=8 {
            past.push_back(vec![c[0] * (t - lag as f64), c[1] * (t - lag as f64)]);
        }
        let est = velocity_from_history(&past, 2).unwrap();
        assert!((est[0] - c[0]).abs() < 1e-12);
        assert!((est[1] - c[1]).abs() < 1e-12);
    }

    #[test]
    fn velocity_estimator_is_the_lagged_derivative_on_quadratics() {
        // x(τ) = τ² → estimate equals the exact derivative at τ = t−4
        let t = 30.0;
        let mut past = VecDeque::new();
        for lag in 1..=8 {
            let tau = t - lag as f64;
            past.push_back(vec![tau * tau]);
        }
        // dim 1 is not a supported network dimension but the estimator is
        // componentwise, so exercising one component is enough
        let est = velocity_from_history(&past, 1).unwrap();
        assert!((est[0] - 2.0 * (t - 4.0)).abs() < 1e-10, "{}", est[0]);
    }

    #[test]
    fn warm_up_until_history_depth() {
        let mut past = VecDeque::new();
        for _ in 0..6 {
            past.push_front(vec![0.0, 0.0]);
        }
        assert!(velocity_from_history(&past, 2).is_none());
    }

    #[test]
    fn sigma_is_permutation_invariant() {
        let s = NetworkSnapshot::build(
            2,
            0,
            vec![0.0, 0.0, 3.0, 0.0],
            vec![],
            5.0,
            &BearingPolicy::RangeOnly,
        )
        .unwrap();
        let cfg = EstimationConfig::default();
        let residuals = [0.1, -0.4, 0.9, 0.2, -0.7];
        let run = |order: &[f64]| {
            let mut acc = ParamAccumulators::new(&s);
            for (tick, r) in order.iter().enumerate() {
                let ds = Dataset {
                    tick,
                    dt: 1.0,
                    node_ranges: vec![3.0 + r],
                    node_bearings: vec![],
                    anchor_ranges: vec![],
                    anchor_bearings: vec![],
                    speeds: vec![0.0, 0.0],
                    headings: vec![1.0, 0.0, 1.0, 0.0],
                };
                acc.residual_update(&s, &[0.0, 0.0, 3.0, 0.0], &ds).unwrap();
            }
            acc.edge_sigma_rows(&cfg)[0].sigma
        };
        let forward = run(&residuals);
        let mut rev = residuals;
        rev.reverse();
        assert_eq!(forward, run(&rev));
    }

    proptest! {
        #[test]
        fn concentration_monotone_in_resultant(
            a in 0.001f64..0.999,
            b in 0.001f64..0.999,
            p in 2usize..=3,
        ) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assume!(hi - lo > 1e-9);
            let klo = concentration_from_resultant(lo, p);
            let khi = concentration_from_resultant(hi, p);
            prop_assert!(khi > klo, "k({lo})={klo}, k({hi})={khi}");
        }
    }
}
