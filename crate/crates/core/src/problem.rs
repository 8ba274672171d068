//! The convex window problem: costs, constraints and the quadratic operator.
//!
//! The stacked variable is z = (x, y, w, s) over a window of `T0` ticks:
//!
//! - x: node positions, one p-vector per (tick, node), tick-major;
//! - y: one auxiliary p-vector per (tick, range edge), relaxing the
//!   node-node distance equality onto a ball of radius d_ij;
//! - w: one auxiliary p-vector per (tick, node-anchor pair), ball radius r_ik;
//! - s: one auxiliary p-vector per (link, node) where link l joins window
//!   steps l and l+1, ball radius V_i·ΔT. Empty when T0 = 1.
//!
//! The objective is ½ zᵀMz − bᵀz with M = M1 + M2 + M3 assembled from the
//! incidence structures and the inverse noise variances, and b collecting
//! the anchor pull and the grouped bearing/heading vectors. `apply_m` walks
//! the edges directly and never materializes M; the dense form exists as an
//! independent route for verification on small instances.

use nalgebra::{DMatrix, DVector};

use crate::graph::{IncidenceStructure, NetworkSnapshot};
use crate::measurement::{Dataset, NoiseParams};
use crate::vecn;
use crate::{Error, Result};

/// Canonical indexing of the stacked variable z = (x, y, w, s).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub dim: usize,
    pub window: usize,
    pub n_nodes: usize,
    pub n_edges: usize,
    pub n_anchor_edges: usize,
}

impl Layout {
    pub fn from_incidence(inc: &IncidenceStructure) -> Self {
        Self {
            dim: inc.dim,
            window: inc.window,
            n_nodes: inc.n_nodes,
            n_edges: inc.n_edges(),
            n_anchor_edges: inc.n_anchor_edges(),
        }
    }

    pub fn n_links(&self) -> usize {
        self.window - 1
    }

    pub fn x_len(&self) -> usize {
        self.window * self.n_nodes * self.dim
    }

    pub fn y_len(&self) -> usize {
        self.window * self.n_edges * self.dim
    }

    pub fn w_len(&self) -> usize {
        self.window * self.n_anchor_edges * self.dim
    }

    pub fn s_len(&self) -> usize {
        self.n_links() * self.n_nodes * self.dim
    }

    pub fn total(&self) -> usize {
        self.x_len() + self.y_len() + self.w_len() + self.s_len()
    }

    pub fn x(&self, tau: usize, node: usize) -> std::ops::Range<usize> {
        let o = (tau * self.n_nodes + node) * self.dim;
        o..o + self.dim
    }

    pub fn y(&self, tau: usize, edge: usize) -> std::ops::Range<usize> {
        let o = self.x_len() + (tau * self.n_edges + edge) * self.dim;
        o..o + self.dim
    }

    pub fn w(&self, tau: usize, anchor_edge: usize) -> std::ops::Range<usize> {
        let o = self.x_len() + self.y_len() + (tau * self.n_anchor_edges + anchor_edge) * self.dim;
        o..o + self.dim
    }

    /// Link `l` joins window steps `l` and `l + 1`.
    pub fn s(&self, link: usize, node: usize) -> std::ops::Range<usize> {
        let o = self.x_len() + self.y_len() + self.w_len() + (link * self.n_nodes + node) * self.dim;
        o..o + self.dim
    }
}

/// A Euclidean ball constraint on one contiguous block of z.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ball {
    pub offset: usize,
    pub len: usize,
    pub radius: f64,
}

/// Per-component ball radii for y, w and s. x is unconstrained.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConstraintSet {
    pub balls: Vec<Ball>,
}

impl ConstraintSet {
    /// Largest constraint violation of `z`, for feasibility checks.
    pub fn max_violation(&self, z: &[f64]) -> f64 {
        self.balls
            .iter()
            .map(|b| (vecn::norm(&z[b.offset..b.offset + b.len]) - b.radius).max(0.0))
            .fold(0.0, f64::max)
    }
}

/// Anything that can play the quadratic objective ½ zᵀMz − bᵀz.
pub trait QuadraticOperator {
    fn dim(&self) -> usize;
    /// out = M z
    fn apply_m(&self, z: &[f64], out: &mut [f64]);
    fn b(&self) -> &[f64];

    /// ½ zᵀMz − bᵀz
    fn quad_cost(&self, z: &[f64]) -> f64 {
        let mut mz = vec![0.0; self.dim()];
        self.apply_m(z, &mut mz);
        0.5 * vecn::dot(z, &mz) - vecn::dot(self.b(), z)
    }

    /// out = M z − b
    fn gradient(&self, z: &[f64], out: &mut [f64]) {
        self.apply_m(z, out);
        for (o, bi) in out.iter_mut().zip(self.b()) {
            *o -= bi;
        }
    }
}

/// The assembled window problem.
///
/// Holds the measurement data of the window in canonical order together
/// with the derived weights and grouped vectors, and applies M edge-wise.
#[derive(Debug, Clone)]
pub struct QuadraticForm {
    pub layout: Layout,
    pub edges: Vec<(usize, usize)>,
    pub anchor_edges: Vec<(usize, usize)>,
    /// 1/σ_ij² per range edge.
    edge_weight: Vec<f64>,
    /// 1/ς_ik² per anchor pair.
    anchor_weight: Vec<f64>,
    /// 1/σ_i² per node (velocity), empty when T0 = 1.
    vel_weight: Vec<f64>,
    /// κ_ij per range edge; `None` for range-only edges.
    edge_kappa: Vec<Option<f64>>,
    /// λ_ik per anchor pair; `None` for range-only pairs.
    anchor_kappa: Vec<Option<f64>>,
    /// κ_i per node.
    vel_kappa: Vec<f64>,
    /// d_ij(τ), indexed τ * n_edges + e.
    pub ranges: Vec<f64>,
    /// u_ij(τ), p-strided, zero where the edge has no bearing.
    bearings: Vec<f64>,
    /// r_ik(τ), indexed τ * n_anchor_edges + ae.
    pub anchor_ranges: Vec<f64>,
    /// q_ik(τ), p-strided, zero where the pair has no bearing.
    anchor_bearings: Vec<f64>,
    /// a_k(τ) per anchor pair, p-strided.
    anchor_positions: Vec<f64>,
    /// V_i(τ)·ΔT per (link, node).
    pub steps: Vec<f64>,
    /// v_i(τ) per (link, node), p-strided.
    headings: Vec<f64>,
    b: Vec<f64>,
}

/// Builds the quadratic form and the constraint set for one window.
///
/// `snapshots` and `datasets` must cover the window oldest-first; their
/// measurement structure must match the incidence structure (the edge set is
/// frozen over the window). Anchor positions are taken per tick from the
/// snapshots.
pub fn assemble(
    inc: &IncidenceStructure,
    snapshots: &[&NetworkSnapshot],
    datasets: &[&Dataset],
    params: &NoiseParams,
) -> Result<(QuadraticForm, ConstraintSet)> {
    let t0 = inc.window;
    if snapshots.len() != t0 || datasets.len() != t0 {
        return Err(Error::Shape(format!(
            "window of {t0} ticks, got {} snapshots and {} datasets",
            snapshots.len(),
            datasets.len()
        )));
    }
    let last = snapshots[t0 - 1];
    params.validate(last)?;
    for s in snapshots {
        if !s.same_structure(last) {
            return Err(Error::Config("edge set changed within the window".into()));
        }
    }
    let layout = Layout::from_incidence(inc);
    let p = layout.dim;
    let me = layout.n_edges;
    let ma = layout.n_anchor_edges;
    let n = layout.n_nodes;

    let edge_weight: Vec<f64> = params.node_range_std.iter().map(|s| 1.0 / (s * s)).collect();
    let anchor_weight: Vec<f64> = params.anchor_range_std.iter().map(|s| 1.0 / (s * s)).collect();
    let vel_weight: Vec<f64> = if t0 > 1 {
        params.speed_std.iter().map(|s| 1.0 / (s * s)).collect()
    } else {
        Vec::new()
    };

    // scatter per-bearing-edge concentrations onto the range-edge lists
    let mut edge_kappa = vec![None; me];
    for (be, &(i, j)) in last.bearing_edges().iter().enumerate() {
        let e = inc
            .edges
            .iter()
            .position(|&x| x == (i, j))
            .expect("bearing edge has a range edge");
        edge_kappa[e] = Some(params.node_bearing_kappa[be]);
    }
    let mut anchor_kappa = vec![None; ma];
    for (abe, &(i, k)) in last.anchor_bearing_edges().iter().enumerate() {
        let ae = inc
            .anchor_edges
            .iter()
            .position(|&x| x == (i, k))
            .expect("anchor bearing has a range pair");
        anchor_kappa[ae] = Some(params.anchor_bearing_kappa[abe]);
    }
    let vel_kappa = params.heading_kappa.clone();

    let mut ranges = vec![0.0; t0 * me];
    let mut bearings = vec![0.0; t0 * me * p];
    let mut anchor_ranges = vec![0.0; t0 * ma];
    let mut anchor_bearings = vec![0.0; t0 * ma * p];
    let mut anchor_positions = vec![0.0; t0 * ma * p];
    for (tau, (snap, ds)) in snapshots.iter().zip(datasets).enumerate() {
        if ds.node_ranges.len() != me || ds.anchor_ranges.len() != ma {
            return Err(Error::Shape(format!("dataset at window step {tau} does not match structure")));
        }
        for e in 0..me {
            ranges[tau * me + e] = ds.node_ranges[e];
        }
        for (be, &(i, j)) in last.bearing_edges().iter().enumerate() {
            let e = inc.edges.iter().position(|&x| x == (i, j)).unwrap();
            bearings[(tau * me + e) * p..(tau * me + e + 1) * p]
                .copy_from_slice(&ds.node_bearings[be * p..(be + 1) * p]);
        }
        for ae in 0..ma {
            anchor_ranges[tau * ma + ae] = ds.anchor_ranges[ae];
            let k = inc.anchor_edges[ae].1;
            anchor_positions[(tau * ma + ae) * p..(tau * ma + ae + 1) * p]
                .copy_from_slice(snap.anchor_position(k));
        }
        for (abe, &(i, k)) in last.anchor_bearing_edges().iter().enumerate() {
            let ae = inc.anchor_edges.iter().position(|&x| x == (i, k)).unwrap();
            anchor_bearings[(tau * ma + ae) * p..(tau * ma + ae + 1) * p]
                .copy_from_slice(&ds.anchor_bearings[abe * p..(abe + 1) * p]);
        }
    }
    let links = layout.n_links();
    let mut steps = vec![0.0; links * n];
    let mut headings = vec![0.0; links * n * p];
    for l in 0..links {
        // link l joins window steps l and l+1; the velocity measurement
        // covering that interval is the one collected at step l+1
        let ds = datasets[l + 1];
        if ds.speeds.len() != n {
            return Err(Error::Shape("dataset speeds do not match node count".into()));
        }
        for i in 0..n {
            steps[l * n + i] = ds.speeds[i] * ds.dt;
            headings[(l * n + i) * p..(l * n + i + 1) * p]
                .copy_from_slice(&ds.headings[i * p..(i + 1) * p]);
        }
    }

    // grouped bearing vectors demand positive denominators
    for tau in 0..t0 {
        for e in 0..me {
            if edge_kappa[e].is_some() && ranges[tau * me + e] <= 0.0 {
                let (i, j) = inc.edges[e];
                return Err(Error::DegenerateMeasurement(format!(
                    "zero range on bearing edge {i}-{j} at window step {tau}"
                )));
            }
        }
        for ae in 0..ma {
            if anchor_kappa[ae].is_some() && anchor_ranges[tau * ma + ae] <= 0.0 {
                let (i, k) = inc.anchor_edges[ae];
                return Err(Error::DegenerateMeasurement(format!(
                    "zero range on anchor bearing pair {i}-{k} at window step {tau}"
                )));
            }
        }
    }

    let mut form = QuadraticForm {
        layout,
        edges: inc.edges.clone(),
        anchor_edges: inc.anchor_edges.clone(),
        edge_weight,
        anchor_weight,
        vel_weight,
        edge_kappa,
        anchor_kappa,
        vel_kappa,
        ranges,
        bearings,
        anchor_ranges,
        anchor_bearings,
        anchor_positions,
        steps,
        headings,
        b: Vec::new(),
    };
    form.b = form.build_b();

    let mut balls = Vec::with_capacity(t0 * (me + ma) + links * n);
    for tau in 0..t0 {
        for e in 0..me {
            let r = form.ranges[tau * me + e];
            balls.push(Ball {
                offset: layout.y(tau, e).start,
                len: p,
                radius: r,
            });
        }
    }
    for tau in 0..t0 {
        for ae in 0..ma {
            balls.push(Ball {
                offset: layout.w(tau, ae).start,
                len: p,
                radius: form.anchor_ranges[tau * ma + ae],
            });
        }
    }
    for l in 0..links {
        for i in 0..n {
            balls.push(Ball {
                offset: layout.s(l, i).start,
                len: p,
                radius: form.steps[l * n + i],
            });
        }
    }
    let constraints = ConstraintSet { balls };
    Ok((form, constraints))
}

impl QuadraticForm {
    fn build_b(&self) -> Vec<f64> {
        let l = &self.layout;
        let p = l.dim;
        let me = l.n_edges;
        let ma = l.n_anchor_edges;
        let n = l.n_nodes;
        let mut b = vec![0.0; l.total()];
        // anchor pull: x block gains a_k/ς², w block loses it
        for tau in 0..l.window {
            for (ae, &(i, _)) in self.anchor_edges.iter().enumerate() {
                let wgt = self.anchor_weight[ae];
                let a = &self.anchor_positions[(tau * ma + ae) * p..(tau * ma + ae + 1) * p];
                let xr = l.x(tau, i);
                let wr = l.w(tau, ae);
                for c in 0..p {
                    b[xr.start + c] += wgt * a[c];
                    b[wr.start + c] -= wgt * a[c];
                }
            }
        }
        // grouped bearings: κ u / d on y, λ q / r on w
        for tau in 0..l.window {
            for e in 0..me {
                if let Some(kappa) = self.edge_kappa[e] {
                    let d = self.ranges[tau * me + e];
                    let u = &self.bearings[(tau * me + e) * p..(tau * me + e + 1) * p];
                    let yr = l.y(tau, e);
                    for c in 0..p {
                        b[yr.start + c] += kappa * u[c] / d;
                    }
                }
            }
            for ae in 0..ma {
                if let Some(lambda) = self.anchor_kappa[ae] {
                    let r = self.anchor_ranges[tau * ma + ae];
                    let q = &self.anchor_bearings[(tau * ma + ae) * p..(tau * ma + ae + 1) * p];
                    let wr = l.w(tau, ae);
                    for c in 0..p {
                        b[wr.start + c] += lambda * q[c] / r;
                    }
                }
            }
        }
        // grouped headings: κ_i v / (V ΔT) on s; a zero step contributes
        // nothing (its ball radius is zero, pinning s at the origin)
        for link in 0..l.n_links() {
            for i in 0..n {
                let step = self.steps[link * n + i];
                if step > 0.0 {
                    let v = &self.headings[(link * n + i) * p..(link * n + i + 1) * p];
                    let sr = l.s(link, i);
                    for c in 0..p {
                        b[sr.start + c] += self.vel_kappa[i] * v[c] / step;
                    }
                }
            }
        }
        b
    }

    /// The grouped bearing vector κ_ij·u_ij(τ)/d_ij(τ), zero for range-only
    /// edges.
    pub fn u_tilde(&self, tau: usize, edge: usize) -> Vec<f64> {
        let p = self.layout.dim;
        let me = self.layout.n_edges;
        match self.edge_kappa[edge] {
            Some(kappa) => {
                let d = self.ranges[tau * me + edge];
                self.bearings[(tau * me + edge) * p..(tau * me + edge + 1) * p]
                    .iter()
                    .map(|u| kappa * u / d)
                    .collect()
            }
            None => vec![0.0; p],
        }
    }

    /// The grouped anchor bearing vector λ_ik·q_ik(τ)/r_ik(τ).
    pub fn q_tilde(&self, tau: usize, anchor_edge: usize) -> Vec<f64> {
        let p = self.layout.dim;
        let ma = self.layout.n_anchor_edges;
        match self.anchor_kappa[anchor_edge] {
            Some(lambda) => {
                let r = self.anchor_ranges[tau * ma + anchor_edge];
                self.anchor_bearings[(tau * ma + anchor_edge) * p..(tau * ma + anchor_edge + 1) * p]
                    .iter()
                    .map(|q| lambda * q / r)
                    .collect()
            }
            None => vec![0.0; p],
        }
    }

    /// The grouped heading vector κ_i·v_i(τ)/(V_i(τ)ΔT), zero when the
    /// measured step is zero.
    pub fn v_tilde(&self, link: usize, node: usize) -> Vec<f64> {
        let p = self.layout.dim;
        let n = self.layout.n_nodes;
        let step = self.steps[link * n + node];
        if step > 0.0 {
            self.headings[(link * n + node) * p..(link * n + node + 1) * p]
                .iter()
                .map(|v| self.vel_kappa[node] * v / step)
                .collect()
        } else {
            vec![0.0; p]
        }
    }

    pub fn anchor_position(&self, tau: usize, anchor_edge: usize) -> &[f64] {
        let p = self.layout.dim;
        let ma = self.layout.n_anchor_edges;
        &self.anchor_positions[(tau * ma + anchor_edge) * p..(tau * ma + anchor_edge + 1) * p]
    }

    pub fn edge_weight(&self, edge: usize) -> f64 {
        self.edge_weight[edge]
    }

    pub fn anchor_weight(&self, anchor_edge: usize) -> f64 {
        self.anchor_weight[anchor_edge]
    }

    pub fn vel_weight(&self, node: usize) -> f64 {
        self.vel_weight[node]
    }

    pub fn edge_kappa(&self, edge: usize) -> Option<f64> {
        self.edge_kappa[edge]
    }

    pub fn anchor_edge_kappa(&self, anchor_edge: usize) -> Option<f64> {
        self.anchor_kappa[anchor_edge]
    }

    pub fn vel_kappa(&self, node: usize) -> f64 {
        self.vel_kappa[node]
    }

    /// The convex objective of the window as written, including the constant
    /// anchor term that the quadratic form drops:
    /// f_dist(x,y,w) + f_ang(y,w) + f_vel(x,s).
    pub fn relaxed_cost(&self, z: &[f64]) -> f64 {
        let l = &self.layout;
        let p = l.dim;
        let me = l.n_edges;
        let ma = l.n_anchor_edges;
        let n = l.n_nodes;
        assert_eq!(z.len(), l.total(), "z dimension");
        let mut cost = 0.0;
        let mut diff = vec![0.0; p];
        for tau in 0..l.window {
            for (e, &(i, j)) in self.edges.iter().enumerate() {
                let xi = &z[l.x(tau, i)];
                let xj = &z[l.x(tau, j)];
                let y = &z[l.y(tau, e)];
                for c in 0..p {
                    diff[c] = xi[c] - xj[c] - y[c];
                }
                cost += 0.5 * self.edge_weight[e] * vecn::dot(&diff, &diff);
                if let Some(kappa) = self.edge_kappa[e] {
                    let d = self.ranges[tau * me + e];
                    let u = &self.bearings[(tau * me + e) * p..(tau * me + e + 1) * p];
                    cost -= kappa * vecn::dot(u, y) / d;
                }
            }
            for (ae, &(i, _)) in self.anchor_edges.iter().enumerate() {
                let xi = &z[l.x(tau, i)];
                let a = self.anchor_position(tau, ae);
                let w = &z[l.w(tau, ae)];
                for c in 0..p {
                    diff[c] = xi[c] - a[c] - w[c];
                }
                cost += 0.5 * self.anchor_weight[ae] * vecn::dot(&diff, &diff);
                if let Some(lambda) = self.anchor_kappa[ae] {
                    let r = self.anchor_ranges[tau * ma + ae];
                    let q = &self.anchor_bearings[(tau * ma + ae) * p..(tau * ma + ae + 1) * p];
                    cost -= lambda * vecn::dot(q, w) / r;
                }
            }
        }
        for link in 0..l.n_links() {
            for i in 0..n {
                let xa = &z[l.x(link + 1, i)];
                let xb = &z[l.x(link, i)];
                let s = &z[l.s(link, i)];
                for c in 0..p {
                    diff[c] = xa[c] - xb[c] - s[c];
                }
                cost += 0.5 * self.vel_weight[i] * vecn::dot(&diff, &diff);
                let step = self.steps[link * n + i];
                if step > 0.0 {
                    let v = &self.headings[(link * n + i) * p..(link * n + i + 1) * p];
                    cost -= self.vel_kappa[i] * vecn::dot(v, s) / step;
                }
            }
        }
        cost
    }

    /// The nonconvex maximum-likelihood cost at window positions `x`,
    /// diagnostic only. Errors on coincident points wherever a direction
    /// term needs them apart.
    pub fn mle_cost(&self, x: &[f64]) -> Result<f64> {
        let l = &self.layout;
        let p = l.dim;
        let me = l.n_edges;
        let ma = l.n_anchor_edges;
        let n = l.n_nodes;
        if x.len() != l.x_len() {
            return Err(Error::Shape(format!(
                "x has {} values, want {}",
                x.len(),
                l.x_len()
            )));
        }
        let mut cost = 0.0;
        let mut diff = vec![0.0; p];
        for tau in 0..l.window {
            for (e, &(i, j)) in self.edges.iter().enumerate() {
                let xi = &x[l.x(tau, i)];
                let xj = &x[l.x(tau, j)];
                vecn::sub(xi, xj, &mut diff);
                let dist = vecn::norm(&diff);
                let d = self.ranges[tau * me + e];
                cost += 0.5 * self.edge_weight[e] * (dist - d) * (dist - d);
                if let Some(kappa) = self.edge_kappa[e] {
                    if dist == 0.0 {
                        return Err(Error::DegenerateGeometry(format!(
                            "nodes {i} and {j} coincide at window step {tau}"
                        )));
                    }
                    let u = &self.bearings[(tau * me + e) * p..(tau * me + e + 1) * p];
                    cost -= kappa * vecn::dot(u, &diff) / dist;
                }
            }
            for (ae, &(i, _)) in self.anchor_edges.iter().enumerate() {
                let xi = &x[l.x(tau, i)];
                let a = self.anchor_position(tau, ae);
                vecn::sub(xi, a, &mut diff);
                let dist = vecn::norm(&diff);
                let r = self.anchor_ranges[tau * ma + ae];
                cost += 0.5 * self.anchor_weight[ae] * (dist - r) * (dist - r);
                if let Some(lambda) = self.anchor_kappa[ae] {
                    if dist == 0.0 {
                        return Err(Error::DegenerateGeometry(format!(
                            "node {i} sits on its anchor at window step {tau}"
                        )));
                    }
                    let q = &self.anchor_bearings[(tau * ma + ae) * p..(tau * ma + ae + 1) * p];
                    cost -= lambda * vecn::dot(q, &diff) / dist;
                }
            }
        }
        for link in 0..l.n_links() {
            for i in 0..n {
                let xa = &x[l.x(link + 1, i)];
                let xb = &x[l.x(link, i)];
                vecn::sub(xa, xb, &mut diff);
                let dist = vecn::norm(&diff);
                let step = self.steps[link * n + i];
                cost += 0.5 * self.vel_weight[i] * (dist - step) * (dist - step);
                if step > 0.0 {
                    if dist == 0.0 {
                        return Err(Error::DegenerateGeometry(format!(
                            "node {i} does not move across link {link}"
                        )));
                    }
                    let v = &self.headings[(link * n + i) * p..(link * n + i + 1) * p];
                    cost -= self.vel_kappa[i] * vecn::dot(v, &diff) / dist;
                }
            }
        }
        Ok(cost)
    }

    /// Dense M assembled by an independent route: explicit incidence and
    /// selector matrices combined blockwise. Intended for small instances.
    pub fn dense_m(&self) -> DMatrix<f64> {
        let (g1, g2, g3) = self.dense_blocks();
        let mut m = DMatrix::zeros(self.layout.total(), self.layout.total());
        for g in [g1, g2, g3] {
            if g.nrows() > 0 {
                m += g.transpose() * &g;
            }
        }
        m
    }

    /// Dense b via the same independent route.
    pub fn dense_b(&self) -> DVector<f64> {
        let l = &self.layout;
        let p = l.dim;
        let ma = l.n_anchor_edges;
        let (_, g2, _) = self.dense_blocks();
        let mut b = DVector::zeros(l.total());
        if g2.nrows() > 0 {
            // Σ_A α stacked over (tick, anchor pair)
            let mut sa = DVector::zeros(l.window * ma * p);
            for tau in 0..l.window {
                for ae in 0..ma {
                    let a = self.anchor_position(tau, ae);
                    let wgt = self.anchor_weight[ae].sqrt();
                    for c in 0..p {
                        sa[(tau * ma + ae) * p + c] = wgt * a[c];
                    }
                }
            }
            b += g2.transpose() * sa;
        }
        for tau in 0..l.window {
            for e in 0..l.n_edges {
                let ut = self.u_tilde(tau, e);
                for c in 0..p {
                    b[l.y(tau, e).start + c] += ut[c];
                }
            }
            for ae in 0..ma {
                let qt = self.q_tilde(tau, ae);
                for c in 0..p {
                    b[l.w(tau, ae).start + c] += qt[c];
                }
            }
        }
        for link in 0..l.n_links() {
            for i in 0..l.n_nodes {
                let vt = self.v_tilde(link, i);
                for c in 0..p {
                    b[l.s(link, i).start + c] += vt[c];
                }
            }
        }
        b
    }

    /// G1 = [Σ_N A, −Σ_N, 0, 0], G2 = [Σ_A E, 0, −Σ_A, 0],
    /// G3 = [Σ_V N, 0, 0, −Σ_V]; M_k = G_kᵀ G_k.
    fn dense_blocks(&self) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let l = &self.layout;
        let p = l.dim;
        let t0 = l.window;
        let total = l.total();

        let inc = self.rebuild_incidence();
        let a = inc.matrix_a();
        let e = inc.matrix_e();
        let nmat = inc.matrix_n();

        let mut g1 = DMatrix::zeros(l.y_len(), total);
        for tau in 0..t0 {
            for eidx in 0..l.n_edges {
                let wgt = self.edge_weight[eidx].sqrt();
                for c in 0..p {
                    let row = (tau * l.n_edges + eidx) * p + c;
                    for col in 0..l.x_len() {
                        g1[(row, col)] = wgt * a[(row, col)];
                    }
                    g1[(row, l.x_len() + row)] = -wgt;
                }
            }
        }
        let mut g2 = DMatrix::zeros(l.w_len(), total);
        for tau in 0..t0 {
            for ae in 0..l.n_anchor_edges {
                let wgt = self.anchor_weight[ae].sqrt();
                for c in 0..p {
                    let row = (tau * l.n_anchor_edges + ae) * p + c;
                    for col in 0..l.x_len() {
                        g2[(row, col)] = wgt * e[(row, col)];
                    }
                    g2[(row, l.x_len() + l.y_len() + row)] = -wgt;
                }
            }
        }
        let mut g3 = DMatrix::zeros(l.s_len(), total);
        for link in 0..l.n_links() {
            for i in 0..l.n_nodes {
                let wgt = self.vel_weight[i].sqrt();
                for c in 0..p {
                    let row = (link * l.n_nodes + i) * p + c;
                    for col in 0..l.x_len() {
                        g3[(row, col)] = wgt * nmat[(row, col)];
                    }
                    g3[(row, l.x_len() + l.y_len() + l.w_len() + row)] = -wgt;
                }
            }
        }
        (g1, g2, g3)
    }

    fn rebuild_incidence(&self) -> IncidenceStructure {
        let l = &self.layout;
        let mut node_edges = vec![Vec::new(); l.n_nodes];
        for (e, &(i, j)) in self.edges.iter().enumerate() {
            node_edges[i].push(crate::graph::IncidentEdge {
                edge: e,
                neighbor: j,
                sign: 1.0,
            });
            node_edges[j].push(crate::graph::IncidentEdge {
                edge: e,
                neighbor: i,
                sign: -1.0,
            });
        }
        let mut node_anchor_edges = vec![Vec::new(); l.n_nodes];
        for (ae, &(i, _)) in self.anchor_edges.iter().enumerate() {
            node_anchor_edges[i].push(ae);
        }
        IncidenceStructure {
            window: l.window,
            dim: l.dim,
            n_nodes: l.n_nodes,
            n_anchors: 0,
            edges: self.edges.clone(),
            anchor_edges: self.anchor_edges.clone(),
            node_edges,
            node_anchor_edges,
        }
    }
}

impl QuadraticOperator for QuadraticForm {
    fn dim(&self) -> usize {
        self.layout.total()
    }

    fn b(&self) -> &[f64] {
        &self.b
    }

    fn apply_m(&self, z: &[f64], out: &mut [f64]) {
        let l = &self.layout;
        let p = l.dim;
        let n = l.n_nodes;
        assert_eq!(z.len(), l.total());
        assert_eq!(out.len(), l.total());
        out.fill(0.0);
        // M1: per (tick, edge), residual ρ = w·(x_i − x_j − y)
        for tau in 0..l.window {
            for (e, &(i, j)) in self.edges.iter().enumerate() {
                let wgt = self.edge_weight[e];
                let xi = l.x(tau, i).start;
                let xj = l.x(tau, j).start;
                let ye = l.y(tau, e).start;
                for c in 0..p {
                    let rho = wgt * (z[xi + c] - z[xj + c] - z[ye + c]);
                    out[xi + c] += rho;
                    out[xj + c] -= rho;
                    out[ye + c] -= rho;
                }
            }
            // M2: per (tick, anchor pair), residual ρ = w·(x_i − w_ik)
            for (ae, &(i, _)) in self.anchor_edges.iter().enumerate() {
                let wgt = self.anchor_weight[ae];
                let xi = l.x(tau, i).start;
                let we = l.w(tau, ae).start;
                for c in 0..p {
                    let rho = wgt * (z[xi + c] - z[we + c]);
                    out[xi + c] += rho;
                    out[we + c] -= rho;
                }
            }
        }
        // M3: per (link, node), residual ρ = w·(x(l+1) − x(l) − s)
        for link in 0..l.n_links() {
            for i in 0..n {
                let wgt = self.vel_weight[i];
                let xa = l.x(link + 1, i).start;
                let xb = l.x(link, i).start;
                let se = l.s(link, i).start;
                for c in 0..p {
                    let rho = wgt * (z[xa + c] - z[xb + c] - z[se + c]);
                    out[xa + c] += rho;
                    out[xb + c] -= rho;
                    out[se + c] -= rho;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{incidence, BearingPolicy};
    use crate::measurement::{synthesize_dataset, NoiseParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one_node_one_anchor() -> (QuadraticForm, ConstraintSet) {
        let s = NetworkSnapshot::build(
            2,
            0,
            vec![0.0, 0.0],
            vec![3.0, 4.0],
            10.0,
            &BearingPolicy::RangeOnly,
        )
        .unwrap();
        let inc = incidence(&s, 1).unwrap();
        let params = NoiseParams::uniform(&s, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0);
        let ds = synthesize_dataset(
            &s,
            &vec![0.0, 0.0],
            &params,
            1.0,
            &mut ChaCha8Rng::seed_from_u64(0),
        )
        .unwrap();
        assemble(&inc, &[&s], &[&ds], &params).unwrap()
    }

    #[test]
    fn hand_expanded_anchor_block() {
        // one node, one anchor, T0 = 1, unit stds: M = [[1,-1],[-1,1]] ⊗ I_p
        let (form, _) = one_node_one_anchor();
        let m = form.dense_m();
        assert_eq!(m.nrows(), 4);
        let expect = [
            [1.0, 0.0, -1.0, 0.0],
            [0.0, 1.0, 0.0, -1.0],
            [-1.0, 0.0, 1.0, 0.0],
            [0.0, -1.0, 0.0, 1.0],
        ];
        for r in 0..4 {
            for c in 0..4 {
                assert!((m[(r, c)] - expect[r][c]).abs() < 1e-15, "({r},{c})");
            }
        }
    }

    fn random_instance(
        seed: u64,
        n: usize,
        m: usize,
        t0: usize,
    ) -> (QuadraticForm, ConstraintSet) {
        let inst = crate::synthetic::random_instance(&crate::synthetic::InstanceSpec {
            seed,
            n_nodes: n,
            n_anchors: m,
            dim: 2,
            window: t0,
            ..Default::default()
        })
        .unwrap();
        inst.assemble().unwrap()
    }

    #[test]
    fn apply_matches_dense_on_random_instances() {
        for (seed, n, m, t0) in [(1, 4, 2, 1), (2, 5, 1, 3), (3, 3, 2, 4)] {
            let (form, _) = random_instance(seed, n, m, t0);
            let dim = form.dim();
            assert!(dim <= 500);
            let dense = form.dense_m();
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            for _ in 0..5 {
                let z: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
                let mut out = vec![0.0; dim];
                form.apply_m(&z, &mut out);
                let zd = DVector::from_column_slice(&z);
                let od = &dense * zd;
                for i in 0..dim {
                    assert!((out[i] - od[i]).abs() <= 1e-12, "component {i}");
                }
            }
            // b agrees across routes too
            let bd = form.dense_b();
            for i in 0..dim {
                assert!((form.b()[i] - bd[i]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn dense_m_is_symmetric_psd() {
        let (form, _) = random_instance(7, 5, 2, 2);
        let m = form.dense_m();
        let mt = m.transpose();
        let asym = (&m - &mt).amax();
        assert!(asym <= 1e-10);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..10 {
            let z = DVector::from_fn(m.nrows(), |_, _| rng.gen::<f64>() * 2.0 - 1.0);
            let v = z.dot(&(&m * &z));
            assert!(v >= -1e-10, "zᵀMz = {v}");
        }
    }

    #[test]
    fn relaxed_cost_matches_quadratic_up_to_constant() {
        for seed in [11, 12, 13] {
            let (form, _) = random_instance(seed, 4, 2, 3);
            let dim = form.dim();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let z: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>() * 4.0 - 2.0).collect();
            let zero = vec![0.0; dim];
            let lhs = form.relaxed_cost(&z) - form.relaxed_cost(&zero);
            let rhs = form.quad_cost(&z);
            assert!(
                (lhs - rhs).abs() <= 1e-10 * (1.0 + rhs.abs()),
                "seed {seed}: {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn relaxed_cost_at_zero_is_the_anchor_constant() {
        let (form, _) = random_instance(21, 3, 2, 2);
        let l = form.layout;
        let mut konst = 0.0;
        for tau in 0..l.window {
            for ae in 0..l.n_anchor_edges {
                let a = form.anchor_position(tau, ae);
                konst += 0.5 * form.anchor_weight(ae) * vecn::dot(a, a);
            }
        }
        let zero = vec![0.0; l.total()];
        assert!((form.relaxed_cost(&zero) - konst).abs() <= 1e-10 * (1.0 + konst));
    }

    #[test]
    fn gradient_is_mz_minus_b() {
        let (form, _) = random_instance(31, 4, 1, 2);
        let dim = form.dim();
        // z = 0 → gradient = −b
        let zero = vec![0.0; dim];
        let mut g = vec![0.0; dim];
        form.gradient(&zero, &mut g);
        for i in 0..dim {
            assert_eq!(g[i], -form.b()[i]);
        }
    }

    #[test]
    fn finite_differences_validate_gradient() {
        let (form, _) = random_instance(41, 4, 2, 2);
        let dim = form.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let z: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let mut g = vec![0.0; dim];
        form.gradient(&z, &mut g);
        let fd = crate::verify::fd_gradient(&form, &z, 1e-5);
        let num: f64 = g
            .iter()
            .zip(&fd)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let den = vecn::norm(&g).max(1.0);
        assert!(num / den <= 1e-6, "relative gradient error {}", num / den);
    }

    #[test]
    fn mle_cost_simple_cases() {
        // one edge: distance 2 measured as 1, unit sigma, no bearings
        let s = NetworkSnapshot::from_parts(
            2,
            0,
            vec![0.0, 0.0, 2.0, 0.0],
            vec![],
            vec![(0, 1)],
            vec![],
            vec![vec![], vec![]],
            vec![vec![], vec![]],
        )
        .unwrap();
        let inc = incidence(&s, 1).unwrap();
        let params = NoiseParams::uniform(&s, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0);
        let ds = Dataset {
            tick: 0,
            dt: 1.0,
            node_ranges: vec![1.0],
            node_bearings: vec![],
            anchor_ranges: vec![],
            anchor_bearings: vec![],
            speeds: vec![0.0, 0.0],
            headings: vec![1.0, 0.0, 1.0, 0.0],
        };
        let (form, _) = assemble(&inc, &[&s], &[&ds], &params).unwrap();
        let cost = form.mle_cost(&[0.0, 0.0, 2.0, 0.0]).unwrap();
        assert!((cost - 0.5).abs() < 1e-15);
    }

    #[test]
    fn mle_cost_vanishing_residuals_hit_negative_kappa_sum() {
        // noiseless data at the truth: distance terms vanish and every
        // direction term contributes its concentration with full weight
        let s = NetworkSnapshot::build(
            2,
            0,
            vec![0.0, 0.0, 3.0, 0.0],
            vec![0.0, 4.0],
            10.0,
            &BearingPolicy::All,
        )
        .unwrap();
        let inc = incidence(&s, 1).unwrap();
        let params = NoiseParams::uniform(&s, 1e-12, 1e-12, 800.0, 900.0, 1e-12, 1000.0);
        // exact measurements
        let ds = Dataset {
            tick: 0,
            dt: 1.0,
            node_ranges: vec![3.0],
            node_bearings: vec![-1.0, 0.0],
            anchor_ranges: vec![4.0, 5.0],
            anchor_bearings: vec![0.0, -1.0, 0.6, -0.8],
            speeds: vec![0.0, 0.0],
            headings: vec![1.0, 0.0, 1.0, 0.0],
        };
        let (form, _) = assemble(&inc, &[&s], &[&ds], &params).unwrap();
        let cost = form.mle_cost(&[0.0, 0.0, 3.0, 0.0]).unwrap();
        let want = -(800.0 + 900.0 + 900.0);
        assert!((cost - want).abs() < 1e-9, "{cost} vs {want}");
    }

    #[test]
    fn mle_cost_matches_independent_transcription() {
        let inst = crate::synthetic::random_instance(&crate::synthetic::InstanceSpec {
            seed: 55,
            n_nodes: 4,
            n_anchors: 2,
            dim: 2,
            window: 1,
            ..Default::default()
        })
        .unwrap();
        let (form, _) = inst.assemble().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(56);
        let x: Vec<f64> = (0..form.layout.x_len())
            .map(|_| rng.gen::<f64>() * 10.0)
            .collect();
        let got = form.mle_cost(&x).unwrap();

        // independent transcription of the static likelihood
        let snap = &inst.snapshots[0];
        let ds = &inst.datasets[0];
        let p = snap.dim();
        let mut want = 0.0;
        for (e, &(i, j)) in snap.range_edges().iter().enumerate() {
            let dx: Vec<f64> = (0..p).map(|c| x[i * p + c] - x[j * p + c]).collect();
            let dist = vecn::norm(&dx);
            let sigma = inst.params.node_range_std[e];
            want += (dist - ds.node_ranges[e]).powi(2) / (2.0 * sigma * sigma);
        }
        for (be, &(i, j)) in snap.bearing_edges().iter().enumerate() {
            let dx: Vec<f64> = (0..p).map(|c| x[i * p + c] - x[j * p + c]).collect();
            let dist = vecn::norm(&dx);
            let u = &ds.node_bearings[be * p..(be + 1) * p];
            want -= inst.params.node_bearing_kappa[be] * vecn::dot(u, &dx) / dist;
        }
        for (ae, &(i, k)) in snap.anchor_edges().iter().enumerate() {
            let a = snap.anchor_position(k);
            let dx: Vec<f64> = (0..p).map(|c| x[i * p + c] - a[c]).collect();
            let dist = vecn::norm(&dx);
            let sigma = inst.params.anchor_range_std[ae];
            want += (dist - ds.anchor_ranges[ae]).powi(2) / (2.0 * sigma * sigma);
        }
        for (abe, &(i, k)) in snap.anchor_bearing_edges().iter().enumerate() {
            let a = snap.anchor_position(k);
            let dx: Vec<f64> = (0..p).map(|c| x[i * p + c] - a[c]).collect();
            let dist = vecn::norm(&dx);
            let q = &ds.anchor_bearings[abe * p..(abe + 1) * p];
            want -= inst.params.anchor_bearing_kappa[abe] * vecn::dot(q, &dx) / dist;
        }
        assert!(
            (got - want).abs() <= 1e-12 * (1.0 + want.abs()),
            "{got} vs {want}"
        );
    }

    #[test]
    fn degenerate_bearing_edge_is_rejected() {
        let s = NetworkSnapshot::build(
            2,
            0,
            vec![0.0, 0.0, 1.0, 0.0],
            vec![],
            2.0,
            &BearingPolicy::All,
        )
        .unwrap();
        let inc = incidence(&s, 1).unwrap();
        let params = NoiseParams::uniform(&s, 1.0, 1.0, 10.0, 10.0, 1.0, 10.0);
        let ds = Dataset {
            tick: 0,
            dt: 1.0,
            node_ranges: vec![0.0], // zero range with a bearing present
            node_bearings: vec![1.0, 0.0],
            anchor_ranges: vec![],
            anchor_bearings: vec![],
            speeds: vec![0.0, 0.0],
            headings: vec![1.0, 0.0, 1.0, 0.0],
        };
        let r = assemble(&inc, &[&s], &[&ds], &params);
        assert!(matches!(r, Err(Error::DegenerateMeasurement(_))));
    }

    #[test]
    fn no_anchors_means_no_linear_anchor_pull() {
        let s = NetworkSnapshot::build(
            2,
            0,
            vec![0.0, 0.0, 1.0, 0.0],
            vec![],
            2.0,
            &BearingPolicy::RangeOnly,
        )
        .unwrap();
        let inc = incidence(&s, 1).unwrap();
        let params = NoiseParams::uniform(&s, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0);
        let ds = synthesize_dataset(
            &s,
            &vec![0.0; 4],
            &params,
            1.0,
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap();
        let (form, cs) = assemble(&inc, &[&s], &[&ds], &params).unwrap();
        // without bearings or anchors, b vanishes entirely
        assert!(form.b().iter().all(|&v| v == 0.0));
        // T0 = 1: no s component
        assert_eq!(form.layout.s_len(), 0);
        assert_eq!(cs.balls.len(), form.layout.window * form.layout.n_edges);
    }

    #[test]
    fn doubling_kappa_doubles_its_b_block_only() {
        let inst = crate::synthetic::random_instance(&crate::synthetic::InstanceSpec {
            seed: 77,
            n_nodes: 3,
            n_anchors: 1,
            dim: 2,
            window: 2,
            ..Default::default()
        })
        .unwrap();
        let (form, _) = inst.assemble().unwrap();
        let mut params2 = inst.params.clone();
        let target_edge = 0usize;
        params2.node_bearing_kappa[target_edge] *= 2.0;
        let inc = incidence(&inst.snapshots[1], 2).unwrap();
        let snaps: Vec<&NetworkSnapshot> = inst.snapshots.iter().collect();
        let data: Vec<&Dataset> = inst.datasets.iter().collect();
        let (form2, _) = assemble(&inc, &snaps, &data, &params2).unwrap();
        let l = form.layout;
        let (bi, bj) = inst.snapshots[1].bearing_edges()[target_edge];
        let e = inst
            .snapshots[1]
            .range_edges()
            .iter()
            .position(|&x| x == (bi, bj))
            .unwrap();
        for i in 0..l.total() {
            let in_target_block =
                (0..l.window).any(|tau| l.y(tau, e).contains(&i));
            if in_target_block {
                assert!((form2.b()[i] - 2.0 * form.b()[i]).abs() <= 1e-15);
            } else {
                assert_eq!(form2.b()[i], form.b()[i]);
            }
        }
    }

    #[test]
    fn convexity_surrogate_on_random_pairs() {
        let (form, _) = random_instance(91, 4, 2, 3);
        let dim = form.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(91);
        for _ in 0..20 {
            let z1: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>() * 4.0 - 2.0).collect();
            let z2: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>() * 4.0 - 2.0).collect();
            let t: f64 = rng.gen();
            let zm: Vec<f64> = z1
                .iter()
                .zip(&z2)
                .map(|(a, b)| t * a + (1.0 - t) * b)
                .collect();
            let lhs = form.relaxed_cost(&zm);
            let rhs = t * form.relaxed_cost(&z1) + (1.0 - t) * form.relaxed_cost(&z2);
            assert!(lhs <= rhs + 1e-9, "{lhs} > {rhs}");
        }
    }
}
