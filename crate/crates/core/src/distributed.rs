//! Per-node solver over a simulated synchronous message-passing network.
//!
//! Each node owns its window positions, the auxiliary variables of its
//! incident edges and its velocity chain, plus the momentum buffers. One
//! round: every node extrapolates, broadcasts its extrapolated window
//! positions to its graph neighbors, then updates all of its blocks from
//! its own data and the received broadcasts. Edge variables are computed
//! redundantly by both endpoints; the inputs coincide bitwise, so the two
//! copies never diverge.
//!
//! Node updates within a round are pure functions of round state, so the
//! update order cannot matter; the round barrier is the only
//! synchronization point.

use std::collections::BTreeMap;

use crate::graph::IncidenceStructure;
use crate::problem::QuadraticForm;
use crate::solver::SolverConfig;
use crate::vecn;
use crate::{Error, Result};

/// An incident range edge as seen by one endpoint.
#[derive(Debug, Clone)]
pub struct LocalEdge {
    /// Index in the global edge list (used only to gather results).
    pub edge_index: usize,
    pub neighbor: usize,
    /// +1 when this node is the lower id of the edge.
    pub sign: f64,
    pub weight: f64,
    /// Ball radius d_ij(τ) per window step.
    pub radii: Vec<f64>,
    /// Grouped bearing κ·u/d per window step, p-strided (zero when absent).
    pub utilde: Vec<f64>,
}

/// A node-anchor pair owned by the node.
#[derive(Debug, Clone)]
pub struct LocalAnchorEdge {
    pub anchor_edge_index: usize,
    pub anchor: usize,
    pub weight: f64,
    pub radii: Vec<f64>,
    pub qtilde: Vec<f64>,
    /// Known anchor position per window step, p-strided.
    pub positions: Vec<f64>,
}

/// The node's own velocity chain (absent for a single-tick window).
#[derive(Debug, Clone)]
pub struct LocalVelocity {
    pub weight: f64,
    /// Ball radius V·ΔT per link.
    pub radii: Vec<f64>,
    /// Grouped heading per link, p-strided.
    pub vtilde: Vec<f64>,
}

/// Everything one node stores between rounds.
#[derive(Debug, Clone)]
pub struct NodeState {
    pub id: usize,
    pub window: usize,
    pub dim: usize,
    pub edges: Vec<LocalEdge>,
    pub anchors: Vec<LocalAnchorEdge>,
    pub velocity: Option<LocalVelocity>,
    /// Window positions, tick-major p-strided.
    pub x: Vec<f64>,
    /// Edge variables, local-edge-major then tick: [e][τ][p].
    pub y: Vec<f64>,
    /// Anchor variables, [ae][τ][p].
    pub w: Vec<f64>,
    /// Velocity variables, [link][p].
    pub s: Vec<f64>,
    pub x_prev: Vec<f64>,
    pub y_prev: Vec<f64>,
    pub w_prev: Vec<f64>,
    pub s_prev: Vec<f64>,
}

impl NodeState {
    fn zeroed(
        id: usize,
        window: usize,
        dim: usize,
        edges: Vec<LocalEdge>,
        anchors: Vec<LocalAnchorEdge>,
        velocity: Option<LocalVelocity>,
    ) -> Self {
        let links = window - 1;
        let x = vec![0.0; window * dim];
        let y = vec![0.0; edges.len() * window * dim];
        let w = vec![0.0; anchors.len() * window * dim];
        let s = vec![0.0; if velocity.is_some() { links * dim } else { 0 }];
        Self {
            id,
            window,
            dim,
            edges,
            anchors,
            velocity,
            x_prev: x.clone(),
            y_prev: y.clone(),
            w_prev: w.clone(),
            s_prev: s.clone(),
            x,
            y,
            w,
            s,
        }
    }

    fn extrapolate(curr: &[f64], prev: &[f64], beta: f64) -> Vec<f64> {
        curr.iter()
            .zip(prev)
            .map(|(c, p)| c + beta * (c - p))
            .collect()
    }

    /// The broadcast for a round: the node's extrapolated window positions.
    pub fn broadcast(&self, round: usize, beta: f64) -> RoundMessage {
        RoundMessage {
            sender: self.id,
            round,
            xhat: Self::extrapolate(&self.x, &self.x_prev, beta),
        }
    }
}

/// Extrapolated window positions broadcast to all graph neighbors.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundMessage {
    pub sender: usize,
    pub round: usize,
    pub xhat: Vec<f64>,
}

/// The blocks a node replaces at the end of a round.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeUpdate {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub w: Vec<f64>,
    pub s: Vec<f64>,
}

/// One delivered broadcast, for communication-cost analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MessageRecord {
    pub round: usize,
    pub sender: usize,
    pub receiver: usize,
    pub payload: usize,
}

/// Computes a node's next blocks from its round-κ state and the neighbor
/// broadcasts of the same round. Pure: reads nothing beyond its arguments.
pub fn node_round_update(
    state: &NodeState,
    lipschitz: f64,
    beta: f64,
    round: usize,
    messages: &BTreeMap<usize, RoundMessage>,
) -> Result<NodeUpdate> {
    let p = state.dim;
    let t0 = state.window;
    let l = lipschitz;

    for e in &state.edges {
        match messages.get(&e.neighbor) {
            Some(m) if m.round == round => {}
            _ => {
                return Err(Error::MissingMessage {
                    sender: e.neighbor,
                    round,
                })
            }
        }
    }

    let xhat = NodeState::extrapolate(&state.x, &state.x_prev, beta);
    let yhat = NodeState::extrapolate(&state.y, &state.y_prev, beta);
    let what = NodeState::extrapolate(&state.w, &state.w_prev, beta);
    let shat = NodeState::extrapolate(&state.s, &state.s_prev, beta);

    // velocity residuals θ_l = w_v (ŝ_l − (x̂_{l+1} − x̂_l)) feed the x update
    let theta: Vec<f64> = match &state.velocity {
        Some(vel) => {
            let mut th = vec![0.0; (t0 - 1) * p];
            for link in 0..t0 - 1 {
                for c in 0..p {
                    th[link * p + c] = vel.weight
                        * (shat[link * p + c] - (xhat[(link + 1) * p + c] - xhat[link * p + c]));
                }
            }
            th
        }
        None => Vec::new(),
    };

    let weight_sum: f64 = state.edges.iter().map(|e| e.weight).sum::<f64>()
        + state.anchors.iter().map(|a| a.weight).sum::<f64>();

    let mut x_new = vec![0.0; t0 * p];
    for tau in 0..t0 {
        for c in 0..p {
            // F1: own extrapolated position scaled by the leftover weight
            let f1 = xhat[tau * p + c] * (l - weight_sum);
            // F2: neighbor pull through each incident edge
            let mut f2 = 0.0;
            for (le, e) in state.edges.iter().enumerate() {
                let msg = &messages[&e.neighbor];
                let yh = yhat[(le * t0 + tau) * p + c];
                f2 += e.weight * (msg.xhat[tau * p + c] + e.sign * yh);
            }
            // F3: anchor pull
            let mut f3 = 0.0;
            for (la, a) in state.anchors.iter().enumerate() {
                let wh = what[(la * t0 + tau) * p + c];
                f3 += a.weight * (wh + a.positions[tau * p + c]);
            }
            // F4: temporal chain, [Nᵀθ]_τ = θ_{τ-1} − θ_τ
            let mut f4 = 0.0;
            if !theta.is_empty() {
                if tau >= 1 {
                    f4 += theta[(tau - 1) * p + c];
                }
                if tau < t0 - 1 {
                    f4 -= theta[tau * p + c];
                }
            }
            x_new[tau * p + c] = (f1 + f2 + f3 + f4) / l;
        }
    }

    let mut y_new = vec![0.0; state.y.len()];
    for (le, e) in state.edges.iter().enumerate() {
        let msg = &messages[&e.neighbor];
        for tau in 0..t0 {
            let mut block = vec![0.0; p];
            for c in 0..p {
                // both endpoints evaluate x̂_lo − x̂_hi with identical
                // operand order, keeping the copies bitwise equal
                let diff = if e.sign > 0.0 {
                    xhat[tau * p + c] - msg.xhat[tau * p + c]
                } else {
                    msg.xhat[tau * p + c] - xhat[tau * p + c]
                };
                let inner = e.utilde[tau * p + c]
                    + (l - e.weight) * yhat[(le * t0 + tau) * p + c]
                    + e.weight * diff;
                block[c] = inner / l;
            }
            project_ball(&mut block, e.radii[tau]);
            y_new[(le * t0 + tau) * p..(le * t0 + tau + 1) * p].copy_from_slice(&block);
        }
    }

    let mut w_new = vec![0.0; state.w.len()];
    for (la, a) in state.anchors.iter().enumerate() {
        for tau in 0..t0 {
            let mut block = vec![0.0; p];
            for c in 0..p {
                let inner = a.qtilde[tau * p + c]
                    + (l - a.weight) * what[(la * t0 + tau) * p + c]
                    + a.weight * (xhat[tau * p + c] - a.positions[tau * p + c]);
                block[c] = inner / l;
            }
            project_ball(&mut block, a.radii[tau]);
            w_new[(la * t0 + tau) * p..(la * t0 + tau + 1) * p].copy_from_slice(&block);
        }
    }

    let mut s_new = vec![0.0; state.s.len()];
    if let Some(vel) = &state.velocity {
        for link in 0..t0 - 1 {
            let mut block = vec![0.0; p];
            for c in 0..p {
                let inner = vel.vtilde[link * p + c]
                    + (l - vel.weight) * shat[link * p + c]
                    + vel.weight * (xhat[(link + 1) * p + c] - xhat[link * p + c]);
                block[c] = inner / l;
            }
            project_ball(&mut block, vel.radii[link]);
            s_new[link * p..(link + 1) * p].copy_from_slice(&block);
        }
    }

    let finite = x_new
        .iter()
        .chain(&y_new)
        .chain(&w_new)
        .chain(&s_new)
        .all(|v| v.is_finite());
    if !finite {
        return Err(Error::Divergence(round));
    }
    Ok(NodeUpdate {
        x: x_new,
        y: y_new,
        w: w_new,
        s: s_new,
    })
}

fn project_ball(block: &mut [f64], radius: f64) {
    let n = vecn::norm(block);
    if n > radius {
        if radius == 0.0 {
            block.fill(0.0);
        } else {
            let scale = radius / n;
            for v in block.iter_mut() {
                *v *= scale;
            }
        }
    }
}

/// The simulated network: node states plus the neighbor map.
#[derive(Debug, Clone)]
pub struct DistributedNetwork {
    pub nodes: Vec<NodeState>,
    neighbors: Vec<Vec<usize>>,
    layout: crate::problem::Layout,
}

impl DistributedNetwork {
    /// Builds node states from the assembled window problem, so both solver
    /// paths consume identical numbers.
    pub fn build(form: &QuadraticForm, inc: &IncidenceStructure) -> Result<Self> {
        let layout = form.layout;
        let p = layout.dim;
        let t0 = layout.window;
        let n = layout.n_nodes;
        let me = layout.n_edges;
        let ma = layout.n_anchor_edges;
        let mut nodes = Vec::with_capacity(n);
        for i in 0..n {
            let mut edges = Vec::new();
            for ie in &inc.node_edges[i] {
                let mut radii = Vec::with_capacity(t0);
                let mut utilde = Vec::with_capacity(t0 * p);
                for tau in 0..t0 {
                    radii.push(form.ranges[tau * me + ie.edge]);
                    utilde.extend(form.u_tilde(tau, ie.edge));
                }
                edges.push(LocalEdge {
                    edge_index: ie.edge,
                    neighbor: ie.neighbor,
                    sign: ie.sign,
                    weight: form.edge_weight(ie.edge),
                    radii,
                    utilde,
                });
            }
            let mut anchors = Vec::new();
            for &ae in &inc.node_anchor_edges[i] {
                let mut radii = Vec::with_capacity(t0);
                let mut qtilde = Vec::with_capacity(t0 * p);
                let mut positions = Vec::with_capacity(t0 * p);
                for tau in 0..t0 {
                    radii.push(form.anchor_ranges[tau * ma + ae]);
                    qtilde.extend(form.q_tilde(tau, ae));
                    positions.extend_from_slice(form.anchor_position(tau, ae));
                }
                anchors.push(LocalAnchorEdge {
                    anchor_edge_index: ae,
                    anchor: inc.anchor_edges[ae].1,
                    weight: form.anchor_weight(ae),
                    radii,
                    qtilde,
                    positions,
                });
            }
            let velocity = if t0 > 1 {
                let mut radii = Vec::with_capacity(t0 - 1);
                let mut vtilde = Vec::with_capacity((t0 - 1) * p);
                for link in 0..t0 - 1 {
                    radii.push(form.steps[link * n + i]);
                    vtilde.extend(form.v_tilde(link, i));
                }
                Some(LocalVelocity {
                    weight: form.vel_weight(i),
                    radii,
                    vtilde,
                })
            } else {
                None
            };
            nodes.push(NodeState::zeroed(i, t0, p, edges, anchors, velocity));
        }
        let mut neighbors = vec![Vec::new(); n];
        for &(i, j) in &inc.edges {
            neighbors[i].push(j);
            neighbors[j].push(i);
        }
        for nb in neighbors.iter_mut() {
            nb.sort_unstable();
        }
        Ok(Self {
            nodes,
            neighbors,
            layout,
        })
    }

    pub fn layout(&self) -> &crate::problem::Layout {
        &self.layout
    }

    /// Scatters a canonical z into the per-node blocks (both momentum
    /// buffers), e.g. to warm-start from a previous window.
    pub fn set_initial(&mut self, z: &[f64]) -> Result<()> {
        let l = self.layout;
        if z.len() != l.total() {
            return Err(Error::Shape(format!("z has {} values, want {}", z.len(), l.total())));
        }
        let p = l.dim;
        let t0 = l.window;
        for node in &mut self.nodes {
            for tau in 0..t0 {
                node.x[tau * p..(tau + 1) * p].copy_from_slice(&z[l.x(tau, node.id)]);
            }
            for (le, e) in node.edges.iter().enumerate() {
                for tau in 0..t0 {
                    node.y[(le * t0 + tau) * p..(le * t0 + tau + 1) * p]
                        .copy_from_slice(&z[l.y(tau, e.edge_index)]);
                }
            }
            for (la, a) in node.anchors.iter().enumerate() {
                for tau in 0..t0 {
                    node.w[(la * t0 + tau) * p..(la * t0 + tau + 1) * p]
                        .copy_from_slice(&z[l.w(tau, a.anchor_edge_index)]);
                }
            }
            if node.velocity.is_some() {
                for link in 0..t0 - 1 {
                    node.s[link * p..(link + 1) * p].copy_from_slice(&z[l.s(link, node.id)]);
                }
            }
            node.x_prev.copy_from_slice(&node.x);
            node.y_prev.copy_from_slice(&node.y);
            node.w_prev.copy_from_slice(&node.w);
            node.s_prev.copy_from_slice(&node.s);
        }
        Ok(())
    }

    /// Collects the canonical stacked z from the per-node blocks. Edge
    /// variables are taken from the lower endpoint's copy.
    pub fn gather(&self) -> Vec<f64> {
        let l = self.layout;
        let p = l.dim;
        let t0 = l.window;
        let mut z = vec![0.0; l.total()];
        for node in &self.nodes {
            for tau in 0..t0 {
                z[l.x(tau, node.id)].copy_from_slice(&node.x[tau * p..(tau + 1) * p]);
            }
            for (le, e) in node.edges.iter().enumerate() {
                if e.sign > 0.0 {
                    for tau in 0..t0 {
                        z[l.y(tau, e.edge_index)]
                            .copy_from_slice(&node.y[(le * t0 + tau) * p..(le * t0 + tau + 1) * p]);
                    }
                }
            }
            for (la, a) in node.anchors.iter().enumerate() {
                for tau in 0..t0 {
                    z[l.w(tau, a.anchor_edge_index)]
                        .copy_from_slice(&node.w[(la * t0 + tau) * p..(la * t0 + tau + 1) * p]);
                }
            }
            if node.velocity.is_some() {
                for link in 0..t0 - 1 {
                    z[l.s(link, node.id)].copy_from_slice(&node.s[link * p..(link + 1) * p]);
                }
            }
        }
        z
    }

    /// Largest absolute difference between the two endpoint copies of any
    /// edge variable. Zero when the redundant computation never diverged.
    pub fn edge_copy_divergence(&self) -> f64 {
        let t0 = self.layout.window;
        let p = self.layout.dim;
        let mut worst = 0.0f64;
        for node in &self.nodes {
            for (le, e) in node.edges.iter().enumerate() {
                let other = &self.nodes[e.neighbor];
                let oe = other
                    .edges
                    .iter()
                    .position(|x| x.edge_index == e.edge_index)
                    .expect("edge present at both endpoints");
                for idx in 0..t0 * p {
                    let a = node.y[le * t0 * p + idx];
                    let b = other.y[oe * t0 * p + idx];
                    worst = worst.max((a - b).abs());
                }
            }
        }
        worst
    }
}

#[derive(Debug, Clone)]
pub struct DistributedRunResult {
    /// Canonical stacked solution gathered from the nodes.
    pub z: Vec<f64>,
    /// Final window positions per node, tick-major p-strided.
    pub per_node_x: Vec<Vec<f64>>,
    pub iterations: usize,
    pub converged: bool,
    /// Total broadcasts delivered (= rounds × Σ_i degree(i)).
    pub message_count: usize,
    pub message_log: Option<Vec<MessageRecord>>,
    /// Canonical z after every round, when recording is on.
    pub iterate_trace: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub log_messages: bool,
    pub record_iterates: bool,
    /// Processing order of node updates; a permutation of the node ids.
    /// Updates only read round state, so this cannot change the result.
    pub update_order: Option<Vec<usize>>,
}

/// Runs synchronous rounds until the global stopping criterion or the
/// iteration cap. The stopping rule matches the centralized solver:
/// relative step of the gathered canonical iterate below the tolerance.
pub fn run_window(
    net: &mut DistributedNetwork,
    lipschitz: f64,
    config: &SolverConfig,
    options: &RunOptions,
) -> Result<DistributedRunResult> {
    if !(lipschitz > 0.0 && lipschitz.is_finite()) {
        return Err(Error::Domain(format!("Lipschitz constant {lipschitz} not positive")));
    }
    let n = net.nodes.len();
    let order: Vec<usize> = match &options.update_order {
        Some(o) => {
            let mut sorted = o.clone();
            sorted.sort_unstable();
            if sorted != (0..n).collect::<Vec<_>>() {
                return Err(Error::Config("update order must be a permutation of node ids".into()));
            }
            o.clone()
        }
        None => (0..n).collect(),
    };
    let mut message_log = options.log_messages.then(Vec::new);
    let mut iterate_trace = options.record_iterates.then(Vec::new);
    let mut message_count = 0usize;
    let mut z_last = net.gather();
    let mut iterations = 0;
    let mut converged = false;

    for round in 1..=config.max_iters {
        let beta = config.momentum.coefficient(round);

        // barrier 1: everyone broadcasts the extrapolated positions
        let broadcasts: Vec<RoundMessage> =
            net.nodes.iter().map(|s| s.broadcast(round, beta)).collect();
        let mut inboxes: Vec<BTreeMap<usize, RoundMessage>> = vec![BTreeMap::new(); n];
        for (sender, msg) in broadcasts.iter().enumerate() {
            for &receiver in &net.neighbors[sender] {
                inboxes[receiver].insert(sender, msg.clone());
                message_count += 1;
                if let Some(log) = message_log.as_mut() {
                    log.push(MessageRecord {
                        round,
                        sender,
                        receiver,
                        payload: msg.xhat.len(),
                    });
                }
            }
        }

        // barrier 2: pure per-node updates from round state only
        let mut updates: Vec<Option<NodeUpdate>> = (0..n).map(|_| None).collect();
        for &i in &order {
            updates[i] = Some(node_round_update(
                &net.nodes[i],
                lipschitz,
                beta,
                round,
                &inboxes[i],
            )?);
        }
        for (node, update) in net.nodes.iter_mut().zip(updates) {
            let u = update.expect("every node updated");
            std::mem::swap(&mut node.x, &mut node.x_prev);
            std::mem::swap(&mut node.y, &mut node.y_prev);
            std::mem::swap(&mut node.w, &mut node.w_prev);
            std::mem::swap(&mut node.s, &mut node.s_prev);
            node.x = u.x;
            node.y = u.y;
            node.w = u.w;
            node.s = u.s;
        }

        iterations = round;
        let z_now = net.gather();
        if let Some(trace) = iterate_trace.as_mut() {
            trace.push(z_now.clone());
        }
        let mut step_sq = 0.0;
        let mut norm_sq = 0.0;
        for i in 0..z_now.len() {
            let d = z_now[i] - z_last[i];
            step_sq += d * d;
            norm_sq += z_now[i] * z_now[i];
        }
        z_last = z_now;
        if step_sq.sqrt() / norm_sq.sqrt().max(1.0) < config.tolerance {
            converged = true;
            break;
        }
    }

    let per_node_x = net.nodes.iter().map(|s| s.x.clone()).collect();
    Ok(DistributedRunResult {
        z: z_last,
        per_node_x,
        iterations,
        converged,
        message_count,
        message_log,
        iterate_trace,
    })
}

/// Renders a message log as delimited text: round, sender, receiver, payload.
pub fn message_log_to_text(log: &[MessageRecord]) -> String {
    let mut s = String::from("round,sender,receiver,payload\n");
    for r in log {
        use std::fmt::Write as _;
        writeln!(s, "{},{},{},{}", r.round, r.sender, r.receiver, r.payload).unwrap();
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{incidence, BearingPolicy, NetworkSnapshot};
    use crate::measurement::{synthesize_dataset, NoiseParams};
    use crate::problem::{assemble, QuadraticOperator};
    use crate::solver::{fista_solve, MomentumRule};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn build_instance(
        seed: u64,
        n: usize,
        m: usize,
        t0: usize,
    ) -> (crate::problem::QuadraticForm, crate::problem::ConstraintSet, IncidenceStructure, f64)
    {
        let inst = crate::synthetic::random_instance(&crate::synthetic::InstanceSpec {
            seed,
            n_nodes: n,
            n_anchors: m,
            dim: 2,
            window: t0,
            ..Default::default()
        })
        .unwrap();
        let inc = inst.incidence().unwrap();
        let (form, cs) = inst.assemble().unwrap();
        let lip = inst.lipschitz().unwrap();
        (form, cs, inc, lip)
    }

    #[test]
    fn matches_centralized_sequence_blockwise() {
        for (seed, n, m, t0) in [(1u64, 4, 2, 1), (2, 5, 2, 2), (3, 6, 1, 4)] {
            let (form, cs, inc, lip) = build_instance(seed, n, m, t0);
            let iters = 120;
            let cfg = SolverConfig {
                max_iters: iters,
                tolerance: 0.0,
                momentum: MomentumRule::Classic,
                log_costs: false,
            };
            let mut net = DistributedNetwork::build(&form, &inc).unwrap();
            let dist = run_window(
                &mut net,
                lip,
                &cfg,
                &RunOptions {
                    record_iterates: true,
                    ..Default::default()
                },
            )
            .unwrap();
            // replicate the centralized iteration capturing each iterate
            let mut z_prev = vec![0.0; form.dim()];
            let mut z_curr = vec![0.0; form.dim()];
            let mut grad = vec![0.0; form.dim()];
            let trace = dist.iterate_trace.as_ref().unwrap();
            for round in 1..=iters {
                let beta = cfg.momentum.coefficient(round);
                let zhat: Vec<f64> = z_curr
                    .iter()
                    .zip(&z_prev)
                    .map(|(c, p)| c + beta * (c - p))
                    .collect();
                form.gradient(&zhat, &mut grad);
                let mut z_next = zhat.clone();
                crate::vecn::axpy(-1.0 / lip, &grad, &mut z_next);
                crate::solver::project(&mut z_next, &cs);
                z_prev = z_curr;
                z_curr = z_next;
                let dz = &trace[round - 1];
                let scale = crate::vecn::norm(&z_curr).max(1.0);
                let mut worst = 0.0f64;
                for i in 0..z_curr.len() {
                    worst = worst.max((z_curr[i] - dz[i]).abs());
                }
                assert!(
                    worst / scale <= 1e-12,
                    "seed {seed} round {round}: relative divergence {}",
                    worst / scale
                );
            }
            assert_eq!(net.edge_copy_divergence(), 0.0);
        }
    }

    #[test]
    fn isolated_node_update_matches_closed_form() {
        // one node, one anchor, unit sigma, window 1:
        // x⁺ = (1/L)[x̂(L−1) + (ŵ + a)]
        let s = NetworkSnapshot::build(
            2,
            0,
            vec![1.0, 2.0],
            vec![4.0, 6.0],
            100.0,
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
            &mut ChaCha8Rng::seed_from_u64(4),
        )
        .unwrap();
        let (form, _) = assemble(&inc, &[&s], &[&ds], &params).unwrap();
        let mut net = DistributedNetwork::build(&form, &inc).unwrap();
        let lip = 8.0;
        // seed nonzero state so the closed form is informative
        let z0 = vec![0.5, -0.25, 0.1, 0.9];
        net.set_initial(&z0).unwrap();
        let state = &net.nodes[0];
        let update =
            node_round_update(state, lip, 0.0, 1, &BTreeMap::new()).unwrap();
        let a = s.anchor_position(0);
        for c in 0..2 {
            let want = (z0[c] * (lip - 1.0) + (z0[2 + c] + a[c])) / lip;
            assert!((update.x[c] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn no_measurements_means_pure_momentum_fixpoint() {
        // a single node with no edges, no anchors, window 1, L = 1:
        // the update reduces to x⁺ = x̂
        let s = NetworkSnapshot::build(
            2,
            0,
            vec![3.0, -1.0],
            vec![],
            1.0,
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
            &mut ChaCha8Rng::seed_from_u64(4),
        )
        .unwrap();
        let (form, _) = assemble(&inc, &[&s], &[&ds], &params).unwrap();
        let mut net = DistributedNetwork::build(&form, &inc).unwrap();
        net.set_initial(&[0.7, -0.3]).unwrap();
        let update = node_round_update(&net.nodes[0], 1.0, 0.0, 1, &BTreeMap::new()).unwrap();
        assert_eq!(update.x, vec![0.7, -0.3]);
    }

    #[test]
    fn missing_neighbor_message_is_a_protocol_error() {
        let (form, _, inc, lip) = build_instance(9, 3, 1, 1);
        let net = DistributedNetwork::build(&form, &inc).unwrap();
        let with_edges = net
            .nodes
            .iter()
            .find(|s| !s.edges.is_empty())
            .expect("connected instance has edges");
        let err = node_round_update(with_edges, lip, 0.0, 1, &BTreeMap::new()).unwrap_err();
        assert!(matches!(err, Error::MissingMessage { .. }));
    }

    #[test]
    fn update_order_cannot_change_anything() {
        let (form, _, inc, lip) = build_instance(10, 5, 2, 2);
        let cfg = SolverConfig {
            max_iters: 60,
            tolerance: 0.0,
            ..Default::default()
        };
        let mut a = DistributedNetwork::build(&form, &inc).unwrap();
        let ra = run_window(&mut a, lip, &cfg, &RunOptions::default()).unwrap();
        let mut b = DistributedNetwork::build(&form, &inc).unwrap();
        let rb = run_window(
            &mut b,
            lip,
            &cfg,
            &RunOptions {
                update_order: Some(vec![4, 2, 0, 3, 1]),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(ra.z, rb.z);
    }

    #[test]
    fn message_accounting_identity() {
        let (form, _, inc, lip) = build_instance(11, 6, 2, 1);
        let rounds = 17;
        let cfg = SolverConfig {
            max_iters: rounds,
            tolerance: 0.0,
            ..Default::default()
        };
        let mut net = DistributedNetwork::build(&form, &inc).unwrap();
        let res = run_window(
            &mut net,
            lip,
            &cfg,
            &RunOptions {
                log_messages: true,
                ..Default::default()
            },
        )
        .unwrap();
        let expect = rounds * 2 * inc.n_edges();
        assert_eq!(res.message_count, expect);
        assert_eq!(res.message_log.unwrap().len(), expect);
    }

    #[test]
    fn extrapolation_identities() {
        // z^κ = z^{κ−1} → ẑ = z^κ regardless of the coefficient
        let cur = vec![1.0, 2.0];
        let hat = NodeState::extrapolate(&cur, &cur, 0.75);
        assert_eq!(hat, cur);
        // zero coefficient → ẑ = z^κ
        let prev = vec![0.0, 5.0];
        let hat = NodeState::extrapolate(&cur, &prev, 0.0);
        assert_eq!(hat, cur);
    }

    #[test]
    fn noiseless_two_anchor_fix() {
        // one node ranging and bearing against two anchors, noiseless:
        // the solve recovers the position
        let s = NetworkSnapshot::build(
            2,
            0,
            vec![1.0, 1.0],
            vec![0.0, 0.0, 3.0, 0.0],
            10.0,
            &BearingPolicy::All,
        )
        .unwrap();
        let inc = incidence(&s, 1).unwrap();
        let params = NoiseParams::uniform(&s, 1e-3, 1e-3, 1e6, 1e6, 1e-3, 1e6);
        let ds = crate::measurement::Dataset {
            tick: 0,
            dt: 1.0,
            node_ranges: vec![],
            node_bearings: vec![],
            anchor_ranges: vec![2.0f64.sqrt(), 5.0f64.sqrt()],
            anchor_bearings: {
                let mut v = vec![1.0 / 2.0f64.sqrt(), 1.0 / 2.0f64.sqrt()];
                let n5 = 5.0f64.sqrt();
                v.extend([-2.0 / n5, 1.0 / n5]);
                v
            },
            speeds: vec![0.0],
            headings: vec![1.0, 0.0],
        };
        let (form, cs) = assemble(&inc, &[&s], &[&ds], &params).unwrap();
        let lip = crate::solver::lipschitz_bound(
            0,
            2,
            1,
            None,
            Some(1e-3),
            Some(1e-3),
        )
        .unwrap();
        let cfg = SolverConfig {
            max_iters: 4000,
            tolerance: 1e-12,
            ..Default::default()
        };
        let mut net = DistributedNetwork::build(&form, &inc).unwrap();
        let res = run_window(&mut net, lip, &cfg, &RunOptions::default()).unwrap();
        let x = &res.per_node_x[0];
        assert!(
            crate::vecn::dist(x, &[1.0, 1.0]) < 1e-6,
            "estimate {x:?}"
        );
        // the centralized path lands on the same point
        let sol = fista_solve(&form, &cs, lip, &cfg, None).unwrap();
        assert!(crate::vecn::dist(&sol.z[0..2], x) < 1e-9);
    }
}
