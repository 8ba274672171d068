//! Time-indexed network model: vehicles, anchors and measurement edges.
//!
//! A [`NetworkSnapshot`] captures the network at one tick: true node and
//! anchor positions, the node-node range edges, the subset of those edges
//! that also carry bearings, and the per-node anchor measurement sets. The
//! snapshot is immutable after construction and safe to share across
//! concurrent workers.
//!
//! [`IncidenceStructure`] derives from a snapshot the arc-node incidence
//! matrix, the per-node temporal chain over a time window and the anchor
//! selector, which together define the stacked variable layout used by the
//! optimization modules.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::vecn;
use crate::{Error, Result};

/// Selects which range edges also carry bearing measurements.
#[derive(Debug, Clone, Default)]
pub enum BearingPolicy {
    /// Every range edge and every node-anchor range pair carries a bearing.
    #[default]
    All,
    /// Ranges only.
    RangeOnly,
    /// Explicit subsets. Pairs not present as range edges are rejected.
    Subset {
        node_pairs: BTreeSet<(usize, usize)>,
        anchor_pairs: BTreeSet<(usize, usize)>,
    },
}

/// The network at one tick.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSnapshot {
    dim: usize,
    tick: usize,
    nodes: Vec<f64>,
    anchors: Vec<f64>,
    range_edges: Vec<(usize, usize)>,
    bearing_edges: Vec<(usize, usize)>,
    anchor_range: Vec<Vec<usize>>,
    anchor_bearing: Vec<Vec<usize>>,
}

impl NetworkSnapshot {
    /// Builds a snapshot from explicit edge lists, validating all invariants.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        dim: usize,
        tick: usize,
        nodes: Vec<f64>,
        anchors: Vec<f64>,
        mut range_edges: Vec<(usize, usize)>,
        mut bearing_edges: Vec<(usize, usize)>,
        anchor_range: Vec<Vec<usize>>,
        anchor_bearing: Vec<Vec<usize>>,
    ) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::Config(format!("dimension must be 2 or 3, got {dim}")));
        }
        if nodes.len() % dim != 0 || anchors.len() % dim != 0 {
            return Err(Error::Shape("position buffer not a multiple of dim".into()));
        }
        let n = nodes.len() / dim;
        let m = anchors.len() / dim;
        for e in range_edges.iter_mut().chain(bearing_edges.iter_mut()) {
            if e.0 == e.1 {
                return Err(Error::Config(format!("self edge {}-{}", e.0, e.1)));
            }
            if e.0 > e.1 {
                *e = (e.1, e.0);
            }
            if e.1 >= n {
                return Err(Error::Config(format!("edge {}-{} out of range", e.0, e.1)));
            }
        }
        range_edges.sort_unstable();
        range_edges.dedup();
        bearing_edges.sort_unstable();
        bearing_edges.dedup();
        let range_set: BTreeSet<_> = range_edges.iter().copied().collect();
        for e in &bearing_edges {
            if !range_set.contains(e) {
                return Err(Error::Config(format!(
                    "bearing edge {}-{} has no range edge",
                    e.0, e.1
                )));
            }
        }
        if anchor_range.len() != n || anchor_bearing.len() != n {
            return Err(Error::Shape("anchor set lists must have one entry per node".into()));
        }
        let mut anchor_range = anchor_range;
        let mut anchor_bearing = anchor_bearing;
        for i in 0..n {
            anchor_range[i].sort_unstable();
            anchor_range[i].dedup();
            anchor_bearing[i].sort_unstable();
            anchor_bearing[i].dedup();
            if anchor_range[i].iter().any(|&k| k >= m) {
                return Err(Error::Config(format!("anchor id out of range for node {i}")));
            }
            let rset: BTreeSet<_> = anchor_range[i].iter().copied().collect();
            if anchor_bearing[i].iter().any(|k| !rset.contains(k)) {
                return Err(Error::Config(format!(
                    "node {i} has an anchor bearing without a range"
                )));
            }
        }
        let snapshot = Self {
            dim,
            tick,
            nodes,
            anchors,
            range_edges,
            bearing_edges,
            anchor_range,
            anchor_bearing,
        };
        if !snapshot.is_connected() {
            return Err(Error::DisconnectedNetwork);
        }
        Ok(snapshot)
    }

    /// Disk-graph construction: connects every pair of nodes within
    /// `range_radius`, and every node-anchor pair within `range_radius`.
    /// `policy` selects which of those edges also carry bearings.
    pub fn build(
        dim: usize,
        tick: usize,
        nodes: Vec<f64>,
        anchors: Vec<f64>,
        range_radius: f64,
        policy: &BearingPolicy,
    ) -> Result<Self> {
        if !(range_radius > 0.0) {
            return Err(Error::Config("range radius must be positive".into()));
        }
        if nodes.len() % dim.max(1) != 0 {
            return Err(Error::Shape("position buffer not a multiple of dim".into()));
        }
        let n = nodes.len() / dim;
        let m = anchors.len() / dim;
        for i in 0..n {
            for j in (i + 1)..n {
                if vecn::dist(&nodes[i * dim..(i + 1) * dim], &nodes[j * dim..(j + 1) * dim])
                    == 0.0
                {
                    return Err(Error::DegenerateGeometry(format!(
                        "nodes {i} and {j} coincide"
                    )));
                }
            }
        }
        let mut range_edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                let d = vecn::dist(&nodes[i * dim..(i + 1) * dim], &nodes[j * dim..(j + 1) * dim]);
                if d <= range_radius {
                    range_edges.push((i, j));
                }
            }
        }
        let mut anchor_range = vec![Vec::new(); n];
        for i in 0..n {
            for k in 0..m {
                let d = vecn::dist(
                    &nodes[i * dim..(i + 1) * dim],
                    &anchors[k * dim..(k + 1) * dim],
                );
                if d <= range_radius {
                    anchor_range[i].push(k);
                }
            }
        }
        let (bearing_edges, anchor_bearing) = match policy {
            BearingPolicy::All => (range_edges.clone(), anchor_range.clone()),
            BearingPolicy::RangeOnly => (Vec::new(), vec![Vec::new(); n]),
            BearingPolicy::Subset {
                node_pairs,
                anchor_pairs,
            } => {
                let be: Vec<_> = range_edges
                    .iter()
                    .copied()
                    .filter(|e| node_pairs.contains(e))
                    .collect();
                let mut ab = vec![Vec::new(); n];
                for (i, set) in anchor_range.iter().enumerate() {
                    ab[i] = set
                        .iter()
                        .copied()
                        .filter(|&k| anchor_pairs.contains(&(i, k)))
                        .collect();
                }
                (be, ab)
            }
        };
        Self::from_parts(
            dim,
            tick,
            nodes,
            anchors,
            range_edges,
            bearing_edges,
            anchor_range,
            anchor_bearing,
        )
    }

    fn is_connected(&self) -> bool {
        let n = self.n_nodes();
        if n <= 1 {
            return true;
        }
        let mut adj = vec![Vec::new(); n];
        for &(i, j) in &self.range_edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(i) = stack.pop() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    count += 1;
                    stack.push(j);
                }
            }
        }
        count == n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tick(&self) -> usize {
        self.tick
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len() / self.dim
    }

    pub fn n_anchors(&self) -> usize {
        self.anchors.len() / self.dim
    }

    pub fn node_position(&self, i: usize) -> &[f64] {
        &self.nodes[i * self.dim..(i + 1) * self.dim]
    }

    pub fn anchor_position(&self, k: usize) -> &[f64] {
        &self.anchors[k * self.dim..(k + 1) * self.dim]
    }

    pub fn node_positions(&self) -> &[f64] {
        &self.nodes
    }

    /// Range edges, sorted, with the lower id first.
    pub fn range_edges(&self) -> &[(usize, usize)] {
        &self.range_edges
    }

    /// Bearing edges, always a subset of the range edges.
    pub fn bearing_edges(&self) -> &[(usize, usize)] {
        &self.bearing_edges
    }

    pub fn anchor_range_ids(&self, i: usize) -> &[usize] {
        &self.anchor_range[i]
    }

    pub fn anchor_bearing_ids(&self, i: usize) -> &[usize] {
        &self.anchor_bearing[i]
    }

    /// Node-anchor range pairs flattened node-major: `(node, anchor)`.
    pub fn anchor_edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, set) in self.anchor_range.iter().enumerate() {
            for &k in set {
                out.push((i, k));
            }
        }
        out
    }

    /// Node-anchor bearing pairs flattened node-major.
    pub fn anchor_bearing_edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, set) in self.anchor_bearing.iter().enumerate() {
            for &k in set {
                out.push((i, k));
            }
        }
        out
    }

    /// True if both snapshots describe the same measurement structure
    /// (edge sets and anchor sets), ignoring positions and tick.
    pub fn same_structure(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.range_edges == other.range_edges
            && self.bearing_edges == other.bearing_edges
            && self.anchor_range == other.anchor_range
            && self.anchor_bearing == other.anchor_bearing
    }

    /// Line-oriented text encoding for scenario persistence and replay.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(
            s,
            "snapshot {} {} {} {}",
            self.tick,
            self.dim,
            self.n_nodes(),
            self.n_anchors()
        )
        .unwrap();
        for i in 0..self.n_nodes() {
            write!(s, "node {i}").unwrap();
            for c in self.node_position(i) {
                write!(s, " {c}").unwrap();
            }
            s.push('\n');
        }
        for k in 0..self.n_anchors() {
            write!(s, "anchor {k}").unwrap();
            for c in self.anchor_position(k) {
                write!(s, " {c}").unwrap();
            }
            s.push('\n');
        }
        for &(i, j) in &self.range_edges {
            writeln!(s, "redge {i} {j}").unwrap();
        }
        for &(i, j) in &self.bearing_edges {
            writeln!(s, "bedge {i} {j}").unwrap();
        }
        for (i, set) in self.anchor_range.iter().enumerate() {
            for &k in set {
                writeln!(s, "aredge {i} {k}").unwrap();
            }
        }
        for (i, set) in self.anchor_bearing.iter().enumerate() {
            for &k in set {
                writeln!(s, "abedge {i} {k}").unwrap();
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty snapshot text".into()))?;
        let h: Vec<&str> = header.split_whitespace().collect();
        if h.len() != 5 || h[0] != "snapshot" {
            return Err(Error::Parse(format!("bad snapshot header: {header}")));
        }
        let tick: usize = parse(h[1])?;
        let dim: usize = parse(h[2])?;
        let n: usize = parse(h[3])?;
        let m: usize = parse(h[4])?;
        let mut nodes = vec![0.0; n * dim];
        let mut anchors = vec![0.0; m * dim];
        let mut range_edges = Vec::new();
        let mut bearing_edges = Vec::new();
        let mut anchor_range = vec![Vec::new(); n];
        let mut anchor_bearing = vec![Vec::new(); n];
        for line in lines {
            let f: Vec<&str> = line.split_whitespace().collect();
            match f[0] {
                "node" | "anchor" => {
                    if f.len() != 2 + dim {
                        return Err(Error::Parse(format!("bad record: {line}")));
                    }
                    let id: usize = parse(f[1])?;
                    let buf = if f[0] == "node" { &mut nodes } else { &mut anchors };
                    for (c, v) in f[2..].iter().enumerate() {
                        buf[id * dim + c] = parse(v)?;
                    }
                }
                "redge" => range_edges.push((parse(f[1])?, parse(f[2])?)),
                "bedge" => bearing_edges.push((parse(f[1])?, parse(f[2])?)),
                "aredge" => anchor_range[parse::<usize>(f[1])?].push(parse(f[2])?),
                "abedge" => anchor_bearing[parse::<usize>(f[1])?].push(parse(f[2])?),
                other => return Err(Error::Parse(format!("unknown record kind: {other}"))),
            }
        }
        Self::from_parts(
            dim,
            tick,
            nodes,
            anchors,
            range_edges,
            bearing_edges,
            anchor_range,
            anchor_bearing,
        )
    }
}

fn parse<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Parse(format!("bad token: {s}")))
}

/// Maximum node degree over the range-edge graph.
pub fn max_degree(snapshot: &NetworkSnapshot) -> usize {
    let mut deg = vec![0usize; snapshot.n_nodes()];
    for &(i, j) in snapshot.range_edges() {
        deg[i] += 1;
        deg[j] += 1;
    }
    deg.into_iter().max().unwrap_or(0)
}

/// Maximum number of anchors any node ranges against.
pub fn max_anchor_count(snapshot: &NetworkSnapshot) -> usize {
    (0..snapshot.n_nodes())
        .map(|i| snapshot.anchor_range_ids(i).len())
        .max()
        .unwrap_or(0)
}

/// An edge incident to a node, with the node's incidence sign.
#[derive(Debug, Clone, Copy)]
pub struct IncidentEdge {
    pub edge: usize,
    pub neighbor: usize,
    /// +1 when this node is the lower id of the edge, -1 otherwise.
    pub sign: f64,
}

/// Incidence structures of a snapshot over a time window.
///
/// Edge orientation is fixed: the lower node id gets +1, the higher -1.
/// The velocity chain links each node's position at consecutive window
/// steps, so it has `window - 1` rows per node.
#[derive(Debug, Clone)]
pub struct IncidenceStructure {
    pub window: usize,
    pub dim: usize,
    pub n_nodes: usize,
    pub n_anchors: usize,
    pub edges: Vec<(usize, usize)>,
    /// Node-anchor range pairs, node-major.
    pub anchor_edges: Vec<(usize, usize)>,
    /// Per node: incident range edges.
    pub node_edges: Vec<Vec<IncidentEdge>>,
    /// Per node: indices into `anchor_edges`.
    pub node_anchor_edges: Vec<Vec<usize>>,
}

/// Derives the incidence structure of `snapshot` for a window of `window`
/// ticks. Requires `window >= 1`; connectivity is enforced by snapshot
/// construction.
pub fn incidence(snapshot: &NetworkSnapshot, window: usize) -> Result<IncidenceStructure> {
    if window == 0 {
        return Err(Error::Config("window must be at least 1".into()));
    }
    let n = snapshot.n_nodes();
    let edges = snapshot.range_edges().to_vec();
    let anchor_edges = snapshot.anchor_edges();
    let mut node_edges = vec![Vec::new(); n];
    for (e, &(i, j)) in edges.iter().enumerate() {
        node_edges[i].push(IncidentEdge {
            edge: e,
            neighbor: j,
            sign: 1.0,
        });
        node_edges[j].push(IncidentEdge {
            edge: e,
            neighbor: i,
            sign: -1.0,
        });
    }
    let mut node_anchor_edges = vec![Vec::new(); n];
    for (ae, &(i, _)) in anchor_edges.iter().enumerate() {
        node_anchor_edges[i].push(ae);
    }
    Ok(IncidenceStructure {
        window,
        dim: snapshot.dim(),
        n_nodes: n,
        n_anchors: snapshot.n_anchors(),
        edges,
        anchor_edges,
        node_edges,
        node_anchor_edges,
    })
}

impl IncidenceStructure {
    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn n_anchor_edges(&self) -> usize {
        self.anchor_edges.len()
    }

    /// Arc-node incidence matrix C: one row per edge, +1 at the lower id.
    pub fn matrix_c(&self) -> DMatrix<f64> {
        let mut c = DMatrix::zeros(self.edges.len(), self.n_nodes);
        for (e, &(i, j)) in self.edges.iter().enumerate() {
            c[(e, i)] = 1.0;
            c[(e, j)] = -1.0;
        }
        c
    }

    /// Temporal chain incidence over the window, one block of `window - 1`
    /// rows per node, ordered link-major then node-major to match the
    /// stacked layout. Row (l, i) has +1 at x_i(l+1) and -1 at x_i(l).
    pub fn matrix_c_vel(&self) -> DMatrix<f64> {
        let n = self.n_nodes;
        let t0 = self.window;
        let rows = t0.saturating_sub(1) * n;
        let mut c = DMatrix::zeros(rows, t0 * n);
        for l in 0..t0.saturating_sub(1) {
            for i in 0..n {
                c[(l * n + i, (l + 1) * n + i)] = 1.0;
                c[(l * n + i, l * n + i)] = -1.0;
            }
        }
        c
    }

    /// Single-tick anchor selector: one row per node-anchor pair, selecting
    /// the node.
    pub fn matrix_e0(&self) -> DMatrix<f64> {
        let mut e = DMatrix::zeros(self.anchor_edges.len(), self.n_nodes);
        for (ae, &(i, _)) in self.anchor_edges.iter().enumerate() {
            e[(ae, i)] = 1.0;
        }
        e
    }

    /// A = (I_{T0} ⊗ C) ⊗ I_p, the window-expanded incidence operator.
    pub fn matrix_a(&self) -> DMatrix<f64> {
        let it0 = DMatrix::<f64>::identity(self.window, self.window);
        let ip = DMatrix::<f64>::identity(self.dim, self.dim);
        it0.kronecker(&self.matrix_c()).kronecker(&ip)
    }

    /// N = C_vel ⊗ I_p.
    pub fn matrix_n(&self) -> DMatrix<f64> {
        let ip = DMatrix::<f64>::identity(self.dim, self.dim);
        self.matrix_c_vel().kronecker(&ip)
    }

    /// E = (I_{T0} ⊗ E0) ⊗ I_p, the window-expanded anchor selector.
    pub fn matrix_e(&self) -> DMatrix<f64> {
        let it0 = DMatrix::<f64>::identity(self.window, self.window);
        let ip = DMatrix::<f64>::identity(self.dim, self.dim);
        it0.kronecker(&self.matrix_e0()).kronecker(&ip)
    }
}
