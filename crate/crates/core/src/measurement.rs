//! Noisy measurement synthesis: ranges, bearings, velocities and outliers.
//!
//! Ranges carry zero-mean Gaussian noise; bearings and headings are unit
//! vectors drawn from a von Mises-Fisher distribution around the true
//! direction. Negative noisy ranges and speeds are clamped to zero so the
//! constraint sets downstream stay well defined.

use std::fmt::Write as _;

use rand::Rng;

use crate::graph::NetworkSnapshot;
use crate::vecn;
use crate::{Error, Result};

/// Noise parameters for one snapshot's measurement structure.
///
/// Vectors align with the snapshot's canonical orderings: range edges,
/// bearing edges, node-major anchor range pairs, node-major anchor bearing
/// pairs, and nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseParams {
    /// σ_ij, node-node range STD (m), per range edge.
    pub node_range_std: Vec<f64>,
    /// κ_ij, node-node bearing concentration, per bearing edge.
    pub node_bearing_kappa: Vec<f64>,
    /// ς_ik, node-anchor range STD (m), per anchor range pair.
    pub anchor_range_std: Vec<f64>,
    /// λ_ik, node-anchor bearing concentration, per anchor bearing pair.
    pub anchor_bearing_kappa: Vec<f64>,
    /// σ_i, speed-distance STD (m), per node.
    pub speed_std: Vec<f64>,
    /// κ_i, heading concentration, per node.
    pub heading_kappa: Vec<f64>,
}

impl NoiseParams {
    /// One value per parameter class, replicated over the structure.
    pub fn uniform(
        snapshot: &NetworkSnapshot,
        range_std: f64,
        anchor_range_std: f64,
        bearing_kappa: f64,
        anchor_bearing_kappa: f64,
        speed_std: f64,
        heading_kappa: f64,
    ) -> Self {
        let n = snapshot.n_nodes();
        Self {
            node_range_std: vec![range_std; snapshot.range_edges().len()],
            node_bearing_kappa: vec![bearing_kappa; snapshot.bearing_edges().len()],
            anchor_range_std: vec![anchor_range_std; snapshot.anchor_edges().len()],
            anchor_bearing_kappa: vec![anchor_bearing_kappa; snapshot.anchor_bearing_edges().len()],
            speed_std: vec![speed_std; n],
            heading_kappa: vec![heading_kappa; n],
        }
    }

    pub fn validate(&self, snapshot: &NetworkSnapshot) -> Result<()> {
        let checks = [
            (self.node_range_std.len(), snapshot.range_edges().len(), "node range"),
            (self.node_bearing_kappa.len(), snapshot.bearing_edges().len(), "node bearing"),
            (self.anchor_range_std.len(), snapshot.anchor_edges().len(), "anchor range"),
            (
                self.anchor_bearing_kappa.len(),
                snapshot.anchor_bearing_edges().len(),
                "anchor bearing",
            ),
            (self.speed_std.len(), snapshot.n_nodes(), "speed"),
            (self.heading_kappa.len(), snapshot.n_nodes(), "heading"),
        ];
        for (got, want, what) in checks {
            if got != want {
                return Err(Error::MissingParameter(format!(
                    "{what}: {got} parameters for {want} measurements"
                )));
            }
        }
        let all = self
            .node_range_std
            .iter()
            .chain(&self.node_bearing_kappa)
            .chain(&self.anchor_range_std)
            .chain(&self.anchor_bearing_kappa)
            .chain(&self.speed_std)
            .chain(&self.heading_kappa);
        for &v in all {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Domain(format!("noise parameter {v} not positive finite")));
            }
        }
        Ok(())
    }

    /// Smallest STDs per class: (node range, anchor range, speed).
    /// `None` when a class has no measurements.
    pub fn min_stds(&self) -> (Option<f64>, Option<f64>, Option<f64>) {
        let min = |v: &[f64]| v.iter().copied().reduce(f64::min);
        (
            min(&self.node_range_std),
            min(&self.anchor_range_std),
            min(&self.speed_std),
        )
    }
}

/// All noisy measurements collected at one tick.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub tick: usize,
    /// Tick duration in seconds.
    pub dt: f64,
    /// d_ij per range edge (m, >= 0).
    pub node_ranges: Vec<f64>,
    /// u_ij per bearing edge, p-strided unit vectors.
    pub node_bearings: Vec<f64>,
    /// r_ik per anchor range pair.
    pub anchor_ranges: Vec<f64>,
    /// q_ik per anchor bearing pair, p-strided unit vectors.
    pub anchor_bearings: Vec<f64>,
    /// V_i per node (m/s, >= 0).
    pub speeds: Vec<f64>,
    /// v_i per node, p-strided unit vectors.
    pub headings: Vec<f64>,
}

/// Converts a von Mises-Fisher concentration into the equivalent angular
/// standard deviation in radians.
pub fn kappa_to_sigma_eq(kappa: f64) -> Result<f64> {
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(Error::Domain(format!("kappa {kappa} not positive finite")));
    }
    let arg = 1.0 - 1.0 / (2.0 * kappa) - 1.0 / (8.0 * kappa * kappa)
        - 1.0 / (8.0 * kappa * kappa * kappa);
    if !(arg > 0.0) {
        return Err(Error::Domain(format!(
            "kappa {kappa} too small: log argument {arg} not positive"
        )));
    }
    Ok((-2.0 * arg.ln()).sqrt())
}

/// Standard normal variate via the Box-Muller transform. Two uniforms are
/// consumed per call so streams stay reproducible across platforms.
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>(); // in (0, 1]
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Draws a unit vector from vMF(mean, kappa) in dimension 2 or 3.
///
/// For p = 2 this is the von Mises distribution on the circle, sampled with
/// the Best-Fisher rejection scheme. For p = 3 the cosine of the polar angle
/// has a closed-form inverse CDF; the azimuth is uniform on the tangent
/// circle. `kappa = 0` yields the uniform distribution on the sphere.
pub fn sample_vmf<R: Rng + ?Sized>(mean: &[f64], kappa: f64, rng: &mut R) -> Result<Vec<f64>> {
    let p = mean.len();
    if p != 2 && p != 3 {
        return Err(Error::Domain(format!("vMF dimension {p} unsupported")));
    }
    if !(kappa >= 0.0 && kappa.is_finite()) {
        return Err(Error::Domain(format!("kappa {kappa} not finite nonnegative")));
    }
    let norm = vecn::norm(mean);
    if (norm - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(format!("vMF mean has norm {norm}, want 1")));
    }
    let mut out = if p == 2 {
        let theta = sample_von_mises_angle(kappa, rng);
        let (s, c) = theta.sin_cos();
        // rotate (c, s) so the zero angle lands on `mean`
        vec![c * mean[0] - s * mean[1], s * mean[0] + c * mean[1]]
    } else {
        let w = if kappa < 1e-12 {
            rng.gen::<f64>() * 2.0 - 1.0
        } else {
            // inverse CDF of the polar cosine, written to stay finite for
            // large kappa
            let u = 1.0 - rng.gen::<f64>(); // (0, 1]
            1.0 + ((u + (1.0 - u) * (-2.0 * kappa).exp()).ln()) / kappa
        };
        let phi = rng.gen::<f64>() * 2.0 * std::f64::consts::PI;
        let (e1, e2) = tangent_basis(mean);
        let r = (1.0 - w * w).max(0.0).sqrt();
        let (sp, cp) = phi.sin_cos();
        (0..3)
            .map(|c| w * mean[c] + r * (cp * e1[c] + sp * e2[c]))
            .collect()
    };
    vecn::normalize(&mut out);
    Ok(out)
}

/// Best-Fisher (1979) rejection sampler for the von Mises angle around 0.
fn sample_von_mises_angle<R: Rng + ?Sized>(kappa: f64, rng: &mut R) -> f64 {
    use std::f64::consts::PI;
    if kappa < 1e-12 {
        return (rng.gen::<f64>() * 2.0 - 1.0) * PI;
    }
    let a = 1.0 + (1.0 + 4.0 * kappa * kappa).sqrt();
    let b = (a - (2.0 * a).sqrt()) / (2.0 * kappa);
    let r = (1.0 + b * b) / (2.0 * b);
    loop {
        let u1: f64 = rng.gen();
        let u2: f64 = rng.gen();
        let z = (PI * u1).cos();
        let f = (1.0 + r * z) / (r + z);
        let c = kappa * (r - f);
        if c * (2.0 - c) - u2 > 0.0 || (c / u2).ln() + 1.0 - c >= 0.0 {
            let u3: f64 = rng.gen();
            return f.clamp(-1.0, 1.0).acos().copysign(u3 - 0.5);
        }
    }
}

/// Two unit vectors orthogonal to `v` and each other (deterministic).
pub(crate) fn tangent_basis(v: &[f64]) -> ([f64; 3], [f64; 3]) {
    // start from the coordinate axis least aligned with v
    let ax = if v[0].abs() <= v[1].abs() && v[0].abs() <= v[2].abs() {
        [1.0, 0.0, 0.0]
    } else if v[1].abs() <= v[2].abs() {
        [0.0, 1.0, 0.0]
    } else {
        [0.0, 0.0, 1.0]
    };
    let d = ax[0] * v[0] + ax[1] * v[1] + ax[2] * v[2];
    let mut e1 = [ax[0] - d * v[0], ax[1] - d * v[1], ax[2] - d * v[2]];
    vecn::normalize(&mut e1);
    let e2 = [
        v[1] * e1[2] - v[2] * e1[1],
        v[2] * e1[0] - v[0] * e1[2],
        v[0] * e1[1] - v[1] * e1[0],
    ];
    (e1, e2)
}

/// Synthesizes the noisy dataset for one tick.
///
/// `true_velocities` holds β_i(t), the true displacement over the tick
/// divided by `dt`, node-major p-strided. Noisy ranges and speeds are
/// clamped at zero. A zero true velocity yields a uniformly random heading.
pub fn synthesize_dataset<R: Rng + ?Sized>(
    snapshot: &NetworkSnapshot,
    true_velocities: &[f64],
    params: &NoiseParams,
    dt: f64,
    rng: &mut R,
) -> Result<Dataset> {
    params.validate(snapshot)?;
    let p = snapshot.dim();
    let n = snapshot.n_nodes();
    if true_velocities.len() != n * p {
        return Err(Error::Shape(format!(
            "velocities: {} values for {} nodes of dim {p}",
            true_velocities.len(),
            n
        )));
    }
    if !(dt > 0.0) {
        return Err(Error::Config("dt must be positive".into()));
    }

    let mut node_ranges = Vec::with_capacity(snapshot.range_edges().len());
    for (e, &(i, j)) in snapshot.range_edges().iter().enumerate() {
        let d = vecn::dist(snapshot.node_position(i), snapshot.node_position(j));
        node_ranges.push((d + params.node_range_std[e] * standard_normal(rng)).max(0.0));
    }
    let mut node_bearings = Vec::with_capacity(snapshot.bearing_edges().len() * p);
    for (be, &(i, j)) in snapshot.bearing_edges().iter().enumerate() {
        let mut dir = vec![0.0; p];
        vecn::sub(snapshot.node_position(i), snapshot.node_position(j), &mut dir);
        if vecn::normalize(&mut dir) == 0.0 {
            return Err(Error::DegenerateGeometry(format!(
                "nodes {i} and {j} coincide on a bearing edge"
            )));
        }
        node_bearings.extend(sample_vmf(&dir, params.node_bearing_kappa[be], rng)?);
    }
    let anchor_edges = snapshot.anchor_edges();
    let mut anchor_ranges = Vec::with_capacity(anchor_edges.len());
    for (ae, &(i, k)) in anchor_edges.iter().enumerate() {
        let d = vecn::dist(snapshot.node_position(i), snapshot.anchor_position(k));
        anchor_ranges.push((d + params.anchor_range_std[ae] * standard_normal(rng)).max(0.0));
    }
    let ab_edges = snapshot.anchor_bearing_edges();
    let mut anchor_bearings = Vec::with_capacity(ab_edges.len() * p);
    for (abe, &(i, k)) in ab_edges.iter().enumerate() {
        let mut dir = vec![0.0; p];
        vecn::sub(snapshot.node_position(i), snapshot.anchor_position(k), &mut dir);
        if vecn::normalize(&mut dir) == 0.0 {
            return Err(Error::DegenerateGeometry(format!(
                "node {i} coincides with anchor {k} on a bearing edge"
            )));
        }
        anchor_bearings.extend(sample_vmf(&dir, params.anchor_bearing_kappa[abe], rng)?);
    }
    let mut speeds = Vec::with_capacity(n);
    let mut headings = Vec::with_capacity(n * p);
    for i in 0..n {
        let beta = &true_velocities[i * p..(i + 1) * p];
        let step = vecn::norm(beta) * dt;
        let noisy = (step + params.speed_std[i] * standard_normal(rng)).max(0.0);
        speeds.push(noisy / dt);
        let mut dir = beta.to_vec();
        if vecn::normalize(&mut dir) == 0.0 {
            // stationary node: heading carries no information
            headings.extend(sample_vmf(&unit_x(p), 0.0, rng)?);
        } else {
            headings.extend(sample_vmf(&dir, params.heading_kappa[i], rng)?);
        }
    }
    Ok(Dataset {
        tick: snapshot.tick(),
        dt,
        node_ranges,
        node_bearings,
        anchor_ranges,
        anchor_bearings,
        speeds,
        headings,
    })
}

fn unit_x(p: usize) -> Vec<f64> {
    let mut v = vec![0.0; p];
    v[0] = 1.0;
    v
}

/// Which range measurements an outlier process may corrupt.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OutlierSelection {
    /// Indices into the snapshot's range-edge list.
    pub node_edges: Vec<usize>,
    /// Indices into the node-major anchor range pair list.
    pub anchor_edges: Vec<usize>,
}

impl OutlierSelection {
    /// Selects a single node-anchor range pair.
    pub fn anchor_edge(snapshot: &NetworkSnapshot, node: usize, anchor: usize) -> Result<Self> {
        let idx = snapshot
            .anchor_edges()
            .iter()
            .position(|&(i, k)| i == node && k == anchor)
            .ok_or_else(|| {
                Error::Config(format!("no range pair between node {node} and anchor {anchor}"))
            })?;
        Ok(Self {
            node_edges: vec![],
            anchor_edges: vec![idx],
        })
    }

    /// Selects every range measurement involving `node`.
    pub fn all_of_node(snapshot: &NetworkSnapshot, node: usize) -> Result<Self> {
        if node >= snapshot.n_nodes() {
            return Err(Error::Config(format!("node {node} out of range")));
        }
        let node_edges = snapshot
            .range_edges()
            .iter()
            .enumerate()
            .filter(|(_, &(i, j))| i == node || j == node)
            .map(|(e, _)| e)
            .collect();
        let anchor_edges = snapshot
            .anchor_edges()
            .iter()
            .enumerate()
            .filter(|(_, &(i, _))| i == node)
            .map(|(ae, _)| ae)
            .collect();
        Ok(Self {
            node_edges,
            anchor_edges,
        })
    }
}

/// Independently replaces each selected range by `factor` times the true
/// distance with the given probability. Bearings and velocities are left
/// untouched.
pub fn inject_outliers<R: Rng + ?Sized>(
    dataset: &Dataset,
    snapshot: &NetworkSnapshot,
    selection: &OutlierSelection,
    factor: f64,
    probability: f64,
    rng: &mut R,
) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&probability) {
        return Err(Error::Config(format!("probability {probability} not in [0,1]")));
    }
    if !(factor > 0.0) {
        return Err(Error::Config("outlier factor must be positive".into()));
    }
    let mut out = dataset.clone();
    for &e in &selection.node_edges {
        let (i, j) = snapshot.range_edges()[e];
        if rng.gen::<f64>() < probability {
            out.node_ranges[e] =
                factor * vecn::dist(snapshot.node_position(i), snapshot.node_position(j));
        }
    }
    let anchor_edges = snapshot.anchor_edges();
    for &ae in &selection.anchor_edges {
        let (i, k) = anchor_edges[ae];
        if rng.gen::<f64>() < probability {
            out.anchor_ranges[ae] =
                factor * vecn::dist(snapshot.node_position(i), snapshot.anchor_position(k));
        }
    }
    Ok(out)
}

impl Dataset {
    /// One measurement per line: kind, ids, tick, values.
    pub fn to_text(&self, snapshot: &NetworkSnapshot) -> String {
        let p = snapshot.dim();
        let mut s = String::new();
        writeln!(s, "dataset {} {} {}", self.tick, p, self.dt).unwrap();
        for (e, &(i, j)) in snapshot.range_edges().iter().enumerate() {
            writeln!(s, "drange {i} {j} {} {}", self.tick, self.node_ranges[e]).unwrap();
        }
        for (be, &(i, j)) in snapshot.bearing_edges().iter().enumerate() {
            write!(s, "dbear {i} {j} {}", self.tick).unwrap();
            for c in 0..p {
                write!(s, " {}", self.node_bearings[be * p + c]).unwrap();
            }
            s.push('\n');
        }
        for (ae, &(i, k)) in snapshot.anchor_edges().iter().enumerate() {
            writeln!(s, "arange {i} {k} {} {}", self.tick, self.anchor_ranges[ae]).unwrap();
        }
        for (abe, &(i, k)) in snapshot.anchor_bearing_edges().iter().enumerate() {
            write!(s, "abear {i} {k} {}", self.tick).unwrap();
            for c in 0..p {
                write!(s, " {}", self.anchor_bearings[abe * p + c]).unwrap();
            }
            s.push('\n');
        }
        for i in 0..snapshot.n_nodes() {
            write!(s, "vel {i} {} {}", self.tick, self.speeds[i]).unwrap();
            for c in 0..p {
                write!(s, " {}", self.headings[i * p + c]).unwrap();
            }
            s.push('\n');
        }
        s
    }

    /// Parses the format written by [`Dataset::to_text`]. The snapshot
    /// provides the measurement structure; every structural measurement must
    /// be present exactly once.
    pub fn from_text(text: &str, snapshot: &NetworkSnapshot) -> Result<Self> {
        let p = snapshot.dim();
        let n = snapshot.n_nodes();
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty dataset text".into()))?;
        let h: Vec<&str> = header.split_whitespace().collect();
        if h.len() != 4 || h[0] != "dataset" {
            return Err(Error::Parse(format!("bad dataset header: {header}")));
        }
        let tick: usize = parse(h[1])?;
        let dt: f64 = parse(h[3])?;
        let mut ds = Dataset {
            tick,
            dt,
            node_ranges: vec![f64::NAN; snapshot.range_edges().len()],
            node_bearings: vec![f64::NAN; snapshot.bearing_edges().len() * p],
            anchor_ranges: vec![f64::NAN; snapshot.anchor_edges().len()],
            anchor_bearings: vec![f64::NAN; snapshot.anchor_bearing_edges().len() * p],
            speeds: vec![f64::NAN; n],
            headings: vec![f64::NAN; n * p],
        };
        let edge_idx = |list: &[(usize, usize)], i: usize, j: usize| {
            list.iter().position(|&(a, b)| (a, b) == (i, j))
        };
        let anchor_edges = snapshot.anchor_edges();
        let ab_edges = snapshot.anchor_bearing_edges();
        for line in lines {
            let f: Vec<&str> = line.split_whitespace().collect();
            match f[0] {
                "drange" => {
                    let (i, j) = (parse(f[1])?, parse(f[2])?);
                    let e = edge_idx(snapshot.range_edges(), i, j)
                        .ok_or_else(|| Error::Parse(format!("unknown range edge {i}-{j}")))?;
                    ds.node_ranges[e] = parse(f[4])?;
                }
                "dbear" => {
                    let (i, j) = (parse(f[1])?, parse(f[2])?);
                    let be = edge_idx(snapshot.bearing_edges(), i, j)
                        .ok_or_else(|| Error::Parse(format!("unknown bearing edge {i}-{j}")))?;
                    for c in 0..p {
                        ds.node_bearings[be * p + c] = parse(f[4 + c])?;
                    }
                }
                "arange" => {
                    let (i, k) = (parse(f[1])?, parse(f[2])?);
                    let ae = edge_idx(&anchor_edges, i, k)
                        .ok_or_else(|| Error::Parse(format!("unknown anchor pair {i}-{k}")))?;
                    ds.anchor_ranges[ae] = parse(f[4])?;
                }
                "abear" => {
                    let (i, k) = (parse(f[1])?, parse(f[2])?);
                    let abe = edge_idx(&ab_edges, i, k).ok_or_else(|| {
                        Error::Parse(format!("unknown anchor bearing pair {i}-{k}"))
                    })?;
                    for c in 0..p {
                        ds.anchor_bearings[abe * p + c] = parse(f[4 + c])?;
                    }
                }
                "vel" => {
                    let i: usize = parse(f[1])?;
                    ds.speeds[i] = parse(f[3])?;
                    for c in 0..p {
                        ds.headings[i * p + c] = parse(f[4 + c])?;
                    }
                }
                other => return Err(Error::Parse(format!("unknown record kind: {other}"))),
            }
        }
        let complete = ds
            .node_ranges
            .iter()
            .chain(&ds.node_bearings)
            .chain(&ds.anchor_ranges)
            .chain(&ds.anchor_bearings)
            .chain(&ds.speeds)
            .chain(&ds.headings)
            .all(|v| !v.is_nan());
        if !complete {
            return Err(Error::Parse("dataset text missing measurements".into()));
        }
        Ok(ds)
    }
}

fn parse<T: std::str::FromStr>(s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::Parse(format!("bad token: {s}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::BearingPolicy;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    // frozen from an arbitrary-precision evaluation of the conversion formula
    const SIGMA_EQ_800: f64 = 0.035366398540916829;
    const SIGMA_EQ_1000: f64 = 0.031630688556651143;

    #[test]
    fn sigma_eq_reference_values() {
        let s800 = kappa_to_sigma_eq(800.0).unwrap();
        assert!((s800 - SIGMA_EQ_800).abs() / SIGMA_EQ_800 < 1e-12);
        let deg = s800.to_degrees();
        assert!((deg - 2.0).abs() <= 0.05, "{deg} deg");
        let s1000 = kappa_to_sigma_eq(1000.0).unwrap();
        assert!((s1000 - SIGMA_EQ_1000).abs() / SIGMA_EQ_1000 < 1e-12);
        // limit: concentration to infinity drives the spread to zero
        assert!(kappa_to_sigma_eq(1e12).unwrap() <= 1e-5);
        // small kappa leaves the log argument nonpositive
        assert!(kappa_to_sigma_eq(0.2).is_err());
    }

    fn resultant(p: usize, kappa: f64, n: usize, seed: u64) -> (Vec<f64>, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mean = if p == 2 {
            vec![1.0, 0.0]
        } else {
            vec![0.0, 0.0, 1.0]
        };
        let mut sum = vec![0.0; p];
        for _ in 0..n {
            let v = sample_vmf(&mean, kappa, &mut rng).unwrap();
            for c in 0..p {
                sum[c] += v[c];
            }
        }
        let len = vecn::norm(&sum) / n as f64;
        (sum, len)
    }

    #[test]
    fn vmf_uniform_when_kappa_zero() {
        for p in [2, 3] {
            let (_, len) = resultant(p, 0.0, 100_000, 11);
            assert!(len < 0.02, "p={p}: resultant {len}");
        }
    }

    #[test]
    fn vmf_resultant_matches_theory() {
        // theoretical mean resultant lengths, frozen from an
        // arbitrary-precision evaluation: I1(k)/I0(k) and coth(k)-1/k
        let cases = [
            (2, 10.0, 0.94859982595484596),
            (2, 800.0, 0.99937480444288129),
            (2, 1000.0, 0.99949987487480428),
            (3, 10.0, 0.90000000412230725),
            (3, 800.0, 0.99875),
            (3, 1000.0, 0.999),
        ];
        let n = 100_000;
        for (p, kappa, want) in cases {
            let mut rng = ChaCha8Rng::seed_from_u64(43 + p as u64);
            let mean = if p == 2 {
                vec![0.6, 0.8]
            } else {
                vec![0.0, 0.6, 0.8]
            };
            let mut dots = Vec::with_capacity(n);
            for _ in 0..n {
                let v = sample_vmf(&mean, kappa, &mut rng).unwrap();
                dots.push(vecn::dot(&v, &mean));
            }
            let m = dots.iter().sum::<f64>() / n as f64;
            let var = dots.iter().map(|d| (d - m) * (d - m)).sum::<f64>() / n as f64;
            let se = (var / n as f64).sqrt();
            assert!(
                (m - want).abs() <= 3.0 * se.max(1e-7),
                "p={p} kappa={kappa}: got {m}, want {want}, se {se}"
            );
        }
    }

    #[test]
    fn vmf_high_kappa_mean_direction() {
        let (sum, _) = resultant(3, 1000.0, 100_000, 17);
        let mut dir = sum.clone();
        vecn::normalize(&mut dir);
        let angle = vecn::dot(&dir, &[0.0, 0.0, 1.0]).clamp(-1.0, 1.0).acos();
        assert!(angle.to_degrees() < 0.5, "{} deg", angle.to_degrees());
    }

    #[test]
    fn vmf_angular_std_crosschecks_sigma_eq() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mean = [1.0, 0.0];
        let n = 100_000;
        let mut sq = 0.0;
        for _ in 0..n {
            let v = sample_vmf(&mean, 800.0, &mut rng).unwrap();
            let ang = v[1].atan2(v[0]);
            sq += ang * ang;
        }
        let std = (sq / n as f64).sqrt();
        let want = kappa_to_sigma_eq(800.0).unwrap();
        assert!((std - want).abs() / want < 0.05, "std {std} vs {want}");
    }

    fn two_node_snapshot() -> NetworkSnapshot {
        NetworkSnapshot::build(
            2,
            0,
            vec![0.0, 0.0, 3.0, 4.0],
            vec![1.0, -1.0],
            20.0,
            &BearingPolicy::All,
        )
        .unwrap()
    }

    #[test]
    fn noiseless_synthesis_reproduces_geometry() {
        let s = two_node_snapshot();
        let params = NoiseParams::uniform(&s, 1e-12, 1e-12, 1e12, 1e12, 1e-12, 1e12);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let vel = vec![1.0, 0.0, 0.0, 1.0];
        let ds = synthesize_dataset(&s, &vel, &params, 1.0, &mut rng).unwrap();
        assert!((ds.node_ranges[0] - 5.0).abs() < 1e-6);
        assert!((ds.anchor_ranges[0] - 2.0f64.sqrt()).abs() < 1e-6);
        assert!((ds.speeds[0] - 1.0).abs() < 1e-6);
        // bearings point along the true directions
        assert!((ds.node_bearings[0] - (-0.6)).abs() < 1e-5);
        assert!((ds.node_bearings[1] - (-0.8)).abs() < 1e-5);
    }

    #[test]
    fn synthesis_is_deterministic_per_seed() {
        let s = two_node_snapshot();
        let params = NoiseParams::uniform(&s, 0.5, 0.5, 1000.0, 1000.0, 0.1, 1000.0);
        let vel = vec![1.0, 0.0, 0.0, 1.0];
        let a = synthesize_dataset(&s, &vel, &params, 1.0, &mut ChaCha8Rng::seed_from_u64(9))
            .unwrap();
        let b = synthesize_dataset(&s, &vel, &params, 1.0, &mut ChaCha8Rng::seed_from_u64(9))
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unit_norm_bearings() {
        let s = two_node_snapshot();
        let params = NoiseParams::uniform(&s, 0.5, 0.5, 10.0, 10.0, 0.1, 10.0);
        let vel = vec![0.3, -0.4, 0.0, 0.0];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let ds = synthesize_dataset(&s, &vel, &params, 1.0, &mut rng).unwrap();
            for chunk in ds
                .node_bearings
                .chunks(2)
                .chain(ds.anchor_bearings.chunks(2))
                .chain(ds.headings.chunks(2))
            {
                assert!((vecn::norm(chunk) - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn range_noise_std_is_calibrated() {
        let s = two_node_snapshot();
        let params = NoiseParams::uniform(&s, 0.5, 0.5, 1000.0, 1000.0, 0.1, 1000.0);
        let vel = vec![1.0, 0.0, 0.0, 1.0];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut residuals = Vec::new();
        for _ in 0..10_000 {
            let ds = synthesize_dataset(&s, &vel, &params, 1.0, &mut rng).unwrap();
            residuals.push(ds.node_ranges[0] - 5.0);
        }
        let m = residuals.iter().sum::<f64>() / residuals.len() as f64;
        let std = (residuals.iter().map(|r| (r - m) * (r - m)).sum::<f64>()
            / residuals.len() as f64)
            .sqrt();
        assert!((0.48..=0.52).contains(&std), "std {std}");
    }

    #[test]
    fn missing_parameter_is_a_configuration_error() {
        let s = two_node_snapshot();
        let mut params = NoiseParams::uniform(&s, 0.5, 0.5, 1000.0, 1000.0, 0.1, 1000.0);
        params.node_range_std.pop();
        let vel = vec![0.0; 4];
        let r = synthesize_dataset(&s, &vel, &params, 1.0, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(r, Err(Error::MissingParameter(_))));
    }

    #[test]
    fn outlier_probability_extremes() {
        let s = two_node_snapshot();
        let params = NoiseParams::uniform(&s, 0.5, 0.5, 1000.0, 1000.0, 0.1, 1000.0);
        let vel = vec![1.0, 0.0, 0.0, 1.0];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ds = synthesize_dataset(&s, &vel, &params, 1.0, &mut rng).unwrap();
        let sel = OutlierSelection::all_of_node(&s, 0).unwrap();
        let unchanged = inject_outliers(&ds, &s, &sel, 5.0, 0.0, &mut rng).unwrap();
        assert_eq!(ds, unchanged);
        let all = inject_outliers(&ds, &s, &sel, 5.0, 1.0, &mut rng).unwrap();
        assert!((all.node_ranges[0] - 25.0).abs() < 1e-12);
        assert!((all.anchor_ranges[0] - 5.0 * 2.0f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn outlier_rate_matches_binomial_bounds() {
        let s = two_node_snapshot();
        let params = NoiseParams::uniform(&s, 0.5, 0.5, 1000.0, 1000.0, 0.1, 1000.0);
        let vel = vec![1.0, 0.0, 0.0, 1.0];
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let ds = synthesize_dataset(&s, &vel, &params, 1.0, &mut rng).unwrap();
        let sel = OutlierSelection::anchor_edge(&s, 0, 0).unwrap();
        let mut hits = 0;
        for _ in 0..10_000 {
            let out = inject_outliers(&ds, &s, &sel, 5.0, 0.1, &mut rng).unwrap();
            if out.anchor_ranges[0] != ds.anchor_ranges[0] {
                hits += 1;
            }
        }
        assert!((900..=1100).contains(&hits), "{hits} corruptions");
    }

    #[test]
    fn dataset_text_round_trip() {
        let s = two_node_snapshot();
        let params = NoiseParams::uniform(&s, 0.5, 0.5, 1000.0, 1000.0, 0.1, 1000.0);
        let vel = vec![1.0, 0.0, 0.0, 1.0];
        let ds = synthesize_dataset(&s, &vel, &params, 0.5, &mut ChaCha8Rng::seed_from_u64(8))
            .unwrap();
        let text = ds.to_text(&s);
        let back = Dataset::from_text(&text, &s).unwrap();
        assert_eq!(ds, back);
    }
}
