//! Seeded random instances for tests and oracle suites.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{incidence, IncidenceStructure, NetworkSnapshot};
use crate::measurement::{standard_normal, synthesize_dataset, Dataset, NoiseParams};
use crate::problem::{assemble, ConstraintSet, QuadraticForm};
use crate::solver::lipschitz_bound;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct InstanceSpec {
    pub seed: u64,
    pub n_nodes: usize,
    pub n_anchors: usize,
    pub dim: usize,
    pub window: usize,
    pub box_side: f64,
    /// Fraction of node pairs that should be range edges.
    pub density: f64,
    pub sigma_range: (f64, f64),
    pub kappa_range: (f64, f64),
    /// Random-walk step scale for the window motion.
    pub step_scale: f64,
}

impl Default for InstanceSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            n_nodes: 4,
            n_anchors: 2,
            dim: 2,
            window: 1,
            box_side: 10.0,
            density: 0.9,
            sigma_range: (0.2, 1.0),
            kappa_range: (100.0, 2000.0),
            step_scale: 0.4,
        }
    }
}

/// A random connected network moving over a window, with measurements.
#[derive(Debug, Clone)]
pub struct RandomInstance {
    pub spec: InstanceSpec,
    pub snapshots: Vec<NetworkSnapshot>,
    pub datasets: Vec<Dataset>,
    pub params: NoiseParams,
    /// True node positions per window tick.
    pub truth: Vec<Vec<f64>>,
}

impl RandomInstance {
    pub fn incidence(&self) -> Result<IncidenceStructure> {
        incidence(self.snapshots.last().unwrap(), self.spec.window)
    }

    pub fn assemble(&self) -> Result<(QuadraticForm, ConstraintSet)> {
        let inc = self.incidence()?;
        let snaps: Vec<&NetworkSnapshot> = self.snapshots.iter().collect();
        let data: Vec<&Dataset> = self.datasets.iter().collect();
        assemble(&inc, &snaps, &data, &self.params)
    }

    /// Closed-form Lipschitz bound for this instance.
    pub fn lipschitz(&self) -> Result<f64> {
        let snap = self.snapshots.last().unwrap();
        let (sn, sa, sv) = self.params.min_stds();
        lipschitz_bound(
            crate::graph::max_degree(snap),
            crate::graph::max_anchor_count(snap),
            self.spec.window,
            sn,
            sa,
            sv,
        )
    }
}

/// Generates a connected random instance; deterministic in the spec.
pub fn random_instance(spec: &InstanceSpec) -> Result<RandomInstance> {
    let p = spec.dim;
    let n = spec.n_nodes;
    let m = spec.n_anchors;
    if n == 0 {
        return Err(Error::Config("need at least one node".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // node and anchor placement with a minimum separation
    let min_sep = 0.3;
    let mut points = Vec::with_capacity((n + m) * p);
    let mut attempts = 0;
    while points.len() < (n + m) * p {
        let cand: Vec<f64> = (0..p).map(|_| rng.gen::<f64>() * spec.box_side).collect();
        let ok = points
            .chunks(p)
            .all(|q| crate::vecn::dist(q, &cand) >= min_sep);
        if ok {
            points.extend(cand);
        }
        attempts += 1;
        if attempts > 100_000 {
            return Err(Error::Config("placement failed; box too small".into()));
        }
    }
    let nodes: Vec<f64> = points[..n * p].to_vec();
    let anchors: Vec<f64> = points[n * p..].to_vec();

    // radius from the target density, grown until connected
    let mut dists = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            dists.push(crate::vecn::dist(&nodes[i * p..(i + 1) * p], &nodes[j * p..(j + 1) * p]));
        }
    }
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut radius = if dists.is_empty() {
        spec.box_side
    } else {
        let idx = ((spec.density * dists.len() as f64).ceil() as usize).clamp(1, dists.len());
        dists[idx - 1]
    };
    let snapshot0 = loop {
        match NetworkSnapshot::build(
            p,
            0,
            nodes.clone(),
            anchors.clone(),
            radius,
            &crate::graph::BearingPolicy::All,
        ) {
            Ok(s) => {
                // every instance needs at least one anchor measurement to be
                // solvable; grow the radius until one appears
                if m > 0 && s.anchor_edges().is_empty() {
                    radius *= 1.3;
                    continue;
                }
                break s;
            }
            Err(Error::DisconnectedNetwork) => {
                radius *= 1.3;
                continue;
            }
            Err(e) => return Err(e),
        }
    };

    // random per-measurement noise parameters
    let ru = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| lo + (hi - lo) * rng.gen::<f64>();
    let (slo, shi) = spec.sigma_range;
    let (klo, khi) = spec.kappa_range;
    let params = NoiseParams {
        node_range_std: (0..snapshot0.range_edges().len())
            .map(|_| ru(&mut rng, slo, shi))
            .collect(),
        node_bearing_kappa: (0..snapshot0.bearing_edges().len())
            .map(|_| ru(&mut rng, klo, khi))
            .collect(),
        anchor_range_std: (0..snapshot0.anchor_edges().len())
            .map(|_| ru(&mut rng, slo, shi))
            .collect(),
        anchor_bearing_kappa: (0..snapshot0.anchor_bearing_edges().len())
            .map(|_| ru(&mut rng, klo, khi))
            .collect(),
        speed_std: (0..n).map(|_| ru(&mut rng, slo, shi)).collect(),
        heading_kappa: (0..n).map(|_| ru(&mut rng, klo, khi)).collect(),
    };

    // window motion: a small random walk with the tick-0 structure frozen
    let mut truth = vec![nodes.clone()];
    for _ in 1..spec.window {
        let prev = truth.last().unwrap();
        let mut next = prev.clone();
        for v in next.iter_mut() {
            *v += spec.step_scale * standard_normal(&mut rng);
        }
        truth.push(next);
    }
    let mut snapshots = Vec::with_capacity(spec.window);
    let mut datasets = Vec::with_capacity(spec.window);
    for (tau, pos) in truth.iter().enumerate() {
        let snap = NetworkSnapshot::from_parts(
            p,
            tau,
            pos.clone(),
            anchors.clone(),
            snapshot0.range_edges().to_vec(),
            snapshot0.bearing_edges().to_vec(),
            (0..n).map(|i| snapshot0.anchor_range_ids(i).to_vec()).collect(),
            (0..n).map(|i| snapshot0.anchor_bearing_ids(i).to_vec()).collect(),
        )?;
        let beta: Vec<f64> = if tau == 0 {
            vec![0.0; n * p]
        } else {
            pos.iter()
                .zip(truth[tau - 1].iter())
                .map(|(a, b)| a - b)
                .collect()
        };
        // noise can clamp a range to zero, which is degenerate for an edge
        // carrying a bearing; redraw until every range is positive
        let ds = loop {
            let cand = synthesize_dataset(&snap, &beta, &params, 1.0, &mut rng)?;
            let ok = cand.node_ranges.iter().all(|&d| d > 0.0)
                && cand.anchor_ranges.iter().all(|&r| r > 0.0);
            if ok {
                break cand;
            }
        };
        snapshots.push(snap);
        datasets.push(ds);
    }
    Ok(RandomInstance {
        spec: spec.clone(),
        snapshots,
        datasets,
        params,
        truth,
    })
}
