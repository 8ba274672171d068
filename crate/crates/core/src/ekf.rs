//! Extended Kalman filter baseline over the same measurement stream.
//!
//! One filter per unknown node. The state is the position alone; the
//! measured velocity acts as the control input of the prediction, and every
//! range and bearing is folded in with a first-order linearization. A
//! node-node measurement treats the other node's predicted mean for the
//! tick as a known point, which keeps the per-node covariance at p×p.
//! Updates use the Joseph form and the covariance is re-symmetrized and
//! spot-checked for positive definiteness every tick.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::measurement::{kappa_to_sigma_eq, standard_normal, Dataset, NoiseParams};
use crate::scenario::Scenario;
use crate::{Error, Result};

/// Per-node filter state.
#[derive(Debug, Clone)]
pub struct EkfState {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct EkfConfig {
    /// STD of the Gaussian initialization offset around the truth (m).
    pub init_std: f64,
}

impl Default for EkfConfig {
    fn default() -> Self {
        Self { init_std: 2.0 }
    }
}

/// The grid-searched knob: isotropic process-noise variance per tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EkfTuning {
    pub process_var: f64,
}

/// Runs the filter bank over a full measurement stream.
///
/// `datasets[t]` must correspond to `scenario` tick t; tick 0 only
/// initializes. Returns per-tick stacked position estimates.
pub fn ekf_run<R: Rng + ?Sized>(
    scenario: &Scenario,
    datasets: &[Dataset],
    params: &NoiseParams,
    tuning: EkfTuning,
    config: &EkfConfig,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    if datasets.len() != scenario.ticks {
        return Err(Error::Shape(format!(
            "{} datasets for {} ticks",
            datasets.len(),
            scenario.ticks
        )));
    }
    if !(tuning.process_var > 0.0) {
        return Err(Error::Config("process variance must be positive".into()));
    }
    let p = scenario.dim;
    let n = scenario.n_nodes;
    let snap0 = scenario.snapshot(0)?;
    params.validate(&snap0)?;

    // initialization: truth plus a Gaussian offset
    let mut filters: Vec<EkfState> = (0..n)
        .map(|i| {
            let truth = &scenario.node_paths[0][i * p..(i + 1) * p];
            let mean = DVector::from_fn(p, |c, _| {
                truth[c] + config.init_std * standard_normal(rng)
            });
            EkfState {
                mean,
                cov: DMatrix::identity(p, p) * config.init_std * config.init_std,
            }
        })
        .collect();

    let mut estimates = Vec::with_capacity(scenario.ticks);
    estimates.push(stack_means(&filters, p));

    let bearing_vars: BearingVars = BearingVars::from_params(params)?;

    for t in 1..scenario.ticks {
        let snap = scenario.snapshot(t)?;
        let ds = &datasets[t];

        // prediction holds the latest velocity reading across the tick:
        // x(t+1) = x(t) + β(t)ΔT. A velocity measurement describes the
        // interval it was collected over, so this extrapolation runs one
        // tick behind whenever the heading turns. The first step has no
        // earlier reading and bootstraps from its own.
        let vel = if t >= 2 { &datasets[t - 1] } else { ds };
        let mut predicted: Vec<DVector<f64>> = Vec::with_capacity(n);
        for (i, f) in filters.iter_mut().enumerate() {
            let speed = vel.speeds[i];
            let heading = &vel.headings[i * p..(i + 1) * p];
            for c in 0..p {
                f.mean[c] += speed * heading[c] * ds.dt;
            }
            for c in 0..p {
                f.cov[(c, c)] += tuning.process_var;
            }
            predicted.push(f.mean.clone());
        }

        // measurement updates in a fixed order: anchors first, then peers
        for i in 0..n {
            for (local, &k) in snap.anchor_range_ids(i).iter().enumerate() {
                let _ = local;
                let ae = snap
                    .anchor_edges()
                    .iter()
                    .position(|&(ni, nk)| ni == i && nk == k)
                    .expect("anchor pair exists");
                let a = DVector::from_column_slice(snap.anchor_position(k));
                let sigma = params.anchor_range_std[ae];
                range_update(&mut filters[i], &a, ds.anchor_ranges[ae], sigma * sigma)?;
            }
            for (abe_local, &k) in snap.anchor_bearing_ids(i).iter().enumerate() {
                let _ = abe_local;
                let abe = snap
                    .anchor_bearing_edges()
                    .iter()
                    .position(|&(ni, nk)| ni == i && nk == k)
                    .expect("anchor bearing exists");
                let a = DVector::from_column_slice(snap.anchor_position(k));
                let q = DVector::from_column_slice(&ds.anchor_bearings[abe * p..(abe + 1) * p]);
                bearing_update(&mut filters[i], &a, &q, bearing_vars.anchor[abe])?;
            }
            for (e, &(ei, ej)) in snap.range_edges().iter().enumerate() {
                if ei != i && ej != i {
                    continue;
                }
                let other = if ei == i { ej } else { ei };
                let sigma = params.node_range_std[e];
                let anchor_like = predicted[other].clone();
                range_update(&mut filters[i], &anchor_like, ds.node_ranges[e], sigma * sigma)?;
            }
            for (be, &(bi, bj)) in snap.bearing_edges().iter().enumerate() {
                if bi != i && bj != i {
                    continue;
                }
                let other = if bi == i { bj } else { bi };
                // measured bearing points from j toward i; flip when this
                // node is the higher endpoint
                let mut q = DVector::from_column_slice(&ds.node_bearings[be * p..(be + 1) * p]);
                if bj == i {
                    q = -q;
                }
                let anchor_like = predicted[other].clone();
                bearing_update(&mut filters[i], &anchor_like, &q, bearing_vars.node[be])?;
            }
        }

        for f in filters.iter_mut() {
            symmetrize(&mut f.cov);
            if !covariance_pd(&f.cov) {
                return Err(Error::CovarianceNotPd(t));
            }
        }
        estimates.push(stack_means(&filters, p));
    }
    Ok(estimates)
}

struct BearingVars {
    node: Vec<f64>,
    anchor: Vec<f64>,
}

impl BearingVars {
    fn from_params(params: &NoiseParams) -> Result<Self> {
        let conv = |k: &f64| kappa_to_sigma_eq(*k).map(|s| s * s);
        Ok(Self {
            node: params
                .node_bearing_kappa
                .iter()
                .map(conv)
                .collect::<Result<_>>()?,
            anchor: params
                .anchor_bearing_kappa
                .iter()
                .map(conv)
                .collect::<Result<_>>()?,
        })
    }
}

fn stack_means(filters: &[EkfState], p: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(filters.len() * p);
    for f in filters {
        out.extend(f.mean.iter().copied());
    }
    out
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

fn covariance_pd(m: &DMatrix<f64>) -> bool {
    m.clone().cholesky().is_some()
}

/// Scalar range measurement r = ‖x − a‖ + noise.
fn range_update(f: &mut EkfState, a: &DVector<f64>, measured: f64, var: f64) -> Result<()> {
    let diff = &f.mean - a;
    let dist = diff.norm();
    if dist == 0.0 {
        return Err(Error::DegenerateGeometry(
            "filter mean coincides with a range reference".into(),
        ));
    }
    let h = diff / dist; // gradient of the range (p×1)
    let innovation = measured - dist;
    let s = (h.transpose() * &f.cov * &h)[(0, 0)] + var;
    let gain = &f.cov * &h / s;
    f.mean += &gain * innovation;
    // Joseph form: (I − K H) P (I − K H)ᵀ + K R Kᵀ
    let p = f.mean.len();
    let ikh = DMatrix::identity(p, p) - &gain * h.transpose();
    f.cov = &ikh * &f.cov * ikh.transpose() + &gain * var * gain.transpose();
    Ok(())
}

/// Unit-vector bearing measurement u = (x − a)/‖x − a‖ + noise, treated with
/// an isotropic variance.
fn bearing_update(
    f: &mut EkfState,
    a: &DVector<f64>,
    measured: &DVector<f64>,
    var: f64,
) -> Result<()> {
    let diff = &f.mean - a;
    let dist = diff.norm();
    if dist == 0.0 {
        return Err(Error::DegenerateGeometry(
            "filter mean coincides with a bearing reference".into(),
        ));
    }
    let p = f.mean.len();
    let h_val = &diff / dist;
    // Jacobian (I − uuᵀ)/‖x − a‖
    let jac = (DMatrix::identity(p, p) - &h_val * h_val.transpose()) / dist;
    let innovation = measured - h_val;
    let s = &jac * &f.cov * jac.transpose() + DMatrix::identity(p, p) * var;
    let s_inv = s
        .try_inverse()
        .ok_or_else(|| Error::Domain("singular innovation covariance".into()))?;
    let gain = &f.cov * jac.transpose() * s_inv;
    f.mean += &gain * innovation;
    let ikh = DMatrix::identity(p, p) - &gain * &jac;
    f.cov = &ikh * &f.cov * ikh.transpose() + &gain * var * gain.transpose();
    Ok(())
}

/// Picks the process-noise variance minimizing the trajectory-averaged mean
/// error over the tuning trials. The tuning seeds must be disjoint from any
/// evaluation seeds; the harness derives them from a separate stream.
pub fn grid_search_tune(
    scenario: &Scenario,
    params: &NoiseParams,
    config: &EkfConfig,
    grid: &[f64],
    tuning_seeds: &[u64],
    synth: &mut dyn FnMut(u64) -> Result<Vec<Dataset>>,
) -> Result<EkfTuning> {
    if grid.is_empty() {
        return Err(Error::Config("empty tuning grid".into()));
    }
    if tuning_seeds.is_empty() {
        return Err(Error::Config("no tuning seeds".into()));
    }
    let mut streams = Vec::with_capacity(tuning_seeds.len());
    for &seed in tuning_seeds {
        streams.push((seed, synth(seed)?));
    }
    let mut best = (f64::INFINITY, grid[0]);
    for &q in grid {
        if !(q > 0.0) {
            return Err(Error::Config(format!("grid value {q} not positive")));
        }
        let mut total = 0.0;
        let mut count = 0usize;
        for (seed, datasets) in &streams {
            let mut rng = crate::experiment::trial_rng(*seed, 0x45ef);
            let est = ekf_run(
                scenario,
                datasets,
                params,
                EkfTuning { process_var: q },
                config,
                &mut rng,
            )?;
            for (t, tick_est) in est.iter().enumerate() {
                let truth = scenario.truth(t);
                for i in 0..scenario.n_nodes {
                    let p = scenario.dim;
                    total += crate::vecn::dist(
                        &tick_est[i * p..(i + 1) * p],
                        &truth[i * p..(i + 1) * p],
                    );
                    count += 1;
                }
            }
        }
        let mean = total / count as f64;
        if mean < best.0 {
            best = (mean, q);
        }
    }
    Ok(EkfTuning {
        process_var: best.1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::NetworkSnapshot;
    use crate::measurement::synthesize_dataset;
    use crate::scenario::{lawnmower, LawnmowerParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn noiseless_params(snap: &NetworkSnapshot) -> NoiseParams {
        NoiseParams::uniform(snap, 1e-9, 1e-9, 1e12, 1e12, 1e-9, 1e12)
    }

    fn synth_stream(sc: &Scenario, params: &NoiseParams, seed: u64) -> Vec<Dataset> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..sc.ticks)
            .map(|t| {
                let snap = sc.snapshot(t).unwrap();
                synthesize_dataset(&snap, &sc.velocities[t], params, sc.dt, &mut rng).unwrap()
            })
            .collect()
    }

    #[test]
    fn noiseless_consistent_model_tracks_truth() {
        // a single straight leg: constant velocity, so the held-velocity
        // prediction is exact and the filter tracks the truth
        let sc = lawnmower(&LawnmowerParams {
            legs: 1,
            leg_length: 40.0,
            ..Default::default()
        })
        .unwrap();
        let snap = sc.snapshot(0).unwrap();
        let params = noiseless_params(&snap);
        let datasets = synth_stream(&sc, &params, 3);
        let cfg = EkfConfig { init_std: 1e-9 };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let est = ekf_run(
            &sc,
            &datasets,
            &params,
            EkfTuning { process_var: 1e-9 },
            &cfg,
            &mut rng,
        )
        .unwrap();
        // bearing noise floors the comparison: even at concentration 1e12
        // the unit-vector draws wobble by about a microradian
        let p = sc.dim;
        for (t, tick_est) in est.iter().enumerate() {
            for i in 0..sc.n_nodes {
                let d = crate::vecn::dist(
                    &tick_est[i * p..(i + 1) * p],
                    &sc.truth(t)[i * p..(i + 1) * p],
                );
                assert!(d < 1e-4, "tick {t} node {i}: error {d}");
            }
        }
    }

    #[test]
    fn initial_offset_decays_with_noiseless_measurements() {
        let sc = lawnmower(&LawnmowerParams {
            legs: 2,
            leg_length: 30.0,
            ..Default::default()
        })
        .unwrap();
        let snap = sc.snapshot(0).unwrap();
        let params = noiseless_params(&snap);
        let datasets = synth_stream(&sc, &params, 4);
        let cfg = EkfConfig { init_std: 2.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let est = ekf_run(
            &sc,
            &datasets,
            &params,
            EkfTuning { process_var: 1e-6 },
            &cfg,
            &mut rng,
        )
        .unwrap();
        let p = sc.dim;
        let err_at = |t: usize| {
            (0..sc.n_nodes)
                .map(|i| {
                    crate::vecn::dist(
                        &est[t][i * p..(i + 1) * p],
                        &sc.truth(t)[i * p..(i + 1) * p],
                    )
                })
                .sum::<f64>()
                / sc.n_nodes as f64
        };
        let e0 = err_at(0);
        assert!(e0 > 0.1, "offset init, e0 = {e0}");
        // error decays markedly over the first ticks
        let mut prev = e0;
        let mut decayed = 0;
        for t in 1..20 {
            let e = err_at(t);
            if e < prev {
                decayed += 1;
            }
            prev = e;
        }
        assert!(decayed >= 15, "only {decayed} decays");
        assert!(err_at(19) < 0.2 * e0);
    }

    #[test]
    fn singleton_grid_is_returned() {
        let sc = lawnmower(&LawnmowerParams {
            legs: 2,
            leg_length: 10.0,
            ..Default::default()
        })
        .unwrap();
        let snap = sc.snapshot(0).unwrap();
        let params = NoiseParams::uniform(&snap, 0.1, 0.1, 1e4, 1e4, 0.05, 1e4);
        let cfg = EkfConfig::default();
        let tuned = grid_search_tune(&sc, &params, &cfg, &[0.123], &[5], &mut |seed| {
            Ok(synth_stream(&sc, &params, seed))
        })
        .unwrap();
        assert_eq!(tuned.process_var, 0.123);
    }

    #[test]
    fn empty_grid_is_an_error() {
        let sc = lawnmower(&LawnmowerParams {
            legs: 2,
            leg_length: 10.0,
            ..Default::default()
        })
        .unwrap();
        let snap = sc.snapshot(0).unwrap();
        let params = NoiseParams::uniform(&snap, 0.1, 0.1, 1e4, 1e4, 0.05, 1e4);
        let r = grid_search_tune(&sc, &params, &EkfConfig::default(), &[], &[5], &mut |_| {
            unreachable!()
        });
        assert!(r.is_err());
    }
}
