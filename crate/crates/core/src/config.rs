//! Experiment configuration: one TOML file per experiment.

use serde::{Deserialize, Serialize};

use crate::estimation::EstimationConfig;
use crate::scenario::{HelixParams, LapParams, LawnmowerParams};
use crate::solver::{MomentumRule, SolverConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub scenario: ScenarioConfig,
    pub noise: NoiseSection,
    pub outliers: OutlierSection,
    pub solver: SolverSection,
    pub estimation: EstimationSection,
    pub ekf: EkfSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: ExperimentSection::default(),
            scenario: ScenarioConfig::Lawnmower(LawnmowerParams::default()),
            noise: NoiseSection::default(),
            outliers: OutlierSection::default(),
            solver: SolverSection::default(),
            estimation: EstimationSection::default(),
            ekf: EkfSection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSection {
    pub name: String,
    pub mode: Mode,
    pub method: Method,
    pub trials: usize,
    pub seed: u64,
    pub engine: EngineChoice,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            mode: Mode::Dynamic,
            method: Method::Both,
            trials: 100,
            seed: 1,
            engine: EngineChoice::Centralized,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Static,
    Dynamic,
    Params,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Convex,
    Ekf,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EngineChoice {
    Centralized,
    Distributed,
}

impl From<EngineChoice> for crate::runner::Engine {
    fn from(e: EngineChoice) -> Self {
        match e {
            EngineChoice::Centralized => crate::runner::Engine::Centralized,
            EngineChoice::Distributed => crate::runner::Engine::Distributed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScenarioConfig {
    Lawnmower(LawnmowerParams),
    Lap(LapParams),
    Helix(HelixParams),
    StaticSweep(StaticSweepParams),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct StaticSweepParams {
    /// Number of anchor configurations to test.
    pub configurations: usize,
    /// Total vehicles placed; `anchors` of them become anchors.
    pub nodes: usize,
    pub anchors: usize,
    /// Deployment area in square meters.
    pub area: f64,
    pub min_separation: f64,
    /// The disk radius is tuned until this fraction of all vehicle pairs
    /// are connected.
    pub edge_fraction: f64,
}

impl Default for StaticSweepParams {
    fn default() -> Self {
        Self {
            configurations: 10,
            nodes: 10,
            anchors: 4,
            area: 50.0,
            min_separation: 2.0,
            edge_fraction: 0.8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSection {
    pub range_std: f64,
    pub anchor_range_std: f64,
    pub bearing_kappa: f64,
    pub anchor_bearing_kappa: f64,
    pub speed_std: f64,
    pub heading_kappa: f64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self {
            range_std: 0.5,
            anchor_range_std: 0.5,
            bearing_kappa: 1000.0,
            anchor_bearing_kappa: 1000.0,
            speed_std: 0.1,
            heading_kappa: 1000.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct OutlierSection {
    pub probability: f64,
    pub factor: f64,
    pub target: OutlierTarget,
    /// Node whose measurements are contaminated.
    pub node: usize,
    /// Anchor of the contaminated pair for the single-edge target.
    pub anchor: usize,
    /// First tick the contamination may hit, leaving a clean stretch that
    /// defines the pre-outlier baseline.
    pub start_tick: usize,
}

impl Default for OutlierSection {
    fn default() -> Self {
        Self {
            probability: 0.0,
            factor: 5.0,
            target: OutlierTarget::None,
            node: 0,
            anchor: 0,
            start_tick: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutlierTarget {
    None,
    /// One node-anchor range pair.
    AnchorEdge,
    /// Every range measurement of one node.
    Node,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSection {
    pub window: usize,
    pub max_iters: usize,
    pub tolerance: f64,
    pub momentum: MomentumChoice,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            window: 4,
            max_iters: 2000,
            tolerance: 1e-8,
            momentum: MomentumChoice::Classic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MomentumChoice {
    Classic,
    Algorithm1,
}

impl SolverSection {
    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            max_iters: self.max_iters,
            tolerance: self.tolerance,
            momentum: match self.momentum {
                MomentumChoice::Classic => MomentumRule::Classic,
                MomentumChoice::Algorithm1 => MomentumRule::AlgorithmOne,
            },
            log_costs: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimationSection {
    pub default_std: f64,
    pub default_kappa: f64,
    pub min_samples: usize,
    pub sigma_floor: f64,
    pub kappa_cap: f64,
}

impl Default for EstimationSection {
    fn default() -> Self {
        let d = EstimationConfig::default();
        Self {
            default_std: d.default_std,
            default_kappa: d.default_kappa,
            min_samples: d.min_samples,
            sigma_floor: d.sigma_floor,
            kappa_cap: d.kappa_cap,
        }
    }
}

impl EstimationSection {
    pub fn estimation_config(&self) -> EstimationConfig {
        EstimationConfig {
            default_std: self.default_std,
            default_kappa: self.default_kappa,
            min_samples: self.min_samples,
            sigma_floor: self.sigma_floor,
            kappa_cap: self.kappa_cap,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EkfSection {
    pub init_std: f64,
    /// Process-noise variances searched during tuning.
    pub grid: Vec<f64>,
    pub tuning_trials: usize,
}

impl Default for EkfSection {
    fn default() -> Self {
        Self {
            init_std: 2.0,
            grid: vec![1e-4, 1e-3, 1e-2, 1e-1, 1.0],
            tuning_trials: 8,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(format!("config: {e}")))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Parse(format!("config: {e}")))
    }
}

/// FNV-1a hash of the raw config text, recorded in run manifests.
pub fn config_hash(text: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
