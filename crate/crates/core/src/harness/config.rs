use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::barrier::{BarrierSpec, Obstacle};
use crate::cbf::CbfSpec;
use crate::cost::CostSpec;
use crate::dynamics::ModelSpec;
use crate::error::{Error, Result};
use crate::sampler::SamplerSpec;
use crate::trajopt::TrajOptSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerId {
    BasMppi,
    SaRmppi,
    BasIlqg,
    AlIlqg,
    CbfFilter,
}

impl ControllerId {
    pub const ALL: [ControllerId; 5] = [
        ControllerId::BasMppi,
        ControllerId::SaRmppi,
        ControllerId::BasIlqg,
        ControllerId::AlIlqg,
        ControllerId::CbfFilter,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ControllerId::BasMppi => "bas_mppi",
            ControllerId::SaRmppi => "sa_rmppi",
            ControllerId::BasIlqg => "bas_ilqg",
            ControllerId::AlIlqg => "al_ilqg",
            ControllerId::CbfFilter => "cbf_filter",
        }
    }
}

impl fmt::Display for ControllerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ControllerId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ControllerId::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown controller `{s}`")))
    }
}

/// Scalar weights of the position-error cost; the goal comes from the
/// scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostConfig {
    pub q: f64,
    pub q_beta: f64,
    pub phi: f64,
    pub crash_cost: f64,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self {
            q: 1.0,
            q_beta: 50.0,
            phi: 100.0,
            crash_cost: 1e6,
        }
    }
}

impl CostConfig {
    pub fn spec(&self, n: usize, goal: &[f64]) -> CostSpec {
        CostSpec::planar(n, goal, self.q, self.q_beta, self.phi, self.crash_cost)
    }
}

/// One-obstacle tracking comparison: a straight reference from `start` to
/// `goal` that touches `obstacle`, tracked under control noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackingSpec {
    pub dt: f64,
    pub u_limit: f64,
    pub start: [f64; 2],
    pub goal: [f64; 2],
    pub obstacle: Obstacle,
    pub steps: usize,
    /// Closed-loop steps after the reference ends.
    pub hold_steps: usize,
    pub noise_std: f64,
    pub trials: usize,
    pub seed: u64,
    pub reach_radius: f64,
    pub q: f64,
    pub q_beta: f64,
    pub phi: f64,
    pub control_weight: f64,
    pub cbf: CbfSpec,
}

impl Default for TrackingSpec {
    fn default() -> Self {
        Self {
            dt: 0.01,
            u_limit: 15.0,
            start: [0.0, 0.0],
            goal: [10.0, 0.0],
            obstacle: Obstacle::new(5.0, 0.5, 0.5),
            steps: 100,
            hold_steps: 200,
            noise_std: 10.0,
            trials: 500,
            seed: 0,
            reach_radius: 1.0,
            q: 1.0,
            q_beta: 1.0,
            phi: 100.0,
            control_weight: 0.01,
            cbf: CbfSpec { alpha_gain: 0.02 },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSpec {
    pub name: String,
    /// Width and height of the arena, anchored at the origin.
    pub arena: [f64; 2],
    pub start: [f64; 2],
    pub goal: [f64; 2],
    pub n_obstacles: usize,
    pub radius_range: [f64; 2],
    /// Minimum gap between the start/goal and every obstacle surface.
    pub clearance: f64,
    /// Width of the free corridor that must connect start and goal.
    pub passage_min: f64,
    pub field_seed: u64,
    pub max_attempts: usize,
    pub reach_radius: f64,
    /// Steps kept running after first entering the reach radius.
    pub settle_steps: usize,
    /// Episode cap; defaults to four times the straight-line time to goal.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
    /// Explicit field, replacing generation.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub obstacles: Option<Vec<Obstacle>>,
    pub tracking: TrackingSpec,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            name: "cluttered".into(),
            arena: [50.0, 50.0],
            start: [2.0, 2.0],
            goal: [48.0, 48.0],
            n_obstacles: 30,
            radius_range: [1.0, 3.0],
            clearance: 2.0,
            passage_min: 2.0,
            field_seed: 0,
            max_attempts: 1000,
            reach_radius: 1.0,
            settle_steps: 40,
            max_steps: None,
            obstacles: None,
            tracking: TrackingSpec::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSpec {
    pub controller: ControllerId,
    pub sigma2: f64,
    pub trials: usize,
    pub seed: u64,
    /// Worker threads; `None` uses the global pool.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    pub sweep: Vec<f64>,
    pub sweep_controllers: Vec<ControllerId>,
    pub write_traces: bool,
    pub cbf: CbfSpec,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            controller: ControllerId::SaRmppi,
            sigma2: 0.0,
            trials: 100,
            seed: 1000,
            threads: None,
            sweep: vec![0.0, 5.0, 10.0, 50.0, 100.0],
            sweep_controllers: vec![ControllerId::SaRmppi, ControllerId::BasMppi],
            write_traces: true,
            cbf: CbfSpec::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub model: ModelSpec,
    pub barrier: BarrierSpec,
    pub cost: CostConfig,
    pub trajopt: TrajOptSpec,
    pub sampler: SamplerSpec,
    pub scenario: ScenarioSpec,
    pub run: RunSpec,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            model: ModelSpec::single_integrator(0.05, 5.0),
            barrier: BarrierSpec::default(),
            cost: CostConfig::default(),
            trajopt: TrajOptSpec::default(),
            sampler: SamplerSpec::default(),
            scenario: ScenarioSpec::default(),
            run: RunSpec::default(),
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.sampler.validate(self.model.m())?;
        let s = &self.scenario;
        let bad = |what: &str| Err(Error::InvalidConfig(what.into()));
        if !(s.clearance > 0.0) {
            return bad("scenario.clearance must be positive");
        }
        if !(s.radius_range[0] > 0.0 && s.radius_range[0] <= s.radius_range[1]) {
            return bad("scenario.radius_range must be positive and ordered");
        }
        if !(s.arena[0] > 0.0 && s.arena[1] > 0.0) {
            return bad("scenario.arena must be positive");
        }
        if self.run.trials == 0 {
            return bad("run.trials must be at least 1");
        }
        self.cost.spec(self.model.n(), &s.goal).validate()
    }
}
