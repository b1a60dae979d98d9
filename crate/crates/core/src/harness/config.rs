use std::f64::consts::PI;
use std::path::Path;

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::control::{ControlGains, ExcitationParams, FormationSpec};
use crate::coop_localization::TopologyGraph;
use crate::estimation::LearningRate;
use crate::geometry::Pose4;
use crate::regression::{ParamMask, RecordPolicy, DEFAULT_HIST_CAP};
use crate::sensing::{stream_rng, NoiseModel, StreamId};
use crate::sim_world::{Saturation, VelocityCommand};

pub const SCHEMA_VERSION: u32 = 1;

/// Top-level scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    pub dt: f64,
    /// Simulated seconds.
    pub duration: f64,
    /// Ground robots: no vertical motion, vertical offset excluded from the
    /// excitation analysis.
    #[serde(default)]
    pub planar: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub noise: NoiseModel,
    #[serde(default)]
    pub gains: ControlGains,
    /// Leader command during stage 2.
    pub leader: LeaderCommand,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    #[serde(default)]
    pub screening: ScreeningConfig,
    pub topology: TopologyConfig,
    #[serde(default)]
    pub robots: Vec<RobotConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub randomize: Option<RandomizeConfig>,
    #[serde(default)]
    pub mode: ModeConfig,
    #[serde(default)]
    pub acceptance: AcceptanceConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeaderCommand {
    pub v_h: f64,
    #[serde(default)]
    pub v_z: f64,
    pub w: f64,
}

impl From<LeaderCommand> for VelocityCommand {
    fn from(c: LeaderCommand) -> Self {
        VelocityCommand::new(c.v_h, c.v_z, c.w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorConfig {
    pub learning_rate: LearningRate,
    pub hist_cap: usize,
    pub excitation_threshold: f64,
    /// Oldest leader broadcast still accepted, in ticks.
    pub broadcast_horizon: u64,
    /// The leader broadcasts its odometry every this many ticks.
    pub leader_broadcast_interval: u64,
    /// Abort when stage 1 lasts longer than this many seconds.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stage1_timeout: Option<f64>,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            learning_rate: LearningRate::Nominal,
            hist_cap: DEFAULT_HIST_CAP,
            excitation_threshold: 0.1,
            broadcast_horizon: 10,
            leader_broadcast_interval: 1,
            stage1_timeout: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScreeningConfig {
    pub enabled: bool,
    pub capacity: usize,
    pub threshold: f64,
}

impl Default for ScreeningConfig {
    fn default() -> Self {
        ScreeningConfig { enabled: true, capacity: 20, threshold: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyGenerator {
    /// Every follower ranges to the leader.
    Star,
    /// Robot `i` ranges to robot `i - 1`.
    Chain,
    /// Robot `i` ranges to robot `(i - 1) / 2`.
    BinaryTree,
}

impl TopologyGenerator {
    pub fn edges(self, count: usize) -> Vec<[usize; 2]> {
        (1..count)
            .map(|i| match self {
                TopologyGenerator::Star => [i, 0],
                TopologyGenerator::Chain => [i, i - 1],
                TopologyGenerator::BinaryTree => [i, (i - 1) / 2],
            })
            .collect()
    }
}

/// Either an explicit list of `[from, to]` ranging edges or a generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub edges: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<TopologyGenerator>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotConfig {
    /// Initial world pose `[x, y, z, yaw]`.
    pub pose: [f64; 4],
    /// Stage-1 helix.
    pub radius: f64,
    #[serde(default)]
    pub c_v: f64,
    pub c_w: f64,
    /// Desired offset from the leader in the leader's odometry frame.
    #[serde(default)]
    pub offset: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gains: Option<ControlGains>,
}

/// Excitation circles whose turn direction follows layer parity and whose
/// yaw-rate band alternates between layers, all at one common speed. Ranging
/// neighbors then circle in opposite directions at clearly different rates
/// and equal speeds, which keeps the data matrix well conditioned.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayeredExcitation {
    pub speed: f64,
    /// `|c_w|` band for even layers; turning counter-clockwise.
    pub even_c_w: [f64; 2],
    /// `|c_w|` band for odd layers; turning clockwise.
    pub odd_c_w: [f64; 2],
}

impl LayeredExcitation {
    fn validate(&self) -> Result<(), HarnessError> {
        let band_ok = |b: [f64; 2]| b[0] > 0.0 && b[0] <= b[1] && b[1].is_finite();
        if !(self.speed > 0.0 && self.speed.is_finite() && band_ok(self.even_c_w) && band_ok(self.odd_c_w)) {
            return Err(invalid("layered excitation needs a positive speed and positive ascending bands"));
        }
        Ok(())
    }

    /// Excitation for a robot on `layer`, with `u` in `[0, 1]` picking the
    /// rate inside the band.
    fn params(&self, layer: usize, u: f64, c_v: f64) -> ExcitationParams {
        let (band, sign) = if layer.is_multiple_of(2) { (self.even_c_w, 1.0) } else { (self.odd_c_w, -1.0) };
        let rate = band[0] + (band[1] - band[0]) * u;
        ExcitationParams { radius: self.speed / rate, c_v, c_w: sign * rate }
    }
}

/// Random initial conditions drawn per seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RandomizeConfig {
    pub count: usize,
    pub position_half_width: f64,
    pub z_half_width: f64,
    pub min_separation: f64,
    /// `r = radius_base + radius_spread * U(-0.5, 0.5)`
    pub radius_base: f64,
    pub radius_spread: f64,
    /// `c_w = c_w_spread * U(-0.5, 0.5)`
    pub c_w_spread: f64,
    /// Replaces the radius and yaw-rate draws with layer-dependent ones.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layered: Option<LayeredExcitation>,
    /// `c_v = U(0, c_v_max)`
    pub c_v_max: f64,
    /// Followers are placed on a circle of this radius around the leader.
    pub offset_spacing: f64,
}

impl Default for RandomizeConfig {
    fn default() -> Self {
        RandomizeConfig {
            count: 2,
            position_half_width: 5.0,
            z_half_width: 0.0,
            min_separation: 1.0,
            radius_base: 2.0,
            radius_spread: 2.0,
            c_w_spread: 4.0,
            layered: None,
            c_v_max: 1.0,
            offset_spacing: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModeConfig {
    /// Feed ground-truth tracking errors to the controller.
    pub truth_feedback: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pe_baseline: Option<PeBaselineConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub saturation: Option<Saturation>,
}

/// Continuous sinusoidal excitation on top of the tracking command, with no
/// separate excitation stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeBaselineConfig {
    pub amplitude: f64,
    /// Hz.
    pub frequency: f64,
}

/// Thresholds checked by `report`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AcceptanceConfig {
    pub convergence_ratio: f64,
    /// Position (m) and heading (rad) tolerance for a settled follower.
    pub tracking_tolerance: f64,
    pub require_tracking: bool,
}

impl Default for AcceptanceConfig {
    fn default() -> Self {
        AcceptanceConfig { convergence_ratio: 0.05, tracking_tolerance: 0.02, require_tracking: true }
    }
}

/// Everything a run needs, with per-seed randomness already drawn.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub dt: f64,
    pub ticks: u64,
    pub planar: bool,
    pub poses: Vec<Pose4>,
    pub excitation: Vec<ExcitationParams>,
    pub gains: Vec<ControlGains>,
    pub formation: FormationSpec,
    pub graph: TopologyGraph,
    pub noise: NoiseModel,
    pub leader: VelocityCommand,
    pub estimator: EstimatorConfig,
    pub screening: ScreeningConfig,
    pub mode: ModeConfig,
    pub acceptance: AcceptanceConfig,
}

impl Scenario {
    pub fn mask(&self) -> ParamMask {
        if self.planar {
            ParamMask::Planar
        } else {
            ParamMask::Spatial
        }
    }

    pub fn policy(&self) -> RecordPolicy {
        RecordPolicy { hist_cap: self.estimator.hist_cap }
    }
}

fn invalid(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: ScenarioConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn robot_count(&self) -> usize {
        match &self.randomize {
            Some(r) => r.count,
            None => self.robots.len(),
        }
    }

    /// Static checks that do not need a seed.
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(invalid(format!(
                "schema_version {} unsupported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(invalid("dt must be positive"));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(invalid("duration must be positive"));
        }
        self.noise.validate().map_err(invalid)?;
        if self.randomize.is_some() && !self.robots.is_empty() {
            return Err(invalid("give either [[robots]] or [randomize], not both"));
        }
        if let Some(l) = self.randomize.as_ref().and_then(|r| r.layered) {
            l.validate()?;
        }
        if self.robot_count() < 2 {
            return Err(invalid("need at least two robots"));
        }
        if self.topology.edges.is_empty() == self.topology.generator.is_none() {
            return Err(invalid("topology needs exactly one of `edges` or `generator`"));
        }
        let e = &self.estimator;
        if e.hist_cap == 0 {
            return Err(invalid("hist_cap must be positive"));
        }
        if !(e.excitation_threshold > 0.0 && e.excitation_threshold <= 1.0) {
            return Err(invalid("excitation_threshold must lie in (0, 1]"));
        }
        if e.leader_broadcast_interval == 0 {
            return Err(invalid("leader_broadcast_interval must be positive"));
        }
        let s = &self.screening;
        if s.capacity == 0 || !(s.threshold > 0.0 && s.threshold < 1.0) {
            return Err(invalid("screening needs capacity > 0 and threshold in (0, 1)"));
        }
        if let Some(pe) = &self.mode.pe_baseline {
            if !(pe.amplitude >= 0.0 && pe.frequency.is_finite()) {
                return Err(invalid("pe_baseline amplitude must be non-negative"));
            }
        }
        self.gains.validate(self.planar)?;
        for r in &self.robots {
            if let Some(g) = &r.gains {
                g.validate(self.planar)?;
            }
            let finite = r.pose.iter().chain(&r.offset).chain(&[r.radius, r.c_v, r.c_w]).all(|x| x.is_finite());
            if !finite {
                return Err(invalid("robot entries must be finite"));
            }
        }
        Ok(())
    }

    /// Draws per-seed quantities and builds the topology.
    pub fn realize(&self, seed: u64) -> Result<Scenario, HarnessError> {
        self.validate()?;
        let robots = match &self.randomize {
            Some(r) => randomize_robots(r, self.planar, seed),
            None => self.robots.clone(),
        };
        let n = robots.len();
        let edges: Vec<(usize, usize)> = match self.topology.generator {
            Some(g) => g.edges(n),
            None => self.topology.edges.clone(),
        }
        .into_iter()
        .map(|[a, b]| (a, b))
        .collect();
        let graph = TopologyGraph::assign_layers(n, &edges)?;

        let planar_z = |v: f64| if self.planar { 0.0 } else { v };
        let poses = robots.iter().map(|r| Pose4::new(r.pose[0], r.pose[1], planar_z(r.pose[2]), r.pose[3])).collect();
        let layered = self.randomize.as_ref().and_then(|r| r.layered.map(|l| (l, r.c_w_spread)));
        let excitation = robots
            .iter()
            .enumerate()
            .map(|(i, r)| match layered {
                // The band position reuses the yaw-rate draw.
                Some((l, spread)) => l.params(graph.layers()[i], (2.0 * r.c_w.abs() / spread).min(1.0), planar_z(r.c_v)),
                None => ExcitationParams { radius: r.radius, c_v: planar_z(r.c_v), c_w: r.c_w },
            })
            .collect();
        let gains = robots.iter().map(|r| r.gains.unwrap_or(self.gains)).collect();
        let offsets = robots.iter().map(|r| Vector3::new(r.offset[0], r.offset[1], planar_z(r.offset[2]))).collect();
        let mut leader: VelocityCommand = self.leader.into();
        leader.v_z = planar_z(leader.v_z);

        Ok(Scenario {
            dt: self.dt,
            ticks: (self.duration / self.dt).round() as u64,
            planar: self.planar,
            poses,
            excitation,
            gains,
            formation: FormationSpec::new(offsets)?,
            graph,
            noise: self.noise,
            leader,
            estimator: self.estimator,
            screening: self.screening,
            mode: self.mode,
            acceptance: self.acceptance,
        })
    }
}

fn randomize_robots(r: &RandomizeConfig, planar: bool, seed: u64) -> Vec<RobotConfig> {
    let mut rng = stream_rng(seed, StreamId::Scenario);
    let mut positions: Vec<[f64; 3]> = Vec::with_capacity(r.count);
    let mut robots = Vec::with_capacity(r.count);
    for i in 0..r.count {
        let mut p = [0.0; 3];
        for _attempt in 0..1000 {
            let x = r.position_half_width * (2.0 * rng.random::<f64>() - 1.0);
            let y = r.position_half_width * (2.0 * rng.random::<f64>() - 1.0);
            let z = r.z_half_width * (2.0 * rng.random::<f64>() - 1.0);
            p = [x, y, if planar { 0.0 } else { z }];
            let clear = positions.iter().all(|q| {
                let d: f64 = p.iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum();
                d.sqrt() >= r.min_separation
            });
            if clear {
                break;
            }
        }
        positions.push(p);
        let yaw = PI * (2.0 * rng.random::<f64>() - 1.0);
        let radius = r.radius_base + r.radius_spread * (rng.random::<f64>() - 0.5);
        let c_w = r.c_w_spread * (rng.random::<f64>() - 0.5);
        let c_v = r.c_v_max * rng.random::<f64>();
        let offset = if i == 0 {
            [0.0; 3]
        } else {
            let a = 2.0 * PI * (i - 1) as f64 / (r.count - 1) as f64;
            [r.offset_spacing * a.cos(), r.offset_spacing * a.sin(), 0.0]
        };
        robots.push(RobotConfig {
            pose: [p[0], p[1], p[2], yaw],
            radius,
            c_v: if planar { 0.0 } else { c_v },
            c_w,
            offset,
            gains: None,
        });
    }
    robots
}

/// Bundled scenarios.
pub mod presets {
    use super::ScenarioConfig;

    pub const TWO_ROBOT: &str = include_str!("../../scenarios/two_robot.toml");
    pub const FOUR_ROBOT_PLANAR: &str = include_str!("../../scenarios/four_robot_planar.toml");
    pub const RANDOM_SWARM: &str = include_str!("../../scenarios/random_swarm.toml");

    /// Two robots in 3D with the excitation parameters of the noise study.
    pub fn two_robot() -> ScenarioConfig {
        ScenarioConfig::from_toml(TWO_ROBOT).expect("bundled scenario is valid")
    }

    /// Leader and three ground robots in a triangle formation.
    pub fn four_robot_planar() -> ScenarioConfig {
        ScenarioConfig::from_toml(FOUR_ROBOT_PLANAR).expect("bundled scenario is valid")
    }

    /// Randomized swarm on a binary-tree ranging graph.
    pub fn random_swarm() -> ScenarioConfig {
        ScenarioConfig::from_toml(RANDOM_SWARM).expect("bundled scenario is valid")
    }
}
