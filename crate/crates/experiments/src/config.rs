//! Scenario configuration: a single JSON document per run.
//!
//! Every field has a default, so `{}` is a valid config describing the
//! flat-ground, stability-heuristic, full co-design run on a 6x6 grid.

use std::path::Path;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use trussbot::lattice::{build_grid, LatticeSpec, Vec2};
use trussbot::optimizer::{CodesignConfig, ScheduleConfig, VolumeBounds};
use trussbot::sim::{Friction, GroundModel, Scene, SimConfig};

use crate::{ExperimentError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum InitHeuristic {
    /// Every row `[1/3, 1/3, 1/3]`.
    Uniform,
    /// Uniform plus a void bias growing linearly with edge height.
    Stability,
    /// Uniform, except edges void in the baseline get a strong void bias.
    ThreeLegged,
    /// The fixed three-legged baseline, one-hot.
    BaselineFixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Node rows.
    pub rows: usize,
    /// Node columns.
    pub cols: usize,
    /// Node spacing in metres.
    pub spacing: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { rows: 6, cols: 6, spacing: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct HeuristicParams {
    /// Void-ratio shift at the topmost edge for the stability heuristic.
    pub stability_shift: f64,
    /// Void bias added before renormalising, for the three-legged heuristic.
    pub three_legged_bias: f64,
}

impl Default for HeuristicParams {
    fn default() -> Self {
        Self { stability_shift: 0.12, three_legged_bias: 0.4 }
    }
}

/// Which design entities the optimizer may change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct AblationFlags {
    pub topology: bool,
    pub material: bool,
    pub control: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        Self { topology: true, material: true, control: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GroundConfig {
    /// Horizontal ground at `height`.
    Flat {
        #[serde(default)]
        height: f64,
    },
    /// Flat up to `pivot_x`, then rising at `angle_deg`.
    Incline {
        #[serde(default)]
        height: f64,
        #[serde(default = "default_incline_angle")]
        angle_deg: f64,
        #[serde(default = "default_pivot")]
        pivot_x: f64,
    },
}

fn default_incline_angle() -> f64 {
    15.0
}

fn default_pivot() -> f64 {
    0.8
}

impl Default for GroundConfig {
    fn default() -> Self {
        GroundConfig::Flat { height: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
#[derive(Default)]
pub enum FrictionConfig {
    /// Contacting nodes stop dead.
    #[default]
    Infinite,
    /// Inelastic normal response with Coulomb sliding.
    Coulomb {
        #[serde(default = "default_mu")]
        mu: f64,
    },
}

fn default_mu() -> f64 {
    2.5
}


#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct Environment {
    pub ground: GroundConfig,
    pub friction: FrictionConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct Budgets {
    pub v_min: f64,
    pub v_max: f64,
    pub v_act_min: f64,
    pub v_act_max: f64,
    /// Optimizer iterations; phase boundaries scale with this.
    pub iterations: usize,
    /// Rollout length in steps.
    pub total_steps: usize,
    /// Step size in seconds.
    pub dt: f64,
    /// Backpropagation window at the start and end of its ramp, capped at
    /// `total_steps`.
    pub grad_window: [usize; 2],
}

impl Default for Budgets {
    fn default() -> Self {
        let b = ScheduleConfig::default().bounds;
        Self {
            v_min: b.v_min,
            v_max: b.v_max,
            v_act_min: b.v_act_min,
            v_act_max: b.v_act_max,
            iterations: 300,
            total_steps: 8192,
            dt: 0.002,
            grad_window: [2048, 4096],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct Physics {
    /// Velocity damping rate in 1/s.
    pub damping: f64,
    /// Extra mass on the head node in kg.
    pub payload_mass: f64,
    /// Hidden width of the controller.
    pub hidden: usize,
}

impl Default for Physics {
    fn default() -> Self {
        Self { damping: 2.0, payload_mass: 0.3, hidden: 32 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerKnobs {
    pub adam_lr: f64,
    /// Constant taken off the non-dominant solid entry when material is frozen.
    pub material_shift: f64,
    /// Lower topology volume bound that holds a filled topology in place.
    pub filled_v_min: f64,
    /// Checkpoint period in iterations (0 disables periodic checkpoints).
    pub checkpoint_every: usize,
}

impl Default for OptimizerKnobs {
    fn default() -> Self {
        Self { adam_lr: 3e-3, material_shift: 0.05, filled_v_min: 0.90, checkpoint_every: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Label copied into the metrics.
    pub name: String,
    /// Seeds the controller initialisation.
    pub seed: u64,
    pub grid: GridConfig,
    pub init_heuristic: InitHeuristic,
    pub heuristic: HeuristicParams,
    pub ablation: AblationFlags,
    pub environment: Environment,
    /// Goal position in metres, fed to the controller.
    pub goal: [f64; 2],
    /// Initial position of the head (bottom-left) node in metres.
    pub head_offset: [f64; 2],
    pub budgets: Budgets,
    pub physics: Physics,
    pub optimizer: OptimizerKnobs,
    /// Steps between rendered frames (0 skips rendering).
    pub render_stride: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            name: "flat_stability".into(),
            seed: 0,
            grid: GridConfig::default(),
            init_heuristic: InitHeuristic::Stability,
            heuristic: HeuristicParams::default(),
            ablation: AblationFlags::default(),
            environment: Environment::default(),
            goal: [2.0, 0.1],
            head_offset: [0.1, 0.0],
            budgets: Budgets::default(),
            physics: Physics::default(),
            optimizer: OptimizerKnobs::default(),
            render_stride: 512,
        }
    }
}

fn bad<T>(msg: impl Into<String>) -> Result<T> {
    Err(ExperimentError::Config(msg.into()))
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self =
            serde_json::from_str(&text).map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.init_heuristic == InitHeuristic::BaselineFixed && (self.ablation.topology || self.ablation.material) {
            return bad("baseline_fixed keeps topology and material fixed; set ablation.topology and ablation.material to false");
        }
        if self.grid.rows < 3 || self.grid.cols < 3 {
            return bad("grid needs at least 3x3 nodes");
        }
        if !(self.budgets.iterations > 0 || !self.optimizes_anything()) {
            return bad("iterations must be positive when something is optimized");
        }
        let [g0, g1] = self.budgets.grad_window;
        if g0 == 0 || g0 > g1 {
            return bad("grad_window must be [min, max] with 0 < min <= max");
        }
        let h = &self.heuristic;
        if !(0.0..1.0).contains(&h.stability_shift) || !(h.three_legged_bias >= 0.0) {
            return bad("heuristic shifts must be non-negative (stability_shift below 1)");
        }
        let k = &self.optimizer;
        if !(k.material_shift >= 0.0) || !(0.0..=1.0).contains(&k.filled_v_min) {
            return bad("material_shift must be non-negative and filled_v_min within [0, 1]");
        }
        if !(self.physics.payload_mass >= 0.0) || self.physics.hidden == 0 {
            return bad("payload_mass must be non-negative and hidden positive");
        }
        self.sim_config().validate().map_err(|e| ExperimentError::Config(e.to_string()))?;
        self.codesign_config(None).schedule.validate().map_err(|e| ExperimentError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn optimizes_anything(&self) -> bool {
        let a = self.ablation;
        a.topology || a.material || a.control
    }

    pub fn lattice(&self) -> Result<LatticeSpec> {
        let g = &self.grid;
        Ok(build_grid(g.rows, g.cols, g.spacing, Vec2::new(self.head_offset[0], self.head_offset[1]))?)
    }

    pub fn sim_config(&self) -> SimConfig {
        let b = &self.budgets;
        let ground = match self.environment.ground {
            GroundConfig::Flat { height } => GroundModel::flat(height),
            GroundConfig::Incline { height, angle_deg, pivot_x } => GroundModel::incline(height, angle_deg, pivot_x),
        };
        let friction = match self.environment.friction {
            FrictionConfig::Infinite => Friction::Infinite,
            FrictionConfig::Coulomb { mu } => Friction::Coulomb { mu },
        };
        SimConfig {
            dt: b.dt,
            total_steps: b.total_steps,
            grad_steps: b.grad_window[0].min(b.total_steps),
            damping: self.physics.damping,
            ground,
            friction,
            ..SimConfig::default()
        }
    }

    pub fn scene(&self) -> Result<Scene> {
        let mut scene = Scene::new(self.lattice()?, self.sim_config());
        scene.mass.payload_mass = self.physics.payload_mass;
        scene.goal.x_goal = Vec2::new(self.goal[0], self.goal[1]);
        Ok(scene)
    }

    /// Optimizer settings before any ablation is applied.
    pub fn codesign_config(&self, checkpoint_dir: Option<&Path>) -> CodesignConfig {
        let b = &self.budgets;
        let mut schedule = ScheduleConfig::scaled(b.iterations).with_grad_window(b.grad_window[0], b.grad_window[1]);
        schedule.bounds =
            VolumeBounds { v_min: b.v_min, v_max: b.v_max, v_act_min: b.v_act_min, v_act_max: b.v_act_max };
        let every = self.optimizer.checkpoint_every;
        CodesignConfig {
            schedule,
            adam_lr: self.optimizer.adam_lr,
            checkpoint_dir: checkpoint_dir.map(Path::to_path_buf),
            checkpoint_every: (every > 0).then_some(every),
            ..CodesignConfig::default()
        }
    }
}

/// JSON schema of [`ScenarioConfig`], with defaults and field docs.
pub fn config_schema() -> String {
    let schema = schemars::schema_for!(ScenarioConfig);
    serde_json::to_string_pretty(&schema).expect("schema serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_default() {
        let cfg: ScenarioConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, ScenarioConfig::default());
        cfg.validate().unwrap();
    }

    #[test]
    fn round_trips_through_json() {
        let mut cfg = ScenarioConfig::default();
        cfg.environment.friction = FrictionConfig::Coulomb { mu: 2.5 };
        cfg.environment.ground = GroundConfig::Incline { height: 0.0, angle_deg: 15.0, pivot_x: 0.8 };
        let back: ScenarioConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(serde_json::from_str::<ScenarioConfig>(r#"{"grid": {"rowz": 3}}"#).is_err());
    }

    #[test]
    fn baseline_requires_frozen_design() {
        let cfg = ScenarioConfig { init_heuristic: InitHeuristic::BaselineFixed, ..Default::default() };
        assert!(matches!(cfg.validate(), Err(ExperimentError::Config(_))));
        let ok = ScenarioConfig {
            init_heuristic: InitHeuristic::BaselineFixed,
            ablation: AblationFlags { topology: false, material: false, control: true },
            ..Default::default()
        };
        ok.validate().unwrap();
    }

    #[test]
    fn scene_carries_environment() {
        let mut cfg = ScenarioConfig::default();
        cfg.environment.friction = FrictionConfig::Coulomb { mu: 2.5 };
        cfg.environment.ground = GroundConfig::Incline { height: 0.0, angle_deg: 15.0, pivot_x: 0.8 };
        let scene = cfg.scene().unwrap();
        assert_eq!(scene.sim.friction, Friction::Coulomb { mu: 2.5 });
        assert_eq!(scene.sim.ground.angle_deg, 15.0);
        assert_eq!(scene.lattice.nodes[0], Vec2::new(0.1, 0.0));
        assert_eq!(scene.goal.x_goal, Vec2::new(2.0, 0.1));
    }
}
