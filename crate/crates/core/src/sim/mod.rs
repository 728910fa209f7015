//! Differentiable 2D mass-spring dynamics.
//!
//! A step runs the controller on the current state, turns commands into
//! target strains, applies Hooke impulses along every edge, integrates with
//! damped symplectic Euler and resolves ground contact at the time of impact.
//! [`rollout_grad`] replays the stored trajectory backwards to get exact
//! gradients of the final head displacement.

mod export;
mod ground;
mod rollout;

use serde::{Deserialize, Serialize};

use crate::controller::{CpgConfig, GoalSpec};
use crate::design::MaterialLibrary;
use crate::error::{invalid, Error, Result};
use crate::lattice::{LatticeSpec, MassParams, Vec2};

pub use export::{write_trajectory_csv, TrajectorySummary};
pub use ground::{resolve_contact_on, ContactOutcome, Friction, GroundKind, GroundModel, Plane};
pub use rollout::{rollout, rollout_grad, GradRequest, RolloutGrad, RolloutRecord};

pub(crate) use ground::{contact_backward, contact_forward, ContactTrace};

/// Edges with at least this much stiffness are treated as material when
/// checking for collapsed geometry; lighter (void) edges are skipped instead.
pub const MATERIAL_STIFFNESS_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum AdjointStorage {
    /// Keep every state.
    Full,
    /// Keep every `every`-th state and recompute segments during the
    /// backward sweep.
    Checkpoint { every: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub dt: f64,
    pub total_steps: usize,
    pub grad_steps: usize,
    /// Velocity damping rate (1/s).
    pub damping: f64,
    pub gravity: Vec2,
    pub ground: GroundModel,
    pub friction: Friction,
    pub l_min: f64,
    /// Speeds above this count as divergence even while still finite.
    pub max_speed: f64,
    pub storage: AdjointStorage,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.002,
            total_steps: 8192,
            grad_steps: 2048,
            damping: 2.0,
            gravity: Vec2::new(0.0, -9.8),
            ground: GroundModel::default(),
            friction: Friction::Infinite,
            l_min: 1e-6,
            max_speed: 1e4,
            storage: AdjointStorage::Full,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return invalid(format!("dt must be positive, got {}", self.dt));
        }
        if self.total_steps == 0 {
            return invalid("total_steps must be at least 1");
        }
        if self.grad_steps == 0 || self.grad_steps > self.total_steps {
            return invalid(format!("grad_steps must lie in [1, {}], got {}", self.total_steps, self.grad_steps));
        }
        if !(self.damping >= 0.0) {
            return invalid("damping must be non-negative");
        }
        if let Friction::Coulomb { mu } = self.friction {
            if !(mu >= 0.0) {
                return invalid("friction coefficient must be non-negative");
            }
        }
        if !(self.l_min > 0.0) || !(self.max_speed > 0.0) {
            return invalid("l_min and max_speed must be positive");
        }
        if let AdjointStorage::Checkpoint { every: 0 } = self.storage {
            return invalid("checkpoint interval must be positive");
        }
        self.ground.validate()
    }

    pub fn velocity_decay(&self) -> f64 {
        (-self.damping * self.dt).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub x: Vec<Vec2>,
    pub v: Vec<Vec2>,
    pub t: f64,
}

impl SimState {
    pub fn at_rest(positions: &[Vec2]) -> Self {
        Self { x: positions.to_vec(), v: vec![Vec2::zeros(); positions.len()], t: 0.0 }
    }

    pub fn max_speed(&self) -> f64 {
        self.v.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

/// Everything that stays fixed over a rollout apart from design and policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub lattice: LatticeSpec,
    pub lib: MaterialLibrary,
    pub mass: MassParams,
    pub cpg: CpgConfig,
    pub goal: GoalSpec,
    pub sim: SimConfig,
}

impl Scene {
    pub fn new(lattice: LatticeSpec, sim: SimConfig) -> Self {
        Self {
            lattice,
            lib: MaterialLibrary::default(),
            mass: MassParams::default(),
            cpg: CpgConfig::default(),
            goal: GoalSpec::default(),
            sim,
        }
    }

    pub fn initial_state(&self) -> SimState {
        SimState::at_rest(&self.lattice.nodes)
    }

    pub fn controller_dims(&self, hidden: usize) -> (usize, usize, usize) {
        (crate::controller::input_dim(self.cpg.n_cpg, self.lattice.num_nodes()), hidden, self.lattice.num_edges())
    }
}

/// Per-edge axial forces and per-node impulse sums for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeForces {
    pub forces: Vec<f64>,
    pub impulses: Vec<Vec2>,
}

/// Hooke forces along every edge and the impulses they deliver over `dt`.
pub fn edge_forces(
    lattice: &LatticeSpec,
    state: &SimState,
    ratios: &[[f64; 3]],
    lib: &MaterialLibrary,
    eps_target: &[f64],
    cfg: &SimConfig,
) -> Result<EdgeForces> {
    let ne = lattice.num_edges();
    if ratios.len() != ne || eps_target.len() != ne || state.x.len() != lattice.num_nodes() {
        return invalid("edge_forces: inconsistent dimensions");
    }
    let step = (state.t / cfg.dt).round() as usize;
    let mut forces = vec![0.0; ne];
    let mut impulses = vec![Vec2::zeros(); lattice.num_nodes()];
    for (e, &(i, j)) in lattice.edges.iter().enumerate() {
        let k = lib.stiffness(&ratios[e]);
        let d = state.x[j] - state.x[i];
        let l = d.norm();
        if l < cfg.l_min {
            if k > MATERIAL_STIFFNESS_FLOOR {
                return Err(Error::DegenerateGeometry { step, edge: e, length: l });
            }
            continue;
        }
        let lt = lattice.rest_lengths[e] * (1.0 + eps_target[e]);
        let f = k * (l - lt);
        forces[e] = f;
        let j_imp = d * (f * cfg.dt / l);
        impulses[i] += j_imp;
        impulses[j] -= j_imp;
    }
    Ok(EdgeForces { forces, impulses })
}

/// Damped symplectic Euler with contact. Time advances by one `dt`.
pub fn integrate_step(state: &SimState, impulses: &[Vec2], masses: &[f64], cfg: &SimConfig) -> Result<SimState> {
    let n = state.x.len();
    if impulses.len() != n || masses.len() != n || state.v.len() != n {
        return invalid("integrate_step: inconsistent dimensions");
    }
    if masses.iter().any(|&m| !(m > 0.0)) {
        return invalid("masses must be positive");
    }
    let decay = cfg.velocity_decay();
    let mut next = state.clone();
    for i in 0..n {
        let vstar = state.v[i] * decay + impulses[i] / masses[i] + cfg.gravity * cfg.dt;
        let (out, _) = contact_forward(&state.x[i], &vstar, cfg.dt, &cfg.ground, &cfg.friction);
        next.x[i] = out.x_next;
        next.v[i] = out.v_post;
    }
    let step = (state.t / cfg.dt).round() as usize;
    next.t = (step + 1) as f64 * cfg.dt;
    check_state(&next, step, cfg)?;
    Ok(next)
}

pub(crate) fn check_state(state: &SimState, step: usize, cfg: &SimConfig) -> Result<()> {
    let finite = state.x.iter().chain(&state.v).all(|p| p.x.is_finite() && p.y.is_finite());
    let speed = state.max_speed();
    if !finite || !(speed <= cfg.max_speed) {
        return Err(Error::Diverged { step, max_speed: speed });
    }
    Ok(())
}

/// Advances a single node through one step with the configured ground and
/// friction model.
pub fn resolve_contact(x_prev: &Vec2, v_pre: &Vec2, cfg: &SimConfig) -> ContactOutcome {
    resolve_contact_on(x_prev, v_pre, cfg.dt, &cfg.ground, &cfg.friction)
}

/// `-x_head(T)`.
pub fn loss_displacement(record: &RolloutRecord) -> f64 {
    -record.final_state.x[record.head_index].x
}
