//! Forward rollouts and the reverse sweep.
//!
//! The backward pass recomputes each step's intermediates from the stored
//! state with the same code path as the forward pass, so the replay is bit
//! exact whether states were kept in full or only at checkpoints.

use super::MATERIAL_STIFFNESS_FLOOR;
use super::{check_state, contact_backward, contact_forward, AdjointStorage, ContactTrace, Scene, SimState};
use crate::controller::{assemble_into, cpg_into, input_dim, ControllerParams};
use crate::design::{DesignMatrix, Projection, ACTUATOR};
use crate::error::{invalid, Error, Result};
use crate::lattice::{node_masses, node_masses_vjp, Vec2};

/// Stored trajectory. `states[k]` is the state after `k * stride` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutRecord {
    pub states: Vec<SimState>,
    pub stride: usize,
    pub final_state: SimState,
    pub total_steps: usize,
    pub head_index: usize,
    pub loss: f64,
    /// Node-steps in which a contact was resolved.
    pub contact_events: usize,
    /// Hash of which nodes touched the ground, and whether they slid, at
    /// every step.
    pub contact_signature: u64,
}

impl RolloutRecord {
    pub fn head_displacement(&self) -> f64 {
        self.final_state.x[self.head_index].x - self.states[0].x[self.head_index].x
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GradRequest {
    pub design: bool,
    pub controller: bool,
}

impl Default for GradRequest {
    fn default() -> Self {
        Self { design: true, controller: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutGrad {
    pub loss: f64,
    /// Gradient with respect to the raw design rows.
    pub dz: Vec<[f64; 3]>,
    /// Gradient with respect to the projected ratios.
    pub dratios: Vec<[f64; 3]>,
    pub dtheta: ControllerParams,
    pub record: RolloutRecord,
}

/// Design-dependent constants of a rollout.
struct DesignPhysics {
    stiffness: Vec<f64>,
    act_scale: Vec<f64>,
    masses: Vec<f64>,
}

impl DesignPhysics {
    fn new(scene: &Scene, ratios: &[[f64; 3]]) -> Result<Self> {
        let masses = node_masses(&scene.lattice, ratios, &scene.lib, &scene.mass)?;
        let a_max = scene.lib.actuator_strain_limit();
        Ok(Self {
            stiffness: ratios.iter().map(|r| scene.lib.stiffness(r)).collect(),
            act_scale: ratios.iter().map(|r| r[ACTUATOR] * a_max).collect(),
            masses,
        })
    }
}

/// Intermediates of one step.
struct Tape {
    cpg: Vec<f64>,
    input: Vec<f64>,
    hidden: Vec<f64>,
    u: Vec<f64>,
    len: Vec<f64>,
    dir: Vec<Vec2>,
    target: Vec<f64>,
    force: Vec<f64>,
    skip: Vec<bool>,
    impulse: Vec<Vec2>,
    vstar: Vec<Vec2>,
    contact: Vec<ContactTrace>,
}

impl Tape {
    fn new(scene: &Scene, theta: &ControllerParams) -> Self {
        let ne = scene.lattice.num_edges();
        let nn = scene.lattice.num_nodes();
        Self {
            cpg: vec![0.0; scene.cpg.n_cpg],
            input: vec![0.0; theta.input],
            hidden: vec![0.0; theta.hidden],
            u: vec![0.0; ne],
            len: vec![0.0; ne],
            dir: vec![Vec2::zeros(); ne],
            target: vec![0.0; ne],
            force: vec![0.0; ne],
            skip: vec![false; ne],
            impulse: vec![Vec2::zeros(); nn],
            vstar: vec![Vec2::zeros(); nn],
            contact: vec![ContactTrace::default(); nn],
        }
    }
}

fn check_dims(scene: &Scene, ratios_len: usize, theta: &ControllerParams) -> Result<()> {
    scene.sim.validate()?;
    let ne = scene.lattice.num_edges();
    let nn = scene.lattice.num_nodes();
    if ratios_len != ne {
        return invalid(format!("design has {ratios_len} rows for {ne} edges"));
    }
    let want = (input_dim(scene.cpg.n_cpg, nn), theta.hidden, ne);
    if theta.dims() != want {
        return invalid(format!("controller dims {:?} do not match scene {:?}", theta.dims(), want));
    }
    if theta.to_flat().iter().any(|v| !v.is_finite()) {
        return invalid("controller parameters must be finite");
    }
    Ok(())
}

/// One step from `cur` into `next`, filling `tape`. Returns the number of
/// nodes that touched the ground and folds their branches into `sig`.
fn forward_step(
    scene: &Scene,
    phys: &DesignPhysics,
    theta: &ControllerParams,
    step: usize,
    cur: &SimState,
    tape: &mut Tape,
    next: &mut SimState,
    sig: &mut u64,
) -> Result<usize> {
    let cfg = &scene.sim;
    let lattice = &scene.lattice;
    let dt = cfg.dt;
    cpg_into(cur.t, &scene.cpg, &mut tape.cpg);
    assemble_into(&cur.x, &cur.v, &scene.goal, &tape.cpg, &mut tape.input);
    theta.forward_into(&tape.input, &mut tape.hidden, &mut tape.u);

    for j in tape.impulse.iter_mut() {
        *j = Vec2::zeros();
    }
    for (e, &(i, j)) in lattice.edges.iter().enumerate() {
        let d = cur.x[j] - cur.x[i];
        let l = d.norm();
        tape.len[e] = l;
        if l < cfg.l_min {
            if phys.stiffness[e] > MATERIAL_STIFFNESS_FLOOR {
                return Err(Error::DegenerateGeometry { step, edge: e, length: l });
            }
            tape.skip[e] = true;
            tape.force[e] = 0.0;
            continue;
        }
        tape.skip[e] = false;
        let dir = d / l;
        let lt = lattice.rest_lengths[e] * (1.0 + phys.act_scale[e] * tape.u[e]);
        let f = phys.stiffness[e] * (l - lt);
        tape.dir[e] = dir;
        tape.target[e] = lt;
        tape.force[e] = f;
        let imp = dir * (f * dt);
        tape.impulse[i] += imp;
        tape.impulse[j] -= imp;
    }

    let decay = cfg.velocity_decay();
    let g = cfg.gravity * dt;
    let mut contacts = 0;
    for n in 0..cur.x.len() {
        let vstar = cur.v[n] * decay + tape.impulse[n] / phys.masses[n] + g;
        let (out, trace) = contact_forward(&cur.x[n], &vstar, dt, &cfg.ground, &cfg.friction);
        tape.vstar[n] = vstar;
        tape.contact[n] = trace;
        if trace.hit {
            contacts += 1;
            let code = 1 + trace.sliding as u64;
            for v in [step as u64, n as u64, code] {
                *sig = (*sig ^ v).wrapping_mul(0x100_0000_01b3);
            }
        }
        next.x[n] = out.x_next;
        next.v[n] = out.v_post;
    }
    next.t = (step + 1) as f64 * dt;
    check_state(next, step, cfg)?;
    Ok(contacts)
}

/// Cotangent buffers of the reverse sweep.
struct Adjoint {
    xbar: Vec<Vec2>,
    vbar: Vec<Vec2>,
    jbar: Vec<Vec2>,
    ubar: Vec<f64>,
    input_bar: Vec<f64>,
    a1: Vec<f64>,
    a2: Vec<f64>,
    kbar: Vec<f64>,
    sbar: Vec<f64>,
    mbar: Vec<f64>,
}

/// Pulls `(xbar, vbar)` at step `t + 1` back to step `t`, accumulating the
/// design-constant cotangents and (optionally) the controller gradient.
fn backward_step(
    scene: &Scene,
    phys: &DesignPhysics,
    theta: &ControllerParams,
    cur: &SimState,
    next: &SimState,
    tape: &Tape,
    adj: &mut Adjoint,
    dtheta: Option<&mut ControllerParams>,
) {
    let cfg = &scene.sim;
    let lattice = &scene.lattice;
    let dt = cfg.dt;
    let decay = cfg.velocity_decay();
    let nn = cur.x.len();

    for n in 0..nn {
        let (xb, wb) = contact_backward(
            &tape.vstar[n],
            &next.v[n],
            &tape.contact[n],
            dt,
            &cfg.friction,
            &adj.xbar[n],
            &adj.vbar[n],
        );
        let m = phys.masses[n];
        adj.xbar[n] = xb;
        adj.vbar[n] = wb * decay;
        adj.jbar[n] = wb / m;
        adj.mbar[n] -= tape.impulse[n].dot(&wb) / (m * m);
    }

    for (e, &(i, j)) in lattice.edges.iter().enumerate() {
        adj.ubar[e] = 0.0;
        if tape.skip[e] {
            continue;
        }
        let diff = adj.jbar[i] - adj.jbar[j];
        let dir = tape.dir[e];
        let l = tape.len[e];
        let k = phys.stiffness[e];
        let f = tape.force[e];
        let fbar = dt * dir.dot(&diff);
        let dir_bar = diff * (f * dt);
        adj.kbar[e] += fbar * (l - tape.target[e]);
        let lbar = fbar * k;
        let eps_bar = -fbar * k * lattice.rest_lengths[e];
        adj.ubar[e] = eps_bar * phys.act_scale[e];
        adj.sbar[e] += eps_bar * tape.u[e];
        let dbar = (dir_bar - dir * dir.dot(&dir_bar)) / l + dir * lbar;
        adj.xbar[j] += dbar;
        adj.xbar[i] -= dbar;
    }

    theta.backward_into(
        &tape.input,
        &tape.hidden,
        &tape.u,
        &adj.ubar,
        dtheta,
        &mut adj.a2,
        &mut adj.a1,
        &mut adj.input_bar,
    );
    let off = scene.cpg.n_cpg + 2;
    let pos_bar = &adj.input_bar[off..off + 2 * nn];
    let vel_bar = &adj.input_bar[off + 2 * nn..off + 4 * nn];
    let mut mean = Vec2::zeros();
    for n in 0..nn {
        mean += Vec2::new(pos_bar[2 * n], pos_bar[2 * n + 1]);
    }
    mean /= nn as f64;
    for n in 0..nn {
        adj.xbar[n] += Vec2::new(pos_bar[2 * n], pos_bar[2 * n + 1]) - mean;
        adj.vbar[n] += Vec2::new(vel_bar[2 * n], vel_bar[2 * n + 1]);
    }
}

fn stride_of(scene: &Scene) -> usize {
    match scene.sim.storage {
        AdjointStorage::Full => 1,
        AdjointStorage::Checkpoint { every } => every,
    }
}

fn run_forward(
    scene: &Scene,
    phys: &DesignPhysics,
    theta: &ControllerParams,
    tape: &mut Tape,
) -> Result<RolloutRecord> {
    let total = scene.sim.total_steps;
    let stride = stride_of(scene);
    let mut cur = scene.initial_state();
    let mut next = cur.clone();
    let mut states = Vec::with_capacity(total / stride + 1);
    states.push(cur.clone());
    let mut contact_events = 0;
    let mut sig = 0xcbf2_9ce4_8422_2325u64;
    for step in 0..total {
        contact_events += forward_step(scene, phys, theta, step, &cur, tape, &mut next, &mut sig)?;
        std::mem::swap(&mut cur, &mut next);
        if (step + 1) % stride == 0 {
            states.push(cur.clone());
        }
    }
    let head_index = scene.lattice.head_index;
    let loss = -cur.x[head_index].x;
    Ok(RolloutRecord {
        states,
        stride,
        final_state: cur,
        total_steps: total,
        head_index,
        loss,
        contact_events,
        contact_signature: sig,
    })
}

/// Simulates `total_steps` steps with the given state ratios.
pub fn rollout(scene: &Scene, ratios: &[[f64; 3]], theta: &ControllerParams) -> Result<RolloutRecord> {
    check_dims(scene, ratios.len(), theta)?;
    let phys = DesignPhysics::new(scene, ratios)?;
    let mut tape = Tape::new(scene, theta);
    run_forward(scene, &phys, theta, &mut tape)
}

/// Loss `-x_head(T)` and its gradients, backpropagated through the last
/// `grad_steps` steps only.
pub fn rollout_grad(
    scene: &Scene,
    z: &DesignMatrix,
    projection: &Projection,
    theta: &ControllerParams,
    request: GradRequest,
) -> Result<RolloutGrad> {
    let ratios = projection.project(z)?;
    check_dims(scene, ratios.len(), theta)?;
    let phys = DesignPhysics::new(scene, &ratios)?;
    let mut tape = Tape::new(scene, theta);
    let record = run_forward(scene, &phys, theta, &mut tape)?;

    let nn = scene.lattice.num_nodes();
    let ne = scene.lattice.num_edges();
    let mut adj = Adjoint {
        xbar: vec![Vec2::zeros(); nn],
        vbar: vec![Vec2::zeros(); nn],
        jbar: vec![Vec2::zeros(); nn],
        ubar: vec![0.0; ne],
        input_bar: vec![0.0; theta.input],
        a1: vec![0.0; theta.hidden],
        a2: vec![0.0; ne],
        kbar: vec![0.0; ne],
        sbar: vec![0.0; ne],
        mbar: vec![0.0; nn],
    };
    adj.xbar[scene.lattice.head_index].x = -1.0;
    let mut dtheta = ControllerParams::zeros(theta.input, theta.hidden, theta.output);

    let total = scene.sim.total_steps;
    let first = total - scene.sim.grad_steps;
    let stride = record.stride;
    // Replay segment by segment, newest first.
    let mut seg_end = total;
    let mut segment: Vec<SimState> = Vec::with_capacity(stride + 1);
    let mut scratch = scene.initial_state();
    let mut sig = 0u64;
    while seg_end > first {
        let seg_start = ((seg_end - 1) / stride) * stride;
        segment.clear();
        segment.push(record.states[seg_start / stride].clone());
        for step in seg_start..seg_end {
            let cur = segment.last().unwrap();
            forward_step(scene, &phys, theta, step, cur, &mut tape, &mut scratch, &mut sig)?;
            segment.push(scratch.clone());
        }
        for step in (seg_start.max(first)..seg_end).rev() {
            let local = step - seg_start;
            let (cur, next) = (&segment[local], &segment[local + 1]);
            forward_step(scene, &phys, theta, step, cur, &mut tape, &mut scratch, &mut sig)?;
            let g = if request.controller { Some(&mut dtheta) } else { None };
            backward_step(scene, &phys, theta, cur, next, &tape, &mut adj, g);
        }
        seg_end = seg_start;
    }

    let mut dratios = vec![[0.0; 3]; ne];
    let dz = if request.design {
        let a_max = scene.lib.actuator_strain_limit();
        for e in 0..ne {
            for k in 0..3 {
                dratios[e][k] += adj.kbar[e] * scene.lib.psi[k][0];
            }
            dratios[e][ACTUATOR] += adj.sbar[e] * a_max;
        }
        node_masses_vjp(&scene.lattice, &scene.lib, &adj.mbar, &mut dratios);
        projection.vjp(z, &dratios)
    } else {
        vec![[0.0; 3]; ne]
    };
    Ok(RolloutGrad { loss: record.loss, dz, dratios, dtheta, record })
}
