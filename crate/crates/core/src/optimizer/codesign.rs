//! The co-design driver.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::al::{augmented_objective, violations, ALState};
use super::mma::{MmaProblem, MmaSettings, MmaState};
use super::schedule::{
    attraction_params, effective_bounds, grad_window, schedule_pass, volume_relaxation, PassKind, ScheduleConfig,
};
use crate::controller::ControllerParams;
use crate::design::{
    attraction_nudge, binarization_penalties, binarization_penalty_grads, hard_snap, volume_fractions, DesignMatrix,
    Projection, ProjectionConfig, ACTUATOR, SKELETON,
};
use crate::error::{invalid, Error, Result};
use crate::sim::{rollout_grad, GradRequest, Scene};

/// Keeps each edge's solid material fixed while void/solid stays free.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialLock {
    /// Per edge, the solid state (skeleton or actuator) that must win.
    pub dominant: Vec<usize>,
    /// Subtracted from the other solid entry before projecting or snapping.
    pub shift: f64,
}

impl MaterialLock {
    fn nondominant(d: usize) -> usize {
        if d == SKELETON {
            ACTUATOR
        } else {
            SKELETON
        }
    }

    fn validate(&self, num_edges: usize) -> Result<()> {
        if self.dominant.len() != num_edges {
            return invalid("material lock must name one state per edge");
        }
        if self.dominant.iter().any(|&d| d != SKELETON && d != ACTUATOR) {
            return invalid("material lock entries must be skeleton or actuator");
        }
        if !(self.shift >= 0.0) {
            return invalid("material lock shift must be non-negative");
        }
        Ok(())
    }

    /// Design as seen by the projection.
    pub fn shifted(&self, z: &DesignMatrix) -> DesignMatrix {
        let mut out = z.clone();
        for (row, &d) in out.rows.iter_mut().zip(&self.dominant) {
            row[Self::nondominant(d)] -= self.shift;
        }
        out
    }

    /// Restores `z[dom] >= z[nondom]` on every row.
    fn enforce(&self, z: &mut DesignMatrix) {
        for (row, &d) in z.rows.iter_mut().zip(&self.dominant) {
            let nd = Self::nondominant(d);
            if row[nd] > row[d] {
                let m = 0.5 * (row[nd] + row[d]);
                row[nd] = m;
                row[d] = m;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CodesignConfig {
    pub schedule: ScheduleConfig,
    pub projection: ProjectionConfig,
    pub mma: MmaSettings,
    pub adam_lr: f64,
    /// Largest entry of the loss gradient handed to MMA; larger gradients
    /// are rescaled before the penalty terms are added.
    pub design_grad_clip: f64,
    /// Largest Euclidean norm of the controller gradient handed to Adam.
    pub controller_grad_clip: f64,
    pub al_tau0: f64,
    pub al_anneal: f64,
    /// Denominator guard of the orthogonality penalty.
    pub ortho_delta: f64,
    pub freeze_design: bool,
    pub freeze_controller: bool,
    pub material_lock: Option<MaterialLock>,
    pub max_consecutive_divergences: usize,
    pub checkpoint_dir: Option<PathBuf>,
    /// Checkpoint period in iterations; a checkpoint is also written at snap.
    pub checkpoint_every: Option<usize>,
}

impl Default for CodesignConfig {
    fn default() -> Self {
        Self {
            schedule: ScheduleConfig::default(),
            projection: ProjectionConfig::default(),
            mma: MmaSettings::default(),
            adam_lr: 3e-3,
            design_grad_clip: 1.0,
            controller_grad_clip: 1.0,
            al_tau0: 0.3,
            al_anneal: 1.01,
            ortho_delta: 1e-6,
            freeze_design: false,
            freeze_controller: false,
            material_lock: None,
            max_consecutive_divergences: 3,
            checkpoint_dir: None,
            checkpoint_every: None,
        }
    }
}

/// Everything needed to continue a run bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    /// Next iteration to execute.
    pub iter: usize,
    pub z: DesignMatrix,
    pub theta: ControllerParams,
    pub al: ALState,
    pub mma: MmaState,
    pub adam: AdamState,
    pub last_perf_delta: Option<Vec<[f64; 3]>>,
    pub move_scale: f64,
    pub consecutive_divergences: usize,
    pub snapped: bool,
    pub last_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub iter: usize,
    pub pass: PassKind,
    /// Displacement loss `-x_head(T)` of the evaluated rollout.
    pub loss: f64,
    /// Objective the pass minimised (augmented for performance passes).
    pub objective: f64,
    #[serde(rename = "V")]
    pub v: f64,
    #[serde(rename = "V_act")]
    pub v_act: f64,
    pub g_bin: f64,
    pub g_ortho: [f64; 3],
    pub lambda: [f64; 4],
    pub tau: [f64; 4],
    #[serde(rename = "T_grad")]
    pub t_grad: usize,
    #[serde(rename = "delta_V")]
    pub delta_v: f64,
    pub diverged: bool,
    /// The pass left its entity untouched (frozen by an ablation).
    pub frozen: bool,
    pub mma_relaxed: bool,
    pub z_sha256: String,
    pub theta_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub state: OptimizerState,
    pub history: Vec<HistoryRecord>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(f, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        Ok(serde_json::from_reader(f)?)
    }
}

pub fn design_sha256(z: &DesignMatrix) -> String {
    let bytes: Vec<u8> = z.to_flat().iter().flat_map(|v| v.to_le_bytes()).collect();
    crate::controller::hex_digest(&bytes)
}

pub fn write_history_jsonl<W: Write>(history: &[HistoryRecord], mut out: W) -> Result<()> {
    for rec in history {
        serde_json::to_writer(&mut out, rec)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodesignResult {
    pub z: DesignMatrix,
    pub theta: ControllerParams,
    pub history: Vec<HistoryRecord>,
}

/// Step-wise co-design driver. History stays available after an error.
pub struct CodesignRun {
    pub scene: Scene,
    pub cfg: CodesignConfig,
    pub state: OptimizerState,
    pub history: Vec<HistoryRecord>,
}

fn is_sim_failure(e: &Error) -> bool {
    matches!(e, Error::Diverged { .. } | Error::DegenerateGeometry { .. } | Error::NonFiniteGradient { .. })
}

/// Rescales `g` so its largest magnitude is at most `limit`.
fn clip_max_abs(g: &mut [f64], limit: f64, what: &'static str) -> Result<()> {
    if !g.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFiniteGradient { what });
    }
    let m = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if m > limit {
        let s = limit / m;
        g.iter_mut().for_each(|v| *v *= s);
    }
    Ok(())
}

/// Rescales `g` so its Euclidean norm is at most `limit`.
fn clip_norm(g: &mut [f64], limit: f64, what: &'static str) -> Result<()> {
    // scale first so huge entries do not overflow the sum of squares
    if !g.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFiniteGradient { what });
    }
    let m = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if m == 0.0 {
        return Ok(());
    }
    let n = m * g.iter().map(|v| (v / m) * (v / m)).sum::<f64>().sqrt();
    if n > limit {
        let s = limit / n;
        g.iter_mut().for_each(|v| *v *= s);
    }
    Ok(())
}

impl CodesignRun {
    pub fn new(scene: Scene, z0: DesignMatrix, theta0: ControllerParams, cfg: CodesignConfig) -> Result<Self> {
        let ne = scene.lattice.num_edges();
        if z0.len() != ne {
            return invalid(format!("initial design has {} rows for {} edges", z0.len(), ne));
        }
        if z0.rows.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
            return invalid("initial design entries must lie in [0, 1]");
        }
        let mut z0 = z0;
        if let Some(lock) = &cfg.material_lock {
            lock.validate(ne)?;
            lock.enforce(&mut z0);
        }
        let np = theta0.num_params();
        let state = OptimizerState {
            iter: 0,
            z: z0,
            theta: theta0,
            al: ALState::new(cfg.al_tau0, cfg.al_anneal),
            mma: MmaState::new(3 * ne, 4),
            adam: AdamState::new(np, cfg.adam_lr),
            last_perf_delta: None,
            move_scale: 1.0,
            consecutive_divergences: 0,
            snapped: false,
            last_loss: None,
        };
        Self::resume(scene, cfg, Checkpoint { state, history: vec![] })
    }

    pub fn resume(scene: Scene, cfg: CodesignConfig, checkpoint: Checkpoint) -> Result<Self> {
        cfg.schedule.validate()?;
        scene.sim.validate()?;
        if !(cfg.adam_lr > 0.0) || !(cfg.al_tau0 > 0.0) || !(cfg.al_anneal > 1.0) {
            return invalid("adam_lr and al_tau0 must be positive and al_anneal above 1");
        }
        if !(cfg.design_grad_clip > 0.0) || !(cfg.controller_grad_clip > 0.0) {
            return invalid("gradient clip limits must be positive");
        }
        let want = scene.controller_dims(checkpoint.state.theta.hidden);
        if checkpoint.state.theta.dims() != want {
            return invalid(format!(
                "controller dims {:?} do not match scene {:?}",
                checkpoint.state.theta.dims(),
                want
            ));
        }
        Ok(Self { scene, cfg, state: checkpoint.state, history: checkpoint.history })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint { state: self.state.clone(), history: self.history.clone() }
    }

    pub fn is_done(&self) -> bool {
        self.state.iter >= self.cfg.schedule.total_iters
    }

    pub fn run(&mut self) -> Result<()> {
        while !self.is_done() {
            self.step()?;
        }
        Ok(())
    }

    pub fn into_result(self) -> CodesignResult {
        CodesignResult { z: self.state.z, theta: self.state.theta, history: self.history }
    }

    /// Design as the projections see it. The snap bakes the lock into the
    /// one-hot rows, so the shift only applies before it.
    fn effective_z(&self) -> DesignMatrix {
        match &self.cfg.material_lock {
            Some(lock) if !self.state.snapped => lock.shifted(&self.state.z),
            _ => self.state.z.clone(),
        }
    }

    fn performance_projection(&self) -> Projection {
        if self.state.snapped || (self.cfg.freeze_design && self.state.z.is_one_hot()) {
            Projection::Discrete
        } else {
            Projection::Performance { beta: self.cfg.projection.beta }
        }
    }

    fn pass_kind(&self, iter: usize) -> PassKind {
        if self.cfg.freeze_design {
            PassKind::Controller
        } else {
            schedule_pass(iter, &self.cfg.schedule)
        }
    }

    /// Runs one iteration.
    pub fn step(&mut self) -> Result<()> {
        let iter = self.state.iter;
        let sched = self.cfg.schedule;
        if !self.cfg.freeze_design && !self.state.snapped && iter >= sched.snap_iter {
            self.snap();
        }
        let t_grad = grad_window(iter, &sched);
        self.scene.sim.grad_steps = t_grad.min(self.scene.sim.total_steps);
        let pass = self.pass_kind(iter);
        let outcome = match pass {
            PassKind::Controller if self.cfg.freeze_controller => Ok(self.frozen_pass()),
            PassKind::Controller => self.controller_pass(),
            _ => self.design_pass(iter, pass == PassKind::Stability),
        };
        let record = match outcome {
            Ok(mut rec) => {
                self.state.consecutive_divergences = 0;
                rec.iter = iter;
                rec.pass = pass;
                rec.t_grad = t_grad;
                rec.delta_v = volume_relaxation(iter, &sched);
                rec
            }
            Err(e) if is_sim_failure(&e) => {
                self.state.consecutive_divergences += 1;
                self.state.move_scale *= 0.5;
                log::warn!("iteration {iter}: {e}; skipping with move limit scale {}", self.state.move_scale);
                if self.state.consecutive_divergences >= self.cfg.max_consecutive_divergences {
                    let mut rec = self.blank_record(iter, pass, t_grad);
                    rec.diverged = true;
                    self.history.push(rec);
                    return Err(Error::Aborted {
                        iter,
                        count: self.state.consecutive_divergences,
                        reason: e.to_string(),
                    });
                }
                let mut rec = self.blank_record(iter, pass, t_grad);
                rec.diverged = true;
                rec
            }
            Err(e) => return Err(e),
        };
        self.history.push(record);
        self.state.iter += 1;
        if !self.cfg.freeze_design && !self.state.snapped && self.state.iter == sched.total_iters {
            self.snap();
        }
        self.maybe_checkpoint(iter)?;
        Ok(())
    }

    fn snap(&mut self) {
        let z = self.effective_z();
        self.state.z = hard_snap(&z);
        self.state.snapped = true;
        self.state.last_perf_delta = None;
        if let Some(dir) = &self.cfg.checkpoint_dir {
            let path = dir.join(format!("checkpoint_snap_{:04}.json", self.state.iter));
            if let Err(e) = self.checkpoint().save(&path) {
                log::warn!("could not write snap checkpoint {}: {e}", path.display());
            }
        }
    }

    fn maybe_checkpoint(&self, iter: usize) -> Result<()> {
        if let (Some(dir), Some(every)) = (&self.cfg.checkpoint_dir, self.cfg.checkpoint_every) {
            if every > 0 && (iter + 1).is_multiple_of(every) {
                self.checkpoint().save(&dir.join(format!("checkpoint_{:04}.json", iter + 1)))?;
            }
        }
        Ok(())
    }

    fn blank_record(&self, iter: usize, pass: PassKind, t_grad: usize) -> HistoryRecord {
        let (v, v_act, pen) = self.design_metrics();
        let loss = self.state.last_loss.unwrap_or(0.0);
        HistoryRecord {
            iter,
            pass,
            loss,
            objective: loss,
            v,
            v_act,
            g_bin: pen.0,
            g_ortho: pen.1,
            lambda: self.state.al.lambda,
            tau: self.state.al.tau,
            t_grad,
            delta_v: volume_relaxation(iter, &self.cfg.schedule),
            diverged: false,
            frozen: false,
            mma_relaxed: false,
            z_sha256: design_sha256(&self.state.z),
            theta_sha256: self.state.theta.sha256(),
        }
    }

    /// Volume fractions and penalties of the current design under the
    /// performance projection.
    fn design_metrics(&self) -> (f64, f64, (f64, [f64; 3])) {
        let ratios =
            self.performance_projection().project(&self.effective_z()).unwrap_or_else(|_| self.state.z.rows.clone());
        let (v, va) = volume_fractions(&ratios);
        let p = binarization_penalties(&ratios, self.cfg.ortho_delta);
        (v, va, (p.g_bin, p.g_ortho))
    }

    fn frozen_pass(&mut self) -> HistoryRecord {
        let mut rec = self.blank_record(self.state.iter, PassKind::Controller, 0);
        rec.frozen = true;
        rec
    }

    fn controller_pass(&mut self) -> Result<HistoryRecord> {
        let z = self.effective_z();
        let proj = self.performance_projection();
        let req = GradRequest { design: false, controller: true };
        let g = rollout_grad(&self.scene, &z, &proj, &self.state.theta, req)?;
        let mut grad = g.dtheta.to_flat();
        clip_norm(&mut grad, self.cfg.controller_grad_clip, "controller")?;
        let mut flat = self.state.theta.to_flat();
        self.state.adam.step(&mut flat, &grad)?;
        self.state.theta.set_flat(&flat)?;
        self.state.last_loss = Some(g.loss);
        let mut rec = self.blank_record(self.state.iter, PassKind::Controller, 0);
        rec.loss = g.loss;
        rec.objective = g.loss;
        // metrics refer to the evaluated parameters
        let (v, va, pen) = self.design_metrics();
        rec.v = v;
        rec.v_act = va;
        rec.g_bin = pen.0;
        rec.g_ortho = pen.1;
        Ok(rec)
    }

    fn design_pass(&mut self, iter: usize, stability: bool) -> Result<HistoryRecord> {
        let z_eff = self.effective_z();
        let pc = self.cfg.projection;
        let perf_proj = Projection::Performance { beta: pc.beta };
        let proj = if stability {
            Projection::Stability { beta_stab: pc.beta_stab, beta_ste: pc.beta_ste }
        } else {
            perf_proj
        };
        let req = GradRequest { design: true, controller: false };
        let g = rollout_grad(&self.scene, &z_eff, &proj, &self.state.theta, req)?;
        let ne = z_eff.len();

        // Binarization violations always use the performance projection.
        let perf_ratios = perf_proj.project(&z_eff)?;
        let pen = binarization_penalties(&perf_ratios, self.cfg.ortho_delta);
        let viol = violations(&pen.as_array());

        let mut flat_dz: Vec<f64> = g.dz.iter().flatten().copied().collect();
        clip_max_abs(&mut flat_dz, self.cfg.design_grad_clip, "design")?;
        let mut df0 = DesignMatrix::from_flat(&flat_dz).rows;
        let mut objective = g.loss;
        if !stability {
            let (l, dv) = augmented_objective(g.loss, &viol, &self.state.al);
            objective = l;
            let grads = binarization_penalty_grads(&perf_ratios, self.cfg.ortho_delta);
            let mut rbar = vec![[0.0; 3]; ne];
            for k in 0..4 {
                if viol[k] > 0.0 {
                    for e in 0..ne {
                        for s in 0..3 {
                            rbar[e][s] += dv[k] * grads[k][e][s];
                        }
                    }
                }
            }
            let extra = perf_proj.vjp(&z_eff, &rbar);
            for (a, b) in df0.iter_mut().zip(&extra) {
                for s in 0..3 {
                    a[s] += b[s];
                }
            }
        }

        // Volume constraints on the ratios of the active projection.
        let ratios = proj.project(&z_eff)?;
        let (v, va) = volume_fractions(&ratios);
        let bounds = effective_bounds(iter, &self.cfg.schedule);
        let inv = 1.0 / ne as f64;
        let dv_solid = proj.vjp(&z_eff, &vec![[0.0, inv, inv]; ne]);
        let dv_act = proj.vjp(&z_eff, &vec![[0.0, 0.0, inv]; ne]);
        let fval = [v - bounds[1], bounds[0] - v, va - bounds[3], bounds[2] - va];
        let flat = |rows: &[[f64; 3]], sign: f64| rows.iter().flatten().map(|x| sign * x).collect::<Vec<f64>>();
        let mut dfdx = flat(&dv_solid, 1.0);
        dfdx.extend(flat(&dv_solid, -1.0));
        dfdx.extend(flat(&dv_act, 1.0));
        dfdx.extend(flat(&dv_act, -1.0));

        let x = self.state.z.to_flat();
        let (xmin, xmax) = (vec![0.0; x.len()], vec![1.0; x.len()]);
        let df0dx = flat(&df0, 1.0);
        let out = self.state.mma.step(
            &self.cfg.mma,
            &MmaProblem { x: &x, xmin: &xmin, xmax: &xmax, df0dx: &df0dx, fval: &fval, dfdx: &dfdx },
            self.state.move_scale,
        )?;
        if out.relaxed {
            // small slacks are routine while the volume fractions settle
            if out.max_slack > 1e-2 {
                log::warn!("iteration {iter}: MMA subproblem relaxed (max slack {:e})", out.max_slack);
            } else {
                log::debug!("iteration {iter}: MMA subproblem relaxed (max slack {:e})", out.max_slack);
            }
        }
        let delta: Vec<[f64; 3]> = DesignMatrix::from_flat(&out.x)
            .rows
            .iter()
            .zip(&self.state.z.rows)
            .map(|(a, b)| [a[0] - b[0], a[1] - b[1], a[2] - b[2]])
            .collect();
        let applied = if stability {
            let w = self.cfg.schedule.pattern.blend;
            match &self.state.last_perf_delta {
                Some(perf) => {
                    delta.iter().zip(perf).map(|(s, p)| [0, 1, 2].map(|k| w * s[k] + (1.0 - w) * p[k])).collect()
                }
                None => delta,
            }
        } else {
            self.state.last_perf_delta = Some(delta.clone());
            delta
        };
        let mut znew = self.state.z.clone();
        for (e, row) in znew.rows.iter_mut().enumerate() {
            for k in 0..3 {
                row[k] = (row[k] + applied[e][k]).clamp(xmin[3 * e + k], xmax[3 * e + k]);
            }
        }
        if iter >= self.cfg.schedule.attraction_start {
            let (tau_conf, gamma) = attraction_params(iter, &self.cfg.schedule);
            let shifted = match &self.cfg.material_lock {
                Some(lock) => lock.shifted(&znew),
                None => znew.clone(),
            };
            let r = perf_proj.project(&shifted)?;
            znew = attraction_nudge(&znew, &r, tau_conf, gamma);
        }
        if let Some(lock) = &self.cfg.material_lock {
            lock.enforce(&mut znew);
        }
        self.state.al.update(&viol);
        self.state.z = znew;
        self.state.move_scale = 1.0;
        self.state.last_loss = Some(g.loss);

        let mut rec = self.blank_record(iter, PassKind::Performance, 0);
        rec.loss = g.loss;
        rec.objective = objective;
        rec.v = v;
        rec.v_act = va;
        rec.g_bin = pen.g_bin;
        rec.g_ortho = pen.g_ortho;
        rec.mma_relaxed = out.relaxed;
        Ok(rec)
    }
}

/// Runs the full schedule from scratch.
pub fn run_codesign(
    scene: Scene,
    z0: DesignMatrix,
    theta0: ControllerParams,
    cfg: CodesignConfig,
) -> Result<CodesignResult> {
    let mut run = CodesignRun::new(scene, z0, theta0, cfg)?;
    run.run()?;
    Ok(run.into_result())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn max_abs_clip_rescales_uniformly() {
        let mut g = vec![4.0, -2.0, 0.5];
        clip_max_abs(&mut g, 1.0, "t").unwrap();
        assert_eq!(g, vec![1.0, -0.5, 0.125]);
        let mut small = vec![0.25, -0.5];
        clip_max_abs(&mut small, 1.0, "t").unwrap();
        assert_eq!(small, vec![0.25, -0.5]);
        assert!(matches!(clip_max_abs(&mut [1.0, f64::INFINITY], 1.0, "t"), Err(Error::NonFiniteGradient { .. })));
        assert!(clip_max_abs(&mut [f64::NAN, 1.0], 1.0, "t").is_err());
    }

    #[test]
    fn norm_clip_survives_huge_entries() {
        let mut g = vec![3e200, 4e200];
        clip_norm(&mut g, 1.0, "t").unwrap();
        assert!((g[0] - 0.6).abs() < 1e-15 && (g[1] - 0.8).abs() < 1e-15);
        let mut zero = vec![0.0; 3];
        clip_norm(&mut zero, 1.0, "t").unwrap();
        assert_eq!(zero, vec![0.0; 3]);
        assert!(clip_norm(&mut [f64::NAN], 1.0, "t").is_err());
    }
}
