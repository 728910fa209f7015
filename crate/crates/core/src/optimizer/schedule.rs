//! Iteration schedule: pass dispatch, gradient-window ramp, volume-bound
//! relaxation and attraction annealing.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PassKind {
    Performance,
    Stability,
    Controller,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradRamp {
    pub start: usize,
    pub end: usize,
    pub min: usize,
    pub max: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolumeRelax {
    pub start: usize,
    pub end: usize,
    pub max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PassPattern {
    pub z_passes: usize,
    pub theta_passes: usize,
    /// Every `stability_cadence`-th design pass is a stability pass (0 disables).
    pub stability_cadence: usize,
    /// Weight of the stability update when blended with the last
    /// performance update.
    pub blend: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolumeBounds {
    pub v_min: f64,
    pub v_max: f64,
    pub v_act_min: f64,
    pub v_act_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttractionAnneal {
    pub tau_conf_start: f64,
    pub tau_conf_end: f64,
    pub gamma_start: f64,
    pub gamma_end: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub total_iters: usize,
    pub attraction_start: usize,
    pub snap_iter: usize,
    pub grad_ramp: GradRamp,
    pub vol_relax: VolumeRelax,
    pub pattern: PassPattern,
    pub bounds: VolumeBounds,
    pub attraction: AttractionAnneal,
}

const REFERENCE_ITERS: usize = 300;

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            total_iters: REFERENCE_ITERS,
            attraction_start: 170,
            snap_iter: 240,
            grad_ramp: GradRamp { start: 80, end: 150, min: 2048, max: 4096 },
            vol_relax: VolumeRelax { start: 110, end: 150, max: 0.03 },
            pattern: PassPattern { z_passes: 3, theta_passes: 2, stability_cadence: 3, blend: 0.5 },
            bounds: VolumeBounds { v_min: 0.5, v_max: 0.5, v_act_min: 0.20, v_act_max: 0.22 },
            attraction: AttractionAnneal {
                tau_conf_start: 0.90,
                tau_conf_end: 0.55,
                gamma_start: 0.01,
                gamma_end: 0.05,
            },
        }
    }
}

fn scale(i: usize, total: usize) -> usize {
    ((i as f64) * total as f64 / REFERENCE_ITERS as f64).round() as usize
}

fn lerp_clamped(iter: usize, start: usize, end: usize, a: f64, b: f64) -> f64 {
    if iter <= start {
        a
    } else if iter >= end {
        b
    } else {
        a + (b - a) * (iter - start) as f64 / (end - start) as f64
    }
}

impl ScheduleConfig {
    /// Default schedule with every phase boundary scaled to `total_iters`.
    pub fn scaled(total_iters: usize) -> Self {
        let d = Self::default();
        let s = |i| scale(i, total_iters);
        Self {
            total_iters,
            attraction_start: s(d.attraction_start),
            snap_iter: s(d.snap_iter),
            grad_ramp: GradRamp { start: s(d.grad_ramp.start), end: s(d.grad_ramp.end), ..d.grad_ramp },
            vol_relax: VolumeRelax { start: s(d.vol_relax.start), end: s(d.vol_relax.end), ..d.vol_relax },
            ..d
        }
    }

    /// Same ramp with different window bounds. The driver caps the window
    /// at the rollout length.
    pub fn with_grad_window(mut self, min: usize, max: usize) -> Self {
        self.grad_ramp.min = min;
        self.grad_ramp.max = max;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_iters > 0 && !(self.attraction_start <= self.snap_iter && self.snap_iter <= self.total_iters) {
            return invalid("schedule needs attraction_start <= snap_iter <= total_iters");
        }
        if self.grad_ramp.start > self.grad_ramp.end
            || self.grad_ramp.min > self.grad_ramp.max
            || self.grad_ramp.min == 0
        {
            return invalid("gradient window ramp must be increasing and positive");
        }
        if self.vol_relax.start > self.vol_relax.end || !(self.vol_relax.max >= 0.0) {
            return invalid("volume relaxation must be non-negative over an increasing interval");
        }
        let p = &self.pattern;
        if p.z_passes + p.theta_passes == 0 || !(0.0..=1.0).contains(&p.blend) {
            return invalid("pass pattern needs at least one pass and a blend in [0, 1]");
        }
        let b = &self.bounds;
        if !(0.0 <= b.v_min && b.v_min <= b.v_max && b.v_max <= 1.0)
            || !(0.0 <= b.v_act_min && b.v_act_min <= b.v_act_max && b.v_act_max <= 1.0)
        {
            return invalid("volume bounds must be ordered within [0, 1]");
        }
        Ok(())
    }
}

pub fn schedule_pass(iter: usize, cfg: &ScheduleConfig) -> PassKind {
    if iter >= cfg.snap_iter {
        return PassKind::Controller;
    }
    let p = &cfg.pattern;
    let period = p.z_passes + p.theta_passes;
    let c = iter % period;
    if c >= p.z_passes {
        return PassKind::Controller;
    }
    let z_index = (iter / period) * p.z_passes + c;
    if p.stability_cadence > 0 && (z_index + 1).is_multiple_of(p.stability_cadence) {
        PassKind::Stability
    } else {
        PassKind::Performance
    }
}

pub fn grad_window(iter: usize, cfg: &ScheduleConfig) -> usize {
    let r = &cfg.grad_ramp;
    lerp_clamped(iter, r.start, r.end, r.min as f64, r.max as f64).round() as usize
}

pub fn volume_relaxation(iter: usize, cfg: &ScheduleConfig) -> f64 {
    let r = &cfg.vol_relax;
    lerp_clamped(iter, r.start, r.end, 0.0, r.max)
}

/// `(V_min*, V_max*, V_act_min*, V_act_max*)`, clamped to `[0, 1]`.
pub fn effective_bounds(iter: usize, cfg: &ScheduleConfig) -> [f64; 4] {
    let dv = volume_relaxation(iter, cfg);
    let b = &cfg.bounds;
    [(b.v_min - dv).max(0.0), (b.v_max + dv).min(1.0), (b.v_act_min - dv).max(0.0), (b.v_act_max + dv).min(1.0)]
}

/// `(tau_conf, gamma)` for the attraction nudge at `iter`.
pub fn attraction_params(iter: usize, cfg: &ScheduleConfig) -> (f64, f64) {
    let a = &cfg.attraction;
    (
        lerp_clamped(iter, cfg.attraction_start, cfg.snap_iter, a.tau_conf_start, a.tau_conf_end),
        lerp_clamped(iter, cfg.attraction_start, cfg.snap_iter, a.gamma_start, a.gamma_end),
    )
}
