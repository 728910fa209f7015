//! Independent oracles: central finite differences and a fine-step
//! reference integrator for a two-node spring.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoordinateSample {
    All,
    Indices(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FDConfig {
    pub h: f64,
    pub sample: CoordinateSample,
}

impl FDConfig {
    pub fn all(h: f64) -> Self {
        Self { h, sample: CoordinateSample::All }
    }

    pub fn indices(h: f64, idx: Vec<usize>) -> Self {
        Self { h, sample: CoordinateSample::Indices(idx) }
    }
}

/// Central-difference estimates `(index, df/dx_index)` for each sampled
/// coordinate, in sample order.
pub fn finite_diff_grad<F>(mut f: F, x0: &[f64], cfg: &FDConfig) -> Result<Vec<(usize, f64)>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(cfg.h > 0.0) {
        return invalid(format!("finite-difference step must be positive, got {}", cfg.h));
    }
    let idx: Vec<usize> = match &cfg.sample {
        CoordinateSample::All => (0..x0.len()).collect(),
        CoordinateSample::Indices(v) => v.clone(),
    };
    let mut x = x0.to_vec();
    let mut out = Vec::with_capacity(idx.len());
    for i in idx {
        if i >= x0.len() {
            return invalid(format!("coordinate {i} out of range for {} parameters", x0.len()));
        }
        x[i] = x0[i] + cfg.h;
        let fp = f(&x)?;
        x[i] = x0[i] - cfg.h;
        let fm = f(&x)?;
        x[i] = x0[i];
        if !fp.is_finite() || !fm.is_finite() {
            return invalid(format!("objective is not finite around coordinate {i}"));
        }
        out.push((i, (fp - fm) / (2.0 * cfg.h)));
    }
    Ok(out)
}

/// `|a - b| / max(|a|, |b|, floor)`. The floor keeps near-zero components
/// from dominating a comparison.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Two point masses joined by one linear spring, free of gravity and ground.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpringSystem {
    pub k: f64,
    pub rest_length: f64,
    pub masses: [f64; 2],
    pub x: [[f64; 2]; 2],
    pub v: [[f64; 2]; 2],
    pub damping: f64,
}

impl SpringSystem {
    pub fn angular_frequency(&self) -> f64 {
        (self.k * (1.0 / self.masses[0] + 1.0 / self.masses[1])).sqrt()
    }

    pub fn length(&self) -> f64 {
        let dx = self.x[1][0] - self.x[0][0];
        let dy = self.x[1][1] - self.x[0][1];
        (dx * dx + dy * dy).sqrt()
    }

    pub fn energy(&self) -> f64 {
        let kin: f64 = (0..2).map(|i| 0.5 * self.masses[i] * (self.v[i][0].powi(2) + self.v[i][1].powi(2))).sum();
        kin + 0.5 * self.k * (self.length() - self.rest_length).powi(2)
    }
}

/// Integrates the same damped symplectic-Euler dynamics as the simulator at
/// step `dt_fine`, returning `steps + 1` snapshots starting with `system`.
pub fn reference_integrate(system: &SpringSystem, dt_fine: f64, steps: usize) -> Result<Vec<SpringSystem>> {
    if !(dt_fine > 0.0) {
        return invalid("dt_fine must be positive");
    }
    let decay = (-system.damping * dt_fine).exp();
    let mut s = *system;
    let mut out = Vec::with_capacity(steps + 1);
    out.push(s);
    for _ in 0..steps {
        let dx = s.x[1][0] - s.x[0][0];
        let dy = s.x[1][1] - s.x[0][1];
        let l = (dx * dx + dy * dy).sqrt();
        let (fx, fy) = if l > 0.0 {
            let f = s.k * (l - s.rest_length);
            (f * dx / l, f * dy / l)
        } else {
            (0.0, 0.0)
        };
        let force = [[fx, fy], [-fx, -fy]];
        for i in 0..2 {
            for c in 0..2 {
                s.v[i][c] = decay * s.v[i][c] + force[i][c] * dt_fine / s.masses[i];
                s.x[i][c] += s.v[i][c] * dt_fine;
            }
        }
        out.push(s);
    }
    Ok(out)
}
