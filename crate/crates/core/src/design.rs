//! Relaxed mixed-variable design representation.
//!
//! Every edge carries a raw design row `z = (void, skeleton, actuator)` in
//! `[0, 1]^3`. Physics never sees `z` directly: it is first projected onto
//! state ratios `z~` (rows summing to one) by a sharpened softmax, and all
//! material properties, volume fractions and binarization penalties are
//! functions of those ratios.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub const VOID: usize = 0;
pub const SKELETON: usize = 1;
pub const ACTUATOR: usize = 2;

/// Per-edge raw design rows, edge-ordered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DesignMatrix {
    pub rows: Vec<[f64; 3]>,
}

impl DesignMatrix {
    pub fn new(rows: Vec<[f64; 3]>) -> Self {
        Self { rows }
    }

    pub fn uniform(num_edges: usize) -> Self {
        Self { rows: vec![[1.0 / 3.0; 3]; num_edges] }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn is_one_hot(&self) -> bool {
        self.rows.iter().all(is_one_hot_row)
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.rows.iter().flat_map(|r| r.iter().copied()).collect()
    }

    pub fn from_flat(flat: &[f64]) -> Self {
        Self { rows: flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect() }
    }

    /// Index of the dominant raw entry per row (ties go to the lowest index).
    pub fn argmax_rows(&self) -> Vec<usize> {
        self.rows.iter().map(argmax3).collect()
    }
}

pub fn is_one_hot_row(r: &[f64; 3]) -> bool {
    let ones = r.iter().filter(|&&v| v == 1.0).count();
    let zeros = r.iter().filter(|&&v| v == 0.0).count();
    ones == 1 && zeros == 2
}

pub(crate) fn argmax3(r: &[f64; 3]) -> usize {
    let mut best = 0;
    for k in 1..3 {
        if r[k] > r[best] {
            best = k;
        }
    }
    best
}

/// Material property library. Rows are states (void, skeleton, actuator),
/// columns are (stiffness N/m, linear density kg/m, max actuation strain).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialLibrary {
    pub psi: [[f64; 3]; 3],
}

impl MaterialLibrary {
    /// Builds a library from rows given with densities in g/m.
    pub fn from_grams_per_meter(rows: [[f64; 3]; 3]) -> Result<Self> {
        let mut psi = rows;
        for row in psi.iter_mut() {
            row[1] *= 1e-3;
        }
        let lib = Self { psi };
        lib.validate()?;
        Ok(lib)
    }

    pub fn validate(&self) -> Result<()> {
        for (k, row) in self.psi.iter().enumerate() {
            if !(row[0] > 0.0) || !(row[1] > 0.0) {
                return invalid(format!("state {k}: stiffness and density must be positive"));
            }
            if !(0.0..1.0).contains(&row[2]) {
                return invalid(format!("state {k}: a_max must lie in [0, 1)"));
            }
        }
        if self.psi[VOID][2] != 0.0 || self.psi[SKELETON][2] != 0.0 {
            return invalid("only the actuator state may have a nonzero a_max");
        }
        Ok(())
    }

    pub fn stiffness(&self, zt: &[f64; 3]) -> f64 {
        zt[0] * self.psi[0][0] + zt[1] * self.psi[1][0] + zt[2] * self.psi[2][0]
    }

    pub fn density(&self, zt: &[f64; 3]) -> f64 {
        zt[0] * self.psi[0][1] + zt[1] * self.psi[1][1] + zt[2] * self.psi[2][1]
    }

    pub fn actuator_strain_limit(&self) -> f64 {
        self.psi[ACTUATOR][2]
    }
}

impl Default for MaterialLibrary {
    fn default() -> Self {
        Self::from_grams_per_meter([[1e-7, 1e-5, 0.0], [4e2, 30.0, 0.0], [3e1, 100.0, 0.35]])
            .expect("built-in library is valid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionConfig {
    pub beta: f64,
    pub beta_stab: f64,
    pub beta_ste: f64,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self { beta: 20.0, beta_stab: 500.0, beta_ste: 20.0 }
    }
}

/// Which map takes raw design rows to state ratios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Projection {
    /// Row-wise softmax of `beta * z`.
    Performance { beta: f64 },
    /// Globally centered softmax at `beta_stab`, differentiated as if it
    /// were sharpened by `beta_ste`.
    Stability { beta_stab: f64, beta_ste: f64 },
    /// Rows are used as ratios unchanged (frozen one-hot designs).
    Discrete,
}

impl Projection {
    pub fn project(&self, z: &DesignMatrix) -> Result<Vec<[f64; 3]>> {
        match *self {
            Projection::Performance { beta } => project_performance(z, beta),
            Projection::Stability { beta_stab, beta_ste } => project_stability(z, beta_stab, beta_ste).map(|(r, _)| r),
            Projection::Discrete => {
                check_finite(z)?;
                Ok(z.rows.clone())
            }
        }
    }

    /// Pulls a cotangent on the ratios back to the raw design rows.
    pub fn vjp(&self, z: &DesignMatrix, ratios_bar: &[[f64; 3]]) -> Vec<[f64; 3]> {
        match *self {
            Projection::Performance { beta } => z
                .rows
                .iter()
                .zip(ratios_bar)
                .map(|(row, gb)| softmax_row_vjp(&softmax_row(row, beta), gb, beta))
                .collect(),
            Projection::Stability { beta_ste, .. } => centered_softmax_vjp(z, beta_ste, ratios_bar),
            Projection::Discrete => ratios_bar.to_vec(),
        }
    }
}

fn check_finite(z: &DesignMatrix) -> Result<()> {
    if z.rows.iter().flatten().all(|v| v.is_finite()) {
        Ok(())
    } else {
        invalid("design matrix contains non-finite entries")
    }
}

pub(crate) fn softmax_row(row: &[f64; 3], beta: f64) -> [f64; 3] {
    let m = row[0].max(row[1]).max(row[2]);
    let e = [(beta * (row[0] - m)).exp(), (beta * (row[1] - m)).exp(), (beta * (row[2] - m)).exp()];
    let s = e[0] + e[1] + e[2];
    [e[0] / s, e[1] / s, e[2] / s]
}

fn softmax_row_vjp(s: &[f64; 3], gbar: &[f64; 3], beta: f64) -> [f64; 3] {
    let dot = s[0] * gbar[0] + s[1] * gbar[1] + s[2] * gbar[2];
    [beta * s[0] * (gbar[0] - dot), beta * s[1] * (gbar[1] - dot), beta * s[2] * (gbar[2] - dot)]
}

pub fn project_performance(z: &DesignMatrix, beta: f64) -> Result<Vec<[f64; 3]>> {
    if !(beta > 0.0) {
        return invalid(format!("beta must be positive, got {beta}"));
    }
    check_finite(z)?;
    Ok(z.rows.iter().map(|r| softmax_row(r, beta)).collect())
}

pub fn column_means(z: &DesignMatrix) -> [f64; 3] {
    let n = z.len().max(1) as f64;
    let mut m = [0.0; 3];
    for r in &z.rows {
        for k in 0..3 {
            m[k] += r[k];
        }
    }
    [m[0] / n, m[1] / n, m[2] / n]
}

/// Straight-through rule used to differentiate the stability projection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteRule {
    pub beta_ste: f64,
    pub means: [f64; 3],
}

pub fn project_stability(z: &DesignMatrix, beta_stab: f64, beta_ste: f64) -> Result<(Vec<[f64; 3]>, SteRule)> {
    if !(beta_stab > 0.0) || !(beta_ste > 0.0) {
        return invalid("stability sharpness values must be positive");
    }
    check_finite(z)?;
    let means = column_means(z);
    let rows =
        z.rows.iter().map(|r| softmax_row(&[r[0] - means[0], r[1] - means[1], r[2] - means[2]], beta_stab)).collect();
    Ok((rows, SteRule { beta_ste, means }))
}

fn centered_softmax_vjp(z: &DesignMatrix, beta: f64, ratios_bar: &[[f64; 3]]) -> Vec<[f64; 3]> {
    let means = column_means(z);
    let mut out: Vec<[f64; 3]> = z
        .rows
        .iter()
        .zip(ratios_bar)
        .map(|(r, gb)| {
            let s = softmax_row(&[r[0] - means[0], r[1] - means[1], r[2] - means[2]], beta);
            softmax_row_vjp(&s, gb, beta)
        })
        .collect();
    // centering: d(z - mean)/dz subtracts the column mean of the cotangent
    let cbar = {
        let n = out.len().max(1) as f64;
        let mut m = [0.0; 3];
        for r in &out {
            for k in 0..3 {
                m[k] += r[k];
            }
        }
        [m[0] / n, m[1] / n, m[2] / n]
    };
    for r in out.iter_mut() {
        for k in 0..3 {
            r[k] -= cbar[k];
        }
    }
    out
}

/// Effective per-edge property vector `Psi^T z~` (stiffness, density, a_max).
pub fn interpolate_properties(ratios: &[[f64; 3]], lib: &MaterialLibrary) -> Vec<[f64; 3]> {
    ratios
        .iter()
        .map(|zt| {
            let mut p = [0.0; 3];
            for (h, ph) in p.iter_mut().enumerate() {
                *ph = zt[0] * lib.psi[0][h] + zt[1] * lib.psi[1][h] + zt[2] * lib.psi[2][h];
            }
            p
        })
        .collect()
}

/// Solid (skeleton + actuator) and actuator volume fractions.
pub fn volume_fractions(ratios: &[[f64; 3]]) -> (f64, f64) {
    let n = ratios.len() as f64;
    let solid: f64 = ratios.iter().map(|r| r[SKELETON] + r[ACTUATOR]).sum();
    let act: f64 = ratios.iter().map(|r| r[ACTUATOR]).sum();
    (solid / n, act / n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Penalties {
    pub g_bin: f64,
    /// Pairs (void, skeleton), (void, actuator), (skeleton, actuator).
    pub g_ortho: [f64; 3],
}

impl Penalties {
    pub fn as_array(&self) -> [f64; 4] {
        [self.g_bin, self.g_ortho[0], self.g_ortho[1], self.g_ortho[2]]
    }
}

const PAIRS: [(usize, usize); 3] = [(0, 1), (0, 2), (1, 2)];

pub fn binarization_penalties(ratios: &[[f64; 3]], delta: f64) -> Penalties {
    let n = ratios.len() as f64;
    let mut g_bin = 0.0;
    let mut g_ortho = [0.0; 3];
    for r in ratios {
        g_bin += 1.0 - (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
        for (p, &(k, l)) in PAIRS.iter().enumerate() {
            g_ortho[p] += r[k] * r[l] / (0.5 * (r[k] + r[l]) + delta);
        }
    }
    Penalties { g_bin: g_bin / n, g_ortho: [g_ortho[0] / n, g_ortho[1] / n, g_ortho[2] / n] }
}

/// Gradients of the four binarization penalties w.r.t. the ratios, in the
/// order `[g_bin, g_ortho_01, g_ortho_02, g_ortho_12]`.
pub fn binarization_penalty_grads(ratios: &[[f64; 3]], delta: f64) -> [Vec<[f64; 3]>; 4] {
    let n = ratios.len() as f64;
    let mut out: [Vec<[f64; 3]>; 4] = std::array::from_fn(|_| vec![[0.0; 3]; ratios.len()]);
    for (e, r) in ratios.iter().enumerate() {
        let norm = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
        for k in 0..3 {
            out[0][e][k] = -r[k] / (norm * n);
        }
        for (p, &(k, l)) in PAIRS.iter().enumerate() {
            let d = 0.5 * (r[k] + r[l]) + delta;
            let prod = r[k] * r[l];
            out[p + 1][e][k] = (r[l] / d - 0.5 * prod / (d * d)) / n;
            out[p + 1][e][l] = (r[k] / d - 0.5 * prod / (d * d)) / n;
        }
    }
    out
}

/// Pulls confident rows toward their dominant state: the dominant raw entry
/// gains `gamma`, the other two lose `gamma / 2`, then entries are clamped.
pub fn attraction_nudge(z: &DesignMatrix, ratios: &[[f64; 3]], tau_conf: f64, gamma: f64) -> DesignMatrix {
    let rows = z
        .rows
        .iter()
        .zip(ratios)
        .map(|(row, zt)| {
            let c = argmax3(zt);
            if zt[c] <= tau_conf {
                return *row;
            }
            let mut out = *row;
            for (k, v) in out.iter_mut().enumerate() {
                let step = if k == c { gamma } else { -0.5 * gamma };
                *v = (*v + step).clamp(0.0, 1.0);
            }
            out
        })
        .collect();
    DesignMatrix { rows }
}

/// One-hot of each row's argmax, ties to the lowest state index.
pub fn hard_snap(z: &DesignMatrix) -> DesignMatrix {
    let rows = z
        .rows
        .iter()
        .map(|r| {
            let mut out = [0.0; 3];
            out[argmax3(r)] = 1.0;
            out
        })
        .collect();
    DesignMatrix { rows }
}
