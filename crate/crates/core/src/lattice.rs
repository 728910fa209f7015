//! Truss-lattice geometry and lumped nodal masses.
//!
//! Nodes are laid out row-major from the origin (row 0 is the bottom row), so
//! node `r * cols + c` sits at `origin + spacing * (c, r)`. Edges are ordered
//! as all horizontals, then all verticals, then the rising diagonals of every
//! cell, then the falling diagonals, each group in row-major cell order.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::design::MaterialLibrary;
use crate::error::{invalid, Result};

pub type Vec2 = Vector2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Horizontal,
    Vertical,
    /// Bottom-left to top-right.
    DiagonalUp,
    /// Top-left to bottom-right.
    DiagonalDown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeSpec {
    pub rows: usize,
    pub cols: usize,
    pub spacing: f64,
    pub origin: Vec2,
    pub nodes: Vec<Vec2>,
    pub edges: Vec<(usize, usize)>,
    pub rest_lengths: Vec<f64>,
    pub head_index: usize,
}

/// Mass parameters in kg.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MassParams {
    pub m_eps: f64,
    pub payload_mass: f64,
}

impl Default for MassParams {
    fn default() -> Self {
        Self { m_eps: 1e-6, payload_mass: 0.3 }
    }
}

pub fn expected_edge_count(rows: usize, cols: usize) -> usize {
    (rows - 1) * cols + rows * (cols - 1) + 2 * (rows - 1) * (cols - 1)
}

pub fn build_grid(rows: usize, cols: usize, spacing: f64, origin: Vec2) -> Result<LatticeSpec> {
    if rows < 2 || cols < 2 {
        return invalid(format!("grid must be at least 2x2, got {rows}x{cols}"));
    }
    if !(spacing > 0.0 && spacing.is_finite()) {
        return invalid(format!("spacing must be positive, got {spacing}"));
    }
    let id = |r: usize, c: usize| r * cols + c;
    let mut nodes = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            nodes.push(origin + Vec2::new(c as f64 * spacing, r as f64 * spacing));
        }
    }

    let mut edges = Vec::with_capacity(expected_edge_count(rows, cols));
    for r in 0..rows {
        for c in 0..cols - 1 {
            edges.push((id(r, c), id(r, c + 1)));
        }
    }
    for r in 0..rows - 1 {
        for c in 0..cols {
            edges.push((id(r, c), id(r + 1, c)));
        }
    }
    for r in 0..rows - 1 {
        for c in 0..cols - 1 {
            edges.push((id(r, c), id(r + 1, c + 1)));
        }
    }
    for r in 0..rows - 1 {
        for c in 0..cols - 1 {
            edges.push((id(r, c + 1), id(r + 1, c)));
        }
    }
    let rest_lengths = edges.iter().map(|&(i, j)| (nodes[j] - nodes[i]).norm()).collect();

    Ok(LatticeSpec { rows, cols, spacing, origin, nodes, edges, rest_lengths, head_index: 0 })
}

impl LatticeSpec {
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edge_kind(&self, e: usize) -> EdgeKind {
        let nh = self.rows * (self.cols - 1);
        let nv = (self.rows - 1) * self.cols;
        let nd = (self.rows - 1) * (self.cols - 1);
        if e < nh {
            EdgeKind::Horizontal
        } else if e < nh + nv {
            EdgeKind::Vertical
        } else if e < nh + nv + nd {
            EdgeKind::DiagonalUp
        } else {
            EdgeKind::DiagonalDown
        }
    }

    /// (row, col) of a node.
    pub fn node_cell(&self, n: usize) -> (usize, usize) {
        (n / self.cols, n % self.cols)
    }

    /// Index of the edge joining `a` and `b`, if any.
    pub fn find_edge(&self, a: usize, b: usize) -> Option<usize> {
        let key = (a.min(b), a.max(b));
        self.edges.iter().position(|&(i, j)| (i.min(j), i.max(j)) == key)
    }

    /// Midpoint of an edge in rest configuration.
    pub fn edge_midpoint(&self, e: usize) -> Vec2 {
        let (i, j) = self.edges[e];
        (self.nodes[i] + self.nodes[j]) * 0.5
    }
}

/// Lumped nodal masses from the projected state ratios.
pub fn node_masses(
    lattice: &LatticeSpec,
    ztilde: &[[f64; 3]],
    lib: &MaterialLibrary,
    mp: &MassParams,
) -> Result<Vec<f64>> {
    if ztilde.len() != lattice.num_edges() {
        return invalid(format!(
            "state ratio rows ({}) do not match edge count ({})",
            ztilde.len(),
            lattice.num_edges()
        ));
    }
    let mut masses = vec![mp.m_eps; lattice.num_nodes()];
    masses[lattice.head_index] += mp.payload_mass;
    for (e, &(i, j)) in lattice.edges.iter().enumerate() {
        let half = 0.5 * lattice.rest_lengths[e] * lib.density(&ztilde[e]);
        masses[i] += half;
        masses[j] += half;
    }
    Ok(masses)
}

/// Pulls a mass cotangent back onto the state ratios:
/// `dz[e][k] += (mbar_i + mbar_j) * l0_e * rho_k / 2`.
pub(crate) fn node_masses_vjp(
    lattice: &LatticeSpec,
    lib: &MaterialLibrary,
    mass_bar: &[f64],
    ztilde_bar: &mut [[f64; 3]],
) {
    for (e, &(i, j)) in lattice.edges.iter().enumerate() {
        let s = 0.5 * lattice.rest_lengths[e] * (mass_bar[i] + mass_bar[j]);
        for k in 0..3 {
            ztilde_bar[e][k] += s * lib.psi[k][1];
        }
    }
}
