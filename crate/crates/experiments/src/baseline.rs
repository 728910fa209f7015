//! Three-legged baseline with vertical actuators and passive braces.
//!
//! The layout is built greedily from a fixed priority list so that it
//! exists for any grid: leg verticals become actuators, more verticals are
//! added above the legs until the actuator budget is met, then skeleton
//! edges fill the body and brace the legs until the topology budget is met.
//! The 6x6 result ships as `data/baseline_6x6.json` and is loaded from
//! there, so the layout stays fixed even if the builder changes.

use serde::{Deserialize, Serialize};

use trussbot::design::{DesignMatrix, ACTUATOR, SKELETON, VOID};
use trussbot::lattice::{EdgeKind, LatticeSpec};
use trussbot::optimizer::{ScheduleConfig, VolumeBounds};

use crate::{ExperimentError, Result};

const SHIPPED_6X6: &str = include_str!("../data/baseline_6x6.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    LegActuator,
    BodyActuator,
    BodyHorizontal,
    LegBrace,
    BodyBrace,
    LegHorizontal,
    BodyVertical,
    BodyCounterBrace,
    Void,
}

impl Role {
    pub fn state(self) -> usize {
        match self {
            Role::LegActuator | Role::BodyActuator => ACTUATOR,
            Role::Void => VOID,
            _ => SKELETON,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaselineEdge {
    pub edge: usize,
    pub nodes: [usize; 2],
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineLayout {
    pub rows: usize,
    pub cols: usize,
    /// Cell rows occupied by the legs, counted from the ground.
    pub leg_rows: usize,
    /// Left cell column of each leg.
    pub leg_cells: Vec<usize>,
    pub edges: Vec<BaselineEdge>,
}

impl BaselineLayout {
    pub fn design(&self) -> DesignMatrix {
        DesignMatrix::new(
            self.edges
                .iter()
                .map(|e| {
                    let mut r = [0.0; 3];
                    r[e.role.state()] = 1.0;
                    r
                })
                .collect(),
        )
    }

    pub fn count(&self, state: usize) -> usize {
        self.edges.iter().filter(|e| e.role.state() == state).count()
    }

    /// JSON with one edge per line, the format of the shipped data file.
    pub fn to_json(&self) -> String {
        let edges: Vec<String> =
            self.edges.iter().map(|e| format!("    {}", serde_json::to_string(e).expect("edge serializes"))).collect();
        format!(
            "{{\n  \"rows\": {},\n  \"cols\": {},\n  \"leg_rows\": {},\n  \"leg_cells\": {:?},\n  \"edges\": [\n{}\n  ]\n}}\n",
            self.rows,
            self.cols,
            self.leg_rows,
            self.leg_cells,
            edges.join(",\n")
        )
    }

    /// One line per role with its edge count.
    pub fn describe(&self) -> String {
        let mut out = format!(
            "{}x{} baseline: legs {} cells tall at cell columns {:?}; {} actuators, {} skeleton, {} void\n",
            self.rows,
            self.cols,
            self.leg_rows,
            self.leg_cells,
            self.count(ACTUATOR),
            self.count(SKELETON),
            self.count(VOID)
        );
        for role in [
            Role::LegActuator,
            Role::BodyActuator,
            Role::BodyHorizontal,
            Role::LegBrace,
            Role::BodyBrace,
            Role::LegHorizontal,
            Role::BodyVertical,
            Role::BodyCounterBrace,
        ] {
            let ids: Vec<usize> = self.edges.iter().filter(|e| e.role == role).map(|e| e.edge).collect();
            if !ids.is_empty() {
                out.push_str(&format!("  {role:?}: {ids:?}\n"));
            }
        }
        out
    }
}

/// The baseline for `lattice` with the default volume budgets.
pub fn build_baseline(lattice: &LatticeSpec) -> Result<(DesignMatrix, String)> {
    let layout = if (lattice.rows, lattice.cols) == (6, 6) {
        shipped_6x6(lattice)?
    } else {
        generate_baseline(lattice, &ScheduleConfig::default().bounds)?
    };
    Ok((layout.design(), layout.describe()))
}

fn shipped_6x6(lattice: &LatticeSpec) -> Result<BaselineLayout> {
    let layout: BaselineLayout = serde_json::from_str(SHIPPED_6X6)?;
    let matches = layout.edges.len() == lattice.num_edges()
        && layout.edges.iter().all(|e| lattice.edges[e.edge] == (e.nodes[0], e.nodes[1]));
    if !matches {
        return Err(ExperimentError::Config("shipped 6x6 baseline does not match the lattice edge order".into()));
    }
    Ok(layout)
}

fn edge_cell(lattice: &LatticeSpec, e: usize) -> (usize, usize) {
    let (i, j) = lattice.edges[e];
    let (ri, ci) = lattice.node_cell(i);
    let (rj, cj) = lattice.node_cell(j);
    (ri.min(rj), ci.min(cj))
}

/// Runs the greedy construction for any grid of at least 3x3 nodes.
pub fn generate_baseline(lattice: &LatticeSpec, bounds: &VolumeBounds) -> Result<BaselineLayout> {
    let (rows, cols) = (lattice.rows, lattice.cols);
    if rows < 3 || cols < 3 {
        return Err(ExperimentError::Config(format!("baseline needs a grid of at least 3x3 nodes, got {rows}x{cols}")));
    }
    let ne = lattice.num_edges();
    let leg_rows = (rows - 1).div_ceil(2);
    let mut leg_cells = vec![0, (cols - 2) / 2, cols - 2];
    leg_cells.dedup();
    let in_leg_col = |c: usize| leg_cells.iter().any(|&l| c == l || c == l + 1);
    let leg_cell = |r: usize, c: usize| r < leg_rows && leg_cells.contains(&c);

    let n_solid = (0.5 * (bounds.v_min + bounds.v_max) * ne as f64).round() as usize;
    let act_lo = (bounds.v_act_min * ne as f64 - 1e-9).ceil() as usize;
    let act_hi = (bounds.v_act_max * ne as f64 + 1e-9).floor() as usize;

    let mut role = vec![Role::Void; ne];
    let kind = |e| lattice.edge_kind(e);
    let by_kind = |k: EdgeKind| (0..ne).filter(move |&e| kind(e) == k);

    // leg verticals are actuators
    for e in by_kind(EdgeKind::Vertical) {
        let (r, c) = edge_cell(lattice, e);
        if r < leg_rows && in_leg_col(c) {
            role[e] = Role::LegActuator;
        }
    }
    let mut n_act = role.iter().filter(|r| **r == Role::LegActuator).count();
    if n_act > act_hi {
        return Err(ExperimentError::Config(format!("leg actuators ({n_act}) exceed the actuator budget ({act_hi})")));
    }
    // continue the leg lines up through the body, lowest first
    for e in by_kind(EdgeKind::Vertical) {
        let (r, c) = edge_cell(lattice, e);
        if n_act < act_lo && r >= leg_rows && in_leg_col(c) {
            role[e] = Role::BodyActuator;
            n_act += 1;
        }
    }
    if n_act < act_lo {
        return Err(ExperimentError::Config(format!("grid too small to place {act_lo} vertical actuators")));
    }

    // skeleton candidates, in priority order
    let alternating = |e: usize| {
        let (r, c) = edge_cell(lattice, e);
        let up = (r + c) % 2 == 0;
        (kind(e) == EdgeKind::DiagonalUp) == up
    };
    let mut candidates: Vec<(usize, Role)> = Vec::new();
    candidates.extend(
        by_kind(EdgeKind::Horizontal)
            .filter(|&e| edge_cell(lattice, e).0 >= leg_rows)
            .map(|e| (e, Role::BodyHorizontal)),
    );
    let diagonals: Vec<usize> =
        (0..ne).filter(|&e| matches!(kind(e), EdgeKind::DiagonalUp | EdgeKind::DiagonalDown)).collect();
    let mut braces: Vec<usize> = diagonals.iter().copied().filter(|&e| alternating(e)).collect();
    braces.sort_by_key(|&e| edge_cell(lattice, e));
    candidates.extend(
        braces
            .iter()
            .filter(|&&e| {
                let (r, c) = edge_cell(lattice, e);
                leg_cell(r, c)
            })
            .map(|&e| (e, Role::LegBrace)),
    );
    candidates.extend(braces.iter().filter(|&&e| edge_cell(lattice, e).0 >= leg_rows).map(|&e| (e, Role::BodyBrace)));
    candidates.extend(
        by_kind(EdgeKind::Horizontal)
            .filter(|&e| {
                let (r, c) = edge_cell(lattice, e);
                r > 0 && r < leg_rows && leg_cells.contains(&c)
            })
            .map(|e| (e, Role::LegHorizontal)),
    );
    candidates.extend(
        by_kind(EdgeKind::Vertical).filter(|&e| edge_cell(lattice, e).0 >= leg_rows).map(|e| (e, Role::BodyVertical)),
    );
    let mut counter: Vec<usize> =
        diagonals.iter().copied().filter(|&e| !alternating(e) && edge_cell(lattice, e).0 >= leg_rows).collect();
    counter.sort_by_key(|&e| edge_cell(lattice, e));
    candidates.extend(counter.into_iter().map(|e| (e, Role::BodyCounterBrace)));

    let mut solid = n_act;
    for (e, r) in candidates {
        if solid >= n_solid {
            break;
        }
        if role[e] == Role::Void {
            role[e] = r;
            solid += 1;
        }
    }

    let edges = role
        .into_iter()
        .enumerate()
        .map(|(e, role)| {
            let (a, b) = lattice.edges[e];
            BaselineEdge { edge: e, nodes: [a, b], role }
        })
        .collect();
    Ok(BaselineLayout { rows, cols, leg_rows, leg_cells, edges })
}

#[cfg(test)]
mod tests {
    use super::*;
    use trussbot::design::volume_fractions;
    use trussbot::lattice::{build_grid, Vec2};

    fn grid(n: usize) -> LatticeSpec {
        build_grid(n, n, 0.1, Vec2::new(0.1, 0.0)).unwrap()
    }

    #[test]
    fn shipped_layout_matches_the_builder() {
        let lat = grid(6);
        let generated = generate_baseline(&lat, &ScheduleConfig::default().bounds).unwrap();
        if std::env::var_os("TRUSSBOT_REGEN_BASELINE").is_some() {
            let path = concat!(env!("CARGO_MANIFEST_DIR"), "/data/baseline_6x6.json");
            std::fs::write(path, generated.to_json()).unwrap();
        }
        assert_eq!(shipped_6x6(&lat).unwrap(), generated);
    }

    #[test]
    fn budgets_hold_by_construction() {
        for n in [4, 5, 6, 7] {
            let lat = grid(n);
            let (z, _) = build_baseline(&lat).unwrap();
            assert!(z.is_one_hot());
            let (v, va) = volume_fractions(&z.rows);
            let ne = lat.num_edges() as f64;
            assert!((v - 0.5).abs() <= 0.5 / ne + 1e-12, "{n}x{n}: V = {v}");
            assert!((0.20..=0.22).contains(&va), "{n}x{n}: V_act = {va}");
        }
    }

    #[test]
    fn actuators_are_vertical_and_legs_touch_the_ground() {
        let lat = grid(6);
        let (z, _) = build_baseline(&lat).unwrap();
        let act: Vec<usize> = (0..lat.num_edges()).filter(|&e| z.rows[e][ACTUATOR] == 1.0).collect();
        assert!(act.iter().all(|&e| lat.edge_kind(e) == EdgeKind::Vertical));
        // three separate feet: bottom-row nodes carrying an actuator
        let feet: Vec<usize> =
            act.iter().flat_map(|&e| [lat.edges[e].0, lat.edges[e].1]).filter(|&n| lat.node_cell(n).0 == 0).collect();
        let mut cols: Vec<usize> = feet.iter().map(|&n| lat.node_cell(n).1).collect();
        cols.sort();
        cols.dedup();
        assert_eq!(cols, vec![0, 1, 2, 3, 4, 5]);
        // the body rows above the legs are bridged by horizontals
        let top = lat.rows - 1;
        assert!((0..lat.num_edges())
            .filter(|&e| lat.edge_kind(e) == EdgeKind::Horizontal && edge_cell(&lat, e).0 == top)
            .all(|e| z.rows[e][SKELETON] == 1.0));
    }

    #[test]
    fn too_small_grid_is_rejected() {
        let lat = build_grid(2, 4, 0.1, Vec2::zeros()).unwrap();
        assert!(build_baseline(&lat).is_err());
    }
}
