//! Initial designs.

use trussbot::design::{DesignMatrix, ACTUATOR, SKELETON, VOID};
use trussbot::lattice::{EdgeKind, LatticeSpec};

use crate::baseline::build_baseline;
use crate::config::{HeuristicParams, InitHeuristic};
use crate::Result;

const THIRD: f64 = 1.0 / 3.0;

/// Initial relaxed design for `kind`. The seed is accepted for interface
/// symmetry; every heuristic here is deterministic.
pub fn init_heuristic(
    kind: InitHeuristic,
    lattice: &LatticeSpec,
    params: &HeuristicParams,
    _seed: u64,
) -> Result<DesignMatrix> {
    let ne = lattice.num_edges();
    Ok(match kind {
        InitHeuristic::Uniform => DesignMatrix::uniform(ne),
        InitHeuristic::Stability => stability(lattice, params.stability_shift),
        InitHeuristic::ThreeLegged => {
            let (base, _) = build_baseline(lattice)?;
            let biased = {
                let s = 1.0 + params.three_legged_bias;
                [(THIRD + params.three_legged_bias) / s, THIRD / s, THIRD / s]
            };
            DesignMatrix::new(base.rows.iter().map(|r| if r[VOID] == 1.0 { biased } else { [THIRD; 3] }).collect())
        }
        InitHeuristic::BaselineFixed => build_baseline(lattice)?.0,
    })
}

/// Void ratio raised by `shift * h`, where `h` is the edge midpoint height
/// normalised to `[0, 1]` over the grid; the other two entries share the rest.
fn stability(lattice: &LatticeSpec, shift: f64) -> DesignMatrix {
    let y0 = lattice.origin.y;
    let span = (lattice.rows - 1) as f64 * lattice.spacing;
    DesignMatrix::new(
        (0..lattice.num_edges())
            .map(|e| {
                let h = ((lattice.edge_midpoint(e).y - y0) / span).clamp(0.0, 1.0);
                let v = THIRD + shift * h;
                [v, 0.5 * (1.0 - v), 0.5 * (1.0 - v)]
            })
            .collect(),
    )
}

/// Solid state per edge for the default actuation layout: vertical
/// actuators spread evenly over the grid, skeleton everywhere else.
/// `v_act` sets how many actuators are placed.
pub fn default_actuation(lattice: &LatticeSpec, v_act: f64) -> Vec<usize> {
    let ne = lattice.num_edges();
    let verticals: Vec<usize> = (0..ne).filter(|&e| lattice.edge_kind(e) == EdgeKind::Vertical).collect();
    let n = ((v_act * ne as f64 - 1e-9).ceil() as usize).min(verticals.len());
    let mut state = vec![SKELETON; ne];
    for i in 0..n {
        let k = ((i as f64 + 0.5) * verticals.len() as f64 / n as f64) as usize;
        state[verticals[k]] = ACTUATOR;
    }
    state
}

/// Every edge solid, materials from [`default_actuation`].
pub fn filled_default(lattice: &LatticeSpec, v_act: f64) -> DesignMatrix {
    DesignMatrix::new(
        default_actuation(lattice, v_act)
            .into_iter()
            .map(|s| {
                let mut r = [0.0; 3];
                r[s] = 1.0;
                r
            })
            .collect(),
    )
}
