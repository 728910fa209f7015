//! The eight-trial ablation matrix over topology, material and control.

use trussbot::design::{DesignMatrix, ACTUATOR};
use trussbot::lattice::LatticeSpec;
use trussbot::optimizer::{CodesignConfig, MaterialLock};

use crate::config::{AblationFlags, InitHeuristic, OptimizerKnobs};
use crate::heuristics::{default_actuation, filled_default};
use crate::{ExperimentError, Result};

pub const TRIALS: [char; 8] = ['a', 'b', 'c', 'd', 'e', 'f', 'g', 'h'];

/// Flags of a lettered trial: `a` has everything off, `h` everything on,
/// and the letters in between enumerate (topology, material, control) with
/// control varying fastest and material slowest.
pub fn trial_flags(trial: char) -> Result<AblationFlags> {
    let i = TRIALS
        .iter()
        .position(|&t| t == trial)
        .ok_or_else(|| ExperimentError::Config(format!("unknown trial '{trial}', expected a..h")))?;
    Ok(AblationFlags { material: i >= 4, topology: i % 4 >= 2, control: i % 2 == 1 })
}

/// Parses `a..h`, `a-d`, `a,c,h` or `ach`.
pub fn parse_trials(spec: &str) -> Result<Vec<char>> {
    let s: String = spec.chars().filter(|c| !c.is_whitespace()).collect();
    let range = s.split_once("..").or_else(|| s.split_once('-'));
    let out: Vec<char> = match range {
        Some((a, b)) => {
            let (a, b) = (single(a)?, single(b)?);
            if a > b {
                return Err(ExperimentError::Config(format!("empty trial range {spec}")));
            }
            (a..=b).collect()
        }
        None => s.chars().filter(|&c| c != ',').collect(),
    };
    if out.is_empty() {
        return Err(ExperimentError::Config("no trials given".into()));
    }
    for &t in &out {
        trial_flags(t)?;
    }
    Ok(out)
}

fn single(s: &str) -> Result<char> {
    let mut it = s.chars();
    match (it.next(), it.next()) {
        (Some(c), None) => Ok(c),
        _ => Err(ExperimentError::Config(format!("'{s}' is not a trial letter"))),
    }
}

/// Turns the heuristic initial design into the trial's starting design and
/// restricts the optimizer accordingly.
///
/// * control off: Controller passes become frozen no-ops.
/// * topology and material off: the design is fixed (the baseline when it
///   is the initial heuristic, otherwise the filled default layout).
/// * topology off, material on: start from the filled default layout,
///   relaxed halfway to uniform, with `V_min` raised so the topology stays
///   filled while materials move.
/// * topology on, material off: the default layout decides which solid
///   state each edge may take and the other is shifted down before every
///   projection.
pub fn apply_ablation(
    flags: AblationFlags,
    heuristic: InitHeuristic,
    z0: DesignMatrix,
    lattice: &LatticeSpec,
    knobs: &OptimizerKnobs,
    mut cfg: CodesignConfig,
) -> Result<(DesignMatrix, CodesignConfig)> {
    if heuristic == InitHeuristic::BaselineFixed && (flags.topology || flags.material) {
        return Err(ExperimentError::Config(
            "baseline_fixed is a fixed design: topology and material must both be off".into(),
        ));
    }
    let v_act = cfg.schedule.bounds.v_act_min;
    cfg.freeze_controller = !flags.control;
    let z = match (flags.topology, flags.material) {
        (true, true) => z0,
        (false, false) => {
            cfg.freeze_design = true;
            if heuristic == InitHeuristic::BaselineFixed {
                z0
            } else {
                filled_default(lattice, v_act)
            }
        }
        (false, true) => {
            let b = &mut cfg.schedule.bounds;
            b.v_min = knobs.filled_v_min;
            b.v_max = b.v_max.max(1.0);
            let filled = filled_default(lattice, v_act);
            DesignMatrix::new(filled.rows.iter().map(|r| r.map(|x| 0.5 * x + 0.5 / 3.0)).collect())
        }
        (true, false) => {
            cfg.material_lock =
                Some(MaterialLock { dominant: default_actuation(lattice, v_act), shift: knobs.material_shift });
            z0
        }
    };
    Ok((z, cfg))
}

/// Number of actuator-dominant rows, for reporting.
pub fn actuator_count(z: &DesignMatrix) -> usize {
    z.argmax_rows().iter().filter(|&&s| s == ACTUATOR).count()
}
