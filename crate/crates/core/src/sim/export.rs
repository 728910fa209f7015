//! Trajectory CSV and run summary.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::RolloutRecord;
use crate::error::{invalid, Result};

/// Writes `step,time,node_id,x,y,vx,vy` rows with 17 significant digits.
/// Needs a record that kept every state.
pub fn write_trajectory_csv<W: Write>(record: &RolloutRecord, dt: f64, mut out: W) -> Result<()> {
    if record.stride != 1 {
        return invalid("trajectory export needs a rollout stored with full states");
    }
    writeln!(out, "step,time,node_id,x,y,vx,vy")?;
    for (step, s) in record.states.iter().enumerate() {
        let time = step as f64 * dt;
        for (n, (x, v)) in s.x.iter().zip(&s.v).enumerate() {
            writeln!(out, "{step},{time:.16e},{n},{:.16e},{:.16e},{:.16e},{:.16e}", x.x, x.y, v.x, v.y)?;
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub loss: f64,
    pub final_head_position: [f64; 2],
    pub constraints: BTreeMap<String, f64>,
}

impl TrajectorySummary {
    pub fn from_record(record: &RolloutRecord, constraints: BTreeMap<String, f64>) -> Self {
        let head = record.final_state.x[record.head_index];
        Self { loss: record.loss, final_head_position: [head.x, head.y], constraints }
    }
}
