//! Run metrics with a fixed field order.

use serde::{Deserialize, Serialize};

use trussbot::optimizer::HistoryRecord;

/// Outcome of the full-length rollout of the final design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinalEval {
    pub loss: f64,
    pub v: f64,
    pub v_act: f64,
    pub g_bin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub scenario: String,
    pub seed: u64,
    /// Final horizontal head position, `-final_loss`.
    pub final_displacement_m: f64,
    pub final_loss: f64,
    #[serde(rename = "V")]
    pub v: f64,
    #[serde(rename = "V_act")]
    pub v_act: f64,
    pub g_bin: f64,
    pub iterations: usize,
    pub wallclock_s: f64,
    /// Per-iteration history file, relative to the metrics file.
    pub per_iteration: String,
}

pub fn export_metrics(
    scenario: &str,
    seed: u64,
    history: &[HistoryRecord],
    final_eval: &FinalEval,
    wallclock_s: f64,
    per_iteration: &str,
) -> Metrics {
    Metrics {
        scenario: scenario.to_string(),
        seed,
        final_displacement_m: -final_eval.loss,
        final_loss: final_eval.loss,
        v: final_eval.v,
        v_act: final_eval.v_act,
        g_bin: final_eval.g_bin,
        iterations: history.len(),
        wallclock_s,
        per_iteration: per_iteration.to_string(),
    }
}

impl Metrics {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize") + "\n"
    }

    /// Same metrics with the wallclock zeroed, for reproducibility checks.
    pub fn without_wallclock(&self) -> Self {
        Self { wallclock_s: 0.0, ..self.clone() }
    }
}
