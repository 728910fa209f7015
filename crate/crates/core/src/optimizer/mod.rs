//! Constrained co-design: Augmented Lagrangian binarization, MMA design
//! updates, Adam controller updates and the pass schedule that interleaves
//! them.

mod adam;
mod al;
mod codesign;
mod mma;
mod schedule;

pub use adam::AdamState;
pub use al::{augmented_objective, violations, ALState};
pub use codesign::{
    design_sha256, run_codesign, write_history_jsonl, Checkpoint, CodesignConfig, CodesignResult, CodesignRun,
    HistoryRecord, MaterialLock, OptimizerState,
};
pub use mma::{MmaOutcome, MmaProblem, MmaSettings, MmaState};
pub use schedule::{
    attraction_params, effective_bounds, grad_window, schedule_pass, volume_relaxation, AttractionAnneal, GradRamp,
    PassKind, PassPattern, ScheduleConfig, VolumeBounds, VolumeRelax,
};
