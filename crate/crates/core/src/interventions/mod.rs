//! Parameter-delta ablation, ablation sweeps and active forgetting.

pub mod ablation;
pub mod forgetting;

pub use ablation::{
    ablate, sweep, sweep_reports, AblationSweepResult, ControllingRange, Direction, SweepPoint,
    SweepSummary,
};
pub use forgetting::{
    active_forget_sequences, active_forget_train, lower_only_baseline, reset_to_base,
    ForgettingRun, ForgettingSchedule,
};
