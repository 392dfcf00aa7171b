//! End-to-end experiment recipe and its report.

pub mod config;
pub mod report;
pub mod run;

pub use config::{ModelShape, PipelineConfig};
pub use report::{checks_text, direction_checks, ComparisonRow, ComparisonTable, DirectionCheck};
pub use run::{
    artifacts, finetune_all, prepare_data, pretrain, run_pipeline, write_outputs, Artifact, Data,
    Finetunes, Outputs, MODEL_NAMES,
};
