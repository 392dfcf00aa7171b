//! Optimization: learning-rate schedule, Adam with layer freezing,
//! the training loop, entropy floors and checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod entropy;
pub mod schedule;
pub mod selector;
pub mod trainer;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{
    load_checkpoint, load_with_base, loss_curve_csv, save_checkpoint, verify_lineage, Checkpoint,
    CheckpointMeta, EpochLoss, LossPoint, Phase,
};
pub use entropy::{entropy_floor_of, estimate_entropy_floor};
pub use schedule::lr_at;
pub use selector::{LayerSelector, SelectorMode};
pub use trainer::{encode_corpus, run_epochs, train, train_sequences, Convergence, RunLog, TrainConfig};
