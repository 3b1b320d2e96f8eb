//! Configuration, optimizer, checkpointing, and the training/ablation
//! entry points.

pub mod ablate;
pub mod adam;
pub mod checkpoint;
pub mod config;
pub mod runner;

pub use ablate::{parse_grid, rows_to_csv, run_cell, AblateCell, AblateRow, AblationMode};
pub use adam::Adam;
pub use checkpoint::Checkpoint;
pub use config::TrainConfig;
pub use runner::{
    build_dataset, evaluate, restore_models, train, train_step, EvalMetrics, Models, StepLosses,
    TrainOutcome, HISTORY_HEADER,
};
