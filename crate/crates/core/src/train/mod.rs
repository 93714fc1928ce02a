//! Experiment configuration, the training loop with its run manifest and
//! checkpoint lifecycle, and the ablation runner.

mod ablate;
mod config;
mod trainer;

pub use ablate::{
    config_diff, matrix_cells, mean_std, run_ablation, AblationCell, AblationMatrix, AblationRun, AblationTable,
    CellSummary,
};
pub use config::{
    DatasetKind, DatasetSection, ExperimentConfig, LossSection, OptimizerKind, TrainSection, DEFAULT_CONFIG_TOML,
    DESK_CONFIG_TOML,
};
pub use trainer::{
    eval_inputs, run_experiment, EpochSummary, Geometry, RunManifest, RunSeeds, Trainer, RUN_MANIFEST_FILE,
    STEP_LOG_FILE,
};
