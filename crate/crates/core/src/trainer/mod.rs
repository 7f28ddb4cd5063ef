//! Class-incremental training: task sequencing, replay from the previous
//! model, loss mixing, Synaptic Intelligence bookkeeping and evaluation.

mod config;
mod replay;
mod run;

pub use config::{
    mix_losses, mix_weights, AblationFlags, DiagnosticsConfig, LossWeights, NetworkSpec, SiConfig,
    TrainerConfig,
};
pub use replay::{generate_replay_batch, ReplayBatch, ReplaySettings};
pub use run::{
    build_model, compute_diagnostics, run_experiment, strided, train_task, trainable_groups,
    Diagnostics, ExperimentOutput, RunRngs, TaskData, TaskReport, Timings, TrainState,
};
