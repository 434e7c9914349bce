//! Run configs, the training loop, and the command implementations behind
//! the `proust` binary.

pub mod commands;
pub mod config;
pub mod criteria;
pub mod train;

pub use commands::{
    cmd_analyze, cmd_generate, cmd_pssm, cmd_score, Analysis, AnalyzeArgs, GenerateArgs, ScoreArgs,
    ScoreReport,
};
pub use config::{DataConfig, RunConfig, TrainConfig};
pub use train::{
    epoch_batches, holdout_loss, train, train_on, Corpus, HoldoutEval, StepRecord, TrainSummary,
    Trainer,
};
