//! End-to-end experiments: supervised pre-training stand-in, oracle-judged
//! win rates, and the three comparison tables.

mod experiment;
mod sft;
mod winrate;

pub use experiment::{
    dataset_size_for, experiment_dataset, median, reports_dir, run_table_experiments, sha256_hex, ArmInputs, ExperimentConfig, Medians, ReportBundle,
    PhaseTimings, SeedArtifacts, SeedPlan, T1Row, T2Row, T3Row, SEQUENCE_ARM, TOKEN_ARM,
};
pub use sft::{demonstrations, nll_loss, sft_pretrain, SftConfig, SftEpochLog, SftResult};
pub use winrate::{eval_prompts, win_rate, Judge, SeedMode, WinRateReport, MIN_PROMPTS};

use thiserror::Error;

use crate::corpus::CorpusError;
use crate::editdiff::EditError;
use crate::ppo::PpoError;
use crate::reward::RewardError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error("win rate needs at least {min} prompts, got {got}")]
    TooFewPrompts { got: usize, min: usize },
    #[error("arms do not share their inputs: {0}")]
    UnfairComparison(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Edit(#[from] EditError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Ppo(#[from] PpoError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
