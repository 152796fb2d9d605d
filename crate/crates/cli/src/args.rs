use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "grainrl", version, about = "Token-level reward modeling and PPO on a synthetic politeness task")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate minimal-edit preference pairs.
    GenData(GenDataArgs),
    /// Show the token alignment between two responses.
    Diff(DiffArgs),
    /// Train a token-level or sequence-level reward model.
    TrainRm(TrainRmArgs),
    /// Run PPO from a supervised-pretrained policy.
    TrainPpo(TrainPpoArgs),
    /// Oracle-judged win rate of one policy against another.
    Eval(EvalArgs),
    /// Run the three comparison tables from an experiment config.
    Report(ReportArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenData(_) => "gen-data",
            Command::Diff(_) => "diff",
            Command::TrainRm(_) => "train-rm",
            Command::TrainPpo(_) => "train-ppo",
            Command::Eval(_) => "eval",
            Command::Report(_) => "report",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EditorKind {
    Synthetic,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    Full,
    Approx,
    Sequence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum U0Arg {
    Edited,
    Average,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum SchemeArg {
    TokenLevel,
    SequenceTerminal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum JudgeArg {
    Oracle,
}

#[derive(Debug, Args)]
pub struct VocabArg {
    /// Vocabulary file; the built-in vocabulary when omitted.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Number of responses to generate and edit.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, value_enum)]
    pub editor: Option<EditorKind>,
    /// Editor URL; falls back to GRAINRL_EDITOR_ENDPOINT.
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long)]
    pub timeout_secs: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub vocab: VocabArg,
}

#[derive(Debug, Args)]
pub struct DiffArgs {
    /// Original response text, space separated.
    #[arg(long)]
    pub original: String,
    /// Edited response text, space separated.
    #[arg(long)]
    pub edited: String,
    #[command(flatten)]
    pub vocab: VocabArg,
}

#[derive(Debug, Args)]
pub struct TrainRmArgs {
    /// Edit-pair JSONL written by `gen-data`.
    #[arg(long)]
    pub data: PathBuf,
    /// `full` and `approx` train a token-level head, `sequence` a
    /// sequence-level one.
    #[arg(long, value_enum)]
    pub loss: Option<LossArg>,
    #[arg(long, value_enum)]
    pub u0: Option<U0Arg>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub vocab: VocabArg,
}

#[derive(Debug, Args)]
pub struct TrainPpoArgs {
    /// Reward-model checkpoint from `train-rm`.
    #[arg(long)]
    pub rm: PathBuf,
    /// Defaults to the scheme matching the reward model's head.
    #[arg(long, value_enum)]
    pub scheme: Option<SchemeArg>,
    /// Starting policy; when omitted a policy is pre-trained on
    /// demonstrations and saved as `sft.ckpt`.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub kl_coef: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub target: Option<f64>,
    #[arg(long)]
    pub sft_demonstrations: Option<usize>,
    #[arg(long)]
    pub sft_epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub vocab: VocabArg,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_enum)]
    pub judge: Option<JudgeArg>,
    #[arg(long)]
    pub policy: PathBuf,
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long)]
    pub prompts: Option<usize>,
    /// Sample both policies from the same seed for each prompt.
    #[arg(long, conflicts_with = "independent_seeds")]
    pub paired_seeds: bool,
    #[arg(long)]
    pub independent_seeds: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub vocab: VocabArg,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Experiment config (TOML); the bundled smoke config when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}
