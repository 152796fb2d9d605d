use serde::{Deserialize, Serialize};

pub const DEFAULTS_TOML: &str = include_str!("../defaults.toml");
pub const SMOKE_CONFIG: &str = include_str!("../configs/smoke.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Defaults {
    pub version: u32,
    pub gen_data: GenDataDefaults,
    pub train_rm: TrainRmDefaults,
    pub train_ppo: TrainPpoDefaults,
    pub eval: EvalDefaults,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenDataDefaults {
    pub n: usize,
    pub seed: u64,
    pub editor: String,
    pub timeout_secs: u64,
    pub max_change_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRmDefaults {
    pub loss: String,
    pub u0: String,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub heldout_fraction: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainPpoDefaults {
    pub gamma: f64,
    pub lambda: f64,
    pub clip_eps: f64,
    pub kl_coef: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub max_grad_norm: f64,
    pub value_coef: f64,
    pub max_iters: usize,
    pub target_oracle_reward: f64,
    pub seed: u64,
    pub sft_demonstrations: usize,
    pub sft_epochs: usize,
    pub sft_lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalDefaults {
    pub prompts: usize,
    pub seed: u64,
    pub judge: String,
}

pub fn load() -> Defaults {
    toml::from_str(DEFAULTS_TOML).expect("bundled defaults file is valid")
}
