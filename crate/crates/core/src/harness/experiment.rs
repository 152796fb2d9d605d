use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::sft::{sft_pretrain, SftConfig};
use super::winrate::{eval_prompts, win_rate, Judge, SeedMode, WinRateReport};
use super::HarnessError;
use crate::corpus::{OracleSpec, TokenSequence, Vocabulary};
use crate::editdiff::{build_dataset, write_dataset, DatasetOptions, EditPair, EditorBackend};
use crate::ppo::{train_ppo, write_convergence_log, Policy, PpoConfig, PpoRun, RewardScheme};
use crate::reward::{rm_accuracy, train_rm, LossKind, PreferencePair, RmTrainConfig};
use crate::rng::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub name: String,
    pub seeds: Vec<u64>,
    /// Reward-model training pairs per seed; held-out pairs come on top.
    pub train_pairs: usize,
    pub dataset: DatasetOptions,
    pub eval_prompts: usize,
    pub oracle: OracleSpec,
    pub sft: SftConfig,
    /// Shared by both reward models; `loss` selects the token-level loss.
    pub rm: RmTrainConfig,
    pub ppo_token: PpoConfig,
    pub ppo_sequence: PpoConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "tables".into(),
            seeds: vec![1, 2, 3, 4, 5],
            train_pairs: 2000,
            dataset: DatasetOptions::default(),
            eval_prompts: 500,
            oracle: OracleSpec::default(),
            sft: SftConfig::default(),
            rm: RmTrainConfig::default(),
            ppo_token: PpoConfig { scheme: RewardScheme::TokenLevel, ..PpoConfig::default() },
            ppo_sequence: PpoConfig { scheme: RewardScheme::SequenceTerminal, ..PpoConfig::default() },
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        // An arm table that leaves out `scheme` gets its arm's scheme rather
        // than the generic PPO default.
        if let Some(toml::Value::Table(arm)) = table.get_mut("ppo_sequence") {
            arm.entry("scheme").or_insert_with(|| SEQUENCE_ARM.into());
        }
        let c: ExperimentConfig =
            toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is serialisable")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.seeds.is_empty() {
            return bad("at least one seed is required");
        }
        if self.train_pairs == 0 {
            return bad("train_pairs must be positive");
        }
        if !(0.0..1.0).contains(&self.rm.heldout_fraction) {
            return bad("rm.heldout_fraction must be in [0, 1)");
        }
        if self.rm.loss == LossKind::Sequence {
            return bad("rm.loss selects the token-level loss and must be `full` or `approx`");
        }
        if self.ppo_token.scheme != RewardScheme::TokenLevel || self.ppo_sequence.scheme != RewardScheme::SequenceTerminal {
            return bad("ppo_token / ppo_sequence must use the token_level / sequence_terminal schemes");
        }
        if self.ppo_token.max_iters != self.ppo_sequence.max_iters
            || self.ppo_token.batch_size != self.ppo_sequence.batch_size
            || self.ppo_token.target_oracle_reward != self.ppo_sequence.target_oracle_reward
        {
            return bad("both PPO arms must share max_iters, batch_size and target_oracle_reward");
        }
        self.ppo_token.validate()?;
        self.ppo_sequence.validate()?;
        self.oracle.validate()?;
        Ok(())
    }
}

/// Per-seed streams. Every arm of one seed receives the same values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedPlan {
    pub seed: u64,
    pub dataset: u64,
    pub editor: u64,
    pub sft: u64,
    pub rm: u64,
    pub ppo: u64,
    pub eval: u64,
}

impl SeedPlan {
    pub fn new(seed: u64) -> Self {
        SeedPlan {
            seed,
            dataset: derive_seed(seed, 100),
            editor: derive_seed(seed, 101),
            sft: derive_seed(seed, 102),
            rm: derive_seed(seed, 103),
            ppo: derive_seed(seed, 104),
            eval: derive_seed(seed, 105),
        }
    }
}

/// Content hashes of everything an arm consumes besides its own config.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArmInputs {
    pub dataset_sha256: String,
    pub sft_sha256: String,
    pub eval_prompts_sha256: String,
    pub seeds: Vec<u64>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn arm_inputs(
    vocab: &Vocabulary,
    dataset: &[EditPair],
    sft: &Policy<f64>,
    prompts: &[TokenSequence],
    seeds: &[u64],
) -> Result<ArmInputs, HarnessError> {
    let mut data = Vec::new();
    write_dataset(vocab, dataset, &mut data)?;
    let mut ckpt = Vec::new();
    sft.save(&mut ckpt)?;
    let mut p = Vec::new();
    for prompt in prompts {
        for t in &prompt.ids {
            p.extend_from_slice(&t.0.to_le_bytes());
        }
        p.push(0xff);
    }
    Ok(ArmInputs {
        dataset_sha256: sha256_hex(&data),
        sft_sha256: sha256_hex(&ckpt),
        eval_prompts_sha256: sha256_hex(&p),
        seeds: seeds.to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct T1Row {
    pub seed: u64,
    pub arm: String,
    pub win_rate: f64,
    pub std_error: f64,
    pub n_comparisons: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct T2Row {
    pub seed: u64,
    pub token_accuracy: f64,
    pub sequence_accuracy: f64,
    pub heldout_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct T3Row {
    pub seed: u64,
    pub arm: String,
    /// Iterations until the oracle target was reached; `max_iters + 1`
    /// when it never was.
    pub iterations: usize,
    pub reached: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Medians {
    pub t1_token: f64,
    pub t1_sequence: f64,
    pub t2_token: f64,
    pub t2_sequence: f64,
    pub t3_token: f64,
    pub t3_sequence: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReportBundle {
    pub t1: Vec<T1Row>,
    pub t2: Vec<T2Row>,
    pub t3: Vec<T3Row>,
    pub medians: Medians,
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl ReportBundle {
    fn update_medians(&mut self) {
        let t1 = |arm: &str| median(&self.t1.iter().filter(|r| r.arm == arm).map(|r| r.win_rate).collect::<Vec<_>>());
        let t3 =
            |arm: &str| median(&self.t3.iter().filter(|r| r.arm == arm).map(|r| r.iterations as f64).collect::<Vec<_>>());
        self.medians = Medians {
            t1_token: t1(TOKEN_ARM),
            t1_sequence: t1(SEQUENCE_ARM),
            t2_token: median(&self.t2.iter().map(|r| r.token_accuracy).collect::<Vec<_>>()),
            t2_sequence: median(&self.t2.iter().map(|r| r.sequence_accuracy).collect::<Vec<_>>()),
            t3_token: t3(TOKEN_ARM),
            t3_sequence: t3(SEQUENCE_ARM),
        };
    }

    /// Writes `reports/{t1,t2,t3}.csv` under `out`, each with per-seed rows
    /// followed by median rows.
    pub fn write(&self, out: &Path) -> Result<(), HarnessError> {
        let dir = out.join("reports");
        fs::create_dir_all(&dir)?;
        let m = &self.medians;

        let mut w = csv::Writer::from_path(dir.join("t1.csv"))?;
        w.write_record(["seed", "arm", "win_rate", "std_error", "n_comparisons"])?;
        for r in &self.t1 {
            w.write_record([r.seed.to_string(), r.arm.clone(), fmt(r.win_rate), fmt(r.std_error), r.n_comparisons.to_string()])?;
        }
        for (arm, v) in [(TOKEN_ARM, m.t1_token), (SEQUENCE_ARM, m.t1_sequence)] {
            w.write_record(["median".to_string(), arm.to_string(), fmt(v), String::new(), String::new()])?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("t2.csv"))?;
        w.write_record(["seed", "token_accuracy", "sequence_accuracy", "heldout_pairs"])?;
        for r in &self.t2 {
            w.write_record([r.seed.to_string(), fmt(r.token_accuracy), fmt(r.sequence_accuracy), r.heldout_pairs.to_string()])?;
        }
        w.write_record(["median".to_string(), fmt(m.t2_token), fmt(m.t2_sequence), String::new()])?;
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("t3.csv"))?;
        w.write_record(["seed", "arm", "iterations", "reached"])?;
        for r in &self.t3 {
            w.write_record([r.seed.to_string(), r.arm.clone(), r.iterations.to_string(), r.reached.to_string()])?;
        }
        for (arm, v) in [(TOKEN_ARM, m.t3_token), (SEQUENCE_ARM, m.t3_sequence)] {
            w.write_record(["median".to_string(), arm.to_string(), fmt(v), String::new()])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn fmt(x: f64) -> String {
    format!("{x:.6}")
}

pub const TOKEN_ARM: &str = "token_level";
pub const SEQUENCE_ARM: &str = "sequence_terminal";

/// Artifacts of one seed, kept for callers that want more than the tables.
#[derive(Debug, Clone)]
pub struct SeedArtifacts {
    pub plan: SeedPlan,
    pub sft: Policy<f64>,
    pub token_run: PpoRun<f64>,
    pub sequence_run: PpoRun<f64>,
    pub timings: PhaseTimings,
}

/// Wall-clock time spent in each phase of one seed.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PhaseTimings {
    /// Dataset construction and both reward models.
    pub reward_models: Duration,
    /// Supervised pre-training and both PPO arms.
    pub policies: Duration,
    /// Win-rate evaluation of both arms.
    pub evaluation: Duration,
}

/// Smallest kept-pair count whose train split holds `train` pairs.
pub fn dataset_size_for(train: usize, heldout_fraction: f64) -> usize {
    let mut n = train;
    while n - ((n as f64) * heldout_fraction).round() as usize > train {
        n -= 1;
    }
    while (n - ((n as f64) * heldout_fraction).round() as usize) < train {
        n += 1;
    }
    n
}

/// Edit pairs for one seed: the first `dataset_size_for(..)` kept pairs of
/// the synthetic editor's stream.
pub fn experiment_dataset(vocab: &Vocabulary, config: &ExperimentConfig, plan: &SeedPlan) -> Result<Vec<EditPair>, HarnessError> {
    let want = dataset_size_for(config.train_pairs, config.rm.heldout_fraction);
    let backend = EditorBackend::Synthetic { seed: plan.editor };
    let mut attempts = want + want / 4 + 16;
    loop {
        let (mut pairs, _) = build_dataset(vocab, attempts, &backend, plan.dataset, &config.dataset)?;
        if pairs.len() >= want {
            pairs.truncate(want);
            return Ok(pairs);
        }
        attempts *= 2;
    }
}

fn iterations(run: &PpoRun<f64>, max_iters: usize) -> (usize, bool) {
    match run.reached_target_at {
        Some(i) => (i + 1, true),
        None => (max_iters + 1, false),
    }
}

/// Runs the whole pipeline for every seed and writes the three tables under
/// `out` (if given). Tables are rewritten after each seed, so a failure
/// leaves the completed seeds on disk.
pub fn run_table_experiments(
    vocab: &Vocabulary,
    config: &ExperimentConfig,
    out: Option<&Path>,
) -> Result<(ReportBundle, Vec<SeedArtifacts>), HarnessError> {
    config.validate()?;
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("config.toml"), config.to_toml())?;
    }
    let mut bundle = ReportBundle::default();
    let mut artifacts = Vec::new();
    for &seed in &config.seeds {
        let plan = SeedPlan::new(seed);
        log::info!("seed {seed}: building data, SFT and reward models");
        let mut timings = PhaseTimings::default();
        let clock = Instant::now();
        let dataset = experiment_dataset(vocab, config, &plan)?;

        let token_cfg = RmTrainConfig { seed: plan.rm, ..config.rm.clone() };
        let seq_cfg = RmTrainConfig { loss: LossKind::Sequence, seed: plan.rm, ..config.rm.clone() };
        let token_rm = train_rm::<f64>(vocab, &dataset, &token_cfg)?;
        let seq_rm = train_rm::<f64>(vocab, &dataset, &seq_cfg)?;
        debug_assert_eq!(token_rm.heldout_idx, seq_rm.heldout_idx);
        let heldout: Vec<PreferencePair> =
            token_rm.heldout_idx.iter().map(|i| PreferencePair::from(&dataset[*i])).collect();
        bundle.t2.push(T2Row {
            seed,
            token_accuracy: rm_accuracy(&token_rm.model, &heldout)?,
            sequence_accuracy: rm_accuracy(&seq_rm.model, &heldout)?,
            heldout_pairs: heldout.len(),
        });
        timings.reward_models = clock.elapsed();

        let clock = Instant::now();
        let sft = sft_pretrain::<f64>(vocab, &SftConfig { seed: plan.sft, ..config.sft.clone() })?.policy;
        let prompts = eval_prompts(vocab, config.eval_prompts, plan.eval);

        let token_inputs = arm_inputs(vocab, &dataset, &sft, &prompts, &config.seeds)?;
        let seq_inputs = arm_inputs(vocab, &dataset, &sft, &prompts, &config.seeds)?;
        if token_inputs != seq_inputs {
            return Err(HarnessError::UnfairComparison(format!("{token_inputs:?} vs {seq_inputs:?}")));
        }

        log::info!("seed {seed}: PPO arms");
        let token_run = train_ppo(
            vocab,
            &config.oracle,
            &sft,
            &sft,
            &token_rm.model,
            &PpoConfig { seed: plan.ppo, ..config.ppo_token.clone() },
        )?;
        let sequence_run = train_ppo(
            vocab,
            &config.oracle,
            &sft,
            &sft,
            &seq_rm.model,
            &PpoConfig { seed: plan.ppo, ..config.ppo_sequence.clone() },
        )?;
        timings.policies = clock.elapsed();
        let judge = Judge::Oracle(config.oracle);
        for (arm, run, cfg) in
            [(TOKEN_ARM, &token_run, &config.ppo_token), (SEQUENCE_ARM, &sequence_run, &config.ppo_sequence)]
        {
            let clock = Instant::now();
            let wr: WinRateReport = win_rate(vocab, &run.policy, &sft, &prompts, &judge, SeedMode::Paired, plan.eval)?;
            timings.evaluation += clock.elapsed();
            bundle.t1.push(T1Row {
                seed,
                arm: arm.into(),
                win_rate: wr.win_rate,
                std_error: wr.std_error,
                n_comparisons: wr.n_comparisons,
            });
            let (iters, reached) = iterations(run, cfg.max_iters);
            bundle.t3.push(T3Row { seed, arm: arm.into(), iterations: iters, reached });
            if let Some(dir) = out {
                let logs = dir.join("logs");
                fs::create_dir_all(&logs)?;
                let f = fs::File::create(logs.join(format!("seed{seed}_{arm}.csv")))?;
                write_convergence_log(&run.log, f)?;
            }
        }
        bundle.update_medians();
        if let Some(dir) = out {
            bundle.write(dir)?;
        }
        artifacts.push(SeedArtifacts { plan, sft, token_run, sequence_run, timings });
    }
    Ok((bundle, artifacts))
}

/// Default location of the report bundle inside an output directory.
pub fn reports_dir(out: &Path) -> PathBuf {
    out.join("reports")
}
