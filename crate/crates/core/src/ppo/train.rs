use std::io::Write;

use serde::{Deserialize, Serialize};

use super::policy::Policy;
use super::rollout::{check_scheme, rollout_batch, Trajectory};
use super::update::ppo_update;
use super::{PpoConfig, PpoError};
use crate::corpus::{oracle_sequence_reward, sample_prompt, OracleSpec, TokenSequence, Vocabulary};
use crate::reward::RewardModel;
use crate::rng::{derive_seed, derive_seed2, rng_from};
use crate::scalar::Scalar;
use crate::tensor::Adam;

/// One row of the convergence log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub iter: usize,
    /// Ground-truth quality of this iteration's samples. Never used for
    /// training.
    pub mean_oracle_reward: f64,
    pub mean_rm_reward: f64,
    /// Mean exact per-state KL to the reference policy.
    pub mean_kl: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
}

#[derive(Debug, Clone)]
pub struct PpoRun<T> {
    pub policy: Policy<T>,
    pub log: Vec<ConvergenceRow>,
    /// First iteration whose samples reached the oracle target.
    pub reached_target_at: Option<usize>,
}

/// Prompts for iteration `iter`; identical across reward schemes for the
/// same seed.
pub fn iteration_prompts(vocab: &Vocabulary, seed: u64, iter: usize, n: usize) -> Vec<TokenSequence> {
    let base = derive_seed(seed, 10);
    (0..n).map(|i| sample_prompt(vocab, derive_seed2(base, iter as u64, i as u64))).collect()
}

pub fn mean_oracle_reward<T: Scalar>(vocab: &Vocabulary, oracle: &OracleSpec, trajs: &[Trajectory<T>]) -> f64 {
    let total: f64 = trajs.iter().map(|t| oracle_sequence_reward(vocab, &t.actions, oracle).unwrap_or(0.0)).sum();
    total / trajs.len().max(1) as f64
}

/// Mean of the exact per-state KL over every visited state.
pub fn mean_state_kl<T: Scalar>(trajs: &[Trajectory<T>]) -> f64 {
    let n: usize = trajs.iter().map(Trajectory::len).sum();
    let s: f64 = trajs.iter().flat_map(|t| t.state_kl.iter()).map(|k| k.as_f64()).sum();
    s / n.max(1) as f64
}

/// Runs rollout/update iterations from `init`, stopping after the first
/// iteration whose samples reach `config.target_oracle_reward`, or after
/// `config.max_iters`. `reference` supplies the KL anchor.
pub fn train_ppo<T: Scalar>(
    vocab: &Vocabulary,
    oracle: &OracleSpec,
    init: &Policy<T>,
    reference: &Policy<T>,
    reward_model: &RewardModel<T>,
    config: &PpoConfig,
) -> Result<PpoRun<T>, PpoError> {
    config.validate()?;
    check_scheme(reward_model, config.scheme)?;
    let mut policy = init.clone();
    let mut opt = Adam::new(config.adam, &policy.params);
    let mut update_rng = rng_from(derive_seed(config.seed, 12));
    let rollout_base = derive_seed(config.seed, 11);
    let mut log = Vec::new();
    let mut reached = None;
    for iter in 0..config.max_iters {
        let prompts = iteration_prompts(vocab, config.seed, iter, config.batch_size);
        let prompt_ids: Vec<_> = prompts.iter().map(|p| &p.ids[..]).collect();
        let seeds: Vec<u64> = (0..prompts.len()).map(|i| derive_seed2(rollout_base, iter as u64, i as u64)).collect();
        let batch = rollout_batch(&policy, reference, reward_model, &prompt_ids, &seeds, config)?;
        let stats = ppo_update(&mut policy, &mut opt, &batch, config, &mut update_rng).map_err(|e| match e {
            PpoError::NonFiniteLoss { epoch, minibatch, detail } => {
                PpoError::NonFiniteLoss { epoch, minibatch, detail: format!("iteration {iter}: {detail}") }
            }
            other => other,
        })?;
        let row = ConvergenceRow {
            iter,
            mean_oracle_reward: mean_oracle_reward(vocab, oracle, &batch),
            mean_rm_reward: batch.iter().map(|t| t.rm_score.as_f64()).sum::<f64>() / batch.len() as f64,
            mean_kl: mean_state_kl(&batch),
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
        };
        log::debug!(
            "ppo iter {iter}: oracle {:.4} rm {:.4} kl {:.4}",
            row.mean_oracle_reward,
            row.mean_rm_reward,
            row.mean_kl
        );
        let hit = row.mean_oracle_reward >= config.target_oracle_reward;
        log.push(row);
        if hit {
            reached = Some(iter);
            break;
        }
    }
    Ok(PpoRun { policy, log, reached_target_at: reached })
}

pub fn write_convergence_log<W: Write>(rows: &[ConvergenceRow], w: W) -> Result<(), csv::Error> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}
