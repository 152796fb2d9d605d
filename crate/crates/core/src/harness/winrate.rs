use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::corpus::{oracle_sequence_reward, sample_prompt, OracleSpec, TokenId, TokenSequence, Vocabulary};
use crate::ppo::{sample_responses, Policy};
use crate::rng::derive_seed2;
use crate::scalar::Scalar;

/// Minimum number of prompts for a win-rate estimate.
pub const MIN_PROMPTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Judge {
    /// Prefers the response with the higher ground-truth sequence reward.
    Oracle(OracleSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedMode {
    /// Both policies sample prompt `i` from the same seed.
    Paired,
    /// The reference samples from its own seed stream.
    Independent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinRateReport {
    pub win_rate: f64,
    pub std_error: f64,
    pub n_comparisons: usize,
    pub wins: usize,
    pub ties: usize,
    pub losses: usize,
    /// 1, 0.5 or 0 per prompt.
    pub outcomes: Vec<f64>,
}

impl WinRateReport {
    pub fn from_outcomes(outcomes: Vec<f64>) -> Self {
        let n = outcomes.len();
        let wins = outcomes.iter().filter(|o| **o == 1.0).count();
        let ties = outcomes.iter().filter(|o| **o == 0.5).count();
        let win_rate = (wins as f64 + 0.5 * ties as f64) / n.max(1) as f64;
        let std_error = if n > 1 {
            let var = outcomes.iter().map(|o| (o - win_rate) * (o - win_rate)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        WinRateReport { win_rate, std_error, n_comparisons: n, wins, ties, losses: n - wins - ties, outcomes }
    }
}

/// Evaluation prompts; a pure function of the seed.
pub fn eval_prompts(vocab: &Vocabulary, n: usize, seed: u64) -> Vec<TokenSequence> {
    (0..n as u64).map(|i| sample_prompt(vocab, derive_seed2(seed, 40, i))).collect()
}

/// One temperature-1 sample per prompt from each policy, compared by the
/// judge. Ties score one half.
pub fn win_rate<T: Scalar>(
    vocab: &Vocabulary,
    policy: &Policy<T>,
    reference: &Policy<T>,
    prompts: &[TokenSequence],
    judge: &Judge,
    seeds: SeedMode,
    seed: u64,
) -> Result<WinRateReport, HarnessError> {
    if prompts.len() < MIN_PROMPTS {
        return Err(HarnessError::TooFewPrompts { got: prompts.len(), min: MIN_PROMPTS });
    }
    let ids: Vec<&[TokenId]> = prompts.iter().map(|p| &p.ids[..]).collect();
    let own: Vec<u64> = (0..prompts.len() as u64).map(|i| derive_seed2(seed, 41, i)).collect();
    let other: Vec<u64> = match seeds {
        SeedMode::Paired => own.clone(),
        SeedMode::Independent => (0..prompts.len() as u64).map(|i| derive_seed2(seed, 42, i)).collect(),
    };
    let a = sample_responses(policy, &ids, &own)?;
    let b = sample_responses(reference, &ids, &other)?;
    let Judge::Oracle(spec) = judge;
    let outcomes = a
        .iter()
        .zip(&b)
        .map(|(x, y)| {
            let rx = oracle_sequence_reward(vocab, x, spec)?;
            let ry = oracle_sequence_reward(vocab, y, spec)?;
            Ok(if rx > ry {
                1.0
            } else if rx == ry {
                0.5
            } else {
                0.0
            })
        })
        .collect::<Result<Vec<f64>, HarnessError>>()?;
    Ok(WinRateReport::from_outcomes(outcomes))
}
