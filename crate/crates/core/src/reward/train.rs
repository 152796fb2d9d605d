use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::loss::{batch_loss, LossKind, U0Source};
use super::model::{default_rm_arch, RewardModel};
use super::RewardError;
use crate::corpus::{TokenSequence, Vocabulary};
use crate::editdiff::EditPair;
use crate::encoder::EncoderArch;
use crate::rng::{derive_seed, rng_from};
use crate::scalar::Scalar;
use crate::tensor::{Adam, AdamConfig, Graph};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RmTrainConfig {
    pub loss: LossKind,
    pub u0: U0Source,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub heldout_fraction: f64,
    pub arch: EncoderArch,
    /// Start the token head at exactly zero reward.
    pub zero_head_init: bool,
    pub seed: u64,
}

impl Default for RmTrainConfig {
    fn default() -> Self {
        RmTrainConfig {
            loss: LossKind::Approx,
            u0: U0Source::Edited,
            epochs: 20,
            batch_size: 32,
            adam: AdamConfig::with_lr(1e-3),
            heldout_fraction: 0.1,
            arch: default_rm_arch(),
            zero_head_init: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmEpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub heldout_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedRewardModel<T> {
    pub model: RewardModel<T>,
    pub log: Vec<RmEpochLog>,
    /// Indices into the input dataset used for training and for held-out
    /// evaluation.
    pub train_idx: Vec<usize>,
    pub heldout_idx: Vec<usize>,
}

/// A response pair with a known preferred side.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferencePair {
    pub prompt: TokenSequence,
    pub preferred: TokenSequence,
    pub rejected: TokenSequence,
}

impl From<&EditPair> for PreferencePair {
    fn from(p: &EditPair) -> Self {
        PreferencePair { prompt: p.prompt.clone(), preferred: p.edited.clone(), rejected: p.original.clone() }
    }
}

/// Deterministic train / held-out split of `n` items.
pub fn split_indices(n: usize, heldout_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_from(derive_seed(seed, 1)));
    let held = ((n as f64) * heldout_fraction).round() as usize;
    let held = held.min(n.saturating_sub(1));
    let heldout = idx.split_off(n - held);
    (idx, heldout)
}

/// Fraction of pairs whose preferred side gets the strictly higher
/// whole-response reward; ties count one half.
pub fn rm_accuracy<T: Scalar>(model: &RewardModel<T>, pairs: &[PreferencePair]) -> Result<f64, RewardError> {
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let mut score = 0.0;
    for chunk in pairs.chunks(64) {
        let seqs: Vec<_> = chunk
            .iter()
            .flat_map(|p| [(&p.prompt.ids[..], &p.preferred.ids[..]), (&p.prompt.ids[..], &p.rejected.ids[..])])
            .collect();
        let r = model.batch_trajectory_rewards(&seqs)?;
        for w in r.chunks(2) {
            score += if w[0] > w[1] {
                1.0
            } else if w[0] == w[1] {
                0.5
            } else {
                0.0
            };
        }
    }
    Ok(score / pairs.len() as f64)
}

/// Trains a reward model on edit pairs with Adam, logging the epoch-mean
/// training loss and held-out accuracy.
pub fn train_rm<T: Scalar>(
    vocab: &Vocabulary,
    dataset: &[EditPair],
    config: &RmTrainConfig,
) -> Result<TrainedRewardModel<T>, RewardError> {
    if dataset.is_empty() {
        return Err(RewardError::EmptyDataset);
    }
    let (train_idx, heldout_idx) = split_indices(dataset.len(), config.heldout_fraction, config.seed);
    let heldout: Vec<PreferencePair> = heldout_idx.iter().map(|i| PreferencePair::from(&dataset[*i])).collect();
    let mut model = RewardModel::<T>::new(
        vocab,
        config.arch,
        config.loss.head(),
        derive_seed(config.seed, 2),
        config.zero_head_init,
    );
    let mut opt = Adam::new(config.adam, &model.params);
    let mut order = train_idx.clone();
    let mut shuffle_rng = rng_from(derive_seed(config.seed, 3));
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size.max(1)) {
            let batch: Vec<&EditPair> = chunk.iter().map(|i| &dataset[*i]).collect();
            let mut g = Graph::new();
            let loss = batch_loss(&mut g, &model, &model.params, &batch, config.loss, config.u0)?;
            let value = g.scalar(loss);
            if !value.is_finite() {
                return Err(RewardError::NonFiniteLoss { epoch, batch: batches });
            }
            let grads = g.backward(loss)?;
            let grads = g.param_grads(&model.params, &grads);
            opt.step(&mut model.params, &grads)?;
            total += value.as_f64();
            batches += 1;
        }
        let heldout_accuracy = rm_accuracy(&model, &heldout)?;
        let entry = RmEpochLog { epoch, loss: total / batches.max(1) as f64, heldout_accuracy };
        log::debug!("rm epoch {epoch}: loss {:.5} heldout acc {:.4}", entry.loss, entry.heldout_accuracy);
        log.push(entry);
    }
    Ok(TrainedRewardModel { model, log, train_idx, heldout_idx })
}
