use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::corpus::{sample_prompt, ResponseGenerator, TokenSequence, Vocabulary};
use crate::encoder::{EncodeItem, EncoderArch, Positions};
use crate::ppo::{default_policy_arch, Policy};
use crate::rng::{derive_seed, derive_seed2, rng_from};
use crate::scalar::Scalar;
use crate::tensor::{Adam, AdamConfig, Graph, ParamStore, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SftConfig {
    pub demonstrations: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub heldout_fraction: f64,
    pub generator: ResponseGenerator,
    pub arch: EncoderArch,
    pub seed: u64,
}

impl Default for SftConfig {
    fn default() -> Self {
        SftConfig {
            demonstrations: 2000,
            epochs: 8,
            batch_size: 32,
            adam: AdamConfig::with_lr(3e-3),
            heldout_fraction: 0.1,
            generator: ResponseGenerator::demonstrations(),
            arch: default_policy_arch(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftEpochLog {
    pub epoch: usize,
    pub train_nll: f64,
    pub heldout_perplexity: f64,
}

#[derive(Debug, Clone)]
pub struct SftResult<T> {
    pub policy: Policy<T>,
    pub log: Vec<SftEpochLog>,
}

/// `(prompt, response)` demonstrations; a pure function of the seed.
pub fn demonstrations(vocab: &Vocabulary, config: &SftConfig) -> Vec<(TokenSequence, TokenSequence)> {
    (0..config.demonstrations as u64)
        .map(|i| {
            let prompt = sample_prompt(vocab, derive_seed2(config.seed, 20, i));
            let mut rng = rng_from(derive_seed2(config.seed, 21, i));
            (prompt, config.generator.sample(vocab, &mut rng))
        })
        .collect()
}

/// Mean token negative log-likelihood of `batch` under `params`.
pub fn nll_loss<T: Scalar>(
    g: &mut Graph<T>,
    policy: &Policy<T>,
    params: &ParamStore<T>,
    batch: &[&(TokenSequence, TokenSequence)],
) -> Result<Var, HarnessError> {
    let items: Vec<EncodeItem<'_>> = batch
        .iter()
        .map(|(p, r)| EncodeItem { prompt: &p.ids, response: &r.ids, positions: Positions::Range(0, r.len()) })
        .collect();
    let targets: Vec<usize> = batch.iter().flat_map(|(_, r)| r.ids.iter().map(|t| t.index())).collect();
    let out = policy.forward_with(g, params, &items)?;
    let lp = g.gather(out.logp, targets)?;
    let mean = g.mean(lp)?;
    Ok(g.scale(mean, -T::one()))
}

fn mean_nll<T: Scalar>(policy: &Policy<T>, data: &[&(TokenSequence, TokenSequence)]) -> Result<f64, HarnessError> {
    let mut total = 0.0;
    let mut tokens = 0usize;
    for chunk in data.chunks(128) {
        let n: usize = chunk.iter().map(|(_, r)| r.len()).sum();
        let mut g = Graph::new();
        let l = nll_loss(&mut g, policy, &policy.params, chunk)?;
        total += g.scalar(l).as_f64() * n as f64;
        tokens += n;
    }
    Ok(total / tokens.max(1) as f64)
}

/// Maximum-likelihood pre-training on demonstrations, standing in for
/// supervised fine-tuning. Logs held-out perplexity per epoch.
pub fn sft_pretrain<T: Scalar>(vocab: &Vocabulary, config: &SftConfig) -> Result<SftResult<T>, HarnessError> {
    let data = demonstrations(vocab, config);
    let held = ((data.len() as f64) * config.heldout_fraction).round() as usize;
    let (train, heldout) = data.split_at(data.len() - held.min(data.len()));
    let heldout: Vec<_> = heldout.iter().collect();
    let mut policy = Policy::<T>::new(vocab, config.arch, derive_seed(config.seed, 22));
    let mut opt = Adam::new(config.adam, &policy.params);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut rng = rng_from(derive_seed(config.seed, 23));
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(config.batch_size.max(1)) {
            let batch: Vec<_> = chunk.iter().map(|i| &train[*i]).collect();
            let mut g = Graph::new();
            let loss = nll_loss(&mut g, &policy, &policy.params, &batch)?;
            let grads = g.backward(loss)?;
            let grads = g.param_grads(&policy.params, &grads);
            opt.step(&mut policy.params, &grads)?;
            total += g.scalar(loss).as_f64();
            batches += 1;
        }
        let heldout_perplexity = if heldout.is_empty() { f64::NAN } else { mean_nll(&policy, &heldout)?.exp() };
        log.push(SftEpochLog { epoch, train_nll: total / batches.max(1) as f64, heldout_perplexity });
    }
    Ok(SftResult { policy, log })
}
