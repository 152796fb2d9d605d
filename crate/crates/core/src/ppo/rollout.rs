use rand::Rng as _;

use super::policy::Policy;
use super::{PpoConfig, PpoError, RewardScheme};
use crate::corpus::{TokenId, L_MAX};
use crate::encoder::{EncodeItem, Positions};
use crate::reward::{HeadKind, RewardModel};
use crate::rng::{rng_from, Rng};
use crate::scalar::Scalar;
use crate::tensor::TensorError;

/// One sampled response viewed as an episode. `values[t]` is `V(s_t)`;
/// `bootstrap` is `V(s_{T+1})`, always 0 because both EOS and the length
/// cap end the episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T> {
    pub prompt: Vec<TokenId>,
    pub actions: Vec<TokenId>,
    /// `log π_θ(a_t | s_t)` under the behaviour policy.
    pub logprobs: Vec<T>,
    pub ref_logprobs: Vec<T>,
    /// Exact per-state `KL(π_θ(·|s_t) ‖ π_ref(·|s_t))`, for monitoring.
    pub state_kl: Vec<T>,
    pub values: Vec<T>,
    pub bootstrap: T,
    pub rewards: Vec<T>,
    /// Reward-model score of the whole response.
    pub rm_score: T,
    pub advantages: Vec<T>,
    pub returns: Vec<T>,
}

impl<T: Scalar> Trajectory<T> {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn ended_with_eos(&self, eos: TokenId) -> bool {
        self.actions.last() == Some(&eos)
    }
}

fn sample_index<T: Scalar>(logp: &[T], rng: &mut Rng) -> usize {
    let probs: Vec<f64> = logp.iter().map(|l| l.as_f64().exp()).collect();
    let total: f64 = probs.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    let mut last = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p > 0.0 {
            last = i;
            if u < *p {
                return i;
            }
            u -= *p;
        }
    }
    last
}

fn kl<T: Scalar>(logp: &[T], ref_logp: &[T]) -> T {
    logp.iter().zip(ref_logp).map(|(a, b)| a.exp() * (*a - *b)).sum()
}

/// Samples one response per prompt at temperature 1, each from its own RNG
/// seeded by `seeds[i]`. Trajectories are advanced in lockstep for speed, but
/// every row is computed independently, so a trajectory does not depend on
/// what else is in the batch. Rewards, advantages and returns are filled in.
pub fn rollout_batch<T: Scalar>(
    policy: &Policy<T>,
    reference: &Policy<T>,
    reward_model: &RewardModel<T>,
    prompts: &[&[TokenId]],
    seeds: &[u64],
    config: &PpoConfig,
) -> Result<Vec<Trajectory<T>>, PpoError> {
    check_scheme(reward_model, config.scheme)?;
    if policy.vocab_size() != reference.vocab_size() {
        return Err(PpoError::InvalidConfig("policy and reference vocabularies differ".into()));
    }
    assert_eq!(prompts.len(), seeds.len(), "one seed per prompt");
    let mut rngs: Vec<Rng> = seeds.iter().map(|s| rng_from(*s)).collect();
    let mut trajs: Vec<Trajectory<T>> = prompts
        .iter()
        .map(|p| Trajectory {
            prompt: p.to_vec(),
            actions: Vec::new(),
            logprobs: Vec::new(),
            ref_logprobs: Vec::new(),
            state_kl: Vec::new(),
            values: Vec::new(),
            bootstrap: T::zero(),
            rewards: Vec::new(),
            rm_score: T::zero(),
            advantages: Vec::new(),
            returns: Vec::new(),
        })
        .collect();
    let mut active: Vec<usize> = (0..trajs.len()).collect();
    for t in 0..L_MAX {
        if active.is_empty() {
            break;
        }
        let items: Vec<EncodeItem<'_>> = active
            .iter()
            .map(|i| EncodeItem { prompt: &trajs[*i].prompt, response: &trajs[*i].actions, positions: Positions::Single(t) })
            .collect();
        let (logp, values) = policy.evaluate(&items)?;
        let (ref_logp, _) = reference.evaluate(&items)?;
        drop(items);
        let mut still = Vec::with_capacity(active.len());
        for (row, i) in active.iter().enumerate() {
            let lp = logp.row(row);
            let rlp = ref_logp.row(row);
            let a = sample_index(lp, &mut rngs[*i]);
            let tr = &mut trajs[*i];
            tr.actions.push(TokenId::from(a));
            tr.logprobs.push(lp[a]);
            tr.ref_logprobs.push(rlp[a]);
            tr.state_kl.push(kl(lp, rlp));
            tr.values.push(values[row]);
            if TokenId::from(a) != policy.eos() && tr.actions.len() < L_MAX {
                still.push(*i);
            }
        }
        active = still;
    }
    finish_trajectories(&mut trajs, reward_model, config)?;
    Ok(trajs)
}

/// Single-trajectory rollout driven by `rng`.
pub fn rollout<T: Scalar>(
    policy: &Policy<T>,
    reference: &Policy<T>,
    reward_model: &RewardModel<T>,
    prompt: &[TokenId],
    config: &PpoConfig,
    rng: &mut Rng,
) -> Result<Trajectory<T>, PpoError> {
    let seed = rng.gen::<u64>();
    Ok(rollout_batch(policy, reference, reward_model, &[prompt], &[seed], config)?.remove(0))
}

pub(crate) fn check_scheme<T: Scalar>(rm: &RewardModel<T>, scheme: RewardScheme) -> Result<(), PpoError> {
    let want = match scheme {
        RewardScheme::TokenLevel => HeadKind::TokenLevel,
        RewardScheme::SequenceTerminal => HeadKind::SequenceLevel,
    };
    if rm.head == want {
        Ok(())
    } else {
        Err(PpoError::HeadSchemeMismatch { scheme, head: rm.head })
    }
}

/// Per-token reward vector.
///
/// Token level: `r_t = R_t − β·kl_t`. Sequence terminal: `r_t = −β·kl_t`,
/// plus the sequence score on the last token. `kl_t` is the sampled
/// log-ratio `log π_θ(a_t|s_t) − log π_ref(a_t|s_t)`.
pub fn assign_rewards<T: Scalar>(
    traj: &Trajectory<T>,
    reward_model: &RewardModel<T>,
    ref_logprobs: &[T],
    config: &PpoConfig,
) -> Result<Vec<T>, PpoError> {
    Ok(assign_rewards_batch(std::slice::from_ref(traj), &[ref_logprobs], reward_model, config)?.remove(0).0)
}

fn assign_rewards_batch<T: Scalar>(
    trajs: &[Trajectory<T>],
    ref_logprobs: &[&[T]],
    reward_model: &RewardModel<T>,
    config: &PpoConfig,
) -> Result<Vec<(Vec<T>, T)>, PpoError> {
    check_scheme(reward_model, config.scheme)?;
    for (tr, r) in trajs.iter().zip(ref_logprobs) {
        if tr.logprobs.len() != tr.actions.len() || r.len() != tr.actions.len() {
            return Err(PpoError::LengthMismatch { expected: tr.actions.len(), actual: r.len() });
        }
    }
    let seqs: Vec<(&[TokenId], &[TokenId])> = trajs.iter().map(|t| (&t.prompt[..], &t.actions[..])).collect();
    let beta = T::of(config.kl_coef);
    let penalty = |tr: &Trajectory<T>, r: &[T]| -> Vec<T> {
        tr.logprobs.iter().zip(r).map(|(lp, rlp)| -(beta * (*lp - *rlp))).collect()
    };
    let mut out = Vec::with_capacity(trajs.len());
    match config.scheme {
        RewardScheme::TokenLevel => {
            let traces = reward_model.batch_token_rewards(&seqs)?;
            for ((tr, r), trace) in trajs.iter().zip(ref_logprobs).zip(traces) {
                let mut rewards = penalty(tr, r);
                for (x, big_r) in rewards.iter_mut().zip(&trace.rewards) {
                    *x += *big_r;
                }
                out.push((rewards, trace.trajectory_reward));
            }
        }
        RewardScheme::SequenceTerminal => {
            let scores = reward_model.batch_sequence_scores(&seqs)?;
            for ((tr, r), score) in trajs.iter().zip(ref_logprobs).zip(scores) {
                let mut rewards = penalty(tr, r);
                *rewards.last_mut().expect("non-empty trajectory") += score;
                out.push((rewards, score));
            }
        }
    }
    Ok(out)
}

fn finish_trajectories<T: Scalar>(
    trajs: &mut [Trajectory<T>],
    reward_model: &RewardModel<T>,
    config: &PpoConfig,
) -> Result<(), PpoError> {
    let refs: Vec<Vec<T>> = trajs.iter().map(|t| t.ref_logprobs.clone()).collect();
    let ref_slices: Vec<&[T]> = refs.iter().map(Vec::as_slice).collect();
    let assigned = assign_rewards_batch(trajs, &ref_slices, reward_model, config)?;
    for (tr, (rewards, score)) in trajs.iter_mut().zip(assigned) {
        let (adv, ret) = super::gae(&rewards, &tr.values, tr.bootstrap, T::of(config.gamma), T::of(config.lambda))?;
        tr.rewards = rewards;
        tr.rm_score = score;
        tr.advantages = adv;
        tr.returns = ret;
    }
    Ok(())
}

/// Samples responses without rewards or bookkeeping. Consumes each RNG
/// exactly as [`rollout_batch`] does, so the same seed gives the same
/// tokens.
pub fn sample_responses<T: Scalar>(
    policy: &Policy<T>,
    prompts: &[&[TokenId]],
    seeds: &[u64],
) -> Result<Vec<Vec<TokenId>>, TensorError> {
    assert_eq!(prompts.len(), seeds.len(), "one seed per prompt");
    let mut rngs: Vec<Rng> = seeds.iter().map(|s| rng_from(*s)).collect();
    let mut out: Vec<Vec<TokenId>> = vec![Vec::new(); prompts.len()];
    let mut active: Vec<usize> = (0..prompts.len()).collect();
    for t in 0..L_MAX {
        if active.is_empty() {
            break;
        }
        let items: Vec<EncodeItem<'_>> = active
            .iter()
            .map(|i| EncodeItem { prompt: prompts[*i], response: &out[*i], positions: Positions::Single(t) })
            .collect();
        let (logp, _) = policy.evaluate(&items)?;
        drop(items);
        let mut still = Vec::with_capacity(active.len());
        for (row, i) in active.iter().enumerate() {
            let a = TokenId::from(sample_index(logp.row(row), &mut rngs[*i]));
            out[*i].push(a);
            if a != policy.eos() && out[*i].len() < L_MAX {
                still.push(*i);
            }
        }
        active = still;
    }
    Ok(out)
}
