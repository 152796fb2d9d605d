use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::policy::Policy;
use super::rollout::Trajectory;
use super::{PpoConfig, PpoError};
use crate::encoder::{EncodeItem, Positions};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{Adam, Graph, Matrix, ParamStore, Var};

/// Generalized advantage estimation by the backward recursion
/// `A_t = δ_t + γλ·A_{t+1}` with `δ_t = r_t + γ·V_{t+1} − V_t`.
/// Returns `(advantages, returns)` with `returns_t = A_t + V_t`.
pub fn gae<T: Scalar>(
    rewards: &[T],
    values: &[T],
    bootstrap: T,
    gamma: T,
    lambda: T,
) -> Result<(Vec<T>, Vec<T>), PpoError> {
    if rewards.len() != values.len() {
        return Err(PpoError::LengthMismatch { expected: rewards.len(), actual: values.len() });
    }
    let n = rewards.len();
    let mut adv = vec![T::zero(); n];
    let mut next_value = bootstrap;
    let mut next_adv = T::zero();
    for t in (0..n).rev() {
        let delta = rewards[t] + gamma * next_value - values[t];
        next_adv = delta + gamma * lambda * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    let ret = adv.iter().zip(values).map(|(a, v)| *a + *v).collect();
    Ok((adv, ret))
}

/// Standardises to mean 0 and standard deviation 1, with the deviation
/// floored at `1e-8`.
pub fn whiten<T: Scalar>(xs: &[T]) -> Vec<T> {
    if xs.is_empty() {
        return Vec::new();
    }
    let n = T::of_usize(xs.len());
    let mean = xs.iter().copied().sum::<T>() / n;
    let var = xs.iter().map(|x| (*x - mean) * (*x - mean)).sum::<T>() / n;
    let std = var.sqrt().max(T::of(1e-8));
    xs.iter().map(|x| (*x - mean) / std).collect()
}

/// Graph nodes of the PPO objective for one minibatch.
#[derive(Debug, Clone, Copy)]
pub struct PpoObjective {
    /// `policy_loss + c_v·value_loss`, minimised.
    pub total: Var,
    /// `−mean_t min(ρ_t A_t, clip(ρ_t, 1−ε, 1+ε) A_t)`.
    pub policy_loss: Var,
    /// `mean_t (V(s_t) − return_t)²`.
    pub value_loss: Var,
    pub ratio: Var,
}

/// Records the clipped-surrogate objective for `trajs`, with `advantages`
/// given per trajectory (already whitened).
pub fn ppo_objective<T: Scalar>(
    g: &mut Graph<T>,
    policy: &Policy<T>,
    params: &ParamStore<T>,
    trajs: &[&Trajectory<T>],
    advantages: &[&[T]],
    config: &PpoConfig,
) -> Result<PpoObjective, PpoError> {
    let items: Vec<EncodeItem<'_>> = trajs
        .iter()
        .map(|t| EncodeItem { prompt: &t.prompt, response: &t.actions, positions: Positions::Range(0, t.len()) })
        .collect();
    let actions: Vec<usize> = trajs.iter().flat_map(|t| t.actions.iter().map(|a| a.index())).collect();
    let old: Vec<T> = trajs.iter().flat_map(|t| t.logprobs.iter().copied()).collect();
    let adv: Vec<T> = advantages.iter().flat_map(|a| a.iter().copied()).collect();
    let ret: Vec<T> = trajs.iter().flat_map(|t| t.returns.iter().copied()).collect();
    if actions.is_empty() {
        return Err(PpoError::EmptyBatch);
    }
    if adv.len() != actions.len() || ret.len() != actions.len() || old.len() != actions.len() {
        return Err(PpoError::LengthMismatch { expected: actions.len(), actual: adv.len() });
    }

    let out = policy.forward_with(g, params, &items)?;
    let lp = g.gather(out.logp, actions)?;
    let old = g.input(Matrix::column(old))?;
    let diff = g.sub(lp, old)?;
    let ratio = g.exp(diff)?;
    let adv = g.input(Matrix::column(adv))?;
    let eps = T::of(config.clip_eps);
    let surr1 = g.mul(ratio, adv)?;
    let clipped = g.clip(ratio, T::one() - eps, T::one() + eps);
    let surr2 = g.mul(clipped, adv)?;
    let surr = g.minimum(surr1, surr2)?;
    let surr = g.mean(surr)?;
    let policy_loss = g.scale(surr, -T::one());

    let ret = g.input(Matrix::column(ret))?;
    let err = g.sub(out.value, ret)?;
    let sq = g.square(err);
    let value_loss = g.mean(sq)?;
    let weighted = g.scale(value_loss, T::of(config.value_coef));
    let total = g.add(policy_loss, weighted)?;
    Ok(PpoObjective { total, policy_loss, value_loss, ratio })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    /// Means over all minibatch steps.
    pub policy_loss: f64,
    pub value_loss: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
    /// Largest `|ρ_t − 1|` seen on the very first minibatch; 0 when the
    /// behaviour log-probs are reproduced exactly.
    pub first_ratio_deviation: f64,
    pub steps: usize,
}

/// `epochs` passes over the batch in shuffled minibatches of
/// `minibatch_size` trajectories, clipping the global gradient norm before
/// every Adam step.
pub fn ppo_update<T: Scalar>(
    policy: &mut Policy<T>,
    opt: &mut Adam<T>,
    batch: &[Trajectory<T>],
    config: &PpoConfig,
    rng: &mut Rng,
) -> Result<UpdateStats, PpoError> {
    if batch.is_empty() {
        return Err(PpoError::EmptyBatch);
    }
    let flat: Vec<T> = batch.iter().flat_map(|t| t.advantages.iter().copied()).collect();
    let white = whiten(&flat);
    let mut per_traj = Vec::with_capacity(batch.len());
    let mut offset = 0;
    for t in batch {
        per_traj.push(&white[offset..offset + t.len()]);
        offset += t.len();
    }

    let mut order: Vec<usize> = (0..batch.len()).collect();
    let mut stats = UpdateStats {
        policy_loss: 0.0,
        value_loss: 0.0,
        clip_fraction: 0.0,
        grad_norm: 0.0,
        first_ratio_deviation: 0.0,
        steps: 0,
    };
    let eps = config.clip_eps;
    for epoch in 0..config.epochs {
        order.shuffle(rng);
        for (mb, chunk) in order.chunks(config.minibatch_size.max(1)).enumerate() {
            let trajs: Vec<&Trajectory<T>> = chunk.iter().map(|i| &batch[*i]).collect();
            let advs: Vec<&[T]> = chunk.iter().map(|i| per_traj[*i]).collect();
            let mut g = Graph::new();
            let obj = ppo_objective(&mut g, policy, &policy.params, &trajs, &advs, config)?;
            let total = g.scalar(obj.total).as_f64();
            if !total.is_finite() {
                return Err(PpoError::NonFiniteLoss {
                    epoch,
                    minibatch: mb,
                    detail: format!(
                        "policy_loss={} value_loss={}",
                        g.scalar(obj.policy_loss).as_f64(),
                        g.scalar(obj.value_loss).as_f64()
                    ),
                });
            }
            let ratios = &g.value(obj.ratio).data;
            if stats.steps == 0 {
                stats.first_ratio_deviation =
                    ratios.iter().map(|r| (r.as_f64() - 1.0).abs()).fold(0.0, f64::max);
            }
            let clipped = ratios.iter().filter(|r| (r.as_f64() - 1.0).abs() > eps).count();
            stats.clip_fraction += clipped as f64 / ratios.len() as f64;
            stats.policy_loss += g.scalar(obj.policy_loss).as_f64();
            stats.value_loss += g.scalar(obj.value_loss).as_f64();

            let grads = g.backward(obj.total)?;
            let mut grads = g.param_grads(&policy.params, &grads);
            if !grads.all_finite() {
                return Err(PpoError::NonFiniteLoss { epoch, minibatch: mb, detail: "non-finite gradient".into() });
            }
            let norm = grads.clip_global_norm(T::of(config.max_grad_norm));
            stats.grad_norm += norm.as_f64();
            opt.step(&mut policy.params, &grads)?;
            stats.steps += 1;
        }
    }
    let n = stats.steps.max(1) as f64;
    stats.policy_loss /= n;
    stats.value_loss /= n;
    stats.clip_fraction /= n;
    stats.grad_norm /= n;
    Ok(stats)
}
