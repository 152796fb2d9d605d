//! Token-level PPO: a causal policy with a value head, rollouts, the two
//! reward-assignment schemes, GAE and clipped updates.

mod policy;
mod rollout;
mod train;
mod update;

pub use policy::{default_policy_arch, Policy, PolicyOutput};
pub use rollout::{assign_rewards, rollout, rollout_batch, sample_responses, Trajectory};
pub use train::{
    iteration_prompts, mean_oracle_reward, mean_state_kl, train_ppo, write_convergence_log, ConvergenceRow, PpoRun,
};
pub use update::{gae, ppo_objective, ppo_update, whiten, PpoObjective, UpdateStats};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::reward::{HeadKind, RewardError};
use crate::tensor::{AdamConfig, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardScheme {
    /// `[R_1 − β·kl_1, …, R_T − β·kl_T]` from a token-level reward model.
    TokenLevel,
    /// `[−β·kl_1, …, R − β·kl_T]` from a sequence-level reward model.
    SequenceTerminal,
}

impl RewardScheme {
    pub fn as_str(self) -> &'static str {
        match self {
            RewardScheme::TokenLevel => "token_level",
            RewardScheme::SequenceTerminal => "sequence_terminal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub clip_eps: f64,
    pub kl_coef: f64,
    pub scheme: RewardScheme,
    pub epochs: usize,
    /// Trajectories per minibatch.
    pub minibatch_size: usize,
    /// Trajectories sampled per iteration.
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub max_grad_norm: f64,
    pub value_coef: f64,
    pub max_iters: usize,
    pub target_oracle_reward: f64,
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            gamma: 1.0,
            lambda: 0.95,
            clip_eps: 0.2,
            kl_coef: 0.02,
            scheme: RewardScheme::TokenLevel,
            epochs: 4,
            minibatch_size: 8,
            batch_size: 32,
            adam: AdamConfig::with_lr(1e-4),
            max_grad_norm: 1.0,
            value_coef: 0.5,
            max_iters: 200,
            target_oracle_reward: 0.5,
            seed: 0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), PpoError> {
        let bad = |m: &str| Err(PpoError::InvalidConfig(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must be in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad("lambda must be in [0, 1]");
        }
        if !(self.clip_eps > 0.0) {
            return bad("clip_eps must be positive");
        }
        if !(self.kl_coef >= 0.0) {
            return bad("kl_coef must be non-negative");
        }
        if self.batch_size == 0 || self.minibatch_size == 0 {
            return bad("batch sizes must be positive");
        }
        if !(self.adam.lr > 0.0) || !(self.max_grad_norm > 0.0) {
            return bad("lr and max_grad_norm must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PpoError {
    #[error("reward scheme {scheme:?} needs the other reward head (got {head:?})")]
    HeadSchemeMismatch { scheme: RewardScheme, head: HeadKind },
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("non-finite PPO loss at epoch {epoch}, minibatch {minibatch}: {detail}")]
    NonFiniteLoss { epoch: usize, minibatch: usize, detail: String },
    #[error("invalid PPO config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[cfg(test)]
mod tests {
    use rand::Rng as _;

    use super::*;
    use crate::corpus::{sample_prompt, OracleSpec, TokenId, Vocabulary, L_MAX};
    use crate::reward::{default_rm_arch, RewardModel};
    use crate::rng::rng_from;
    use crate::tensor::{grad_check, Adam, GradCheckConfig, Graph, ParamStore};

    fn vocab() -> Vocabulary {
        Vocabulary::standard()
    }

    fn prompts(v: &Vocabulary, n: usize) -> Vec<Vec<TokenId>> {
        (0..n).map(|i| sample_prompt(v, 100 + i as u64).ids).collect()
    }

    fn batch(
        policy: &Policy<f64>,
        reference: &Policy<f64>,
        rm: &RewardModel<f64>,
        n: usize,
        config: &PpoConfig,
    ) -> Vec<Trajectory<f64>> {
        let v = vocab();
        let ps = prompts(&v, n);
        let refs: Vec<&[TokenId]> = ps.iter().map(|p| &p[..]).collect();
        let seeds: Vec<u64> = (0..n as u64).collect();
        rollout_batch(policy, reference, rm, &refs, &seeds, config).unwrap()
    }

    fn double_sum_gae(r: &[f64], v: &[f64], boot: f64, gamma: f64, lambda: f64) -> Vec<f64> {
        let n = r.len();
        let next = |t: usize| if t + 1 < n { v[t + 1] } else { boot };
        let delta: Vec<f64> = (0..n).map(|t| r[t] + gamma * next(t) - v[t]).collect();
        (0..n)
            .map(|t| (t..n).map(|k| (gamma * lambda).powi((k - t) as i32) * delta[k]).sum())
            .collect()
    }

    #[test]
    fn gae_examples() {
        let (a, r) = gae(&[1.0, 0.0], &[0.0, 0.0], 0.0, 1.0, 1.0).unwrap();
        assert_eq!(a, vec![1.0, 0.0]);
        assert_eq!(r, vec![1.0, 0.0]);
        let rewards = [0.3, -0.2, 0.9, 0.1];
        let values = [0.5, 0.1, -0.4, 0.2];
        let (a, _) = gae(&rewards, &values, 0.7, 0.9, 0.0).unwrap();
        for t in 0..4 {
            let next = if t < 3 { values[t + 1] } else { 0.7 };
            assert_eq!(a[t], rewards[t] + 0.9 * next - values[t]);
        }
        assert_eq!(gae(&[1.0], &[0.0, 0.0], 0.0, 1.0, 1.0), Err(PpoError::LengthMismatch { expected: 1, actual: 2 }));
    }

    #[test]
    fn gae_matches_double_sum() {
        let mut rng = rng_from(5);
        for _ in 0..300 {
            let n = rng.gen_range(1..=10);
            let r: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let boot = if rng.gen_bool(0.5) { 0.0 } else { rng.gen_range(-1.0..1.0) };
            let gamma = [0.5, 0.95, 1.0][rng.gen_range(0..3)];
            let lambda = [0.0, 0.5, 0.95, 1.0][rng.gen_range(0..4)];
            let (a, ret) = gae(&r, &v, boot, gamma, lambda).unwrap();
            let oracle = double_sum_gae(&r, &v, boot, gamma, lambda);
            for t in 0..n {
                assert!((a[t] - oracle[t]).abs() < 1e-12);
                assert_eq!(ret[t], a[t] + v[t]);
            }
        }
    }

    #[test]
    fn whitening() {
        let w = whiten(&[1.0, 2.0, 3.0, 6.0]);
        let m: f64 = w.iter().sum::<f64>() / 4.0;
        let s: f64 = (w.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 4.0).sqrt();
        assert!(m.abs() < 1e-15 && (s - 1.0).abs() < 1e-12);
        assert_eq!(whiten(&[0.0, 0.0]), vec![0.0, 0.0]);
        assert_eq!(whiten(&[2.5; 3]), vec![0.0; 3]);
    }

    #[test]
    fn config_validation() {
        assert!(PpoConfig::default().validate().is_ok());
        for c in [
            PpoConfig { gamma: 0.0, ..Default::default() },
            PpoConfig { lambda: 1.5, ..Default::default() },
            PpoConfig { clip_eps: 0.0, ..Default::default() },
            PpoConfig { kl_coef: -1.0, ..Default::default() },
        ] {
            assert!(matches!(c.validate(), Err(PpoError::InvalidConfig(_))));
        }
    }

    fn setup(head: HeadKind) -> (Policy<f64>, Policy<f64>, RewardModel<f64>) {
        let v = vocab();
        let p = Policy::new(&v, default_policy_arch(), 1);
        let r = Policy::new(&v, default_policy_arch(), 2);
        let rm = RewardModel::new(&v, default_rm_arch(), head, 3, false);
        (p, r, rm)
    }

    #[test]
    fn rollouts_are_deterministic_and_terminate() {
        let v = vocab();
        let (p, r, rm) = setup(HeadKind::TokenLevel);
        let cfg = PpoConfig::default();
        let a = batch(&p, &r, &rm, 24, &cfg);
        let b = batch(&p, &r, &rm, 24, &cfg);
        assert_eq!(a, b);
        for t in &a {
            assert!(t.ended_with_eos(v.eos()) || t.len() == L_MAX);
            assert!(t.len() <= L_MAX && !t.is_empty());
            assert_eq!(t.rewards.len(), t.len());
            assert_eq!(t.advantages.len(), t.len());
            assert_eq!(t.values.len(), t.len());
            assert!(t.actions[..t.len() - 1].iter().all(|x| *x != v.eos()));
        }
        // A trajectory does not depend on its batch mates.
        let ps = prompts(&v, 24);
        let single = rollout_batch(&p, &r, &rm, &[&ps[7][..]], &[7], &cfg).unwrap();
        assert_eq!(single[0], a[7]);
        let one = rollout(&p, &r, &rm, &ps[0], &cfg, &mut rng_from(9)).unwrap();
        assert_eq!(one, rollout(&p, &r, &rm, &ps[0], &cfg, &mut rng_from(9)).unwrap());
    }

    #[test]
    fn reward_scheme_identities() {
        let (p, r, rm_tok) = setup(HeadKind::TokenLevel);
        let (_, _, rm_seq) = setup(HeadKind::SequenceLevel);
        let cfg_tok = PpoConfig { kl_coef: 0.0, ..Default::default() };
        let cfg_seq = PpoConfig { kl_coef: 0.0, scheme: RewardScheme::SequenceTerminal, ..Default::default() };
        for t in batch(&p, &r, &rm_tok, 8, &cfg_tok) {
            let trace = rm_tok.token_rewards(&t.prompt, &t.actions).unwrap();
            assert_eq!(assign_rewards(&t, &rm_tok, &t.ref_logprobs, &cfg_tok).unwrap(), trace.rewards);
            let s: f64 = t.rewards.iter().sum();
            assert!((s - t.len() as f64 * trace.trajectory_reward).abs() < 1e-12);
        }
        for t in batch(&p, &r, &rm_seq, 8, &cfg_seq) {
            let score = rm_seq.sequence_score(&t.prompt, &t.actions).unwrap();
            let n = t.len();
            assert!(t.rewards[..n - 1].iter().all(|x| *x == 0.0));
            assert_eq!(t.rewards[n - 1], score);
            assert_eq!(t.rewards.iter().sum::<f64>(), score);
        }
        assert!(matches!(
            assign_rewards(&batch(&p, &r, &rm_tok, 1, &cfg_tok)[0], &rm_seq, &[], &cfg_tok),
            Err(PpoError::HeadSchemeMismatch { .. })
        ));
        let ps = prompts(&vocab(), 1);
        assert!(matches!(
            rollout_batch(&p, &r, &rm_tok, &[&ps[0][..]], &[0], &cfg_seq),
            Err(PpoError::HeadSchemeMismatch { .. })
        ));
    }

    #[test]
    fn kl_penalty_and_identical_policies() {
        let (p, r, rm) = setup(HeadKind::TokenLevel);
        let cfg = PpoConfig { kl_coef: 0.5, ..Default::default() };
        for t in batch(&p, &r, &rm, 6, &cfg) {
            let trace = rm.token_rewards(&t.prompt, &t.actions).unwrap();
            for i in 0..t.len() {
                let want = trace.rewards[i] - 0.5 * (t.logprobs[i] - t.ref_logprobs[i]);
                assert!((t.rewards[i] - want).abs() < 1e-15);
            }
        }
        // Same parameters on both sides: every kl_t is zero.
        for t in batch(&p, &p, &rm, 6, &cfg) {
            assert_eq!(t.logprobs, t.ref_logprobs);
            assert!(t.state_kl.iter().all(|k| *k == 0.0));
            assert_eq!(t.rewards, rm.token_rewards(&t.prompt, &t.actions).unwrap().rewards);
        }
    }

    #[test]
    fn first_update_ratio_is_exactly_one() {
        let (mut p, r, rm) = setup(HeadKind::TokenLevel);
        let cfg = PpoConfig::default();
        let b = batch(&p, &r, &rm, 16, &cfg);
        let mut opt = Adam::new(cfg.adam, &p.params);
        let stats = ppo_update(&mut p, &mut opt, &b, &cfg, &mut rng_from(0)).unwrap();
        assert_eq!(stats.first_ratio_deviation, 0.0);
        assert_eq!(stats.steps, 4 * 2);

        // With whitened advantages the first surrogate is their mean, i.e. 0.
        let (p0, _, _) = setup(HeadKind::TokenLevel);
        let flat: Vec<f64> = b.iter().flat_map(|t| t.advantages.clone()).collect();
        let white = whiten(&flat);
        let mut off = 0;
        let advs: Vec<&[f64]> = b
            .iter()
            .map(|t| {
                let s = &white[off..off + t.len()];
                off += t.len();
                s
            })
            .collect();
        let trajs: Vec<&Trajectory<f64>> = b.iter().collect();
        let mut g = Graph::new();
        let obj = ppo_objective(&mut g, &p0, &p0.params, &trajs, &advs, &cfg).unwrap();
        assert!(g.value(obj.ratio).data.iter().all(|x| *x == 1.0));
        assert!(g.scalar(obj.policy_loss).abs() < 1e-12);
    }

    fn shifted(t: &Trajectory<f64>, shift: f64) -> Trajectory<f64> {
        let mut t = t.clone();
        for l in &mut t.logprobs {
            *l -= shift;
        }
        t
    }

    #[test]
    fn clipped_surrogate_by_hand() {
        let (p, _, rm) = setup(HeadKind::TokenLevel);
        let cfg = PpoConfig::default();
        let t = batch(&p, &p, &rm, 1, &cfg).remove(0);
        // Behaviour probabilities 1/1.5 of the current ones: ρ = 1.5.
        let t15 = shifted(&t, 1.5f64.ln());
        let ones = vec![1.0; t.len()];
        let mut g = Graph::new();
        let obj = ppo_objective(&mut g, &p, &p.params, &[&t15], &[&ones], &cfg).unwrap();
        assert!(g.value(obj.ratio).data.iter().all(|r| (r - 1.5).abs() < 1e-12));
        assert!((g.scalar(obj.policy_loss) + 1.2).abs() < 1e-12);
        // Negative advantages are not clipped from below at ρ = 1.5.
        let neg = vec![-1.0; t.len()];
        let mut g = Graph::new();
        let obj = ppo_objective(&mut g, &p, &p.params, &[&t15], &[&neg], &cfg).unwrap();
        assert!((g.scalar(obj.policy_loss) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn zero_advantages_leave_logits_untouched() {
        let (p, r, rm) = setup(HeadKind::TokenLevel);
        let cfg = PpoConfig::default();
        let mut b = batch(&p, &r, &rm, 6, &cfg);
        for t in &mut b {
            t.advantages.iter_mut().for_each(|a| *a = 0.0);
        }
        let flat: Vec<f64> = b.iter().flat_map(|t| t.advantages.clone()).collect();
        let white = whiten(&flat);
        assert!(white.iter().all(|x| *x == 0.0));
        let zeros: Vec<Vec<f64>> = b.iter().map(|t| vec![0.0; t.len()]).collect();
        let advs: Vec<&[f64]> = zeros.iter().map(Vec::as_slice).collect();
        let trajs: Vec<&Trajectory<f64>> = b.iter().collect();
        let mut g = Graph::new();
        let obj = ppo_objective(&mut g, &p, &p.params, &trajs, &advs, &cfg).unwrap();
        let grads = g.backward(obj.total).unwrap();
        let grads = g.param_grads(&p.params, &grads);
        for id in p.logits_params() {
            assert!(grads.get(id).iter().all(|x| *x == 0.0));
        }
        let vw = p.params.id("value_w").unwrap();
        let vb = p.params.id("value_b").unwrap();
        assert!(grads.get(vw).iter().chain(grads.get(vb)).any(|x| *x != 0.0));
    }

    #[test]
    fn objective_passes_gradient_check() {
        let (p, r, rm) = setup(HeadKind::TokenLevel);
        let cfg = PpoConfig::default();
        let mut rng = rng_from(17);
        for seed in 0..3u64 {
            let mut b = batch(&p, &r, &rm, 5, &cfg);
            for t in &mut b {
                for l in &mut t.logprobs {
                    *l += rng.gen_range(-0.4..0.4);
                }
                for x in &mut t.advantages {
                    *x = rng.gen_range(-1.0..1.0);
                }
                for x in &mut t.returns {
                    *x = rng.gen_range(-1.0..1.0);
                }
            }
            let trajs: Vec<&Trajectory<f64>> = b.iter().collect();
            let advs: Vec<&[f64]> = b.iter().map(|t| &t.advantages[..]).collect();
            let f = |s: &ParamStore<f64>| {
                let mut g = Graph::new();
                let obj = ppo_objective(&mut g, &p, s, &trajs, &advs, &cfg).unwrap();
                let grads = g.backward(obj.total).unwrap();
                (g.scalar(obj.total), g.param_grads(s, &grads))
            };
            let report = grad_check(&p.params, f, &GradCheckConfig { seed, ..Default::default() });
            assert!(report.passed, "{:?}", report.worst());
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let (p, _, _) = setup(HeadKind::TokenLevel);
        let mut buf = Vec::new();
        p.save(&mut buf).unwrap();
        assert_eq!(Policy::<f64>::load(buf.as_slice()).unwrap(), p);
    }

    #[test]
    fn zero_iterations_return_the_initial_policy() {
        let v = vocab();
        let (p, r, rm) = setup(HeadKind::TokenLevel);
        let cfg = PpoConfig { max_iters: 0, ..Default::default() };
        let run = train_ppo(&v, &OracleSpec::default(), &p, &r, &rm, &cfg).unwrap();
        assert_eq!(run.policy, p);
        assert!(run.log.is_empty() && run.reached_target_at.is_none());
    }

    #[test]
    fn training_is_deterministic_and_large_beta_stays_close() {
        let v = vocab();
        let probe = RewardModel::<f64>::oracle_probe(&v, &OracleSpec::default());
        let p = Policy::new(&v, default_policy_arch(), 4);
        let base = PpoConfig { max_iters: 12, batch_size: 16, adam: AdamConfig::with_lr(3e-3), seed: 2, ..Default::default() };

        let free = train_ppo(&v, &OracleSpec::default(), &p, &p, &probe, &PpoConfig { kl_coef: 0.0, ..base.clone() }).unwrap();
        let again = train_ppo(&v, &OracleSpec::default(), &p, &p, &probe, &PpoConfig { kl_coef: 0.0, ..base.clone() }).unwrap();
        assert_eq!(free.log, again.log);
        assert_eq!(free.policy, again.policy);
        let mut csv = Vec::new();
        write_convergence_log(&free.log, &mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("iter,mean_oracle_reward,mean_rm_reward,mean_kl,policy_loss,value_loss\n"));

        let tied = train_ppo(&v, &OracleSpec::default(), &p, &p, &probe, &PpoConfig { kl_coef: 10.0, ..base.clone() }).unwrap();
        let eval = PpoConfig { kl_coef: 10.0, ..base };
        let fresh = batch(&tied.policy, &p, &probe, 64, &eval);
        let kl_tied = mean_state_kl(&fresh);
        let kl_free = mean_state_kl(&batch(&free.policy, &p, &probe, 64, &eval));
        assert!(kl_tied <= 0.05, "kl {kl_tied}");
        assert!(kl_free > kl_tied, "free {kl_free} tied {kl_tied}");
    }
}
