//! Token-level reward model and the Bradley–Terry losses used to train it.

mod loss;
mod model;
mod train;

pub use loss::{batch_loss, batch_margins, loss_approx, loss_full, loss_sequence_baseline, LossKind, U0Source};
pub use model::{default_rm_arch, preference_prob, HeadKind, RewardModel, RewardTrace};
pub use train::{rm_accuracy, split_indices, train_rm, PreferencePair, RmEpochLog, RmTrainConfig, TrainedRewardModel};

use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RewardError {
    #[error("response is empty")]
    EmptyResponse,
    #[error("pair has no changed tokens")]
    EmptyU1,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("reward model has a {actual:?} head, expected {expected:?}")]
    WrongHead { expected: HeadKind, actual: HeadKind },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{tokenize, OracleSpec, Role, TokenId, Vocabulary};
    use crate::editdiff::{build_dataset, pair_from_ids, DatasetOptions, EditPair, EditorBackend};
    use crate::scalar::{log_logistic, logistic};
    use crate::tensor::{grad_check, GradCheckConfig, Graph, ParamStore};

    fn vocab() -> Vocabulary {
        Vocabulary::standard()
    }

    fn ids(v: &Vocabulary, s: &str) -> Vec<TokenId> {
        tokenize(v, s, Role::Response).unwrap().ids
    }

    fn pair(v: &Vocabulary, prompt: &str, orig: &str, edit: &str) -> EditPair {
        pair_from_ids(ids(v, prompt), ids(v, orig), ids(v, edit)).unwrap()
    }

    fn random_model(head: HeadKind, seed: u64) -> RewardModel<f64> {
        RewardModel::new(&vocab(), default_rm_arch(), head, seed, false)
    }

    #[test]
    fn zero_head_gives_zero_rewards() {
        let v = vocab();
        let m = RewardModel::<f64>::new(&v, default_rm_arch(), HeadKind::TokenLevel, 1, true);
        let t = m.token_rewards(&ids(&v, "<bos> hello"), &ids(&v, "ok darn please <eos>")).unwrap();
        assert!(t.rewards.iter().all(|r| *r == 0.0));
        assert_eq!(t.trajectory_reward, 0.0);
    }

    #[test]
    fn rewards_are_causal() {
        let v = vocab();
        let m = random_model(HeadKind::TokenLevel, 3);
        let p = ids(&v, "<bos> the ok");
        let long = ids(&v, "hello darn the please a ok ugh <eos>");
        let full = m.token_rewards(&p, &long).unwrap();
        for cut in 1..long.len() {
            let part = m.token_rewards(&p, &long[..cut]).unwrap();
            assert_eq!(part.rewards[..], full.rewards[..cut]);
        }
        let mut changed = long.clone();
        changed[6] = v.id("thanks").unwrap();
        let other = m.token_rewards(&p, &changed).unwrap();
        assert_eq!(other.rewards[..6], full.rewards[..6]);
    }

    #[test]
    fn oracle_probe_reproduces_oracle() {
        let v = vocab();
        let spec = OracleSpec::default();
        let m = RewardModel::<f64>::oracle_probe(&v, &spec);
        let resp: Vec<TokenId> = (0..v.len()).map(TokenId::from).collect();
        let t = m.token_rewards(&ids(&v, "<bos> hello"), &resp).unwrap();
        for (tok, r) in resp.iter().zip(&t.rewards) {
            assert_eq!(*r, crate::corpus::oracle_token_reward(&v, *tok, &spec), "token {tok}");
        }
        let m32 = RewardModel::<f32>::oracle_probe(&v, &spec);
        let t32 = m32.token_rewards(&ids(&v, "<bos> hello"), &resp).unwrap();
        assert!(t32.rewards.iter().zip(&t.rewards).all(|(a, b)| *a as f64 == *b));
    }

    #[test]
    fn trajectory_reward_is_the_exact_mean() {
        let tr = RewardTrace::new(vec![0.1, -0.7, 0.25, 0.3]).unwrap();
        assert_eq!(tr.trajectory_reward, (0.1 + -0.7 + 0.25 + 0.3) / 4.0);
        assert_eq!(RewardTrace::<f64>::new(vec![]), Err(RewardError::EmptyResponse));
    }

    #[test]
    fn preference_probability_examples() {
        let a = RewardTrace::new(vec![1.0f64]).unwrap();
        let b = RewardTrace::new(vec![0.0]).unwrap();
        assert_eq!(preference_prob(&a, &a), 0.5);
        assert!((preference_prob(&a, &b) - 0.731_058_578_630_004_9).abs() < 1e-15);
        assert!((preference_prob(&a, &b) + preference_prob(&b, &a) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn single_substitution_loss_by_hand() {
        let v = vocab();
        let probe = RewardModel::<f64>::oracle_probe(&v, &OracleSpec::default());
        let p = pair(&v, "<bos> hello", "ok darn the", "ok please the");
        let expected: f64 = -log_logistic(2.0 / 3.0);
        assert!((expected - 0.414_370_086_852_072).abs() < 1e-12);
        assert!((loss_approx(&probe, &p).unwrap() - expected).abs() < 1e-15);
        assert_eq!(loss_full(&probe, &p, U0Source::Edited).unwrap(), loss_approx(&probe, &p).unwrap());

        // Arbitrary unchanged-token rewards under a random model.
        let m = random_model(HeadKind::TokenLevel, 8);
        let ri = m.token_rewards(&p.prompt.ids, &p.edited.ids).unwrap().rewards;
        let rj = m.token_rewards(&p.prompt.ids, &p.original.ids).unwrap().rewards;
        let hand = -log_logistic((ri[1] - rj[1]) / 3.0);
        assert!((loss_approx(&m, &p).unwrap() - hand).abs() < 1e-14);
        assert_eq!(loss_full(&m, &p, U0Source::Edited).unwrap().to_bits(), loss_approx(&m, &p).unwrap().to_bits());
    }

    #[test]
    fn full_loss_with_unequal_lengths_matches_direct_expansion() {
        let v = vocab();
        let m = random_model(HeadKind::TokenLevel, 5);
        let p = pair(&v, "<bos> the", "hello darn ok <eos>", "hello please kindly ok <eos>");
        assert_eq!(p.u1_original(), &[1]);
        assert_eq!(p.u1_edited(), &[1, 2]);
        let ri = m.token_rewards(&p.prompt.ids, &p.edited.ids).unwrap().rewards;
        let rj = m.token_rewards(&p.prompt.ids, &p.original.ids).unwrap().rewards;
        let (ti, tj) = (5.0, 4.0);
        let u0_edited: f64 = p.matched().iter().map(|(_, e)| ri[*e]).sum();
        let u0_avg: f64 = p.matched().iter().map(|(o, e)| 0.5 * (ri[*e] + rj[*o])).sum();
        let u1 = (ri[1] + ri[2]) / ti - rj[1] / tj;
        let full_e = -log_logistic((1.0 / ti - 1.0 / tj) * u0_edited + u1);
        let full_a = -log_logistic((1.0 / ti - 1.0 / tj) * u0_avg + u1);
        assert!((loss_full(&m, &p, U0Source::Edited).unwrap() - full_e).abs() < 1e-14);
        assert!((loss_full(&m, &p, U0Source::Average).unwrap() - full_a).abs() < 1e-14);
        assert!((loss_approx(&m, &p).unwrap() + log_logistic(u1)).abs() < 1e-14);
    }

    #[test]
    fn unchanged_pairs() {
        let v = vocab();
        let m = random_model(HeadKind::TokenLevel, 2);
        let p = pair(&v, "<bos> a", "hello ok", "hello ok");
        assert_eq!(loss_full(&m, &p, U0Source::Edited), Err(RewardError::EmptyU1));
        assert_eq!(loss_approx(&m, &p), Err(RewardError::EmptyU1));
        let mut g = Graph::new();
        let l = batch_loss(&mut g, &m, &m.params, &[&p], LossKind::Full, U0Source::Edited).unwrap();
        assert!((g.scalar(l) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn equal_changed_rewards_give_log_two() {
        let v = vocab();
        let probe = RewardModel::<f64>::oracle_probe(&v, &OracleSpec::default());
        let p = pair(&v, "<bos> a", "ok darn", "ok ugh");
        assert!((loss_approx(&probe, &p).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn loss_decreases_as_the_edited_reward_grows() {
        let v = vocab();
        let mut m = RewardModel::<f64>::oracle_probe(&v, &OracleSpec::default());
        let p = pair(&v, "<bos> a", "ok darn the", "ok please the");
        let before = loss_approx(&m, &p).unwrap();
        // Lower the embedding value driving `please` so its reward drops.
        let id = m.params.id("embed").unwrap();
        let d = m.arch.embed_dim;
        let please = v.id("please").unwrap().index();
        m.params.get_mut(id).values[please * d] = 0.01;
        let lower = loss_approx(&m, &p).unwrap();
        assert!(lower > before);
    }

    #[test]
    fn sequence_baseline_examples() {
        let v = vocab();
        let mut m = RewardModel::<f64>::new(&v, default_rm_arch(), HeadKind::SequenceLevel, 1, true);
        let p = pair(&v, "<bos> a", "ok darn", "ok please");
        assert!((loss_sequence_baseline(&m, &p).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        let tok = random_model(HeadKind::TokenLevel, 1);
        assert!(matches!(loss_sequence_baseline(&tok, &p), Err(RewardError::WrongHead { .. })));
        assert!(matches!(loss_approx(&m, &p), Err(RewardError::WrongHead { .. })));

        // Force a score margin of exactly 1 through the bias-free head: the
        // scores are head_w·h, so scale head_w so that the difference is 1.
        m = RewardModel::new(&v, default_rm_arch(), HeadKind::SequenceLevel, 4, false);
        let si = m.sequence_score(&p.prompt.ids, &p.edited.ids).unwrap();
        let sj = m.sequence_score(&p.prompt.ids, &p.original.ids).unwrap();
        let hw = m.params.id("head_w").unwrap();
        let scaled: Vec<f64> = m.params.get(hw).values.iter().map(|w| w / (si - sj)).collect();
        m.params.set(hw, scaled).unwrap();
        let loss = loss_sequence_baseline(&m, &p).unwrap();
        assert!((loss - 0.313_261_687_518_222_8).abs() < 1e-12, "{loss}");
    }

    fn check_loss(kind: LossKind, head: HeadKind, seed: u64) -> crate::tensor::GradCheckReport {
        let v = vocab();
        let (pairs, _) =
            build_dataset(&v, 12, &EditorBackend::Synthetic { seed }, seed, &Default::default()).unwrap();
        let mut pairs = pairs;
        pairs.push(pair(&v, "<bos> the", "hello darn ok <eos>", "hello please kindly ok <eos>"));
        let batch: Vec<&EditPair> = pairs.iter().collect();
        let m = random_model(head, seed);
        let f = |s: &ParamStore<f64>| {
            let mut g = Graph::new();
            let l = batch_loss(&mut g, &m, s, &batch, kind, U0Source::Average).unwrap();
            let grads = g.backward(l).unwrap();
            (g.scalar(l), g.param_grads(s, &grads))
        };
        grad_check(&m.params, f, &GradCheckConfig { seed, ..Default::default() })
    }

    #[test]
    fn losses_pass_gradient_check() {
        for (kind, head) in [
            (LossKind::Full, HeadKind::TokenLevel),
            (LossKind::Approx, HeadKind::TokenLevel),
            (LossKind::Sequence, HeadKind::SequenceLevel),
        ] {
            let r = check_loss(kind, head, 11);
            assert!(r.passed, "{kind:?}: {:?}", r.worst());
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = random_model(HeadKind::SequenceLevel, 6);
        let mut buf = Vec::new();
        m.save(&mut buf).unwrap();
        let back = RewardModel::<f64>::load(buf.as_slice()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn accuracy_of_probe_and_ties() {
        let v = vocab();
        let (pairs, _) = build_dataset(&v, 200, &EditorBackend::Synthetic { seed: 1 }, 1, &DatasetOptions::default()).unwrap();
        let prefs: Vec<PreferencePair> = pairs.iter().map(PreferencePair::from).collect();
        let probe = RewardModel::<f64>::oracle_probe(&v, &OracleSpec::default());
        assert_eq!(rm_accuracy(&probe, &prefs).unwrap(), 1.0);
        let zero = RewardModel::<f64>::new(&v, default_rm_arch(), HeadKind::TokenLevel, 0, true);
        assert_eq!(rm_accuracy(&zero, &prefs).unwrap(), 0.5);
    }

    #[test]
    fn logistic_matches_preference_formula() {
        // exp(Ri) / (exp(Ri) + exp(Rj)) == σ(Ri − Rj)
        for (ri, rj) in [(0.3, -0.2), (-1.0, 0.9), (0.0, 0.0)] {
            let a = RewardTrace::new(vec![ri]).unwrap();
            let b = RewardTrace::new(vec![rj]).unwrap();
            let softmax = f64::exp(ri) / (f64::exp(ri) + f64::exp(rj));
            assert!((preference_prob(&a, &b) - softmax).abs() < 1e-15);
            assert_eq!(preference_prob(&a, &b), logistic(ri - rj));
        }
    }
}
