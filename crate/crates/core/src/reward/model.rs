use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::RewardError;
use crate::corpus::{oracle_token_reward, OracleSpec, TokenId, Vocabulary, WINDOW};
use crate::encoder::{encode, EncodeItem, EncoderArch, EncoderParams, Positions};
use crate::rng::rng_from;
use crate::scalar::{logistic, Scalar};
use crate::tensor::{read_checkpoint, write_checkpoint, Graph, Meta, ParamId, ParamStore, TensorError, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// One tanh-squashed reward per token.
    TokenLevel,
    /// One unsquashed score per response, read at the final token.
    SequenceLevel,
}

impl HeadKind {
    pub fn as_str(self) -> &'static str {
        match self {
            HeadKind::TokenLevel => "token_level",
            HeadKind::SequenceLevel => "sequence_level",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "token_level" => Some(HeadKind::TokenLevel),
            "sequence_level" => Some(HeadKind::SequenceLevel),
            _ => None,
        }
    }
}

pub fn default_rm_arch() -> EncoderArch {
    EncoderArch { embed_dim: 16, hidden: 32, window: WINDOW, include_current: true }
}

/// Per-token rewards of one response and their mean.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardTrace<T> {
    pub rewards: Vec<T>,
    pub trajectory_reward: T,
}

impl<T: Scalar> RewardTrace<T> {
    pub fn new(rewards: Vec<T>) -> Result<Self, RewardError> {
        if rewards.is_empty() {
            return Err(RewardError::EmptyResponse);
        }
        let trajectory_reward = rewards.iter().copied().sum::<T>() / T::of_usize(rewards.len());
        Ok(RewardTrace { rewards, trajectory_reward })
    }
}

/// Bradley–Terry probability that the response behind `i` is preferred.
pub fn preference_prob<T: Scalar>(i: &RewardTrace<T>, j: &RewardTrace<T>) -> T {
    logistic(i.trajectory_reward - j.trajectory_reward)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardModel<T> {
    pub arch: EncoderArch,
    pub head: HeadKind,
    pub params: ParamStore<T>,
    enc: EncoderParams,
    head_w: ParamId,
    head_b: ParamId,
    pad: TokenId,
    vocab_size: usize,
}

impl<T: Scalar> RewardModel<T> {
    /// Glorot-initialised model. With `zero_head` the output layer starts at
    /// zero, so every token reward is initially exactly 0.
    pub fn new(vocab: &Vocabulary, arch: EncoderArch, head: HeadKind, seed: u64, zero_head: bool) -> Self {
        let mut rng = rng_from(seed);
        let mut params = ParamStore::new();
        let enc = EncoderParams::init(&mut params, &arch, vocab.len(), &mut rng).expect("fresh store");
        let head_w = if zero_head {
            params.add_zeros("head_w", arch.hidden, 1)
        } else {
            params.add_glorot("head_w", arch.hidden, 1, &mut rng)
        }
        .expect("fresh store");
        let head_b = params.add_zeros("head_b", 1, 1).expect("fresh store");
        RewardModel { arch, head, params, enc, head_w, head_b, pad: vocab.pad(), vocab_size: vocab.len() }
    }

    /// Hand-wired token-level model whose rewards equal the oracle's for the
    /// default ±1/0 oracle: the current token's first embedding coordinate
    /// carries its oracle value and both tanh layers saturate.
    pub fn oracle_probe(vocab: &Vocabulary, oracle: &OracleSpec) -> Self {
        const GAIN: f64 = 30.0;
        let mut m = Self::new(vocab, default_rm_arch(), HeadKind::TokenLevel, 0, true);
        let d = m.arch.embed_dim;
        let mut embed = vec![T::zero(); vocab.len() * d];
        for t in 0..vocab.len() {
            embed[t * d] = T::of(oracle_token_reward(vocab, TokenId::from(t), oracle));
        }
        let mut w = vec![T::zero(); m.arch.input_dim() * m.arch.hidden];
        let current_slot = m.arch.window * d;
        w[current_slot * m.arch.hidden] = T::of(GAIN);
        let mut head = vec![T::zero(); m.arch.hidden];
        head[0] = T::of(GAIN);
        m.params.set(m.enc.embed, embed).expect("shape");
        m.params.set(m.enc.w, w).expect("shape");
        m.params.set(m.head_w, head).expect("shape");
        m
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn pad(&self) -> TokenId {
        self.pad
    }

    pub(crate) fn require(&self, head: HeadKind) -> Result<(), RewardError> {
        if self.head == head {
            Ok(())
        } else {
            Err(RewardError::WrongHead { expected: head, actual: self.head })
        }
    }

    /// Records the model on `g` with the given parameter values (which may be
    /// a perturbed copy of `self.params` during gradient checks). Returns a
    /// `[rows x 1]` node: squashed rewards for the token head, raw scores for
    /// the sequence head.
    pub fn forward_with(
        &self,
        g: &mut Graph<T>,
        params: &ParamStore<T>,
        items: &[EncodeItem<'_>],
    ) -> Result<Var, TensorError> {
        let h = encode(g, params, &self.enc, &self.arch, self.pad, items)?;
        let w = g.param(params, self.head_w)?;
        let b = g.param(params, self.head_b)?;
        let out = g.matmul(h, w)?;
        let out = g.add_row(out, b)?;
        Ok(match self.head {
            HeadKind::TokenLevel => g.tanh(out),
            HeadKind::SequenceLevel => out,
        })
    }

    pub fn forward(&self, g: &mut Graph<T>, items: &[EncodeItem<'_>]) -> Result<Var, TensorError> {
        self.forward_with(g, &self.params, items)
    }

    /// `r_t = r_φ(s_t, a_t)` for every token of the response.
    pub fn token_rewards(&self, prompt: &[TokenId], response: &[TokenId]) -> Result<RewardTrace<T>, RewardError> {
        Ok(self.batch_token_rewards(&[(prompt, response)])?.pop().expect("one trace"))
    }

    pub fn batch_token_rewards(&self, seqs: &[(&[TokenId], &[TokenId])]) -> Result<Vec<RewardTrace<T>>, RewardError> {
        self.require(HeadKind::TokenLevel)?;
        if seqs.iter().any(|(_, r)| r.is_empty()) {
            return Err(RewardError::EmptyResponse);
        }
        let items: Vec<_> = seqs
            .iter()
            .map(|(p, r)| EncodeItem { prompt: p, response: r, positions: Positions::Range(0, r.len()) })
            .collect();
        let mut g = Graph::new();
        let out = self.forward(&mut g, &items)?;
        let vals = &g.value(out).data;
        let mut offset = 0;
        seqs.iter()
            .map(|(_, r)| {
                let trace = RewardTrace::new(vals[offset..offset + r.len()].to_vec());
                offset += r.len();
                trace
            })
            .collect()
    }

    /// Sequence-head score, read at the state of the final token.
    pub fn sequence_score(&self, prompt: &[TokenId], response: &[TokenId]) -> Result<T, RewardError> {
        Ok(self.batch_sequence_scores(&[(prompt, response)])?[0])
    }

    pub fn batch_sequence_scores(&self, seqs: &[(&[TokenId], &[TokenId])]) -> Result<Vec<T>, RewardError> {
        self.require(HeadKind::SequenceLevel)?;
        if seqs.iter().any(|(_, r)| r.is_empty()) {
            return Err(RewardError::EmptyResponse);
        }
        let items: Vec<_> = seqs
            .iter()
            .map(|(p, r)| EncodeItem { prompt: p, response: r, positions: Positions::Single(r.len() - 1) })
            .collect();
        let mut g = Graph::new();
        let out = self.forward(&mut g, &items)?;
        Ok(g.value(out).data.clone())
    }

    /// Whole-response reward: the token mean for the token head, the final
    /// score for the sequence head.
    pub fn batch_trajectory_rewards(&self, seqs: &[(&[TokenId], &[TokenId])]) -> Result<Vec<T>, RewardError> {
        match self.head {
            HeadKind::TokenLevel => {
                Ok(self.batch_token_rewards(seqs)?.into_iter().map(|t| t.trajectory_reward).collect())
            }
            HeadKind::SequenceLevel => self.batch_sequence_scores(seqs),
        }
    }

    pub fn save<W: Write>(&self, w: W) -> Result<(), TensorError> {
        let mut meta = Meta::new();
        meta.insert("kind".into(), "reward_model".into());
        meta.insert("head".into(), self.head.as_str().into());
        meta.insert("embed_dim".into(), self.arch.embed_dim.to_string());
        meta.insert("hidden".into(), self.arch.hidden.to_string());
        meta.insert("window".into(), self.arch.window.to_string());
        meta.insert("pad".into(), self.pad.0.to_string());
        write_checkpoint(&self.params, &meta, w)
    }

    pub fn load<R: BufRead>(r: R) -> Result<Self, TensorError> {
        let (params, meta) = read_checkpoint::<T, _>(r)?;
        let bad = |m: &str| TensorError::Checkpoint(m.to_string());
        if meta.get("kind").map(String::as_str) != Some("reward_model") {
            return Err(bad("not a reward model checkpoint"));
        }
        let num = |k: &str| -> Result<usize, TensorError> {
            meta.get(k).and_then(|v| v.parse().ok()).ok_or_else(|| bad(&format!("missing meta `{k}`")))
        };
        let head = meta.get("head").and_then(|h| HeadKind::parse(h)).ok_or_else(|| bad("bad head kind"))?;
        let arch =
            EncoderArch { embed_dim: num("embed_dim")?, hidden: num("hidden")?, window: num("window")?, include_current: true };
        let enc = EncoderParams::lookup(&params)?;
        let head_w = params.id("head_w").ok_or_else(|| bad("missing head_w"))?;
        let head_b = params.id("head_b").ok_or_else(|| bad("missing head_b"))?;
        let vocab_size = params.get(enc.embed).rows;
        let pad = TokenId(num("pad")? as u32);
        Ok(RewardModel { arch, head, params, enc, head_w, head_b, pad, vocab_size })
    }
}
