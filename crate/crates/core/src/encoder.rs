//! Causal window encoder shared by the reward model and the policy.
//!
//! A state at response position `t` is described by the embeddings of the
//! previous `window` response tokens (PAD-filled at the start), optionally the
//! embedding of the token emitted at `t`, the mean prompt embedding, and the
//! scalar `(t + 1) / L_MAX`. These are concatenated and passed through one
//! tanh layer. Nothing after position `t` is visible, so outputs are causal
//! by construction.

use serde::{Deserialize, Serialize};

use crate::corpus::{TokenId, L_MAX};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Matrix, ParamId, ParamStore, RowTerm, TensorError, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderArch {
    pub embed_dim: usize,
    pub hidden: usize,
    pub window: usize,
    /// Whether the token chosen at `t` is part of the state (reward model)
    /// or the quantity being predicted (policy).
    pub include_current: bool,
}

impl EncoderArch {
    pub fn input_dim(&self) -> usize {
        let slots = self.window + 1 + usize::from(self.include_current);
        slots * self.embed_dim + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderParams {
    pub embed: ParamId,
    pub w: ParamId,
    pub b: ParamId,
}

impl EncoderParams {
    pub fn init<T: Scalar>(
        store: &mut ParamStore<T>,
        arch: &EncoderArch,
        vocab_size: usize,
        rng: &mut impl rand::Rng,
    ) -> Result<Self, TensorError> {
        Ok(EncoderParams {
            embed: store.add_glorot("embed", vocab_size, arch.embed_dim, rng)?,
            w: store.add_glorot("enc_w", arch.input_dim(), arch.hidden, rng)?,
            b: store.add_zeros("enc_b", 1, arch.hidden)?,
        })
    }

    pub fn lookup<T: Scalar>(store: &ParamStore<T>) -> Result<Self, TensorError> {
        let get = |n: &str| store.id(n).ok_or_else(|| TensorError::Checkpoint(format!("missing parameter `{n}`")));
        Ok(EncoderParams { embed: get("embed")?, w: get("enc_w")?, b: get("enc_b")? })
    }
}

/// Positions of one sequence to encode.
#[derive(Debug, Clone, Copy)]
pub struct EncodeItem<'a> {
    pub prompt: &'a [TokenId],
    pub response: &'a [TokenId],
    /// Positions `t` to produce rows for, in order.
    pub positions: Positions,
}

#[derive(Debug, Clone, Copy)]
pub enum Positions {
    /// `start..end`.
    Range(usize, usize),
    Single(usize),
}

impl Positions {
    fn iter(self) -> std::ops::Range<usize> {
        match self {
            Positions::Range(a, b) => a..b,
            Positions::Single(t) => t..t + 1,
        }
    }
}

/// Records the encoder on `g` and returns the `[rows x hidden]` activations,
/// one row per requested position, items in order.
pub fn encode<T: Scalar>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    params: &EncoderParams,
    arch: &EncoderArch,
    pad: TokenId,
    items: &[EncodeItem<'_>],
) -> Result<Var, TensorError> {
    let rows: usize = items.iter().map(|it| it.positions.iter().len()).sum();
    let mut window_ids = vec![Vec::with_capacity(rows); arch.window];
    let mut current_ids = Vec::with_capacity(if arch.include_current { rows } else { 0 });
    let mut positions = Vec::with_capacity(rows);
    let mut prompt_ids = Vec::new();
    let mut prompt_terms = Vec::new();
    let mut spread_terms = Vec::with_capacity(rows);
    let mut row = 0;
    for (s, it) in items.iter().enumerate() {
        if it.prompt.is_empty() {
            return Err(TensorError::Empty("prompt"));
        }
        let inv = T::one() / T::of_usize(it.prompt.len());
        for tok in it.prompt {
            prompt_terms.push(RowTerm { src: prompt_ids.len(), dst: s, coef: inv });
            prompt_ids.push(tok.index());
        }
        for t in it.positions.iter() {
            if arch.include_current && t >= it.response.len() {
                return Err(TensorError::IndexOutOfRange { op: "encode", index: t, bound: it.response.len() });
            }
            for (slot, ids) in window_ids.iter_mut().enumerate() {
                let back = arch.window - slot;
                let tok = if t >= back { it.response[t - back] } else { pad };
                ids.push(tok.index());
            }
            if arch.include_current {
                current_ids.push(it.response[t].index());
            }
            positions.push(T::of_usize(t + 1) / T::of_usize(L_MAX));
            spread_terms.push(RowTerm { src: s, dst: row, coef: T::one() });
            row += 1;
        }
    }

    let embed = g.param(store, params.embed)?;
    let mut parts = Vec::with_capacity(arch.window + 3);
    for ids in window_ids {
        parts.push(g.embedding(embed, ids)?);
    }
    if arch.include_current {
        parts.push(g.embedding(embed, current_ids)?);
    }
    let prompt_rows = g.embedding(embed, prompt_ids)?;
    let prompt_mean = g.combine_rows(prompt_rows, items.len(), prompt_terms)?;
    parts.push(g.combine_rows(prompt_mean, rows, spread_terms)?);
    parts.push(g.input(Matrix::column(positions))?);
    let x = g.concat(&parts)?;
    let w = g.param(store, params.w)?;
    let b = g.param(store, params.b)?;
    let h = g.matmul(x, w)?;
    let h = g.add_row(h, b)?;
    Ok(g.tanh(h))
}
