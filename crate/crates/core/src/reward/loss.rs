//! Bradley–Terry losses over minimal-edit pairs.
//!
//! With `τ^i` the edited (preferred) response and `τ^j` the original, the
//! exact loss expands the token-mean rewards over the unchanged set `U0` and
//! the changed sets `U1`:
//!
//! ```text
//! margin_full   = (1/T^i − 1/T^j)·Σ_{U0} r_t + (1/T^i)·Σ_{U1^i} r^i_t − (1/T^j)·Σ_{U1^j} r^j_t
//! margin_approx =                             (1/T^i)·Σ_{U1^i} r^i_t − (1/T^j)·Σ_{U1^j} r^j_t
//! loss          = −log σ(margin)
//! ```
//!
//! The `U0` terms are appended after the `U1` terms, so for equal lengths
//! (zero coefficient) both losses are bitwise identical.

use serde::{Deserialize, Serialize};

use super::model::{HeadKind, RewardModel};
use super::RewardError;
use crate::editdiff::EditPair;
use crate::encoder::{EncodeItem, Positions};
use crate::scalar::Scalar;
use crate::tensor::{Graph, ParamStore, RowTerm, TensorError, Var};

/// Which context supplies the shared rewards of the unchanged tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum U0Source {
    /// Rewards of the matched tokens evaluated in the edited sequence.
    #[default]
    Edited,
    /// Average of the matched tokens' rewards in both sequences.
    Average,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Full,
    Approx,
    Sequence,
}

impl LossKind {
    pub fn head(self) -> HeadKind {
        match self {
            LossKind::Full | LossKind::Approx => HeadKind::TokenLevel,
            LossKind::Sequence => HeadKind::SequenceLevel,
        }
    }
}

fn token_margin_terms<'a, T: Scalar>(
    pairs: &[&'a EditPair],
    kind: LossKind,
    u0: U0Source,
) -> (Vec<EncodeItem<'a>>, Vec<RowTerm<T>>) {
    let mut items = Vec::with_capacity(2 * pairs.len());
    let mut terms = Vec::new();
    let mut offset = 0;
    for (p, pair) in pairs.iter().enumerate() {
        let (ti, tj) = (pair.edited.len(), pair.original.len());
        let (base_i, base_j) = (offset, offset + ti);
        offset += ti + tj;
        items.push(EncodeItem { prompt: &pair.prompt.ids, response: &pair.edited.ids, positions: Positions::Range(0, ti) });
        items.push(EncodeItem {
            prompt: &pair.prompt.ids,
            response: &pair.original.ids,
            positions: Positions::Range(0, tj),
        });
        let inv_i = T::one() / T::of_usize(ti);
        let inv_j = T::one() / T::of_usize(tj);
        for t in pair.u1_edited() {
            terms.push(RowTerm { src: base_i + t, dst: p, coef: inv_i });
        }
        for t in pair.u1_original() {
            terms.push(RowTerm { src: base_j + t, dst: p, coef: -inv_j });
        }
        if kind == LossKind::Full {
            let shared = inv_i - inv_j;
            for (o, e) in pair.matched() {
                match u0 {
                    U0Source::Edited => terms.push(RowTerm { src: base_i + e, dst: p, coef: shared }),
                    U0Source::Average => {
                        let half = shared / T::of(2.0);
                        terms.push(RowTerm { src: base_i + e, dst: p, coef: half });
                        terms.push(RowTerm { src: base_j + o, dst: p, coef: half });
                    }
                }
            }
        }
    }
    (items, terms)
}

/// Per-pair preference margins as a `[pairs x 1]` node. No check on empty
/// change sets: such pairs simply get a zero margin.
pub fn batch_margins<T: Scalar>(
    g: &mut Graph<T>,
    model: &RewardModel<T>,
    params: &ParamStore<T>,
    pairs: &[&EditPair],
    kind: LossKind,
    u0: U0Source,
) -> Result<Var, RewardError> {
    model.require(kind.head())?;
    match kind {
        LossKind::Full | LossKind::Approx => {
            let (items, terms) = token_margin_terms(pairs, kind, u0);
            let r = model.forward_with(g, params, &items)?;
            Ok(g.combine_rows(r, pairs.len(), terms)?)
        }
        LossKind::Sequence => {
            let mut items = Vec::with_capacity(2 * pairs.len());
            let mut terms = Vec::with_capacity(2 * pairs.len());
            for (p, pair) in pairs.iter().enumerate() {
                if pair.edited.is_empty() || pair.original.is_empty() {
                    return Err(RewardError::EmptyResponse);
                }
                items.push(EncodeItem {
                    prompt: &pair.prompt.ids,
                    response: &pair.edited.ids,
                    positions: Positions::Single(pair.edited.len() - 1),
                });
                items.push(EncodeItem {
                    prompt: &pair.prompt.ids,
                    response: &pair.original.ids,
                    positions: Positions::Single(pair.original.len() - 1),
                });
                terms.push(RowTerm { src: 2 * p, dst: p, coef: T::one() });
                terms.push(RowTerm { src: 2 * p + 1, dst: p, coef: -T::one() });
            }
            let s = model.forward_with(g, params, &items)?;
            Ok(g.combine_rows(s, pairs.len(), terms)?)
        }
    }
}

/// Mean `−log σ(margin)` over the batch, as a 1x1 node.
pub fn batch_loss<T: Scalar>(
    g: &mut Graph<T>,
    model: &RewardModel<T>,
    params: &ParamStore<T>,
    pairs: &[&EditPair],
    kind: LossKind,
    u0: U0Source,
) -> Result<Var, RewardError> {
    if pairs.is_empty() {
        return Err(TensorError::Empty("loss batch").into());
    }
    let m = batch_margins(g, model, params, pairs, kind, u0)?;
    let ll = g.log_logistic(m);
    let mean = g.mean(ll)?;
    Ok(g.scale(mean, -T::one()))
}

fn require_changes(pair: &EditPair) -> Result<(), RewardError> {
    if pair.u1_edited().is_empty() && pair.u1_original().is_empty() {
        Err(RewardError::EmptyU1)
    } else {
        Ok(())
    }
}

fn single<T: Scalar>(model: &RewardModel<T>, pair: &EditPair, kind: LossKind, u0: U0Source) -> Result<T, RewardError> {
    let mut g = Graph::new();
    let l = batch_loss(&mut g, model, &model.params, &[pair], kind, u0)?;
    Ok(g.scalar(l))
}

/// Exact decomposed loss for one pair.
pub fn loss_full<T: Scalar>(model: &RewardModel<T>, pair: &EditPair, u0: U0Source) -> Result<T, RewardError> {
    require_changes(pair)?;
    single(model, pair, LossKind::Full, u0)
}

/// Changed-tokens-only loss for one pair.
pub fn loss_approx<T: Scalar>(model: &RewardModel<T>, pair: &EditPair) -> Result<T, RewardError> {
    require_changes(pair)?;
    single(model, pair, LossKind::Approx, U0Source::Edited)
}

/// Holistic baseline: `−log σ(score(edited) − score(original))`.
pub fn loss_sequence_baseline<T: Scalar>(model: &RewardModel<T>, pair: &EditPair) -> Result<T, RewardError> {
    single(model, pair, LossKind::Sequence, U0Source::Edited)
}
