use std::io::{BufRead, Write};

use crate::corpus::{TokenId, Vocabulary, WINDOW};
use crate::encoder::{encode, EncodeItem, EncoderArch, EncoderParams};
use crate::rng::rng_from;
use crate::scalar::Scalar;
use crate::tensor::{read_checkpoint, write_checkpoint, Graph, Matrix, Meta, ParamId, ParamStore, TensorError, Var};

pub fn default_policy_arch() -> EncoderArch {
    EncoderArch { embed_dim: 16, hidden: 64, window: WINDOW, include_current: false }
}

/// Causal token policy with a scalar value head. Both heads read the same
/// encoder state, which for position `t` covers the prompt and the response
/// tokens before `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy<T> {
    pub arch: EncoderArch,
    pub params: ParamStore<T>,
    enc: EncoderParams,
    logits_w: ParamId,
    logits_b: ParamId,
    value_w: ParamId,
    value_b: ParamId,
    eos: TokenId,
    pad: TokenId,
}

/// Heads of one forward pass: `[rows x vocab]` log-probabilities and
/// `[rows x 1]` values.
#[derive(Debug, Clone, Copy)]
pub struct PolicyOutput {
    pub logp: Var,
    pub value: Var,
}

impl<T: Scalar> Policy<T> {
    pub fn new(vocab: &Vocabulary, arch: EncoderArch, seed: u64) -> Self {
        let mut rng = rng_from(seed);
        let mut params = ParamStore::new();
        let v = vocab.len();
        let enc = EncoderParams::init(&mut params, &arch, v, &mut rng).expect("fresh store");
        let logits_w = params.add_glorot("logits_w", arch.hidden, v, &mut rng).expect("fresh store");
        let logits_b = params.add_zeros("logits_b", 1, v).expect("fresh store");
        let value_w = params.add_zeros("value_w", arch.hidden, 1).expect("fresh store");
        let value_b = params.add_zeros("value_b", 1, 1).expect("fresh store");
        Policy { arch, params, enc, logits_w, logits_b, value_w, value_b, eos: vocab.eos(), pad: vocab.pad() }
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }

    pub fn vocab_size(&self) -> usize {
        self.params.get(self.enc.embed).rows
    }

    pub fn logits_params(&self) -> [ParamId; 2] {
        [self.logits_w, self.logits_b]
    }

    pub fn forward_with(
        &self,
        g: &mut Graph<T>,
        params: &ParamStore<T>,
        items: &[EncodeItem<'_>],
    ) -> Result<PolicyOutput, TensorError> {
        let h = encode(g, params, &self.enc, &self.arch, self.pad, items)?;
        let lw = g.param(params, self.logits_w)?;
        let lb = g.param(params, self.logits_b)?;
        let logits = g.matmul(h, lw)?;
        let logits = g.add_row(logits, lb)?;
        let logp = g.log_softmax(logits);
        let vw = g.param(params, self.value_w)?;
        let vb = g.param(params, self.value_b)?;
        let value = g.matmul(h, vw)?;
        let value = g.add_row(value, vb)?;
        Ok(PolicyOutput { logp, value })
    }

    /// Evaluates the heads without keeping the graph.
    pub fn evaluate(&self, items: &[EncodeItem<'_>]) -> Result<(Matrix<T>, Vec<T>), TensorError> {
        let mut g = Graph::new();
        let out = self.forward_with(&mut g, &self.params, items)?;
        Ok((g.value(out.logp).clone(), g.value(out.value).data.clone()))
    }

    pub fn save<W: Write>(&self, w: W) -> Result<(), TensorError> {
        let mut meta = Meta::new();
        meta.insert("kind".into(), "policy".into());
        meta.insert("embed_dim".into(), self.arch.embed_dim.to_string());
        meta.insert("hidden".into(), self.arch.hidden.to_string());
        meta.insert("window".into(), self.arch.window.to_string());
        meta.insert("eos".into(), self.eos.0.to_string());
        meta.insert("pad".into(), self.pad.0.to_string());
        write_checkpoint(&self.params, &meta, w)
    }

    pub fn load<R: BufRead>(r: R) -> Result<Self, TensorError> {
        let (params, meta) = read_checkpoint::<T, _>(r)?;
        let bad = |m: &str| TensorError::Checkpoint(m.to_string());
        if meta.get("kind").map(String::as_str) != Some("policy") {
            return Err(bad("not a policy checkpoint"));
        }
        let num = |k: &str| -> Result<usize, TensorError> {
            meta.get(k).and_then(|v| v.parse().ok()).ok_or_else(|| bad(&format!("missing meta `{k}`")))
        };
        let arch =
            EncoderArch { embed_dim: num("embed_dim")?, hidden: num("hidden")?, window: num("window")?, include_current: false };
        let enc = EncoderParams::lookup(&params)?;
        let get = |n: &str| params.id(n).ok_or_else(|| bad(&format!("missing parameter `{n}`")));
        let (logits_w, logits_b, value_w, value_b) = (get("logits_w")?, get("logits_b")?, get("value_w")?, get("value_b")?);
        let eos = TokenId(num("eos")? as u32);
        let pad = TokenId(num("pad")? as u32);
        Ok(Policy { arch, params, enc, logits_w, logits_b, value_w, value_b, eos, pad })
    }
}
