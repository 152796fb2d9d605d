//! Minimal-edit preference data: editing flawed responses, aligning each edit
//! with its original, and the JSONL dataset format.

mod align;
mod editor;

pub use align::{align, Alignment};
pub use editor::{
    edit_response, external_edit, render_instruction, synthetic_edit, EditReply, EditRequest, EditorBackend,
    EDITOR_SYSTEM_PROMPT, MINIMAL_EDIT_TEMPLATE,
};

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{
    detokenize, sample_prompt, tokenize, CorpusError, ResponseGenerator, Role, TokenId, TokenSequence, Vocabulary,
};
use crate::rng::{derive_seed, rng_from};

#[derive(Debug, Error, PartialEq)]
pub enum EditError {
    #[error("cannot align an empty sequence")]
    EmptySequence,
    #[error("editor timed out or was unreachable: {0}")]
    Timeout(String),
    #[error("malformed editor response: {0}")]
    MalformedResponse(String),
    #[error("operation requires an external backend")]
    WrongBackend,
    #[error("dataset must contain at least one pair")]
    NoPairs,
    #[error("dataset line {line}: {msg}")]
    Dataset { line: usize, msg: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// An original (less preferred) response, its minimal edit, and the alignment
/// between the two. `edited` is the preferred side.
#[derive(Debug, Clone, PartialEq)]
pub struct EditPair {
    pub prompt: TokenSequence,
    pub original: TokenSequence,
    pub edited: TokenSequence,
    pub alignment: Alignment,
}

impl EditPair {
    pub fn new(prompt: TokenSequence, original: TokenSequence, edited: TokenSequence) -> Result<Self, EditError> {
        let alignment = align(&original.ids, &edited.ids)?;
        Ok(EditPair { prompt, original, edited, alignment })
    }

    pub fn matched(&self) -> &[(usize, usize)] {
        &self.alignment.matched
    }

    pub fn u1_original(&self) -> &[usize] {
        &self.alignment.u1_original
    }

    pub fn u1_edited(&self) -> &[usize] {
        &self.alignment.u1_edited
    }

    /// Fraction of changed tokens, `|U1| / T`, over the response body (the
    /// closing EOS is a terminator, not content). The larger side wins.
    pub fn change_ratio(&self, vocab: &Vocabulary) -> f64 {
        let body = |s: &TokenSequence| match s.ids.last() {
            Some(t) if *t == vocab.eos() && s.len() > 1 => s.len() - 1,
            _ => s.len(),
        };
        let ro = self.u1_original().len() as f64 / body(&self.original) as f64;
        let re = self.u1_edited().len() as f64 / body(&self.edited) as f64;
        ro.max(re)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetOptions {
    pub generator: ResponseGenerator,
    /// Pairs whose change ratio exceeds this are rejected as non-minimal.
    pub max_change_ratio: f64,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        DatasetOptions { generator: ResponseGenerator::flawed(), max_change_ratio: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetStats {
    pub attempted: usize,
    pub kept: usize,
    pub dropped_unchanged: usize,
    pub rejected_change_ratio: usize,
    pub mean_change_ratio: f64,
}

/// Samples `n_pairs` prompts, generates a flawed response for each, edits it
/// and keeps the pairs whose edit changed something (and stayed minimal).
pub fn build_dataset(
    vocab: &Vocabulary,
    n_pairs: usize,
    backend: &EditorBackend,
    seed: u64,
    options: &DatasetOptions,
) -> Result<(Vec<EditPair>, DatasetStats), EditError> {
    if n_pairs == 0 {
        return Err(EditError::NoPairs);
    }
    let mut stats = DatasetStats { attempted: n_pairs, ..Default::default() };
    let mut pairs = Vec::with_capacity(n_pairs);
    let mut ratio_sum = 0.0;
    for i in 0..n_pairs as u64 {
        let prompt = sample_prompt(vocab, derive_seed(seed, 2 * i));
        let original = options.generator.sample(vocab, &mut rng_from(derive_seed(seed, 2 * i + 1)));
        let edited = edit_response(vocab, &prompt, &original, backend, i)?;
        let pair = EditPair::new(prompt, original, edited)?;
        if pair.alignment.is_unchanged() {
            stats.dropped_unchanged += 1;
            continue;
        }
        let ratio = pair.change_ratio(vocab);
        if ratio > options.max_change_ratio {
            stats.rejected_change_ratio += 1;
            continue;
        }
        ratio_sum += ratio;
        pairs.push(pair);
    }
    stats.kept = pairs.len();
    stats.mean_change_ratio = if pairs.is_empty() { 0.0 } else { ratio_sum / pairs.len() as f64 };
    log::info!(
        "dataset: kept {} of {} (unchanged {}, non-minimal {})",
        stats.kept,
        stats.attempted,
        stats.dropped_unchanged,
        stats.rejected_change_ratio
    );
    Ok((pairs, stats))
}

/// One JSONL line of the dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditPairRecord {
    pub prompt: String,
    pub original: String,
    pub edited: String,
    pub u1_original: Vec<usize>,
    pub u1_edited: Vec<usize>,
}

pub fn write_dataset<W: Write>(vocab: &Vocabulary, pairs: &[EditPair], mut w: W) -> Result<(), EditError> {
    for p in pairs {
        let rec = EditPairRecord {
            prompt: detokenize(vocab, &p.prompt)?,
            original: detokenize(vocab, &p.original)?,
            edited: detokenize(vocab, &p.edited)?,
            u1_original: p.u1_original().to_vec(),
            u1_edited: p.u1_edited().to_vec(),
        };
        let line = serde_json::to_string(&rec).expect("record serializes");
        writeln!(w, "{line}").map_err(|e| CorpusError::Io(e.to_string()))?;
    }
    Ok(())
}

/// Reads a dataset, recomputing every alignment and rejecting records whose
/// stored change sets disagree.
pub fn read_dataset<R: BufRead>(vocab: &Vocabulary, r: R) -> Result<Vec<EditPair>, EditError> {
    let mut pairs = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line.map_err(|e| CorpusError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| EditError::Dataset { line: n + 1, msg };
        let rec: EditPairRecord = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        let pair = EditPair::new(
            tokenize(vocab, &rec.prompt, Role::Prompt)?,
            tokenize(vocab, &rec.original, Role::Response)?,
            tokenize(vocab, &rec.edited, Role::Response)?,
        )
        .map_err(|e| err(e.to_string()))?;
        if pair.u1_original() != rec.u1_original || pair.u1_edited() != rec.u1_edited {
            return Err(err("stored change sets do not match the recomputed alignment".into()));
        }
        pairs.push(pair);
    }
    Ok(pairs)
}

/// Convenience for building a pair from raw ids.
pub fn pair_from_ids(prompt: Vec<TokenId>, original: Vec<TokenId>, edited: Vec<TokenId>) -> Result<EditPair, EditError> {
    EditPair::new(TokenSequence::prompt(prompt), TokenSequence::response(original), TokenSequence::response(edited))
}
