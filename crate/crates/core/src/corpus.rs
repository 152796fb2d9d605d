//! Toy vocabulary, whitespace tokenization, prompt and response samplers, and
//! the ground-truth "politeness" oracle that stands in for human preference.
//!
//! The oracle scores each token independently: polite (`good`) tokens earn
//! `good_reward`, rude (`bad`) tokens earn `bad_reward`, everything else
//! (including the special tokens) earns `neutral_reward`. A response's score is
//! the mean over its tokens.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, Write};

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::rng_from;

/// Maximum number of response tokens a policy may emit.
pub const L_MAX: usize = 24;

/// Sliding context window (in response tokens) shared by the reward model and
/// the policy encoders.
pub const WINDOW: usize = 4;

#[derive(Debug, Error, PartialEq)]
pub enum CorpusError {
    #[error("unknown token `{0}`")]
    UnknownToken(String),
    #[error("token id {0} is outside the vocabulary")]
    InvalidId(u32),
    #[error("response is empty")]
    EmptyResponse,
    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),
    #[error("invalid oracle spec: {0}")]
    InvalidOracle(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for CorpusError {
    fn from(e: std::io::Error) -> Self {
        CorpusError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TokenId(pub u32);

impl TokenId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl From<usize> for TokenId {
    fn from(i: usize) -> Self {
        TokenId(i as u32)
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenClass {
    Good,
    Bad,
    Neutral,
    Special,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpecialTokens {
    pub bos: TokenId,
    pub eos: TokenId,
    pub pad: TokenId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    good: BTreeSet<TokenId>,
    bad: BTreeSet<TokenId>,
    special: SpecialTokens,
    neutral: Vec<TokenId>,
    good_list: Vec<TokenId>,
    bad_list: Vec<TokenId>,
}

const STANDARD_TOKENS: [&str; 64] = [
    "<pad>", "<bos>", "<eos>", "ok", "hello", "the", "a", "please", "thanks", "kindly",
    "glad", "welcome", "appreciate", "gladly", "cheers", "darn", "stupid", "dumb", "idiot",
    "ugh", "shut", "hate", "whatever", "is", "it", "to", "and", "of", "you", "i", "we", "can",
    "will", "this", "that", "here", "there", "now", "then", "yes", "no", "maybe", "sure",
    "answer", "question", "time", "day", "work", "help", "code", "data", "file", "list",
    "step", "next", "first", "last", "make", "take", "see", "know", "think", "need", "want",
];

const STANDARD_GOOD: [&str; 8] =
    ["please", "thanks", "kindly", "glad", "welcome", "appreciate", "gladly", "cheers"];
const STANDARD_BAD: [&str; 8] =
    ["darn", "stupid", "dumb", "idiot", "ugh", "shut", "hate", "whatever"];

impl Vocabulary {
    /// Builds a vocabulary, checking that the good, bad and special sets are
    /// disjoint, in range, and leave enough neutral tokens.
    pub fn new(
        tokens: Vec<String>,
        good: BTreeSet<TokenId>,
        bad: BTreeSet<TokenId>,
        special: SpecialTokens,
    ) -> Result<Self, CorpusError> {
        let invalid = |m: String| Err(CorpusError::InvalidVocabulary(m));
        if tokens.len() < 16 {
            return invalid(format!("need at least 16 tokens, got {}", tokens.len()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) || t.starts_with('#') {
                return invalid(format!("token {i} `{t}` is not a bare word"));
            }
            if index.insert(t.clone(), TokenId::from(i)).is_some() {
                return invalid(format!("duplicate token `{t}`"));
            }
        }
        let n = tokens.len();
        let specials = [special.bos, special.eos, special.pad];
        let all_ids = good.iter().chain(bad.iter()).chain(specials.iter());
        if let Some(id) = all_ids.clone().find(|id| id.index() >= n) {
            return invalid(format!("id {id} out of range"));
        }
        if good.intersection(&bad).next().is_some() {
            return invalid("good and bad sets overlap".into());
        }
        let special_set: BTreeSet<TokenId> = specials.iter().copied().collect();
        if special_set.len() != 3 {
            return invalid("special tokens must be distinct".into());
        }
        if special_set.iter().any(|s| good.contains(s) || bad.contains(s)) {
            return invalid("special tokens overlap good/bad sets".into());
        }
        let neutral: Vec<TokenId> = (0..n)
            .map(TokenId::from)
            .filter(|id| !good.contains(id) && !bad.contains(id) && !special_set.contains(id))
            .collect();
        if neutral.is_empty() || good.is_empty() || bad.is_empty() {
            return invalid("good, bad and neutral sets must all be non-empty".into());
        }
        Ok(Vocabulary {
            good_list: good.iter().copied().collect(),
            bad_list: bad.iter().copied().collect(),
            tokens,
            index,
            good,
            bad,
            special,
            neutral,
        })
    }

    /// The 64-token politeness vocabulary: 3 special, 8 good, 8 bad, 45 neutral.
    pub fn standard() -> Self {
        let tokens: Vec<String> = STANDARD_TOKENS.iter().map(|s| s.to_string()).collect();
        let lookup = |w: &str| TokenId::from(STANDARD_TOKENS.iter().position(|t| *t == w).unwrap());
        let good = STANDARD_GOOD.iter().map(|w| lookup(w)).collect();
        let bad = STANDARD_BAD.iter().map(|w| lookup(w)).collect();
        let special = SpecialTokens { pad: lookup("<pad>"), bos: lookup("<bos>"), eos: lookup("<eos>") };
        Vocabulary::new(tokens, good, bad, special).expect("standard vocabulary is valid")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn special(&self) -> SpecialTokens {
        self.special
    }

    pub fn bos(&self) -> TokenId {
        self.special.bos
    }

    pub fn eos(&self) -> TokenId {
        self.special.eos
    }

    pub fn pad(&self) -> TokenId {
        self.special.pad
    }

    pub fn good(&self) -> &[TokenId] {
        &self.good_list
    }

    pub fn bad(&self) -> &[TokenId] {
        &self.bad_list
    }

    pub fn neutral(&self) -> &[TokenId] {
        &self.neutral
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id.index()).map(String::as_str)
    }

    pub fn id(&self, word: &str) -> Option<TokenId> {
        self.index.get(word).copied()
    }

    pub fn contains(&self, id: TokenId) -> bool {
        id.index() < self.tokens.len()
    }

    pub fn class(&self, id: TokenId) -> TokenClass {
        if self.good.contains(&id) {
            TokenClass::Good
        } else if self.bad.contains(&id) {
            TokenClass::Bad
        } else if id == self.special.bos || id == self.special.eos || id == self.special.pad {
            TokenClass::Special
        } else {
            TokenClass::Neutral
        }
    }

    pub fn is_bad(&self, id: TokenId) -> bool {
        self.bad.contains(&id)
    }

    pub fn is_good(&self, id: TokenId) -> bool {
        self.good.contains(&id)
    }

    /// Writes the vocabulary file: `#GOOD`, `#BAD` and `#SPECIAL` header
    /// sections (special tokens in BOS, EOS, PAD order), then `#TOKENS`
    /// followed by every token in id order.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), CorpusError> {
        writeln!(w, "#GOOD")?;
        for id in &self.good_list {
            writeln!(w, "{}", self.tokens[id.index()])?;
        }
        writeln!(w, "#BAD")?;
        for id in &self.bad_list {
            writeln!(w, "{}", self.tokens[id.index()])?;
        }
        writeln!(w, "#SPECIAL")?;
        for id in [self.special.bos, self.special.eos, self.special.pad] {
            writeln!(w, "{}", self.tokens[id.index()])?;
        }
        writeln!(w, "#TOKENS")?;
        for t in &self.tokens {
            writeln!(w, "{t}")?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self, CorpusError> {
        #[derive(PartialEq)]
        enum Section {
            None,
            Good,
            Bad,
            Special,
            Tokens,
        }
        let mut section = Section::None;
        let (mut good, mut bad, mut special, mut tokens) = (vec![], vec![], vec![], vec![]);
        for line in r.lines() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            match line {
                "#GOOD" => section = Section::Good,
                "#BAD" => section = Section::Bad,
                "#SPECIAL" => section = Section::Special,
                "#TOKENS" => section = Section::Tokens,
                word => match section {
                    Section::Good => good.push(word.to_string()),
                    Section::Bad => bad.push(word.to_string()),
                    Section::Special => special.push(word.to_string()),
                    Section::Tokens => tokens.push(word.to_string()),
                    Section::None => {
                        return Err(CorpusError::InvalidVocabulary(format!(
                            "token `{word}` before any section marker"
                        )))
                    }
                },
            }
        }
        let pos = |w: &String| {
            tokens
                .iter()
                .position(|t| t == w)
                .map(TokenId::from)
                .ok_or_else(|| CorpusError::InvalidVocabulary(format!("`{w}` missing from #TOKENS")))
        };
        let good = good.iter().map(pos).collect::<Result<BTreeSet<_>, _>>()?;
        let bad = bad.iter().map(pos).collect::<Result<BTreeSet<_>, _>>()?;
        if special.len() != 3 {
            return Err(CorpusError::InvalidVocabulary(
                "#SPECIAL must list exactly BOS, EOS, PAD".into(),
            ));
        }
        let special = SpecialTokens { bos: pos(&special[0])?, eos: pos(&special[1])?, pad: pos(&special[2])? };
        Vocabulary::new(tokens, good, bad, special)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Prompt,
    Response,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<TokenId>,
    pub role: Role,
}

impl TokenSequence {
    pub fn new(ids: Vec<TokenId>, role: Role) -> Self {
        TokenSequence { ids, role }
    }

    pub fn prompt(ids: Vec<TokenId>) -> Self {
        Self::new(ids, Role::Prompt)
    }

    pub fn response(ids: Vec<TokenId>) -> Self {
        Self::new(ids, Role::Response)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn validate(&self, vocab: &Vocabulary) -> Result<(), CorpusError> {
        match self.ids.iter().find(|id| !vocab.contains(**id)) {
            Some(id) => Err(CorpusError::InvalidId(id.0)),
            None => Ok(()),
        }
    }
}

/// Splits on whitespace and maps every word to its id.
pub fn tokenize(vocab: &Vocabulary, text: &str, role: Role) -> Result<TokenSequence, CorpusError> {
    let ids = text
        .split_whitespace()
        .map(|w| vocab.id(w).ok_or_else(|| CorpusError::UnknownToken(w.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(TokenSequence::new(ids, role))
}

pub fn detokenize(vocab: &Vocabulary, seq: &TokenSequence) -> Result<String, CorpusError> {
    let words = seq
        .ids
        .iter()
        .map(|id| vocab.token(*id).ok_or(CorpusError::InvalidId(id.0)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(words.join(" "))
}

/// Per-token reward values of the ground-truth judge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleSpec {
    pub good_reward: f64,
    pub bad_reward: f64,
    pub neutral_reward: f64,
}

impl Default for OracleSpec {
    fn default() -> Self {
        OracleSpec { good_reward: 1.0, bad_reward: -1.0, neutral_reward: 0.0 }
    }
}

impl OracleSpec {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.good_reward > self.neutral_reward && self.neutral_reward > self.bad_reward {
            Ok(())
        } else {
            Err(CorpusError::InvalidOracle(
                "require good_reward > neutral_reward > bad_reward".into(),
            ))
        }
    }
}

pub fn oracle_token_reward(vocab: &Vocabulary, token: TokenId, spec: &OracleSpec) -> f64 {
    match vocab.class(token) {
        TokenClass::Good => spec.good_reward,
        TokenClass::Bad => spec.bad_reward,
        TokenClass::Neutral | TokenClass::Special => spec.neutral_reward,
    }
}

/// Mean oracle reward over the response tokens.
pub fn oracle_sequence_reward(
    vocab: &Vocabulary,
    response: &[TokenId],
    spec: &OracleSpec,
) -> Result<f64, CorpusError> {
    if response.is_empty() {
        return Err(CorpusError::EmptyResponse);
    }
    let total: f64 = response.iter().map(|t| oracle_token_reward(vocab, *t, spec)).sum();
    Ok(total / response.len() as f64)
}

/// BOS followed by 3 to 8 neutral tokens; a pure function of the seed.
pub fn sample_prompt(vocab: &Vocabulary, seed: u64) -> TokenSequence {
    let mut rng = rng_from(seed);
    let n = rng.gen_range(3..=8);
    let neutral = vocab.neutral();
    let mut ids = Vec::with_capacity(n + 1);
    ids.push(vocab.bos());
    ids.extend((0..n).map(|_| neutral[rng.gen_range(0..neutral.len())]));
    TokenSequence::prompt(ids)
}

/// Rule-based response sampler: `min_len..=max_len` content tokens, each bad
/// with probability `p_bad`, good with probability `p_good`, otherwise
/// neutral, followed by EOS.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponseGenerator {
    pub p_good: f64,
    pub p_bad: f64,
    pub min_len: usize,
    pub max_len: usize,
}

impl ResponseGenerator {
    /// Deliberately flawed generator used to produce the responses that get
    /// edited: neutral text with a 25% bad-token rate.
    pub fn flawed() -> Self {
        ResponseGenerator { p_good: 0.0, p_bad: 0.25, min_len: 6, max_len: 20 }
    }

    /// Demonstration data for supervised pre-training: fluent, mostly
    /// neutral, occasionally polite, 10% bad tokens.
    pub fn demonstrations() -> Self {
        ResponseGenerator { p_good: 0.2, p_bad: 0.1, min_len: 6, max_len: 20 }
    }

    pub fn sample(&self, vocab: &Vocabulary, rng: &mut impl rand::Rng) -> TokenSequence {
        let n = rng.gen_range(self.min_len..=self.max_len).min(L_MAX - 1);
        let mut ids = Vec::with_capacity(n + 1);
        for _ in 0..n {
            let u: f64 = rng.gen();
            let pool = if u < self.p_bad {
                vocab.bad()
            } else if u < self.p_bad + self.p_good {
                vocab.good()
            } else {
                vocab.neutral()
            };
            ids.push(pool[rng.gen_range(0..pool.len())]);
        }
        ids.push(vocab.eos());
        TokenSequence::response(ids)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn standard_vocabulary_shape() {
        let v = Vocabulary::standard();
        assert_eq!(v.len(), 64);
        assert_eq!(v.good().len(), 8);
        assert_eq!(v.bad().len(), 8);
        assert_eq!(v.neutral().len(), 45);
        assert_eq!(v.id("hello"), Some(TokenId(4)));
        assert_eq!(v.id("please"), Some(TokenId(7)));
    }

    #[test]
    fn tokenize_examples() {
        let v = Vocabulary::standard();
        assert!(tokenize(&v, "", Role::Response).unwrap().is_empty());
        let s = tokenize(&v, "hello please", Role::Response).unwrap();
        assert_eq!(s.ids, vec![TokenId(4), TokenId(7)]);
        assert_eq!(
            tokenize(&v, "hello zebra", Role::Response),
            Err(CorpusError::UnknownToken("zebra".into()))
        );
    }

    #[test]
    fn oracle_values() {
        let v = Vocabulary::standard();
        let spec = OracleSpec::default();
        let g = v.id("please").unwrap();
        let b = v.id("darn").unwrap();
        let n = v.id("hello").unwrap();
        assert_eq!(oracle_token_reward(&v, g, &spec), 1.0);
        assert_eq!(oracle_token_reward(&v, b, &spec), -1.0);
        assert_eq!(oracle_token_reward(&v, v.eos(), &spec), 0.0);
        assert_eq!(oracle_sequence_reward(&v, &[g, b, n], &spec).unwrap(), 0.0);
        assert_eq!(oracle_sequence_reward(&v, &[n; 7], &spec).unwrap(), 0.0);
        let r = oracle_sequence_reward(&v, &[g, g, n], &spec).unwrap();
        assert!((r - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(oracle_sequence_reward(&v, &[], &spec), Err(CorpusError::EmptyResponse));
    }

    #[test]
    fn oracle_spec_ordering_is_enforced() {
        assert!(OracleSpec::default().validate().is_ok());
        let bad = OracleSpec { good_reward: 0.0, bad_reward: -1.0, neutral_reward: 0.0 };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn invalid_vocabularies_are_rejected() {
        let tokens: Vec<String> = (0..20).map(|i| format!("w{i}")).collect();
        let sp = SpecialTokens { bos: TokenId(0), eos: TokenId(1), pad: TokenId(2) };
        let set = |ids: &[u32]| ids.iter().map(|i| TokenId(*i)).collect::<BTreeSet<_>>();
        assert!(Vocabulary::new(tokens.clone(), set(&[3]), set(&[4]), sp).is_ok());
        assert!(Vocabulary::new(tokens.clone(), set(&[3]), set(&[3]), sp).is_err());
        assert!(Vocabulary::new(tokens.clone(), set(&[0]), set(&[4]), sp).is_err());
        assert!(Vocabulary::new(tokens.clone(), set(&[30]), set(&[4]), sp).is_err());
        assert!(Vocabulary::new(tokens[..10].to_vec(), set(&[3]), set(&[4]), sp).is_err());
    }

    #[test]
    fn vocabulary_file_round_trip() {
        let v = Vocabulary::standard();
        let mut buf = Vec::new();
        v.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("#GOOD\nplease\n"));
        assert!(text.contains("#BAD\ndarn\n"));
        assert!(text.contains("#SPECIAL\n<bos>\n<eos>\n<pad>\n#TOKENS\n<pad>\n"));
        let back = Vocabulary::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn prompts_are_deterministic_and_bounded() {
        let v = Vocabulary::standard();
        assert_eq!(sample_prompt(&v, 11), sample_prompt(&v, 11));
        for seed in 0..1000 {
            let p = sample_prompt(&v, seed);
            assert_eq!(p.ids[0], v.bos());
            let body = &p.ids[1..];
            assert!((3..=8).contains(&body.len()), "seed {seed} len {}", body.len());
            assert!(body.iter().all(|t| v.class(*t) == TokenClass::Neutral));
        }
    }

    #[test]
    fn generated_responses_end_with_eos() {
        let v = Vocabulary::standard();
        let mut rng = rng_from(3);
        for _ in 0..200 {
            let r = ResponseGenerator::flawed().sample(&v, &mut rng);
            assert_eq!(*r.ids.last().unwrap(), v.eos());
            assert!(r.len() <= L_MAX);
            assert!(r.ids.iter().all(|t| !v.is_good(*t)));
        }
    }

    proptest! {
        #[test]
        fn tokenize_detokenize_round_trip(ids in prop::collection::vec(0u32..64, 0..30)) {
            let v = Vocabulary::standard();
            let seq = TokenSequence::response(ids.into_iter().map(TokenId).collect());
            let text = detokenize(&v, &seq).unwrap();
            prop_assert_eq!(tokenize(&v, &text, Role::Response).unwrap(), seq.clone());
            prop_assert_eq!(detokenize(&v, &tokenize(&v, &text, Role::Response).unwrap()).unwrap(), text);
        }

        #[test]
        fn replacing_a_bad_token_raises_the_oracle(
            ids in prop::collection::vec(0u32..64, 1..24),
            pick in 0usize..100,
            g in 0usize..8,
        ) {
            let v = Vocabulary::standard();
            let ids: Vec<TokenId> = ids.into_iter().map(TokenId).collect();
            let bad_pos: Vec<usize> = (0..ids.len()).filter(|i| v.is_bad(ids[*i])).collect();
            prop_assume!(!bad_pos.is_empty());
            let pos = bad_pos[pick % bad_pos.len()];
            let mut edited = ids.clone();
            edited[pos] = v.good()[g];
            let spec = OracleSpec::default();
            prop_assert!(
                oracle_sequence_reward(&v, &edited, &spec).unwrap()
                    > oracle_sequence_reward(&v, &ids, &spec).unwrap()
            );
        }
    }
}
