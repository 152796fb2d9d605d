use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::EditError;
use crate::corpus::{detokenize, tokenize, Role, TokenSequence, Vocabulary};
use crate::rng::derive_seed2;

/// Default minimal-edit instruction; `{prompt}` and `{response}` are
/// substituted before sending.
pub const MINIMAL_EDIT_TEMPLATE: &str = include_str!("../../templates/minimal_edit.txt");

pub const EDITOR_SYSTEM_PROMPT: &str =
    "You are a careful copy editor. You change as little as possible.";

#[derive(Debug, Clone, PartialEq)]
pub enum EditorBackend {
    /// Replaces every bad token with a good token picked from `(seed, position)`.
    Synthetic { seed: u64 },
    /// JSON-over-HTTP editor service.
    External { endpoint: String, template_id: String, template: String, timeout: Duration },
}

impl EditorBackend {
    pub fn external(endpoint: impl Into<String>) -> Self {
        EditorBackend::External {
            endpoint: endpoint.into(),
            template_id: "minimal_edit".into(),
            template: MINIMAL_EDIT_TEMPLATE.to_string(),
            timeout: Duration::from_secs(30),
        }
    }

    pub fn with_timeout(self, timeout: Duration) -> Self {
        match self {
            EditorBackend::External { endpoint, template_id, template, .. } => {
                EditorBackend::External { endpoint, template_id, template, timeout }
            }
            s => s,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            EditorBackend::Synthetic { .. } => "synthetic",
            EditorBackend::External { .. } => "external",
        }
    }
}

/// Rule-based minimal editor. Length-preserving; only bad tokens change.
pub fn synthetic_edit(vocab: &Vocabulary, response: &TokenSequence, seed: u64) -> TokenSequence {
    let good = vocab.good();
    let ids = response
        .ids
        .iter()
        .enumerate()
        .map(|(pos, t)| {
            if vocab.is_bad(*t) {
                good[(derive_seed2(seed, 0xED17, pos as u64) % good.len() as u64) as usize]
            } else {
                *t
            }
        })
        .collect();
    TokenSequence::new(ids, response.role)
}

#[derive(Debug, Serialize)]
pub struct EditRequest {
    pub system: String,
    pub instruction: String,
    pub response: String,
}

#[derive(Debug, Deserialize)]
pub struct EditReply {
    pub edited: String,
}

pub fn render_instruction(template: &str, prompt: &str, response: &str) -> String {
    template.replace("{prompt}", prompt).replace("{response}", response)
}

/// Sends one edit request to an external editor and tokenizes the reply.
pub fn external_edit(
    vocab: &Vocabulary,
    prompt: &TokenSequence,
    response: &TokenSequence,
    backend: &EditorBackend,
) -> Result<TokenSequence, EditError> {
    let EditorBackend::External { endpoint, template, timeout, .. } = backend else {
        return Err(EditError::WrongBackend);
    };
    let prompt_text = detokenize(vocab, prompt)?;
    let response_text = detokenize(vocab, response)?;
    let body = EditRequest {
        system: EDITOR_SYSTEM_PROMPT.to_string(),
        instruction: render_instruction(template, &prompt_text, &response_text),
        response: response_text,
    };
    let agent: ureq::Agent = ureq::Agent::config_builder().timeout_global(Some(*timeout)).build().into();
    let mut reply = agent.post(endpoint.as_str()).send_json(&body).map_err(|e| match e {
        ureq::Error::Timeout(_)
        | ureq::Error::ConnectionFailed
        | ureq::Error::HostNotFound
        | ureq::Error::Io(_) => EditError::Timeout(format!("{endpoint}: {e}")),
        other => EditError::MalformedResponse(other.to_string()),
    })?;
    let parsed: EditReply = reply
        .body_mut()
        .read_json()
        .map_err(|e| EditError::MalformedResponse(e.to_string()))?;
    Ok(tokenize(vocab, &parsed.edited, Role::Response)?)
}

/// Dispatches to the configured backend. `index` distinguishes pairs for the
/// synthetic editor's seed stream.
pub fn edit_response(
    vocab: &Vocabulary,
    prompt: &TokenSequence,
    response: &TokenSequence,
    backend: &EditorBackend,
    index: u64,
) -> Result<TokenSequence, EditError> {
    match backend {
        EditorBackend::Synthetic { seed } => Ok(synthetic_edit(vocab, response, derive_seed2(*seed, 0x5EED, index))),
        EditorBackend::External { .. } => external_edit(vocab, prompt, response, backend),
    }
}
