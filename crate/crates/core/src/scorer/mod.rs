//! Follow-up log-likelihood scoring.
//!
//! A [`ScorerBackend`] turns a conversation context and a continuation into a
//! summed natural-log probability. Two backends ship here: the add-one n-gram
//! [`NGramReferenceScorer`] (deterministic, used as a test oracle) and the
//! HTTP [`RemoteScorer`] that talks to a model server. Results are memoized
//! in a [`ScoreCache`] and fanned out with [`score_batch`].

mod batch;
mod cache;
mod ngram;
mod remote;
mod tokenize;

use thiserror::Error;

use crate::domain::{FollowUp, ScoreMode, ScoreRecord, Utterance};

pub use batch::{score_batch, BatchOutcome, ScoreJob};
pub use cache::{cache_digest, CacheError, ScoreCache};
pub use ngram::{NGramReferenceScorer, UNKNOWN_TOKEN};
pub use remote::{ModelInfo, RemoteConfig, RemoteScorer, RetryPolicy};
pub use tokenize::tokenize;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoreError {
    /// Connection failure, timeout or server-side fault. Retryable.
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { message: String, attempts: u32 },
    #[error("context of {tokens} tokens exceeds the backend limit of {limit}")]
    ContextTooLong { tokens: usize, limit: usize },
    #[error("continuation {0:?} tokenizes to nothing")]
    EmptyTokenization(String),
    #[error("backend does not support {0} scoring")]
    UnsupportedMode(ScoreMode),
    #[error("token {0:?} is outside the reference vocabulary")]
    OutOfVocabulary(String),
    #[error("invalid scoring input: {0}")]
    InvalidInput(String),
    #[error("protocol error: {0}")]
    Protocol(String),
}

impl ScoreError {
    /// Transient faults may succeed on retry; everything else is permanent.
    pub fn is_retryable(&self) -> bool {
        matches!(self, ScoreError::Transport { .. })
    }
}

/// Raw output of a backend call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scored {
    pub log_likelihood: f64,
    pub token_count: u32,
}

/// A language model able to score a continuation given a context.
///
/// Implementations must be deterministic for a fixed `backend_id` and safe to
/// call from several threads at once.
pub trait ScorerBackend: Send + Sync {
    fn backend_id(&self) -> &str;

    /// Total tokens (context plus continuation) the model accepts, if bounded.
    fn max_context_tokens(&self) -> Option<usize> {
        None
    }

    /// Upper bound on concurrent calls worth issuing.
    fn max_in_flight(&self) -> usize {
        1
    }

    /// Client-side token count, when the tokenizer is available locally.
    fn count_tokens(&self, _text: &str) -> Option<usize> {
        None
    }

    fn score(&self, context: &[Utterance], continuation: &Utterance, mode: ScoreMode) -> Result<Scored, ScoreError>;
}

impl<T: ScorerBackend + ?Sized> ScorerBackend for &T {
    fn backend_id(&self) -> &str {
        (**self).backend_id()
    }
    fn max_context_tokens(&self) -> Option<usize> {
        (**self).max_context_tokens()
    }
    fn max_in_flight(&self) -> usize {
        (**self).max_in_flight()
    }
    fn count_tokens(&self, text: &str) -> Option<usize> {
        (**self).count_tokens(text)
    }
    fn score(&self, context: &[Utterance], continuation: &Utterance, mode: ScoreMode) -> Result<Scored, ScoreError> {
        (**self).score(context, continuation, mode)
    }
}

impl<T: ScorerBackend + ?Sized> ScorerBackend for Box<T> {
    fn backend_id(&self) -> &str {
        (**self).backend_id()
    }
    fn max_context_tokens(&self) -> Option<usize> {
        (**self).max_context_tokens()
    }
    fn max_in_flight(&self) -> usize {
        (**self).max_in_flight()
    }
    fn count_tokens(&self, text: &str) -> Option<usize> {
        (**self).count_tokens(text)
    }
    fn score(&self, context: &[Utterance], continuation: &Utterance, mode: ScoreMode) -> Result<Scored, ScoreError> {
        (**self).score(context, continuation, mode)
    }
}

/// Drops whole utterances from the front of `context` until its token total
/// fits in `limit`. The final utterance is never dropped or split.
pub fn truncate_context<F>(context: &[Utterance], limit: usize, count_tokens: F) -> Result<Vec<Utterance>, ScoreError>
where
    F: Fn(&str) -> usize,
{
    let counts: Vec<usize> = context.iter().map(|u| count_tokens(u.text())).collect();
    let Some(&last) = counts.last() else {
        return Ok(Vec::new());
    };
    if last > limit {
        return Err(ScoreError::ContextTooLong { tokens: last, limit });
    }
    let mut total: usize = counts.iter().sum();
    let mut start = 0;
    while total > limit {
        total -= counts[start];
        start += 1;
    }
    Ok(context[start..].to_vec())
}

/// Scores one follow-up against a context, applying the backend's context
/// limit (oldest utterances dropped first) when it can count tokens locally.
pub fn score_followup<B: ScorerBackend + ?Sized>(
    backend: &B,
    dialog_id: &str,
    context: &[Utterance],
    followup: &FollowUp,
    mode: ScoreMode,
) -> Result<ScoreRecord, ScoreError> {
    if context.is_empty() {
        return Err(ScoreError::InvalidInput("empty scoring context".into()));
    }
    let continuation = followup.as_utterance();
    let mut truncated = None;
    if let Some(limit) = backend.max_context_tokens() {
        if let Some(followup_tokens) = backend.count_tokens(continuation.text()) {
            if followup_tokens == 0 {
                return Err(ScoreError::EmptyTokenization(followup.text().to_owned()));
            }
            let budget = limit
                .checked_sub(followup_tokens)
                .ok_or(ScoreError::ContextTooLong { tokens: followup_tokens, limit })?;
            let kept =
                truncate_context(context, budget, |t| backend.count_tokens(t).unwrap_or(0)).map_err(|e| match e {
                    ScoreError::ContextTooLong { tokens, .. } => {
                        ScoreError::ContextTooLong { tokens: tokens + followup_tokens, limit }
                    }
                    other => other,
                })?;
            truncated = Some(kept);
        }
    }
    let context = truncated.as_deref().unwrap_or(context);
    let scored = backend.score(context, &continuation, mode)?;
    ScoreRecord::new(dialog_id, followup.text(), scored.log_likelihood, scored.token_count, backend.backend_id())
        .map_err(|e| ScoreError::Protocol(e.to_string()))
}
