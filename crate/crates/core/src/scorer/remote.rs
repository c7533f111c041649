//! HTTP client for a model server speaking the log-likelihood protocol:
//!
//! - `POST /v1/loglikelihood` `{context, continuation, mode}` ->
//!   `{log_likelihood, token_count, model}`
//! - `GET /v1/model` -> `{model, family, max_context_tokens, revision}`
//! - `GET /v1/health` -> `{"status":"ok"}`

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use reqwest::blocking::{Client, Response};
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};

use super::{ScoreError, Scored, ScorerBackend};
use crate::domain::{ScoreMode, Utterance};

/// Bounded exponential backoff for transient faults.
#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    /// Total attempts, first try included.
    pub max_attempts: u32,
    pub initial_backoff: Duration,
    pub max_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 3, initial_backoff: Duration::from_millis(200), max_backoff: Duration::from_secs(2) }
    }
}

impl RetryPolicy {
    fn backoff(&self, failed_attempts: u32) -> Duration {
        let factor = 1u32 << failed_attempts.saturating_sub(1).min(16);
        (self.initial_backoff * factor).min(self.max_backoff)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    pub timeout: Duration,
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self { timeout: Duration::from_secs(60), max_in_flight: 4, retry: RetryPolicy::default() }
    }
}

/// Model description reported by `GET /v1/model`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub model: String,
    pub family: String,
    pub max_context_tokens: usize,
    pub revision: String,
}

#[derive(Serialize)]
struct LogLikelihoodRequest<'a> {
    context: Vec<&'a str>,
    continuation: &'a str,
    mode: ScoreMode,
}

#[derive(Deserialize)]
struct LogLikelihoodResponse {
    log_likelihood: f64,
    token_count: u32,
    #[allow(dead_code)]
    model: String,
}

#[derive(Deserialize, Default)]
struct ErrorBody {
    #[serde(default)]
    tokens: Option<usize>,
    #[serde(default)]
    limit: Option<usize>,
}

/// Counting semaphore capping concurrent requests.
#[derive(Debug)]
struct Gate {
    busy: Mutex<usize>,
    freed: Condvar,
    limit: usize,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn new(limit: usize) -> Self {
        Self { busy: Mutex::new(0), freed: Condvar::new(), limit: limit.max(1) }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut busy = self.busy.lock().unwrap();
        while *busy >= self.limit {
            busy = self.freed.wait(busy).unwrap();
        }
        *busy += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.busy.lock().unwrap() -= 1;
        self.0.freed.notify_one();
    }
}

/// [`ScorerBackend`] backed by a remote model server.
///
/// Context truncation happens server-side, so this backend reports no local
/// tokenizer. Its id combines model name and revision, which keeps cache
/// entries from different checkpoints apart.
#[derive(Debug)]
pub struct RemoteScorer {
    base: String,
    client: Client,
    config: RemoteConfig,
    info: ModelInfo,
    backend_id: String,
    gate: Gate,
}

impl RemoteScorer {
    /// Checks `/v1/health` and reads `/v1/model`. Fails with a transport
    /// error when the server cannot be reached within the retry budget.
    pub fn connect(endpoint: &str, config: RemoteConfig) -> Result<Self, ScoreError> {
        let base = endpoint.trim_end_matches('/').to_owned();
        if !(base.starts_with("http://") || base.starts_with("https://")) {
            return Err(ScoreError::InvalidInput(format!("endpoint {endpoint:?} is not an http(s) URL")));
        }
        let client = Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| ScoreError::Protocol(format!("building HTTP client: {e}")))?;
        let gate = Gate::new(config.max_in_flight);
        let mut scorer = Self {
            base,
            client,
            config,
            info: ModelInfo {
                model: String::new(),
                family: String::new(),
                max_context_tokens: 0,
                revision: String::new(),
            },
            backend_id: String::new(),
            gate,
        };
        scorer.health()?;
        let info: ModelInfo = scorer.with_retries(|s| {
            let resp = s.client.get(format!("{}/v1/model", s.base)).send();
            let resp = classify(resp)?;
            resp.json().map_err(|e| ScoreError::Protocol(format!("bad /v1/model body: {e}")))
        })?;
        scorer.backend_id = format!("remote:{}@{}", info.model, info.revision);
        scorer.info = info;
        Ok(scorer)
    }

    pub fn info(&self) -> &ModelInfo {
        &self.info
    }

    pub fn endpoint(&self) -> &str {
        &self.base
    }

    pub fn health(&self) -> Result<(), ScoreError> {
        self.with_retries(|s| {
            let resp = s.client.get(format!("{}/v1/health", s.base)).send();
            classify(resp).map(drop)
        })
    }

    fn with_retries<T>(&self, mut call: impl FnMut(&Self) -> Result<T, ScoreError>) -> Result<T, ScoreError> {
        let policy = &self.config.retry;
        let max = policy.max_attempts.max(1);
        let mut attempt = 1;
        loop {
            let result = {
                let _permit = self.gate.acquire();
                call(self)
            };
            match result {
                Err(ScoreError::Transport { message, .. }) if attempt < max => {
                    log::debug!("attempt {attempt} against {} failed: {message}", self.base);
                    std::thread::sleep(policy.backoff(attempt));
                    attempt += 1;
                }
                Err(ScoreError::Transport { message, .. }) => {
                    return Err(ScoreError::Transport { message, attempts: attempt })
                }
                other => return other,
            }
        }
    }
}

/// Maps a raw HTTP outcome onto the error taxonomy. Connection problems,
/// timeouts, 429 and 5xx are transient; other non-success codes are not.
fn classify(resp: reqwest::Result<Response>) -> Result<Response, ScoreError> {
    let resp = resp.map_err(|e| ScoreError::Transport { message: e.to_string(), attempts: 1 })?;
    let status = resp.status();
    if status.is_success() {
        return Ok(resp);
    }
    if status.is_server_error() || status == StatusCode::TOO_MANY_REQUESTS {
        return Err(ScoreError::Transport { message: format!("server returned {status}"), attempts: 1 });
    }
    Err(ScoreError::Protocol(format!("unexpected status {status}")))
}

impl ScorerBackend for RemoteScorer {
    fn backend_id(&self) -> &str {
        &self.backend_id
    }

    fn max_in_flight(&self) -> usize {
        self.gate.limit
    }

    fn score(&self, context: &[Utterance], continuation: &Utterance, mode: ScoreMode) -> Result<Scored, ScoreError> {
        let body = LogLikelihoodRequest {
            context: context.iter().map(Utterance::text).collect(),
            continuation: continuation.text(),
            mode,
        };
        self.with_retries(|s| {
            let resp = s
                .client
                .post(format!("{}/v1/loglikelihood", s.base))
                .json(&body)
                .send()
                .map_err(|e| ScoreError::Transport { message: e.to_string(), attempts: 1 })?;
            match resp.status() {
                StatusCode::BAD_REQUEST => return Err(ScoreError::EmptyTokenization(continuation.text().to_owned())),
                StatusCode::PAYLOAD_TOO_LARGE => {
                    let detail: ErrorBody = resp.json().unwrap_or_default();
                    return Err(ScoreError::ContextTooLong {
                        tokens: detail.tokens.unwrap_or(0),
                        limit: detail.limit.unwrap_or(s.info.max_context_tokens),
                    });
                }
                StatusCode::UNPROCESSABLE_ENTITY => return Err(ScoreError::UnsupportedMode(mode)),
                _ => {}
            }
            let parsed: LogLikelihoodResponse = classify(Ok(resp))?
                .json()
                .map_err(|e| ScoreError::Protocol(format!("bad /v1/loglikelihood body: {e}")))?;
            if parsed.token_count == 0 || !parsed.log_likelihood.is_finite() {
                return Err(ScoreError::Protocol(format!(
                    "invalid score: log_likelihood {}, token_count {}",
                    parsed.log_likelihood, parsed.token_count
                )));
            }
            Ok(Scored { log_likelihood: parsed.log_likelihood, token_count: parsed.token_count })
        })
    }
}
