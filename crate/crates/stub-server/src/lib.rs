//! In-process stand-in for the model server, for client contract tests.
//!
//! Speaks the same three endpoints as the real server with canned,
//! deterministic answers, and can inject latency, transient 503s and
//! per-continuation error statuses. Tokens are whitespace-separated words.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use tiny_http::{Header, Method, Response, Server};

const WORKERS: usize = 16;

#[derive(Debug, Clone)]
pub struct StubConfig {
    pub model: String,
    pub family: String,
    pub revision: String,
    pub max_context_tokens: usize,
    /// Conditional log-likelihood per continuation text.
    pub canned: HashMap<String, f64>,
    /// Per-token log-likelihood for continuations not in `canned`.
    pub default_per_token: f64,
    /// Per-token log-likelihood added for each context token in joint mode.
    pub joint_per_token: f64,
    /// Whether joint mode is rejected with 422, as a seq2seq server does.
    pub reject_joint: bool,
    /// Latency added to every scoring request.
    pub delay: Duration,
    /// The first N scoring requests answer 503.
    pub fail_first: usize,
    /// Fixed status (e.g. 400, 413, 500) for requests whose continuation or
    /// any context utterance equals the key.
    pub status_overrides: HashMap<String, u16>,
}

impl Default for StubConfig {
    fn default() -> Self {
        Self {
            model: "stub-model".into(),
            family: "causal".into(),
            revision: "r1".into(),
            max_context_tokens: 512,
            canned: HashMap::new(),
            default_per_token: -0.5,
            joint_per_token: -0.25,
            reject_joint: false,
            delay: Duration::ZERO,
            fail_first: 0,
            status_overrides: HashMap::new(),
        }
    }
}

/// A scoring request as the stub received it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedRequest {
    pub context: Vec<String>,
    pub continuation: String,
    pub mode: String,
}

#[derive(Default)]
struct Stats {
    requests: AtomicUsize,
    in_flight: AtomicUsize,
    peak: AtomicUsize,
    log: Mutex<Vec<LoggedRequest>>,
}

pub struct StubServer {
    server: Arc<Server>,
    stats: Arc<Stats>,
    workers: Vec<JoinHandle<()>>,
    url: String,
}

fn words(s: &str) -> usize {
    s.split_whitespace().count()
}

fn json_response(status: u16, body: serde_json::Value) -> Response<std::io::Cursor<Vec<u8>>> {
    Response::from_string(body.to_string())
        .with_status_code(status)
        .with_header(Header::from_bytes("Content-Type", "application/json").unwrap())
}

fn handle(config: &StubConfig, stats: &Stats, mut request: tiny_http::Request) {
    let response = match (request.method(), request.url()) {
        (Method::Get, "/v1/health") => json_response(200, json!({"status": "ok"})),
        (Method::Get, "/v1/model") => json_response(
            200,
            json!({
                "model": config.model,
                "family": config.family,
                "max_context_tokens": config.max_context_tokens,
                "revision": config.revision,
            }),
        ),
        (Method::Post, "/v1/loglikelihood") => {
            let mut body = String::new();
            let parsed = request
                .as_reader()
                .read_to_string(&mut body)
                .ok()
                .and_then(|_| serde_json::from_str::<LoggedRequest>(&body).ok());
            let now = stats.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
            stats.peak.fetch_max(now, Ordering::SeqCst);
            let n = stats.requests.fetch_add(1, Ordering::SeqCst);
            std::thread::sleep(config.delay);
            let response = match parsed {
                None => json_response(400, json!({"error": "malformed request"})),
                Some(req) => {
                    stats.log.lock().unwrap().push(req.clone());
                    score(config, n, &req)
                }
            };
            stats.in_flight.fetch_sub(1, Ordering::SeqCst);
            response
        }
        _ => json_response(404, json!({"error": "not found"})),
    };
    let _ = request.respond(response);
}

fn score(config: &StubConfig, n: usize, req: &LoggedRequest) -> Response<std::io::Cursor<Vec<u8>>> {
    if n < config.fail_first {
        return json_response(503, json!({"error": "warming up"}));
    }
    let matched =
        std::iter::once(&req.continuation).chain(&req.context).find_map(|text| config.status_overrides.get(text));
    if let Some(&status) = matched {
        return json_response(status, json!({"error": "injected", "tokens": 9999, "limit": config.max_context_tokens}));
    }
    if req.continuation.trim().is_empty() {
        return json_response(400, json!({"error": "empty continuation"}));
    }
    let joint = req.mode == "joint";
    if joint && config.reject_joint {
        return json_response(422, json!({"error": "joint mode unsupported"}));
    }
    let cont_tokens = words(&req.continuation);
    let base = config.canned.get(&req.continuation).copied().unwrap_or(config.default_per_token * cont_tokens as f64);
    let (ll, tokens) = if joint {
        let ctx: usize = req.context.iter().map(|c| words(c)).sum();
        (base + config.joint_per_token * ctx as f64, cont_tokens + ctx)
    } else {
        (base, cont_tokens)
    };
    json_response(200, json!({"log_likelihood": ll, "token_count": tokens.max(1), "model": config.model}))
}

impl StubServer {
    /// Binds an ephemeral localhost port and starts serving.
    pub fn start(config: StubConfig) -> Self {
        let server = Arc::new(Server::http("127.0.0.1:0").expect("bind stub server"));
        let url = format!("http://{}", server.server_addr().to_ip().expect("ip listener"));
        let stats = Arc::new(Stats::default());
        let config = Arc::new(config);
        let workers = (0..WORKERS)
            .map(|_| {
                let (server, stats, config) = (server.clone(), stats.clone(), config.clone());
                std::thread::spawn(move || {
                    while let Ok(request) = server.recv() {
                        handle(&config, &stats, request);
                    }
                })
            })
            .collect();
        Self { server, stats, workers, url }
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    /// Scoring requests received, including failed ones.
    pub fn request_count(&self) -> usize {
        self.stats.requests.load(Ordering::SeqCst)
    }

    /// Highest number of scoring requests handled at once.
    pub fn peak_in_flight(&self) -> usize {
        self.stats.peak.load(Ordering::SeqCst)
    }

    pub fn requests(&self) -> Vec<LoggedRequest> {
        self.stats.log.lock().unwrap().clone()
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        for _ in &self.workers {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.stop();
    }
}
