use std::collections::HashMap;
use std::time::Duration;

use full_core::domain::FollowUpSet;
use full_core::domain::{Dialog, FollowUp, Level, Polarity, ScoreMode, Utterance};
use full_core::metric::{full_score, MetricConfig};
use full_core::scorer::{
    score_batch, RemoteConfig, RemoteScorer, RetryPolicy, ScoreCache, ScoreError, ScoreJob, ScorerBackend,
};
use full_stub_server::{StubConfig, StubServer};

fn fast(max_in_flight: usize) -> RemoteConfig {
    RemoteConfig {
        timeout: Duration::from_secs(5),
        max_in_flight,
        retry: RetryPolicy {
            max_attempts: 3,
            initial_backoff: Duration::from_millis(5),
            max_backoff: Duration::from_millis(20),
        },
    }
}

fn dialog(id: &str) -> Dialog {
    Dialog::turn_level(
        id,
        vec![Utterance::user("Hi there").unwrap(), Utterance::system("Hello friend").unwrap()],
        Utterance::system("How are you today?").unwrap(),
    )
    .unwrap()
}

fn followup(text: &str) -> FollowUp {
    FollowUp::new(text, "test", Level::Turn, Polarity::Negative).unwrap()
}

#[test]
fn connect_reads_model_info() {
    let stub = StubServer::start(StubConfig::default());
    let scorer = RemoteScorer::connect(stub.url(), fast(2)).unwrap();
    assert_eq!(scorer.backend_id(), "remote:stub-model@r1");
    assert_eq!(scorer.info().max_context_tokens, 512);
    assert_eq!(scorer.count_tokens("anything"), None);
}

#[test]
fn request_shape_and_values() {
    let mut canned = HashMap::new();
    canned.insert("Tell me more!".to_string(), -3.25);
    let stub = StubServer::start(StubConfig { canned, ..StubConfig::default() });
    let scorer = RemoteScorer::connect(stub.url(), fast(1)).unwrap();
    let d = dialog("d1");
    let context = full_core::domain::make_scoring_context(&d);
    let got = scorer.score(&context, &followup("Tell me more!").as_utterance(), ScoreMode::Conditional).unwrap();
    assert_eq!(got.log_likelihood, -3.25);
    assert_eq!(got.token_count, 3);

    let joint = scorer.score(&context, &followup("Tell me more!").as_utterance(), ScoreMode::Joint).unwrap();
    // Context has 2 + 2 + 4 words at -0.25 each.
    assert_eq!(joint.log_likelihood, -3.25 - 2.0);
    assert_eq!(joint.token_count, 11);

    let logged = stub.requests();
    assert_eq!(logged[0].context, ["Hi there", "Hello friend", "How are you today?"]);
    assert_eq!(logged[0].continuation, "Tell me more!");
    assert_eq!(logged[0].mode, "conditional");
    assert_eq!(logged[1].mode, "joint");
}

#[test]
fn error_taxonomy() {
    let mut status_overrides = HashMap::new();
    status_overrides.insert("Empty.".to_string(), 400);
    status_overrides.insert("Long.".to_string(), 413);
    status_overrides.insert("Broken.".to_string(), 500);
    status_overrides.insert("Teapot.".to_string(), 418);
    let stub = StubServer::start(StubConfig { status_overrides, reject_joint: true, ..StubConfig::default() });
    let scorer = RemoteScorer::connect(stub.url(), fast(1)).unwrap();
    let ctx = [Utterance::user("Hi").unwrap()];
    let score = |text: &str, mode| scorer.score(&ctx, &followup(text).as_utterance(), mode);

    assert!(matches!(score("Empty.", ScoreMode::Conditional), Err(ScoreError::EmptyTokenization(_))));
    assert_eq!(score("Long.", ScoreMode::Conditional), Err(ScoreError::ContextTooLong { tokens: 9999, limit: 512 }));
    assert_eq!(score("Fine.", ScoreMode::Joint), Err(ScoreError::UnsupportedMode(ScoreMode::Joint)));
    assert!(matches!(score("Teapot.", ScoreMode::Conditional), Err(ScoreError::Protocol(_))));

    let before = stub.request_count();
    match score("Broken.", ScoreMode::Conditional) {
        Err(ScoreError::Transport { attempts, .. }) => assert_eq!(attempts, 3),
        other => panic!("{other:?}"),
    }
    assert_eq!(stub.request_count() - before, 3, "5xx is retried up to the budget");
    let before = stub.request_count();
    let _ = score("Empty.", ScoreMode::Conditional);
    assert_eq!(stub.request_count() - before, 1, "permanent errors are not retried");
}

#[test]
fn transient_failures_recover_within_budget() {
    let stub = StubServer::start(StubConfig { fail_first: 2, ..StubConfig::default() });
    let scorer = RemoteScorer::connect(stub.url(), fast(1)).unwrap();
    let got = scorer
        .score(&[Utterance::user("Hi").unwrap()], &followup("Go on.").as_utterance(), ScoreMode::Conditional)
        .unwrap();
    assert_eq!(got.log_likelihood, -1.0);
    assert_eq!(stub.request_count(), 3);
}

#[test]
fn batch_respects_in_flight_bound_and_order() {
    let stub = StubServer::start(StubConfig { delay: Duration::from_millis(30), ..StubConfig::default() });
    let scorer = RemoteScorer::connect(stub.url(), fast(3)).unwrap();
    let dialogs: Vec<Dialog> = (0..4).map(|i| dialog(&format!("d{i}"))).collect();
    let followups: Vec<FollowUp> = ["A b.", "A b c.", "A b c d."].iter().map(|t| followup(t)).collect();
    let jobs: Vec<ScoreJob> =
        dialogs.iter().flat_map(|d| followups.iter().map(move |f| ScoreJob::new(d, f, ScoreMode::Joint))).collect();
    let outcome = score_batch(&scorer, &ScoreCache::in_memory(), &jobs);
    assert!(outcome.is_complete());
    assert!(stub.peak_in_flight() <= 3, "peak {}", stub.peak_in_flight());
    assert!(stub.peak_in_flight() >= 2, "requests were not overlapped");
    for (job, result) in jobs.iter().zip(outcome.results()) {
        let rec = result.as_ref().unwrap();
        assert_eq!(rec.dialog_id(), job.dialog.id());
        assert_eq!(rec.followup_text(), job.followup.text());
    }
    // Identical contexts across dialogs share digests: one call per follow-up.
    assert_eq!(stub.request_count(), 3);
}

#[test]
fn cache_avoids_repeat_calls_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cache.jsonl");
    let stub = StubServer::start(StubConfig::default());
    let scorer = RemoteScorer::connect(stub.url(), fast(2)).unwrap();
    let set = FollowUpSet::new("s", vec![followup("One two."), followup("Three.")]).unwrap();
    let config = MetricConfig::new(set, ScoreMode::Conditional, Level::Turn);
    let d = dialog("d");
    let first = full_score(&scorer, &ScoreCache::open(&path).unwrap(), &d, &config).unwrap();
    assert_eq!(stub.request_count(), 2);
    let second = full_score(&scorer, &ScoreCache::open(&path).unwrap(), &d, &config).unwrap();
    assert_eq!(stub.request_count(), 2);
    assert_eq!(first, second);
    assert_eq!(first.total(), -1.5);
}
