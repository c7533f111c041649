//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Expected values come from independent oracles written
//! here (counting ranks, exact rational sums) or from the published
//! fixtures shipped with the catalog.

use std::collections::{BTreeMap, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::Command;
use std::time::{Duration, Instant};

use num_rational::BigRational;
use num_traits::{Signed, Zero};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use full_core::data::{
    load_followup_catalog, parse_fed_dataset, reported_followup_correlations, reported_selection, RawFedRecord,
};
use full_core::domain::{Dialog, FollowUp, FollowUpSet, Level, Polarity, ScoreMode, Utterance};
use full_core::metric::{full_score, MetricConfig, DEFAULT_FOLLOWUPS};
use full_core::scorer::{
    score_batch, score_followup, NGramReferenceScorer, RemoteConfig, RemoteScorer, RetryPolicy, ScoreCache, ScoreError,
    ScoreJob, ScorerBackend,
};
use full_core::stats::{polarity_summary, select_followups, spearman, SelectionConfig};
use full_stub_server::{StubConfig, StubServer};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);
type Expectation = fn(&Result<full_core::scorer::Scored, ScoreError>) -> bool;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------------------
// Spearman

/// rank_i = 1 + #{j: v_j < v_i} + #{j != i: v_j == v_i} / 2; Pearson from raw sums.
fn oracle_spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        (0..v.len())
            .map(|i| {
                let less = v.iter().filter(|&&b| b < v[i]).count() as f64;
                let ties = (0..v.len()).filter(|&j| j != i && v[j] == v[i]).count() as f64;
                1.0 + less + ties / 2.0
            })
            .collect()
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mut sx, mut sy, mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sx += a;
        sy += b;
        sxy += a * b;
        sxx += a * a;
        syy += b * b;
    }
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

fn permutations(n: usize) -> Vec<Vec<f64>> {
    fn rec(prefix: &mut Vec<f64>, left: &mut Vec<f64>, out: &mut Vec<Vec<f64>>) {
        if left.is_empty() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..left.len() {
            let v = left.remove(i);
            prefix.push(v);
            rec(prefix, left, out);
            prefix.pop();
            left.insert(i, v);
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut (1..=n).map(|v| v as f64).collect(), &mut out);
    out
}

fn spearman_oracle_equivalence() -> Outcome {
    let mut pairs = 0usize;
    let mut worst = 0.0f64;
    for n in 2..=7 {
        let perms = permutations(n);
        for x in &perms {
            for y in &perms {
                let got = spearman(x, y).map_err(|e| format!("n={n}: {e}"))?;
                let diff = (got - oracle_spearman(x, y)).abs();
                worst = worst.max(diff);
                ensure(diff <= 1e-12, || format!("x={x:?} y={y:?}: off by {diff:e}"))?;
                pairs += 1;
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut tied = 0;
    while tied < 200 {
        let n = rng.gen_range(2..=40);
        let levels = rng.gen_range(2..=6);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(0..levels) as f64 * 0.5).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(0..levels) as f64 - 1.0).collect();
        let constant = |v: &[f64]| v.iter().all(|a| *a == v[0]);
        if constant(&x) || constant(&y) {
            continue;
        }
        let got = spearman(&x, &y).map_err(|e| e.to_string())?;
        let diff = (got - oracle_spearman(&x, &y)).abs();
        worst = worst.max(diff);
        ensure(diff <= 1e-12, || format!("tied x={x:?} y={y:?}: off by {diff:e}"))?;
        tied += 1;
    }
    Ok(format!("{pairs} permutation pairs + {tied} tied vectors, max deviation {worst:e}"))
}

// ---------------------------------------------------------------------------
// Metric aggregation

fn rational(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite")
}

fn neighbours(x: f64) -> (f64, f64) {
    let bits = x.to_bits() as i64;
    let step = |d: i64| {
        if x == 0.0 {
            f64::from_bits(1) * d as f64
        } else {
            f64::from_bits((bits + if x > 0.0 { d } else { -d }) as u64)
        }
    };
    (step(-1), step(1))
}

/// True when `x` is the round-to-nearest-even image of `exact`.
fn correctly_rounded(exact: &BigRational, x: f64) -> bool {
    let d = (exact - rational(x)).abs();
    let (a, b) = neighbours(x);
    let (da, db) = ((exact - rational(a)).abs(), (exact - rational(b)).abs());
    let even = x.to_bits() & 1 == 0;
    (d < da || (d == da && even)) && (d < db || (d == db && even))
}

fn exact_sum<'a>(values: impl IntoIterator<Item = &'a f64>) -> BigRational {
    values.into_iter().fold(BigRational::zero(), |acc, v| acc + rational(*v))
}

const WORDS: [&str; 24] = [
    "hello", "there", "how", "are", "you", "i", "am", "fine", "what", "do", "like", "music", "jazz", "food", "really",
    "not", "that", "is", "so", "boring", "cool", "tell", "me", "more",
];
const ENDINGS: [&str; 3] = [".", "!", "?"];

fn sentence(rng: &mut ChaCha8Rng, punct: bool) -> String {
    let n = rng.gen_range(1..=7);
    let mut words: Vec<&str> = (0..n).map(|_| *WORDS.choose(rng).unwrap()).collect();
    let mut s = words.join(" ");
    if punct || rng.gen_bool(0.5) {
        s.push_str(ENDINGS.choose(rng).unwrap());
    }
    words.clear();
    s
}

fn random_corpus(rng: &mut ChaCha8Rng) -> (Vec<Dialog>, FollowUpSet, Level) {
    let level = if rng.gen_bool(0.5) { Level::Turn } else { Level::Dialog };
    let dialogs = (0..rng.gen_range(1..=4))
        .map(|i| {
            let turns: Vec<Utterance> = (0..rng.gen_range(1..=4))
                .map(|t| {
                    let text = sentence(rng, false);
                    if t % 2 == 0 { Utterance::user(text) } else { Utterance::system(text) }.unwrap()
                })
                .collect();
            match level {
                Level::Turn => {
                    Dialog::turn_level(format!("d{i}"), turns, Utterance::system(sentence(rng, false)).unwrap())
                }
                Level::Dialog => Dialog::dialog_level(format!("d{i}"), turns),
            }
            .unwrap()
        })
        .collect();
    let mut texts: Vec<String> = Vec::new();
    while texts.len() < rng.gen_range(2..=6) {
        let t = sentence(rng, true);
        if !texts.iter().any(|o| o.eq_ignore_ascii_case(&t)) {
            texts.push(t);
        }
    }
    let followups = texts.into_iter().map(|t| FollowUp::new(t, "random", level, Polarity::Negative).unwrap()).collect();
    (dialogs, FollowUpSet::new("random", followups).unwrap(), level)
}

fn metric_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xF011);
    let mut checked = 0usize;
    for corpus in 0..1000 {
        let (dialogs, set, level) = random_corpus(&mut rng);
        let training: Vec<String> = (0..rng.gen_range(0..12)).map(|_| sentence(&mut rng, false)).collect();
        let order = rng.gen_range(1..=3);
        let backend = NGramReferenceScorer::train(order, training.iter().map(String::as_str))
            .map_err(|e| e.to_string())?
            .with_max_in_flight(1);
        let cache = ScoreCache::in_memory();
        let config = MetricConfig::new(set.clone(), ScoreMode::Conditional, level);
        let ctx = |e| format!("corpus {corpus}: {e}");

        let mut shuffled = set.followups().to_vec();
        shuffled.shuffle(&mut rng);
        let shuffled =
            MetricConfig::new(FollowUpSet::new("shuffled", shuffled).unwrap(), ScoreMode::Conditional, level);
        let dropped_index = rng.gen_range(0..set.len());
        let dropped = set.followups()[dropped_index].clone();
        let reduced: Vec<FollowUp> = set.iter().filter(|f| *f != &dropped).cloned().collect();

        for dialog in &dialogs {
            let score = full_score(&backend, &cache, dialog, &config).map_err(ctx)?;
            ensure(correctly_rounded(&exact_sum(score.parts().values()), score.total()), || {
                format!("corpus {corpus}: total {} is not the rounded sum of {:?}", score.total(), score.parts())
            })?;

            let permuted = full_score(&backend, &cache, dialog, &shuffled).map_err(ctx)?;
            ensure(permuted.total().to_bits() == score.total().to_bits(), || {
                format!("corpus {corpus}: total changed under permutation")
            })?;

            if !reduced.is_empty() {
                let sub =
                    MetricConfig::new(FollowUpSet::new("sub", reduced.clone()).unwrap(), ScoreMode::Conditional, level);
                let partial = full_score(&backend, &cache, dialog, &sub).map_err(ctx)?;
                let removed = score.part(dropped.text()).unwrap();
                ensure(
                    exact_sum(partial.parts().values()) + rational(removed) == exact_sum(score.parts().values()),
                    || format!("corpus {corpus}: removing {:?} is not additive", dropped.text()),
                )?;
                ensure(partial.parts().iter().all(|(k, v)| score.part(k) == Some(*v)), || {
                    format!("corpus {corpus}: remaining parts changed after removal")
                })?;
            }

            let context = full_core::domain::make_scoring_context(dialog);
            for f in &set {
                let cond = score_followup(&backend, dialog.id(), &context, f, ScoreMode::Conditional)
                    .map_err(|e| format!("corpus {corpus}: {e}"))?;
                let joint = score_followup(&backend, dialog.id(), &context, f, ScoreMode::Joint)
                    .map_err(|e| format!("corpus {corpus}: {e}"))?;
                ensure(joint.log_likelihood() <= cond.log_likelihood(), || {
                    format!("corpus {corpus}: joint {} > conditional {}", joint.log_likelihood(), cond.log_likelihood())
                })?;
                ensure(joint.token_count() > cond.token_count(), || {
                    format!(
                        "corpus {corpus}: joint scored {} tokens, conditional {}",
                        joint.token_count(),
                        cond.token_count()
                    )
                })?;
            }
            checked += 1;
        }
    }
    Ok(format!(
        "1000 corpora, {checked} dialogs: exact totals, permutation invariance, additivity, joint <= conditional"
    ))
}

// ---------------------------------------------------------------------------
// Published fixtures

fn selection_reproduction() -> Outcome {
    let table = reported_followup_correlations();
    let catalog = load_followup_catalog();
    let config = SelectionConfig { k: 5, dedup_threshold: 0.35 };
    let first = select_followups(&table, &catalog, &config).map_err(|e| e.to_string())?;
    let second = select_followups(&table, &catalog, &config).map_err(|e| e.to_string())?;
    ensure(first == second, || "selection is not deterministic".into())?;

    let pair = ("Not really relevant here.", "That's not really relevant here.");
    let picked: Vec<&str> = first.followups.iter().map(FollowUp::text).collect();
    let both = picked.contains(&pair.0) && picked.contains(&pair.1);
    let deduped = first.skipped.iter().any(|(s, k)| (s == pair.0 && k == pair.1) || (s == pair.1 && k == pair.0));
    ensure(!both && deduped, || format!("duplicate pair not removed; picked {picked:?}"))?;

    let mut expected = reported_selection();
    let mut got: Vec<String> = picked.iter().map(|s| s.to_string()).collect();
    let in_order = got == DEFAULT_FOLLOWUPS;
    expected.sort();
    got.sort();
    ensure(expected == got, || {
        format!("picked {picked:?}, published selection {DEFAULT_FOLLOWUPS:?} (dedup of the cited pair holds)")
    })?;
    Ok(format!("picked {picked:?}; published order reproduced: {in_order}"))
}

fn polarity_means() -> Outcome {
    let s = polarity_summary(&reported_followup_correlations(), &load_followup_catalog()).map_err(|e| e.to_string())?;
    let (neg, pos) = (s.negative.ok_or("no negative rows")?, s.positive.ok_or("no positive rows")?);
    ensure((neg - 0.39).abs() <= 0.01 && (pos - 0.24).abs() <= 0.01, || {
        format!("negative {neg:.4}, positive {pos:.4}; expected 0.39 / 0.24")
    })?;
    Ok(format!("negative {neg:.4}, positive {pos:.4}"))
}

// ---------------------------------------------------------------------------
// Dataset ingestion

fn fed_source() -> Option<PathBuf> {
    if let Some(p) = std::env::var_os("FULL_FED_PATH") {
        return Some(PathBuf::from(p));
    }
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/fed_data.json");
    p.exists().then_some(p)
}

/// Context text with speaker tags, blank lines and line breaks removed.
fn untagged(block: &str) -> String {
    block
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| {
            for tag in ["user:", "system:"] {
                if l.len() >= tag.len() && l[..tag.len()].eq_ignore_ascii_case(tag) {
                    return l[tag.len()..].trim();
                }
            }
            l
        })
        .collect()
}

fn dataset_ingestion() -> Outcome {
    let Some(path) = fed_source() else {
        return Err("upstream FED document not available (set FULL_FED_PATH or place data/fed_data.json)".into());
    };
    let bytes = std::fs::read(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let ingest = parse_fed_dataset(bytes.as_slice()).map_err(|e| e.to_string())?;
    let raw: Vec<RawFedRecord> = serde_json::from_slice(&bytes).map_err(|e| e.to_string())?;
    let by_id: HashMap<&str, &Dialog> = ingest.examples.iter().map(|e| (e.dialog().id(), e.dialog())).collect();
    let (mut turn_no, mut dialog_no, mut lossless) = (0, 0, 0);
    for r in &raw {
        let id = if r.response.is_some() {
            turn_no += 1;
            format!("fed-turn-{:04}", turn_no - 1)
        } else {
            dialog_no += 1;
            format!("fed-dialog-{:04}", dialog_no - 1)
        };
        let Some(d) = by_id.get(id.as_str()) else { continue };
        let parsed: String = d.turns().iter().map(Utterance::text).collect();
        ensure(parsed == untagged(&r.context), || format!("{id}: utterance text differs from source"))?;
        lossless += 1;
    }
    ensure(ingest.turn_level == 372 && ingest.dialog_level == 124, || {
        format!(
            "{} turn-level, {} dialog-level ({} excluded); expected 372 / 124",
            ingest.turn_level, ingest.dialog_level, ingest.excluded
        )
    })?;
    Ok(format!("372 turn-level, 124 dialog-level, {lossless} records lossless"))
}

// ---------------------------------------------------------------------------
// Protocol conformance

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

fn protocol_conformance() -> Outcome {
    let followups: Vec<FollowUp> = (0..4)
        .map(|i| FollowUp::new(format!("Follow-up {i}."), "t", Level::Turn, Polarity::Negative).unwrap())
        .collect();
    let canned: HashMap<String, f64> =
        followups.iter().enumerate().map(|(i, f)| (f.text().to_owned(), -1.0 - i as f64 * 0.125)).collect();
    let dialogs: Vec<Dialog> = (0..5)
        .map(|i| {
            Dialog::turn_level(
                format!("d{i}"),
                vec![Utterance::user(format!("Opening line {i}")).unwrap()],
                Utterance::system("A reply").unwrap(),
            )
            .unwrap()
        })
        .collect();

    // Ordering and bounded in-flight.
    let stub = StubServer::start(StubConfig {
        canned: canned.clone(),
        delay: Duration::from_millis(20),
        ..StubConfig::default()
    });
    let scorer = RemoteScorer::connect(stub.url(), fast(3)).map_err(|e| e.to_string())?;
    let jobs: Vec<ScoreJob> = dialogs
        .iter()
        .flat_map(|d| followups.iter().map(move |f| ScoreJob::new(d, f, ScoreMode::Conditional)))
        .collect();
    let outcome = score_batch(&scorer, &ScoreCache::in_memory(), &jobs);
    for (job, result) in jobs.iter().zip(outcome.results()) {
        let rec = result.as_ref().map_err(|e| e.to_string())?;
        ensure(
            rec.dialog_id() == job.dialog.id()
                && rec.followup_text() == job.followup.text()
                && rec.log_likelihood() == canned[job.followup.text()],
            || format!("result out of order at {} / {}", job.dialog.id(), job.followup.text()),
        )?;
    }
    let peak = stub.peak_in_flight();
    ensure((2..=3).contains(&peak), || format!("peak in-flight {peak}, bound 3"))?;

    // Cache single-call guarantee, within a batch and across reopenings.
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cache_path = dir.path().join("cache.jsonl");
    let stub = StubServer::start(StubConfig { canned, ..StubConfig::default() });
    let scorer = RemoteScorer::connect(stub.url(), fast(2)).map_err(|e| e.to_string())?;
    let doubled: Vec<ScoreJob> = jobs.iter().chain(jobs.iter()).copied().collect();
    let first = score_batch(&scorer, &ScoreCache::open(&cache_path).map_err(|e| e.to_string())?, &doubled);
    ensure(first.is_complete() && stub.request_count() == jobs.len(), || {
        format!("{} requests for {} distinct jobs", stub.request_count(), jobs.len())
    })?;
    let again = score_batch(&scorer, &ScoreCache::open(&cache_path).map_err(|e| e.to_string())?, &jobs);
    ensure(again.is_complete() && again.backend_calls() == 0 && stub.request_count() == jobs.len(), || {
        "warm cache still reached the backend".into()
    })?;

    // Retry taxonomy.
    let mut status_overrides = HashMap::new();
    for (text, status) in [("Empty.", 400), ("Long.", 413), ("Down.", 500), ("Busy.", 429)] {
        status_overrides.insert(text.to_owned(), status);
    }
    let stub =
        StubServer::start(StubConfig { status_overrides, reject_joint: true, fail_first: 2, ..StubConfig::default() });
    let scorer = RemoteScorer::connect(stub.url(), fast(1)).map_err(|e| e.to_string())?;
    let ctx = [Utterance::user("Hi").unwrap()];
    let call = |text: &str, mode| {
        let before = stub.request_count();
        let r = scorer.score(&ctx, &Utterance::user(text).unwrap(), mode);
        (r, stub.request_count() - before)
    };
    let checks: [(&str, ScoreMode, Expectation, usize); 6] = [
        ("Warm up.", ScoreMode::Conditional, |r| r.is_ok(), 3),
        ("Empty.", ScoreMode::Conditional, |r| matches!(r, Err(ScoreError::EmptyTokenization(_))), 1),
        ("Long.", ScoreMode::Conditional, |r| matches!(r, Err(ScoreError::ContextTooLong { .. })), 1),
        ("Fine.", ScoreMode::Joint, |r| matches!(r, Err(ScoreError::UnsupportedMode(ScoreMode::Joint))), 1),
        ("Down.", ScoreMode::Conditional, |r| matches!(r, Err(ScoreError::Transport { attempts: 3, .. })), 3),
        ("Busy.", ScoreMode::Conditional, |r| matches!(r, Err(ScoreError::Transport { attempts: 3, .. })), 3),
    ];
    for (text, mode, expect, attempts) in checks {
        let (r, n) = call(text, mode);
        ensure(expect(&r) && n == attempts, || format!("{text:?}: got {r:?} after {n} request(s)"))?;
    }

    // Atomic CLI output.
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let corpus = dir.path().join("corpus.jsonl");
    std::fs::write(
        &corpus,
        "{\"id\":\"a\",\"level\":\"turn\",\"turns\":[{\"speaker\":\"user\",\"text\":\"Hi\"}],\"response\":{\"speaker\":\"system\",\"text\":\"Hello\"}}\n",
    )
    .map_err(|e| e.to_string())?;
    let out = dir.path().join("scores.jsonl");
    std::fs::write(&out, "previous\n").map_err(|e| e.to_string())?;
    let port = std::net::TcpListener::bind("127.0.0.1:0").map_err(|e| e.to_string())?.local_addr().unwrap().port();
    let status = Command::new(env!("CARGO_BIN_EXE_full"))
        .args(["score", "--corpus", corpus.to_str().unwrap(), "--endpoint", &format!("http://127.0.0.1:{port}")])
        .args(["-o", out.to_str().unwrap()])
        .env_remove("FULL_CONFIG")
        .env_remove("FULL_CACHE_DIR")
        .output()
        .map_err(|e| e.to_string())?;
    ensure(status.status.code() == Some(3), || format!("unreachable run exited {:?}", status.status.code()))?;
    let kept = std::fs::read_to_string(&out).map_err(|e| e.to_string())?;
    let leftovers = std::fs::read_dir(dir.path()).map_err(|e| e.to_string())?.count();
    ensure(kept == "previous\n" && leftovers == 2, || "failed run disturbed the output directory".into())?;

    Ok(format!(
        "{} ordered results, peak in-flight {peak}/3, cache single-call, 6 error classes, atomic output",
        jobs.len()
    ))
}

fn main() {
    let criteria: [Criterion; 6] = [
        ("spearman oracle equivalence", spearman_oracle_equivalence),
        ("metric aggregation properties", metric_properties),
        ("selection reproduction from fixtures", selection_reproduction),
        ("polarity summary from fixtures", polarity_means),
        ("dataset ingestion counts", dataset_ingestion),
        ("protocol conformance", protocol_conformance),
    ];
    let mut results = BTreeMap::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match &outcome {
            Ok(detail) => println!("PASS [{}] {name} ({secs:.1}s): {detail}", i + 1),
            Err(detail) => println!("FAIL [{}] {name} ({secs:.1}s): {detail}", i + 1),
        }
        results.insert(i, outcome.is_ok());
    }
    let passed = results.values().filter(|ok| **ok).count();
    println!("{passed}/{} acceptance criteria passed", criteria.len());
    if passed != criteria.len() {
        std::process::exit(1);
    }
}
