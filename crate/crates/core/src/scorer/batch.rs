use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::cache::{cache_digest, ScoreCache};
use super::{score_followup, ScoreError, ScorerBackend};
use crate::domain::{make_scoring_context, Dialog, FollowUp, ScoreMode, ScoreRecord, Utterance};

/// One (dialog, follow-up, mode) scoring request.
#[derive(Debug, Clone, Copy)]
pub struct ScoreJob<'a> {
    pub dialog: &'a Dialog,
    pub followup: &'a FollowUp,
    pub mode: ScoreMode,
}

impl<'a> ScoreJob<'a> {
    pub fn new(dialog: &'a Dialog, followup: &'a FollowUp, mode: ScoreMode) -> Self {
        Self { dialog, followup, mode }
    }
}

/// Per-job results of [`score_batch`], in job order.
#[derive(Debug, Clone)]
pub struct BatchOutcome {
    results: Vec<Result<ScoreRecord, ScoreError>>,
    backend_calls: usize,
}

impl BatchOutcome {
    pub fn results(&self) -> &[Result<ScoreRecord, ScoreError>] {
        &self.results
    }

    pub fn into_results(self) -> Vec<Result<ScoreRecord, ScoreError>> {
        self.results
    }

    pub fn succeeded(&self) -> impl Iterator<Item = (usize, &ScoreRecord)> {
        self.results.iter().enumerate().filter_map(|(i, r)| r.as_ref().ok().map(|rec| (i, rec)))
    }

    pub fn failed(&self) -> impl Iterator<Item = (usize, &ScoreError)> {
        self.results.iter().enumerate().filter_map(|(i, r)| r.as_ref().err().map(|e| (i, e)))
    }

    pub fn is_complete(&self) -> bool {
        self.results.iter().all(Result::is_ok)
    }

    /// Number of jobs that missed the cache and went to the backend.
    pub fn backend_calls(&self) -> usize {
        self.backend_calls
    }

    pub fn len(&self) -> usize {
        self.results.len()
    }

    pub fn is_empty(&self) -> bool {
        self.results.is_empty()
    }
}

struct Pending<'a> {
    digest: String,
    job: ScoreJob<'a>,
    context: Vec<Utterance>,
}

/// Scores `jobs`, resolving each from `cache` when possible.
///
/// Jobs sharing a cache digest are scored once. Cache misses are spread over
/// at most `backend.max_in_flight()` worker threads. A failing job never
/// aborts the batch; its error is kept in its slot.
pub fn score_batch<B: ScorerBackend + ?Sized>(backend: &B, cache: &ScoreCache, jobs: &[ScoreJob<'_>]) -> BatchOutcome {
    let backend_id = backend.backend_id();
    let mut slots: Vec<Slot> = Vec::with_capacity(jobs.len());
    let mut pending: Vec<Pending<'_>> = Vec::new();
    let mut pending_by_digest: HashMap<String, usize> = HashMap::new();

    for job in jobs {
        let context = make_scoring_context(job.dialog);
        let digest = cache_digest(backend_id, job.mode, &context, job.followup.text());
        if let Some(hit) = cache.get(&digest) {
            slots.push(Slot::Ready(Ok(hit)));
            continue;
        }
        let idx = *pending_by_digest.entry(digest.clone()).or_insert_with(|| {
            pending.push(Pending { digest, job: *job, context });
            pending.len() - 1
        });
        slots.push(Slot::Pending(idx));
    }

    let computed = run_pending(backend, cache, &pending);

    let results = slots
        .into_iter()
        .zip(jobs)
        .map(|(slot, job)| {
            let result = match slot {
                Slot::Ready(r) => r,
                Slot::Pending(i) => computed[i].clone(),
            };
            result.map(|rec| if rec.dialog_id() == job.dialog.id() { rec } else { rec.for_dialog(job.dialog.id()) })
        })
        .collect();

    BatchOutcome { results, backend_calls: pending.len() }
}

enum Slot {
    Ready(Result<ScoreRecord, ScoreError>),
    Pending(usize),
}

fn run_pending<B: ScorerBackend + ?Sized>(
    backend: &B,
    cache: &ScoreCache,
    pending: &[Pending<'_>],
) -> Vec<Result<ScoreRecord, ScoreError>> {
    if pending.is_empty() {
        return Vec::new();
    }
    let workers = backend.max_in_flight().clamp(1, pending.len());
    let next = AtomicUsize::new(0);
    let out: Mutex<Vec<Option<Result<ScoreRecord, ScoreError>>>> = Mutex::new(vec![None; pending.len()]);

    let work = || loop {
        let i = next.fetch_add(1, Ordering::Relaxed);
        let Some(p) = pending.get(i) else { break };
        let result = score_followup(backend, p.job.dialog.id(), &p.context, p.job.followup, p.job.mode).map(|rec| {
            match cache.insert(&p.digest, rec.clone()) {
                Ok(stored) => stored,
                Err(e) => {
                    log::warn!("score cache write failed: {e}");
                    rec
                }
            }
        });
        out.lock().unwrap()[i] = Some(result);
    };

    if workers == 1 {
        work();
    } else {
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(work);
            }
        });
    }
    out.into_inner().unwrap().into_iter().map(|r| r.expect("every pending job is visited")).collect()
}
