//! The follow-up log-likelihood score: for a dialog, the sum over a fixed
//! follow-up set of each follow-up's log-likelihood as the next user turn.
//!
//! A score only means something relative to other scores computed with the
//! same backend and follow-up set; nothing here interprets a total on its own.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::load_followup_catalog;
use crate::domain::{AnnotatedExample, Dialog, FollowUpSet, Level, ScoreMode};
use crate::scorer::{score_batch, ScoreCache, ScoreError, ScoreJob, ScorerBackend};
use crate::stats::exact_sum;

/// Follow-ups used when none are configured, in this order.
pub const DEFAULT_FOLLOWUPS: [&str; 5] = [
    "Not really relevant here.",
    "You're really confusing.",
    "You're really boring.",
    "What are you trying to say?",
    "You don't seem interested.",
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("dialog {dialog_id:?} is {found}-level but the metric is configured for {expected}-level")]
    LevelMismatch { dialog_id: String, expected: Level, found: Level },
    #[error("dialog {dialog_id:?}, follow-up {followup:?}: {source}")]
    Scoring {
        dialog_id: String,
        followup: String,
        #[source]
        source: ScoreError,
    },
}

impl MetricError {
    pub fn score_error(&self) -> Option<&ScoreError> {
        match self {
            MetricError::Scoring { source, .. } => Some(source),
            MetricError::LevelMismatch { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricConfig {
    pub followup_set: FollowUpSet,
    pub mode: ScoreMode,
    pub level: Level,
}

impl MetricConfig {
    pub fn new(followup_set: FollowUpSet, mode: ScoreMode, level: Level) -> Self {
        Self { followup_set, mode, level }
    }

    /// Conditional scoring over the default follow-up set.
    pub fn full(level: Level) -> Self {
        Self::new(default_followup_set(), ScoreMode::Conditional, level)
    }

    /// The FED-style baseline: same follow-ups, joint scoring.
    pub fn fed_joint(level: Level) -> Self {
        Self::new(default_followup_set(), ScoreMode::Joint, level)
    }
}

#[derive(Deserialize)]
struct RawFullScore {
    dialog_id: String,
    total: f64,
    parts: BTreeMap<String, f64>,
}

/// Total and per-follow-up log-likelihoods for one dialog.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawFullScore")]
pub struct FullScore {
    dialog_id: String,
    total: f64,
    parts: BTreeMap<String, f64>,
}

impl TryFrom<RawFullScore> for FullScore {
    type Error = String;

    fn try_from(raw: RawFullScore) -> Result<Self, Self::Error> {
        let score = FullScore::from_parts(raw.dialog_id, raw.parts);
        if score.total.to_bits() != raw.total.to_bits() {
            return Err(format!(
                "total {} of {:?} does not equal the sum of its parts ({})",
                raw.total, score.dialog_id, score.total
            ));
        }
        Ok(score)
    }
}

impl FullScore {
    /// Builds a score whose total is the correctly rounded sum of `parts`,
    /// which makes it independent of follow-up order.
    pub fn from_parts(dialog_id: impl Into<String>, parts: BTreeMap<String, f64>) -> Self {
        let total = exact_sum(parts.values().copied());
        Self { dialog_id: dialog_id.into(), total, parts }
    }

    pub fn dialog_id(&self) -> &str {
        &self.dialog_id
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn parts(&self) -> &BTreeMap<String, f64> {
        &self.parts
    }

    pub fn part(&self, followup: &str) -> Option<f64> {
        self.parts.get(followup).copied()
    }
}

/// The five follow-ups shipped as the default set, with catalog metadata.
pub fn default_followup_set() -> FollowUpSet {
    let catalog = load_followup_catalog();
    let followups = DEFAULT_FOLLOWUPS
        .iter()
        .map(|text| {
            catalog.get(text).cloned().unwrap_or_else(|| panic!("default follow-up {text:?} missing from catalog"))
        })
        .collect();
    FollowUpSet::new("default", followups).expect("default follow-ups are distinct")
}

/// Scores one dialog: every follow-up in the set is appended as a user turn
/// after the scoring context and its log-likelihood recorded.
pub fn full_score<B: ScorerBackend + ?Sized>(
    backend: &B,
    cache: &ScoreCache,
    dialog: &Dialog,
    config: &MetricConfig,
) -> Result<FullScore, MetricError> {
    score_dialogs(backend, cache, &[dialog], config).pop().expect("one result per dialog")
}

/// Scores many dialogs in one batch; results are in input order.
pub fn score_dialogs<B: ScorerBackend + ?Sized>(
    backend: &B,
    cache: &ScoreCache,
    dialogs: &[&Dialog],
    config: &MetricConfig,
) -> Vec<Result<FullScore, MetricError>> {
    let followups = config.followup_set.followups();
    let mut jobs = Vec::with_capacity(dialogs.len() * followups.len());
    let mut admitted = Vec::with_capacity(dialogs.len());
    for dialog in dialogs {
        let ok = dialog.level() == config.level;
        admitted.push(ok);
        if ok {
            jobs.extend(followups.iter().map(|f| ScoreJob::new(dialog, f, config.mode)));
        }
    }
    let mut results = score_batch(backend, cache, &jobs).into_results().into_iter();

    dialogs
        .iter()
        .zip(admitted)
        .map(|(dialog, ok)| {
            if !ok {
                return Err(MetricError::LevelMismatch {
                    dialog_id: dialog.id().to_owned(),
                    expected: config.level,
                    found: dialog.level(),
                });
            }
            let mut parts = BTreeMap::new();
            let mut first_error = None;
            for f in followups {
                match results.next().expect("one result per job") {
                    Ok(rec) => {
                        parts.insert(f.text().to_owned(), rec.log_likelihood());
                    }
                    Err(source) => {
                        first_error.get_or_insert(MetricError::Scoring {
                            dialog_id: dialog.id().to_owned(),
                            followup: f.text().to_owned(),
                            source,
                        });
                    }
                }
            }
            match first_error {
                Some(e) => Err(e),
                None => Ok(FullScore::from_parts(dialog.id(), parts)),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusRow {
    pub dialog_id: String,
    pub score: FullScore,
    pub mean_rating: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusFailure {
    pub index: usize,
    pub dialog_id: String,
    pub error: MetricError,
}

/// Scored rows for the examples that succeeded plus every failure, both in
/// input order. `rows.len() + failures.len()` equals the corpus size.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorpusScores {
    pub rows: Vec<CorpusRow>,
    pub failures: Vec<CorpusFailure>,
}

impl CorpusScores {
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }
}

pub fn score_corpus<B: ScorerBackend + ?Sized>(
    backend: &B,
    cache: &ScoreCache,
    examples: &[AnnotatedExample],
    config: &MetricConfig,
) -> CorpusScores {
    let dialogs: Vec<&Dialog> = examples.iter().map(AnnotatedExample::dialog).collect();
    let mut out = CorpusScores::default();
    for (index, (example, result)) in examples.iter().zip(score_dialogs(backend, cache, &dialogs, config)).enumerate() {
        match result {
            Ok(score) => out.rows.push(CorpusRow {
                dialog_id: example.dialog().id().to_owned(),
                score,
                mean_rating: example.mean_rating(),
            }),
            Err(error) => {
                out.failures.push(CorpusFailure { index, dialog_id: example.dialog().id().to_owned(), error })
            }
        }
    }
    out
}
