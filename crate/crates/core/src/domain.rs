//! Domain types shared across the toolkit.
//!
//! Every type here validates its invariants at construction (including
//! deserialization) and is immutable afterwards, so values can be shared
//! freely between threads.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("utterance text is empty")]
    EmptyUtterance,
    #[error("dialog {0:?} has no turns")]
    NoTurns(String),
    #[error("dialog {id:?}: level {level} requires the response to be {expectation}")]
    LevelMismatch { id: String, level: Level, expectation: &'static str },
    #[error("dialog {0:?}: the response under evaluation must be spoken by the system")]
    ResponseNotSystem(String),
    #[error("follow-up {0:?} must end with '.', '!' or '?'")]
    MissingTerminalPunctuation(String),
    #[error("follow-up set {0:?} is empty")]
    EmptyFollowUpSet(String),
    #[error("follow-up set {set:?} contains {text:?} twice (case-insensitive)")]
    DuplicateFollowUp { set: String, text: String },
    #[error("score record for {0:?} has a zero token count")]
    ZeroTokenCount(String),
    #[error("annotated example {0:?} has no ratings")]
    NoRatings(String),
    #[error("rating {value} for {id:?} is not a finite number")]
    NonFiniteRating { id: String, value: f64 },
    #[error("correlation {value} for row {label:?} is outside [-1, 1]")]
    CorrelationOutOfRange { label: String, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    System,
}

impl Speaker {
    pub fn other(self) -> Speaker {
        match self {
            Speaker::User => Speaker::System,
            Speaker::System => Speaker::User,
        }
    }
}

impl fmt::Display for Speaker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Speaker::User => f.write_str("user"),
            Speaker::System => f.write_str("system"),
        }
    }
}

/// Evaluation granularity: a single response in context, or a whole conversation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Turn,
    Dialog,
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Level::Turn => f.write_str("turn"),
            Level::Dialog => f.write_str("dialog"),
        }
    }
}

impl std::str::FromStr for Level {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "turn" => Ok(Level::Turn),
            "dialog" | "dialogue" => Ok(Level::Dialog),
            other => Err(format!("unknown level {other:?} (expected turn or dialog)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Negative,
    Positive,
}

impl std::str::FromStr for Polarity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "negative" | "neg" => Ok(Polarity::Negative),
            "positive" | "pos" => Ok(Polarity::Positive),
            other => Err(format!("unknown polarity {other:?}")),
        }
    }
}

/// How a continuation is scored.
///
/// `Conditional` sums the log-probabilities of the continuation tokens only.
/// `Joint` additionally sums the log-probabilities of the context tokens,
/// which is the FED-style reading used as a baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMode {
    Conditional,
    Joint,
}

impl ScoreMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoreMode::Conditional => "conditional",
            ScoreMode::Joint => "joint",
        }
    }
}

impl fmt::Display for ScoreMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Deserialize)]
struct RawUtterance {
    speaker: Speaker,
    text: String,
}

/// A speaker-tagged utterance with non-blank text.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawUtterance")]
pub struct Utterance {
    speaker: Speaker,
    text: String,
}

impl TryFrom<RawUtterance> for Utterance {
    type Error = DomainError;

    fn try_from(raw: RawUtterance) -> Result<Self, Self::Error> {
        Utterance::new(raw.speaker, raw.text)
    }
}

impl Utterance {
    pub fn new(speaker: Speaker, text: impl Into<String>) -> Result<Self, DomainError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(DomainError::EmptyUtterance);
        }
        Ok(Self { speaker, text })
    }

    pub fn user(text: impl Into<String>) -> Result<Self, DomainError> {
        Self::new(Speaker::User, text)
    }

    pub fn system(text: impl Into<String>) -> Result<Self, DomainError> {
        Self::new(Speaker::System, text)
    }

    pub fn speaker(&self) -> Speaker {
        self.speaker
    }

    pub fn text(&self) -> &str {
        &self.text
    }
}

#[derive(Deserialize)]
struct RawDialog {
    id: String,
    level: Level,
    turns: Vec<Utterance>,
    #[serde(default)]
    response: Option<Utterance>,
}

/// A conversation history, optionally followed by the system response under
/// evaluation. Turn-level dialogs carry a response; dialog-level ones do not.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawDialog")]
pub struct Dialog {
    id: String,
    level: Level,
    turns: Vec<Utterance>,
    #[serde(skip_serializing_if = "Option::is_none")]
    response: Option<Utterance>,
}

impl TryFrom<RawDialog> for Dialog {
    type Error = DomainError;

    fn try_from(raw: RawDialog) -> Result<Self, Self::Error> {
        match raw.response {
            Some(response) => {
                if raw.level != Level::Turn {
                    return Err(DomainError::LevelMismatch { id: raw.id, level: raw.level, expectation: "absent" });
                }
                Dialog::turn_level(raw.id, raw.turns, response)
            }
            None => {
                if raw.level != Level::Dialog {
                    return Err(DomainError::LevelMismatch { id: raw.id, level: raw.level, expectation: "present" });
                }
                Dialog::dialog_level(raw.id, raw.turns)
            }
        }
    }
}

impl Dialog {
    pub fn turn_level(id: impl Into<String>, turns: Vec<Utterance>, response: Utterance) -> Result<Self, DomainError> {
        let id = id.into();
        if turns.is_empty() {
            return Err(DomainError::NoTurns(id));
        }
        if response.speaker() != Speaker::System {
            return Err(DomainError::ResponseNotSystem(id));
        }
        Ok(Self { id, level: Level::Turn, turns, response: Some(response) })
    }

    pub fn dialog_level(id: impl Into<String>, turns: Vec<Utterance>) -> Result<Self, DomainError> {
        let id = id.into();
        if turns.is_empty() {
            return Err(DomainError::NoTurns(id));
        }
        Ok(Self { id, level: Level::Dialog, turns, response: None })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn level(&self) -> Level {
        self.level
    }

    pub fn turns(&self) -> &[Utterance] {
        &self.turns
    }

    pub fn response(&self) -> Option<&Utterance> {
        self.response.as_ref()
    }
}

/// The utterances a follow-up is conditioned on: the history, then the
/// response under evaluation when there is one.
pub fn make_scoring_context(dialog: &Dialog) -> Vec<Utterance> {
    let mut context = Vec::with_capacity(dialog.turns.len() + 1);
    context.extend(dialog.turns.iter().cloned());
    if let Some(response) = &dialog.response {
        context.push(response.clone());
    }
    context
}

#[derive(Deserialize)]
struct RawFollowUp {
    text: String,
    category: String,
    level: Level,
    polarity: Polarity,
}

/// A candidate continuation together with its catalog metadata.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawFollowUp")]
pub struct FollowUp {
    text: String,
    category: String,
    #[serde(rename = "level")]
    attachment_level: Level,
    polarity: Polarity,
}

impl TryFrom<RawFollowUp> for FollowUp {
    type Error = DomainError;

    fn try_from(raw: RawFollowUp) -> Result<Self, Self::Error> {
        FollowUp::new(raw.text, raw.category, raw.level, raw.polarity)
    }
}

impl FollowUp {
    pub fn new(
        text: impl Into<String>,
        category: impl Into<String>,
        attachment_level: Level,
        polarity: Polarity,
    ) -> Result<Self, DomainError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(DomainError::EmptyUtterance);
        }
        if !text.trim_end().ends_with(['.', '!', '?']) {
            return Err(DomainError::MissingTerminalPunctuation(text));
        }
        Ok(Self { text, category: category.into(), attachment_level, polarity })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn category(&self) -> &str {
        &self.category
    }

    pub fn attachment_level(&self) -> Level {
        self.attachment_level
    }

    pub fn polarity(&self) -> Polarity {
        self.polarity
    }

    /// The follow-up as the next conversational turn. Follow-ups model the
    /// human's reaction, so they are always spoken by the user.
    pub fn as_utterance(&self) -> Utterance {
        Utterance { speaker: Speaker::User, text: self.text.clone() }
    }
}

#[derive(Deserialize)]
struct RawFollowUpSet {
    name: String,
    followups: Vec<FollowUp>,
}

/// An ordered, non-empty set of follow-ups with case-insensitively distinct texts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawFollowUpSet")]
pub struct FollowUpSet {
    name: String,
    followups: Vec<FollowUp>,
}

impl TryFrom<RawFollowUpSet> for FollowUpSet {
    type Error = DomainError;

    fn try_from(raw: RawFollowUpSet) -> Result<Self, Self::Error> {
        FollowUpSet::new(raw.name, raw.followups)
    }
}

impl FollowUpSet {
    pub fn new(name: impl Into<String>, followups: Vec<FollowUp>) -> Result<Self, DomainError> {
        let name = name.into();
        if followups.is_empty() {
            return Err(DomainError::EmptyFollowUpSet(name));
        }
        let mut seen = std::collections::HashSet::new();
        for f in &followups {
            if !seen.insert(f.text.to_lowercase()) {
                return Err(DomainError::DuplicateFollowUp { set: name, text: f.text.clone() });
            }
        }
        Ok(Self { name, followups })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn followups(&self) -> &[FollowUp] {
        &self.followups
    }

    pub fn len(&self) -> usize {
        self.followups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.followups.is_empty()
    }

    pub fn get(&self, text: &str) -> Option<&FollowUp> {
        self.followups.iter().find(|f| f.text == text)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, FollowUp> {
        self.followups.iter()
    }
}

impl<'a> IntoIterator for &'a FollowUpSet {
    type Item = &'a FollowUp;
    type IntoIter = std::slice::Iter<'a, FollowUp>;

    fn into_iter(self) -> Self::IntoIter {
        self.followups.iter()
    }
}

#[derive(Deserialize)]
struct RawScoreRecord {
    dialog_id: String,
    followup_text: String,
    log_likelihood: f64,
    token_count: u32,
    backend_id: String,
}

/// Log-likelihood (nats) of one follow-up for one dialog.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawScoreRecord")]
pub struct ScoreRecord {
    dialog_id: String,
    followup_text: String,
    log_likelihood: f64,
    token_count: u32,
    backend_id: String,
}

impl TryFrom<RawScoreRecord> for ScoreRecord {
    type Error = DomainError;

    fn try_from(raw: RawScoreRecord) -> Result<Self, Self::Error> {
        ScoreRecord::new(raw.dialog_id, raw.followup_text, raw.log_likelihood, raw.token_count, raw.backend_id)
    }
}

impl ScoreRecord {
    pub fn new(
        dialog_id: impl Into<String>,
        followup_text: impl Into<String>,
        log_likelihood: f64,
        token_count: u32,
        backend_id: impl Into<String>,
    ) -> Result<Self, DomainError> {
        let dialog_id = dialog_id.into();
        if token_count == 0 {
            return Err(DomainError::ZeroTokenCount(dialog_id));
        }
        Ok(Self {
            dialog_id,
            followup_text: followup_text.into(),
            log_likelihood,
            token_count,
            backend_id: backend_id.into(),
        })
    }

    pub fn dialog_id(&self) -> &str {
        &self.dialog_id
    }

    pub fn followup_text(&self) -> &str {
        &self.followup_text
    }

    pub fn log_likelihood(&self) -> f64 {
        self.log_likelihood
    }

    pub fn token_count(&self) -> u32 {
        self.token_count
    }

    pub fn backend_id(&self) -> &str {
        &self.backend_id
    }

    /// The same score attributed to another dialog with an identical context.
    pub fn for_dialog(&self, dialog_id: &str) -> ScoreRecord {
        ScoreRecord { dialog_id: dialog_id.to_owned(), ..self.clone() }
    }
}

/// A dialog with its human overall-quality ratings.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedExample {
    dialog: Dialog,
    ratings: Vec<f64>,
    mean_rating: f64,
}

impl AnnotatedExample {
    pub fn new(dialog: Dialog, ratings: Vec<f64>) -> Result<Self, DomainError> {
        if ratings.is_empty() {
            return Err(DomainError::NoRatings(dialog.id));
        }
        if let Some(&value) = ratings.iter().find(|r| !r.is_finite()) {
            return Err(DomainError::NonFiniteRating { id: dialog.id, value });
        }
        let mean_rating = ratings.iter().sum::<f64>() / ratings.len() as f64;
        Ok(Self { dialog, ratings, mean_rating })
    }

    pub fn dialog(&self) -> &Dialog {
        &self.dialog
    }

    pub fn ratings(&self) -> &[f64] {
        &self.ratings
    }

    pub fn mean_rating(&self) -> f64 {
        self.mean_rating
    }
}

#[derive(Serialize, Deserialize)]
struct RawCorpusRecord {
    id: String,
    level: Level,
    turns: Vec<Utterance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    response: Option<Utterance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ratings: Option<Vec<Option<f64>>>,
}

/// One line of the canonical corpus format.
///
/// Ratings are optional; `null` entries mark missing annotations and are
/// dropped when the record is turned into an [`AnnotatedExample`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCorpusRecord", into = "RawCorpusRecord")]
pub struct CorpusRecord {
    pub dialog: Dialog,
    pub ratings: Option<Vec<f64>>,
}

impl TryFrom<RawCorpusRecord> for CorpusRecord {
    type Error = DomainError;

    fn try_from(raw: RawCorpusRecord) -> Result<Self, Self::Error> {
        let dialog =
            Dialog::try_from(RawDialog { id: raw.id, level: raw.level, turns: raw.turns, response: raw.response })?;
        let ratings = raw.ratings.map(|rs| rs.into_iter().flatten().collect::<Vec<_>>());
        Ok(CorpusRecord { dialog, ratings })
    }
}

impl From<CorpusRecord> for RawCorpusRecord {
    fn from(record: CorpusRecord) -> Self {
        RawCorpusRecord {
            id: record.dialog.id,
            level: record.dialog.level,
            turns: record.dialog.turns,
            response: record.dialog.response,
            ratings: record.ratings.map(|rs| rs.into_iter().map(Some).collect()),
        }
    }
}

impl CorpusRecord {
    /// `None` when the record carries no usable rating; such examples are
    /// left out of correlation studies.
    pub fn annotated(&self) -> Option<AnnotatedExample> {
        let ratings = self.ratings.as_ref()?;
        AnnotatedExample::new(self.dialog.clone(), ratings.clone()).ok()
    }
}

/// One row of a correlation table; coefficients are absent when a level was
/// not studied or the correlation is undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub label: String,
    pub turn: Option<f64>,
    pub dialog: Option<f64>,
}

impl CorrelationRow {
    pub fn get(&self, level: Level) -> Option<f64> {
        match level {
            Level::Turn => self.turn,
            Level::Dialog => self.dialog,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CorrelationTable {
    rows: Vec<CorrelationRow>,
}

impl CorrelationTable {
    pub fn new(rows: Vec<CorrelationRow>) -> Result<Self, DomainError> {
        for row in &rows {
            for value in [row.turn, row.dialog].into_iter().flatten() {
                if !(-1.0..=1.0).contains(&value) {
                    return Err(DomainError::CorrelationOutOfRange { label: row.label.clone(), value });
                }
            }
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[CorrelationRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, label: &str) -> Option<&CorrelationRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    /// Rows ordered by descending absolute coefficient at `level`; rows
    /// without a coefficient go last. Stable for equal magnitudes.
    pub fn sorted_by_abs(&self, level: Level) -> CorrelationTable {
        let mut rows = self.rows.clone();
        rows.sort_by(|a, b| {
            let ka = a.get(level).map(f64::abs);
            let kb = b.get(level).map(f64::abs);
            match (ka, kb) {
                (Some(x), Some(y)) => y.total_cmp(&x),
                (Some(_), None) => std::cmp::Ordering::Less,
                (None, Some(_)) => std::cmp::Ordering::Greater,
                (None, None) => std::cmp::Ordering::Equal,
            }
        });
        CorrelationTable { rows }
    }

    pub fn push(&mut self, row: CorrelationRow) -> Result<(), DomainError> {
        let checked = CorrelationTable::new(vec![row])?;
        self.rows.extend(checked.rows);
        Ok(())
    }
}
