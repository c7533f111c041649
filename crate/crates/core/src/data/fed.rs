//! Converter for the upstream FED distribution: a JSON array of records
//! `{context, response?, system, annotations: {"Overall": [...], ...}}`.
//! Records with a `response` are turn-level, the rest dialog-level.

use std::collections::HashMap;
use std::io::Read;

use serde::Deserialize;
use serde_json::Value;
use thiserror::Error;

use crate::domain::{AnnotatedExample, Dialog, Level, Speaker, Utterance};

const OVERALL: &str = "Overall";

#[derive(Debug, Error)]
pub enum FedError {
    #[error("source is not a JSON array of records: {0}")]
    Json(#[from] serde_json::Error),
    #[error("could not read source: {0}")]
    Io(#[from] std::io::Error),
    #[error("record {index}: {message}")]
    Malformed { index: usize, message: String },
    #[error("record {index}: unknown speaker prefix in {line:?}")]
    UnknownSpeaker { index: usize, line: String },
    #[error("record {index}: first context line has no speaker tag")]
    UntaggedFirstLine { index: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SpeakerError {
    /// No tag and no previous line to alternate from.
    Untagged,
    /// A `Word:` prefix that is neither `User` nor `System`.
    UnknownPrefix(String),
}

/// One upstream record, fields as distributed.
#[derive(Debug, Clone, Deserialize)]
pub struct RawFedRecord {
    pub context: String,
    #[serde(default)]
    pub response: Option<String>,
    #[serde(default)]
    pub system: String,
    #[serde(default)]
    pub annotations: HashMap<String, Vec<Value>>,
}

impl RawFedRecord {
    /// Numeric overall-quality ratings; "N/A", nulls and other non-numbers
    /// are dropped.
    pub fn overall_ratings(&self) -> Vec<f64> {
        self.annotations
            .get(OVERALL)
            .map(|vs| {
                vs.iter()
                    .filter_map(|v| match v {
                        Value::Number(n) => n.as_f64(),
                        Value::String(s) => s.trim().parse::<f64>().ok(),
                        _ => None,
                    })
                    .filter(|v| v.is_finite())
                    .collect()
            })
            .unwrap_or_default()
    }
}

/// Parsed dataset with per-level counts.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FedIngest {
    pub examples: Vec<AnnotatedExample>,
    pub turn_level: usize,
    pub dialog_level: usize,
    /// Records left out for lack of usable overall ratings.
    pub excluded: usize,
}

impl FedIngest {
    pub fn count(&self, level: Level) -> usize {
        match level {
            Level::Turn => self.turn_level,
            Level::Dialog => self.dialog_level,
        }
    }
}

fn split_tag(line: &str) -> Option<(&str, &str)> {
    let (head, rest) = line.split_once(':')?;
    let head = head.trim();
    let is_word = !head.is_empty() && head.len() <= 12 && head.chars().all(|c| c.is_ascii_alphabetic());
    is_word.then_some((head, rest))
}

/// Classifies one context line. A leading `System:` or `User:` tag
/// (case-insensitive) is stripped with its surrounding whitespace; untagged
/// lines take the speaker opposite to `previous`.
pub fn speaker_of(line: &str, previous: Option<Speaker>) -> Result<(Speaker, String), SpeakerError> {
    if let Some((tag, rest)) = split_tag(line) {
        let speaker = match tag.to_ascii_lowercase().as_str() {
            "system" => Some(Speaker::System),
            "user" => Some(Speaker::User),
            _ => None,
        };
        return match speaker {
            Some(s) => Ok((s, rest.trim().to_owned())),
            None if previous.is_some() => Ok((previous.unwrap().other(), line.trim().to_owned())),
            None => Err(SpeakerError::UnknownPrefix(tag.to_owned())),
        };
    }
    match previous {
        Some(p) => Ok((p.other(), line.trim().to_owned())),
        None => Err(SpeakerError::Untagged),
    }
}

fn parse_block(index: usize, block: &str) -> Result<Vec<Utterance>, FedError> {
    let mut turns: Vec<Utterance> = Vec::new();
    for line in block.lines().filter(|l| !l.trim().is_empty()) {
        let previous = turns.last().map(Utterance::speaker);
        let (speaker, text) = speaker_of(line, previous).map_err(|e| match e {
            SpeakerError::Untagged => FedError::UntaggedFirstLine { index },
            SpeakerError::UnknownPrefix(_) => FedError::UnknownSpeaker { index, line: line.to_owned() },
        })?;
        if text.is_empty() {
            continue;
        }
        turns.push(Utterance::new(speaker, text).expect("text is non-empty"));
    }
    Ok(turns)
}

/// Turns a raw record into a dialog. `None` means the record has no usable
/// overall rating.
pub fn convert_record(index: usize, id: String, record: &RawFedRecord) -> Result<Option<AnnotatedExample>, FedError> {
    let malformed = |message: String| FedError::Malformed { index, message };
    let turns = parse_block(index, &record.context)?;
    let dialog = match &record.response {
        Some(response) => {
            let text = match split_tag(response) {
                Some((tag, rest)) if tag.eq_ignore_ascii_case("system") => rest.trim(),
                _ => response.trim(),
            };
            let response = Utterance::system(text).map_err(|e| malformed(format!("response: {e}")))?;
            Dialog::turn_level(id, turns, response)
        }
        None => Dialog::dialog_level(id, turns),
    }
    .map_err(|e| malformed(e.to_string()))?;
    let ratings = record.overall_ratings();
    if ratings.is_empty() {
        return Ok(None);
    }
    AnnotatedExample::new(dialog, ratings).map(Some).map_err(|e| malformed(e.to_string()))
}

/// Parses the whole upstream document. Ids are `fed-turn-NNNN` and
/// `fed-dialog-NNNN`, numbered per level in source order (excluded records
/// keep their number). Whitespace-only input is an empty dataset.
pub fn parse_fed_dataset<R: Read>(mut source: R) -> Result<FedIngest, FedError> {
    let mut text = String::new();
    source.read_to_string(&mut text)?;
    if text.trim().is_empty() {
        return Ok(FedIngest::default());
    }
    let records: Vec<RawFedRecord> = serde_json::from_str(&text)?;
    let mut out = FedIngest::default();
    let (mut turn_no, mut dialog_no) = (0usize, 0usize);
    for (index, record) in records.iter().enumerate() {
        let id = if record.response.is_some() {
            turn_no += 1;
            format!("fed-turn-{:04}", turn_no - 1)
        } else {
            dialog_no += 1;
            format!("fed-dialog-{:04}", dialog_no - 1)
        };
        match convert_record(index, id, record)? {
            Some(example) => {
                match example.dialog().level() {
                    Level::Turn => out.turn_level += 1,
                    Level::Dialog => out.dialog_level += 1,
                }
                out.examples.push(example);
            }
            None => {
                log::warn!("record {index} has no overall-quality ratings; excluded");
                out.excluded += 1;
            }
        }
    }
    Ok(out)
}
