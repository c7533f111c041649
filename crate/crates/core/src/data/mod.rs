//! Dataset ingestion and the canonical corpus format.
//!
//! The canonical format is JSON Lines, one [`CorpusRecord`] per line. The
//! upstream FED document is converted into it once by [`parse_fed_dataset`].

mod catalog;
mod fed;

use std::io::{BufRead, Write};

use thiserror::Error;

use crate::domain::CorpusRecord;

pub use catalog::{load_followup_catalog, reported_followup_correlations, reported_selection};
pub use fed::{convert_record, parse_fed_dataset, speaker_of, FedError, FedIngest, RawFedRecord, SpeakerError};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("could not read corpus: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Record {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

/// Reads canonical records; blank lines are ignored. Line numbers are 1-based.
pub fn read_corpus<R: BufRead>(reader: R) -> Result<Vec<CorpusRecord>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|source| CorpusError::Record { line: i + 1, source })?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_corpus<'a, W, I>(mut writer: W, records: I) -> std::io::Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a CorpusRecord>,
{
    for record in records {
        serde_json::to_writer(&mut writer, record)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}
