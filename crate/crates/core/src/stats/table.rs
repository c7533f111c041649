use thiserror::Error;

use crate::domain::{CorrelationRow, CorrelationTable, DomainError};

const HEADER: [&str; 3] = ["label", "turn_corr", "dialog_corr"];

#[derive(Debug, Error)]
pub enum TableFormatError {
    #[error("malformed table: {0}")]
    Csv(#[from] csv::Error),
    #[error("expected header {expected:?}, found {found:?}")]
    Header { expected: String, found: String },
    #[error("line {line}: {message}")]
    Cell { line: u64, message: String },
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// Tab-separated `label, turn_corr, dialog_corr` with a header row.
/// Coefficients keep full precision; absent ones are empty cells.
pub fn to_delimited(table: &CorrelationTable) -> String {
    let mut w = csv::WriterBuilder::new().delimiter(b'\t').from_writer(Vec::new());
    w.write_record(HEADER).expect("writing to memory");
    let cell = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for row in table.rows() {
        w.write_record([row.label.clone(), cell(row.turn), cell(row.dialog)]).expect("writing to memory");
    }
    String::from_utf8(w.into_inner().expect("flushing to memory")).expect("input was utf-8")
}

/// Inverse of [`to_delimited`].
pub fn parse_delimited(text: &str) -> Result<CorrelationTable, TableFormatError> {
    let mut r = csv::ReaderBuilder::new().delimiter(b'\t').from_reader(text.as_bytes());
    let header = r.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != HEADER {
        return Err(TableFormatError::Header {
            expected: HEADER.join("\t"),
            found: header.iter().collect::<Vec<_>>().join("\t"),
        });
    }
    let mut rows = Vec::new();
    for record in r.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let cell = |i: usize| -> Result<Option<f64>, TableFormatError> {
            let raw = record.get(i).unwrap_or("").trim();
            if raw.is_empty() {
                return Ok(None);
            }
            raw.parse()
                .map(Some)
                .map_err(|_| TableFormatError::Cell { line, message: format!("{raw:?} is not a number") })
        };
        rows.push(CorrelationRow { label: record.get(0).unwrap_or("").to_owned(), turn: cell(1)?, dialog: cell(2)? });
    }
    Ok(CorrelationTable::new(rows)?)
}

/// Markdown table with coefficients at two decimals; absent ones render as `-`.
pub fn render_markdown(table: &CorrelationTable) -> String {
    let cell = |v: Option<f64>| v.map_or_else(|| "-".to_owned(), |v| format!("{v:.2}"));
    let mut out = String::from("| Follow-up | Turn | Dialog |\n|---|---:|---:|\n");
    for row in table.rows() {
        out.push_str(&format!("| {} | {} | {} |\n", row.label.replace('|', "\\|"), cell(row.turn), cell(row.dialog)));
    }
    out
}
