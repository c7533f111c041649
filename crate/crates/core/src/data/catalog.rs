use serde::Deserialize;

use crate::domain::{CorrelationRow, CorrelationTable, FollowUp, FollowUpSet, Level, Polarity};

const CATALOG_TSV: &str = include_str!("../../assets/followup_catalog.tsv");

#[derive(Deserialize)]
struct CatalogRow {
    selected: String,
    text: String,
    category: String,
    level: String,
    polarity: String,
    turn_corr: f64,
    dialog_corr: f64,
}

fn rows() -> Vec<CatalogRow> {
    csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .from_reader(CATALOG_TSV.as_bytes())
        .deserialize()
        .collect::<Result<_, _>>()
        .expect("embedded catalog is well-formed")
}

/// Catalog text with terminal punctuation guaranteed. One published entry
/// lacks it.
fn normalized_text(raw: &str) -> String {
    let raw = raw.trim();
    if raw.ends_with(['.', '!', '?']) {
        raw.to_owned()
    } else {
        format!("{raw}.")
    }
}

/// All 63 candidate follow-ups with their category, attachment level and
/// polarity, in published order.
pub fn load_followup_catalog() -> FollowUpSet {
    let followups = rows()
        .into_iter()
        .map(|r| {
            let level: Level = r.level.parse().expect("catalog level");
            let polarity: Polarity = r.polarity.parse().expect("catalog polarity");
            FollowUp::new(normalized_text(&r.text), r.category, level, polarity).expect("catalog entry")
        })
        .collect();
    FollowUpSet::new("catalog", followups).expect("catalog texts are unique")
}

/// Published per-follow-up correlations for the 400M model. These are
/// reported figures for offline checks of the statistics code, never live
/// scores.
pub fn reported_followup_correlations() -> CorrelationTable {
    CorrelationTable::new(
        rows()
            .into_iter()
            .map(|r| CorrelationRow {
                label: normalized_text(&r.text),
                turn: Some(r.turn_corr),
                dialog: Some(r.dialog_corr),
            })
            .collect(),
    )
    .expect("reported coefficients lie in [-1, 1]")
}

/// Texts of the follow-ups marked as chosen in the published catalog.
pub fn reported_selection() -> Vec<String> {
    rows().into_iter().filter(|r| !r.selected.trim().is_empty()).map(|r| normalized_text(&r.text)).collect()
}
