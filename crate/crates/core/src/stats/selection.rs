use super::{average_ranks, StatsError};
use crate::domain::{CorrelationTable, FollowUp, FollowUpSet};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionConfig {
    pub k: usize,
    /// Candidates closer than this (normalized edit distance) to an already
    /// selected follow-up are skipped. Zero disables the check.
    pub dedup_threshold: f64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self { k: 5, dedup_threshold: 0.35 }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<(), StatsError> {
        if self.k == 0 {
            return Err(StatsError::InvalidConfig("k must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dedup_threshold) {
            return Err(StatsError::InvalidConfig(format!("dedup threshold {} outside [0, 1)", self.dedup_threshold)));
        }
        Ok(())
    }
}

/// Outcome of [`select_followups`].
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    /// Chosen follow-ups, best combined rank first.
    pub followups: FollowUpSet,
    /// Every candidate in combined-rank order with its rank sum.
    pub ranking: Vec<(String, f64)>,
    /// (skipped candidate, selected follow-up it duplicates).
    pub skipped: Vec<(String, String)>,
}

impl Selection {
    /// True when fewer than `k` candidates survived deduplication.
    pub fn is_short(&self, config: &SelectionConfig) -> bool {
        self.followups.len() < config.k
    }
}

/// Levenshtein distance over characters, case-insensitive, divided by the
/// longer string's length.
pub fn normalized_edit_distance(a: &str, b: &str) -> f64 {
    let (a, b) = (a.to_lowercase(), b.to_lowercase());
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        return 0.0;
    }
    strsim::levenshtein(&a, &b) as f64 / longest as f64
}

/// Picks up to `k` follow-ups by combined rank.
///
/// Each level ranks rows by absolute coefficient (1 = strongest, ties share
/// the average rank); a row's combined rank is the sum of both. Rows are
/// visited by ascending combined rank, ties broken by text, and a row is
/// skipped when it is a near-duplicate of one already chosen.
pub fn select_followups(
    table: &CorrelationTable,
    catalog: &FollowUpSet,
    config: &SelectionConfig,
) -> Result<Selection, StatsError> {
    config.validate()?;
    if table.is_empty() {
        return Err(StatsError::EmptyTable);
    }
    let mut turn = Vec::with_capacity(table.len());
    let mut dialog = Vec::with_capacity(table.len());
    let mut entries: Vec<&FollowUp> = Vec::with_capacity(table.len());
    for row in table.rows() {
        let (Some(t), Some(d)) = (row.turn, row.dialog) else {
            return Err(StatsError::MissingCoefficient(row.label.clone()));
        };
        let entry = catalog.get(&row.label).ok_or_else(|| StatsError::UnknownFollowUp(row.label.clone()))?;
        // Negated so that rank 1 is the largest magnitude.
        turn.push(-t.abs());
        dialog.push(-d.abs());
        entries.push(entry);
    }
    let (turn_ranks, dialog_ranks) = (average_ranks(&turn), average_ranks(&dialog));

    let mut order: Vec<usize> = (0..entries.len()).collect();
    let combined: Vec<f64> = turn_ranks.iter().zip(&dialog_ranks).map(|(a, b)| a + b).collect();
    order.sort_by(|&a, &b| combined[a].total_cmp(&combined[b]).then_with(|| entries[a].text().cmp(entries[b].text())));

    let mut chosen: Vec<FollowUp> = Vec::new();
    let mut skipped = Vec::new();
    for &i in &order {
        if chosen.len() == config.k {
            break;
        }
        let candidate = entries[i];
        let duplicate =
            chosen.iter().find(|c| normalized_edit_distance(c.text(), candidate.text()) < config.dedup_threshold);
        match duplicate {
            Some(kept) => skipped.push((candidate.text().to_owned(), kept.text().to_owned())),
            None => chosen.push(candidate.clone()),
        }
    }

    let ranking = order.iter().map(|&i| (entries[i].text().to_owned(), combined[i])).collect();
    Ok(Selection {
        followups: FollowUpSet::new("selected", chosen).expect("catalog texts are distinct"),
        ranking,
        skipped,
    })
}
