use std::collections::{BTreeMap, HashMap};

use super::{exact_mean, spearman, StatsError};
use crate::domain::{CorrelationRow, CorrelationTable, FollowUpSet, Level, Polarity};
use crate::metric::FullScore;

/// Per-follow-up log-likelihoods for every example at one level, alongside
/// the examples' mean human ratings.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LevelStudy {
    /// (example id, mean rating), in study order.
    pub ratings: Vec<(String, f64)>,
    /// follow-up text -> example id -> log-likelihood.
    pub scores: HashMap<String, HashMap<String, f64>>,
}

impl LevelStudy {
    /// Collects the per-follow-up parts of scored examples.
    pub fn from_scores<'a, I>(rows: I) -> Self
    where
        I: IntoIterator<Item = (&'a FullScore, f64)>,
    {
        let mut study = LevelStudy::default();
        for (score, rating) in rows {
            study.ratings.push((score.dialog_id().to_owned(), rating));
            for (followup, ll) in score.parts() {
                study.scores.entry(followup.clone()).or_default().insert(score.dialog_id().to_owned(), *ll);
            }
        }
        study
    }

    fn column(&self, followup: &str, missing: &mut Vec<(String, String)>) -> Vec<f64> {
        let cells = self.scores.get(followup);
        self.ratings
            .iter()
            .filter_map(|(id, _)| {
                let v = cells.and_then(|c| c.get(id)).copied();
                if v.is_none() {
                    missing.push((followup.to_owned(), id.clone()));
                }
                v
            })
            .collect()
    }

    fn rating_values(&self) -> Vec<f64> {
        self.ratings.iter().map(|(_, r)| *r).collect()
    }
}

/// Spearman correlation of each follow-up's log-likelihoods with the mean
/// ratings, at each studied level. One row per entry of `followups`, in that
/// order. A coefficient is absent when its level was not studied or the
/// correlation is undefined (constant series, fewer than two examples).
pub fn rank_followups(
    followups: &[String],
    turn: Option<&LevelStudy>,
    dialog: Option<&LevelStudy>,
) -> Result<CorrelationTable, StatsError> {
    let mut missing = Vec::new();
    let mut rows = Vec::with_capacity(followups.len());
    for f in followups {
        let mut coefficient = |study: Option<&LevelStudy>| -> Result<Option<f64>, StatsError> {
            let Some(study) = study else { return Ok(None) };
            let column = study.column(f, &mut missing);
            if column.len() != study.ratings.len() {
                return Ok(None);
            }
            match spearman(&column, &study.rating_values()) {
                Ok(r) => Ok(Some(r)),
                Err(e @ (StatsError::Constant | StatsError::TooShort(_))) => {
                    log::info!("correlation undefined for {f:?}: {e}");
                    Ok(None)
                }
                Err(e) => Err(e),
            }
        };
        let turn = coefficient(turn)?;
        let dialog = coefficient(dialog)?;
        rows.push(CorrelationRow { label: f.clone(), turn, dialog });
    }
    if !missing.is_empty() {
        return Err(StatsError::MissingScores(missing));
    }
    Ok(CorrelationTable::new(rows).expect("spearman stays in [-1, 1]"))
}

/// Mean turn-level coefficient per polarity; `None` for a polarity with no rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolaritySummary {
    pub negative: Option<f64>,
    pub positive: Option<f64>,
}

pub fn polarity_summary(table: &CorrelationTable, catalog: &FollowUpSet) -> Result<PolaritySummary, StatsError> {
    let mut negative = Vec::new();
    let mut positive = Vec::new();
    for row in table.rows() {
        let entry = catalog.get(&row.label).ok_or_else(|| StatsError::UnknownFollowUp(row.label.clone()))?;
        let Some(r) = row.turn else { continue };
        match entry.polarity() {
            Polarity::Negative => negative.push(r),
            Polarity::Positive => positive.push(r),
        }
    }
    Ok(PolaritySummary { negative: exact_mean(negative), positive: exact_mean(positive) })
}

/// Mean absolute coefficient per level for one model's table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelSummary {
    pub turn_mean_abs: Option<f64>,
    pub dialog_mean_abs: Option<f64>,
}

impl ModelSummary {
    pub fn get(&self, level: Level) -> Option<f64> {
        match level {
            Level::Turn => self.turn_mean_abs,
            Level::Dialog => self.dialog_mean_abs,
        }
    }
}

pub fn model_comparison(per_model: &BTreeMap<String, CorrelationTable>) -> BTreeMap<String, ModelSummary> {
    per_model
        .iter()
        .map(|(model, table)| {
            let mean_abs = |level| exact_mean(table.rows().iter().filter_map(|r| r.get(level)).map(f64::abs));
            (
                model.clone(),
                ModelSummary { turn_mean_abs: mean_abs(Level::Turn), dialog_mean_abs: mean_abs(Level::Dialog) },
            )
        })
        .collect()
}

/// Summed-score totals and mean ratings for the examples of one level.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LevelSeries {
    pub totals: Vec<f64>,
    pub ratings: Vec<f64>,
}

impl LevelSeries {
    pub fn push(&mut self, total: f64, rating: f64) {
        self.totals.push(total);
        self.ratings.push(rating);
    }
}

/// Spearman correlation of metric totals with mean ratings, per level.
pub fn combined_metric_correlation(
    turn: Option<&LevelSeries>,
    dialog: Option<&LevelSeries>,
) -> Result<(Option<f64>, Option<f64>), StatsError> {
    let corr = |s: Option<&LevelSeries>| s.map(|s| spearman(&s.totals, &s.ratings)).transpose();
    Ok((corr(turn)?, corr(dialog)?))
}
