//! Rank statistics and the follow-up study analyses built on them.

mod selection;
mod study;
mod table;

use thiserror::Error;

pub use selection::{normalized_edit_distance, select_followups, Selection, SelectionConfig};
pub use study::{
    combined_metric_correlation, model_comparison, polarity_summary, rank_followups, LevelSeries, LevelStudy,
    ModelSummary, PolaritySummary,
};
pub use table::{parse_delimited, render_markdown, to_delimited, TableFormatError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("series lengths differ ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },
    #[error("need at least 2 observations, got {0}")]
    TooShort(usize),
    #[error("series is constant; correlation is undefined")]
    Constant,
    #[error("series contains a non-finite value")]
    NonFinite,
    #[error("missing scores for {} (follow-up, example) pair(s), first: {:?}", .0.len(), .0.first())]
    MissingScores(Vec<(String, String)>),
    #[error("row {0:?} has no catalog entry")]
    UnknownFollowUp(String),
    #[error("row {0:?} lacks a turn-level or dialog-level coefficient")]
    MissingCoefficient(String),
    #[error("nothing to select from")]
    EmptyTable,
    #[error("invalid selection config: {0}")]
    InvalidConfig(String),
}

/// Observations with their average (fractional) ranks, 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedSeries {
    values: Vec<f64>,
    ranks: Vec<f64>,
}

impl RankedSeries {
    pub fn new(values: Vec<f64>) -> Result<Self, StatsError> {
        if values.len() < 2 {
            return Err(StatsError::TooShort(values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(StatsError::NonFinite);
        }
        let ranks = average_ranks(&values);
        Ok(Self { values, ranks })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn ranks(&self) -> &[f64] {
        &self.ranks
    }
}

/// 1-based ranks in ascending order; tied values share the mean of the
/// positions they occupy. Ranks always sum to n(n+1)/2.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // Positions start+1 ..= end share their mean.
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Spearman rank correlation: the Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch { left: x.len(), right: y.len() });
    }
    let rx = RankedSeries::new(x.to_vec())?;
    let ry = RankedSeries::new(y.to_vec())?;
    pearson(rx.ranks(), ry.ranks())
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::Constant);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Correctly rounded floating-point sum (Shewchuk's exact partials, with the
/// half-way correction used by Python's `math.fsum`). The result does not
/// depend on summation order. Falls back to naive summation if any value is
/// not finite.
pub fn exact_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let values: Vec<f64> = values.into_iter().collect();
    if values.iter().any(|v| !v.is_finite()) {
        return values.iter().sum();
    }
    let mut partials: Vec<f64> = Vec::new();
    for mut x in values {
        let mut kept = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[kept] = lo;
                kept += 1;
            }
            x = hi;
        }
        partials.truncate(kept);
        partials.push(x);
    }

    let mut n = partials.len();
    if n == 0 {
        return 0.0;
    }
    n -= 1;
    let mut hi = partials[n];
    let mut lo = 0.0;
    while n > 0 {
        let x = hi;
        n -= 1;
        let y = partials[n];
        hi = x + y;
        lo = y - (hi - x);
        if lo != 0.0 {
            break;
        }
    }
    if n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0)) {
        let y = lo * 2.0;
        let x = hi + y;
        if y == x - hi {
            hi = x;
        }
    }
    hi
}

/// Order-independent arithmetic mean; `None` for an empty input.
pub(crate) fn exact_mean<I: IntoIterator<Item = f64>>(values: I) -> Option<f64> {
    let values: Vec<f64> = values.into_iter().collect();
    if values.is_empty() {
        return None;
    }
    Some(exact_sum(values.iter().copied()) / values.len() as f64)
}
