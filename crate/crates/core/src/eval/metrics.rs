use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{EvalError, Result};
use crate::graph::StockUniverse;
use crate::numerics::Rng;

/// Signed confidence `(p_up − 0.5) × 2`.
pub fn score(p_up: f64) -> f64 {
    (p_up - 0.5) * 2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    #[serde(rename = "date")]
    pub day: NaiveDate,
    pub ticker: String,
    pub p_up: f64,
    pub score: f64,
    pub label: u8,
    pub realized_return: f64,
}

impl PredictionRecord {
    pub fn new(ticker: impl Into<String>, day: NaiveDate, p_up: f64, label: u8, realized_return: f64) -> Self {
        Self {
            day,
            ticker: ticker.into(),
            p_up,
            score: score(p_up),
            label,
            realized_return,
        }
    }

    /// Positive score predicts up; zero or negative predicts down.
    pub fn is_correct(&self) -> bool {
        (self.score > 0.0) == (self.label == 1)
    }
}

pub(crate) fn by_day(preds: &[PredictionRecord]) -> BTreeMap<NaiveDate, Vec<&PredictionRecord>> {
    let mut days: BTreeMap<NaiveDate, Vec<&PredictionRecord>> = BTreeMap::new();
    for p in preds {
        days.entry(p.day).or_default().push(p);
    }
    days
}

pub(crate) fn check_q(q: f64) -> Result<()> {
    if q > 0.0 && q <= 100.0 {
        Ok(())
    } else {
        Err(EvalError::InvalidQ(q))
    }
}

/// Per-side selection size `ceil(m·q/200)`, capped at `m`.
pub fn side_count(m: usize, q: f64) -> usize {
    ((m as f64 * q / 200.0).ceil() as usize).min(m)
}

/// Top and bottom `ceil(m·q/200)` records of one day's cross-section.
/// Ranking is by score descending with ticker ascending breaking ties; the
/// bottom side is the tail of that same ranking. Returned indices point into
/// `day`; the two sides overlap when `2·count > m`.
pub fn select_extremes(day: &[&PredictionRecord], q: f64) -> Result<(Vec<usize>, Vec<usize>)> {
    check_q(q)?;
    let m = day.len();
    let k = side_count(m, q);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        day[b]
            .score
            .total_cmp(&day[a].score)
            .then_with(|| day[a].ticker.cmp(&day[b].ticker))
    });
    let top = order[..k].to_vec();
    let bottom = order[m - k..].iter().rev().copied().collect();
    Ok((top, bottom))
}

/// `Acc_q` pooled over all days.
pub fn percentile_accuracy(preds: &[PredictionRecord], q: f64) -> Result<f64> {
    check_q(q)?;
    let (mut hit, mut total) = (0usize, 0usize);
    for records in by_day(preds).values() {
        let (top, bottom) = select_extremes(records, q)?;
        let mut picked = vec![false; records.len()];
        for i in top.into_iter().chain(bottom) {
            picked[i] = true;
        }
        for (rec, _) in records.iter().zip(&picked).filter(|(_, &p)| p) {
            total += 1;
            hit += usize::from(rec.is_correct());
        }
    }
    Ok(if total == 0 { 0.0 } else { hit as f64 / total as f64 })
}

/// Uniform `p_up ∈ (0, 1)` for every (day, stock), days outer.
pub fn random_scorer(universe: &StockUniverse, days: &[NaiveDate], seed: u64) -> Vec<(String, NaiveDate, f64)> {
    let mut rng = Rng::new(seed);
    days.iter()
        .flat_map(|&d| universe.tickers().iter().map(move |t| (t.clone(), d)))
        .map(|(t, d)| (t, d, rng.open01()))
        .collect()
}

pub fn write_predictions(path: &Path, preds: &[PredictionRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(EvalError::csv(path))?;
    w.write_record(["date", "ticker", "p_up", "score", "label", "realized_return"])
        .map_err(EvalError::csv(path))?;
    for p in preds {
        w.write_record([
            p.day.to_string(),
            p.ticker.clone(),
            p.p_up.to_string(),
            p.score.to_string(),
            p.label.to_string(),
            p.realized_return.to_string(),
        ])
        .map_err(EvalError::csv(path))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let mut rdr = csv::Reader::from_path(path).map_err(EvalError::csv(path))?;
    rdr.deserialize()
        .map(|r| r.map_err(EvalError::csv(path)))
        .collect()
}
