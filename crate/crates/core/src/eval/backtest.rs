//! Dollar-neutral long/short simulation over per-day score rankings.

use std::collections::HashMap;

use chrono::NaiveDate;
use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use super::metrics::{by_day, check_q, select_extremes};
use super::{EvalError, PredictionRecord, Result};

pub const TRADING_DAYS_PER_YEAR: f64 = 252.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyPosition {
    pub date: NaiveDate,
    /// Strategy return: mean long return minus mean short return.
    pub r: f64,
    pub longs: Vec<String>,
    pub shorts: Vec<String>,
}

impl DailyPosition {
    /// Equal weights `1/|longs|` per long name.
    pub fn long_weights(&self) -> Vec<Ratio<u64>> {
        equal_weights(self.longs.len())
    }

    pub fn short_weights(&self) -> Vec<Ratio<u64>> {
        equal_weights(self.shorts.len())
    }
}

fn equal_weights(k: usize) -> Vec<Ratio<u64>> {
    vec![Ratio::new(1, k as u64); k]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub q: f64,
    /// Mean daily return × 252, in percent (not compounded).
    pub ann_return_pct: f64,
    /// `None` when the daily returns have zero spread.
    pub sharpe: Option<f64>,
    pub days: usize,
    pub annualization: String,
    pub daily: Vec<DailyPosition>,
}

/// Mean over sample standard deviation, scaled by `sqrt(252)`.
pub fn sharpe_ratio(daily: &[f64]) -> Result<f64> {
    let n = daily.len();
    if n < 2 {
        return Err(EvalError::SigmaZero);
    }
    let mean = daily.iter().sum::<f64>() / n as f64;
    let var = daily.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    if sd == 0.0 || !sd.is_finite() {
        return Err(EvalError::SigmaZero);
    }
    Ok(mean / sd * TRADING_DAYS_PER_YEAR.sqrt())
}

/// Longs the top `ceil(m·q/200)` scores and shorts the bottom
/// `ceil(m·q/200)` each day, equal weights within a side. `returns` maps
/// `(ticker, day)` to the return realized over the following period.
pub fn backtest(
    preds: &[PredictionRecord],
    returns: &HashMap<(String, NaiveDate), f64>,
    q: f64,
) -> Result<BacktestReport> {
    check_q(q)?;
    let lookup = |p: &PredictionRecord| {
        returns
            .get(&(p.ticker.clone(), p.day))
            .copied()
            .ok_or_else(|| EvalError::MissingReturn {
                ticker: p.ticker.clone(),
                day: p.day,
            })
    };
    let mut daily = Vec::new();
    for (date, records) in by_day(preds) {
        let (top, bottom) = select_extremes(&records, q)?;
        let side_mean = |idx: &[usize]| -> Result<f64> {
            let mut sum = 0.0;
            for &i in idx {
                sum += lookup(records[i])?;
            }
            Ok(sum / idx.len() as f64)
        };
        let r = side_mean(&top)? - side_mean(&bottom)?;
        daily.push(DailyPosition {
            date,
            r,
            longs: top.iter().map(|&i| records[i].ticker.clone()).collect(),
            shorts: bottom.iter().map(|&i| records[i].ticker.clone()).collect(),
        });
    }
    let rs: Vec<f64> = daily.iter().map(|d| d.r).collect();
    let mean = if rs.is_empty() {
        0.0
    } else {
        rs.iter().sum::<f64>() / rs.len() as f64
    };
    let sharpe = match sharpe_ratio(&rs) {
        Ok(s) => Some(s),
        Err(EvalError::SigmaZero) => {
            log::warn!("backtest at q={q}: zero return spread, Sharpe undefined");
            None
        }
        Err(e) => return Err(e),
    };
    Ok(BacktestReport {
        q,
        ann_return_pct: mean * TRADING_DAYS_PER_YEAR * 100.0,
        sharpe,
        days: daily.len(),
        annualization: "simple".into(),
        daily,
    })
}

/// Backtest against each record's own `realized_return`.
pub fn backtest_realized(preds: &[PredictionRecord], q: f64) -> Result<BacktestReport> {
    let returns = preds
        .iter()
        .map(|p| ((p.ticker.clone(), p.day), p.realized_return))
        .collect();
    backtest(preds, &returns, q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn day(n: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2019, 5, n).unwrap()
    }

    fn rec(t: &str, d: NaiveDate, s: f64, r: f64) -> PredictionRecord {
        PredictionRecord {
            day: d,
            ticker: t.into(),
            p_up: s / 2.0 + 0.5,
            score: s,
            label: u8::from(r > 0.0),
            realized_return: r,
        }
    }

    #[test]
    fn hand_computed_daily_return() {
        let preds = vec![
            rec("A", day(6), 0.8, 0.01),
            rec("B", day(6), 0.6, 0.03),
            rec("C", day(6), -0.2, 0.0),
            rec("D", day(6), -0.7, -0.02),
        ];
        let rep = backtest_realized(&preds, 100.0).unwrap();
        assert_eq!(rep.days, 1);
        assert!((rep.daily[0].r - 0.03).abs() < 1e-15);
        assert_eq!(rep.daily[0].longs, vec!["A", "B"]);
        assert_eq!(rep.daily[0].shorts, vec!["D", "C"]);
        assert_eq!(rep.sharpe, None);
    }

    #[test]
    fn all_zero_gives_undefined_sharpe() {
        let preds: Vec<_> = (1..=3)
            .flat_map(|d| (0..4).map(move |i| rec(&format!("T{i}"), day(d), 0.0, 0.0)))
            .collect();
        let rep = backtest_realized(&preds, 50.0).unwrap();
        assert_eq!(rep.ann_return_pct, 0.0);
        assert!(rep.daily.iter().all(|d| d.r == 0.0));
        assert_eq!(rep.sharpe, None);
        assert!(matches!(sharpe_ratio(&[0.0, 0.0, 0.0]), Err(EvalError::SigmaZero)));
    }

    #[test]
    fn sharpe_fixture() {
        let s = sharpe_ratio(&[0.02, 0.0]).unwrap();
        assert!((s - 0.5f64.sqrt() * 252f64.sqrt()).abs() < 1e-12);
        assert!((s - 11.22).abs() < 0.01);
    }

    #[test]
    fn missing_return_is_an_error() {
        let preds = vec![rec("A", day(6), 0.8, 0.01), rec("B", day(6), -0.8, 0.0)];
        let returns = HashMap::from([(("A".to_string(), day(6)), 0.01)]);
        assert!(matches!(
            backtest(&preds, &returns, 100.0),
            Err(EvalError::MissingReturn { .. })
        ));
    }

    #[test]
    fn weights_are_dollar_neutral_and_shift_invariant() {
        let mut rng = Rng::new(8);
        for m in 1..25usize {
            let preds: Vec<_> = (0..m)
                .map(|i| rec(&format!("T{i:02}"), day(7), rng.uniform(-1.0, 1.0), rng.normal() * 0.01))
                .collect();
            for q in [2.0, 10.0, 20.0, 50.0, 100.0] {
                let rep = backtest_realized(&preds, q).unwrap();
                let pos = &rep.daily[0];
                let one = Ratio::from_integer(1);
                assert_eq!(pos.long_weights().into_iter().sum::<Ratio<u64>>(), one);
                assert_eq!(pos.short_weights().into_iter().sum::<Ratio<u64>>(), one);
                assert_eq!(pos.longs.len(), pos.shorts.len());
                let shifted: Vec<_> = preds
                    .iter()
                    .map(|p| rec(&p.ticker, p.day, p.score, p.realized_return + 0.37))
                    .collect();
                let r2 = backtest_realized(&shifted, q).unwrap().daily[0].r;
                assert!((r2 - pos.r).abs() < 1e-12);
            }
        }
    }
}
