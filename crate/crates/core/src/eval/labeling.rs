//! Calendar-aligned close prices, market-adjusted returns and labels.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use chrono::NaiveDate;
use serde::Deserialize;

use super::{EvalError, Result};

/// Close prices for every ticker plus the market index, aligned to the
/// index's trading days.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceTable {
    tickers: Vec<String>,
    days: Vec<NaiveDate>,
    /// `closes[ticker][day]`.
    closes: Vec<Vec<Option<f64>>>,
    index: Vec<f64>,
}

impl PriceTable {
    /// `index` defines the trading days. Stock prices on other dates are
    /// dropped.
    pub fn new(
        index: BTreeMap<NaiveDate, f64>,
        stocks: BTreeMap<String, BTreeMap<NaiveDate, f64>>,
    ) -> Result<Self> {
        for (d, &v) in &index {
            if !(v > 0.0 && v.is_finite()) {
                return Err(EvalError::InvalidPrice {
                    ticker: "<index>".into(),
                    day: *d,
                });
            }
        }
        let days: Vec<NaiveDate> = index.keys().copied().collect();
        let pos: HashMap<NaiveDate, usize> = days.iter().enumerate().map(|(i, d)| (*d, i)).collect();
        let mut tickers = Vec::with_capacity(stocks.len());
        let mut closes = Vec::with_capacity(stocks.len());
        for (t, series) in stocks {
            let mut row = vec![None; days.len()];
            for (d, v) in series {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(EvalError::InvalidPrice { ticker: t, day: d });
                }
                if let Some(&i) = pos.get(&d) {
                    row[i] = Some(v);
                }
            }
            tickers.push(t);
            closes.push(row);
        }
        Ok(Self {
            tickers,
            days,
            closes,
            index: index.into_values().collect(),
        })
    }

    /// Reads `date,ticker,close` and `date,close` files.
    pub fn load(prices: &Path, index: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct StockRow {
            date: NaiveDate,
            ticker: String,
            close: f64,
        }
        #[derive(Deserialize)]
        struct IndexRow {
            date: NaiveDate,
            close: f64,
        }
        let mut idx = BTreeMap::new();
        let mut rdr = csv::Reader::from_path(index).map_err(EvalError::csv(index))?;
        for row in rdr.deserialize::<IndexRow>() {
            let r = row.map_err(EvalError::csv(index))?;
            idx.insert(r.date, r.close);
        }
        let mut stocks: BTreeMap<String, BTreeMap<NaiveDate, f64>> = BTreeMap::new();
        let mut rdr = csv::Reader::from_path(prices).map_err(EvalError::csv(prices))?;
        for row in rdr.deserialize::<StockRow>() {
            let r = row.map_err(EvalError::csv(prices))?;
            stocks.entry(r.ticker).or_default().insert(r.date, r.close);
        }
        Self::new(idx, stocks)
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn days(&self) -> &[NaiveDate] {
        &self.days
    }

    pub fn ticker_position(&self, ticker: &str) -> Option<usize> {
        self.tickers.binary_search_by(|t| t.as_str().cmp(ticker)).ok()
    }

    pub fn close(&self, ticker: usize, day: usize) -> Option<f64> {
        self.closes[ticker].get(day).copied().flatten()
    }

    pub fn index_close(&self, day: usize) -> Option<f64> {
        self.index.get(day).copied()
    }

    /// True when `ticker` has a close on every day in `days`.
    pub fn complete_over(&self, ticker: usize, days: std::ops::Range<usize>) -> bool {
        self.closes[ticker][days].iter().all(Option::is_some)
    }

    fn pair(&self, ticker: usize, t: usize, delta_t: usize) -> Result<(f64, f64, f64, f64)> {
        let missing = || EvalError::MissingPrice {
            ticker: self.tickers[ticker].clone(),
            day: self.days.get(t).copied(),
        };
        let end = t.checked_add(delta_t).ok_or_else(missing)?;
        let s0 = self.close(ticker, t).ok_or_else(missing)?;
        let s1 = self.close(ticker, end).ok_or_else(missing)?;
        let m0 = self.index_close(t).ok_or_else(missing)?;
        let m1 = self.index_close(end).ok_or_else(missing)?;
        Ok((s0, s1, m0, m1))
    }

    /// `P_s(t+Δt)/P_s(t) − P_m(t+Δt)/P_m(t)`, with `t` a trading-day index.
    pub fn market_adjusted_return(&self, ticker: usize, t: usize, delta_t: usize) -> Result<f64> {
        let (s0, s1, m0, m1) = self.pair(ticker, t, delta_t)?;
        Ok(market_adjusted_return(s0, s1, m0, m1))
    }

    /// Simple return `P_s(t+Δt)/P_s(t) − 1`.
    pub fn raw_return(&self, ticker: usize, t: usize, delta_t: usize) -> Result<f64> {
        let (s0, s1, _, _) = self.pair(ticker, t, delta_t)?;
        Ok(s1 / s0 - 1.0)
    }
}

pub fn market_adjusted_return(stock_t: f64, stock_next: f64, index_t: f64, index_next: f64) -> f64 {
    stock_next / stock_t - index_next / index_t
}

/// 1 when the market-adjusted return is strictly positive.
pub fn make_label(r: f64) -> u8 {
    u8::from(r > 0.0)
}
