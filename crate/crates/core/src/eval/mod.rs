//! Labels, scores, percentile accuracy and the long/short backtest.

pub mod backtest;
pub mod labeling;
pub mod metrics;

use std::path::Path;

use chrono::NaiveDate;
use thiserror::Error;

pub use backtest::{backtest, backtest_realized, sharpe_ratio, BacktestReport, DailyPosition, TRADING_DAYS_PER_YEAR};
pub use labeling::{make_label, market_adjusted_return, PriceTable};
pub use metrics::{
    percentile_accuracy, random_scorer, read_predictions, score, select_extremes,
    write_predictions, PredictionRecord,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("missing price for {ticker} around {day:?}")]
    MissingPrice {
        ticker: String,
        day: Option<NaiveDate>,
    },
    #[error("price for {ticker} on {day} is not strictly positive")]
    InvalidPrice { ticker: String, day: NaiveDate },
    #[error("q must be in (0, 100], got {0}")]
    InvalidQ(f64),
    #[error("no realized return for {ticker} on {day}")]
    MissingReturn { ticker: String, day: NaiveDate },
    #[error("strategy returns have zero standard deviation")]
    SigmaZero,
    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl EvalError {
    pub(crate) fn csv(path: &Path) -> impl FnOnce(csv::Error) -> EvalError + '_ {
        move |source| EvalError::Csv {
            path: path.display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, EvalError>;
