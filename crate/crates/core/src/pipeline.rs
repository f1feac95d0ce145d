//! Run configuration, dataset splitting and the end-to-end pipeline:
//! aggregate news, build graphs, train, predict, score and backtest.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write as _;
use std::ops::Range;
use std::path::{Path, PathBuf};

use chrono::{FixedOffset, NaiveDate, NaiveTime, Utc};
use log::{info, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{backtest_realized, make_label, percentile_accuracy, write_predictions, BacktestReport, PredictionRecord, PriceTable};
use crate::graph::{
    build_correlation_graph, build_sector_graph, build_supply_chain_graph, export_graph, identity_graph, load_sectors,
    load_supply_edges, RelationGraph, StockUniverse,
};
use crate::model::{save_checkpoint, train, History, LabeledSet, Mgrn, ModelConfig, ModelError, Sample, TrainInput};
use crate::news::{aggregate_daily, load_news, zero_vector_rate, AggregationReport, DailyFeatures, LoadOptions, TradingCalendar};
use crate::numerics::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("invalid split range: {0}")]
    InvalidRange(String),
    #[error("overlapping split ranges: {0}")]
    OverlappingRanges(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        kind: ErrorKind,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
}

impl PipelineError {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Self::Config(_) | Self::InvalidRange(_) | Self::OverlappingRanges(_) => ErrorKind::Config,
            Self::Stage { kind, .. } => *kind,
        }
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;

fn data<E: Into<Box<dyn std::error::Error + Send + Sync>>>(stage: &'static str) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError::Stage {
        stage,
        kind: ErrorKind::Data,
        source: e.into(),
    }
}

fn model_err(stage: &'static str) -> impl FnOnce(ModelError) -> PipelineError {
    move |e| {
        let kind = match e {
            ModelError::NonFiniteLoss { .. } | ModelError::Numerics(_) => ErrorKind::Numeric,
            ModelError::InvalidConfig(_) => ErrorKind::Config,
            _ => ErrorKind::Data,
        };
        PipelineError::Stage {
            stage,
            kind,
            source: Box::new(e),
        }
    }
}

// ------------------------------------------------------------------ config

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub news: PathBuf,
    pub prices: PathBuf,
    pub index: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sectors: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supply: Option<PathBuf>,
    pub out_dir: PathBuf,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Filters {
    /// Keep tickers averaging strictly more news per trading day than this.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_avg_news_per_day: Option<f64>,
    /// Drop tickers missing a close on any trading day of any split.
    #[serde(default = "default_true")]
    pub drop_delisted: bool,
}

impl Default for Filters {
    fn default() -> Self {
        Self {
            min_avg_news_per_day: None,
            drop_delisted: true,
        }
    }
}

/// Inclusive date range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn contains(&self, d: NaiveDate) -> bool {
        self.start <= d && d <= self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRanges {
    pub train: DateRange,
    pub dev: DateRange,
    pub test: DateRange,
}

impl SplitRanges {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in self.named() {
            if r.start > r.end {
                return Err(PipelineError::InvalidRange(format!("{name} starts after it ends")));
            }
        }
        if self.train.end >= self.dev.start || self.dev.end >= self.test.start {
            return Err(PipelineError::OverlappingRanges("expected train < dev < test".into()));
        }
        Ok(())
    }

    fn named(&self) -> [(&'static str, DateRange); 3] {
        [("train", self.train), ("dev", self.dev), ("test", self.test)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GraphChoice {
    #[serde(rename = "sector")]
    Sector,
    #[serde(rename = "supply")]
    Supply,
    #[serde(rename = "correlation")]
    Correlation,
    #[serde(rename = "identity")]
    Identity,
}

impl GraphChoice {
    pub fn name(self) -> &'static str {
        match self {
            Self::Sector => "sector",
            Self::Supply => "supply",
            Self::Correlation => "correlation",
            Self::Identity => "identity",
        }
    }
}

fn default_close() -> NaiveTime {
    NaiveTime::from_hms_opt(17, 30, 0).expect("valid time")
}

fn default_offset() -> i32 {
    60
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalendarConfig {
    #[serde(default = "default_close")]
    pub close_time: NaiveTime,
    /// Exchange offset from UTC in minutes.
    #[serde(default = "default_offset")]
    pub utc_offset_minutes: i32,
}

impl Default for CalendarConfig {
    fn default() -> Self {
        Self {
            close_time: default_close(),
            utc_offset_minutes: default_offset(),
        }
    }
}

fn default_level() -> u8 {
    3
}

fn default_q_list() -> Vec<f64> {
    vec![100.0, 50.0, 20.0, 10.0, 2.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    #[serde(default)]
    pub filters: Filters,
    pub splits: SplitRanges,
    pub model: ModelConfig,
    pub graphs: Vec<GraphChoice>,
    #[serde(default = "default_level")]
    pub sector_level: u8,
    #[serde(default = "default_q_list")]
    pub q_list: Vec<f64>,
    #[serde(default)]
    pub calendar: CalendarConfig,
}

impl RunConfig {
    /// Parses a JSON config. Relative paths resolve against the file's
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let p = &mut self.paths;
        fix(&mut p.news);
        fix(&mut p.prices);
        fix(&mut p.index);
        fix(&mut p.out_dir);
        p.sectors.as_mut().map(fix);
        p.supply.as_mut().map(fix);
    }

    pub fn validate(&self) -> Result<()> {
        self.splits.validate()?;
        self.model.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        if self.graphs.is_empty() {
            return Err(PipelineError::Config("at least one graph is required".into()));
        }
        let unique: BTreeSet<&str> = self.graphs.iter().map(|g| g.name()).collect();
        if unique.len() != self.graphs.len() {
            return Err(PipelineError::Config("graph list has duplicates".into()));
        }
        if !(1..=4).contains(&self.sector_level) {
            return Err(PipelineError::Config(format!("sector_level {} not in 1..=4", self.sector_level)));
        }
        if self.graphs.contains(&GraphChoice::Sector) && self.paths.sectors.is_none() {
            return Err(PipelineError::Config("sector graph needs paths.sectors".into()));
        }
        if self.graphs.contains(&GraphChoice::Supply) && self.paths.supply.is_none() {
            return Err(PipelineError::Config("supply graph needs paths.supply".into()));
        }
        if let Some(q) = self.q_list.iter().find(|q| !(**q > 0.0 && **q <= 100.0)) {
            return Err(PipelineError::Config(format!("q = {q} not in (0, 100]")));
        }
        if FixedOffset::east_opt(self.calendar.utc_offset_minutes * 60).is_none() {
            return Err(PipelineError::Config("utc_offset_minutes out of range".into()));
        }
        Ok(())
    }

    pub fn graph_names(&self) -> Vec<String> {
        self.graphs.iter().map(|g| g.name().to_string()).collect()
    }

    /// True for the identity-only configuration, which reduces the network
    /// to a plain recurrent baseline.
    pub fn is_rnn_baseline(&self) -> bool {
        self.graphs == [GraphChoice::Identity]
    }
}

// ------------------------------------------------------------------ splits

/// Trading-day index ranges of each split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitDays {
    pub train: Range<usize>,
    pub dev: Range<usize>,
    pub test: Range<usize>,
}

impl SplitDays {
    pub fn named(&self) -> [(&'static str, Range<usize>); 3] {
        [("train", self.train.clone()), ("dev", self.dev.clone()), ("test", self.test.clone())]
    }

    /// From the first train day to the last test day.
    pub fn span(&self) -> Range<usize> {
        self.train.start..self.test.end
    }
}

pub fn split_days(days: &[NaiveDate], ranges: &SplitRanges) -> Result<SplitDays> {
    ranges.validate()?;
    let locate = |name: &str, r: DateRange| -> Result<Range<usize>> {
        let start = days.partition_point(|d| *d < r.start);
        let end = days.partition_point(|d| *d <= r.end);
        if start >= end {
            return Err(PipelineError::InvalidRange(format!("{name} range holds no trading days")));
        }
        Ok(start..end)
    };
    Ok(SplitDays {
        train: locate("train", ranges.train)?,
        dev: locate("dev", ranges.dev)?,
        test: locate("test", ranges.test)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub days: SplitDays,
    pub train: LabeledSet,
    pub dev: LabeledSet,
    pub test: LabeledSet,
}

/// Assigns every labelable `(stock, day)` to the split containing `day`.
///
/// `adjusted_return(stock, day)` is the market-adjusted return over the
/// label horizon, `None` when a price is missing. A sample needs `lookback`
/// earlier feature days. Train and dev labels must resolve inside their own
/// range, so no label reaches into the next split; test labels only need the
/// price to exist. Feature windows may reach back across a split start.
pub fn split_dataset(
    days: &[NaiveDate],
    ranges: &SplitRanges,
    n_stocks: usize,
    lookback: usize,
    delta_t: usize,
    adjusted_return: impl Fn(usize, usize) -> Option<f64>,
) -> Result<Splits> {
    let split = split_days(days, ranges)?;
    let collect = |r: &Range<usize>, label_end: usize| {
        let mut set = LabeledSet::default();
        for day in r.clone() {
            if day < lookback || day + delta_t >= label_end {
                continue;
            }
            for stock in 0..n_stocks {
                if let Some(ret) = adjusted_return(stock, day) {
                    set.push(Sample { stock, day }, make_label(ret));
                }
            }
        }
        set
    };
    Ok(Splits {
        train: collect(&split.train, split.train.end),
        dev: collect(&split.dev, split.dev.end),
        test: collect(&split.test, days.len()),
        days: split,
    })
}

// ------------------------------------------------------------------ data

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub split: String,
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub trading_days: usize,
    pub news_count: usize,
    pub data_points: usize,
    pub zero_vector_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub universe_size: usize,
    pub dropped_tickers: Vec<String>,
    pub news_loaded: usize,
    pub skip_count: usize,
    pub news_after_last_close: usize,
    pub splits: Vec<SplitStats>,
}

/// Everything the model stages consume.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub universe: StockUniverse,
    pub calendar: TradingCalendar,
    pub daily: Vec<DailyFeatures>,
    pub features: Vec<Matrix>,
    pub graphs: Vec<RelationGraph>,
    pub splits: Splits,
    pub prices: PriceTable,
    /// Universe row to price-table row.
    pub price_rows: Vec<usize>,
    pub stats: DatasetStats,
    pub aggregation: Vec<AggregationReport>,
}

fn build_graphs(
    cfg: &RunConfig,
    universe: &StockUniverse,
    prices: &PriceTable,
    price_rows: &[usize],
    train: &Range<usize>,
) -> Result<Vec<RelationGraph>> {
    let mut out = Vec::new();
    for choice in &cfg.graphs {
        let g = match choice {
            GraphChoice::Identity => identity_graph(universe.len()),
            GraphChoice::Sector => {
                let path = cfg.paths.sectors.as_deref().expect("validated");
                let membership = load_sectors(path).map_err(data("sector graph"))?;
                build_sector_graph(universe, &membership, cfg.sector_level).map_err(data("sector graph"))?
            }
            GraphChoice::Supply => {
                let path = cfg.paths.supply.as_deref().expect("validated");
                let edges = load_supply_edges(path).map_err(data("supply graph"))?;
                let (g, skipped) = build_supply_chain_graph(universe, &edges).map_err(data("supply graph"))?;
                if skipped > 0 {
                    info!("supply graph: skipped {skipped} edges outside the universe");
                }
                g
            }
            GraphChoice::Correlation => {
                // Train-range returns only: later prices never reach the graph.
                let returns = price_rows
                    .iter()
                    .map(|&row| {
                        (train.start..train.end - 1)
                            .map(|t| prices.market_adjusted_return(row, t, 1))
                            .collect::<std::result::Result<Vec<_>, _>>()
                    })
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(data("correlation graph"))?;
                build_correlation_graph(universe, &returns).map_err(data("correlation graph"))?.0
            }
        };
        out.push(g);
    }
    Ok(out)
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    cfg.validate()?;
    let prices = PriceTable::load(&cfg.paths.prices, &cfg.paths.index).map_err(data("prices"))?;
    let offset = FixedOffset::east_opt(cfg.calendar.utc_offset_minutes * 60).expect("validated");
    let calendar = TradingCalendar::with_close(prices.days().to_vec(), cfg.calendar.close_time, offset).map_err(data("calendar"))?;
    let split = split_days(calendar.days(), &cfg.splits)?;

    let mut dropped = Vec::new();
    let mut keep: Vec<String> = Vec::new();
    for (row, t) in prices.tickers().iter().enumerate() {
        if cfg.filters.drop_delisted && !prices.complete_over(row, split.span()) {
            dropped.push(t.clone());
        } else {
            keep.push(t.clone());
        }
    }
    let full = StockUniverse::new(keep.clone()).map_err(data("universe"))?;
    let opts = LoadOptions {
        dim: Some(cfg.model.d),
        fallback_dim: Some(cfg.model.d),
    };
    let (mut news, load_stats) = load_news(&cfg.paths.news, &full, opts).map_err(data("news"))?;

    if let Some(min) = cfg.filters.min_avg_news_per_day {
        let span = split.span();
        let span_days = span.len() as f64;
        let mut counts = vec![0usize; full.len()];
        for rec in &news {
            if let (Some(s), Some(d)) = (full.position(&rec.ticker), calendar.day_for(rec.timestamp)) {
                if span.contains(&d) {
                    counts[s] += 1;
                }
            }
        }
        let before = keep.len();
        keep = full
            .tickers()
            .iter()
            .zip(&counts)
            .filter_map(|(t, &c)| {
                if c as f64 / span_days > min {
                    Some(t.clone())
                } else {
                    dropped.push(t.clone());
                    None
                }
            })
            .collect();
        info!("news filter kept {} of {before} tickers", keep.len());
    }
    dropped.sort();
    let universe = StockUniverse::new(keep).map_err(data("universe"))?;
    if universe.len() < 2 {
        return Err(data("universe")(format!("{} tickers left after filtering", universe.len())));
    }
    news.retain(|r| universe.contains(&r.ticker));
    let price_rows: Vec<usize> = universe
        .tickers()
        .iter()
        .map(|t| prices.ticker_position(t).expect("universe drawn from prices"))
        .collect();

    let (daily, agg) = aggregate_daily(&news, &universe, &calendar, cfg.model.d);
    let features: Vec<Matrix> = daily.iter().map(|f| f.x.clone()).collect();
    let graphs = build_graphs(cfg, &universe, &prices, &price_rows, &split.train)?;

    let splits = split_dataset(
        calendar.days(),
        &cfg.splits,
        universe.len(),
        cfg.model.lookback,
        cfg.model.delta_t,
        |s, d| prices.market_adjusted_return(price_rows[s], d, cfg.model.delta_t).ok(),
    )?;

    let mut split_stats = Vec::new();
    let mut aggregation = Vec::new();
    for ((name, r), set) in splits.days.named().into_iter().zip([&splits.train, &splits.dev, &splits.test]) {
        let news_count = daily[r.clone()].iter().map(|f| f.counts.iter().sum::<usize>()).sum();
        let zvr = zero_vector_rate(&daily[r.clone()]);
        split_stats.push(SplitStats {
            split: name.into(),
            start: calendar.days()[r.start],
            end: calendar.days()[r.end - 1],
            trading_days: r.len(),
            news_count,
            data_points: set.len(),
            zero_vector_rate: zvr,
        });
        aggregation.push(AggregationReport {
            split: name.into(),
            zero_vector_rate: zvr,
            news_count,
            skip_count: load_stats.skip_count,
        });
    }
    if splits.train.is_empty() {
        return Err(data("split")("train split has no labelable samples".to_string()));
    }

    let stats = DatasetStats {
        universe_size: universe.len(),
        dropped_tickers: dropped,
        news_loaded: load_stats.loaded,
        skip_count: load_stats.skip_count,
        news_after_last_close: agg.after_last_close,
        splits: split_stats,
    };
    Ok(Prepared {
        universe,
        calendar,
        daily,
        features,
        graphs,
        splits,
        prices,
        price_rows,
        stats,
        aggregation,
    })
}

// ------------------------------------------------------------------ evaluation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyEntry {
    pub q: f64,
    pub acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestSummary {
    pub q: f64,
    pub ann_return_pct: f64,
    pub sharpe: Option<f64>,
    pub days: usize,
}

impl From<&BacktestReport> for BacktestSummary {
    fn from(r: &BacktestReport) -> Self {
        Self {
            q: r.q,
            ann_return_pct: r.ann_return_pct,
            sharpe: r.sharpe,
            days: r.days,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub model: String,
    pub graphs: Vec<String>,
    pub test_points: usize,
    pub accuracy: Vec<AccuracyEntry>,
    pub backtest: Vec<BacktestSummary>,
}

impl Metrics {
    pub fn acc(&self, q: f64) -> Option<f64> {
        self.accuracy.iter().find(|e| e.q == q).map(|e| e.acc)
    }
}

/// Test-split predictions with realized raw returns attached.
pub fn predict_test(model: &Mgrn, data: &Prepared) -> Result<Vec<PredictionRecord>> {
    let test = &data.splits.test;
    let p = model.predict(&data.features, &data.graphs, &test.samples).map_err(model_err("predict"))?;
    let delta_t = model.config().delta_t;
    test.samples
        .iter()
        .zip(&test.labels)
        .zip(p)
        .map(|((s, &y), p)| {
            let r = data
                .prices
                .raw_return(data.price_rows[s.stock], s.day, delta_t)
                .map_err(data_err_eval)?;
            Ok(PredictionRecord::new(
                data.universe.ticker(s.stock),
                data.calendar.days()[s.day],
                p,
                y,
                r,
            ))
        })
        .collect()
}

fn data_err_eval(e: crate::eval::EvalError) -> PipelineError {
    data("predict")(e)
}

fn model_label(graphs: &[String]) -> String {
    if graphs == ["identity"] {
        "RNN".into()
    } else {
        "MGRN".into()
    }
}

pub fn score_predictions(preds: &[PredictionRecord], q_list: &[f64], graphs: &[String]) -> Result<(Metrics, Vec<BacktestReport>)> {
    let mut accuracy = Vec::new();
    let mut reports = Vec::new();
    for &q in q_list {
        let acc = percentile_accuracy(preds, q).map_err(data("evaluate"))?;
        accuracy.push(AccuracyEntry { q, acc });
        reports.push(backtest_realized(preds, q).map_err(data("backtest"))?);
    }
    let metrics = Metrics {
        model: model_label(graphs),
        graphs: graphs.to_vec(),
        test_points: preds.len(),
        accuracy,
        backtest: reports.iter().map(BacktestSummary::from).collect(),
    };
    Ok((metrics, reports))
}

// ------------------------------------------------------------------ run

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<String>,
    pub seed: u64,
    pub created: String,
    pub run_dir: PathBuf,
    pub config: RunConfig,
    pub stats: DatasetStats,
    pub selected_epoch: usize,
    pub checkpoint: String,
    pub files: Vec<String>,
    pub metrics: Metrics,
}

/// Temp file plus rename, so a reader never sees a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

fn json_bytes<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s.into_bytes()
}

/// Creates `out_dir/run-<timestamp>-<seed>/`, adding a counter on collision.
pub fn create_run_dir(out_dir: &Path, seed: u64) -> std::io::Result<(PathBuf, String)> {
    fs::create_dir_all(out_dir)?;
    let stamp = Utc::now().format("%Y%m%dT%H%M%SZ").to_string();
    let base = format!("run-{stamp}-{seed}");
    let mut dir = out_dir.join(&base);
    let mut k = 1;
    loop {
        match fs::create_dir(&dir) {
            Ok(()) => return Ok((dir, stamp)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                dir = out_dir.join(format!("{base}-{k}"));
                k += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

pub fn q_label(q: f64) -> String {
    if q.fract() == 0.0 {
        format!("{}", q as i64)
    } else {
        q.to_string()
    }
}

/// aggregate → graphs → train → predict → Acc_q → backtest, then writes the
/// run directory with the manifest last.
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunManifest> {
    let data_set = prepare(cfg)?;
    let names = cfg.graph_names();
    info!(
        "universe {} stocks, {} train / {} dev / {} test samples",
        data_set.universe.len(),
        data_set.splits.train.len(),
        data_set.splits.dev.len(),
        data_set.splits.test.len()
    );
    let input = TrainInput {
        features: &data_set.features,
        graphs: &data_set.graphs,
        train: &data_set.splits.train,
        dev: &data_set.splits.dev,
    };
    let (model, history) = train(input, &cfg.model, names.clone()).map_err(model_err("train"))?;
    let preds = predict_test(&model, &data_set)?;
    if preds.is_empty() {
        warn!("test split has no labelable samples");
    }
    let (metrics, reports) = score_predictions(&preds, &cfg.q_list, &names)?;
    write_run(cfg, &data_set, &model, &history, &preds, &metrics, &reports)
}

fn write_run(
    cfg: &RunConfig,
    data_set: &Prepared,
    model: &Mgrn,
    history: &History,
    preds: &[PredictionRecord],
    metrics: &Metrics,
    reports: &[BacktestReport],
) -> Result<RunManifest> {
    let io = data("write run");
    let seed = cfg.model.seed;
    let (dir, created) = create_run_dir(&cfg.paths.out_dir, seed).map_err(data("write run"))?;
    let mut files = Vec::new();
    let mut put = |name: &str, bytes: &[u8]| -> std::io::Result<()> {
        write_atomic(&dir.join(name), bytes)?;
        files.push(name.to_string());
        Ok(())
    };
    let res: std::io::Result<()> = (|| {
        put("config.json", &json_bytes(cfg))?;
        put("history.csv", history.to_csv().as_bytes())?;
        put("aggregation.json", &json_bytes(&data_set.aggregation))?;
        put("metrics.json", &json_bytes(metrics))?;
        for r in reports {
            put(&format!("backtest-q{}.json", q_label(r.q)), &json_bytes(r))?;
        }
        Ok(())
    })();
    res.map_err(data("write run"))?;
    write_predictions(&dir.join("predictions.csv"), preds).map_err(data("write run"))?;
    files.push("predictions.csv".into());
    save_checkpoint(&dir.join("model.ckpt"), model, seed).map_err(model_err("write run"))?;
    files.push("model.ckpt".into());
    files.push("manifest.json".into());

    let manifest = RunManifest {
        model: metrics.model.clone(),
        baseline: cfg.is_rnn_baseline().then(|| "RNN".to_string()),
        seed,
        created,
        run_dir: dir.clone(),
        config: cfg.clone(),
        stats: data_set.stats.clone(),
        selected_epoch: history.selected_epoch,
        checkpoint: "model.ckpt".into(),
        files,
        metrics: metrics.clone(),
    };
    write_atomic(&dir.join("manifest.json"), &json_bytes(&manifest)).map_err(io)?;
    info!("run written to {}", dir.display());
    Ok(manifest)
}

/// Exports each graph's adjacency under `dir/graphs/`.
pub fn export_graphs(data_set: &Prepared, dir: &Path, normalized: bool) -> Result<Vec<PathBuf>> {
    let out = dir.join("graphs");
    fs::create_dir_all(&out).map_err(data("export graphs"))?;
    let mut paths = Vec::new();
    for g in &data_set.graphs {
        let p = out.join(format!("{}.csv", g.name));
        export_graph(g, &data_set.universe, &p, normalized).map_err(data("export graphs"))?;
        paths.push(p);
    }
    Ok(paths)
}
