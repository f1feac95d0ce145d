//! Synthetic datasets with a planted, graph-propagated signal.
//!
//! Each stock-day draws a latent sentiment `z ~ N(0, 1)`. News embeddings are
//! `z·u + noise` for a fixed unit direction `u`. The return from day `d` to
//! `d+1` is `beta · mean(z over truth neighbours, self included) + sigma·ε`,
//! so a stock's own news only explains part of its next move.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use chrono::{Duration, NaiveDate, NaiveTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::news::{NewsLine, TradingCalendar};
use crate::numerics::Rng;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SynthError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TruthGraph {
    #[serde(rename = "sector")]
    Sector,
    #[serde(rename = "supply")]
    Supply,
    #[serde(rename = "correlation")]
    Correlation,
    /// Half the signal from sector neighbours, half from supply neighbours.
    #[serde(rename = "sector+supply")]
    SectorSupply,
}

fn default_start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2016, 1, 4).expect("valid date")
}

fn default_zero_news() -> f64 {
    0.15
}

fn default_max_news() -> usize {
    3
}

fn default_embed_noise() -> f64 {
    0.3
}

fn default_group_size() -> usize {
    4
}

fn default_supply_degree() -> usize {
    2
}

fn default_sector_level() -> u8 {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n: usize,
    pub d: usize,
    pub days: usize,
    pub beta: f64,
    pub sigma: f64,
    pub truth_graph: TruthGraph,
    pub seed: u64,
    /// First calendar date; the calendar runs over weekdays from here.
    #[serde(default = "default_start")]
    pub start: NaiveDate,
    /// Chance a stock-day has no news at all.
    #[serde(default = "default_zero_news")]
    pub zero_news_prob: f64,
    /// News-bearing stock-days get between 1 and this many items.
    #[serde(default = "default_max_news")]
    pub max_news: usize,
    /// Per-coordinate noise std on each embedding.
    #[serde(default = "default_embed_noise")]
    pub embed_noise: f64,
    /// Stocks per group at `sector_level` and per hidden correlation cluster.
    #[serde(default = "default_group_size")]
    pub group_size: usize,
    /// Supply partners drawn per stock.
    #[serde(default = "default_supply_degree")]
    pub supply_degree: usize,
    /// GICS level whose groups carry the sector signal.
    #[serde(default = "default_sector_level")]
    pub sector_level: u8,
}

impl SynthConfig {
    pub fn new(n: usize, d: usize, days: usize, beta: f64, sigma: f64, truth_graph: TruthGraph, seed: u64) -> Self {
        Self {
            n,
            d,
            days,
            beta,
            sigma,
            truth_graph,
            seed,
            start: default_start(),
            zero_news_prob: default_zero_news(),
            max_news: default_max_news(),
            embed_noise: default_embed_noise(),
            group_size: default_group_size(),
            supply_degree: default_supply_degree(),
            sector_level: default_sector_level(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SynthError::InvalidConfig(m.to_string()));
        if self.n < 2 || self.d == 0 || self.days < 2 {
            return bad("need n >= 2, d >= 1, days >= 2");
        }
        if !(self.beta >= 0.0 && self.beta.is_finite() && self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad("beta and sigma must be finite and non-negative");
        }
        if !(0.0..=1.0).contains(&self.zero_news_prob) || self.max_news == 0 {
            return bad("zero_news_prob must be in [0, 1] and max_news >= 1");
        }
        if !(self.embed_noise >= 0.0 && self.embed_noise.is_finite()) {
            return bad("embed_noise must be finite and non-negative");
        }
        if self.group_size == 0 || !(1..=4).contains(&self.sector_level) {
            return bad("group_size >= 1 and sector_level in 1..=4 required");
        }
        Ok(())
    }
}

/// Generated data held in memory.
#[derive(Debug, Clone)]
pub struct SynthBundle {
    pub config: SynthConfig,
    pub tickers: Vec<String>,
    pub days: Vec<NaiveDate>,
    pub news: Vec<NewsLine>,
    /// `closes[s][d]`.
    pub closes: Vec<Vec<f64>>,
    pub index: Vec<f64>,
    /// `ticker, level1..level4` rows.
    pub sectors: Vec<[String; 5]>,
    pub supply: Vec<(String, String)>,
    /// `returns[s][d]`: planted return from day `d` to `d + 1`.
    pub returns: Vec<Vec<f64>>,
    /// Latent sentiment `z[s][d]`.
    pub sentiment: Vec<Vec<f64>>,
}

const INDEX_LEVEL: f64 = 1000.0;
const START_PRICE: f64 = 100.0;

/// Groups of consecutive positions in a shuffled order.
fn groups(rng: &mut Rng, n: usize, size: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    let mut group = vec![0; n];
    for (pos, &s) in order.iter().enumerate() {
        group[s] = pos / size;
    }
    group
}

fn members(group: &[usize]) -> Vec<Vec<usize>> {
    group
        .iter()
        .map(|g| (0..group.len()).filter(|&j| group[j] == *g).collect())
        .collect()
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthBundle> {
    cfg.validate()?;
    let (n, d) = (cfg.n, cfg.d);
    let mut root = Rng::new(cfg.seed);
    let mut structure = root.fork();
    let mut latent = root.fork();
    let mut text = root.fork();
    let mut noise = root.fork();

    let tickers: Vec<String> = (0..n).map(|i| format!("S{i:03}")).collect();
    let days = TradingCalendar::business_days(cfg.start, cfg.days);

    // Nested GICS-like codes: the chosen level groups `group_size` stocks,
    // each level up merges pairs, each level down splits in two.
    let base = groups(&mut structure, n, cfg.group_size);
    let level = cfg.sector_level as u32;
    let codes: Vec<[usize; 4]> = (0..n)
        .map(|s| {
            let mut c = [0; 4];
            for (l, slot) in c.iter_mut().enumerate() {
                let l = l as u32 + 1;
                *slot = if l <= level {
                    base[s] >> (level - l)
                } else {
                    let k = l - level;
                    (base[s] << k) + s % (1 << k)
                };
            }
            c
        })
        .collect();
    let sector_members = members(&base);
    let sectors = tickers
        .iter()
        .zip(&codes)
        .map(|(t, c)| {
            [
                t.clone(),
                format!("{:02}", 10 + c[0]),
                format!("{:04}", 1000 + c[1]),
                format!("{:06}", 100_000 + c[2]),
                format!("{:08}", 10_000_000 + c[3]),
            ]
        })
        .collect();

    let mut edges = BTreeSet::new();
    for s in 0..n {
        for _ in 0..cfg.supply_degree {
            let mut c = structure.below(n - 1);
            if c >= s {
                c += 1;
            }
            edges.insert((s, c));
        }
    }
    let mut supply_members: Vec<Vec<usize>> = (0..n).map(|s| vec![s]).collect();
    for &(a, b) in &edges {
        if !supply_members[a].contains(&b) {
            supply_members[a].push(b);
        }
        if !supply_members[b].contains(&a) {
            supply_members[b].push(a);
        }
    }
    let supply = edges.iter().map(|&(a, b)| (tickers[a].clone(), tickers[b].clone())).collect();
    let cluster_members = members(&groups(&mut structure, n, cfg.group_size));

    let mut u: Vec<f64> = (0..d).map(|_| structure.normal()).collect();
    let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    u.iter_mut().for_each(|x| *x /= norm);

    let sentiment: Vec<Vec<f64>> = (0..n).map(|_| (0..cfg.days).map(|_| latent.normal()).collect()).collect();
    let neighbour_mean = |nb: &[usize], day: usize| nb.iter().map(|&j| sentiment[j][day]).sum::<f64>() / nb.len() as f64;

    let mut returns = vec![vec![0.0; cfg.days]; n];
    let mut closes = vec![vec![START_PRICE; cfg.days]; n];
    for day in 0..cfg.days - 1 {
        for s in 0..n {
            let signal = match cfg.truth_graph {
                TruthGraph::Sector => neighbour_mean(&sector_members[s], day),
                TruthGraph::Supply => neighbour_mean(&supply_members[s], day),
                TruthGraph::Correlation => neighbour_mean(&cluster_members[s], day),
                TruthGraph::SectorSupply => {
                    0.5 * neighbour_mean(&sector_members[s], day) + 0.5 * neighbour_mean(&supply_members[s], day)
                }
            };
            let r = cfg.beta * signal + cfg.sigma * noise.normal();
            returns[s][day] = r;
            closes[s][day + 1] = closes[s][day] * (1.0 + r);
        }
    }

    let calendar = TradingCalendar::new(days.clone()).expect("business days are increasing");
    let mut news = Vec::new();
    for (day_idx, day) in days.iter().enumerate() {
        for s in 0..n {
            if text.bernoulli(cfg.zero_news_prob) {
                continue;
            }
            let count = 1 + text.below(cfg.max_news);
            for _ in 0..count {
                // Local trading hours, always before that day's close.
                let minute = 9 * 60 + text.below(8 * 60) as i64;
                let local = day.and_time(NaiveTime::MIN) + Duration::minutes(minute);
                let ts = calendar.offset().from_local_datetime(&local).single().expect("fixed offset").with_timezone(&Utc);
                let z = sentiment[s][day_idx];
                let embedding = u.iter().map(|&ui| z * ui + cfg.embed_noise * text.normal()).collect();
                news.push(NewsLine {
                    ticker: tickers[s].clone(),
                    ts,
                    embedding: Some(embedding),
                    headline: None,
                });
            }
        }
    }

    Ok(SynthBundle {
        config: cfg.clone(),
        tickers,
        index: vec![INDEX_LEVEL; days.len()],
        days,
        news,
        closes,
        sectors,
        supply,
        returns,
        sentiment,
    })
}

impl SynthBundle {
    /// Writes `news.jsonl`, `prices.csv`, `index.csv`, `sectors.csv`,
    /// `supply.csv` and `synth.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut news = String::new();
        for line in &self.news {
            news.push_str(&serde_json::to_string(line)?);
            news.push('\n');
        }
        fs::write(dir.join("news.jsonl"), news)?;

        let mut prices = String::from("date,ticker,close\n");
        for (di, day) in self.days.iter().enumerate() {
            for (t, closes) in self.tickers.iter().zip(&self.closes) {
                let _ = writeln!(prices, "{day},{t},{}", closes[di]);
            }
        }
        fs::write(dir.join("prices.csv"), prices)?;

        let mut index = String::from("date,close\n");
        for (day, v) in self.days.iter().zip(&self.index) {
            let _ = writeln!(index, "{day},{v}");
        }
        fs::write(dir.join("index.csv"), index)?;

        let mut sectors = String::from("ticker,level1,level2,level3,level4\n");
        for row in &self.sectors {
            let _ = writeln!(sectors, "{}", row.join(","));
        }
        fs::write(dir.join("sectors.csv"), sectors)?;

        let mut supply = String::from("supplier,customer\n");
        for (a, b) in &self.supply {
            let _ = writeln!(supply, "{a},{b}");
        }
        fs::write(dir.join("supply.csv"), supply)?;

        fs::write(dir.join("synth.json"), serde_json::to_string_pretty(&self.config)? + "\n")?;
        Ok(())
    }
}
