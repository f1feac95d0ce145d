//! News ingestion and daily per-stock aggregation.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use chrono::{DateTime, Duration, FixedOffset, NaiveDate, NaiveTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::par_map;
use crate::graph::StockUniverse;
use crate::numerics::Matrix;

#[derive(Debug, Error)]
pub enum NewsError {
    #[error("line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("line {line}: embedding has {got} dims, expected {expected}")]
    InconsistentDimension {
        line: usize,
        got: usize,
        expected: usize,
    },
    #[error("trading calendar must be non-empty and strictly increasing")]
    InvalidCalendar,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NewsError>;

#[derive(Debug, Clone, PartialEq)]
pub struct NewsRecord {
    pub ticker: String,
    pub timestamp: DateTime<Utc>,
    pub embedding: Vec<f64>,
}

/// One line of the JSON-lines news file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NewsLine {
    pub ticker: String,
    pub ts: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub headline: Option<String>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Expected embedding width; taken from the first record when unset.
    pub dim: Option<usize>,
    /// Embed records that carry only a headline with [`hash_embed`] at this
    /// width.
    pub fallback_dim: Option<usize>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct LoadStats {
    pub loaded: usize,
    pub skip_count: usize,
}

pub fn load_news(
    path: &Path,
    universe: &StockUniverse,
    opts: LoadOptions,
) -> Result<(Vec<NewsRecord>, LoadStats)> {
    let reader = BufReader::new(File::open(path)?);
    let mut dim = opts.dim;
    let mut stats = LoadStats::default();
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: NewsLine =
            serde_json::from_str(&line).map_err(|e| NewsError::MalformedRecord {
                line: lineno,
                reason: e.to_string(),
            })?;
        let embedding = match (rec.embedding, rec.headline, opts.fallback_dim) {
            (Some(e), _, _) => e,
            (None, Some(h), Some(fd)) => hash_embed(&h, fd),
            _ => {
                return Err(NewsError::MalformedRecord {
                    line: lineno,
                    reason: "record has no embedding".into(),
                })
            }
        };
        if embedding.iter().any(|v| !v.is_finite()) {
            return Err(NewsError::MalformedRecord {
                line: lineno,
                reason: "non-finite embedding value".into(),
            });
        }
        match dim {
            None => dim = Some(embedding.len()),
            Some(d) if d != embedding.len() => {
                return Err(NewsError::InconsistentDimension {
                    line: lineno,
                    got: embedding.len(),
                    expected: d,
                })
            }
            Some(_) => {}
        }
        if !universe.contains(&rec.ticker) {
            stats.skip_count += 1;
            continue;
        }
        stats.loaded += 1;
        out.push(NewsRecord {
            ticker: rec.ticker,
            timestamp: rec.ts,
            embedding,
        });
    }
    Ok((out, stats))
}

/// Bag-of-tokens hashed into `dim` buckets (FNV-1a), L2-normalized. A
/// stand-in for a sentence encoder when only raw headlines are available.
pub fn hash_embed(text: &str, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    if dim == 0 {
        return v;
    }
    for token in text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
    {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in token.to_lowercase().bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        v[(h % dim as u64) as usize] += 1.0;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

/// Trading days with a daily market close at `close_time` local time in a
/// fixed UTC offset.
#[derive(Debug, Clone, PartialEq)]
pub struct TradingCalendar {
    days: Vec<NaiveDate>,
    close_time: NaiveTime,
    offset: FixedOffset,
}

impl TradingCalendar {
    /// 17:30 at UTC+01:00.
    pub fn new(days: Vec<NaiveDate>) -> Result<Self> {
        Self::with_close(
            days,
            NaiveTime::from_hms_opt(17, 30, 0).expect("valid time"),
            FixedOffset::east_opt(3600).expect("valid offset"),
        )
    }

    pub fn with_close(
        days: Vec<NaiveDate>,
        close_time: NaiveTime,
        offset: FixedOffset,
    ) -> Result<Self> {
        if days.is_empty() || days.windows(2).any(|w| w[0] >= w[1]) {
            return Err(NewsError::InvalidCalendar);
        }
        Ok(Self {
            days,
            close_time,
            offset,
        })
    }

    pub fn days(&self) -> &[NaiveDate] {
        &self.days
    }

    pub fn len(&self) -> usize {
        self.days.len()
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty()
    }

    pub fn position(&self, day: NaiveDate) -> Option<usize> {
        self.days.binary_search(&day).ok()
    }

    pub fn close_instant(&self, idx: usize) -> DateTime<Utc> {
        self.offset
            .from_local_datetime(&self.days[idx].and_time(self.close_time))
            .single()
            .expect("fixed offsets are unambiguous")
            .with_timezone(&Utc)
    }

    /// Index of the trading day whose window `(close(d-1), close(d)]`
    /// contains `ts`. News before the first close maps to day 0; news after
    /// the last close maps to `None`.
    pub fn day_for(&self, ts: DateTime<Utc>) -> Option<usize> {
        let mut lo = 0;
        let mut hi = self.days.len();
        while lo < hi {
            let mid = (lo + hi) / 2;
            if self.close_instant(mid) >= ts {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        (lo < self.days.len()).then_some(lo)
    }

    pub fn close_time(&self) -> NaiveTime {
        self.close_time
    }

    pub fn offset(&self) -> FixedOffset {
        self.offset
    }

    /// Weekday calendar of `count` days starting at `start`.
    pub fn business_days(start: NaiveDate, count: usize) -> Vec<NaiveDate> {
        use chrono::Datelike;
        let mut out = Vec::with_capacity(count);
        let mut d = start;
        while out.len() < count {
            if d.weekday().num_days_from_monday() < 5 {
                out.push(d);
            }
            d += Duration::days(1);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DailyFeatures {
    pub day: NaiveDate,
    /// `n × d`; row `s` is the mean embedding of stock `s`'s news that day.
    pub x: Matrix,
    /// News items per stock that day.
    pub counts: Vec<usize>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AggregateStats {
    pub news_count: usize,
    /// News after the last close, which belongs to no calendar day.
    pub after_last_close: usize,
}

/// Mean news embedding per (stock, trading day); zero rows where a stock has
/// no news. The result is independent of the order of `news`.
pub fn aggregate_daily(
    news: &[NewsRecord],
    universe: &StockUniverse,
    calendar: &TradingCalendar,
    dim: usize,
) -> (Vec<DailyFeatures>, AggregateStats) {
    let n = universe.len();
    let mut stats = AggregateStats::default();
    let mut buckets: Vec<Vec<(usize, &NewsRecord)>> = vec![Vec::new(); calendar.len()];
    for rec in news {
        let Some(s) = universe.position(&rec.ticker) else {
            continue;
        };
        match calendar.day_for(rec.timestamp) {
            Some(d) => {
                buckets[d].push((s, rec));
                stats.news_count += 1;
            }
            None => stats.after_last_close += 1,
        }
    }
    let indexed: Vec<(usize, Vec<(usize, &NewsRecord)>)> = buckets.into_iter().enumerate().collect();
    let days = par_map(&indexed, |(d, items)| {
        let mut items = items.clone();
        // Canonical order makes the floating-point sum order independent.
        items.sort_by(|(sa, a), (sb, b)| {
            sa.cmp(sb).then(a.timestamp.cmp(&b.timestamp)).then_with(|| {
                a.embedding
                    .iter()
                    .zip(&b.embedding)
                    .map(|(x, y)| x.total_cmp(y))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
        });
        let mut x = Matrix::zeros(n, dim);
        let mut counts = vec![0usize; n];
        for (s, rec) in &items {
            counts[*s] += 1;
            for (o, v) in x.row_mut(*s).iter_mut().zip(&rec.embedding) {
                *o += v;
            }
        }
        for (s, &c) in counts.iter().enumerate() {
            if c > 1 {
                let inv = c as f64;
                x.row_mut(s).iter_mut().for_each(|v| *v /= inv);
            }
        }
        DailyFeatures {
            day: calendar.days()[*d],
            x,
            counts,
        }
    });
    (days, stats)
}

/// Fraction of all-zero rows across `days`.
pub fn zero_vector_rate(days: &[DailyFeatures]) -> f64 {
    let (zero, total) = days.iter().fold((0usize, 0usize), |(z, t), f| {
        let zr = (0..f.x.rows())
            .filter(|&r| f.x.row(r).iter().all(|v| *v == 0.0))
            .count();
        (z + zr, t + f.x.rows())
    });
    if total == 0 {
        0.0
    } else {
        zero as f64 / total as f64
    }
}

/// Per-split aggregation summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationReport {
    pub split: String,
    pub zero_vector_rate: f64,
    pub news_count: usize,
    pub skip_count: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn cal(n: usize) -> TradingCalendar {
        TradingCalendar::new(TradingCalendar::business_days(
            NaiveDate::from_ymd_opt(2019, 1, 7).unwrap(),
            n,
        ))
        .unwrap()
    }

    fn rec(t: &str, ts: DateTime<Utc>, e: Vec<f64>) -> NewsRecord {
        NewsRecord {
            ticker: t.into(),
            timestamp: ts,
            embedding: e,
        }
    }

    #[test]
    fn close_cutoff_is_right_closed() {
        let c = cal(3);
        let close0 = c.close_instant(0);
        assert_eq!(close0.to_rfc3339(), "2019-01-07T16:30:00+00:00");
        assert_eq!(c.day_for(close0), Some(0));
        assert_eq!(c.day_for(close0 + Duration::seconds(1)), Some(1));
        assert_eq!(c.day_for(close0 - Duration::days(30)), Some(0));
        assert_eq!(c.day_for(c.close_instant(2) + Duration::seconds(1)), None);
    }

    #[test]
    fn calendar_rejects_unordered_days() {
        let d = NaiveDate::from_ymd_opt(2019, 1, 7).unwrap();
        assert!(TradingCalendar::new(vec![d, d]).is_err());
        assert!(TradingCalendar::new(vec![]).is_err());
    }

    #[test]
    fn aggregation_examples() {
        let c = cal(2);
        let u = StockUniverse::new(["A", "B"]).unwrap();
        let t0 = c.close_instant(0) - Duration::hours(2);
        let news = vec![
            rec("A", t0, vec![1.0, 0.0]),
            rec("A", t0, vec![0.0, 1.0]),
            rec("B", c.close_instant(1), vec![3.0, -1.0]),
        ];
        let (days, stats) = aggregate_daily(&news, &u, &c, 2);
        assert_eq!(stats.news_count, 3);
        assert_eq!(days[0].x.row(0), &[0.5, 0.5]);
        assert_eq!(days[0].x.row(1), &[0.0, 0.0]);
        assert_eq!(days[1].x.row(1), &[3.0, -1.0]);
        assert_eq!(days[1].counts, vec![0, 1]);
        assert!((zero_vector_rate(&days) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn aggregation_is_order_invariant_and_scales() {
        let c = cal(4);
        let u = StockUniverse::new(["A", "B", "C"]).unwrap();
        let mut rng = crate::numerics::Rng::new(5);
        let mut news: Vec<NewsRecord> = (0..60)
            .map(|_| {
                let day = rng.below(4);
                let ts = c.close_instant(day) - Duration::minutes(1 + rng.below(600) as i64);
                let t = ["A", "B", "C"][rng.below(3)];
                rec(t, ts, (0..3).map(|_| rng.normal()).collect())
            })
            .collect();
        let (base, _) = aggregate_daily(&news, &u, &c, 3);
        rng.shuffle(&mut news);
        let (shuffled, _) = aggregate_daily(&news, &u, &c, 3);
        assert_eq!(base, shuffled);

        let scaled: Vec<NewsRecord> = news
            .iter()
            .map(|r| rec(&r.ticker, r.timestamp, r.embedding.iter().map(|v| v * 2.5).collect()))
            .collect();
        let (s, _) = aggregate_daily(&scaled, &u, &c, 3);
        for (a, b) in base.iter().zip(&s) {
            for (x, y) in a.x.as_slice().iter().zip(b.x.as_slice()) {
                assert!((x * 2.5 - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn load_news_validates_and_skips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("news.jsonl");
        let mut f = File::create(&p).unwrap();
        writeln!(f, r#"{{"ticker":"A","ts":"2019-01-07T10:00:00Z","embedding":[1,2]}}"#).unwrap();
        writeln!(f, r#"{{"ticker":"B","ts":"2019-01-07T11:00:00Z","embedding":[0.5,0]}}"#).unwrap();
        writeln!(f, r#"{{"ticker":"ZZ","ts":"2019-01-07T11:00:00Z","embedding":[0,0]}}"#).unwrap();
        writeln!(f, r#"{{"ticker":"A","ts":"2019-01-08T11:00:00Z","embedding":[3,3]}}"#).unwrap();
        drop(f);
        let u = StockUniverse::new(["A", "B"]).unwrap();
        let (recs, stats) = load_news(&p, &u, LoadOptions::default()).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(stats.skip_count, 1);
        assert_eq!(recs[0].embedding, vec![1.0, 2.0]);

        let bad = dir.path().join("bad.jsonl");
        std::fs::write(
            &bad,
            "{\"ticker\":\"A\",\"ts\":\"2019-01-07T10:00:00Z\",\"embedding\":[1,2,3,4,5,6,7,8,9,10,11,12,13,14,15,16]}\n\
             {\"ticker\":\"A\",\"ts\":\"2019-01-07T10:00:00Z\",\"embedding\":[1,2,3,4,5,6,7,8]}\n",
        )
        .unwrap();
        assert!(matches!(
            load_news(&bad, &u, LoadOptions::default()),
            Err(NewsError::InconsistentDimension { line: 2, got: 8, expected: 16 })
        ));

        std::fs::write(&bad, "{\"ticker\":\"A\"}\n").unwrap();
        assert!(matches!(
            load_news(&bad, &u, LoadOptions::default()),
            Err(NewsError::MalformedRecord { line: 1, .. })
        ));
    }

    #[test]
    fn headline_fallback_embedding() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("news.jsonl");
        std::fs::write(
            &p,
            "{\"ticker\":\"A\",\"ts\":\"2019-01-07T10:00:00Z\",\"headline\":\"Profit beats estimates\"}\n",
        )
        .unwrap();
        let u = StockUniverse::new(["A"]).unwrap();
        let opts = LoadOptions {
            fallback_dim: Some(8),
            ..Default::default()
        };
        let (recs, _) = load_news(&p, &u, opts).unwrap();
        assert_eq!(recs[0].embedding, hash_embed("profit BEATS estimates", 8));
        let norm: f64 = recs[0].embedding.iter().map(|v| v * v).sum();
        assert!((norm - 1.0).abs() < 1e-12);
        assert!(load_news(&p, &u, LoadOptions::default()).is_err());
    }
}
