//! Relation graphs over the stock universe and their symmetric
//! normalization `D^-1/2 A D^-1/2`.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::Matrix;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("return series for {ticker} has length {got}, expected {expected}")]
    LengthMismatch {
        ticker: String,
        got: usize,
        expected: usize,
    },
    #[error("correlation needs at least 2 observations, got {0}")]
    TooShort(usize),
    #[error("no sector membership for {0}")]
    MissingMembership(String),
    #[error("sector level must be 1..=4, got {0}")]
    InvalidLevel(u8),
    #[error("node {0} has zero degree")]
    ZeroDegree(usize),
    #[error("adjacency is not square: {0}x{1}")]
    NotSquare(usize, usize),
    #[error("adjacency entry ({0},{1}) is negative or non-finite")]
    InvalidEntry(usize, usize),
    #[error("duplicate ticker {0}")]
    DuplicateTicker(String),
    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, GraphError>;

/// Ordered ticker list. Position `i` is row/column `i` of every matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StockUniverse {
    tickers: Vec<String>,
    index: HashMap<String, usize>,
}

impl StockUniverse {
    pub fn new<I, S>(tickers: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tickers: Vec<String> = tickers.into_iter().map(Into::into).collect();
        let mut index = HashMap::with_capacity(tickers.len());
        for (i, t) in tickers.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(GraphError::DuplicateTicker(t.clone()));
            }
        }
        Ok(Self { tickers, index })
    }

    pub fn len(&self) -> usize {
        self.tickers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tickers.is_empty()
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn ticker(&self, i: usize) -> &str {
        &self.tickers[i]
    }

    pub fn position(&self, ticker: &str) -> Option<usize> {
        self.index.get(ticker).copied()
    }

    pub fn contains(&self, ticker: &str) -> bool {
        self.index.contains_key(ticker)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphKind {
    Boolean,
    Continuous,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelationGraph {
    pub name: String,
    pub kind: GraphKind,
    pub a: Matrix,
    pub a_hat: Matrix,
}

impl RelationGraph {
    /// Wraps a raw adjacency, forcing the unit diagonal and computing `Â`.
    pub fn from_adjacency(name: impl Into<String>, kind: GraphKind, mut a: Matrix) -> Result<Self> {
        if a.rows() != a.cols() {
            return Err(GraphError::NotSquare(a.rows(), a.cols()));
        }
        for i in 0..a.rows() {
            a.set(i, i, 1.0);
        }
        let a_hat = normalize_adjacency(&a)?;
        Ok(Self {
            name: name.into(),
            kind,
            a,
            a_hat,
        })
    }

    pub fn n(&self) -> usize {
        self.a.rows()
    }

    /// Restricts the graph to `keep` (positions in this graph's order).
    pub fn select(&self, keep: &[usize]) -> Result<Self> {
        let mut a = Matrix::zeros(keep.len(), keep.len());
        for (i, &si) in keep.iter().enumerate() {
            for (j, &sj) in keep.iter().enumerate() {
                a.set(i, j, self.a.get(si, sj));
            }
        }
        Self::from_adjacency(self.name.clone(), self.kind, a)
    }
}

/// `Â = D^-1/2 A D^-1/2` with `D_ii = Σ_k A_ik`.
pub fn normalize_adjacency(a: &Matrix) -> Result<Matrix> {
    let n = a.rows();
    if n != a.cols() {
        return Err(GraphError::NotSquare(a.rows(), a.cols()));
    }
    let mut degree = Vec::with_capacity(n);
    for i in 0..n {
        let row = a.row(i);
        if let Some(j) = row.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(GraphError::InvalidEntry(i, j));
        }
        let deg: f64 = row.iter().sum();
        if deg <= 0.0 {
            return Err(GraphError::ZeroDegree(i));
        }
        degree.push(deg);
    }
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out.set(i, j, a.get(i, j) / (degree[i] * degree[j]).sqrt());
        }
    }
    Ok(out)
}

pub fn identity_graph(n: usize) -> RelationGraph {
    RelationGraph {
        name: "identity".into(),
        kind: GraphKind::Boolean,
        a: Matrix::identity(n),
        a_hat: Matrix::identity(n),
    }
}

/// Pearson correlation, `None` when either series is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CorrelationReport {
    /// Tickers whose return series had zero variance.
    pub degenerate: Vec<String>,
}

/// Correlation graph from aligned return series, one per universe ticker.
///
/// Negative correlations are clamped to 0. Pairs involving a constant
/// series get 0.
pub fn build_correlation_graph(
    universe: &StockUniverse,
    returns: &[Vec<f64>],
) -> Result<(RelationGraph, CorrelationReport)> {
    let n = universe.len();
    assert_eq!(returns.len(), n, "one return series per ticker");
    let len = returns.first().map_or(0, Vec::len);
    for (i, r) in returns.iter().enumerate() {
        if r.len() != len {
            return Err(GraphError::LengthMismatch {
                ticker: universe.ticker(i).to_string(),
                got: r.len(),
                expected: len,
            });
        }
    }
    if len < 2 {
        return Err(GraphError::TooShort(len));
    }
    let mut report = CorrelationReport::default();
    let degenerate: Vec<bool> = returns
        .iter()
        .map(|r| r.iter().all(|v| *v == r[0]))
        .collect();
    for (i, &d) in degenerate.iter().enumerate() {
        if d {
            log::warn!(
                "constant return series for {}; its correlations are set to 0",
                universe.ticker(i)
            );
            report.degenerate.push(universe.ticker(i).to_string());
        }
    }
    let mut a = Matrix::identity(n);
    for i in 0..n {
        for j in 0..i {
            let rho = if degenerate[i] || degenerate[j] {
                0.0
            } else {
                pearson(&returns[i], &returns[j]).unwrap_or(0.0)
            };
            let v = rho.max(0.0);
            a.set(i, j, v);
            a.set(j, i, v);
        }
    }
    Ok((
        RelationGraph::from_adjacency("correlation", GraphKind::Continuous, a)?,
        report,
    ))
}

/// GICS codes at the four levels: sector, industry group, industry,
/// sub-industry.
pub type SectorCodes = [String; 4];

pub fn build_sector_graph(
    universe: &StockUniverse,
    membership: &HashMap<String, SectorCodes>,
    level: u8,
) -> Result<RelationGraph> {
    if !(1..=4).contains(&level) {
        return Err(GraphError::InvalidLevel(level));
    }
    let codes = universe
        .tickers()
        .iter()
        .map(|t| {
            membership
                .get(t)
                .map(|c| c[level as usize - 1].as_str())
                .ok_or_else(|| GraphError::MissingMembership(t.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = universe.len();
    let mut a = Matrix::identity(n);
    for i in 0..n {
        for j in 0..n {
            if codes[i] == codes[j] {
                a.set(i, j, 1.0);
            }
        }
    }
    RelationGraph::from_adjacency("sector", GraphKind::Boolean, a)
}

/// Undirected supply-chain graph. Returns the graph and the number of edges
/// skipped because an endpoint is outside the universe.
pub fn build_supply_chain_graph(
    universe: &StockUniverse,
    edges: &[(String, String)],
) -> Result<(RelationGraph, usize)> {
    let mut a = Matrix::identity(universe.len());
    let mut skipped = 0;
    for (supplier, customer) in edges {
        match (universe.position(supplier), universe.position(customer)) {
            (Some(i), Some(j)) => {
                a.set(i, j, 1.0);
                a.set(j, i, 1.0);
            }
            _ => skipped += 1,
        }
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} supply-chain edges outside the universe");
    }
    Ok((
        RelationGraph::from_adjacency("supply-chain", GraphKind::Boolean, a)?,
        skipped,
    ))
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> GraphError + '_ {
    move |source| GraphError::Csv {
        path: path.display().to_string(),
        source,
    }
}

/// Reads `ticker,level1,level2,level3,level4`.
pub fn load_sectors(path: &Path) -> Result<HashMap<String, SectorCodes>> {
    #[derive(Deserialize)]
    struct Row {
        ticker: String,
        level1: String,
        level2: String,
        level3: String,
        level4: String,
    }
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let mut out = HashMap::new();
    for row in rdr.deserialize::<Row>() {
        let r = row.map_err(csv_err(path))?;
        out.insert(r.ticker, [r.level1, r.level2, r.level3, r.level4]);
    }
    Ok(out)
}

/// Reads `supplier,customer`.
pub fn load_supply_edges(path: &Path) -> Result<Vec<(String, String)>> {
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err(path))?;
    rdr.deserialize::<(String, String)>()
        .map(|r| r.map_err(csv_err(path)))
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GraphSidecar {
    pub name: String,
    pub kind: GraphKind,
    pub n: usize,
    pub normalized: bool,
}

/// Writes the matrix as CSV with a ticker header row and column, plus a
/// `<stem>.json` sidecar.
pub fn export_graph(
    graph: &RelationGraph,
    universe: &StockUniverse,
    csv_path: &Path,
    normalized: bool,
) -> Result<()> {
    let m = if normalized { &graph.a_hat } else { &graph.a };
    let mut w = csv::Writer::from_path(csv_path).map_err(csv_err(csv_path))?;
    let mut header = vec![String::new()];
    header.extend(universe.tickers().iter().cloned());
    w.write_record(&header).map_err(csv_err(csv_path))?;
    for i in 0..m.rows() {
        let mut rec = vec![universe.ticker(i).to_string()];
        rec.extend(m.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(csv_err(csv_path))?;
    }
    w.flush()?;
    let sidecar = GraphSidecar {
        name: graph.name.clone(),
        kind: graph.kind,
        n: graph.n(),
        normalized,
    };
    fs::write(
        csv_path.with_extension("json"),
        serde_json::to_vec_pretty(&sidecar)?,
    )?;
    Ok(())
}
