//! Finite-difference verification of [`Mgrn::backward`].

use serde::Serialize;

use crate::graph::{GraphKind, RelationGraph};
use crate::numerics::{finite_diff_grad, Matrix, Rng};

use super::{Mgrn, ModelConfig, Result, Sample};

/// Relative error passes below this.
pub const TOLERANCE: f64 = 1e-4;
/// Central-difference step.
pub const STEP: f64 = 1e-5;
/// Denominator floor, so gradients that are zero up to rounding compare
/// absolutely.
pub const FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub len: usize,
    pub max_rel_error: f64,
    pub max_abs_grad: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub case: String,
    pub seed: u64,
    pub tensors: Vec<TensorCheck>,
    pub max_rel_error: f64,
    pub passed: bool,
}

/// A problem instance: config, graphs, features, batch.
#[derive(Debug, Clone)]
pub struct GradcheckCase {
    pub name: String,
    pub config: ModelConfig,
    pub graphs: Vec<RelationGraph>,
    pub features: Vec<Matrix>,
    pub samples: Vec<Sample>,
    pub labels: Vec<u8>,
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

fn random_graph(rng: &mut Rng, name: &str, n: usize, weighted: bool) -> RelationGraph {
    let mut a = Matrix::identity(n);
    for i in 0..n {
        for j in i + 1..n {
            if rng.bernoulli(0.5) {
                let w = if weighted { rng.uniform(0.1, 1.0) } else { 1.0 };
                a.set(i, j, w);
                a.set(j, i, w);
            }
        }
    }
    let kind = if weighted { GraphKind::Continuous } else { GraphKind::Boolean };
    RelationGraph::from_adjacency(name, kind, a).expect("valid random adjacency")
}

/// Random instance with `n` stocks, `g` graphs and the given widths. Every
/// stock is sampled on the last two days.
pub fn random_case(name: &str, seed: u64, n: usize, g: usize, config: ModelConfig) -> GradcheckCase {
    let mut rng = Rng::new(seed);
    let days = config.lookback + 2;
    let graphs = (0..g).map(|i| random_graph(&mut rng, &format!("g{i}"), n, i % 2 == 1)).collect();
    let features = (0..days)
        .map(|_| Matrix::from_vec(n, config.d, (0..n * config.d).map(|_| rng.normal()).collect()).expect("finite"))
        .collect();
    let samples: Vec<Sample> = (days - 2..days).flat_map(|day| (0..n).map(move |stock| Sample { stock, day })).collect();
    let labels = samples.iter().map(|_| u8::from(rng.bernoulli(0.5))).collect();
    GradcheckCase {
        name: name.to_string(),
        config,
        graphs,
        features,
        samples,
        labels,
    }
}

/// n=4, d=6, two graphs, GCN widths [5, 3], one LSTM layer of 4, T=2.
pub fn tiny_case(seed: u64) -> GradcheckCase {
    let config = ModelConfig {
        gcn_dims: vec![5, 3],
        attn_w: 4,
        lstm_dims: vec![4],
        lookback: 2,
        seed,
        ..ModelConfig::new(6)
    };
    random_case("tiny", seed, 4, 2, config)
}

/// Deeper stack and three graphs.
pub fn small_case(seed: u64) -> GradcheckCase {
    let config = ModelConfig {
        gcn_dims: vec![6, 5, 4],
        attn_w: 3,
        lstm_dims: vec![5, 3],
        lookback: 3,
        seed,
        ..ModelConfig::new(5)
    };
    random_case("small", seed, 6, 3, config)
}

/// Compares analytic and central-difference gradients for every parameter.
pub fn run(case: &GradcheckCase) -> Result<GradcheckReport> {
    let names: Vec<String> = case.graphs.iter().map(|g| g.name.clone()).collect();
    let model = Mgrn::new(case.config.clone(), names.clone(), &mut Rng::new(case.config.seed))?;
    let trace = model.forward(&case.features, &case.graphs, &case.samples)?;
    let (grads, _) = model.backward(&trace, &case.labels)?;

    let flat = model.params().to_flat();
    let mut scratch = model.clone();
    let mut fd_error = None;
    let numeric = finite_diff_grad(
        |x| {
            scratch.update_params(|p| p.set_flat(x));
            match scratch.loss(&case.features, &case.graphs, &case.samples, &case.labels) {
                Ok(l) => l,
                Err(e) => {
                    fd_error.get_or_insert(e);
                    f64::NAN
                }
            }
        },
        &flat,
        STEP,
    );
    if let Some(e) = fd_error {
        return Err(e);
    }
    let numeric = numeric?;
    let analytic = grads.to_flat();

    let mut tensors = Vec::new();
    let mut offset = 0;
    for (name, m) in grads.tensor_names().into_iter().zip(grads.tensors()) {
        let len = m.as_slice().len();
        let range = offset..offset + len;
        let max_rel_error = analytic[range.clone()]
            .iter()
            .zip(&numeric[range.clone()])
            .map(|(&a, &n)| rel_error(a, n))
            .fold(0.0, f64::max);
        let max_abs_grad = analytic[range].iter().fold(0.0, |m: f64, v| m.max(v.abs()));
        tensors.push(TensorCheck {
            name,
            len,
            max_rel_error,
            max_abs_grad,
        });
        offset += len;
    }
    let max_rel_error = tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max);
    Ok(GradcheckReport {
        case: case.name.clone(),
        seed: case.config.seed,
        tensors,
        max_rel_error,
        passed: max_rel_error < TOLERANCE,
    })
}
