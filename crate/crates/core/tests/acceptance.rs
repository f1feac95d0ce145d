//! Acceptance suite. Runs every criterion in order, prints one PASS/FAIL
//! line each and exits non-zero if any failed.

mod common;

use std::collections::HashMap;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use chrono::NaiveDate;
use common::{run_config, small_model, write_bundle};
use mgrn_core::eval::{
    backtest, backtest_realized, percentile_accuracy, random_scorer, sharpe_ratio, PredictionRecord,
};
use mgrn_core::graph::{build_sector_graph, identity_graph, normalize_adjacency, StockUniverse};
use mgrn_core::model::gradcheck;
use mgrn_core::model::{attention_aggregate, bce_loss, Mgrn, ModelConfig, Sample};
use mgrn_core::numerics::{Matrix, Rng};
use mgrn_core::pipeline::{run_pipeline, GraphChoice, Metrics};
use mgrn_core::synth::{SynthConfig, TruthGraph};
use num_rational::Ratio;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_matrix(rng: &mut Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_vec(r, c, (0..r * c).map(|_| rng.normal()).collect()).unwrap()
}

fn day(i: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, 1, 1).unwrap() + chrono::Days::new(i as u64)
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let mut rng = Rng::new(2024);
    let mut worst: f64 = 0.0;
    let mut lines = Vec::new();
    for case_no in 0..6u64 {
        let n = 2 + rng.below(4);
        let g = 1 + rng.below(3);
        let config = ModelConfig {
            gcn_dims: vec![2 + rng.below(5), 2 + rng.below(3)],
            attn_w: 2 + rng.below(4),
            lstm_dims: vec![2 + rng.below(4)],
            lookback: 1 + rng.below(3),
            seed: case_no,
            ..ModelConfig::new(2 + rng.below(7))
        };
        let desc = format!(
            "n={n} d={} g={g} gcn={:?} lstm={:?} T={}",
            config.d, config.gcn_dims, config.lstm_dims, config.lookback
        );
        let case = gradcheck::random_case(&format!("random-{case_no}"), 100 + case_no, n, g, config);
        let report = gradcheck::run(&case).map_err(|e| e.to_string())?;
        worst = worst.max(report.max_rel_error);
        if !report.passed {
            lines.push(format!("{desc}: {:.3e}", report.max_rel_error));
        }
    }
    let took = start.elapsed();
    check(
        lines.is_empty() && worst < 1e-4 && took < Duration::from_secs(60),
        format!("6 cases, max rel err {worst:.2e}, {:.1}s{}", took.as_secs_f64(), lines.iter().map(|l| format!("; {l}")).collect::<String>()),
    )
}

fn normalization() -> Outcome {
    let mut rng = Rng::new(5);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = 1 + rng.below(20);
        let mut a = Matrix::identity(n);
        for i in 0..n {
            for j in i + 1..n {
                let w = if rng.bernoulli(0.4) { rng.uniform(0.0, 1.0) } else { 0.0 };
                a.set(i, j, w);
                a.set(j, i, w);
            }
        }
        // Brute force: build D^-1/2 explicitly and multiply both sides.
        let mut dinv = Matrix::zeros(n, n);
        for i in 0..n {
            let deg: f64 = (0..n).map(|j| a.get(i, j)).sum();
            dinv.set(i, i, 1.0 / deg.sqrt());
        }
        let expected = dinv.matmul(&a).unwrap().matmul(&dinv).unwrap();
        let got = normalize_adjacency(&a).map_err(|e| e.to_string())?;
        worst = worst.max(got.max_abs_diff(&expected));
    }
    check(worst <= 1e-12, format!("100 matrices, max diff {worst:.2e}"))
}

fn attention() -> Outcome {
    let mut runner = TestRunner::new(Config {
        cases: 1000,
        failure_persistence: None,
        ..Config::default()
    });
    let strategy = (any::<u64>(), 1usize..8, 1usize..5, 1usize..6, 1usize..6);
    runner
        .run(&strategy, |(seed, n, g, h, w)| {
            let mut rng = Rng::new(seed);
            let z: Vec<Matrix> = (0..g).map(|_| random_matrix(&mut rng, n, h)).collect();
            let wa = random_matrix(&mut rng, h, w);
            let q = random_matrix(&mut rng, w, 1);
            let (fused, alpha) = attention_aggregate(&z, &wa, &q).unwrap();
            for r in 0..n {
                let total: f64 = alpha.iter().map(|a| a[r]).sum();
                prop_assert!((total - 1.0).abs() <= 1e-12);
            }
            if g == 1 {
                prop_assert_eq!(&fused, &z[0]);
            }
            let same = vec![z[0].clone(); g];
            let (_, alpha) = attention_aggregate(&same, &wa, &q).unwrap();
            for a in &alpha {
                for v in a {
                    prop_assert!((v - 1.0 / g as f64).abs() <= 1e-12);
                }
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok("1000 randomized cases".into())
}

fn isolation() -> Outcome {
    let n = 6;
    let d = 4;
    let cfg = ModelConfig {
        gcn_dims: vec![6, 4],
        attn_w: 4,
        lstm_dims: vec![5],
        lookback: 2,
        ..ModelConfig::new(d)
    };
    let mut rng = Rng::new(77);
    let feats: Vec<Matrix> = (0..3).map(|_| random_matrix(&mut rng, n, d)).collect();
    let samples: Vec<Sample> = (0..n).map(|stock| Sample { stock, day: 2 }).collect();

    let rnn = Mgrn::new(cfg.clone(), vec!["identity".into()], &mut rng).unwrap();
    let ident = [identity_graph(n)];
    let base = rnn.predict(&feats, &ident, &samples).unwrap();
    let mut leaks = 0;
    for j in 0..n {
        for t in 0..3 {
            let mut moved = feats.clone();
            moved[t].row_mut(j).iter_mut().for_each(|v| *v += 3.0);
            let p = rnn.predict(&moved, &ident, &samples).unwrap();
            leaks += (0..n).filter(|&s| s != j && p[s].to_bits() != base[s].to_bits()).count();
        }
    }

    let universe = StockUniverse::new((0..n).map(|i| format!("S{i}"))).unwrap();
    let membership: HashMap<String, [String; 4]> = (0..n)
        .map(|i| {
            let code = format!("{}", 10 + i / 3);
            (format!("S{i}"), [code.clone(), code.clone(), code.clone(), code])
        })
        .collect();
    let sector = [build_sector_graph(&universe, &membership, 1).unwrap()];
    let model = Mgrn::new(cfg, vec!["sector".into()], &mut rng).unwrap();
    let base = model.predict(&feats, &sector, &samples).unwrap();
    let mut moved = feats.clone();
    moved[2].row_mut(0).iter_mut().for_each(|v| *v += 1.0);
    let p = model.predict(&moved, &sector, &samples).unwrap();
    let neighbour = (1..3).map(|s| (p[s] - base[s]).abs()).fold(0.0, f64::max);
    let outside = (3..n).map(|s| (p[s] - base[s]).abs()).fold(0.0, f64::max);
    check(
        leaks == 0 && neighbour > 1e-9 && outside == 0.0,
        format!("identity leaks {leaks}, sector neighbour shift {neighbour:.2e}, other sector {outside:.1e}"),
    )
}

fn experiment(truth: TruthGraph, graphs: &[GraphChoice]) -> Result<Metrics, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let bundle = write_bundle(dir.path(), &SynthConfig::new(20, 16, 400, 0.02, 0.002, truth, 11));
    let cfg = run_config(dir.path(), &bundle, graphs, small_model(16, 1));
    run_pipeline(&cfg).map(|m| m.metrics).map_err(|e| e.to_string())
}

fn acc(m: &Metrics, q: f64) -> f64 {
    m.acc(q).unwrap_or(f64::NAN)
}

fn planted_signal() -> Outcome {
    let start = Instant::now();
    let mgrn = experiment(TruthGraph::Sector, &[GraphChoice::Sector])?;
    let rnn = experiment(TruthGraph::Sector, &[GraphChoice::Identity])?;
    let (m100, m10, r100) = (acc(&mgrn, 100.0), acc(&mgrn, 10.0), acc(&rnn, 100.0));
    check(
        m100 >= r100 + 0.05 && m10 >= m100,
        format!(
            "MGRN Acc_100 {m100:.4} Acc_10 {m10:.4}, RNN Acc_100 {r100:.4}, {:.1}s",
            start.elapsed().as_secs_f64()
        ),
    )
}

fn multi_graph() -> Outcome {
    let both = acc(&experiment(TruthGraph::SectorSupply, &[GraphChoice::Sector, GraphChoice::Supply])?, 100.0);
    let mut singles = Vec::new();
    for g in [GraphChoice::Sector, GraphChoice::Supply, GraphChoice::Correlation] {
        singles.push((g.name(), acc(&experiment(TruthGraph::SectorSupply, &[g])?, 100.0)));
    }
    let best = singles.iter().map(|s| s.1).fold(f64::MIN, f64::max);
    let listed: Vec<String> = singles.iter().map(|(n, a)| format!("{n} {a:.4}")).collect();
    check(
        both >= best - 0.01,
        format!("sector+supply {both:.4} vs {}", listed.join(", ")),
    )
}

fn metric_oracles() -> Outcome {
    let mut failures = Vec::new();
    let mut expect = |what: &str, got: f64, want: f64, tol: f64| {
        if (got - want).abs() > tol {
            failures.push(format!("{what}: {got} != {want}"));
        }
    };

    // Ten stocks, scores 0.9 down to 0.0. Only the 0.0 score predicts down.
    let scored = |labels: [u8; 10]| -> Vec<PredictionRecord> {
        (0..10)
            .map(|i| PredictionRecord::new(format!("T{i}"), day(0), 0.5 + (9 - i) as f64 / 20.0, labels[i], 0.0))
            .collect()
    };
    let clean = scored([1, 1, 1, 1, 1, 0, 0, 0, 0, 0]);
    expect("Acc_100 ranked", percentile_accuracy(&clean, 100.0).unwrap(), 0.6, 0.0);
    expect("Acc_20 top/bottom", percentile_accuracy(&clean, 20.0).unwrap(), 1.0, 0.0);
    let noisy = scored([0, 1, 1, 1, 0, 1, 0, 0, 1, 0]);
    expect("Acc_100 noisy", percentile_accuracy(&noisy, 100.0).unwrap(), 0.6, 0.0);
    expect("Acc_20 noisy", percentile_accuracy(&noisy, 20.0).unwrap(), 0.5, 0.0);
    expect("Acc_40 noisy", percentile_accuracy(&noisy, 40.0).unwrap(), 0.75, 0.0);
    let right: Vec<PredictionRecord> = (0..10)
        .map(|i| PredictionRecord::new(format!("T{i}"), day(0), 0.05 + 0.1 * i as f64, u8::from(i >= 5), 0.0))
        .collect();
    expect("Acc_100 all correct", percentile_accuracy(&right, 100.0).unwrap(), 1.0, 0.0);

    // Dyadic returns keep the arithmetic exact.
    let returns = [0.5, 0.25, -0.125, 0.0, 0.375, -0.25, 0.125, 0.0625, -0.5, -0.75];
    let preds: Vec<PredictionRecord> = (0..10)
        .map(|i| PredictionRecord::new(format!("T{i}"), day(0), 0.95 - 0.05 * i as f64, 0, returns[i]))
        .collect();
    let q20 = backtest_realized(&preds, 20.0).unwrap();
    expect("R_d q=20", q20.daily[0].r, 0.5 - (-0.75), 0.0);
    let q40 = backtest_realized(&preds, 40.0).unwrap();
    expect("R_d q=40", q40.daily[0].r, (0.5 + 0.25) / 2.0 - (-0.75 - 0.5) / 2.0, 0.0);
    let q100 = backtest_realized(&preds, 100.0).unwrap();
    expect("R_d q=100", q100.daily[0].r, (0.5 + 0.25 - 0.125 + 0.0 + 0.375) / 5.0 - (-0.25 + 0.125 + 0.0625 - 0.5 - 0.75) / 5.0, 0.0);

    let four: Vec<PredictionRecord> = [(0.9, 0.01), (0.8, 0.03), (0.2, 0.0), (0.1, -0.02)]
        .iter()
        .enumerate()
        .map(|(i, &(p, r))| PredictionRecord::new(format!("F{i}"), day(0), p, 0, r))
        .collect();
    expect("four-stock R_d", backtest_realized(&four, 100.0).unwrap().daily[0].r, 0.03, 1e-15);

    let flat: Vec<PredictionRecord> = (0..4)
        .flat_map(|d| (0..10).map(move |i| PredictionRecord::new(format!("T{i}"), day(d), 0.5, 0, 0.0)))
        .collect();
    let report = backtest_realized(&flat, 50.0).unwrap();
    expect("flat annual return", report.ann_return_pct, 0.0, 0.0);
    let flat_sharpe = report.sharpe.is_none() && sharpe_ratio(&[0.0, 0.0]).is_err();
    let sharpe = sharpe_ratio(&[0.02, 0.0]).unwrap();
    expect("Sharpe [0.02, 0]", sharpe, 11.22, 0.01);

    let universe = StockUniverse::new((0..50).map(|i| format!("R{i:02}"))).unwrap();
    let days: Vec<NaiveDate> = (0..120).map(day).collect();
    let mut label_rng = Rng::new(99);
    let random: Vec<PredictionRecord> = random_scorer(&universe, &days, 3)
        .into_iter()
        .map(|(t, d, p)| PredictionRecord::new(t, d, p, u8::from(label_rng.bernoulli(0.5)), 0.0))
        .collect();
    let random_acc = percentile_accuracy(&random, 100.0).unwrap();
    expect("random scorer Acc_100", random_acc, 0.5, 0.03);

    if !flat_sharpe {
        failures.push("flat Sharpe should be undefined".into());
    }
    check(
        failures.is_empty(),
        format!(
            "fixtures exact, random Acc_100 {random_acc:.4} over {} points, Sharpe {sharpe:.4}{}",
            random.len(),
            failures.iter().map(|f| format!("; {f}")).collect::<String>()
        ),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let bundle = write_bundle(dir.path(), &SynthConfig::new(12, 8, 120, 0.02, 0.002, TruthGraph::Sector, 6));
    let mut model = small_model(8, 2);
    model.epochs = 3;
    let cfg = run_config(dir.path(), &bundle, &[GraphChoice::Sector, GraphChoice::Correlation], model);
    let a = run_pipeline(&cfg).map_err(|e| e.to_string())?;
    let b = run_pipeline(&cfg).map_err(|e| e.to_string())?;
    let same = |f: &str| std::fs::read(a.run_dir.join(f)).ok() == std::fs::read(b.run_dir.join(f)).ok();
    let files = ["history.csv", "metrics.json", "predictions.csv", "model.ckpt"];
    let differing: Vec<&str> = files.iter().copied().filter(|f| !same(f)).collect();
    check(differing.is_empty(), format!("two runs compared on {files:?}, differing {differing:?}"))
}

fn dollar_neutrality() -> Outcome {
    let mut rng = Rng::new(12);
    let one = Ratio::from_integer(1u64);
    let (mut days, mut worst) = (0usize, 0.0f64);
    for trial in 0..200 {
        let m = 1 + rng.below(30);
        let q = [2.0, 10.0, 20.0, 33.0, 50.0, 100.0][trial % 6];
        let preds: Vec<PredictionRecord> = (0..m)
            .map(|i| PredictionRecord::new(format!("N{i:02}"), day(0), rng.open01(), 0, 0.1 * rng.normal()))
            .collect();
        let shift = rng.uniform(-5.0, 5.0);
        let shifted: HashMap<(String, NaiveDate), f64> =
            preds.iter().map(|p| ((p.ticker.clone(), p.day), p.realized_return + shift)).collect();
        let base = backtest_realized(&preds, q).map_err(|e| e.to_string())?;
        let moved = backtest(&preds, &shifted, q).map_err(|e| e.to_string())?;
        for (pos, mv) in base.daily.iter().zip(&moved.daily) {
            let longs: Ratio<u64> = pos.long_weights().into_iter().sum();
            let shorts: Ratio<u64> = pos.short_weights().into_iter().sum();
            if longs != one || shorts != one || pos.longs.len() != pos.shorts.len() {
                return Err(format!("m={m} q={q}: long {longs} short {shorts}"));
            }
            worst = worst.max((pos.r - mv.r).abs());
            days += 1;
        }
    }
    check(worst <= 1e-12, format!("{days} days, weights sum to 1 exactly, max shift drift {worst:.2e}"))
}

fn bce() -> Outcome {
    let half = bce_loss(&[0.5], &[1]).map_err(|e| e.to_string())?;
    let perfect = bce_loss(&[1.0, 0.0, 1.0], &[1, 0, 1]).map_err(|e| e.to_string())?;
    check(
        (half - std::f64::consts::LN_2).abs() <= 1e-12 && perfect < 1e-9,
        format!("p=0.5 -> {half:.15}, perfect -> {perfect:.2e}"),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("gradient oracle", gradients),
        ("normalization oracle", normalization),
        ("attention invariants", attention),
        ("identity isolation", isolation),
        ("planted signal", planted_signal),
        ("multi-graph benefit", multi_graph),
        ("metric oracles", metric_oracles),
        ("determinism", determinism),
        ("dollar neutrality", dollar_neutrality),
        ("bce spot values", bce),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let started = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} {name}: PASS ({detail}) [{secs:.1}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} {name}: FAIL ({detail}) [{secs:.1}s]", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
