#![allow(dead_code)]

use std::path::Path;

use mgrn_core::model::ModelConfig;
use mgrn_core::pipeline::{DateRange, GraphChoice, Paths, RunConfig, SplitRanges};
use mgrn_core::synth::{generate, SynthBundle, SynthConfig};

/// Writes a synthetic bundle into `dir` and returns it.
pub fn write_bundle(dir: &Path, cfg: &SynthConfig) -> SynthBundle {
    let b = generate(cfg).unwrap();
    b.write(dir).unwrap();
    b
}

/// 60/20/20 chronological split over the bundle's calendar.
pub fn run_config(dir: &Path, bundle: &SynthBundle, graphs: &[GraphChoice], model: ModelConfig) -> RunConfig {
    let days = &bundle.days;
    let a = days.len() * 6 / 10;
    let b = days.len() * 8 / 10;
    RunConfig {
        paths: Paths {
            news: dir.join("news.jsonl"),
            prices: dir.join("prices.csv"),
            index: dir.join("index.csv"),
            sectors: Some(dir.join("sectors.csv")),
            supply: Some(dir.join("supply.csv")),
            out_dir: dir.join("runs"),
        },
        filters: Default::default(),
        splits: SplitRanges {
            train: DateRange { start: days[0], end: days[a - 1] },
            dev: DateRange { start: days[a], end: days[b - 1] },
            test: DateRange { start: days[b], end: *days.last().unwrap() },
        },
        model,
        graphs: graphs.to_vec(),
        sector_level: bundle.config.sector_level,
        q_list: vec![100.0, 50.0, 20.0, 10.0, 2.0],
        calendar: Default::default(),
    }
}

/// Small network used by the desk-scale experiments.
pub fn small_model(d: usize, seed: u64) -> ModelConfig {
    ModelConfig {
        gcn_dims: vec![16, 8],
        attn_w: 8,
        lstm_dims: vec![16],
        lookback: 5,
        lr: 5e-3,
        epochs: 8,
        batch_size: 32,
        seed,
        ..ModelConfig::new(d)
    }
}
