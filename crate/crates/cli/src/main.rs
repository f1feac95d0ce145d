use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use mgrn_core::eval::{backtest_realized, read_predictions, EvalError};
use mgrn_core::model::gradcheck::{self, GradcheckCase};
use mgrn_core::model::{load_checkpoint, ModelConfig, ModelError};
use mgrn_core::pipeline::{
    create_run_dir, export_graphs, predict_test, prepare, run_pipeline, score_predictions, write_atomic, ErrorKind,
    GraphChoice, PipelineError, RunConfig,
};
use mgrn_core::synth::{generate, SynthConfig, SynthError};

/// Multi-graph recurrent network for news-driven stock movement.
#[derive(Parser)]
#[command(name = "mgrn", version)]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset bundle.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the configured graphs and export them into a new run directory.
    BuildGraphs {
        #[arg(long)]
        config: PathBuf,
        /// Export the normalized adjacency instead of the raw one.
        #[arg(long)]
        normalized: bool,
    },
    /// Train, evaluate and backtest; writes a full run directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Keep the final epoch instead of the best dev-loss epoch.
        #[arg(long)]
        last_epoch: bool,
    },
    /// Score a checkpoint on the test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Run config; defaults to config.json next to the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "100,50,20,10,2")]
        q: Vec<f64>,
    },
    /// Long/short simulation over a predictions file.
    Backtest {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long, default_value_t = 10.0)]
        q: f64,
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of every parameter gradient.
    Gradcheck {
        #[arg(long, value_enum, default_value_t = Size::Tiny)]
        size: Size,
        #[arg(long, default_value_t = 5)]
        cases: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Size {
    Tiny,
    Small,
}

/// Error with its process exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    fn config(message: impl Into<String>) -> Self {
        Self::new(1, message)
    }

    fn data(message: impl Into<String>) -> Self {
        Self::new(2, message)
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        let code = match e.kind() {
            ErrorKind::Config => 1,
            ErrorKind::Data => 2,
            ErrorKind::Numeric => 3,
        };
        Self::new(code, e.to_string())
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        let code = match e {
            ModelError::InvalidConfig(_) => 1,
            ModelError::NonFiniteLoss { .. } | ModelError::Numerics(_) => 3,
            _ => 2,
        };
        Self::new(code, e.to_string())
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        let code = if matches!(e, EvalError::InvalidQ(_)) { 1 } else { 2 };
        Self::new(code, e.to_string())
    }
}

impl From<SynthError> for Failure {
    fn from(e: SynthError) -> Self {
        let code = if matches!(e, SynthError::InvalidConfig(_)) { 1 } else { 2 };
        Self::new(code, e.to_string())
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
}

fn print_json<T: serde::Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn graph_choice(name: &str) -> Result<GraphChoice, Failure> {
    serde_json::from_value(serde_json::Value::String(name.into()))
        .map_err(|_| Failure::config(format!("unknown graph name {name:?} in checkpoint")))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Synth { config, out } => {
            let cfg: SynthConfig = read_json(&config)?;
            let bundle = generate(&cfg)?;
            bundle.write(&out).map_err(Failure::from)?;
            println!("{}", out.display());
        }
        Command::BuildGraphs { config, normalized } => {
            let cfg = RunConfig::load(&config)?;
            let data = prepare(&cfg)?;
            let (dir, _) = create_run_dir(&cfg.paths.out_dir, cfg.model.seed).map_err(|e| Failure::data(e.to_string()))?;
            for p in export_graphs(&data, &dir, normalized)? {
                println!("{}", p.display());
            }
            let stats = serde_json::to_vec_pretty(&data.stats).expect("serializable");
            write_atomic(&dir.join("dataset.json"), &stats).map_err(|e| Failure::data(e.to_string()))?;
        }
        Command::Train { config, seed, last_epoch } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.model.seed = s;
            }
            if last_epoch {
                cfg.model.select_best_dev = false;
            }
            let manifest = run_pipeline(&cfg)?;
            for a in &manifest.metrics.accuracy {
                info!("Acc_{} = {:.4}", a.q, a.acc);
            }
            println!("{}", manifest.run_dir.join("manifest.json").display());
        }
        Command::Eval { checkpoint, config, q } => {
            let config = config.unwrap_or_else(|| checkpoint.with_file_name("config.json"));
            let mut cfg = RunConfig::load(&config)?;
            let (model, header) = load_checkpoint(&checkpoint)?;
            let model_cfg: ModelConfig = header.model_config;
            cfg.model = model_cfg;
            cfg.graphs = header.graph_names.iter().map(|n| graph_choice(n)).collect::<Result<_, _>>()?;
            cfg.q_list = q;
            cfg.validate()?;
            let data = prepare(&cfg)?;
            let preds = predict_test(&model, &data)?;
            let (metrics, _) = score_predictions(&preds, &cfg.q_list, &header.graph_names)?;
            print_json(&metrics);
        }
        Command::Backtest { predictions, q, out } => {
            let preds = read_predictions(&predictions)?;
            let report = backtest_realized(&preds, q)?;
            if let Some(out) = out {
                let bytes = serde_json::to_vec_pretty(&report).expect("serializable");
                write_atomic(&out, &bytes).map_err(|e| Failure::data(e.to_string()))?;
            }
            print_json(&report);
        }
        Command::Gradcheck { size, cases, seed } => {
            let mut failed = 0;
            for k in 0..cases.max(1) {
                let case: GradcheckCase = match size {
                    Size::Tiny => gradcheck::tiny_case(seed + k),
                    Size::Small => gradcheck::small_case(seed + k),
                };
                let report = gradcheck::run(&case)?;
                println!(
                    "{} seed={} max_rel_error={:.3e} {}",
                    report.case,
                    report.seed,
                    report.max_rel_error,
                    if report.passed { "ok" } else { "FAIL" }
                );
                if !report.passed {
                    failed += 1;
                    for t in report.tensors.iter().filter(|t| t.max_rel_error >= gradcheck::TOLERANCE) {
                        println!("  {} max_rel_error={:.3e}", t.name, t.max_rel_error);
                    }
                }
            }
            if failed > 0 {
                return Err(Failure::new(4, format!("{failed} gradient check case(s) failed")));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            // Usage mistakes are configuration errors; help and version exit 0.
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
