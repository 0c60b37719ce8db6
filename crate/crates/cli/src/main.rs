//! `jnd-kit`: validate, screen, fit, bootstrap and evaluate triplet
//! comparison studies, or simulate one.

mod artifacts;
mod config;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use artifacts::{OutDir, Provenance};
use config::{ModeSelection, Overrides, PipelineConfig};
use pipeline::Pipeline;

#[derive(Debug, Parser)]
#[command(name = "jnd-kit", version, about = "JND-scale reconstruction from triplet comparisons")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON configuration file; flags take precedence over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Directory holding stimuli.csv, questions.csv, responses.csv and metrics.csv.
    #[arg(long, global = true)]
    data: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Master seed (required for bootstrap and simulate).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Number of bootstrap replicates.
    #[arg(long = "bootstrap-n", global = true)]
    bootstrap_n: Option<usize>,

    /// Significance level of the metric comparison test.
    #[arg(long, global = true)]
    alpha: Option<f64>,

    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Protocols whose responses are screened and fitted.
    #[arg(long, value_enum, global = true)]
    mode: Option<ModeSelection>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Ingest and cross-check the input files.
    Validate,
    /// Score and label batches.
    Screen,
    /// Screen, then fit the JND scales on the inlier batches.
    Fit,
    /// Fit, then add bootstrap confidence bands to the curves.
    Bootstrap,
    /// Fit (or read JND values) and compare metrics against them.
    Eval,
    /// Write a simulated study with known ground truth.
    Simulate,
    /// validate, screen, fit, bootstrap and eval in one run.
    All,
}

fn run(cli: Cli) -> Result<()> {
    let overrides = Overrides {
        data_dir: cli.data,
        out: cli.out,
        seed: cli.seed,
        bootstrap_n: cli.bootstrap_n,
        alpha: cli.alpha,
        workers: cli.workers,
        mode: cli.mode,
    };
    let cfg = PipelineConfig::load(cli.config.as_deref(), &overrides)?;
    if let Some(n) = cfg.workers {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let out = OutDir::create(&cfg.out, Provenance::new(cfg.hash(), cfg.seed))?;
    let p = Pipeline { cfg, out };

    match cli.command {
        Command::Simulate => p.simulate(),
        Command::Validate => p.validate().map(|_| ()),
        command => {
            let design = if matches!(command, Command::All) { p.validate()? } else { p.load_design()? };
            let batches = p.load_batches(&design)?;
            if matches!(command, Command::Eval) && !p.needs_model_for_eval() {
                let jnd = p.jnd_values(&design, None)?;
                return p.eval(&design, &jnd).map(|_| ());
            }
            let reports = p.screen(&design, &batches)?;
            if matches!(command, Command::Screen) {
                return Ok(());
            }
            let (data, used) = p.inlier_data(&design, &batches, &reports);
            let model = p.fit(&design, &data, used)?;
            if matches!(command, Command::Bootstrap | Command::All) {
                p.bootstrap(&design, &data, &model)?;
            }
            if matches!(command, Command::Eval | Command::All) {
                let jnd = p.jnd_values(&design, Some(&model))?;
                p.eval(&design, &jnd)?;
            }
            Ok(())
        }
    }
}

/// Exit code and error tag: 1 for input and configuration problems, 2 for
/// numerical failures.
fn classify(err: &anyhow::Error) -> (u8, &'static str) {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<jnd_core::Error>() {
            return (if e.is_input_error() { 1 } else { 2 }, e.kind());
        }
        if cause.downcast_ref::<serde_json::Error>().is_some() {
            return (1, "config");
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return (1, "io");
        }
    }
    (1, "input")
}

fn report_error(kind: &str, message: String, code: u8) -> ExitCode {
    let body = serde_json::json!({ "error": kind, "message": message, "exit_code": code });
    eprintln!("{body}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("JND_KIT_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return report_error("usage", e.kind().to_string(), 1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (code, kind) = classify(&e);
            report_error(kind, format!("{e:#}"), code)
        }
    }
}
