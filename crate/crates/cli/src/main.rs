//! `tabgen`: fit a generator on a CSV, sample synthetic rows, score them.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 internal failure.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tabgen_core::config::RunConfig;
use tabgen_core::dataset::{load_csv, Schema, Table};
use tabgen_core::eval::{evaluate, EvalOptions, EvalReport};
use tabgen_core::generator::{fit, write_atomic, TrainedGenerator};
use tabgen_core::sampler::sample_rows;
use tabgen_core::transformer::Preset;
use tabgen_core::Error;

#[derive(Parser, Debug)]
#[command(name = "tabgen", version, about = "Tree-conditioned synthetic tabular data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit the tree ensemble and both sequence models, then write a checkpoint.
    Fit(FitArgs),
    /// Sample rows from a checkpoint into a CSV file.
    Generate(GenerateArgs),
    /// Score a synthetic table against real training and test tables.
    Evaluate(EvaluateArgs),
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Training data (CSV with a header row).
    #[arg(long)]
    data: PathBuf,
    /// Column schema as JSON; column kinds are inferred when absent.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Target column for the tree ensemble; a seeded random column when absent.
    #[arg(long)]
    target: Option<String>,
    /// Model preset: S, L, NM or TINY.
    #[arg(long)]
    preset: Option<Preset>,
    #[arg(long)]
    seed: Option<u64>,
    /// JSON run configuration; command-line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Random-search trials for the tree ensemble (0 uses fixed parameters).
    #[arg(long)]
    tree_trials: Option<usize>,
    /// Print the resolved configuration and exit without training.
    #[arg(long)]
    print_config: bool,
    /// Checkpoint path.
    #[arg(long, required_unless_present = "print_config")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long)]
    model: PathBuf,
    /// Number of rows to generate.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    rows: u64,
    /// Sampling seed; defaults to the seed stored in the checkpoint.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    temperature_categorical: Option<f64>,
    #[arg(long)]
    temperature_numeric: Option<f64>,
    /// Output CSV; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    synth: PathBuf,
    /// Column schema as JSON; otherwise inferred from the training table.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Target for the efficacy models; falls back to the schema's target.
    #[arg(long)]
    target: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Skip the train-on-synthetic models.
    #[arg(long)]
    skip_mle: bool,
    /// Report JSON path; standard output when absent.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) => 1,
            Error::IdOutOfRange { .. } | Error::NonFiniteLoss(_) => 3,
            _ => 2,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        message: msg.into(),
    }
}

fn data(msg: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: msg.into(),
    }
}

fn read_schema(path: &Option<PathBuf>) -> Result<Option<Schema>, Failure> {
    path.as_deref().map(Schema::from_json_file).transpose().map_err(Failure::from)
}

fn resolve_config(a: &FitArgs) -> Result<RunConfig, Failure> {
    let mut rc = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
            serde_json::from_str::<RunConfig>(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?
        }
        None => RunConfig::for_preset(a.preset.unwrap_or(Preset::Small)),
    };
    if let Some(p) = a.preset {
        rc.preset = p;
    }
    if let Some(s) = a.seed {
        rc.seed = s;
    }
    if a.max_steps.is_some() {
        rc.train.max_steps = a.max_steps;
    }
    if a.batch_size.is_some() {
        rc.train.batch_size = a.batch_size;
    }
    if a.tree_trials.is_some() {
        rc.tree_trials = a.tree_trials;
    }
    rc.validate()?;
    Ok(rc)
}

fn resolved_view(rc: &RunConfig) -> serde_json::Value {
    let mc = rc.model_config(0, 0);
    serde_json::json!({
        "run": rc,
        "train": rc.train_config(),
        "model": {
            "d_model": mc.d_model,
            "d_ff": mc.d_ff,
            "n_heads": mc.n_heads,
            "n_layers": mc.n_layers,
            "dropout": mc.dropout,
        },
        "generation": rc.generation_config(),
        "tree_trials": rc.tree_trials(),
    })
}

fn cmd_fit(a: FitArgs) -> Result<(), Failure> {
    let rc = resolve_config(&a)?;
    if a.print_config {
        println!("{}", serde_json::to_string_pretty(&resolved_view(&rc)).expect("serializable"));
        return Ok(());
    }
    let out = a.out.as_deref().ok_or_else(|| usage("--out is required"))?;
    let schema = read_schema(&a.schema)?;
    let table = load_csv(&a.data, schema.as_ref())?;
    log::info!(
        "resolved configuration: {}",
        serde_json::to_string(&resolved_view(&rc)).expect("serializable")
    );
    let g = fit(&table, a.target.as_deref(), &rc)?;
    g.save(out)?;
    for run in &g.history.runs {
        log::info!(
            "{:?}: best validation loss {:.5} at step {} (baseline {:.5}, last step {}, stopped early: {})",
            run.phase,
            run.best_val_loss,
            run.best_step,
            run.baseline_val_loss,
            run.last_step,
            run.stopped_early
        );
    }
    log::info!("wrote checkpoint {}", out.display());
    Ok(())
}

fn cmd_generate(a: GenerateArgs) -> Result<(), Failure> {
    let g = TrainedGenerator::load(&a.model)?;
    let mut gc = g.generation.clone();
    if let Some(s) = a.seed {
        gc.seed = s;
    }
    if let Some(t) = a.temperature_categorical {
        gc.temperature_categorical = t;
    }
    if let Some(t) = a.temperature_numeric {
        gc.temperature_numeric = t;
    }
    gc.validate()?;
    let n = usize::try_from(a.rows).map_err(|_| usage("--rows is too large"))?;
    let rows = sample_rows(&g, n, &gc)?;
    let csv = rows.to_csv_string()?;
    match &a.out {
        Some(p) => {
            write_atomic(p, csv.as_bytes())?;
            log::info!("wrote {n} rows to {} (seed {})", p.display(), gc.seed);
        }
        None => std::io::stdout()
            .write_all(csv.as_bytes())
            .map_err(|e| data(format!("standard output: {e}")))?,
    }
    Ok(())
}

fn load_with(path: &Path, schema: &Schema) -> Result<Table, Failure> {
    load_csv(path, Some(schema)).map_err(|e| {
        let f = Failure::from(e);
        data(format!("{}: {}", path.display(), f.message))
    })
}

fn summary(r: &EvalReport) -> String {
    let mut s = format!(
        "shape {:.4}\ntrend {:.4}\ndcr p-value {:.4}{}\n",
        r.shape,
        r.trend,
        r.dcr_p,
        if r.dcr_p < 0.05 { " (privacy risk)" } else { "" }
    );
    if let Some(m) = &r.breakdown.mle {
        s += &format!(
            "efficacy on {:?} ({:?}): linear {:.4} (real {:.4}), gbm {:.4} (real {:.4}){}\n",
            m.target,
            m.task,
            m.tstr.linear,
            m.trtr.linear,
            m.tstr.gbm,
            m.trtr.gbm,
            if m.degenerate_synth_target { " [single-class synthetic target]" } else { "" }
        );
    }
    s
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<(), Failure> {
    let schema = read_schema(&a.schema)?;
    let train = match &schema {
        Some(s) => load_with(&a.train, s)?,
        None => load_csv(&a.train, None).map_err(|e| data(format!("{}: {e}", a.train.display())))?,
    };
    let schema = train.schema().clone();
    let test = load_with(&a.test, &schema)?;
    let synth = load_with(&a.synth, &schema)?;
    let opts = EvalOptions {
        seed: a.seed,
        target: a.target.clone(),
        skip_mle: a.skip_mle,
    };
    let report = evaluate(&train, &test, &synth, &opts)?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| Failure::from(Error::from(e)))?;
    match &a.report {
        Some(p) => {
            write_atomic(p, json.as_bytes())?;
            print!("{}", summary(&report));
        }
        None => println!("{json}"),
    }
    Ok(())
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("TTF_THREADS") else { return Ok(()) };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| usage(format!("TTF_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure {
            code: 3,
            message: format!("thread pool: {e}"),
        })
}

fn run(cli: Cli) -> Result<(), Failure> {
    configure_threads()?;
    match cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Generate(a) => cmd_generate(a),
        Command::Evaluate(a) => cmd_evaluate(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match std::panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(f)) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
        Err(_) => {
            eprintln!("error: internal failure (see panic message above)");
            ExitCode::from(3)
        }
    }
}
