//! Thin command-line front end over the `scoopsim` library: catalog
//! validation, dataset generation, classifier training, experiment runs,
//! and SVG replay. Exit codes: 0 ok, 2 config error, 3 missing model or
//! data file, 4 physics fault.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use scoopsim::bench::{
    emit_table, log_forces, replay_svg, run_experiment, BenchError, ExperimentConfig, TableFormat,
};
use scoopsim::learning::{
    augment, generate_breakage_dataset, generate_fragility_dataset, load_labeled_set,
    save_labeled_set, train, LearnError, TrainConfig, BREAKAGE_ROLLOUTS, FRAGILITY_PER_CLASS,
    IMMINENCE_WINDOW,
};
use scoopsim::policy::PolicyError;
use scoopsim::primitive::{read_rollout_ndjson, write_rollout_ndjson};
use scoopsim::worldmodel::Catalog;

#[derive(Parser)]
#[command(
    name = "scoopsim",
    version,
    about = "Planar bimanual scooping simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Food catalog utilities.
    Catalog {
        #[command(subcommand)]
        action: CatalogAction,
    },
    /// Generate a labeled dataset directory.
    GenData(GenDataArgs),
    /// Train a classifier from a dataset directory.
    Train(TrainArgs),
    /// Run an experiment grid and write the results table.
    Run(RunArgs),
    /// Render a saved rollout record as an SVG keyframe strip.
    Replay(ReplayArgs),
}

#[derive(Subcommand)]
enum CatalogAction {
    /// Parse and validate a catalog file.
    Validate { path: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum DataKind {
    /// Overhead observations of every class, labeled robust/fragile.
    Fragility,
    /// Side frames from pushing rollouts, labeled breakage-imminent.
    Breakage,
}

#[derive(Args)]
struct GenDataArgs {
    kind: DataKind,
    /// Output dataset directory (created if absent).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Food classes to leave out (fragility data only; repeatable).
    #[arg(long)]
    holdout: Vec<String>,
    /// Catalog file; defaults to the one shipped with the crate.
    #[arg(long)]
    catalog: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelRole {
    /// Robust-vs-fragile gate on the initial observation.
    Risk,
    /// Breakage-imminence detector on pushing frames.
    Failure,
}

#[derive(Args)]
struct TrainArgs {
    role: ModelRole,
    /// Dataset directory written by gen-data.
    #[arg(long)]
    data: PathBuf,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Label-preserving augmentation factor applied before training.
    #[arg(long, default_value_t = 8)]
    augment: usize,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment file (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Results table (CSV) destination.
    #[arg(long)]
    out: PathBuf,
    /// Also print the markdown table to stdout.
    #[arg(long)]
    markdown: bool,
    /// Write per-trial rollout records and force traces here.
    #[arg(long)]
    trace_dir: Option<PathBuf>,
    /// Write per-trial replay strips here.
    #[arg(long)]
    svg_dir: Option<PathBuf>,
    /// Catalog file; defaults to the one shipped with the crate.
    #[arg(long)]
    catalog: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    /// Rollout record (NDJSON of per-tick states).
    record: PathBuf,
    /// Output SVG path.
    #[arg(long)]
    svg: PathBuf,
    /// Catalog file; defaults to the one shipped with the crate.
    #[arg(long)]
    catalog: Option<PathBuf>,
}

/// Failure bucketed by exit code.
enum CliError {
    /// Exit 2: malformed config, catalog, dataset, or arguments.
    Config(String),
    /// Exit 3: a referenced model or data file does not exist.
    Missing(String),
    /// Exit 4: the simulation itself faulted.
    Physics(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Missing(_) => 3,
            CliError::Physics(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Missing(m) | CliError::Physics(m) => m,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> CliError {
        if err.kind() == std::io::ErrorKind::NotFound {
            CliError::Missing(err.to_string())
        } else {
            CliError::Config(err.to_string())
        }
    }
}

impl From<PolicyError> for CliError {
    fn from(err: PolicyError) -> CliError {
        match err {
            PolicyError::ModelMissing { .. } => CliError::Missing(err.to_string()),
            PolicyError::Physics(_) => CliError::Physics(err.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<BenchError> for CliError {
    fn from(err: BenchError) -> CliError {
        match err {
            BenchError::Policy(inner) => inner.into(),
            BenchError::Io(inner) => inner.into(),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<LearnError> for CliError {
    fn from(err: LearnError) -> CliError {
        match err {
            LearnError::Io(inner) => inner.into(),
            other => CliError::Config(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Catalog { action } => catalog_command(action),
        Command::GenData(args) => gen_data(args),
        Command::Train(args) => train_model(args),
        Command::Run(args) => run(args),
        Command::Replay(args) => replay(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("scoopsim: {}", err.message());
            ExitCode::from(err.code())
        }
    }
}

fn load_catalog(path: Option<&Path>) -> Result<Catalog, CliError> {
    match path {
        None => Ok(Catalog::shipped()),
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            Catalog::from_json(&text).map_err(|e| CliError::Config(e.to_string()))
        }
    }
}

fn catalog_command(action: CatalogAction) -> Result<(), CliError> {
    match action {
        CatalogAction::Validate { path } => {
            let catalog = load_catalog(Some(&path))?;
            let fragile = catalog.classes.iter().filter(|c| c.is_fragile()).count();
            println!(
                "catalog ok: {} classes ({} fragile)",
                catalog.classes.len(),
                fragile
            );
            Ok(())
        }
    }
}

fn gen_data(args: GenDataArgs) -> Result<(), CliError> {
    let catalog = load_catalog(args.catalog.as_deref())?;
    let set = match args.kind {
        DataKind::Fragility => {
            let holdout: Vec<&str> = args.holdout.iter().map(String::as_str).collect();
            generate_fragility_dataset(&catalog, FRAGILITY_PER_CLASS, &holdout, args.seed)?
        }
        DataKind::Breakage => {
            generate_breakage_dataset(&catalog, BREAKAGE_ROLLOUTS, IMMINENCE_WINDOW, args.seed)?
        }
    };
    save_labeled_set(&set, &args.out)?;
    println!(
        "wrote {} frames ({} positive) to {}",
        set.len(),
        set.positives(),
        args.out.display()
    );
    Ok(())
}

fn train_model(args: TrainArgs) -> Result<(), CliError> {
    let set = load_labeled_set(&args.data)?;
    let set = augment(&set, args.augment.max(1), args.seed);
    let config = match args.role {
        ModelRole::Risk => TrainConfig::risk_default(args.seed),
        ModelRole::Failure => TrainConfig::failure_default(args.seed),
    };
    let trained = train(&set, &config)?;
    trained.model.save(&args.out)?;
    let last_loss = trained.epoch_losses.last().copied().unwrap_or(f64::NAN);
    println!(
        "trained on {} frames, final epoch loss {:.4}, saved {}",
        set.len(),
        last_loss,
        args.out.display()
    );
    Ok(())
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn run(args: RunArgs) -> Result<(), CliError> {
    let config = ExperimentConfig::load(&args.config)?;
    let catalog = load_catalog(args.catalog.as_deref())?;
    let config_dir = args.config.parent().unwrap_or(Path::new("."));
    let model_dir = match &config.model_dir {
        Some(dir) => config_dir.join(dir),
        None => config_dir.to_path_buf(),
    };
    let table = run_experiment(&config, &catalog, &model_dir)?;

    std::fs::write(&args.out, emit_table(&table, TableFormat::Csv))?;
    if args.markdown {
        print!("{}", emit_table(&table, TableFormat::Markdown));
    } else {
        println!(
            "{}: {} trials over {} cells -> {}",
            config.name,
            table.records.len(),
            table.rows.len(),
            args.out.display()
        );
    }

    for dir in [&args.trace_dir, &args.svg_dir].into_iter().flatten() {
        std::fs::create_dir_all(dir)?;
    }
    for record in &table.records {
        let stem = format!(
            "{}_{}_{}",
            sanitize(&record.setting),
            sanitize(&record.policy),
            record.seed
        );
        if let Some(dir) = &args.trace_dir {
            write_rollout_ndjson(&dir.join(format!("{stem}.ndjson")), &record.ticks)?;
            std::fs::write(
                dir.join(format!("{stem}.forces.csv")),
                log_forces(&record.ticks),
            )?;
        }
        if let Some(dir) = &args.svg_dir {
            std::fs::write(
                dir.join(format!("{stem}.svg")),
                replay_svg(&record.ticks, &catalog),
            )?;
        }
    }
    Ok(())
}

fn replay(args: ReplayArgs) -> Result<(), CliError> {
    let ticks = read_rollout_ndjson(&args.record)?;
    let catalog = load_catalog(args.catalog.as_deref())?;
    std::fs::write(&args.svg, replay_svg(&ticks, &catalog))?;
    println!("rendered {} ticks -> {}", ticks.len(), args.svg.display());
    Ok(())
}
