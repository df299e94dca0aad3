use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use locrand_cli::pipeline::{self, hex_digest, load_panel, RunOptions, Stages};
use locrand_cli::{CliError, CliResult, RunConfig};
use locrand_core::data::{recenter, split_window};
use locrand_core::Window;
use serde_json::json;

/// Environment variable naming the output directory when `--out` is absent.
const OUT_ENV: &str = "LOCRAND_OUT";
const DEFAULT_OUT: &str = "locrand-out";

#[derive(Debug, Parser)]
#[command(name = "locrand", version, about = "Local-randomization RD analysis")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, env = OUT_ENV)]
    out: Option<PathBuf>,
    /// Replace existing output files.
    #[arg(long, global = true)]
    force: bool,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic panel (settings from the config's [synth] table).
    Synth {
        /// Target CSV; defaults to panel.csv in the output directory.
        #[arg(long)]
        file: Option<PathBuf>,
    },
    /// Load and validate the panel without writing anything.
    Ingest,
    /// Covariate-balance window selection.
    Winselect,
    /// Randomization inference per outcome.
    Randinf,
    /// p-value surfaces over windows and effects.
    Sensitivity,
    /// p-value bounds under biased assignment.
    Rbounds,
    /// Every stage, end to end.
    Pipeline,
}

fn load_config(cli: &Cli) -> CliResult<RunConfig> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| CliError::Config("--config <path> is required for this command".into()))?;
    let mut config = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn out_dir(cli: &Cli, config: Option<&RunConfig>) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| config.and_then(|c| c.output_dir.clone()))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn print_json(value: &impl serde::Serialize) {
    println!(
        "{}",
        serde_json::to_string_pretty(value).expect("serializable")
    );
}

fn synth(cli: &Cli, file: Option<&Path>) -> CliResult<()> {
    let config = match &cli.config {
        Some(_) => Some(load_config(cli)?),
        None => None,
    };
    let mut spec = config
        .as_ref()
        .and_then(|c| c.synth.clone())
        .unwrap_or_default();
    if let Some(seed) = cli.seed {
        spec.seed = seed;
    }
    let path = match file {
        Some(f) => f.to_path_buf(),
        None => out_dir(cli, config.as_ref()).join("panel.csv"),
    };
    if path.exists() && !cli.force {
        return Err(CliError::Overwrite(path));
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| CliError::Write {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    let records = locrand_cli::generate_synthetic(&spec, &path)?;
    let bytes = std::fs::read(&path).map_err(|source| CliError::Write {
        path: path.clone(),
        source,
    })?;
    print_json(&json!({
        "file": path.display().to_string(),
        "rows": records.len(),
        "sha256": hex_digest(&bytes),
        "seed": spec.seed,
    }));
    Ok(())
}

fn ingest(cli: &Cli) -> CliResult<()> {
    let config = load_config(cli)?;
    let panel = load_panel(&config)?;
    let mut units: Vec<&str> = panel.records.iter().map(|r| r.unit_id.as_str()).collect();
    units.sort_unstable();
    units.dedup();
    let years = panel.records.iter().map(|r| r.year);
    let (first, last) = years.fold((i32::MAX, i32::MIN), |a, y| (a.0.min(y), a.1.max(y)));
    let mut outcomes = Vec::new();
    for name in &config.outcomes {
        let ds = recenter(&panel.records, config.cutoff_year, name, &config.covariates)?;
        let all = Window::new(f64::MIN, f64::MAX)?;
        let split = split_window(&ds, &all);
        outcomes.push(json!({
            "name": name,
            "n_control": split.control.len(),
            "n_treated": split.treated.len(),
        }));
    }
    print_json(&json!({
        "data_path": config.data_path.display().to_string(),
        "sha256": panel.sha256,
        "rows": panel.records.len(),
        "units": units.len(),
        "first_year": first,
        "last_year": last,
        "cutoff_year": config.cutoff_year,
        "outcomes": outcomes,
        "covariates": config.covariates,
    }));
    Ok(())
}

fn analysis(cli: &Cli, stages: Stages) -> CliResult<()> {
    let config = load_config(cli)?;
    let options = RunOptions {
        out_dir: out_dir(cli, Some(&config)),
        force: cli.force,
    };
    let report = pipeline::run(&config, stages, &options)?;
    log::info!(
        "wrote {} files to {}",
        report.files.len(),
        report.out_dir.display()
    );
    print_json(&report.summary);
    Ok(())
}

fn dispatch(cli: &Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    }
    let only = |f: fn(&mut Stages)| {
        let mut s = Stages::NONE;
        f(&mut s);
        s
    };
    match &cli.command {
        Command::Synth { file } => synth(cli, file.as_deref()),
        Command::Ingest => ingest(cli),
        Command::Winselect => analysis(cli, only(|s| s.scan = true)),
        Command::Randinf => analysis(cli, only(|s| s.inference = true)),
        Command::Sensitivity => analysis(cli, only(|s| s.sensitivity = true)),
        Command::Rbounds => analysis(cli, only(|s| s.rbounds = true)),
        Command::Pipeline => analysis(cli, Stages::ALL),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
