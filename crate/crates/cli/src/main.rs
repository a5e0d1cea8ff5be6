use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use erpcal_cli::experiment::{parse_channel_order, synth_spec};
use erpcal_cli::{cmd_attribute, cmd_calibrate, cmd_gen, cmd_report, cmd_train, CliError, CliResult, ExperimentConfig, RunOptions};

/// Two-phase ERP cybersickness classification: LOSO training, per-subject
/// calibration and attribution.
#[derive(Parser, Debug)]
#[command(name = "erpcal", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct Common {
    /// Experiment config file (`key = value` lines).
    #[arg(long)]
    config: PathBuf,
    /// Output root; overrides `out` in the config.
    #[arg(long, env = "ERPCAL_OUT")]
    out: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
    /// Comma-separated test-subject ids to run.
    #[arg(long, value_delimiter = ',')]
    folds: Option<Vec<u32>>,
    /// Worker threads for folds and subjects.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Comma-separated channel names giving the input channel order.
    #[arg(long)]
    channel_order: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset from the `synth.*` keys of a config.
    Gen {
        #[arg(long)]
        config: PathBuf,
        /// Dataset file to write; defaults to `$ERPCAL_OUT/data.erps`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Phase 1: train one model per seed and LOSO fold.
    Train(Common),
    /// Phase 2: calibrate each phase-1 model on its test subject.
    Calibrate(Common),
    /// Integrated gradients (and GradCAM for EEGNet) on calibrated models.
    Attribute(Common),
    /// Aggregate calibration results into report.csv and report.txt.
    Report {
        /// Directory receiving the report; also the default run.
        #[arg(long, env = "ERPCAL_OUT")]
        out: PathBuf,
        /// Run directories, one per model; defaults to `--out`.
        runs: Vec<PathBuf>,
    },
}

fn options(c: &Common, cfg: &ExperimentConfig) -> CliResult<RunOptions> {
    let out = c
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .ok_or_else(|| CliError::Config("no output directory: pass --out, set ERPCAL_OUT or `out` in the config".into()))?;
    if c.jobs == 0 {
        return Err(CliError::Config("--jobs must be at least 1".into()));
    }
    Ok(RunOptions {
        out,
        force: c.force,
        folds: c.folds.clone(),
        jobs: c.jobs,
        channel_order: c.channel_order.as_deref().map(parse_channel_order).transpose()?,
    })
}

fn pipeline(c: &Common, step: fn(&mut ExperimentConfig, &RunOptions) -> CliResult<()>) -> CliResult<()> {
    let mut cfg = ExperimentConfig::read(&c.config)?;
    let opts = options(c, &cfg)?;
    step(&mut cfg, &opts)
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Gen { config, out, force } => {
            let text = std::fs::read_to_string(&config).map_err(|e| CliError::Config(format!("{}: {e}", config.display())))?;
            let spec = synth_spec(&text)?;
            let out = out
                .or_else(|| std::env::var_os("ERPCAL_OUT").map(|d| PathBuf::from(d).join("data.erps")))
                .ok_or_else(|| CliError::Config("no output file: pass --out or set ERPCAL_OUT".into()))?;
            cmd_gen(&spec, &out, force)?;
            eprintln!("wrote {}", out.display());
            Ok(())
        }
        Command::Train(c) => pipeline(&c, cmd_train),
        Command::Calibrate(c) => pipeline(&c, cmd_calibrate),
        Command::Attribute(c) => pipeline(&c, cmd_attribute),
        Command::Report { out, runs } => {
            let runs = if runs.is_empty() { vec![out.clone()] } else { runs };
            let report = cmd_report(&runs, &out)?;
            print!("{}", report.to_text());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("erpcal: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
