use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use trafficrl_cli::{
    cmd_detect, cmd_evaluate, cmd_export_figures, cmd_generate, cmd_train, CliError, Result,
    RunConfig,
};

#[derive(Debug, Parser)]
#[command(
    name = "trafficrl",
    version,
    about = "Continual deep Q-learning for streaming traffic forecasting"
)]
struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding `[run] seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Worker threads for the parallel stages.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic period stream to the output directory.
    Generate,
    /// Train over every period in the data directory.
    Train {
        /// Continue after the period stored in this checkpoint.
        #[arg(long)]
        resume_from: Option<PathBuf>,
    },
    /// Score a checkpoint on every period in the data directory.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Write drift scores and candidates for every period.
    Detect,
    /// Turn training reports into CSV tables.
    ExportFigures {
        /// Directory holding the reports; defaults to the output directory.
        #[arg(long)]
        report_dir: Option<PathBuf>,
    },
}

fn required<'a>(
    flag: &'a Option<PathBuf>,
    fallback: &'a Option<PathBuf>,
    name: &str,
) -> Result<&'a Path> {
    flag.as_deref()
        .or(fallback.as_deref())
        .ok_or_else(|| CliError::Usage(format!("--{name} is required (or set it under [run])")))
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.run.seed = seed;
    }
    if let Some(threads) = cli.threads {
        cfg.run.threads = Some(threads);
    }
    cfg.validate()?;
    if let Some(threads) = cfg.run.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Internal(e.to_string()))?;
    }
    let out_dir = required(&cli.out_dir, &cfg.run.out_dir, "out-dir");
    match &cli.command {
        Command::Generate => {
            let labels = cmd_generate(&cfg, out_dir?)?;
            eprintln!("wrote {} periods", labels.len());
        }
        Command::Train { resume_from } => {
            let data_dir = required(&cli.data_dir, &cfg.run.data_dir, "data-dir")?;
            for r in cmd_train(&cfg, data_dir, out_dir?, resume_from.as_deref())? {
                let mae: Vec<String> = r
                    .test
                    .iter()
                    .map(|m| format!("h{} {:.3}", m.horizon, m.metrics.mae))
                    .collect();
                eprintln!(
                    "period {}: {} candidates, {} updates, test MAE {}",
                    r.period,
                    r.candidates.len(),
                    r.updates,
                    mae.join(", ")
                );
            }
        }
        Command::Evaluate { checkpoint } => {
            let data_dir = required(&cli.data_dir, &cfg.run.data_dir, "data-dir")?;
            let reports = cmd_evaluate(&cfg, data_dir, checkpoint, out_dir?)?;
            eprintln!("evaluated {} periods", reports.len());
        }
        Command::Detect => {
            let data_dir = required(&cli.data_dir, &cfg.run.data_dir, "data-dir")?;
            for r in cmd_detect(&cfg, data_dir, out_dir?)? {
                eprintln!("period {}: {} candidates", r.period, r.candidates.len());
            }
        }
        Command::ExportFigures { report_dir } => {
            let out = out_dir?;
            cmd_export_figures(report_dir.as_deref().unwrap_or(out), out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
