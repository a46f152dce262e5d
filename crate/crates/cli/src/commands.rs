//! The subcommands, callable as library functions.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use trafficrl::checkpoint::Checkpoint;
use trafficrl::drift::{detect, DriftReport};
use trafficrl::graph::NodeId;
use trafficrl::ingest::{generate_synthetic, load_period_dir, write_period, PeriodDataset};
use trafficrl::metrics::MetricSet;
use trafficrl::trainer::{evaluate_period, PeriodContext, PeriodReport, PeriodTimings, Trainer};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub const CONFIG_ECHO: &str = "config.toml";
pub const METRICS_CSV: &str = "metrics.csv";
pub const TIMING_CSV: &str = "timing.csv";

pub fn period_dir(data_dir: &Path, period: i64) -> PathBuf {
    data_dir.join(format!("period_{period}"))
}

pub fn report_path(dir: &Path, period: i64) -> PathBuf {
    dir.join(format!("report_{period}.json"))
}

pub fn timings_path(dir: &Path, period: i64) -> PathBuf {
    dir.join(format!("timings_{period}.json"))
}

pub fn checkpoint_path(dir: &Path, period: i64) -> PathBuf {
    dir.join(format!("checkpoint_{period}.bin"))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    text.push('\n');
    write_file(path, &text)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Files named `<prefix><label><suffix>` in `dir`, as sorted `(label, path)` pairs.
fn labelled_entries(dir: &Path, prefix: &str, suffix: &str) -> Result<Vec<(i64, PathBuf)>> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| CliError::io(dir, e))?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        let label = name
            .strip_prefix(prefix)
            .and_then(|rest| rest.strip_suffix(suffix))
            .and_then(|l| l.parse::<i64>().ok());
        if let Some(label) = label {
            out.push((label, entry.path()));
        }
    }
    out.sort();
    Ok(out)
}

/// Writes `period_<label>/` directories of synthetic readings; returns their labels.
pub fn cmd_generate(cfg: &RunConfig, out_dir: &Path) -> Result<Vec<i64>> {
    cfg.generator
        .validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let datasets = generate_synthetic(&cfg.generator, cfg.seed())?;
    create_dir(out_dir)?;
    for ds in &datasets {
        write_period(ds, &period_dir(out_dir, ds.period))?;
    }
    Ok(datasets.iter().map(|d| d.period).collect())
}

/// Loads every `period_<label>/` directory; labels must be consecutive.
pub fn load_periods(data_dir: &Path) -> Result<Vec<PeriodDataset>> {
    if !data_dir.is_dir() {
        return Err(CliError::Data(format!(
            "{} is not a directory",
            data_dir.display()
        )));
    }
    let dirs: Vec<_> = labelled_entries(data_dir, "period_", "")?
        .into_iter()
        .filter(|(_, p)| p.is_dir())
        .collect();
    if dirs.is_empty() {
        return Err(CliError::Data(format!(
            "no period_<label> directories in {}",
            data_dir.display()
        )));
    }
    for pair in dirs.windows(2) {
        if pair[1].0 != pair[0].0 + 1 {
            return Err(CliError::Data(format!(
                "missing period {} in {}",
                pair[0].0 + 1,
                data_dir.display()
            )));
        }
    }
    dirs.iter()
        .map(|(label, dir)| Ok(load_period_dir(dir, *label)?))
        .collect()
}

/// Runs every period in `data_dir`, writing a report, a timing record and a checkpoint for each.
///
/// With `resume_from`, training continues after the checkpoint's period and
/// earlier periods are skipped.
pub fn cmd_train(
    cfg: &RunConfig,
    data_dir: &Path,
    out_dir: &Path,
    resume_from: Option<&Path>,
) -> Result<Vec<PeriodReport>> {
    cfg.validate()?;
    let datasets = load_periods(data_dir)?;
    let pipeline = cfg.pipeline();
    let (mut trainer, start) = match resume_from {
        None => (Trainer::new(pipeline, cfg.seed())?, 0),
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            let done = ckpt.period;
            let pos = datasets
                .iter()
                .position(|d| d.period == done)
                .ok_or_else(|| {
                    CliError::Data(format!(
                        "checkpoint period {done} is not in {}",
                        data_dir.display()
                    ))
                })?;
            (
                Trainer::from_checkpoint(pipeline, cfg.seed(), ckpt)?,
                pos + 1,
            )
        }
    };
    create_dir(out_dir)?;
    write_file(&out_dir.join(CONFIG_ECHO), &cfg.to_toml()?)?;
    let mut reports = Vec::new();
    for i in start..datasets.len() {
        let prev = i.checked_sub(1).map(|j| &datasets[j]);
        let curr = &datasets[i];
        let (report, timings) = trainer.run_period(prev, curr)?;
        write_json(&report_path(out_dir, curr.period), &report)?;
        write_json(&timings_path(out_dir, curr.period), &timings)?;
        trainer
            .checkpoint()?
            .save(&checkpoint_path(out_dir, curr.period))?;
        reports.push(report);
    }
    Ok(reports)
}

/// Metrics of a checkpoint's network on one period.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub period: i64,
    pub checkpoint_period: i64,
    #[serde(flatten)]
    pub evaluation: trafficrl::trainer::PeriodEvaluation,
}

/// Evaluates the checkpoint's network on every period in `data_dir`.
pub fn cmd_evaluate(
    cfg: &RunConfig,
    data_dir: &Path,
    checkpoint: &Path,
    out_dir: &Path,
) -> Result<Vec<EvaluationReport>> {
    cfg.validate()?;
    let datasets = load_periods(data_dir)?;
    let ckpt = Checkpoint::load(checkpoint)?;
    let pipeline = cfg.pipeline();
    create_dir(out_dir)?;
    let mut out = Vec::new();
    for (i, ds) in datasets.iter().enumerate() {
        let ctx = PeriodContext::fit(ds, &pipeline.env, &pipeline.reward)?;
        let old: BTreeSet<NodeId> = match i.checked_sub(1) {
            Some(j) => datasets[j].snapshot.nodes().clone(),
            None => BTreeSet::new(),
        };
        let evaluation = evaluate_period(&ckpt.agent.net, &ctx, &pipeline.trainer, &old)?;
        let report = EvaluationReport {
            period: ds.period,
            checkpoint_period: ckpt.period,
            evaluation,
        };
        write_json(
            &out_dir.join(format!("evaluation_{}.json", ds.period)),
            &report,
        )?;
        out.push(report);
    }
    Ok(out)
}

/// Drift scores and candidates for every period in `data_dir`.
pub fn cmd_detect(cfg: &RunConfig, data_dir: &Path, out_dir: &Path) -> Result<Vec<DriftReport>> {
    cfg.validate()?;
    let datasets = load_periods(data_dir)?;
    create_dir(out_dir)?;
    let mut out = Vec::new();
    for (i, ds) in datasets.iter().enumerate() {
        let report = match i.checked_sub(1) {
            Some(j) => detect(&datasets[j], ds, &cfg.drift)?,
            None => DriftReport::bootstrap(ds),
        };
        write_json(&out_dir.join(format!("drift_{}.json", ds.period)), &report)?;
        out.push(report);
    }
    Ok(out)
}

/// Writes `metrics.csv` (test split, one row per period, horizon and metric)
/// and `timing.csv` (total and mean per-epoch seconds per period).
pub fn cmd_export_figures(report_dir: &Path, out_dir: &Path) -> Result<()> {
    let reports = labelled_entries(report_dir, "report_", ".json")?;
    if reports.is_empty() {
        return Err(CliError::Data(format!(
            "no report_<period>.json in {}",
            report_dir.display()
        )));
    }
    let mut metrics = String::from("period,horizon,metric,value\n");
    let mut timing = String::from("period,total_secs,epoch_secs,epochs\n");
    for (label, path) in &reports {
        let report: PeriodReport = read_json(path)?;
        if report.period != *label {
            return Err(CliError::Data(format!(
                "{} holds period {}",
                path.display(),
                report.period
            )));
        }
        for hm in &report.test {
            for (name, value) in MetricSet::NAMES.iter().zip(hm.metrics.values()) {
                writeln!(metrics, "{},{},{name},{value}", report.period, hm.horizon)
                    .expect("write to string");
            }
        }
        let t: PeriodTimings = read_json(&timings_path(report_dir, *label))?;
        writeln!(
            timing,
            "{},{},{},{}",
            t.period,
            t.total_secs,
            t.mean_epoch_secs(),
            t.epoch_secs.len()
        )
        .expect("write to string");
    }
    create_dir(out_dir)?;
    write_file(&out_dir.join(METRICS_CSV), &metrics)?;
    write_file(&out_dir.join(TIMING_CSV), &timing)
}
