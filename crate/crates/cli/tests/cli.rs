use std::fs;
use std::path::Path;
use std::process::Command;

use trafficrl::ingest::load_period_dir;
use trafficrl::trainer::PeriodReport;
use trafficrl_cli::commands::{
    checkpoint_path, period_dir, report_path, CONFIG_ECHO, METRICS_CSV, TIMING_CSV,
};
use trafficrl_cli::{
    cmd_detect, cmd_evaluate, cmd_export_figures, cmd_generate, cmd_train, load_periods, CliError,
    RunConfig,
};

fn small_config(periods: usize) -> RunConfig {
    RunConfig::from_toml(&format!(
        "[run]\nseed = 11\n\n\
         [generator]\nperiods = {periods}\ninitial_nodes = 6\ngrowth_per_period = 1\nsteps_per_period = 360\n\n\
         [qnet]\nhidden = 12\n\n\
         [trainer]\nepochs = 1\nbatch_size = 32\neval_stride = 5\n"
    ))
    .unwrap()
}

fn read(path: &Path) -> Vec<u8> {
    fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for entry in walk(dir) {
        out.push((
            entry.strip_prefix(dir).unwrap().display().to_string(),
            read(&entry),
        ));
    }
    out.sort();
    out
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut files = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            files.extend(walk(&p));
        } else {
            files.push(p);
        }
    }
    files
}

#[test]
fn generate_writes_reloadable_periods() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = RunConfig::default();
    let labels = cmd_generate(&cfg, tmp.path()).unwrap();
    assert_eq!(labels, vec![2011, 2012, 2013]);
    for p in labels {
        let dir = period_dir(tmp.path(), p);
        let ds = load_period_dir(&dir, p).unwrap();
        assert_eq!(ds.period, p);
        assert!(!ds.series.is_empty());
    }
    assert_eq!(load_periods(tmp.path()).unwrap().len(), 3);
}

#[test]
fn generate_is_byte_identical_for_a_seed() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = small_config(2);
    cmd_generate(&cfg, a.path()).unwrap();
    cmd_generate(&cfg, b.path()).unwrap();
    assert_eq!(tree_bytes(a.path()), tree_bytes(b.path()));
}

#[test]
fn generate_rejects_zero_periods() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::default();
    cfg.generator.periods = 0;
    let err = cmd_generate(&cfg, tmp.path()).unwrap_err();
    assert_eq!(err.exit_code(), 1);
    assert!(RunConfig::from_toml("[generator]\nperiods = 0\n").is_err());
}

#[test]
fn missing_period_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    cmd_generate(&small_config(3), tmp.path()).unwrap();
    fs::remove_dir_all(period_dir(tmp.path(), 2012)).unwrap();
    let err = load_periods(tmp.path()).unwrap_err();
    assert!(matches!(err, CliError::Data(_)), "{err}");
    assert_eq!(err.exit_code(), 2);
    let empty = tempfile::tempdir().unwrap();
    assert_eq!(load_periods(empty.path()).unwrap_err().exit_code(), 2);
}

#[test]
fn train_writes_a_report_and_checkpoint_per_period() {
    let (data, out) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = small_config(2);
    cmd_generate(&cfg, data.path()).unwrap();
    let reports = cmd_train(&cfg, data.path(), out.path(), None).unwrap();
    assert_eq!(reports.len(), 2);
    for r in &reports {
        assert!(report_path(out.path(), r.period).is_file());
        assert!(checkpoint_path(out.path(), r.period).is_file());
        for m in r.test.iter().chain(&r.val).chain(&r.old_node_test) {
            assert!(m.metrics.mae.is_finite() && m.metrics.mae >= 0.0);
        }
        let on_disk: PeriodReport =
            serde_json::from_slice(&read(&report_path(out.path(), r.period))).unwrap();
        assert_eq!(&on_disk, r);
    }
    let reports_on_disk = walk(out.path())
        .iter()
        .filter(|p| {
            p.extension().is_some_and(|e| e == "json")
                && p.file_name()
                    .unwrap()
                    .to_str()
                    .unwrap()
                    .starts_with("report_")
        })
        .count();
    assert_eq!(reports_on_disk, 2);
}

#[test]
fn resume_reproduces_the_uninterrupted_run() {
    let data = tempfile::tempdir().unwrap();
    let cfg = small_config(3);
    cmd_generate(&cfg, data.path()).unwrap();
    let full = tempfile::tempdir().unwrap();
    cmd_train(&cfg, data.path(), full.path(), None).unwrap();

    let resumed = tempfile::tempdir().unwrap();
    let ckpt = checkpoint_path(full.path(), 2011);
    let reports = cmd_train(&cfg, data.path(), resumed.path(), Some(&ckpt)).unwrap();
    assert_eq!(
        reports.iter().map(|r| r.period).collect::<Vec<_>>(),
        vec![2012, 2013]
    );
    for p in [2012, 2013] {
        assert_eq!(
            read(&report_path(full.path(), p)),
            read(&report_path(resumed.path(), p)),
            "report {p}"
        );
        assert_eq!(
            read(&checkpoint_path(full.path(), p)),
            read(&checkpoint_path(resumed.path(), p)),
            "checkpoint {p}"
        );
    }
}

#[test]
fn corrupt_checkpoint_is_a_data_error() {
    let (data, out) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = small_config(2);
    cmd_generate(&cfg, data.path()).unwrap();
    let bad = out.path().join("bad.bin");
    fs::write(&bad, b"not a checkpoint").unwrap();
    let err = cmd_train(&cfg, data.path(), out.path(), Some(&bad)).unwrap_err();
    assert_eq!(err.exit_code(), 2, "{err}");
}

#[test]
fn config_echo_reproduces_the_run() {
    let data = tempfile::tempdir().unwrap();
    let cfg = small_config(2);
    cmd_generate(&cfg, data.path()).unwrap();
    let (first, second) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    cmd_train(&cfg, data.path(), first.path(), None).unwrap();
    let echoed = RunConfig::load(&first.path().join(CONFIG_ECHO)).unwrap();
    assert_eq!(echoed, cfg);
    cmd_train(&echoed, data.path(), second.path(), None).unwrap();
    for p in [2011, 2012] {
        assert_eq!(
            read(&report_path(first.path(), p)),
            read(&report_path(second.path(), p))
        );
    }
}

#[test]
fn export_has_one_row_per_period_horizon_metric() {
    let data = tempfile::tempdir().unwrap();
    let cfg = small_config(3);
    cmd_generate(&cfg, data.path()).unwrap();
    let out = tempfile::tempdir().unwrap();
    let reports = cmd_train(&cfg, data.path(), out.path(), None).unwrap();
    let figs = tempfile::tempdir().unwrap();
    cmd_export_figures(out.path(), figs.path()).unwrap();

    let metrics = fs::read_to_string(figs.path().join(METRICS_CSV)).unwrap();
    let mut rows = csv::Reader::from_reader(metrics.as_bytes());
    let rows: Vec<csv::StringRecord> = rows.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 3 * 2 * 4);
    for row in &rows {
        let (period, horizon): (i64, usize) = (row[0].parse().unwrap(), row[1].parse().unwrap());
        let report = reports.iter().find(|r| r.period == period).unwrap();
        let hm = report.test.iter().find(|m| m.horizon == horizon).unwrap();
        let expected = match &row[2] {
            "mae" => hm.metrics.mae,
            "rmse" => hm.metrics.rmse,
            "mape" => hm.metrics.mape,
            "class_accuracy" => hm.metrics.class_accuracy,
            other => panic!("unexpected metric {other}"),
        };
        assert_eq!(row[3].parse::<f64>().unwrap().to_bits(), expected.to_bits());
    }
    let timing = fs::read_to_string(figs.path().join(TIMING_CSV)).unwrap();
    assert_eq!(timing.lines().count(), 4);
    assert!(timing.starts_with("period,total_secs,epoch_secs,epochs\n"));

    let again = tempfile::tempdir().unwrap();
    cmd_export_figures(out.path(), again.path()).unwrap();
    assert_eq!(tree_bytes(figs.path()), tree_bytes(again.path()));
}

#[test]
fn export_without_reports_fails() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(
        cmd_export_figures(tmp.path(), tmp.path())
            .unwrap_err()
            .exit_code(),
        2
    );
}

#[test]
fn detect_and_evaluate_cover_every_period() {
    let data = tempfile::tempdir().unwrap();
    let cfg = small_config(2);
    cmd_generate(&cfg, data.path()).unwrap();
    let out = tempfile::tempdir().unwrap();
    let drift = cmd_detect(&cfg, data.path(), out.path()).unwrap();
    assert_eq!(drift.len(), 2);
    assert_eq!(drift[0].candidates.len(), 6);
    assert!(drift[1].candidates.contains(&"s0006".to_string()));
    cmd_train(&cfg, data.path(), out.path(), None).unwrap();
    let evals = cmd_evaluate(
        &cfg,
        data.path(),
        &checkpoint_path(out.path(), 2012),
        out.path(),
    )
    .unwrap();
    assert_eq!(evals.len(), 2);
    assert!(evals[0].evaluation.old_node_test.is_empty());
    assert!(!evals[1].evaluation.old_node_test.is_empty());
    assert!(out.path().join("evaluation_2012.json").is_file());
    assert!(out.path().join("drift_2012.json").is_file());
}

fn binary(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_trafficrl"))
        .args(args)
        .output()
        .unwrap()
}

#[test]
fn binary_exit_codes() {
    assert_eq!(binary(&["--help"]).status.code(), Some(0));
    assert_eq!(binary(&["--version"]).status.code(), Some(0));
    assert_eq!(binary(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(binary(&["train"]).status.code(), Some(1));

    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tmp.path().join("run.toml");
    fs::write(&cfg_path, "[trainer]\nepochz = 1\n").unwrap();
    let c = cfg_path.to_str().unwrap();
    assert_eq!(
        binary(&["--config", c, "generate", "--out-dir", "x"])
            .status
            .code(),
        Some(1)
    );

    let empty = tmp.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let e = empty.to_str().unwrap();
    let out = binary(&["train", "--data-dir", e, "--out-dir", e]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));

    fs::write(
        &cfg_path,
        "[generator]\nperiods = 1\ninitial_nodes = 4\nsteps_per_period = 300\n",
    )
    .unwrap();
    let gen = tmp.path().join("gen");
    let out = binary(&[
        "--config",
        c,
        "--threads",
        "1",
        "generate",
        "--out-dir",
        gen.to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(period_dir(&gen, 2011).join("readings.csv").is_file());
}
