//! Readings CSV: `timestamp,sensor_id,flow,speed,occupancy`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use chrono::NaiveDateTime;

use super::{step, PeriodDataset, SensorSeries, TIMESTAMP_FORMAT};
use crate::error::{Error, Result};
use crate::graph::{csv_error, expect_header, GraphSnapshot};

pub const READINGS_FILE: &str = "readings.csv";
pub const ADJACENCY_FILE: &str = "adjacency.csv";
pub const ROSTER_FILE: &str = "nodes.csv";

const HEADER: [&str; 5] = ["timestamp", "sensor_id", "flow", "speed", "occupancy"];

struct Row {
    line: u64,
    ts: NaiveDateTime,
    flow: f64,
    speed: f64,
    occupancy: f64,
}

fn parse_number(path: &Path, line: u64, field: &str, raw: &str) -> Result<f64> {
    let v: f64 = raw
        .trim()
        .parse()
        .map_err(|_| Error::parse(path, line, format!("bad {field} value `{raw}`")))?;
    if !v.is_finite() {
        return Err(Error::parse(
            path,
            line,
            format!("non-finite {field} `{raw}`"),
        ));
    }
    Ok(v)
}

/// Loads one period from a readings CSV, an adjacency CSV and an optional node roster.
pub fn load_period(
    readings: &Path,
    adjacency: &Path,
    roster: Option<&Path>,
    period: i64,
) -> Result<PeriodDataset> {
    let snapshot = GraphSnapshot::read_csv(period, adjacency, roster)?;

    let mut rdr = csv::Reader::from_path(readings).map_err(|e| csv_error(readings, e))?;
    expect_header(readings, &mut rdr, &HEADER)?;
    let mut rows: BTreeMap<String, Vec<Row>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(readings, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != HEADER.len() {
            return Err(Error::parse(readings, line, "expected 5 fields"));
        }
        let ts = NaiveDateTime::parse_from_str(rec[0].trim(), TIMESTAMP_FORMAT).map_err(|e| {
            Error::parse(readings, line, format!("bad timestamp `{}`: {e}", &rec[0]))
        })?;
        let id = rec[1].trim();
        if !snapshot.contains(id) {
            return Err(Error::parse(
                readings,
                line,
                format!("sensor `{id}` is not in the network"),
            ));
        }
        let flow = parse_number(readings, line, "flow", &rec[2])?;
        let speed = parse_number(readings, line, "speed", &rec[3])?;
        let occupancy = parse_number(readings, line, "occupancy", &rec[4])?;
        if flow < 0.0 {
            return Err(Error::parse(
                readings,
                line,
                format!("negative flow {flow}"),
            ));
        }
        if speed < 0.0 {
            return Err(Error::parse(
                readings,
                line,
                format!("negative speed {speed}"),
            ));
        }
        if !(0.0..=1.0).contains(&occupancy) {
            return Err(Error::parse(
                readings,
                line,
                format!("occupancy {occupancy} outside [0, 1]"),
            ));
        }
        rows.entry(id.to_string()).or_default().push(Row {
            line,
            ts,
            flow,
            speed,
            occupancy,
        });
    }
    if rows.is_empty() {
        return Err(Error::parse(readings, 1, "no readings"));
    }

    let mut series = BTreeMap::new();
    let mut axis: Option<(String, NaiveDateTime, usize)> = None;
    for (id, rows) in rows {
        for w in rows.windows(2) {
            if w[1].ts - w[0].ts != step() {
                return Err(Error::parse(
                    readings,
                    w[1].line,
                    format!(
                        "sensor `{id}`: expected {} after {}, found {}",
                        w[0].ts + step(),
                        w[0].ts,
                        w[1].ts
                    ),
                ));
            }
        }
        let (start, len) = (rows[0].ts, rows.len());
        match &axis {
            None => axis = Some((id.clone(), start, len)),
            Some((first, s0, n0)) if (*s0, *n0) != (start, len) => {
                return Err(Error::parse(
                    readings,
                    rows[0].line,
                    format!(
                        "sensor `{id}` covers {len} steps from {start}; `{first}` covers {n0} from {s0}"
                    ),
                ));
            }
            Some(_) => {}
        }
        let s = SensorSeries {
            sensor_id: id.clone(),
            timestamps: rows.iter().map(|r| r.ts).collect(),
            flow: rows.iter().map(|r| r.flow).collect(),
            speed: rows.iter().map(|r| r.speed).collect(),
            occupancy: rows.iter().map(|r| r.occupancy).collect(),
        };
        series.insert(id, s);
    }
    PeriodDataset::new(snapshot, series).map_err(|e| match e {
        Error::InvalidInput(msg) => Error::parse(readings, 0, msg),
        other => other,
    })
}

/// Loads `readings.csv`, `adjacency.csv` and (if present) `nodes.csv` from `dir`.
pub fn load_period_dir(dir: &Path, period: i64) -> Result<PeriodDataset> {
    let roster = dir.join(ROSTER_FILE);
    load_period(
        &dir.join(READINGS_FILE),
        &dir.join(ADJACENCY_FILE),
        roster.exists().then_some(roster.as_path()),
        period,
    )
}

/// Writes the three period files into `dir`, creating it if needed.
pub fn write_period(dataset: &PeriodDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    dataset
        .snapshot
        .write_csv(&dir.join(ADJACENCY_FILE), &dir.join(ROSTER_FILE))?;

    let mut out = HEADER.join(",");
    out.push('\n');
    let n = dataset.len();
    for t in 0..n {
        for s in dataset.series.values() {
            // `{}` on f64 prints the shortest representation that parses back exactly.
            writeln!(
                out,
                "{},{},{},{},{}",
                s.timestamps[t].format(TIMESTAMP_FORMAT),
                s.sensor_id,
                s.flow[t],
                s.speed[t],
                s.occupancy[t]
            )
            .expect("write to string");
        }
    }
    let path = dir.join(READINGS_FILE);
    fs::write(&path, out).map_err(|e| Error::io(&path, e))
}
