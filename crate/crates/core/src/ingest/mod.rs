//! Sensor time series, period datasets, CSV loading, and a synthetic stream generator.

mod readings;
mod synthetic;

use std::collections::BTreeMap;
use std::ops::Range;

use chrono::{NaiveDateTime, TimeDelta};

use crate::error::{Error, Result};
use crate::graph::{GraphSnapshot, NodeId};

pub use readings::{
    load_period, load_period_dir, write_period, ADJACENCY_FILE, READINGS_FILE, ROSTER_FILE,
};
pub use synthetic::{
    generate_synthetic, node_ids_through, DiurnalProfile, DriftInjection, GeneratorConfig,
    STEPS_PER_DAY,
};

/// Fixed aggregation interval of every series.
pub const STEP_MINUTES: i64 = 5;
pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

pub fn step() -> TimeDelta {
    TimeDelta::minutes(STEP_MINUTES)
}

/// Per-sensor readings at 5-minute resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorSeries {
    pub sensor_id: NodeId,
    pub timestamps: Vec<NaiveDateTime>,
    /// Vehicles per interval.
    pub flow: Vec<f64>,
    /// Miles per hour.
    pub speed: Vec<f64>,
    /// Fraction of time the detector is occupied.
    pub occupancy: Vec<f64>,
}

impl SensorSeries {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.timestamps.len();
        if self.flow.len() != n || self.speed.len() != n || self.occupancy.len() != n {
            return Err(Error::InvalidInput(format!(
                "sensor `{}`: channel lengths differ from timestamp count {n}",
                self.sensor_id
            )));
        }
        for w in self.timestamps.windows(2) {
            if w[1] - w[0] != step() {
                return Err(Error::InvalidInput(format!(
                    "sensor `{}`: non-uniform step at {}",
                    self.sensor_id, w[1]
                )));
            }
        }
        for i in 0..n {
            let (f, s, o) = (self.flow[i], self.speed[i], self.occupancy[i]);
            if !(f.is_finite() && f >= 0.0 && s.is_finite() && s >= 0.0 && (0.0..=1.0).contains(&o))
            {
                return Err(Error::InvalidInput(format!(
                    "sensor `{}`: reading {i} out of range (flow {f}, speed {s}, occupancy {o})",
                    self.sensor_id
                )));
            }
        }
        Ok(())
    }
}

/// Contiguous train/validation/test index ranges in a 6:2:2 ratio.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl Splits {
    /// Train takes `floor(0.6 * len)`; the rest is halved between validation
    /// and test, with the odd index going to test.
    pub fn for_len(len: usize) -> Result<Self> {
        if len < 5 {
            return Err(Error::InvalidInput(format!(
                "series of length {len} is too short to split (need >= 5)"
            )));
        }
        let train = len * 3 / 5;
        let val = (len - train) / 2;
        Ok(Splits {
            train: 0..train,
            val: train..train + val,
            test: train + val..len,
        })
    }

    pub fn len(&self) -> usize {
        self.test.end
    }

    pub fn is_empty(&self) -> bool {
        self.test.end == 0
    }
}

/// One period's network and readings.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodDataset {
    pub period: i64,
    pub snapshot: GraphSnapshot,
    pub series: BTreeMap<NodeId, SensorSeries>,
    pub splits: Splits,
}

impl PeriodDataset {
    /// Validates every invariant and computes the splits.
    ///
    /// All series must share one time axis so that a single split applies.
    pub fn new(snapshot: GraphSnapshot, series: BTreeMap<NodeId, SensorSeries>) -> Result<Self> {
        let first = series
            .values()
            .next()
            .ok_or_else(|| Error::InvalidInput("dataset has no sensor series".into()))?;
        let axis = &first.timestamps;
        for (id, s) in &series {
            if id != &s.sensor_id {
                return Err(Error::InvalidInput(format!(
                    "series keyed `{id}` carries sensor id `{}`",
                    s.sensor_id
                )));
            }
            if !snapshot.contains(id) {
                return Err(Error::UnknownNode(id.clone()));
            }
            s.validate()?;
            if &s.timestamps != axis {
                return Err(Error::InvalidInput(format!(
                    "sensor `{id}` does not share the time axis of `{}`",
                    first.sensor_id
                )));
            }
        }
        let splits = Splits::for_len(axis.len())?;
        Ok(Self {
            period: snapshot.period(),
            snapshot,
            series,
            splits,
        })
    }

    pub fn len(&self) -> usize {
        self.splits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.splits.is_empty()
    }

    pub fn series(&self, v: &str) -> Result<&SensorSeries> {
        self.series
            .get(v)
            .ok_or_else(|| Error::UnknownNode(v.to_string()))
    }

    pub fn sensor_ids(&self) -> impl Iterator<Item = &NodeId> {
        self.series.keys()
    }

    /// All training-split flows, pooled over sensors in id order.
    pub fn training_flows(&self) -> Vec<f64> {
        self.series
            .values()
            .flat_map(|s| s.flow[self.splits.train.clone()].iter().copied())
            .collect()
    }

    pub fn training_speeds(&self) -> Vec<f64> {
        self.series
            .values()
            .flat_map(|s| s.speed[self.splits.train.clone()].iter().copied())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn one_day_split() {
        let s = Splits::for_len(288).unwrap();
        assert_eq!(s.train, 0..172);
        assert_eq!(s.val.len(), 58);
        assert_eq!(s.test.len(), 58);
    }

    #[test]
    fn too_short_to_split() {
        assert!(Splits::for_len(4).is_err());
        let s = Splits::for_len(5).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (3, 1, 1));
    }

    proptest! {
        #[test]
        fn splits_are_six_two_two(len in 5usize..100_000) {
            let s = Splits::for_len(len).unwrap();
            prop_assert_eq!(s.train.start, 0);
            prop_assert_eq!(s.train.end, s.val.start);
            prop_assert_eq!(s.val.end, s.test.start);
            prop_assert_eq!(s.test.end, len);
            let t = len as f64;
            prop_assert!((s.train.len() as f64 - 0.6 * t).abs() <= 1.0);
            prop_assert!((s.val.len() as f64 - 0.2 * t).abs() <= 1.0);
            prop_assert!((s.test.len() as f64 - 0.2 * t).abs() <= 1.0);
        }
    }
}
