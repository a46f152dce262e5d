//! The forecasting environment: state construction, flow discretization and reward.
//!
//! A state fuses a sensor's own recent readings with the mean readings of its
//! graph neighbours and its normalized degree. Its layout is
//! `[own flow | own speed | own occupancy | nbr flow | nbr speed | nbr occupancy | degree]`
//! with `W` entries per block, so the dimension is `6W + 1`.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::PeriodDataset;

pub const NUM_ACTIONS: usize = 5;
pub const DEFAULT_OCC_EPSILON: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    /// Steps of history per state.
    pub window: usize,
    /// Occupancy floor for the reciprocal reward term.
    pub occ_epsilon: f64,
    /// Percentile of training flow/speed used as the normalization scale.
    pub calibration_percentile: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            window: 12,
            occ_epsilon: DEFAULT_OCC_EPSILON,
            calibration_percentile: 99.5,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::Config("env.window must be >= 1".into()));
        }
        if !(self.occ_epsilon > 0.0 && self.occ_epsilon <= 1.0) {
            return Err(Error::Config("env.occ_epsilon must be in (0, 1]".into()));
        }
        if !(self.calibration_percentile > 0.0 && self.calibration_percentile <= 100.0) {
            return Err(Error::Config(
                "env.calibration_percentile must be in (0, 100]".into(),
            ));
        }
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        state_dim(self.window)
    }
}

pub fn state_dim(window: usize) -> usize {
    6 * window + 1
}

/// Linear-interpolation percentile of an ascending slice, `p` in `[0, 100]`.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty slice");
    let pos = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

fn sorted(mut xs: Vec<f64>) -> Vec<f64> {
    xs.sort_by(f64::total_cmp);
    xs
}

/// Feature vector fed to the Q-network. Cheap to clone.
#[derive(Clone, PartialEq)]
pub struct StateVector(Arc<[f64]>);

impl StateVector {
    pub fn new(values: Vec<f64>) -> Self {
        StateVector(values.into())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn ptr_eq(&self, other: &StateVector) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }
}

impl fmt::Debug for StateVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "StateVector(dim={})", self.0.len())
    }
}

impl From<Vec<f64>> for StateVector {
    fn from(v: Vec<f64>) -> Self {
        StateVector::new(v)
    }
}

/// A discrete action. Traffic actions are flow classes `0..=4`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ActionClass(u8);

impl ActionClass {
    pub fn new(k: usize) -> Result<Self> {
        if k < NUM_ACTIONS {
            Ok(ActionClass(k as u8))
        } else {
            Err(Error::InvalidInput(format!(
                "action class {k} outside 0..{NUM_ACTIONS}"
            )))
        }
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn all() -> impl Iterator<Item = ActionClass> {
        (0..NUM_ACTIONS as u8).map(ActionClass)
    }
}

/// Flow thresholds splitting flow values into five classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discretizer {
    edges: [f64; NUM_ACTIONS - 1],
    representatives: [f64; NUM_ACTIONS],
}

impl Discretizer {
    /// Edges at the 20/40/60/80th percentiles; representatives are per-bin medians.
    ///
    /// When heavy ties collapse two percentiles (or leave a bin empty) the
    /// percentiles are taken over the distinct flow values instead.
    pub fn fit(training_flows: &[f64]) -> Result<Self> {
        if training_flows.iter().any(|f| !f.is_finite()) {
            return Err(Error::InvalidInput("non-finite training flow".into()));
        }
        let all = sorted(training_flows.to_vec());
        let mut distinct = all.clone();
        distinct.dedup();
        if distinct.len() < NUM_ACTIONS {
            return Err(Error::InvalidInput(format!(
                "need at least {NUM_ACTIONS} distinct flow values to discretize, found {}",
                distinct.len()
            )));
        }
        Self::from_quantiles(&all, &all)
            .or_else(|| Self::from_quantiles(&distinct, &all))
            .ok_or_else(|| Error::InvalidInput("could not place five non-empty flow bins".into()))
    }

    fn from_quantiles(source: &[f64], all: &[f64]) -> Option<Self> {
        let mut edges = [0.0; NUM_ACTIONS - 1];
        for (k, e) in edges.iter_mut().enumerate() {
            *e = percentile(source, 20.0 * (k + 1) as f64);
        }
        if edges.windows(2).any(|w| w[0] >= w[1]) {
            return None;
        }
        let mut representatives = [0.0; NUM_ACTIONS];
        for (k, r) in representatives.iter_mut().enumerate() {
            let lo = if k == 0 {
                f64::NEG_INFINITY
            } else {
                edges[k - 1]
            };
            let hi = if k == NUM_ACTIONS - 1 {
                f64::INFINITY
            } else {
                edges[k]
            };
            let start = all.partition_point(|&x| x < lo);
            let end = all.partition_point(|&x| x < hi);
            if start == end {
                return None;
            }
            *r = median_sorted(&all[start..end]);
        }
        Some(Self {
            edges,
            representatives,
        })
    }

    /// Explicit edges (strictly ascending) and per-class representative flows.
    pub fn from_parts(
        edges: [f64; NUM_ACTIONS - 1],
        representatives: [f64; NUM_ACTIONS],
    ) -> Result<Self> {
        if edges.iter().chain(&representatives).any(|x| !x.is_finite())
            || edges.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::InvalidInput(
                "discretizer edges must be finite and strictly ascending".into(),
            ));
        }
        Ok(Self {
            edges,
            representatives,
        })
    }

    pub fn edges(&self) -> &[f64; NUM_ACTIONS - 1] {
        &self.edges
    }

    pub fn representatives(&self) -> &[f64; NUM_ACTIONS] {
        &self.representatives
    }

    /// Class `k` iff `flow` lies in `[edge[k-1], edge[k])`.
    pub fn classify(&self, flow: f64) -> ActionClass {
        ActionClass(self.edges.partition_point(|&e| e <= flow) as u8)
    }

    pub fn representative(&self, class: ActionClass) -> f64 {
        self.representatives[class.index()]
    }
}

fn median_sorted(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Per-period normalization scales for flow and speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub flow_scale: f64,
    pub speed_scale: f64,
}

impl Calibration {
    pub fn fit(dataset: &PeriodDataset, pct: f64) -> Self {
        let scale = |xs: Vec<f64>| {
            if xs.is_empty() {
                return 1.0;
            }
            let s = percentile(&sorted(xs), pct);
            if s > 0.0 {
                s
            } else {
                1.0
            }
        };
        Calibration {
            flow_scale: scale(dataset.training_flows()),
            speed_scale: scale(dataset.training_speeds()),
        }
    }

    pub fn flow(&self, f: f64) -> f64 {
        (f / self.flow_scale).clamp(0.0, 1.0)
    }

    pub fn speed(&self, s: f64) -> f64 {
        (s / self.speed_scale).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardWeights {
    pub lambda_p: f64,
    pub lambda_c: f64,
    pub lambda_o: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            lambda_p: 1.0,
            lambda_c: 0.1,
            lambda_o: 0.1,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<()> {
        let ws = [self.lambda_p, self.lambda_c, self.lambda_o];
        if ws.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config(
                "reward weights must be finite and >= 0".into(),
            ));
        }
        if ws.iter().all(|w| *w == 0.0) {
            return Err(Error::Config("reward weights must not all be zero".into()));
        }
        Ok(())
    }

    pub fn max_reward(&self) -> f64 {
        self.lambda_p + self.lambda_c + self.lambda_o
    }
}

/// Reward with the default occupancy floor.
pub fn compute_reward(
    pred: ActionClass,
    actual: ActionClass,
    speed_norm: f64,
    occupancy: f64,
    w: &RewardWeights,
) -> f64 {
    compute_reward_with_floor(pred, actual, speed_norm, occupancy, w, DEFAULT_OCC_EPSILON)
}

/// `λp·(1 − |pred − actual|/4) + λc·speed + λo·ε/max(occupancy, ε)`.
pub fn compute_reward_with_floor(
    pred: ActionClass,
    actual: ActionClass,
    speed_norm: f64,
    occupancy: f64,
    w: &RewardWeights,
    occ_epsilon: f64,
) -> f64 {
    let gap = pred.index().abs_diff(actual.index()) as f64;
    let r_p = 1.0 - gap / (NUM_ACTIONS - 1) as f64;
    let r_c = speed_norm.clamp(0.0, 1.0);
    let r_o = occ_epsilon / occupancy.max(occ_epsilon);
    w.lambda_p * r_p + w.lambda_c * r_c + w.lambda_o * r_o
}

/// Builds states for one period's dataset.
#[derive(Debug, Clone)]
pub struct StateBuilder<'a> {
    dataset: &'a PeriodDataset,
    calibration: Calibration,
    window: usize,
    max_degree: usize,
}

impl<'a> StateBuilder<'a> {
    pub fn new(dataset: &'a PeriodDataset, calibration: Calibration, window: usize) -> Self {
        Self {
            dataset,
            calibration,
            window,
            max_degree: dataset.snapshot.max_degree(),
        }
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn dim(&self) -> usize {
        state_dim(self.window)
    }

    pub fn dataset(&self) -> &'a PeriodDataset {
        self.dataset
    }

    pub fn calibration(&self) -> Calibration {
        self.calibration
    }

    fn check_time(&self, t: usize) -> Result<()> {
        if t < self.window {
            return Err(Error::InvalidInput(format!(
                "time index {t} is before the first full window ({})",
                self.window
            )));
        }
        if t > self.dataset.len() {
            return Err(Error::InvalidInput(format!(
                "time index {t} is past the series end ({})",
                self.dataset.len()
            )));
        }
        Ok(())
    }

    /// Normalized `[flow | speed | occupancy]` over steps `[t − W, t)`.
    pub fn own_block(&self, v: &str, t: usize) -> Result<Vec<f64>> {
        self.check_time(t)?;
        let s = self.dataset.series(v)?;
        let r = t - self.window..t;
        let cal = &self.calibration;
        let mut out = Vec::with_capacity(3 * self.window);
        out.extend(s.flow[r.clone()].iter().map(|&f| cal.flow(f)));
        out.extend(s.speed[r.clone()].iter().map(|&x| cal.speed(x)));
        out.extend(s.occupancy[r].iter().copied());
        Ok(out)
    }

    /// Element-wise mean of the neighbours' own blocks (zeros without neighbours).
    pub fn neighbor_block(&self, v: &str, t: usize) -> Result<Vec<f64>> {
        self.check_time(t)?;
        let neighbors = self.dataset.snapshot.neighbors(v)?;
        self.mean_block(neighbors, t)
    }

    fn mean_block(&self, neighbors: &BTreeSet<String>, t: usize) -> Result<Vec<f64>> {
        let mut acc = vec![0.0; 3 * self.window];
        for u in neighbors {
            let block = self.own_block(u, t)?;
            for (a, b) in acc.iter_mut().zip(block) {
                *a += b;
            }
        }
        if !neighbors.is_empty() {
            let n = neighbors.len() as f64;
            acc.iter_mut().for_each(|a| *a /= n);
        }
        Ok(acc)
    }

    pub fn degree_feature(&self, v: &str) -> Result<f64> {
        let d = self.dataset.snapshot.degree(v)?;
        Ok(if self.max_degree == 0 {
            0.0
        } else {
            d as f64 / self.max_degree as f64
        })
    }

    /// State of sensor `v` for predicting step `t`.
    pub fn state(&self, v: &str, t: usize) -> Result<StateVector> {
        let mut out = self.own_block(v, t)?;
        out.extend(self.neighbor_block(v, t)?);
        out.push(self.degree_feature(v)?);
        Ok(StateVector::new(out))
    }

    /// Same as [`state`](Self::state) but with an explicit own block.
    pub fn compose(&self, own: &[f64], neighbor: &[f64], degree: f64) -> Result<StateVector> {
        let block = 3 * self.window;
        if own.len() != block || neighbor.len() != block {
            return Err(Error::DimensionMismatch {
                expected: block,
                actual: if own.len() != block {
                    own.len()
                } else {
                    neighbor.len()
                },
            });
        }
        let mut out = Vec::with_capacity(self.dim());
        out.extend_from_slice(own);
        out.extend_from_slice(neighbor);
        out.push(degree);
        Ok(StateVector::new(out))
    }
}

/// One-shot state construction.
pub fn build_state(
    dataset: &PeriodDataset,
    v: &str,
    t: usize,
    window: usize,
    calibration: Calibration,
) -> Result<StateVector> {
    StateBuilder::new(dataset, calibration, window).state(v, t)
}
