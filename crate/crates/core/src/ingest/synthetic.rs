//! Seeded synthetic streaming datasets with a growing network and planted drift.
//!
//! Flow follows a per-node diurnal sinusoid plus Gaussian noise. Speed falls
//! and occupancy rises with flow. Drifted nodes add a constant offset to their
//! flow from the drift period onward.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;

use chrono::{NaiveDateTime, TimeDelta};
use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{step, PeriodDataset, SensorSeries, TIMESTAMP_FORMAT};
use crate::error::{Error, Result};
use crate::graph::{Edge, GraphDelta, GraphSnapshot, NodeId};
use crate::seed::derive_rng;

/// Steps in one day at 5-minute resolution.
pub const STEPS_PER_DAY: usize = 288;
const FREE_FLOW_SPEED: f64 = 65.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftInjection {
    pub node: NodeId,
    /// Period label at which the shifted profile starts.
    pub period: i64,
    /// Additive flow offset (vehicles per interval).
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub periods: usize,
    pub first_period: i64,
    pub initial_nodes: usize,
    pub growth_per_period: usize,
    /// Edges each node attaches to earlier nodes when it joins.
    pub edges_per_node: usize,
    pub steps_per_period: usize,
    /// Start of the first period; later periods start 364 days apart.
    pub start: String,
    pub profile_peak: f64,
    pub profile_base: f64,
    /// Per-node flow scale is drawn from `1 ± node_heterogeneity`.
    pub node_heterogeneity: f64,
    /// Per-node phase offset is drawn from `± phase_jitter` steps.
    pub phase_jitter: f64,
    /// Extra flow scale for nodes that join after the first period.
    pub new_node_scale: f64,
    pub noise_sigma: f64,
    pub drift: Vec<DriftInjection>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            periods: 3,
            first_period: 2011,
            initial_nodes: 20,
            growth_per_period: 2,
            edges_per_node: 2,
            steps_per_period: 2016,
            start: "2011-01-03T00:00:00".into(),
            profile_peak: 400.0,
            profile_base: 40.0,
            node_heterogeneity: 0.2,
            phase_jitter: 12.0,
            new_node_scale: 1.0,
            noise_sigma: 10.0,
            drift: Vec::new(),
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("generator: {m}")));
        if self.periods == 0 {
            return bad("periods must be >= 1");
        }
        if self.initial_nodes == 0 {
            return bad("initial_nodes must be >= 1");
        }
        if self.steps_per_period < 5 {
            return bad("steps_per_period must be >= 5");
        }
        if !(self.profile_base >= 0.0 && self.profile_peak >= self.profile_base) {
            return bad("need 0 <= profile_base <= profile_peak");
        }
        if !(0.0..1.0).contains(&self.node_heterogeneity) {
            return bad("node_heterogeneity must be in [0, 1)");
        }
        if !(self.noise_sigma >= 0.0 && self.phase_jitter >= 0.0 && self.new_node_scale > 0.0) {
            return bad("noise_sigma and phase_jitter must be >= 0, new_node_scale > 0");
        }
        NaiveDateTime::parse_from_str(&self.start, TIMESTAMP_FORMAT)
            .map_err(|e| Error::Config(format!("generator.start `{}`: {e}", self.start)))?;
        Ok(())
    }

    fn node_id(index: usize) -> NodeId {
        format!("s{index:04}")
    }
}

/// Noise-free flow profile of one node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiurnalProfile {
    pub base: f64,
    pub peak: f64,
    pub scale: f64,
    pub phase: f64,
}

impl DiurnalProfile {
    /// Profile value at `step` steps past midnight of day zero.
    pub fn flow_at(&self, step: usize) -> f64 {
        let angle = 2.0 * PI * (step as f64 + self.phase) / STEPS_PER_DAY as f64;
        self.scale * (self.base + (self.peak - self.base) * 0.5 * (1.0 - angle.cos()))
    }
}

struct NodeParams {
    profile: DiurnalProfile,
}

/// Generates `cfg.periods` consecutive period datasets. Pure in `(cfg, seed)`.
pub fn generate_synthetic(cfg: &GeneratorConfig, seed: u64) -> Result<Vec<PeriodDataset>> {
    cfg.validate()?;
    let start = NaiveDateTime::parse_from_str(&cfg.start, TIMESTAMP_FORMAT).expect("validated");
    let last_period = cfg.first_period + cfg.periods as i64 - 1;
    for d in &cfg.drift {
        if !(cfg.first_period..=last_period).contains(&d.period) {
            return Err(Error::Config(format!(
                "drift on `{}` at period {} is outside {}..={last_period}",
                d.node, d.period, cfg.first_period
            )));
        }
    }

    let mut topo_rng = derive_rng(seed, "generator.topology", 0);
    let mut params: Vec<NodeParams> = Vec::new();
    let mut snapshot: Option<GraphSnapshot> = None;
    let mut out = Vec::with_capacity(cfg.periods);

    for p in 0..cfg.periods {
        let period = cfg.first_period + p as i64;
        let joining = if p == 0 {
            cfg.initial_nodes
        } else {
            cfg.growth_per_period
        };
        let first_new = params.len();
        let mut delta = GraphDelta::default();
        for i in first_new..first_new + joining {
            let mut rng = derive_rng(seed, "generator.node", i as u64);
            let mut scale = 1.0 + cfg.node_heterogeneity * rng.random_range(-1.0..=1.0);
            if p > 0 {
                scale *= cfg.new_node_scale;
            }
            let phase = if cfg.phase_jitter > 0.0 {
                rng.random_range(-cfg.phase_jitter..=cfg.phase_jitter)
            } else {
                0.0
            };
            params.push(NodeParams {
                profile: DiurnalProfile {
                    base: cfg.profile_base,
                    peak: cfg.profile_peak,
                    scale,
                    phase,
                },
            });
            let id = GeneratorConfig::node_id(i);
            delta.added_nodes.insert(id.clone());
            let k = cfg.edges_per_node.min(i);
            for j in index::sample(&mut topo_rng, i, k) {
                delta
                    .added_edges
                    .insert(Edge::new(id.clone(), GeneratorConfig::node_id(j))?);
            }
        }
        let snap = match &snapshot {
            None => GraphSnapshot::new(period - 1, [], [])?.apply_delta(&delta)?,
            Some(prev) => prev.apply_delta(&delta)?,
        };

        let period_start = start + TimeDelta::days(364 * p as i64);
        let timestamps: Vec<NaiveDateTime> = (0..cfg.steps_per_period)
            .map(|t| period_start + step() * t as i32)
            .collect();
        let step_offset = {
            let since_midnight = period_start
                .time()
                .signed_duration_since(chrono::NaiveTime::MIN);
            (since_midnight.num_minutes() / super::STEP_MINUTES) as usize
        };

        let mut series = BTreeMap::new();
        for (i, node) in params.iter().enumerate() {
            let id = GeneratorConfig::node_id(i);
            let shift: f64 = cfg
                .drift
                .iter()
                .filter(|d| d.node == id && d.period <= period)
                .map(|d| d.magnitude)
                .sum();
            let mut rng = derive_rng(seed, &format!("generator.noise.{period}"), i as u64);
            series.insert(
                id.clone(),
                synth_series(id, node, shift, cfg, &timestamps, step_offset, &mut rng),
            );
        }
        for d in cfg.drift.iter().filter(|d| d.period == period) {
            if !snap.contains(&d.node) {
                return Err(Error::InvalidInput(format!(
                    "drift node `{}` is not in the network at period {period}",
                    d.node
                )));
            }
        }
        out.push(PeriodDataset::new(snap.clone(), series)?);
        snapshot = Some(snap);
    }
    Ok(out)
}

fn synth_series(
    id: NodeId,
    node: &NodeParams,
    shift: f64,
    cfg: &GeneratorConfig,
    timestamps: &[NaiveDateTime],
    step_offset: usize,
    rng: &mut impl Rng,
) -> SensorSeries {
    let capacity = 2.0 * cfg.profile_peak.max(1.0);
    let sigma = cfg.noise_sigma;
    let flow_noise = Normal::new(0.0, sigma.max(f64::MIN_POSITIVE)).expect("sigma");
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let n = timestamps.len();
    let (mut flow, mut speed, mut occupancy) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    for t in 0..n {
        let mut f = node.profile.flow_at(step_offset + t) + shift;
        if sigma > 0.0 {
            f += flow_noise.sample(rng);
        }
        let f = f.max(0.0);
        let load = f / capacity;
        let mut s = FREE_FLOW_SPEED * (1.0 - 0.5 * load.min(1.5));
        let mut o = 0.6 * load;
        if sigma > 0.0 {
            s += 0.05 * sigma * unit.sample(rng);
            o += 0.1 * sigma / capacity * unit.sample(rng);
        }
        flow.push(f);
        speed.push(s.max(0.0));
        occupancy.push(o.clamp(0.0, 1.0));
    }
    SensorSeries {
        sensor_id: id,
        timestamps: timestamps.to_vec(),
        flow,
        speed,
        occupancy,
    }
}

/// Ids of the nodes the generator creates before period index `p` ends.
pub fn node_ids_through(cfg: &GeneratorConfig, p: usize) -> BTreeSet<NodeId> {
    let n = cfg.initial_nodes + p * cfg.growth_per_period;
    (0..n).map(GeneratorConfig::node_id).collect()
}
