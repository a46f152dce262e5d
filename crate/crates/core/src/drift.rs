//! Per-node drift scoring between consecutive periods and candidate selection.
//!
//! Each surviving node gets a flow histogram per period over a shared,
//! equal-width binning of its pooled two-period range; the score is
//! `KL(current ‖ previous)` in nats. New nodes skip scoring and always train.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ceil_fraction;
use crate::error::{Error, Result};
use crate::graph::{node_diff, NodeId};
use crate::ingest::PeriodDataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriftConfig {
    pub bins: usize,
    /// Pseudo-count added to every bin.
    pub smoothing: f64,
    /// Share of surviving nodes selected by score.
    pub fraction: f64,
}

impl Default for DriftConfig {
    fn default() -> Self {
        Self {
            bins: 20,
            smoothing: 1.0,
            fraction: 0.10,
        }
    }
}

impl DriftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bins == 0 {
            return Err(Error::Config("drift.bins must be >= 1".into()));
        }
        if !(self.smoothing > 0.0 && self.smoothing.is_finite()) {
            return Err(Error::Config("drift.smoothing must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.fraction) {
            return Err(Error::Config("drift.fraction must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// `bins + 1` equal-width edges over `[lo, hi]`; a degenerate range is widened by ±0.5.
pub fn equal_width_edges(lo: f64, hi: f64, bins: usize) -> Result<Vec<f64>> {
    if bins == 0 || !(lo.is_finite() && hi.is_finite()) || hi < lo {
        return Err(Error::InvalidInput(format!(
            "cannot bin range [{lo}, {hi}] into {bins} bins"
        )));
    }
    let (lo, hi) = if hi == lo {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    };
    let width = (hi - lo) / bins as f64;
    let mut edges: Vec<f64> = (0..bins).map(|k| lo + width * k as f64).collect();
    edges.push(hi);
    Ok(edges)
}

/// Smoothed probability masses of one node's values in one period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeHistogram {
    pub node: NodeId,
    pub period: i64,
    pub edges: Vec<f64>,
    pub masses: Vec<f64>,
}

impl NodeHistogram {
    /// Wraps explicit masses, checking they form a distribution over `edges`.
    pub fn from_masses(
        node: impl Into<NodeId>,
        period: i64,
        edges: Vec<f64>,
        masses: Vec<f64>,
    ) -> Result<Self> {
        if edges.len() != masses.len() + 1 {
            return Err(Error::DimensionMismatch {
                expected: edges.len().saturating_sub(1),
                actual: masses.len(),
            });
        }
        let total: f64 = masses.iter().sum();
        if masses.iter().any(|m| m.is_nan() || *m < 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "masses do not form a distribution (sum {total})"
            )));
        }
        Ok(Self {
            node: node.into(),
            period,
            edges,
            masses,
        })
    }

    pub fn bins(&self) -> usize {
        self.masses.len()
    }
}

/// Bin index of `x`; values outside the edges clamp to the end bins.
fn bin_of(edges: &[f64], x: f64) -> usize {
    let inner = &edges[1..edges.len() - 1];
    inner.partition_point(|&e| e <= x)
}

/// `mass_k = (count_k + λ) / (N + B·λ)`.
pub fn build_histogram(
    node: impl Into<NodeId>,
    period: i64,
    values: &[f64],
    edges: &[f64],
    smoothing: f64,
) -> Result<NodeHistogram> {
    let node = node.into();
    if values.is_empty() {
        return Err(Error::InvalidInput(format!(
            "node `{node}`: no values to histogram"
        )));
    }
    if edges.len() < 2
        || edges
            .windows(2)
            .any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less))
    {
        return Err(Error::InvalidInput(
            "histogram edges must be strictly ascending".into(),
        ));
    }
    if !(smoothing >= 0.0 && smoothing.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "smoothing {smoothing} must be >= 0"
        )));
    }
    let bins = edges.len() - 1;
    let mut counts = vec![0usize; bins];
    for &x in values {
        counts[bin_of(edges, x)] += 1;
    }
    let denom = values.len() as f64 + bins as f64 * smoothing;
    let masses = counts
        .iter()
        .map(|&c| (c as f64 + smoothing) / denom)
        .collect();
    Ok(NodeHistogram {
        node,
        period,
        edges: edges.to_vec(),
        masses,
    })
}

/// `Σ_k p_k · ln(p_k / q_k)` over raw mass vectors.
pub fn kl_masses(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            actual: q.len(),
        });
    }
    let mut sum = 0.0;
    for (&pk, &qk) in p.iter().zip(q) {
        if pk > 0.0 {
            sum += pk * (pk / qk).ln();
        }
    }
    // Rounding can leave a tiny negative value for near-identical inputs.
    Ok(sum.max(0.0))
}

pub fn kl_divergence(p: &NodeHistogram, q: &NodeHistogram) -> Result<f64> {
    if p.edges != q.edges {
        return Err(Error::InvalidInput(format!(
            "histograms of `{}` and `{}` use different binnings",
            p.node, q.node
        )));
    }
    kl_masses(&p.masses, &q.masses)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeScore {
    pub node: NodeId,
    pub kl: f64,
}

/// Drift scores of surviving nodes (by node id) and the training candidates (sorted).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub period: i64,
    pub scores: Vec<NodeScore>,
    pub candidates: Vec<NodeId>,
}

impl DriftReport {
    /// First-period report: nothing to compare against, every node is a candidate.
    pub fn bootstrap(curr: &PeriodDataset) -> Self {
        Self {
            period: curr.period,
            scores: Vec::new(),
            candidates: curr.sensor_ids().cloned().collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// KL score of one node between two periods, on training-split flows.
pub fn node_score(
    prev: &PeriodDataset,
    curr: &PeriodDataset,
    v: &str,
    cfg: &DriftConfig,
) -> Result<f64> {
    let old = &prev.series(v)?.flow[prev.splits.train.clone()];
    let new = &curr.series(v)?.flow[curr.splits.train.clone()];
    let (lo, hi) = old
        .iter()
        .chain(new)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    let edges = equal_width_edges(lo, hi, cfg.bins)?;
    let p = build_histogram(v, curr.period, new, &edges, cfg.smoothing)?;
    let q = build_histogram(v, prev.period, old, &edges, cfg.smoothing)?;
    kl_divergence(&p, &q)
}

/// Ranks `(node, kl)` pairs by score descending, ties by node id, and keeps `k`.
pub fn top_scores(scores: &[NodeScore], k: usize) -> Vec<NodeId> {
    let mut ranked: Vec<&NodeScore> = scores.iter().collect();
    ranked.sort_by(|a, b| b.kl.total_cmp(&a.kl).then_with(|| a.node.cmp(&b.node)));
    ranked.into_iter().take(k).map(|s| s.node.clone()).collect()
}

/// New nodes plus the top `ceil(fraction · surviving)` surviving nodes by KL.
///
/// A node counts as surviving only if both periods carry its readings; a
/// node whose previous readings are missing is treated as new.
pub fn detect(
    prev: &PeriodDataset,
    curr: &PeriodDataset,
    cfg: &DriftConfig,
) -> Result<DriftReport> {
    cfg.validate()?;
    let diff = node_diff(&prev.snapshot, &curr.snapshot);
    let mut new_nodes: BTreeSet<NodeId> = diff
        .new_nodes
        .iter()
        .filter(|v| curr.series.contains_key(*v))
        .cloned()
        .collect();
    let mut surviving = Vec::new();
    for v in &diff.surviving_nodes {
        match (prev.series.contains_key(v), curr.series.contains_key(v)) {
            (true, true) => surviving.push(v.clone()),
            (false, true) => {
                new_nodes.insert(v.clone());
            }
            _ => {}
        }
    }
    let scores = surviving
        .par_iter()
        .map(|v| {
            Ok(NodeScore {
                node: v.clone(),
                kl: node_score(prev, curr, v, cfg)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let k = ceil_fraction(cfg.fraction, surviving.len());
    let mut candidates = new_nodes;
    candidates.extend(top_scores(&scores, k));
    Ok(DriftReport {
        period: curr.period,
        scores,
        candidates: candidates.into_iter().collect(),
    })
}
