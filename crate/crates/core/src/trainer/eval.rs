use std::collections::BTreeMap;
use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::ActionClass;
use crate::error::{Error, Result};
use crate::graph::NodeId;
use crate::ingest::STEPS_PER_DAY;
use crate::metrics::{compute_metrics, MetricSet};
use crate::qnet::QNetwork;

use super::rollout::PeriodContext;

/// Metrics of one forecast horizon (in steps).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizonMetrics {
    pub horizon: usize,
    #[serde(flatten)]
    pub metrics: MetricSet,
}

/// Greedy autoregressive forecast of steps `t, …, t + h − 1` for sensor `v`.
///
/// Each predicted class's representative flow is appended to the flow
/// window; speed and occupancy repeat their last observed values and the
/// neighbour block stays at its value for `t`.
pub fn predict_horizon(
    net: &QNetwork,
    ctx: &PeriodContext<'_>,
    v: &str,
    t: usize,
    h: usize,
) -> Result<Vec<(ActionClass, f64)>> {
    let w = ctx.builder.window();
    let own = ctx.builder.own_block(v, t)?;
    let neighbor = ctx.builder.neighbor_block(v, t)?;
    let degree = ctx.builder.degree_feature(v)?;
    let cal = ctx.builder.calibration();
    let mut own = own;
    let mut out = Vec::with_capacity(h);
    for k in 0..h {
        let s = ctx.builder.compose(&own, &neighbor, degree)?;
        let class = net.greedy(s.as_slice())?;
        let flow = ctx.discretizer.representative(class);
        out.push((class, flow));
        if k + 1 < h {
            for block in 0..3 {
                let seg = &mut own[block * w..(block + 1) * w];
                let last = seg[w - 1];
                seg.rotate_left(1);
                seg[w - 1] = if block == 0 { cal.flow(flow) } else { last };
            }
        }
    }
    Ok(out)
}

/// Persistence forecast: the last observed flow, repeated.
pub fn last_value_forecast(
    ctx: &PeriodContext<'_>,
    v: &str,
    t: usize,
    h: usize,
) -> Result<Vec<(ActionClass, f64)>> {
    if t == 0 {
        return Err(Error::InvalidInput("no observation before time 0".into()));
    }
    let f = ctx.dataset().series(v)?.flow[t - 1];
    Ok(vec![(ctx.discretizer.classify(f), f); h])
}

/// Mean training flow of the same time of day, for each target step.
pub fn historical_average_forecast(
    ctx: &PeriodContext<'_>,
    v: &str,
    t: usize,
    h: usize,
) -> Result<Vec<(ActionClass, f64)>> {
    let ds = ctx.dataset();
    let s = ds.series(v)?;
    let train = &ds.splits.train;
    let fallback = s.flow[train.clone()].iter().sum::<f64>() / train.len() as f64;
    Ok((t..t + h)
        .map(|target| {
            let (sum, n) = (target % STEPS_PER_DAY..train.end)
                .step_by(STEPS_PER_DAY)
                .fold((0.0, 0usize), |(a, n), i| (a + s.flow[i], n + 1));
            let f = if n == 0 { fallback } else { sum / n as f64 };
            (ctx.discretizer.classify(f), f)
        })
        .collect())
}

#[derive(Debug, Clone, Default, PartialEq)]
struct Records {
    predicted: Vec<f64>,
    actual: Vec<f64>,
    predicted_classes: Vec<ActionClass>,
    actual_classes: Vec<ActionClass>,
}

/// Per-node forecast records at each horizon, ready to be aggregated over any node subset.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    horizons: Vec<usize>,
    nodes: BTreeMap<NodeId, Vec<Records>>,
}

impl Evaluation {
    pub fn horizons(&self) -> &[usize] {
        &self.horizons
    }

    /// Metrics pooled over the nodes accepted by `keep`, in node-id order.
    pub fn metrics(&self, keep: impl Fn(&str) -> bool) -> Result<Vec<HorizonMetrics>> {
        self.horizons
            .iter()
            .enumerate()
            .map(|(k, &horizon)| {
                let mut all = Records::default();
                for (v, recs) in &self.nodes {
                    if keep(v) {
                        let r = &recs[k];
                        all.predicted.extend_from_slice(&r.predicted);
                        all.actual.extend_from_slice(&r.actual);
                        all.predicted_classes
                            .extend_from_slice(&r.predicted_classes);
                        all.actual_classes.extend_from_slice(&r.actual_classes);
                    }
                }
                let metrics = compute_metrics(
                    &all.predicted,
                    &all.actual,
                    &all.predicted_classes,
                    &all.actual_classes,
                )?;
                Ok(HorizonMetrics { horizon, metrics })
            })
            .collect()
    }

    pub fn all(&self) -> Result<Vec<HorizonMetrics>> {
        self.metrics(|_| true)
    }
}

/// Scores `forecast` on every node over the origins of `split`.
///
/// Origins are the decision times whose longest horizon still ends inside
/// the split, taken every `stride` steps; horizon `h` is scored on the
/// forecast for step `t + h − 1`.
pub fn evaluate<F>(
    ctx: &PeriodContext<'_>,
    nodes: &[NodeId],
    split: &Range<usize>,
    horizons: &[usize],
    stride: usize,
    forecast: F,
) -> Result<Evaluation>
where
    F: Fn(&str, usize, usize) -> Result<Vec<(ActionClass, f64)>> + Sync,
{
    let h_max = horizons.iter().copied().max().unwrap_or(0);
    if h_max == 0 || stride == 0 {
        return Err(Error::InvalidInput(
            "need positive horizons and stride".into(),
        ));
    }
    let times = ctx.decision_times(split);
    let last_origin = times.end.checked_sub(h_max).filter(|&e| e >= times.start);
    let Some(last_origin) = last_origin else {
        return Err(Error::InvalidInput(format!(
            "split {split:?} is too short for a {h_max}-step horizon"
        )));
    };
    let origins: Vec<usize> = (times.start..=last_origin).step_by(stride).collect();
    let ds = ctx.dataset();
    let per_node = nodes
        .par_iter()
        .map(|v| {
            let flow = &ds.series(v)?.flow;
            let mut recs = vec![Records::default(); horizons.len()];
            for &t in &origins {
                let path = forecast(v, t, h_max)?;
                for (k, &h) in horizons.iter().enumerate() {
                    let (class, pred) = path[h - 1];
                    let actual = flow[t + h - 1];
                    let r = &mut recs[k];
                    r.predicted.push(pred);
                    r.actual.push(actual);
                    r.predicted_classes.push(class);
                    r.actual_classes.push(ctx.discretizer.classify(actual));
                }
            }
            Ok((v.clone(), recs))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Evaluation {
        horizons: horizons.to_vec(),
        nodes: per_node.into_iter().collect(),
    })
}
