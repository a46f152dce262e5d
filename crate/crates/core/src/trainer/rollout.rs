use std::ops::Range;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;

use crate::env::{
    compute_reward_with_floor, Calibration, Discretizer, EnvConfig, RewardWeights, StateBuilder,
};
use crate::error::{Error, Result};
use crate::graph::NodeId;
use crate::ingest::PeriodDataset;
use crate::qnet::QNetwork;
use crate::replay::Experience;
use crate::seed::derive_rng;

use super::TrainerConfig;

/// Per-period fitted preprocessing: calibration, discretizer and reward settings.
#[derive(Debug, Clone)]
pub struct PeriodContext<'a> {
    pub builder: StateBuilder<'a>,
    pub discretizer: Discretizer,
    pub weights: RewardWeights,
    pub occ_epsilon: f64,
}

impl<'a> PeriodContext<'a> {
    /// Fits the discretizer and calibration on the training split of `dataset`.
    pub fn fit(
        dataset: &'a PeriodDataset,
        env: &EnvConfig,
        weights: &RewardWeights,
    ) -> Result<Self> {
        env.validate()?;
        let discretizer = Discretizer::fit(&dataset.training_flows())?;
        let calibration = Calibration::fit(dataset, env.calibration_percentile);
        Ok(Self {
            builder: StateBuilder::new(dataset, calibration, env.window),
            discretizer,
            weights: *weights,
            occ_epsilon: env.occ_epsilon,
        })
    }

    pub fn dataset(&self) -> &'a PeriodDataset {
        self.builder.dataset()
    }

    /// Usable decision times of a split: a full window must precede each one.
    pub fn decision_times(&self, split: &Range<usize>) -> Range<usize> {
        split.start.max(self.builder.window())..split.end
    }
}

/// The ordered experiences of one sensor's pass over one split.
#[derive(Debug, Clone)]
pub struct EpisodeRollout {
    pub node: Arc<str>,
    pub experiences: Vec<Experience>,
}

impl EpisodeRollout {
    /// `s'` of each step is `s` of the next, and only the last step is terminal.
    pub fn is_chained(&self) -> bool {
        let n = self.experiences.len();
        self.experiences
            .windows(2)
            .all(|w| w[0].next_state.as_slice() == w[1].state.as_slice())
            && self
                .experiences
                .iter()
                .enumerate()
                .all(|(i, e)| e.terminal == (i + 1 == n))
    }
}

/// Acts epsilon-greedily for sensor `v` at every time in `times`.
///
/// `step_offset` is the number of steps generated before this episode in the
/// period; it positions the episode on the exploration schedule.
pub fn rollout_node(
    net: &QNetwork,
    ctx: &PeriodContext<'_>,
    v: &str,
    times: Range<usize>,
    step_offset: u64,
    cfg: &TrainerConfig,
    rng: &mut impl Rng,
) -> Result<EpisodeRollout> {
    if times.is_empty() {
        return Err(Error::InvalidInput(format!("sensor `{v}`: empty episode")));
    }
    let ds = ctx.dataset();
    let series = ds.series(v)?;
    let node: Arc<str> = Arc::from(v);
    let cal = ctx.builder.calibration();
    let last = times.end - 1;
    let mut state = ctx.builder.state(v, times.start)?;
    let mut out = Vec::with_capacity(times.len());
    for (k, t) in times.enumerate() {
        let eps = cfg.epsilon_at(step_offset + k as u64);
        let action = net.select_action(state.as_slice(), eps, rng)?;
        let actual = ctx.discretizer.classify(series.flow[t]);
        let reward = compute_reward_with_floor(
            action,
            actual,
            cal.speed(series.speed[t]),
            series.occupancy[t],
            &ctx.weights,
            ctx.occ_epsilon,
        );
        let next = ctx.builder.state(v, t + 1)?;
        out.push(Experience::new(
            state,
            action,
            reward,
            next.clone(),
            t == last,
            node.clone(),
            ds.period,
            t,
        ));
        state = next;
    }
    Ok(EpisodeRollout {
        node,
        experiences: out,
    })
}

/// Training-split rollouts for `nodes`, generated in parallel.
///
/// Each node draws from its own stream (keyed by period index and node id) and
/// its exploration offset counts the steps of the nodes before it, so the
/// result does not depend on the thread count.
pub fn generate_rollouts(
    net: &QNetwork,
    ctx: &PeriodContext<'_>,
    nodes: &[NodeId],
    cfg: &TrainerConfig,
    seed: u64,
    period_index: usize,
) -> Result<Vec<EpisodeRollout>> {
    let times = ctx.decision_times(&ctx.dataset().splits.train);
    let per_node = times.len() as u64;
    nodes
        .par_iter()
        .enumerate()
        .map(|(i, v)| {
            let mut rng = derive_rng(seed, &format!("rollout.{period_index}.{v}"), 0);
            rollout_node(
                net,
                ctx,
                v,
                times.clone(),
                i as u64 * per_node,
                cfg,
                &mut rng,
            )
        })
        .collect()
}
