use std::collections::BTreeSet;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::drift::{detect, DriftReport, NodeScore};
use crate::env::state_dim;
use crate::error::{Error, Result};
use crate::graph::{node_diff, NodeId};
use crate::ingest::PeriodDataset;
use crate::qnet::QNetwork;
use crate::replay::{mixed_batch_with, ConsolidationMemory, Experience, ReplayBuffer, Source};
use crate::seed::derive_rng;

use super::eval::{
    evaluate, historical_average_forecast, last_value_forecast, predict_horizon, HorizonMetrics,
};
use super::rollout::{generate_rollouts, PeriodContext};
use super::{Agent, PipelineConfig, Regime, TrainerConfig};

/// Test-split metrics of the reference forecasters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub last_value: Vec<HorizonMetrics>,
    pub historical_average: Vec<HorizonMetrics>,
}

/// Deterministic outcome of one period. Wall-clock timings live in [`PeriodTimings`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodReport {
    pub period: i64,
    pub period_index: usize,
    pub regime: Regime,
    pub nodes: usize,
    pub new_nodes: usize,
    pub surviving_nodes: usize,
    pub candidates: Vec<NodeId>,
    pub drift_scores: Vec<NodeScore>,
    pub trained: bool,
    /// Experiences generated for training this period.
    pub experiences: usize,
    pub updates: u64,
    pub epoch_losses: Vec<f64>,
    /// Fraction of batch items drawn from the consolidation memory.
    pub memory_share: f64,
    pub memory_size: usize,
    pub val: Vec<HorizonMetrics>,
    pub test: Vec<HorizonMetrics>,
    /// Test metrics over nodes that already existed in the previous period.
    pub old_node_test: Vec<HorizonMetrics>,
    pub baselines: BaselineReport,
}

impl PeriodReport {
    pub fn test_mae(&self, horizon: usize) -> Option<f64> {
        find(&self.test, horizon)
    }

    pub fn old_node_test_mae(&self, horizon: usize) -> Option<f64> {
        find(&self.old_node_test, horizon)
    }
}

fn find(ms: &[HorizonMetrics], horizon: usize) -> Option<f64> {
    ms.iter()
        .find(|m| m.horizon == horizon)
        .map(|m| m.metrics.mae)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PeriodTimings {
    pub period: i64,
    pub generation_secs: f64,
    pub training_secs: f64,
    pub epoch_secs: Vec<f64>,
    pub evaluation_secs: f64,
    pub total_secs: f64,
}

impl PeriodTimings {
    pub fn mean_epoch_secs(&self) -> f64 {
        if self.epoch_secs.is_empty() {
            0.0
        } else {
            self.epoch_secs.iter().sum::<f64>() / self.epoch_secs.len() as f64
        }
    }
}

/// Validation/test metrics of a network on one period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodEvaluation {
    pub val: Vec<HorizonMetrics>,
    pub test: Vec<HorizonMetrics>,
    /// Test metrics restricted to `old_nodes`; empty when none have readings.
    pub old_node_test: Vec<HorizonMetrics>,
    pub baselines: BaselineReport,
}

/// Scores `net` and the reference forecasters on every node of the context's period.
pub fn evaluate_period(
    net: &QNetwork,
    ctx: &PeriodContext<'_>,
    cfg: &TrainerConfig,
    old_nodes: &BTreeSet<NodeId>,
) -> Result<PeriodEvaluation> {
    let ds = ctx.dataset();
    let nodes: Vec<NodeId> = ds.sensor_ids().cloned().collect();
    let model = |v: &str, t: usize, h: usize| predict_horizon(net, ctx, v, t, h);
    let (hz, stride) = (&cfg.horizons, cfg.eval_stride);
    let val = evaluate(ctx, &nodes, &ds.splits.val, hz, stride, model)?.all()?;
    let test_eval = evaluate(ctx, &nodes, &ds.splits.test, hz, stride, model)?;
    let test = test_eval.all()?;
    let old_node_test = if old_nodes.iter().any(|v| ds.series.contains_key(v)) {
        test_eval.metrics(|v| old_nodes.contains(v))?
    } else {
        Vec::new()
    };
    let baselines = BaselineReport {
        last_value: evaluate(ctx, &nodes, &ds.splits.test, hz, stride, |v, t, h| {
            last_value_forecast(ctx, v, t, h)
        })?
        .all()?,
        historical_average: evaluate(ctx, &nodes, &ds.splits.test, hz, stride, |v, t, h| {
            historical_average_forecast(ctx, v, t, h)
        })?
        .all()?,
    };
    Ok(PeriodEvaluation {
        val,
        test,
        old_node_test,
        baselines,
    })
}

/// Agent, replay buffer and consolidation memory carried across periods.
#[derive(Debug, Clone)]
pub struct Trainer {
    cfg: PipelineConfig,
    seed: u64,
    agent: Agent,
    buffer: ReplayBuffer,
    memory: ConsolidationMemory,
    period_index: usize,
    last_period: Option<i64>,
}

impl Trainer {
    pub fn new(cfg: PipelineConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let agent = Agent::init(state_dim(cfg.env.window), &cfg.qnet, seed, 0)?;
        let buffer = ReplayBuffer::new(cfg.replay.capacity)?;
        Ok(Self {
            cfg,
            seed,
            agent,
            buffer,
            memory: ConsolidationMemory::new(),
            period_index: 0,
            last_period: None,
        })
    }

    /// Resumes after the period recorded in `ckpt`.
    pub fn from_checkpoint(cfg: PipelineConfig, seed: u64, ckpt: Checkpoint) -> Result<Self> {
        cfg.validate()?;
        let net = &ckpt.agent.net;
        let dim = state_dim(cfg.env.window);
        if net.input_dim() != dim
            || net.hidden() != cfg.qnet.hidden
            || net.is_dueling() != cfg.qnet.dueling
        {
            return Err(Error::Checkpoint(format!(
                "network shape (input {}, hidden {}, dueling {}) does not match the configuration \
                 (input {dim}, hidden {}, dueling {})",
                net.input_dim(),
                net.hidden(),
                net.is_dueling(),
                cfg.qnet.hidden,
                cfg.qnet.dueling
            )));
        }
        let buffer = ReplayBuffer::new(cfg.replay.capacity)?;
        Ok(Self {
            cfg,
            seed,
            agent: ckpt.agent,
            buffer,
            memory: ckpt.memory,
            period_index: ckpt.next_index,
            last_period: Some(ckpt.period),
        })
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let period = self
            .last_period
            .ok_or_else(|| Error::InvalidInput("no completed period to checkpoint".into()))?;
        Ok(Checkpoint {
            period,
            next_index: self.period_index,
            agent: self.agent.clone(),
            memory: self.memory.clone(),
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn agent(&self) -> &Agent {
        &self.agent
    }

    pub fn memory(&self) -> &ConsolidationMemory {
        &self.memory
    }

    pub fn period_index(&self) -> usize {
        self.period_index
    }

    /// Candidates, rollouts, training, consolidation and evaluation for `curr`.
    pub fn run_period(
        &mut self,
        prev: Option<&PeriodDataset>,
        curr: &PeriodDataset,
    ) -> Result<(PeriodReport, PeriodTimings)> {
        let started = Instant::now();
        let idx = self.period_index;
        let tcfg = self.cfg.trainer.clone();
        let regime = tcfg.regime;
        if let Some(p) = prev {
            if p.period >= curr.period {
                return Err(Error::InvalidInput(format!(
                    "previous period {} does not precede {}",
                    p.period, curr.period
                )));
            }
        }
        let ctx = PeriodContext::fit(curr, &self.cfg.env, &self.cfg.reward)?;

        let drift = match (regime, prev) {
            (Regime::Continual, Some(p)) => detect(p, curr, &self.cfg.drift)?,
            _ => DriftReport::bootstrap(curr),
        };
        let (new_nodes, surviving): (usize, BTreeSet<NodeId>) = match prev {
            Some(p) => {
                let d = node_diff(&p.snapshot, &curr.snapshot);
                (d.new_nodes.len(), d.surviving_nodes)
            }
            None => (curr.snapshot.nodes().len(), BTreeSet::new()),
        };

        if regime == Regime::FullRetrain && idx > 0 {
            self.agent = Agent::init(
                state_dim(self.cfg.env.window),
                &self.cfg.qnet,
                self.seed,
                idx as u64,
            )?;
        }
        let train = regime != Regime::Static || idx == 0;
        self.buffer.clear();
        self.agent.sync_target();

        let mut timings = PeriodTimings {
            period: curr.period,
            ..Default::default()
        };
        let mut experiences: Vec<Experience> = Vec::new();
        let mut epoch_losses = Vec::new();
        let mut memory_draws = 0usize;
        let mut total_draws = 0usize;
        let updates_before = self.agent.updates;

        if train {
            let t0 = Instant::now();
            let rollouts = generate_rollouts(
                &self.agent.net,
                &ctx,
                &drift.candidates,
                &tcfg,
                self.seed,
                idx,
            )?;
            experiences = rollouts.into_iter().flat_map(|r| r.experiences).collect();
            self.buffer.extend(experiences.iter().cloned());
            timings.generation_secs = t0.elapsed().as_secs_f64();

            let t1 = Instant::now();
            let rho = if regime == Regime::Continual {
                self.cfg.replay.mix_rho
            } else {
                0.0
            };
            let batch = tcfg.batch_size;
            let per_epoch = experiences.len().div_ceil(batch);
            let mut rng = derive_rng(self.seed, "train.batches", idx as u64);
            let sampler = self.buffer.sampler(self.cfg.replay.omega)?;
            for _ in 0..tcfg.epochs {
                let te = Instant::now();
                let mut loss = 0.0;
                for _ in 0..per_epoch {
                    let items = mixed_batch_with(&sampler, &self.memory, batch, rho, &mut rng)?;
                    memory_draws += items.iter().filter(|x| x.source == Source::Memory).count();
                    total_draws += items.len();
                    let exps: Vec<&Experience> = items.iter().map(|x| x.experience).collect();
                    loss += self.agent.train_step(&exps, &tcfg)?;
                }
                epoch_losses.push(loss / per_epoch.max(1) as f64);
                timings.epoch_secs.push(te.elapsed().as_secs_f64());
            }
            timings.training_secs = t1.elapsed().as_secs_f64();

            if regime == Regime::Continual && !experiences.is_empty() {
                self.memory
                    .retain(curr.period, &experiences, self.cfg.replay.retain_fraction)?;
            }
        }

        let t2 = Instant::now();
        let PeriodEvaluation {
            val,
            test,
            old_node_test,
            baselines,
        } = evaluate_period(&self.agent.net, &ctx, &tcfg, &surviving)?;
        timings.evaluation_secs = t2.elapsed().as_secs_f64();

        let report = PeriodReport {
            period: curr.period,
            period_index: idx,
            regime,
            nodes: curr.series.len(),
            new_nodes,
            surviving_nodes: surviving.len(),
            candidates: if train { drift.candidates } else { Vec::new() },
            drift_scores: drift.scores,
            trained: train,
            experiences: experiences.len(),
            updates: self.agent.updates - updates_before,
            epoch_losses,
            memory_share: if total_draws == 0 {
                0.0
            } else {
                memory_draws as f64 / total_draws as f64
            },
            memory_size: self.memory.len(),
            val,
            test,
            old_node_test,
            baselines,
        };
        self.period_index += 1;
        self.last_period = Some(curr.period);
        timings.total_secs = started.elapsed().as_secs_f64();
        Ok((report, timings))
    }
}

/// Runs every period of `datasets` in order with a fresh trainer.
pub fn run_stream(
    cfg: &PipelineConfig,
    seed: u64,
    datasets: &[PeriodDataset],
) -> Result<Vec<(PeriodReport, PeriodTimings)>> {
    let mut trainer = Trainer::new(cfg.clone(), seed)?;
    let mut out = Vec::with_capacity(datasets.len());
    for (i, ds) in datasets.iter().enumerate() {
        let prev = if i == 0 { None } else { Some(&datasets[i - 1]) };
        out.push(trainer.run_period(prev, ds)?);
    }
    Ok(out)
}
