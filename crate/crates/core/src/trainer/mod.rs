//! The continual training loop: rollouts, TD-target updates with a frozen
//! target copy, consolidation replay and per-period evaluation.

mod eval;
mod period;
mod rollout;
mod tabular;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::drift::DriftConfig;
use crate::env::{EnvConfig, RewardWeights, NUM_ACTIONS};
use crate::error::{Error, Result};
use crate::qnet::{Gradients, OptimizerState, QNetConfig, QNetwork};
use crate::replay::{Experience, ReplayConfig};
use crate::seed::derive_rng;

pub use eval::{
    evaluate, historical_average_forecast, last_value_forecast, predict_horizon, Evaluation,
    HorizonMetrics,
};
pub use period::{
    evaluate_period, run_stream, BaselineReport, PeriodEvaluation, PeriodReport, PeriodTimings,
    Trainer,
};
pub use rollout::{generate_rollouts, rollout_node, EpisodeRollout, PeriodContext};
pub use tabular::{td_target, QTable};

/// How the agent is carried from one period to the next.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// Warm start; train on drift candidates only, replaying the consolidation memory.
    Continual,
    /// Fresh network and optimizer each period, trained on every node.
    FullRetrain,
    /// Train in the first period only; later periods are evaluated as-is.
    Static,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    pub gamma: f64,
    /// Step size of the tabular oracle.
    pub tabular_step: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Generated steps over which epsilon decays linearly each period.
    pub epsilon_decay_steps: u64,
    /// Updates between target-network syncs.
    pub target_sync: u64,
    /// When false, TD targets use the online network.
    pub use_target_network: bool,
    pub horizons: Vec<usize>,
    pub regime: Regime,
    /// Evaluate every `eval_stride`-th origin time.
    pub eval_stride: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            gamma: 0.5,
            tabular_step: 0.1,
            batch_size: 128,
            epochs: 10,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_steps: 10_000,
            target_sync: 500,
            use_target_network: true,
            horizons: vec![3, 12],
            regime: Regime::Continual,
            eval_stride: 1,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("trainer: {m}")));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must be in [0, 1)");
        }
        if !(self.tabular_step > 0.0 && self.tabular_step <= 1.0) {
            return bad("tabular_step must be in (0, 1]");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.epsilon_start) || !(0.0..=1.0).contains(&self.epsilon_end) {
            return bad("epsilon bounds must be in [0, 1]");
        }
        if self.target_sync == 0 {
            return bad("target_sync must be >= 1");
        }
        if self.horizons.is_empty() || self.horizons.contains(&0) {
            return bad("horizons must be a non-empty list of positive step counts");
        }
        if self.eval_stride == 0 {
            return bad("eval_stride must be >= 1");
        }
        Ok(())
    }

    /// Linear decay from `epsilon_start` to `epsilon_end` over `epsilon_decay_steps`.
    pub fn epsilon_at(&self, step: u64) -> f64 {
        if step >= self.epsilon_decay_steps {
            return self.epsilon_end;
        }
        let frac = step as f64 / self.epsilon_decay_steps as f64;
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }

    pub fn max_horizon(&self) -> usize {
        self.horizons.iter().copied().max().unwrap_or(1)
    }
}

/// Every learning-related setting of a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub env: EnvConfig,
    pub reward: RewardWeights,
    pub qnet: QNetConfig,
    pub trainer: TrainerConfig,
    pub replay: ReplayConfig,
    pub drift: DriftConfig,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.reward.validate()?;
        self.qnet.validate()?;
        self.trainer.validate()?;
        self.replay.validate()?;
        self.drift.validate()
    }
}

/// Online network, its frozen target copy and the optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub net: QNetwork,
    pub target: QNetwork,
    pub opt: OptimizerState,
    pub updates: u64,
}

impl Agent {
    pub fn new(net: QNetwork, cfg: &QNetConfig) -> Self {
        let opt = OptimizerState::for_network(&net, cfg);
        Self {
            target: net.clone(),
            net,
            opt,
            updates: 0,
        }
    }

    /// Seeded network for state dimension `input_dim`; `index` selects the init stream.
    pub fn init(input_dim: usize, cfg: &QNetConfig, seed: u64, index: u64) -> Result<Self> {
        let mut rng = derive_rng(seed, "qnet.init", index);
        let net = QNetwork::from_config(input_dim, NUM_ACTIONS, cfg, &mut rng)?;
        Ok(Self::new(net, cfg))
    }

    pub fn sync_target(&mut self) {
        self.target = self.net.clone();
    }

    /// TD targets `y = r + γ·max Q(s', ·)` for a batch.
    pub fn targets(&self, batch: &[&Experience], cfg: &TrainerConfig) -> Result<Vec<f64>> {
        let bootstrap = if cfg.use_target_network {
            &self.target
        } else {
            &self.net
        };
        batch
            .par_iter()
            .map(|e| {
                if e.terminal || cfg.gamma == 0.0 {
                    Ok(e.reward)
                } else {
                    let next = bootstrap.forward(e.next_state.as_slice())?;
                    Ok(td_target(e.reward, &next, cfg.gamma, false))
                }
            })
            .collect()
    }

    /// One gradient step on `batch`; returns the batch loss before the step.
    pub fn train_step(&mut self, batch: &[&Experience], cfg: &TrainerConfig) -> Result<f64> {
        let ys = self.targets(batch, cfg)?;
        let samples: Vec<(&[f64], usize, f64)> = batch
            .iter()
            .zip(&ys)
            .map(|(e, y)| (e.state.as_slice(), e.action.index(), *y))
            .collect();
        let (loss, grads): (f64, Gradients) = self.net.loss_and_gradients(&samples)?;
        self.net.apply_update(&grads, &mut self.opt)?;
        self.updates += 1;
        if cfg.use_target_network && self.updates.is_multiple_of(cfg.target_sync) {
            self.sync_target();
        }
        Ok(loss)
    }
}
