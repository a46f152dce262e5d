//! Dueling fully-connected Q-network with analytic gradients.
//!
//! Architecture: `input → H (ReLU) → H (ReLU)`, then a value head `H → 1` and
//! an advantage head `H → A`. With the dueling split enabled,
//! `Q(s, a) = V(s) + A(s, a) − mean_a A(s, a)`; otherwise the advantage head
//! output is used as `Q` directly and the value head is inert.
//!
//! Parameters live in one flat vector so the optimizer, gradient checks and
//! checkpoints can treat them uniformly.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{ActionClass, NUM_ACTIONS};
use crate::error::{Error, Result};

/// Samples per parallel gradient chunk. Fixed so results do not depend on the thread count.
const GRAD_CHUNK: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QNetConfig {
    pub hidden: usize,
    pub dueling: bool,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
}

impl Default for QNetConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            dueling: true,
            optimizer: OptimizerKind::Adam,
            learning_rate: 0.001,
        }
    }
}

impl QNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::Config("qnet.hidden must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("qnet.learning_rate must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layout {
    input: usize,
    hidden: usize,
    actions: usize,
}

impl Layout {
    fn w1(&self) -> usize {
        0
    }
    fn b1(&self) -> usize {
        self.hidden * self.input
    }
    fn w2(&self) -> usize {
        self.b1() + self.hidden
    }
    fn b2(&self) -> usize {
        self.w2() + self.hidden * self.hidden
    }
    fn wv(&self) -> usize {
        self.b2() + self.hidden
    }
    fn bv(&self) -> usize {
        self.wv() + self.hidden
    }
    fn wa(&self) -> usize {
        self.bv() + 1
    }
    fn ba(&self) -> usize {
        self.wa() + self.actions * self.hidden
    }
    fn len(&self) -> usize {
        self.ba() + self.actions
    }
}

/// Gradient of the loss with respect to every network parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<f64>);

impl Gradients {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Activations kept from a forward pass for backprop.
struct Trace {
    z1: Vec<f64>,
    h1: Vec<f64>,
    z2: Vec<f64>,
    h2: Vec<f64>,
    q: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    layout: Layout,
    dueling: bool,
    params: Vec<f64>,
}

impl QNetwork {
    /// Fan-in scaled uniform initialization: each layer draws from `±1/sqrt(fan_in)`.
    pub fn new(
        input_dim: usize,
        hidden: usize,
        actions: usize,
        dueling: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let layout = Self::check_layout(input_dim, hidden, actions)?;
        let mut params = vec![0.0; layout.len()];
        let mut fill = |range: std::ops::Range<usize>, fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in &mut params[range] {
                *p = rng.random_range(-bound..=bound);
            }
        };
        fill(layout.w1()..layout.w2(), input_dim);
        fill(layout.w2()..layout.wv(), hidden);
        fill(layout.wv()..layout.wa(), hidden);
        fill(layout.wa()..layout.len(), hidden);
        Ok(Self {
            layout,
            dueling,
            params,
        })
    }

    pub fn from_config(
        input_dim: usize,
        actions: usize,
        cfg: &QNetConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Self::new(input_dim, cfg.hidden, actions, cfg.dueling, rng)
    }

    pub fn from_params(
        input_dim: usize,
        hidden: usize,
        actions: usize,
        dueling: bool,
        params: Vec<f64>,
    ) -> Result<Self> {
        let layout = Self::check_layout(input_dim, hidden, actions)?;
        if params.len() != layout.len() {
            return Err(Error::DimensionMismatch {
                expected: layout.len(),
                actual: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidInput("non-finite network parameter".into()));
        }
        Ok(Self {
            layout,
            dueling,
            params,
        })
    }

    fn check_layout(input: usize, hidden: usize, actions: usize) -> Result<Layout> {
        if input == 0 || hidden == 0 || actions == 0 || actions > NUM_ACTIONS {
            return Err(Error::InvalidInput(format!(
                "bad network shape: input {input}, hidden {hidden}, actions {actions}"
            )));
        }
        Ok(Layout {
            input,
            hidden,
            actions,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layout.input
    }

    pub fn hidden(&self) -> usize {
        self.layout.hidden
    }

    pub fn num_actions(&self) -> usize {
        self.layout.actions
    }

    pub fn is_dueling(&self) -> bool {
        self.dueling
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Mutable view of the advantage-head bias.
    pub fn advantage_bias_mut(&mut self) -> &mut [f64] {
        let l = self.layout;
        &mut self.params[l.ba()..l.len()]
    }

    fn check_input(&self, s: &[f64]) -> Result<()> {
        if s.len() != self.layout.input {
            return Err(Error::DimensionMismatch {
                expected: self.layout.input,
                actual: s.len(),
            });
        }
        Ok(())
    }

    fn dense(w: &[f64], b: &[f64], x: &[f64], out: &mut Vec<f64>) {
        let n_in = x.len();
        out.clear();
        out.extend(b.iter().enumerate().map(|(i, bi)| {
            let row = &w[i * n_in..(i + 1) * n_in];
            bi + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
        }));
    }

    fn trace(&self, s: &[f64]) -> Trace {
        let l = self.layout;
        let p = &self.params;
        let mut z1 = Vec::with_capacity(l.hidden);
        Self::dense(&p[l.w1()..l.b1()], &p[l.b1()..l.w2()], s, &mut z1);
        let h1: Vec<f64> = z1.iter().map(|z| z.max(0.0)).collect();
        let mut z2 = Vec::with_capacity(l.hidden);
        Self::dense(&p[l.w2()..l.b2()], &p[l.b2()..l.wv()], &h1, &mut z2);
        let h2: Vec<f64> = z2.iter().map(|z| z.max(0.0)).collect();
        let mut v = Vec::with_capacity(1);
        Self::dense(&p[l.wv()..l.bv()], &p[l.bv()..l.wa()], &h2, &mut v);
        let mut adv = Vec::with_capacity(l.actions);
        Self::dense(&p[l.wa()..l.ba()], &p[l.ba()..l.len()], &h2, &mut adv);
        let q = if self.dueling {
            dueling_aggregate(v[0], &adv)
        } else {
            adv
        };
        Trace { z1, h1, z2, h2, q }
    }

    /// Value and raw advantage-head outputs, before aggregation.
    pub fn heads(&self, s: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_input(s)?;
        let l = self.layout;
        let t = self.trace(s);
        let p = &self.params;
        let mut v = Vec::new();
        Self::dense(&p[l.wv()..l.bv()], &p[l.bv()..l.wa()], &t.h2, &mut v);
        let mut adv = Vec::new();
        Self::dense(&p[l.wa()..l.ba()], &p[l.ba()..l.len()], &t.h2, &mut adv);
        Ok((v[0], adv))
    }

    pub fn forward(&self, s: &[f64]) -> Result<Vec<f64>> {
        self.check_input(s)?;
        Ok(self.trace(s).q)
    }

    /// Highest-valued action; ties go to the lowest index.
    pub fn greedy(&self, s: &[f64]) -> Result<ActionClass> {
        let q = self.forward(s)?;
        ActionClass::new(argmax(&q))
    }

    /// Epsilon-greedy action selection.
    pub fn select_action(
        &self,
        s: &[f64],
        epsilon: f64,
        rng: &mut impl Rng,
    ) -> Result<ActionClass> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::InvalidInput(format!(
                "epsilon {epsilon} outside [0, 1]"
            )));
        }
        if epsilon > 0.0 && rng.random::<f64>() < epsilon {
            return ActionClass::new(rng.random_range(0..self.layout.actions));
        }
        self.greedy(s)
    }

    /// Mean squared TD error over `(state, action, target)` samples and its gradient.
    pub fn loss_and_gradients(&self, batch: &[(&[f64], usize, f64)]) -> Result<(f64, Gradients)> {
        if batch.is_empty() {
            return Err(Error::InvalidInput("empty training batch".into()));
        }
        for (s, a, y) in batch {
            self.check_input(s)?;
            if *a >= self.layout.actions {
                return Err(Error::InvalidInput(format!("action {a} out of range")));
            }
            if !y.is_finite() {
                return Err(Error::InvalidInput("non-finite TD target".into()));
            }
        }
        let scale = 1.0 / batch.len() as f64;
        let partials: Vec<(f64, Vec<f64>)> = batch
            .par_chunks(GRAD_CHUNK)
            .map(|chunk| {
                let mut grad = vec![0.0; self.params.len()];
                let mut loss = 0.0;
                for (s, a, y) in chunk {
                    loss += self.backprop(s, *a, *y, scale, &mut grad);
                }
                (loss, grad)
            })
            .collect();
        let mut total = 0.0;
        let mut grad = vec![0.0; self.params.len()];
        for (l, g) in partials {
            total += l;
            for (acc, x) in grad.iter_mut().zip(g) {
                *acc += x;
            }
        }
        Ok((total * scale, Gradients(grad)))
    }

    /// Accumulates `scale · ∂(q_a − y)²/∂θ` into `grad`; returns the unscaled squared error.
    fn backprop(&self, s: &[f64], a: usize, y: f64, scale: f64, grad: &mut [f64]) -> f64 {
        let l = self.layout;
        let p = &self.params;
        let t = self.trace(s);
        let err = t.q[a] - y;
        let g = 2.0 * err * scale;

        let mut d_adv = vec![0.0; l.actions];
        let d_v;
        if self.dueling {
            let inv = 1.0 / l.actions as f64;
            for (k, d) in d_adv.iter_mut().enumerate() {
                *d = g * (if k == a { 1.0 } else { 0.0 } - inv);
            }
            d_v = g;
        } else {
            d_adv[a] = g;
            d_v = 0.0;
        }

        let h = l.hidden;
        let mut d_h2 = vec![0.0; h];
        for j in 0..h {
            grad[l.wv() + j] += d_v * t.h2[j];
            d_h2[j] += d_v * p[l.wv() + j];
        }
        grad[l.bv()] += d_v;
        for (k, dk) in d_adv.iter().enumerate() {
            let row = l.wa() + k * h;
            for j in 0..h {
                grad[row + j] += dk * t.h2[j];
                d_h2[j] += dk * p[row + j];
            }
            grad[l.ba() + k] += dk;
        }

        let d_z2: Vec<f64> = d_h2
            .iter()
            .zip(&t.z2)
            .map(|(d, z)| if *z > 0.0 { *d } else { 0.0 })
            .collect();
        let mut d_h1 = vec![0.0; h];
        for (i, dz) in d_z2.iter().enumerate() {
            if *dz == 0.0 {
                continue;
            }
            let row = l.w2() + i * h;
            for j in 0..h {
                grad[row + j] += dz * t.h1[j];
                d_h1[j] += dz * p[row + j];
            }
            grad[l.b2() + i] += dz;
        }

        let n_in = l.input;
        for (i, (d, z)) in d_h1.iter().zip(&t.z1).enumerate() {
            if *z <= 0.0 || *d == 0.0 {
                continue;
            }
            let row = l.w1() + i * n_in;
            for (j, x) in s.iter().enumerate() {
                grad[row + j] += d * x;
            }
            grad[l.b1() + i] += d;
        }
        err * err
    }

    pub fn apply_update(&mut self, grads: &Gradients, opt: &mut OptimizerState) -> Result<()> {
        opt.step(&mut self.params, grads)
    }
}

/// `V + A_i − mean(A)`, computed from pairwise differences `A_i − A_j` so the
/// result depends on the advantages only through their differences.
pub fn dueling_aggregate(value: f64, advantages: &[f64]) -> Vec<f64> {
    let n = advantages.len() as f64;
    advantages
        .iter()
        .map(|ai| {
            let centered: f64 = advantages.iter().map(|aj| ai - aj).sum();
            value + centered / n
        })
        .collect()
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate().skip(1) {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

/// Adaptive-moment (or plain gradient) optimizer state for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, learning_rate: f64, num_params: usize) -> Self {
        Self {
            kind,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    pub fn for_network(net: &QNetwork, cfg: &QNetConfig) -> Self {
        Self::new(cfg.optimizer, cfg.learning_rate, net.num_params())
    }

    pub fn step(&mut self, params: &mut [f64], grads: &Gradients) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::DimensionMismatch {
                expected: params.len(),
                actual: if grads.len() != params.len() {
                    grads.len()
                } else {
                    self.m.len()
                },
            });
        }
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(&grads.0) {
                    *p -= self.learning_rate * g;
                }
            }
            OptimizerKind::Adam => {
                let t = self.step as i32;
                let c1 = 1.0 - self.beta1.powi(t);
                let c2 = 1.0 - self.beta2.powi(t);
                let moments = self.m.iter_mut().zip(self.v.iter_mut());
                for ((p, &g), (m, v)) in params.iter_mut().zip(&grads.0).zip(moments) {
                    *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                    *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *p -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
                }
            }
        }
        Ok(())
    }
}
