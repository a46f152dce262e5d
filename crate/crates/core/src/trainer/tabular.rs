use crate::error::{Error, Result};
use crate::qnet::argmax;

/// `r` if terminal, else `r + γ·max(next_q)`.
pub fn td_target(reward: f64, next_q: &[f64], gamma: f64, terminal: bool) -> f64 {
    if terminal || next_q.is_empty() {
        return reward;
    }
    let best = next_q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    reward + gamma * best
}

/// Dense state-action value table, used as a reference learner on small MDPs.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    states: usize,
    actions: usize,
    values: Vec<f64>,
}

impl QTable {
    pub fn new(states: usize, actions: usize) -> Self {
        Self {
            states,
            actions,
            values: vec![0.0; states * actions],
        }
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    fn check(&self, s: usize, a: usize) -> Result<()> {
        if s >= self.states || a >= self.actions {
            return Err(Error::InvalidInput(format!(
                "(state {s}, action {a}) outside a {}x{} table",
                self.states, self.actions
            )));
        }
        Ok(())
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.actions + a]
    }

    pub fn set(&mut self, s: usize, a: usize, v: f64) {
        self.values[s * self.actions + a] = v;
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.actions..(s + 1) * self.actions]
    }

    /// Greedy action in `s`, lowest index on ties.
    pub fn greedy(&self, s: usize) -> usize {
        argmax(self.row(s))
    }

    /// `Q(s,a) ← Q(s,a) + α·[r + γ·max Q(s',·) − Q(s,a)]`.
    #[allow(clippy::too_many_arguments)]
    pub fn update(
        &mut self,
        s: usize,
        a: usize,
        reward: f64,
        next: usize,
        terminal: bool,
        alpha: f64,
        gamma: f64,
    ) -> Result<()> {
        self.check(s, a)?;
        self.check(next, 0)?;
        let y = td_target(reward, self.row(next), gamma, terminal);
        let q = self.get(s, a);
        self.set(s, a, q + alpha * (y - q));
        Ok(())
    }
}
