//! Reward-prioritized experience replay and the consolidation memory.

use std::cmp::Ordering;
use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ceil_fraction;
use crate::env::{ActionClass, StateVector};
use crate::error::{Error, Result};

/// Lowest priority an experience can carry, so zero-reward samples stay drawable.
pub const PRIORITY_FLOOR: f64 = 1e-3;
pub const DEFAULT_CAPACITY: usize = 100_000;
/// Insertions/evictions between full recomputations of the running priority sum.
const RESYNC_INTERVAL: u64 = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReplayConfig {
    pub capacity: usize,
    /// Sampling exponent; 1 gives plain priority-proportional sampling.
    pub omega: f64,
    pub retain_fraction: f64,
    /// Share of each batch drawn from the consolidation memory.
    pub mix_rho: f64,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            capacity: DEFAULT_CAPACITY,
            omega: 1.0,
            retain_fraction: 0.05,
            mix_rho: 0.25,
        }
    }
}

impl ReplayConfig {
    pub fn validate(&self) -> Result<()> {
        if self.capacity == 0 {
            return Err(Error::Config("replay.capacity must be >= 1".into()));
        }
        if !(self.omega >= 0.0 && self.omega.is_finite()) {
            return Err(Error::Config("replay.omega must be >= 0".into()));
        }
        if !(self.retain_fraction > 0.0 && self.retain_fraction <= 1.0) {
            return Err(Error::Config(
                "replay.retain_fraction must be in (0, 1]".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.mix_rho) {
            return Err(Error::Config("replay.mix_rho must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// One transition `(s, a, r, s')` with its origin and sampling priority.
#[derive(Debug, Clone, PartialEq)]
pub struct Experience {
    pub state: StateVector,
    pub action: ActionClass,
    pub reward: f64,
    pub next_state: StateVector,
    pub terminal: bool,
    pub node: Arc<str>,
    pub period: i64,
    pub time: usize,
    pub priority: f64,
}

impl Experience {
    /// Builds an experience whose priority is derived from its reward.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        state: StateVector,
        action: ActionClass,
        reward: f64,
        next_state: StateVector,
        terminal: bool,
        node: Arc<str>,
        period: i64,
        time: usize,
    ) -> Self {
        Self {
            state,
            action,
            reward,
            next_state,
            terminal,
            node,
            period,
            time,
            priority: assign_priority(reward),
        }
    }
}

pub fn assign_priority(reward: f64) -> f64 {
    reward.max(PRIORITY_FLOOR)
}

/// `p_i^ω / Σ_k p_k^ω`.
pub fn sampling_probabilities(priorities: &[f64], omega: f64) -> Result<Vec<f64>> {
    if priorities.is_empty() {
        return Err(Error::InvalidInput("no priorities to normalize".into()));
    }
    let w: Vec<f64> = priorities.iter().map(|p| p.powf(omega)).collect();
    let total: f64 = w.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "priority mass {total} is not positive"
        )));
    }
    Ok(w.into_iter().map(|x| x / total).collect())
}

/// Bounded FIFO buffer with a running priority sum.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: VecDeque<Experience>,
    capacity: usize,
    priority_sum: f64,
    ops_since_resync: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidInput("replay capacity must be >= 1".into()));
        }
        Ok(Self {
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
            capacity,
            priority_sum: 0.0,
            ops_since_resync: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Experience> {
        self.items.iter()
    }

    pub fn get(&self, i: usize) -> Option<&Experience> {
        self.items.get(i)
    }

    /// Running sum of stored priorities.
    pub fn priority_sum(&self) -> f64 {
        self.priority_sum
    }

    pub fn recomputed_priority_sum(&self) -> f64 {
        self.items.iter().map(|e| e.priority).sum()
    }

    /// Appends `e`, evicting the oldest item at capacity. Returns the evicted item.
    pub fn push(&mut self, mut e: Experience) -> Option<Experience> {
        e.priority = e.priority.max(PRIORITY_FLOOR);
        let evicted = if self.items.len() == self.capacity {
            let old = self.items.pop_front();
            if let Some(o) = &old {
                self.priority_sum -= o.priority;
            }
            old
        } else {
            None
        };
        self.priority_sum += e.priority;
        self.items.push_back(e);
        self.ops_since_resync += 1;
        if self.ops_since_resync >= RESYNC_INTERVAL {
            self.priority_sum = self.recomputed_priority_sum();
            self.ops_since_resync = 0;
        }
        evicted
    }

    pub fn extend(&mut self, items: impl IntoIterator<Item = Experience>) {
        for e in items {
            self.push(e);
        }
    }

    pub fn clear(&mut self) {
        self.items.clear();
        self.priority_sum = 0.0;
        self.ops_since_resync = 0;
    }

    /// Prepares a sampler for the current contents under exponent `omega`.
    pub fn sampler(&self, omega: f64) -> Result<PrioritySampler<'_>> {
        PrioritySampler::new(self, omega)
    }
}

/// Cumulative distribution over a buffer snapshot; draws by binary search.
#[derive(Debug, Clone)]
pub struct PrioritySampler<'a> {
    buffer: &'a ReplayBuffer,
    cdf: Vec<f64>,
}

impl<'a> PrioritySampler<'a> {
    pub fn new(buffer: &'a ReplayBuffer, omega: f64) -> Result<Self> {
        if buffer.is_empty() {
            return Err(Error::InvalidInput(
                "cannot sample from an empty replay buffer".into(),
            ));
        }
        if !(omega >= 0.0 && omega.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "sampling exponent {omega} must be >= 0"
            )));
        }
        let mut acc = 0.0;
        let cdf = buffer
            .items
            .iter()
            .map(|e| {
                acc += e.priority.powf(omega);
                acc
            })
            .collect();
        Ok(Self { buffer, cdf })
    }

    pub fn draw_index(&self, rng: &mut impl Rng) -> usize {
        let total = *self.cdf.last().expect("non-empty");
        let u = rng.random::<f64>() * total;
        self.cdf
            .partition_point(|&c| c <= u)
            .min(self.cdf.len() - 1)
    }

    pub fn draw(&self, rng: &mut impl Rng) -> &'a Experience {
        &self.buffer.items[self.draw_index(rng)]
    }

    pub fn batch(&self, size: usize, rng: &mut impl Rng) -> Vec<&'a Experience> {
        (0..size).map(|_| self.draw(rng)).collect()
    }
}

/// Draws `batch` experiences with replacement, `P(i) ∝ p_i^ω`.
pub fn sample<'a>(
    buffer: &'a ReplayBuffer,
    batch: usize,
    omega: f64,
    rng: &mut impl Rng,
) -> Result<Vec<&'a Experience>> {
    if batch == 0 {
        return Err(Error::InvalidInput("batch size must be >= 1".into()));
    }
    Ok(buffer.sampler(omega)?.batch(batch, rng))
}

/// Order used to pick retained experiences: priority descending, then
/// `(node, time)` ascending.
fn retention_order(a: &Experience, b: &Experience) -> Ordering {
    b.priority
        .total_cmp(&a.priority)
        .then_with(|| a.node.cmp(&b.node))
        .then_with(|| a.time.cmp(&b.time))
}

/// The `ceil(fraction · N)` highest-priority experiences, in retention order.
pub fn retain_top_fraction(experiences: &[Experience], fraction: f64) -> Result<Vec<Experience>> {
    if experiences.is_empty() {
        return Err(Error::InvalidInput(
            "nothing to retain from an empty period".into(),
        ));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "retain fraction {fraction} outside (0, 1]"
        )));
    }
    let k = ceil_fraction(fraction, experiences.len()).max(1);
    let mut refs: Vec<&Experience> = experiences.iter().collect();
    if k < refs.len() {
        refs.select_nth_unstable_by(k - 1, |a, b| retention_order(a, b));
        refs.truncate(k);
    }
    refs.sort_by(|a, b| retention_order(a, b));
    Ok(refs.into_iter().cloned().collect())
}

/// Top experiences retained from each completed period.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConsolidationMemory {
    periods: BTreeMap<i64, Vec<Experience>>,
    total: usize,
}

impl ConsolidationMemory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn periods(&self) -> impl Iterator<Item = (i64, &[Experience])> {
        self.periods.iter().map(|(p, v)| (*p, v.as_slice()))
    }

    pub fn period(&self, p: i64) -> Option<&[Experience]> {
        self.periods.get(&p).map(Vec::as_slice)
    }

    /// Experiences in period order, then retention order.
    pub fn iter(&self) -> impl Iterator<Item = &Experience> {
        self.periods.values().flatten()
    }

    /// Stores the top fraction of `experiences` under `period`, replacing any earlier entry.
    pub fn retain(
        &mut self,
        period: i64,
        experiences: &[Experience],
        fraction: f64,
    ) -> Result<usize> {
        let kept = retain_top_fraction(experiences, fraction)?;
        let n = kept.len();
        self.insert(period, kept);
        Ok(n)
    }

    /// Stores `kept` verbatim under `period`.
    pub fn insert(&mut self, period: i64, kept: Vec<Experience>) {
        if let Some(old) = self.periods.insert(period, kept) {
            self.total -= old.len();
        }
        self.total += self.periods[&period].len();
    }

    pub fn get(&self, mut i: usize) -> Option<&Experience> {
        for v in self.periods.values() {
            if i < v.len() {
                return Some(&v[i]);
            }
            i -= v.len();
        }
        None
    }

    /// Uniform draw pooled over all periods.
    pub fn draw(&self, rng: &mut impl Rng) -> Option<&Experience> {
        if self.total == 0 {
            return None;
        }
        self.get(rng.random_range(0..self.total))
    }
}

/// Where a batch item was drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    Buffer,
    Memory,
}

#[derive(Debug, Clone, Copy)]
pub struct BatchItem<'a> {
    pub source: Source,
    pub experience: &'a Experience,
}

/// `round(ρ·B)` uniform memory draws (none if the memory is empty) followed by
/// prioritized buffer draws, `B` items in total.
pub fn mixed_batch_with<'a>(
    sampler: &PrioritySampler<'a>,
    memory: &'a ConsolidationMemory,
    batch: usize,
    rho: f64,
    rng: &mut impl Rng,
) -> Result<Vec<BatchItem<'a>>> {
    if batch == 0 {
        return Err(Error::InvalidInput("batch size must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::InvalidInput(format!(
            "mix fraction {rho} outside [0, 1]"
        )));
    }
    let from_memory = if memory.is_empty() {
        0
    } else {
        ((rho * batch as f64).round() as usize).min(batch)
    };
    let mut out = Vec::with_capacity(batch);
    for _ in 0..from_memory {
        let e = memory.draw(rng).expect("non-empty memory");
        out.push(BatchItem {
            source: Source::Memory,
            experience: e,
        });
    }
    for _ in from_memory..batch {
        out.push(BatchItem {
            source: Source::Buffer,
            experience: sampler.draw(rng),
        });
    }
    Ok(out)
}

pub fn mixed_batch<'a>(
    buffer: &'a ReplayBuffer,
    memory: &'a ConsolidationMemory,
    batch: usize,
    rho: f64,
    omega: f64,
    rng: &mut impl Rng,
) -> Result<Vec<BatchItem<'a>>> {
    let sampler = buffer.sampler(omega)?;
    mixed_batch_with(&sampler, memory, batch, rho, rng)
}
