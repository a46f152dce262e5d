//! Continual deep Q-learning for streaming traffic-flow forecasting.
//!
//! An agent predicts the next-step flow class of every sensor in a growing
//! road network. Each period, drift detection picks the sensors worth
//! retraining, a dueling Q-network learns from reward-prioritized replay, and
//! a consolidation memory of high-priority experiences is replayed to keep
//! older sensors' patterns from being forgotten.

pub mod checkpoint;
pub mod drift;
pub mod env;
pub mod error;
pub mod graph;
pub mod ingest;
pub mod metrics;
pub mod qnet;
pub mod replay;
pub mod seed;
pub mod trainer;

pub use error::{Error, Result};

/// `ceil(fraction · n)`, robust to the representation error of `fraction`
/// (so `0.1 · 30` yields 3, not 4).
pub fn ceil_fraction(fraction: f64, n: usize) -> usize {
    let x = fraction * n as f64;
    let r = x.round();
    if (x - r).abs() <= 1e-9 * x.abs().max(1.0) {
        r as usize
    } else {
        x.ceil() as usize
    }
}
