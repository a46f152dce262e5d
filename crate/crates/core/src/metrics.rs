//! Forecast error metrics.

use serde::{Deserialize, Serialize};

use crate::env::ActionClass;
use crate::error::{Error, Result};

/// Error summary over paired predictions and observations. `mape` is in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub mae: f64,
    pub rmse: f64,
    pub mape: f64,
    pub class_accuracy: f64,
    pub count: usize,
}

impl MetricSet {
    pub const NAMES: [&'static str; 4] = ["mae", "rmse", "mape", "class_accuracy"];

    /// Values in the order of [`MetricSet::NAMES`].
    pub fn values(&self) -> [f64; 4] {
        [self.mae, self.rmse, self.mape, self.class_accuracy]
    }
}

/// MAE, RMSE, MAPE (over nonzero actuals only) and class accuracy.
pub fn compute_metrics(
    predicted: &[f64],
    actual: &[f64],
    predicted_classes: &[ActionClass],
    actual_classes: &[ActionClass],
) -> Result<MetricSet> {
    let n = predicted.len();
    for len in [actual.len(), predicted_classes.len(), actual_classes.len()] {
        if len != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: len,
            });
        }
    }
    if n == 0 {
        return Err(Error::InvalidInput("no samples to score".into()));
    }
    let (mut abs, mut sq, mut pct, mut nonzero) = (0.0, 0.0, 0.0, 0usize);
    for (p, a) in predicted.iter().zip(actual) {
        let e = p - a;
        abs += e.abs();
        sq += e * e;
        if *a != 0.0 {
            pct += (e / a).abs();
            nonzero += 1;
        }
    }
    if nonzero == 0 {
        return Err(Error::InvalidInput(
            "every actual value is zero; MAPE undefined".into(),
        ));
    }
    let hits = predicted_classes
        .iter()
        .zip(actual_classes)
        .filter(|(p, a)| p == a)
        .count();
    let nf = n as f64;
    let mae = abs / nf;
    // Guard the Jensen ordering against last-bit rounding.
    let rmse = (sq / nf).sqrt().max(mae);
    Ok(MetricSet {
        mae,
        rmse,
        mape: 100.0 * pct / nonzero as f64,
        class_accuracy: hits as f64 / nf,
        count: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn classes(xs: &[usize]) -> Vec<ActionClass> {
        xs.iter().map(|&k| ActionClass::new(k).unwrap()).collect()
    }

    #[test]
    fn perfect_prediction() {
        let x = [1.0, 5.0, 3.0];
        let c = classes(&[0, 4, 2]);
        let m = compute_metrics(&x, &x, &c, &c).unwrap();
        assert_eq!(
            (m.mae, m.rmse, m.mape, m.class_accuracy, m.count),
            (0.0, 0.0, 0.0, 1.0, 3)
        );
    }

    #[test]
    fn worked_example() {
        let c = classes(&[1, 2]);
        let m = compute_metrics(&[2.0, 4.0], &[1.0, 2.0], &c, &classes(&[1, 3])).unwrap();
        assert_eq!(m.mae, 1.5);
        assert_eq!(m.rmse, 2.5f64.sqrt());
        assert!((m.rmse - 1.5811).abs() < 1e-4);
        assert_eq!(m.mape, 100.0);
        assert_eq!(m.class_accuracy, 0.5);
    }

    #[test]
    fn constant_offset() {
        let actual = [3.0, 7.0, 11.0, 2.0];
        for c in [-2.5, 4.0] {
            let pred: Vec<f64> = actual.iter().map(|a| a + c).collect();
            let k = classes(&[0, 0, 0, 0]);
            let m = compute_metrics(&pred, &actual, &k, &k).unwrap();
            assert!((m.mae - c.abs()).abs() < 1e-12);
            assert!((m.rmse - c.abs()).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_actuals_are_masked_from_mape() {
        let k = classes(&[0, 0]);
        let m = compute_metrics(&[1.0, 3.0], &[0.0, 2.0], &k, &k).unwrap();
        assert_eq!(m.mape, 50.0);
        assert_eq!(m.mae, 1.0);
        assert!(compute_metrics(&[1.0, 3.0], &[0.0, 0.0], &k, &k).is_err());
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let k = classes(&[0, 0]);
        assert!(compute_metrics(&[1.0], &[1.0, 2.0], &k, &k).is_err());
        assert!(compute_metrics(&[1.0, 2.0], &[1.0, 2.0], &k[..1], &k).is_err());
        assert!(compute_metrics(&[], &[], &[], &[]).is_err());
    }
}
