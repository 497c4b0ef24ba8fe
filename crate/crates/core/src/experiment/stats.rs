use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation with the `n − 1` denominator; 0 for `n < 2`.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    /// Mean of `a − b`.
    pub mean_diff: f64,
    pub t: f64,
    pub df: usize,
    /// Two-sided.
    pub p_value: f64,
}

/// Paired two-sided t-test of `a` against `b`. Identical differences give
/// `p = 1` when they are all zero and `p = 0` otherwise.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::DimMismatch { expected: a.len(), got: b.len() });
    }
    if a.len() < 2 {
        return Err(Error::InvalidConfig("paired t-test needs at least two pairs".into()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let (m, s, df) = (mean(&diffs), sample_std(&diffs), diffs.len() - 1);
    if s == 0.0 {
        let (t, p_value) = if m == 0.0 { (0.0, 1.0) } else { (m.signum() * f64::INFINITY, 0.0) };
        return Ok(TTest { mean_diff: m, t, df, p_value });
    }
    let t = m / (s / (diffs.len() as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, df as f64).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    Ok(TTest { mean_diff: m, t, df, p_value: (2.0 * dist.sf(t.abs())).min(1.0) })
}
