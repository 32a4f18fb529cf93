//! Fractional differentiation weights and the fixed-width window transform.
//!
//! The weights of `(1 - B)^d` follow the recursion `w_0 = 1`,
//! `w_k = -w_{k-1} (d - k + 1) / k`. The fixed-width window keeps the prefix of
//! weights whose modulus stays at or above `tau` and applies that same vector as a
//! causal dot product at every time step with enough history.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::linalg::pearson;

/// Default truncation threshold for the weight series.
pub const DEFAULT_TAU: f64 = 1e-5;
/// Default cap on the weight vector length.
pub const DEFAULT_MAX_WEIGHTS: usize = 1_000_000;

#[derive(Debug, Error, PartialEq)]
pub enum FracdiffError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("weights for d={d} still at or above tau={tau} after {max_len} terms")]
    NonConvergence { d: f64, tau: f64, max_len: usize },
    #[error("series of length {len} is too short for a window of {window} weights")]
    SeriesTooShort { len: usize, window: usize },
    #[error("correlation undefined: an aligned vector has zero variance")]
    DegenerateVariance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FracdiffWeights {
    d: f64,
    tau: f64,
    weights: Vec<f64>,
}

impl FracdiffWeights {
    pub fn d(&self) -> f64 {
        self.d
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// `w_0 .. w_{l*}`, most recent lag first.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Index of the last retained weight, `l*`.
    pub fn cutoff(&self) -> usize {
        self.weights.len() - 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FracdiffSeries {
    pub source_length: usize,
    pub d: f64,
    pub tau: f64,
    /// Source index of `values[0]`; equal to the weight cutoff.
    pub start_index: usize,
    pub values: Vec<f64>,
}

impl FracdiffSeries {
    /// Transformed value at source index `t`, if one was emitted.
    pub fn at(&self, t: usize) -> Option<f64> {
        t.checked_sub(self.start_index).and_then(|i| self.values.get(i).copied())
    }
}

pub fn generate_weights(d: f64, tau: f64, max_len: usize) -> Result<FracdiffWeights, FracdiffError> {
    if !(d.is_finite() && d >= 0.0) {
        return Err(FracdiffError::InvalidParameter(format!("d must be finite and >= 0, got {d}")));
    }
    if !(tau.is_finite() && tau > 0.0) {
        return Err(FracdiffError::InvalidParameter(format!("tau must be > 0, got {tau}")));
    }
    if max_len == 0 {
        return Err(FracdiffError::InvalidParameter("max_len must be >= 1".into()));
    }
    let mut weights = vec![1.0];
    let mut k = 1usize;
    loop {
        let prev = weights[k - 1];
        let next = -prev * (d - k as f64 + 1.0) / k as f64;
        // integer d hits an exact zero here and terminates
        if next.abs() < tau {
            break;
        }
        if weights.len() == max_len {
            return Err(FracdiffError::NonConvergence { d, tau, max_len });
        }
        weights.push(next);
        k += 1;
    }
    Ok(FracdiffWeights { d, tau, weights })
}

pub fn ffd_transform(series: &[f64], weights: &FracdiffWeights) -> Result<FracdiffSeries, FracdiffError> {
    ffd_transform_with(series, weights, Execution::Sequential)
}

/// Fixed-width window transform. Each output is a dot product summed in lag
/// order `k = 0..=l*`, so the result does not depend on `exec`.
pub fn ffd_transform_with(
    series: &[f64],
    weights: &FracdiffWeights,
    exec: Execution,
) -> Result<FracdiffSeries, FracdiffError> {
    let w = weights.weights();
    let cutoff = weights.cutoff();
    if series.len() <= cutoff {
        return Err(FracdiffError::SeriesTooShort { len: series.len(), window: w.len() });
    }
    let values = exec.map_range(series.len() - cutoff, |i| {
        let t = i + cutoff;
        w.iter().enumerate().fold(0.0, |acc, (k, wk)| acc + wk * series[t - k])
    });
    Ok(FracdiffSeries { source_length: series.len(), d: weights.d(), tau: weights.tau(), start_index: cutoff, values })
}

/// Pearson correlation between the source series and its transform over the
/// indices where the transform is defined.
pub fn memory_correlation(original: &[f64], transformed: &FracdiffSeries) -> Result<f64, FracdiffError> {
    let start = transformed.start_index;
    let end = (start + transformed.values.len()).min(original.len());
    if end < start + 3 {
        return Err(FracdiffError::SeriesTooShort { len: end.saturating_sub(start), window: 3 });
    }
    let n = end - start;
    pearson(&original[start..end], &transformed.values[..n]).ok_or(FracdiffError::DegenerateVariance)
}

/// Writes `k,weight` rows for audit.
pub fn write_weights_csv<W: std::io::Write>(weights: &FracdiffWeights, writer: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["k", "weight"])?;
    for (k, v) in weights.weights().iter().enumerate() {
        w.write_record([k.to_string(), format!("{v:e}")])?;
    }
    w.flush()?;
    Ok(())
}
