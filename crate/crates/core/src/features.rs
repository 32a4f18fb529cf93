//! Technical-indicator features, z-score normalization, PCA, and assembly of
//! the labeled train/test dataset.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::fracdiff::FracdiffSeries;
use crate::labeling::LabelEvent;
use crate::linalg::{symmetric_eigen, Matrix};
use crate::market_data::Bar;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("series of length {len} too short for indicator warm-up")]
    SeriesTooShort { len: usize },
    #[error("every column is constant over the fit rows")]
    AllColumnsConstant,
    #[error("invalid fit rows: {0}")]
    InvalidFitRows(String),
    #[error("requested {requested} components but at most {max} are allowed")]
    TooManyComponents { requested: usize, max: usize },
    #[error("requested {requested} components but the fit rows have rank {rank}")]
    RankDeficient { requested: usize, rank: usize },
    #[error("features and labels cannot be aligned: {0}")]
    AlignmentMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Rows keyed by bar index, named columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub column_names: Vec<String>,
    /// Bar index of each row, ascending.
    pub row_index: Vec<usize>,
    pub values: Matrix,
}

impl FeatureMatrix {
    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn cols(&self) -> usize {
        self.values.cols()
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.column_names.iter().position(|c| c == name)?;
        Some(self.values.column(j))
    }

    /// Value of column `name` at bar `t`.
    pub fn at(&self, t: usize, name: &str) -> Option<f64> {
        let j = self.column_names.iter().position(|c| c == name)?;
        let i = self.row_index.binary_search(&t).ok()?;
        Some(self.values[(i, j)])
    }

    fn select_rows(&self, idx: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            column_names: self.column_names.clone(),
            row_index: idx.iter().map(|&i| self.row_index[i]).collect(),
            values: self.values.select_rows(idx),
        }
    }
}

/// A causal per-bar feature. Values before warm-up are `NaN`.
pub trait Indicator: Send + Sync {
    fn name(&self) -> String;
    fn compute(&self, bars: &[Bar]) -> Vec<f64>;
}

pub fn sma(xs: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![f64::NAN; xs.len()];
    if n == 0 || xs.len() < n {
        return out;
    }
    for t in (n - 1)..xs.len() {
        out[t] = xs[t + 1 - n..=t].iter().sum::<f64>() / n as f64;
    }
    out
}

/// EMA with `α = 2/(n+1)`, seeded by the SMA of the first `n` finite values.
/// Leading `NaN`s in the input are skipped.
pub fn ema(xs: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![f64::NAN; xs.len()];
    let Some(first) = xs.iter().position(|v| v.is_finite()) else {
        return out;
    };
    if n == 0 || xs.len() < first + n {
        return out;
    }
    let alpha = 2.0 / (n as f64 + 1.0);
    let seed_at = first + n - 1;
    let mut prev = xs[first..=seed_at].iter().sum::<f64>() / n as f64;
    out[seed_at] = prev;
    for t in (seed_at + 1)..xs.len() {
        prev = alpha * xs[t] + (1.0 - alpha) * prev;
        out[t] = prev;
    }
    out
}

fn rolling<F: Fn(&[f64]) -> f64>(xs: &[f64], n: usize, f: F) -> Vec<f64> {
    let mut out = vec![f64::NAN; xs.len()];
    if xs.len() >= n {
        for t in (n - 1)..xs.len() {
            out[t] = f(&xs[t + 1 - n..=t]);
        }
    }
    out
}

fn closes(bars: &[Bar]) -> Vec<f64> {
    bars.iter().map(|b| b.close).collect()
}

/// Built-in indicators. Each variant produces one column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Builtin {
    Sma10,
    Ema10,
    MacdLine,
    MacdSignal,
    MacdHist,
    Rsi14,
    StochK14,
    StochD3,
    BollUpper20,
    BollMiddle20,
    BollLower20,
    Atr14,
    Roc10,
    Obv,
    Cci20,
    WillR14,
}

impl Builtin {
    pub const DEFAULT16: [Builtin; 16] = [
        Builtin::Sma10,
        Builtin::Ema10,
        Builtin::MacdLine,
        Builtin::MacdSignal,
        Builtin::MacdHist,
        Builtin::Rsi14,
        Builtin::StochK14,
        Builtin::StochD3,
        Builtin::BollUpper20,
        Builtin::BollMiddle20,
        Builtin::BollLower20,
        Builtin::Atr14,
        Builtin::Roc10,
        Builtin::Obv,
        Builtin::Cci20,
        Builtin::WillR14,
    ];
}

fn macd_parts(c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let fast = ema(c, 12);
    let slow = ema(c, 26);
    let line: Vec<f64> = fast.iter().zip(&slow).map(|(f, s)| f - s).collect();
    let signal = ema(&line, 9);
    (line, signal)
}

fn stoch_k(bars: &[Bar], n: usize) -> Vec<f64> {
    let mut out = vec![f64::NAN; bars.len()];
    for t in (n.saturating_sub(1))..bars.len() {
        let w = &bars[t + 1 - n..=t];
        let hh = w.iter().map(|b| b.high).fold(f64::MIN, f64::max);
        let ll = w.iter().map(|b| b.low).fold(f64::MAX, f64::min);
        out[t] = if hh > ll { 100.0 * (bars[t].close - ll) / (hh - ll) } else { 50.0 };
    }
    out
}

fn bollinger(c: &[f64], n: usize, k: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mid = sma(c, n);
    let sd = rolling(c, n, |w| {
        let m = w.iter().sum::<f64>() / w.len() as f64;
        (w.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / w.len() as f64).sqrt()
    });
    let up = mid.iter().zip(&sd).map(|(m, s)| m + k * s).collect();
    let lo = mid.iter().zip(&sd).map(|(m, s)| m - k * s).collect();
    (up, mid, lo)
}

/// Wilder RSI; a window with no movement at all reads 50.
fn rsi(c: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![f64::NAN; c.len()];
    if c.len() <= n {
        return out;
    }
    let value = |g: f64, l: f64| {
        if g + l == 0.0 {
            50.0
        } else if l == 0.0 {
            100.0
        } else {
            100.0 - 100.0 / (1.0 + g / l)
        }
    };
    let (mut g, mut l) = (0.0, 0.0);
    for t in 1..=n {
        let d = c[t] - c[t - 1];
        g += d.max(0.0);
        l += (-d).max(0.0);
    }
    g /= n as f64;
    l /= n as f64;
    out[n] = value(g, l);
    for t in (n + 1)..c.len() {
        let d = c[t] - c[t - 1];
        g = (g * (n as f64 - 1.0) + d.max(0.0)) / n as f64;
        l = (l * (n as f64 - 1.0) + (-d).max(0.0)) / n as f64;
        out[t] = value(g, l);
    }
    out
}

/// Wilder ATR over true ranges starting at bar 1.
fn atr(bars: &[Bar], n: usize) -> Vec<f64> {
    let mut out = vec![f64::NAN; bars.len()];
    if bars.len() <= n {
        return out;
    }
    let tr = |t: usize| {
        let b = &bars[t];
        let pc = bars[t - 1].close;
        (b.high - b.low).max((b.high - pc).abs()).max((b.low - pc).abs())
    };
    let mut a = (1..=n).map(tr).sum::<f64>() / n as f64;
    out[n] = a;
    for (t, slot) in out.iter_mut().enumerate().skip(n + 1) {
        a = (a * (n as f64 - 1.0) + tr(t)) / n as f64;
        *slot = a;
    }
    out
}

fn obv(bars: &[Bar]) -> Vec<f64> {
    let mut out = Vec::with_capacity(bars.len());
    let mut acc = 0.0;
    for (t, b) in bars.iter().enumerate() {
        if t > 0 {
            let pc = bars[t - 1].close;
            if b.close > pc {
                acc += b.volume;
            } else if b.close < pc {
                acc -= b.volume;
            }
        }
        out.push(acc);
    }
    out
}

fn cci(bars: &[Bar], n: usize) -> Vec<f64> {
    let tp: Vec<f64> = bars.iter().map(|b| (b.high + b.low + b.close) / 3.0).collect();
    rolling(&tp, n, |w| {
        let m = w.iter().sum::<f64>() / w.len() as f64;
        let md = w.iter().map(|v| (v - m).abs()).sum::<f64>() / w.len() as f64;
        let last = w[w.len() - 1];
        if md == 0.0 {
            0.0
        } else {
            (last - m) / (0.015 * md)
        }
    })
}

fn willr(bars: &[Bar], n: usize) -> Vec<f64> {
    stoch_k(bars, n).into_iter().map(|k| k - 100.0).collect()
}

impl Indicator for Builtin {
    fn name(&self) -> String {
        match self {
            Builtin::Sma10 => "sma_10",
            Builtin::Ema10 => "ema_10",
            Builtin::MacdLine => "macd",
            Builtin::MacdSignal => "macd_signal",
            Builtin::MacdHist => "macd_hist",
            Builtin::Rsi14 => "rsi_14",
            Builtin::StochK14 => "stoch_k_14",
            Builtin::StochD3 => "stoch_d_3",
            Builtin::BollUpper20 => "bb_upper_20",
            Builtin::BollMiddle20 => "bb_middle_20",
            Builtin::BollLower20 => "bb_lower_20",
            Builtin::Atr14 => "atr_14",
            Builtin::Roc10 => "roc_10",
            Builtin::Obv => "obv",
            Builtin::Cci20 => "cci_20",
            Builtin::WillR14 => "willr_14",
        }
        .to_string()
    }

    fn compute(&self, bars: &[Bar]) -> Vec<f64> {
        let c = closes(bars);
        match self {
            Builtin::Sma10 => sma(&c, 10),
            Builtin::Ema10 => ema(&c, 10),
            Builtin::MacdLine => macd_parts(&c).0,
            Builtin::MacdSignal => macd_parts(&c).1,
            Builtin::MacdHist => {
                let (line, signal) = macd_parts(&c);
                line.iter().zip(&signal).map(|(l, s)| l - s).collect()
            }
            Builtin::Rsi14 => rsi(&c, 14),
            Builtin::StochK14 => stoch_k(bars, 14),
            Builtin::StochD3 => sma(&stoch_k(bars, 14), 3),
            Builtin::BollUpper20 => bollinger(&c, 20, 2.0).0,
            Builtin::BollMiddle20 => bollinger(&c, 20, 2.0).1,
            Builtin::BollLower20 => bollinger(&c, 20, 2.0).2,
            Builtin::Atr14 => atr(bars, 14),
            Builtin::Roc10 => {
                let mut out = vec![f64::NAN; c.len()];
                for t in 10..c.len() {
                    out[t] = 100.0 * (c[t] / c[t - 10] - 1.0);
                }
                out
            }
            Builtin::Obv => obv(bars),
            Builtin::Cci20 => cci(bars, 20),
            Builtin::WillR14 => willr(bars, 14),
        }
    }
}

/// Raw price/volume columns, the fractionally differentiated close, and a list
/// of indicators.
pub struct Featurizer {
    indicators: Vec<Box<dyn Indicator>>,
}

impl Default for Featurizer {
    fn default() -> Self {
        Featurizer::default16()
    }
}

impl Featurizer {
    pub fn default16() -> Self {
        Featurizer { indicators: Builtin::DEFAULT16.iter().map(|b| Box::new(*b) as Box<dyn Indicator>).collect() }
    }

    pub fn with_indicator(mut self, indicator: Box<dyn Indicator>) -> Self {
        self.indicators.push(indicator);
        self
    }

    pub fn column_names(&self) -> Vec<String> {
        let mut names: Vec<String> =
            ["open", "high", "low", "close", "volume", "ffd_close"].iter().map(|s| s.to_string()).collect();
        names.extend(self.indicators.iter().map(|i| i.name()));
        names
    }

    /// Computes every column over the bars and keeps the rows where all are finite.
    pub fn compute(
        &self,
        bars: &[Bar],
        ffd_close: &FracdiffSeries,
        exec: Execution,
    ) -> Result<FeatureMatrix, FeatureError> {
        let n = bars.len();
        let mut columns: Vec<Vec<f64>> = vec![
            bars.iter().map(|b| b.open).collect(),
            bars.iter().map(|b| b.high).collect(),
            bars.iter().map(|b| b.low).collect(),
            bars.iter().map(|b| b.close).collect(),
            bars.iter().map(|b| b.volume).collect(),
            (0..n).map(|t| ffd_close.at(t).unwrap_or(f64::NAN)).collect(),
        ];
        columns.extend(exec.map(&self.indicators, |ind| ind.compute(bars)));
        let keep: Vec<usize> = (0..n).filter(|&t| columns.iter().all(|c| c[t].is_finite())).collect();
        if keep.is_empty() {
            return Err(FeatureError::SeriesTooShort { len: n });
        }
        let mut values = Matrix::zeros(keep.len(), columns.len());
        for (i, &t) in keep.iter().enumerate() {
            for (j, c) in columns.iter().enumerate() {
                values[(i, j)] = c[t];
            }
        }
        Ok(FeatureMatrix { column_names: self.column_names(), row_index: keep, values })
    }
}

/// Default 16-indicator set plus OHLCV and the fractionally differentiated close.
pub fn compute_indicators(bars: &[Bar], ffd_close: &FracdiffSeries) -> Result<FeatureMatrix, FeatureError> {
    Featurizer::default16().compute(bars, ffd_close, Execution::default())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnScale {
    pub name: String,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub columns: Vec<ColumnScale>,
    /// Columns constant over the fit rows, removed from the output.
    pub dropped: Vec<String>,
}

impl NormalizationParams {
    pub fn apply(&self, m: &FeatureMatrix) -> Result<FeatureMatrix, FeatureError> {
        let idx: Vec<usize> = self
            .columns
            .iter()
            .map(|c| {
                m.column_names
                    .iter()
                    .position(|n| *n == c.name)
                    .ok_or_else(|| FeatureError::AlignmentMismatch(format!("missing column {}", c.name)))
            })
            .collect::<Result<_, _>>()?;
        let mut values = m.values.select_columns(&idx);
        for i in 0..values.rows() {
            for (j, c) in self.columns.iter().enumerate() {
                values[(i, j)] = (values[(i, j)] - c.mean) / c.std;
            }
        }
        Ok(FeatureMatrix {
            column_names: self.columns.iter().map(|c| c.name.clone()).collect(),
            row_index: m.row_index.clone(),
            values,
        })
    }
}

fn check_fit_rows(m: &FeatureMatrix, fit: &std::ops::Range<usize>) -> Result<(), FeatureError> {
    if fit.is_empty() || fit.end > m.rows() {
        return Err(FeatureError::InvalidFitRows(format!("{fit:?} for {} rows", m.rows())));
    }
    Ok(())
}

/// Per-column z-score with population mean/std of `fit_rows`.
pub fn normalize(
    m: &FeatureMatrix,
    fit_rows: std::ops::Range<usize>,
) -> Result<(FeatureMatrix, NormalizationParams), FeatureError> {
    check_fit_rows(m, &fit_rows)?;
    let n = fit_rows.len() as f64;
    let mut columns = Vec::new();
    let mut dropped = Vec::new();
    for (j, name) in m.column_names.iter().enumerate() {
        let vals: Vec<f64> = fit_rows.clone().map(|i| m.values[(i, j)]).collect();
        let mean = vals.iter().sum::<f64>() / n;
        let std = (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
        if std <= 1e-12 * mean.abs().max(1.0) {
            log::warn!("column `{name}` is constant over the fit rows; dropped");
            dropped.push(name.clone());
        } else {
            columns.push(ColumnScale { name: name.clone(), mean, std });
        }
    }
    if columns.is_empty() {
        return Err(FeatureError::AllColumnsConstant);
    }
    let params = NormalizationParams { columns, dropped };
    Ok((params.apply(m)?, params))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaParams {
    pub input_columns: Vec<String>,
    /// `input_columns × n_components`, orthonormal columns.
    pub components: Matrix,
    pub means: Vec<f64>,
    /// Eigenvalues of the kept components.
    pub explained_variance: Vec<f64>,
    /// Kept eigenvalues over the trace.
    pub explained_variance_ratio: Vec<f64>,
    /// Every eigenvalue over the trace, descending.
    pub spectrum_ratio: Vec<f64>,
    pub fit_rows: usize,
}

impl PcaParams {
    pub fn n_components(&self) -> usize {
        self.components.cols()
    }

    pub fn apply(&self, m: &FeatureMatrix) -> Result<FeatureMatrix, FeatureError> {
        if m.column_names != self.input_columns {
            return Err(FeatureError::AlignmentMismatch("PCA input columns differ".into()));
        }
        let mut centered = m.values.clone();
        for i in 0..centered.rows() {
            for (v, mu) in centered.row_mut(i).iter_mut().zip(&self.means) {
                *v -= mu;
            }
        }
        Ok(FeatureMatrix {
            column_names: (1..=self.n_components()).map(|k| format!("pc_{k}")).collect(),
            row_index: m.row_index.clone(),
            values: centered.matmul(&self.components),
        })
    }
}

/// Principal components of the `fit_rows` covariance (denominator `n - 1`).
pub fn pca_fit_transform(
    m: &FeatureMatrix,
    fit_rows: std::ops::Range<usize>,
    n_components: usize,
) -> Result<(FeatureMatrix, PcaParams), FeatureError> {
    check_fit_rows(m, &fit_rows)?;
    let max = (fit_rows.len().saturating_sub(1)).min(m.cols());
    if n_components == 0 || n_components > max {
        return Err(FeatureError::TooManyComponents { requested: n_components, max });
    }
    let p = m.cols();
    let n = fit_rows.len();
    let means: Vec<f64> = (0..p).map(|j| fit_rows.clone().map(|i| m.values[(i, j)]).sum::<f64>() / n as f64).collect();
    let mut centered = Matrix::zeros(n, p);
    for (r, i) in fit_rows.clone().enumerate() {
        for j in 0..p {
            centered[(r, j)] = m.values[(i, j)] - means[j];
        }
    }
    let mut cov = centered.t_matmul(&centered);
    for v in cov.as_mut_slice() {
        *v /= (n - 1) as f64;
    }
    let (eigvals, eigvecs) = symmetric_eigen(&cov);
    let eigvals: Vec<f64> = eigvals.into_iter().map(|v| v.max(0.0)).collect();
    let trace: f64 = eigvals.iter().sum();
    let top = eigvals[0];
    let rank = eigvals.iter().filter(|&&v| v > 1e-10 * top.max(f64::MIN_POSITIVE)).count();
    if n_components > rank {
        return Err(FeatureError::RankDeficient { requested: n_components, rank });
    }
    let keep: Vec<usize> = (0..n_components).collect();
    let components = eigvecs.select_columns(&keep);
    let spectrum_ratio: Vec<f64> = eigvals.iter().map(|v| v / trace).collect();
    let params = PcaParams {
        input_columns: m.column_names.clone(),
        components,
        means,
        explained_variance: eigvals[..n_components].to_vec(),
        explained_variance_ratio: spectrum_ratio[..n_components].to_vec(),
        spectrum_ratio,
        fit_rows: n,
    };
    Ok((params.apply(m)?, params))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum SplitMode {
    Chronological,
    Random { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    /// Rows ordered train first, then test.
    pub features: FeatureMatrix,
    /// Class indices in `{0, 1, 2}`.
    pub labels: Vec<usize>,
    pub split_index: usize,
    pub split_mode: SplitMode,
    pub normalization: NormalizationParams,
    pub pca: PcaParams,
}

impl Dataset {
    pub fn train_range(&self) -> std::ops::Range<usize> {
        0..self.split_index
    }

    pub fn test_range(&self) -> std::ops::Range<usize> {
        self.split_index..self.labels.len()
    }
}

/// Aligns feature rows and events by bar index, shifts labels to class indices,
/// splits, then fits normalization and PCA on the training rows only.
pub fn assemble_dataset(
    features: &FeatureMatrix,
    events: &[LabelEvent],
    split_fraction: f64,
    split_mode: SplitMode,
    n_components: usize,
) -> Result<Dataset, FeatureError> {
    if !(split_fraction > 0.0 && split_fraction < 1.0) {
        return Err(FeatureError::InvalidParameter(format!("split fraction {split_fraction} outside (0, 1)")));
    }
    let mut by_entry = BTreeMap::new();
    for e in events {
        if by_entry.insert(e.entry_index, e.label).is_some() {
            return Err(FeatureError::AlignmentMismatch(format!("duplicate event at bar {}", e.entry_index)));
        }
    }
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (i, t) in features.row_index.iter().enumerate() {
        if let Some(l) = by_entry.get(t) {
            rows.push(i);
            labels.push(l.class_index());
        }
    }
    if rows.len() < 2 {
        return Err(FeatureError::AlignmentMismatch(format!("{} aligned rows", rows.len())));
    }
    let n = rows.len();
    let split_index = (split_fraction * n as f64).floor() as usize;
    if split_index == 0 || split_index == n {
        return Err(FeatureError::InvalidParameter(format!("split leaves an empty side ({split_index} of {n})")));
    }
    let order: Vec<usize> = match split_mode {
        SplitMode::Chronological => (0..n).collect(),
        SplitMode::Random { seed } => {
            let mut o: Vec<usize> = (0..n).collect();
            o.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let mut train = o[..split_index].to_vec();
            let mut test = o[split_index..].to_vec();
            train.sort_unstable();
            test.sort_unstable();
            train.extend(test);
            train
        }
    };
    let picked: Vec<usize> = order.iter().map(|&k| rows[k]).collect();
    let labels: Vec<usize> = order.iter().map(|&k| labels[k]).collect();
    let aligned = features.select_rows(&picked);
    let (normalized, normalization) = normalize(&aligned, 0..split_index)?;
    let (reduced, pca) = pca_fit_transform(&normalized, 0..split_index, n_components)?;
    Ok(Dataset { features: reduced, labels, split_index, split_mode, normalization, pca })
}

/// Column names that appear more than once (custom indicators may collide).
pub fn duplicate_columns(names: &[String]) -> Vec<String> {
    let mut seen = HashSet::new();
    names.iter().filter(|n| !seen.insert(n.as_str())).cloned().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fracdiff::{ffd_transform, generate_weights};
    use crate::labeling::Label;

    fn bars_from_closes(closes: &[f64]) -> Vec<Bar> {
        closes
            .iter()
            .enumerate()
            .map(|(i, &c)| Bar { timestamp: i as i64 * 600_000, open: c, high: c, low: c, close: c, volume: 5.0 })
            .collect()
    }

    fn identity_ffd(closes: &[f64]) -> FracdiffSeries {
        ffd_transform(closes, &generate_weights(0.0, 1e-5, 1).unwrap()).unwrap()
    }

    #[test]
    fn constant_prices_degenerate_indicators() {
        let c = vec![42.0; 80];
        let fm = compute_indicators(&bars_from_closes(&c), &identity_ffd(&c)).unwrap();
        assert!(fm.column("rsi_14").unwrap().iter().all(|v| *v == 50.0));
        for name in ["bb_upper_20", "bb_middle_20", "bb_lower_20"] {
            assert!(fm.column(name).unwrap().iter().all(|v| (*v - 42.0).abs() < 1e-12));
        }
        assert_eq!(fm.cols(), 22);
        // MACD signal needs 26 + 9 - 1 bars
        assert_eq!(fm.row_index[0], 33);
    }

    #[test]
    fn sma_of_linear_closes() {
        let c: Vec<f64> = (1..=50).map(f64::from).collect();
        let fm = compute_indicators(&bars_from_closes(&c), &identity_ffd(&c)).unwrap();
        assert_eq!(fm.at(49, "sma_10"), Some(45.5));
        assert_eq!(fm.at(49, "roc_10"), Some(100.0 * (50.0 / 40.0 - 1.0)));
        assert_eq!(fm.at(49, "rsi_14"), Some(100.0));
    }

    #[test]
    fn indicators_only_see_the_past() {
        let c: Vec<f64> = (0..120).map(|i| 100.0 + (i as f64 * 0.37).sin() * 4.0 + i as f64 * 0.05).collect();
        let full = compute_indicators(&bars_from_closes(&c), &identity_ffd(&c)).unwrap();
        let cut = 90;
        let pre = compute_indicators(&bars_from_closes(&c[..cut]), &identity_ffd(&c[..cut])).unwrap();
        for (i, t) in pre.row_index.iter().enumerate() {
            let j = full.row_index.binary_search(t).unwrap();
            assert_eq!(pre.values.row(i), full.values.row(j));
        }
    }

    #[test]
    fn custom_indicator_is_appended() {
        struct Range;
        impl Indicator for Range {
            fn name(&self) -> String {
                "range".into()
            }
            fn compute(&self, bars: &[Bar]) -> Vec<f64> {
                bars.iter().map(|b| b.high - b.low).collect()
            }
        }
        let c: Vec<f64> = (0..60).map(|i| 10.0 + i as f64).collect();
        let fz = Featurizer::default16().with_indicator(Box::new(Range));
        let fm = fz.compute(&bars_from_closes(&c), &identity_ffd(&c), Execution::Sequential).unwrap();
        assert_eq!(fm.column_names.last().unwrap(), "range");
        assert!(duplicate_columns(&fm.column_names).is_empty());
    }

    fn matrix(cols: &[&str], rows: &[Vec<f64>]) -> FeatureMatrix {
        FeatureMatrix {
            column_names: cols.iter().map(|s| s.to_string()).collect(),
            row_index: (0..rows.len()).collect(),
            values: Matrix::from_rows(rows),
        }
    }

    #[test]
    fn zscore_and_constant_drop() {
        let m = matrix(&["a", "k"], &[vec![1.0, 7.0], vec![2.0, 7.0], vec![3.0, 7.0], vec![10.0, 8.0]]);
        let (out, params) = normalize(&m, 0..3).unwrap();
        assert_eq!(params.dropped, vec!["k".to_string()]);
        assert_eq!(out.column_names, vec!["a".to_string()]);
        let a = out.column("a").unwrap();
        assert!((a[0] + 1.224744871391589).abs() < 1e-12);
        assert!(a[1].abs() < 1e-15);
        assert!((a[2] - 1.224744871391589).abs() < 1e-12);
        let only = matrix(&["k"], &[vec![1.0], vec![1.0]]);
        assert_eq!(normalize(&only, 0..2).unwrap_err(), FeatureError::AllColumnsConstant);
    }

    #[test]
    fn collinear_points_have_one_component() {
        let m = matrix(&["x", "y"], &(0..6).map(|i| vec![i as f64, i as f64]).collect::<Vec<_>>());
        let (_, p) = pca_fit_transform(&m, 0..6, 1).unwrap();
        let r = 1.0 / 2f64.sqrt();
        assert!((p.components[(0, 0)] - r).abs() < 1e-12 && (p.components[(1, 0)] - r).abs() < 1e-12);
        assert!((p.spectrum_ratio[0] - 1.0).abs() < 1e-12 && p.spectrum_ratio[1].abs() < 1e-12);
        assert!(matches!(pca_fit_transform(&m, 0..6, 2), Err(FeatureError::RankDeficient { rank: 1, .. })));
        assert!(matches!(pca_fit_transform(&m, 0..2, 2), Err(FeatureError::TooManyComponents { .. })));
    }

    fn events(entries: &[(usize, Label)]) -> Vec<LabelEvent> {
        entries
            .iter()
            .map(|&(t, label)| LabelEvent {
                entry_index: t,
                upper_barrier: 1.0,
                lower_barrier: 0.5,
                vertical_index: t + 1,
                touch_index: t + 1,
                label,
                intrabar_tie: false,
            })
            .collect()
    }

    fn wavy_matrix(n: usize) -> FeatureMatrix {
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let x = i as f64;
                vec![x.sin(), (0.3 * x).cos() + 0.1 * x, (x * x).sin()]
            })
            .collect();
        matrix(&["a", "b", "c"], &rows)
    }

    #[test]
    fn chronological_split_and_remap() {
        let fm = wavy_matrix(10);
        let ev = events(&(0..10).map(|t| (t, Label::Down)).collect::<Vec<_>>());
        let ds = assemble_dataset(&fm, &ev, 0.8, SplitMode::Chronological, 2).unwrap();
        assert_eq!(ds.split_index, 8);
        assert_eq!(ds.test_range().len(), 2);
        assert!(ds.labels.iter().all(|&l| l == 0));
        let train_max = ds.features.row_index[..8].iter().max().unwrap();
        assert!(ds.features.row_index[8..].iter().all(|t| t > train_max));
    }

    #[test]
    fn event_order_does_not_matter() {
        let fm = wavy_matrix(20);
        let labels = [Label::Up, Label::Flat, Label::Down];
        let ev = events(&(0..20).map(|t| (t, labels[t % 3])).collect::<Vec<_>>());
        let mut shuffled = ev.clone();
        shuffled.reverse();
        shuffled.swap(3, 11);
        let a = assemble_dataset(&fm, &ev, 0.8, SplitMode::Chronological, 2).unwrap();
        let b = assemble_dataset(&fm, &shuffled, 0.8, SplitMode::Chronological, 2).unwrap();
        assert_eq!(a, b);
        let mut dup = ev.clone();
        dup.push(ev[0].clone());
        assert!(matches!(
            assemble_dataset(&fm, &dup, 0.8, SplitMode::Chronological, 2),
            Err(FeatureError::AlignmentMismatch(_))
        ));
    }

    #[test]
    fn random_split_is_seeded() {
        let fm = wavy_matrix(30);
        let ev = events(&(0..30).map(|t| (t, Label::Up)).collect::<Vec<_>>());
        let a = assemble_dataset(&fm, &ev, 0.8, SplitMode::Random { seed: 4 }, 2).unwrap();
        let b = assemble_dataset(&fm, &ev, 0.8, SplitMode::Random { seed: 4 }, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.features.row_index, (0..30).collect::<Vec<_>>());
    }
}
