//! Augmented Dickey-Fuller test (constant, no trend), ACF/PACF, and the sweep
//! over fractional orders used to find the smallest stationary `d`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::fracdiff::{self, FracdiffError, DEFAULT_MAX_WEIGHTS};
use crate::linalg::{cholesky, cholesky_inverse_diag, cholesky_solve, Matrix};

#[derive(Debug, Error, PartialEq)]
pub enum StationarityError {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("singular regression matrix")]
    SingularRegression,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("no d in the grid rejects the unit root")]
    NoPassingD,
    #[error(transparent)]
    Fracdiff(#[from] FracdiffError),
}

/// A sweep row that could not be evaluated, tagged with its order.
#[derive(Debug, Error, PartialEq)]
#[error("d={d}: {source}")]
pub struct SweepError {
    pub d: f64,
    #[source]
    pub source: StationarityError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdfResult {
    pub statistic: f64,
    /// Lagged differences in the final regression.
    pub lags: usize,
    /// Upper bound searched by AIC.
    pub max_lags: usize,
    pub n_obs: usize,
    pub critical_95: f64,
    pub reject_unit_root: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DSweepRow {
    pub d: f64,
    pub adf_statistic: f64,
    pub correlation: f64,
    pub critical_95: f64,
    pub passes: bool,
    /// Weight cutoff `l*` used for this row.
    pub window: usize,
    pub lags: usize,
    pub n_obs: usize,
}

/// 5% critical value of the constant-only ADF test (MacKinnon 2010 response surface).
pub fn adf_critical_95(n_obs: usize) -> f64 {
    let inv = 1.0 / n_obs as f64;
    -2.86154 - 2.8903 * inv - 4.234 * inv * inv - 40.040 * inv * inv * inv
}

/// Schwert's rule, `floor(12 (n/100)^{1/4})`.
pub fn schwert_max_lags(n: usize) -> usize {
    (12.0 * (n as f64 / 100.0).powf(0.25)).floor() as usize
}

/// Design for `Δy_t = α + γ y_{t-1} + Σ_{i=1..p} β_i Δy_{t-i}` over
/// `t = first..n-1` (level indexing), columns `[1, y_{t-1}, Δy_{t-1}, .., Δy_{t-p}]`.
fn adf_design(y: &[f64], p: usize, first: usize) -> (Matrix, Vec<f64>) {
    let n = y.len();
    let rows = n - first;
    let cols = 2 + p;
    let mut x = Matrix::zeros(rows, cols);
    let mut target = Vec::with_capacity(rows);
    for (r, t) in (first..n).enumerate() {
        target.push(y[t] - y[t - 1]);
        let row = x.row_mut(r);
        row[0] = 1.0;
        row[1] = y[t - 1];
        for i in 1..=p {
            row[1 + i] = y[t - i] - y[t - i - 1];
        }
    }
    (x, target)
}

struct OlsFit {
    rss: f64,
    beta: Vec<f64>,
    /// `[(X'X)^-1]_{11}`.
    inv_gamma: f64,
}

/// OLS via normal equations on a prefix (`k` leading columns) of the cross products.
fn ols_from_cross(xtx: &Matrix, xty: &[f64], yty: f64, k: usize, n: usize) -> Result<OlsFit, StationarityError> {
    let idx: Vec<usize> = (0..k).collect();
    let sub = xtx.select_rows(&idx).select_columns(&idx);
    let l = cholesky(&sub).ok_or(StationarityError::SingularRegression)?;
    let beta = cholesky_solve(&l, &xty[..k]);
    let fitted: f64 = beta.iter().zip(&xty[..k]).map(|(b, c)| b * c).sum();
    let rss = (yty - fitted).max(0.0);
    let dof = n as f64 - k as f64;
    if dof <= 0.0 {
        return Err(StationarityError::DegenerateInput("no residual degrees of freedom".into()));
    }
    let inv_gamma = cholesky_inverse_diag(&l, 1);
    Ok(OlsFit { rss, beta, inv_gamma })
}

fn cross_products(x: &Matrix, y: &[f64]) -> (Matrix, Vec<f64>, f64) {
    let xtx = x.t_matmul(x);
    let xty: Vec<f64> = (0..x.cols()).map(|j| (0..x.rows()).fold(0.0, |acc, i| acc + x[(i, j)] * y[i])).collect();
    let yty = y.iter().fold(0.0, |acc, v| acc + v * v);
    (xtx, xty, yty)
}

/// ADF test with AIC lag selection up to `max_lags` (Schwert's rule when `None`).
///
/// All candidate lag orders are compared on the common sample that drops the
/// first `max_lags + 1` observations; the chosen order is then refit on every
/// usable observation.
pub fn adf_test(series: &[f64], max_lags: Option<usize>) -> Result<AdfResult, StationarityError> {
    let n = series.len();
    if series.iter().any(|v| !v.is_finite()) {
        return Err(StationarityError::DegenerateInput("non-finite value".into()));
    }
    let max_lags = max_lags.unwrap_or_else(|| schwert_max_lags(n));
    if n < max_lags + 10 {
        return Err(StationarityError::DegenerateInput(format!(
            "length {n} is below max_lags + 10 = {}",
            max_lags + 10
        )));
    }
    let first = series[0];
    if series.iter().all(|&v| v == first) {
        return Err(StationarityError::DegenerateInput("constant series".into()));
    }

    let lags = if max_lags == 0 {
        0
    } else {
        let (x, y) = adf_design(series, max_lags, max_lags + 1);
        let (xtx, xty, yty) = cross_products(&x, &y);
        let nobs = y.len();
        let mut best: Option<(f64, usize)> = None;
        for p in 0..=max_lags {
            let k = 2 + p;
            let fit = match ols_from_cross(&xtx, &xty, yty, k, nobs) {
                Ok(f) => f,
                Err(StationarityError::SingularRegression) => continue,
                Err(e) => return Err(e),
            };
            if fit.rss <= 0.0 {
                continue;
            }
            let aic = nobs as f64 * (fit.rss / nobs as f64).ln() + 2.0 * k as f64;
            if best.is_none_or(|(b, _)| aic < b) {
                best = Some((aic, p));
            }
        }
        best.map(|(_, p)| p).unwrap_or(0)
    };

    let (x, y) = adf_design(series, lags, lags + 1);
    let (xtx, xty, yty) = cross_products(&x, &y);
    let nobs = y.len();
    let fit = ols_from_cross(&xtx, &xty, yty, 2 + lags, nobs)?;
    // residuals taken directly; `y'y - b'X'y` cancels badly near a perfect fit
    let rss: f64 = (0..nobs)
        .map(|i| {
            let e = y[i] - x.row(i).iter().zip(&fit.beta).map(|(a, b)| a * b).sum::<f64>();
            e * e
        })
        .sum();
    let scale = y.iter().map(|v| v * v).sum::<f64>().max(f64::MIN_POSITIVE);
    if rss <= 1e-20 * scale {
        return Err(StationarityError::DegenerateInput("regression fits exactly; t-ratio undefined".into()));
    }
    let t_gamma = fit.beta[1] / (rss / (nobs - 2 - lags) as f64 * fit.inv_gamma).sqrt();
    let critical_95 = adf_critical_95(nobs);
    Ok(AdfResult {
        statistic: t_gamma,
        lags,
        max_lags,
        n_obs: nobs,
        critical_95,
        reject_unit_root: t_gamma < critical_95,
    })
}

/// Evaluates one order: weights, transform, ADF, memory correlation.
pub fn sweep_row(series: &[f64], d: f64, tau: f64) -> Result<DSweepRow, StationarityError> {
    let weights = fracdiff::generate_weights(d, tau, DEFAULT_MAX_WEIGHTS)?;
    let transformed = fracdiff::ffd_transform(series, &weights)?;
    let adf = adf_test(&transformed.values, None)?;
    let correlation = fracdiff::memory_correlation(series, &transformed)?;
    Ok(DSweepRow {
        d,
        adf_statistic: adf.statistic,
        correlation,
        critical_95: adf.critical_95,
        passes: adf.reject_unit_root,
        window: weights.cutoff(),
        lags: adf.lags,
        n_obs: adf.n_obs,
    })
}

fn validate_grid(d_grid: &[f64]) -> Result<(), StationarityError> {
    if d_grid.is_empty() {
        return Err(StationarityError::InvalidParameter("empty d grid".into()));
    }
    if d_grid.iter().any(|d| !(0.0..=1.0).contains(d)) {
        return Err(StationarityError::InvalidParameter("d grid values must lie in [0, 1]".into()));
    }
    if d_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(StationarityError::InvalidParameter("d grid must be strictly ascending".into()));
    }
    Ok(())
}

/// One outcome per grid value, in grid order. The caller chooses whether to log
/// the series first.
pub fn d_sweep(
    series: &[f64],
    d_grid: &[f64],
    tau: f64,
    exec: Execution,
) -> Result<Vec<Result<DSweepRow, SweepError>>, StationarityError> {
    validate_grid(d_grid)?;
    Ok(exec.map(d_grid, |&d| sweep_row(series, d, tau).map_err(|source| SweepError { d, source })))
}

/// `0, step, 2·step, …` capped at 1, always ending with 1.
pub fn d_grid(step: f64) -> Result<Vec<f64>, StationarityError> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(StationarityError::InvalidParameter(format!("grid step {step} outside (0, 1]")));
    }
    let n = (1.0 / step + 1e-9).floor() as usize;
    let mut grid: Vec<f64> = (0..=n).map(|i| ((i as f64 * step) * 1e12).round() / 1e12).collect();
    if *grid.last().expect("non-empty") < 1.0 - 1e-12 {
        grid.push(1.0);
    }
    Ok(grid)
}

/// Smallest grid order whose transform rejects the unit root.
///
/// Orders whose weight window is longer than the series cannot be evaluated and
/// are skipped; any other failure is returned.
pub fn minimal_d(series: &[f64], tau: f64, grid_step: f64) -> Result<f64, StationarityError> {
    if !(grid_step > 0.0 && grid_step <= 0.5) && grid_step != 1.0 {
        return Err(StationarityError::InvalidParameter(format!("grid step {grid_step} outside (0, 0.5]")));
    }
    for d in d_grid(grid_step)? {
        match sweep_row(series, d, tau) {
            Ok(row) if row.passes => return Ok(d),
            Ok(_) => {}
            Err(StationarityError::Fracdiff(FracdiffError::SeriesTooShort { .. }))
            | Err(StationarityError::Fracdiff(FracdiffError::NonConvergence { .. })) => {
                log::debug!("d={d}: window longer than the series, skipped");
            }
            Err(e) => return Err(e),
        }
    }
    Err(StationarityError::NoPassingD)
}

/// Sample ACF (autocovariances over the lag-0 value, denominator `n`) and PACF by
/// Durbin-Levinson. Both have length `n_lags + 1` and start with 1.
pub fn acf_pacf(series: &[f64], n_lags: usize) -> Result<(Vec<f64>, Vec<f64>), StationarityError> {
    let n = series.len();
    if n_lags == 0 || n <= n_lags + 1 {
        return Err(StationarityError::DegenerateInput(format!("length {n} too short for {n_lags} lags")));
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = series.iter().map(|v| v - mean).collect();
    let gamma0: f64 = centered.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if gamma0 <= 0.0 {
        return Err(StationarityError::DegenerateInput("constant series".into()));
    }
    let acf: Vec<f64> = (0..=n_lags)
        .map(|k| {
            let c: f64 = (k..n).map(|t| centered[t] * centered[t - k]).sum::<f64>() / n as f64;
            c / gamma0
        })
        .collect();

    let mut pacf = vec![1.0; n_lags + 1];
    let mut phi = vec![0.0; n_lags + 1];
    let mut prev = vec![0.0; n_lags + 1];
    let mut v = 1.0;
    for k in 1..=n_lags {
        let mut num = acf[k];
        for j in 1..k {
            num -= prev[j] * acf[k - j];
        }
        let kk = num / v;
        phi[k] = kk;
        for j in 1..k {
            phi[j] = prev[j] - kk * prev[k - j];
        }
        v *= 1.0 - kk * kk;
        pacf[k] = kk;
        prev[..=k].copy_from_slice(&phi[..=k]);
    }
    Ok((acf, pacf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    fn walk(n: usize, seed: u64) -> Vec<f64> {
        let mut acc = 0.0;
        noise(n, seed)
            .into_iter()
            .map(|e| {
                acc += e;
                acc
            })
            .collect()
    }

    #[test]
    fn critical_value_tends_to_constant_only_limit() {
        assert!((adf_critical_95(1_000_000) + 2.8618).abs() < 0.01);
        assert!(adf_critical_95(100) < adf_critical_95(10_000));
    }

    #[test]
    fn random_walk_vs_white_noise() {
        let rw = adf_test(&walk(2000, 11), None).unwrap();
        assert!(!rw.reject_unit_root && rw.statistic > -2.8618, "{rw:?}");
        let wn = adf_test(&noise(2000, 12), None).unwrap();
        assert!(wn.statistic < -10.0, "{wn:?}");
        assert_eq!(rw.max_lags, schwert_max_lags(2000));
    }

    #[test]
    fn two_regressor_micro_case_matches_closed_form() {
        let y = [1.0, 3.0, 2.0, 5.0, 4.0, 6.0, 5.0, 8.0, 7.0, 9.0, 8.5, 10.0];
        let res = adf_test(&y, Some(0)).unwrap();
        // closed-form simple regression of Δy on y_{t-1}
        let xs: Vec<f64> = y[..y.len() - 1].to_vec();
        let ds: Vec<f64> = y.windows(2).map(|w| w[1] - w[0]).collect();
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let md = ds.iter().sum::<f64>() / n;
        let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let sxd: f64 = xs.iter().zip(&ds).map(|(x, d)| (x - mx) * (d - md)).sum();
        let slope = sxd / sxx;
        let icpt = md - slope * mx;
        let rss: f64 = xs.iter().zip(&ds).map(|(x, d)| (d - icpt - slope * x).powi(2)).sum();
        let t = slope / (rss / (n - 2.0) / sxx).sqrt();
        assert!((res.statistic - t).abs() < 1e-9, "{} vs {t}", res.statistic);
        assert_eq!(res.n_obs, 11);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(adf_test(&[3.0; 50], Some(1)), Err(StationarityError::DegenerateInput(_))));
        assert!(matches!(adf_test(&[1.0, 2.0, 3.0], Some(1)), Err(StationarityError::DegenerateInput(_))));
        let alt: Vec<f64> = (0..10).map(|i| if i % 2 == 0 { 1.0 } else { 2.0 }).collect();
        assert!(matches!(adf_test(&alt, Some(0)), Err(StationarityError::DegenerateInput(_))));
    }

    #[test]
    fn statistic_is_affine_invariant() {
        let y = walk(600, 5);
        let base = adf_test(&y, None).unwrap();
        let z: Vec<f64> = y.iter().map(|v| -3.5 * v + 120.0).collect();
        let other = adf_test(&z, None).unwrap();
        assert_eq!(base.lags, other.lags);
        assert!((base.statistic - other.statistic).abs() < 1e-8);
    }

    #[test]
    fn grid_construction() {
        let g = d_grid(0.1).unwrap();
        assert_eq!(g.len(), 11);
        assert_eq!(g[3], 0.3);
        assert_eq!(d_grid(1.0).unwrap(), vec![0.0, 1.0]);
        assert_eq!(d_grid(0.3).unwrap(), vec![0.0, 0.3, 0.6, 0.9, 1.0]);
        assert!(d_grid(0.0).is_err());
    }

    #[test]
    fn sweep_endpoints_on_random_walk() {
        let y = walk(1500, 21);
        let rows = d_sweep(&y, &[0.0, 1.0], 1e-4, Execution::default()).unwrap();
        let r0 = rows[0].as_ref().unwrap();
        let r1 = rows[1].as_ref().unwrap();
        assert!(!r0.passes && r1.passes);
        assert_eq!(r0.correlation, 1.0);
        assert!(d_sweep(&y, &[0.5, 0.2], 1e-4, Execution::default()).is_err());
    }

    #[test]
    fn sweep_rows_carry_their_order_on_failure() {
        let y = walk(300, 2);
        let rows = d_sweep(&y, &[0.1, 1.0], 1e-5, Execution::Sequential).unwrap();
        let err = rows[0].as_ref().unwrap_err();
        assert_eq!(err.d, 0.1);
        assert!(matches!(err.source, StationarityError::Fracdiff(FracdiffError::SeriesTooShort { .. })));
        assert!(rows[1].is_ok());
    }

    #[test]
    fn minimal_d_white_noise_and_two_point_grid() {
        let wn = noise(1000, 3);
        assert_eq!(minimal_d(&wn, 1e-4, 0.1).unwrap(), 0.0);
        let y = walk(1500, 21);
        assert_eq!(minimal_d(&y, 1e-4, 1.0).unwrap(), 1.0);
        assert!(minimal_d(&y, 1e-4, 0.7).is_err());
    }

    #[test]
    fn acf_pacf_of_ar1() {
        let e = noise(5000, 8);
        let mut x = vec![0.0; 5000];
        for t in 1..5000 {
            x[t] = 0.8 * x[t - 1] + e[t];
        }
        let (acf, pacf) = acf_pacf(&x, 5).unwrap();
        assert_eq!(acf[0], 1.0);
        assert_eq!(pacf[0], 1.0);
        assert!((acf[1] - 0.8).abs() < 0.05, "{}", acf[1]);
        assert!(pacf[2].abs() < 0.05, "{}", pacf[2]);
        assert!((pacf[1] - acf[1]).abs() < 1e-15);
    }

    #[test]
    fn acf_of_white_noise_inside_bartlett_band() {
        let e = noise(2000, 9);
        let (acf, _) = acf_pacf(&e, 20).unwrap();
        let band = 3.0 / (2000f64).sqrt();
        assert!(acf[1..].iter().all(|a| a.abs() < band));
        assert!(acf_pacf(&[1.0; 30], 3).is_err());
        assert!(acf_pacf(&e[..4], 3).is_err());
    }
}
