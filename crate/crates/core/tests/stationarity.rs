mod common;

use common::{gaussian, ols_t_ratio, random_walk, rng, white_noise};
use ffdlab::stationarity::{acf_pacf, adf_critical_95, adf_test, d_grid, d_sweep, minimal_d, schwert_max_lags};
use ffdlab::Execution;
use proptest::prelude::*;

/// Rows `[1, y_{t-1}, Δy_{t-1}..Δy_{t-p}]` and targets `Δy_t` for `t = first..n-1`.
fn design(y: &[f64], p: usize, first: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rows = Vec::new();
    let mut target = Vec::new();
    for t in first..y.len() {
        let mut r = vec![1.0, y[t - 1]];
        r.extend((1..=p).map(|i| y[t - i] - y[t - i - 1]));
        rows.push(r);
        target.push(y[t] - y[t - 1]);
    }
    (rows, target)
}

fn rss(rows: &[Vec<f64>], y: &[f64]) -> f64 {
    use nalgebra::{DMatrix, DVector};
    let x = DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j]);
    let yv = DVector::from_column_slice(y);
    let beta = x.clone().svd(true, true).solve(&yv, 1e-14).unwrap();
    (&yv - &x * beta).norm_squared()
}

/// AIC over `0..=m` on the sample that drops `m + 1` observations, then the
/// t-ratio of the level coefficient refit on every usable row.
fn adf_oracle(y: &[f64], m: usize) -> (usize, f64) {
    let mut best = (f64::INFINITY, 0);
    for p in 0..=m {
        let (rows, target) = design(y, p, m + 1);
        let rows: Vec<Vec<f64>> = rows.into_iter().collect();
        let n = target.len() as f64;
        let aic = n * (rss(&rows, &target) / n).ln() + 2.0 * (p + 2) as f64;
        if aic < best.0 {
            best = (aic, p);
        }
    }
    let p = best.1;
    let (rows, target) = design(y, p, p + 1);
    (p, ols_t_ratio(&rows, &target, 1))
}

fn ar1(n: usize, phi: f64, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    let mut x = 0.0;
    (0..n)
        .map(|_| {
            x = phi * x + gaussian(&mut r);
            x
        })
        .collect()
}

#[test]
fn no_lag_statistic_matches_least_squares() {
    for seed in 0..5 {
        let y = random_walk(400, seed);
        let got = adf_test(&y, Some(0)).unwrap();
        let (rows, target) = design(&y, 0, 1);
        let want = ols_t_ratio(&rows, &target, 1);
        assert_eq!(got.lags, 0);
        assert_eq!(got.n_obs, 399);
        assert!((got.statistic - want).abs() < 1e-9 * want.abs().max(1.0), "{} vs {want}", got.statistic);
    }
}

#[test]
fn lag_selection_matches_an_independent_aic_search() {
    for (seed, phi) in [(1u64, 0.0), (2, 0.6), (3, 0.95), (4, -0.4)] {
        // an AR(2) innovation structure so the search has something to find
        let e = ar1(600, phi, seed);
        let y: Vec<f64> = e
            .iter()
            .scan(0.0, |acc, v| {
                *acc += v;
                Some(*acc)
            })
            .collect();
        let got = adf_test(&y, Some(6)).unwrap();
        let (lags, stat) = adf_oracle(&y, 6);
        assert_eq!(got.lags, lags, "seed {seed}");
        assert!((got.statistic - stat).abs() < 1e-8 * stat.abs().max(1.0), "{} vs {stat}", got.statistic);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn statistic_is_affine_invariant(seed in 0u64..10_000, a in 0.01f64..100.0, b in -1e3f64..1e3) {
        let y = random_walk(300, seed);
        let z: Vec<f64> = y.iter().map(|v| a * v + b).collect();
        let s1 = adf_test(&y, None).unwrap();
        let s2 = adf_test(&z, None).unwrap();
        prop_assert_eq!(s1.lags, s2.lags);
        prop_assert!((s1.statistic - s2.statistic).abs() < 1e-7 * s1.statistic.abs().max(1.0));
    }

    #[test]
    fn acf_and_pacf_match_direct_formulas(seed in 0u64..10_000, lags in 1usize..8) {
        use nalgebra::{DMatrix, DVector};
        let x = ar1(200, 0.5, seed);
        let (acf, pacf) = acf_pacf(&x, lags).unwrap();
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        let c = |k: usize| (k..x.len()).map(|t| (x[t] - m) * (x[t - k] - m)).sum::<f64>() / n;
        let oracle: Vec<f64> = (0..=lags).map(|k| c(k) / c(0)).collect();
        for k in 0..=lags {
            prop_assert!((acf[k] - oracle[k]).abs() < 1e-12);
        }
        // PACF at k is the last Yule-Walker coefficient of an order-k fit
        prop_assert_eq!(pacf[0], 1.0);
        for k in 1..=lags {
            let r = DMatrix::from_fn(k, k, |i, j| oracle[i.abs_diff(j)]);
            let rhs = DVector::from_fn(k, |i, _| oracle[i + 1]);
            let phi = r.lu().solve(&rhs).unwrap();
            prop_assert!((pacf[k] - phi[k - 1]).abs() < 1e-9, "k={} {} vs {}", k, pacf[k], phi[k - 1]);
        }
    }
}

#[test]
fn separates_stationary_from_integrated_series() {
    for seed in 0..4 {
        let walk = adf_test(&random_walk(2000, seed), None).unwrap();
        assert!(!walk.reject_unit_root, "walk {seed}: {}", walk.statistic);
        let noise = adf_test(&white_noise(2000, seed), None).unwrap();
        assert!(noise.reject_unit_root, "noise {seed}: {}", noise.statistic);
        let ar = adf_test(&ar1(2000, 0.8, seed), None).unwrap();
        assert!(ar.reject_unit_root);
    }
}

#[test]
fn critical_value_and_lag_rule() {
    assert!((adf_critical_95(1_000_000) + 2.86154).abs() < 1e-5);
    assert!(adf_critical_95(100) < adf_critical_95(1000));
    assert_eq!(schwert_max_lags(100), 12);
    assert_eq!(schwert_max_lags(1600), 24);
}

#[test]
fn rejects_degenerate_input() {
    assert!(adf_test(&[1.0; 100], None).is_err());
    assert!(adf_test(&[1.0, 2.0, f64::NAN, 3.0], Some(0)).is_err());
    assert!(adf_test(&random_walk(15, 1), Some(12)).is_err());
    // exact linear trend has zero residual variance
    let line: Vec<f64> = (0..200).map(|i| i as f64).collect();
    assert!(adf_test(&line, Some(0)).is_err());
}

#[test]
fn sweep_is_ordered_and_execution_independent() {
    let y = random_walk(3000, 11);
    let grid = d_grid(0.1).unwrap();
    assert_eq!(grid.len(), 11);
    let a = d_sweep(&y, &grid, 1e-3, Execution::Sequential).unwrap();
    let b = d_sweep(&y, &grid, 1e-3, Execution::Parallel).unwrap();
    assert_eq!(format!("{a:?}"), format!("{b:?}"));
    let rows: Vec<_> = a.into_iter().map(|r| r.unwrap()).collect();
    assert!(rows.iter().zip(&grid).all(|(r, d)| r.d == *d));
    assert!(!rows[0].passes && rows[10].passes);
    assert!(d_sweep(&y, &[0.5, 0.2], 1e-3, Execution::Sequential).is_err());
}

#[test]
fn white_noise_needs_no_differencing() {
    let x = white_noise(2000, 4);
    assert_eq!(minimal_d(&x, 1e-3, 0.05).unwrap(), 0.0);
    let walk = random_walk(3000, 4);
    let d = minimal_d(&walk, 1e-3, 0.05).unwrap();
    assert!(d > 0.0 && d <= 1.0);
}
