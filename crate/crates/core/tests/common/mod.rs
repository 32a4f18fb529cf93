//! Independent reference implementations and seeded fixtures shared by the
//! integration tests. Nothing here calls into the library's numerical code.
#![allow(dead_code)]

use ffdlab::linalg::Matrix;
use ffdlab::market_data::{Bar, BarSeries};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const TEN_MIN_MS: i64 = 600_000;
pub const DAY_MS: i64 = 86_400_000;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Unit-step Gaussian random walk starting at 0.
pub fn random_walk(n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    let mut x = 0.0;
    (0..n)
        .map(|_| {
            let v = x;
            x += gaussian(&mut r);
            v
        })
        .collect()
}

pub fn white_noise(n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    (0..n).map(|_| gaussian(&mut r)).collect()
}

/// Bars whose open, high and low all equal the close, ten minutes apart.
pub fn flat_bars(closes: &[f64]) -> Vec<Bar> {
    closes
        .iter()
        .enumerate()
        .map(|(i, &c)| Bar { timestamp: i as i64 * TEN_MIN_MS, open: c, high: c, low: c, close: c, volume: 1.0 })
        .collect()
}

/// Random OHLC path: open is the previous close, wicks are uniform in `[0, wick)`
/// as a fraction of the close. Prices live on a 0.01 grid so barrier ties occur.
pub fn random_ohlc(n: usize, step_sd: f64, wick: f64, r: &mut ChaCha8Rng) -> Vec<Bar> {
    let q = |x: f64| (x * 100.0).round() / 100.0;
    let mut close = 100.0;
    let mut bars = Vec::with_capacity(n);
    for i in 0..n {
        let open = if i == 0 { close } else { bars.last().map_or(close, |b: &Bar| b.close) };
        close = q((close * (1.0 + step_sd * gaussian(r))).max(1.0));
        let hi = q(open.max(close) * (1.0 + wick * r.random::<f64>()));
        let lo = q(open.min(close) * (1.0 - wick * r.random::<f64>()));
        bars.push(Bar { timestamp: i as i64 * TEN_MIN_MS, open, high: hi, low: lo, close, volume: 1.0 });
    }
    bars
}

pub fn series(bars: Vec<Bar>) -> BarSeries {
    BarSeries::new("fixture", 10, bars).expect("valid fixture")
}

/// `(1 - B)^d` coefficients from the binomial product form
/// `w_k = Π_{i=1..k} (i - 1 - d) / i`, computed term by term from scratch.
pub fn binomial_weights(d: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| (1..=k).map(|i| (i as f64 - 1.0 - d) / i as f64).product::<f64>()).collect()
}

/// Expanding-window fractional difference: every available lag is used at every
/// `t`, so no weight is ever truncated.
pub fn expanding_fracdiff(x: &[f64], d: f64) -> Vec<f64> {
    let w = binomial_weights(d, x.len());
    (0..x.len()).map(|t| (0..=t).map(|k| w[k] * x[t - k]).sum()).collect()
}

/// Zero-mean exponentially weighted volatility by direct summation over all past
/// log returns, `None` before `span`.
pub fn ema_vol_oracle(closes: &[f64], span: usize) -> Vec<Option<f64>> {
    let alpha = 2.0 / (span as f64 + 1.0);
    let r: Vec<f64> = closes.windows(2).map(|w| (w[1] / w[0]).ln()).collect();
    (0..closes.len())
        .map(|t| {
            if t < span {
                return None;
            }
            let (mut num, mut den) = (0.0, 0.0);
            for j in 1..=t {
                let wt = (1.0 - alpha).powi((t - j) as i32);
                num += wt * r[j - 1] * r[j - 1];
                den += wt;
            }
            Some((num / den).sqrt())
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NaiveTouch {
    pub label: i8,
    pub touch: usize,
    pub tie: bool,
}

/// Scans forward bar by bar. Upper is reached when the high gets to it, lower
/// when the low does. If a bar reaches both, the side closer to that bar's open
/// wins and equal distances give 0.
pub fn naive_first_touch(bars: &[Bar], entry: usize, upper: f64, lower: f64, h: usize) -> NaiveTouch {
    let mut k = entry + 1;
    while k <= entry + h {
        let b = &bars[k];
        let hit_up = b.high >= upper;
        let hit_dn = b.low <= lower;
        if hit_up && hit_dn {
            let du = upper - b.open;
            let dl = b.open - lower;
            let label = if du.abs() < dl.abs() {
                1
            } else if dl.abs() < du.abs() {
                -1
            } else {
                0
            };
            return NaiveTouch { label, touch: k, tie: true };
        }
        if hit_up {
            return NaiveTouch { label: 1, touch: k, tie: false };
        }
        if hit_dn {
            return NaiveTouch { label: -1, touch: k, tie: false };
        }
        k += 1;
    }
    NaiveTouch { label: 0, touch: entry + h, tie: false }
}

/// OLS t-ratio of coefficient `j` via nalgebra's SVD least squares.
pub fn ols_t_ratio(x_rows: &[Vec<f64>], y: &[f64], j: usize) -> f64 {
    use nalgebra::{DMatrix, DVector};
    let n = y.len();
    let k = x_rows[0].len();
    let x = DMatrix::from_fn(n, k, |i, c| x_rows[i][c]);
    let yv = DVector::from_column_slice(y);
    let beta = x.clone().svd(true, true).solve(&yv, 1e-14).expect("solvable");
    let resid = &yv - &x * &beta;
    let s2 = resid.dot(&resid) / (n - k) as f64;
    let xtx_inv = (x.transpose() * &x).try_inverse().expect("full rank");
    beta[j] / (s2 * xtx_inv[(j, j)]).sqrt()
}

/// Eigenvalues of a symmetric matrix, descending, by nalgebra.
pub fn eigenvalues_desc(m: &Matrix) -> Vec<f64> {
    let a = nalgebra::DMatrix::from_fn(m.rows(), m.cols(), |i, j| m[(i, j)]);
    let mut ev: Vec<f64> = a.symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev
}

/// Precision, recall and support per class by explicit counting.
pub fn brute_force_counts(y_true: &[usize], y_pred: &[usize], class: usize) -> (usize, usize, usize) {
    let mut tp = 0;
    let mut fp = 0;
    let mut fn_ = 0;
    for (&t, &p) in y_true.iter().zip(y_pred) {
        match (t == class, p == class) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
            _ => {}
        }
    }
    (tp, fp, fn_)
}

/// Three classes split by the argmax of a fixed random linear map, keeping only
/// points whose top two scores differ by `margin`.
pub fn separable_dataset(n: usize, dim: usize, margin: f64, seed: u64) -> (Matrix, Vec<usize>) {
    let mut r = rng(seed);
    let w: Vec<Vec<f64>> = (0..3).map(|_| (0..dim).map(|_| gaussian(&mut r)).collect()).collect();
    let mut data = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut counts = [0usize; 3];
    while labels.len() < n {
        let x: Vec<f64> = (0..dim).map(|_| gaussian(&mut r)).collect();
        let mut s: Vec<(f64, usize)> =
            w.iter().enumerate().map(|(c, wc)| (wc.iter().zip(&x).map(|(a, b)| a * b).sum(), c)).collect();
        s.sort_by(|a, b| b.0.total_cmp(&a.0));
        let class = s[0].1;
        // keep the classes balanced
        if s[0].0 - s[1].0 < margin || counts[class] >= n.div_ceil(3) {
            continue;
        }
        counts[class] += 1;
        data.push(x);
        labels.push(class);
    }
    // the balancing cap skews the tail towards late-filling classes
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut r);
    let flat: Vec<f64> = order.iter().flat_map(|&i| data[i].clone()).collect();
    (Matrix::from_vec(n, dim, flat), order.iter().map(|&i| labels[i]).collect())
}

/// Central finite difference of `f` at `x` along coordinate `i`.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut plus = x.to_vec();
    let mut minus = x.to_vec();
    plus[i] += h;
    minus[i] -= h;
    (f(&plus) - f(&minus)) / (2.0 * h)
}

/// Maximum drawdown by brute force over all (peak, trough) pairs.
pub fn brute_max_drawdown(e: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..e.len() {
        for j in i..e.len() {
            worst = worst.min(e[j] / e[i] - 1.0);
        }
    }
    worst
}

/// Sample-std Sharpe of daily returns, annualized by √252.
pub fn sharpe_oracle(daily: &[f64]) -> Option<f64> {
    let n = daily.len() as f64;
    if daily.len() < 2 {
        return None;
    }
    let m = daily.iter().sum::<f64>() / n;
    let sd = (daily.iter().map(|r| (r - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    (sd > 0.0).then(|| m / sd * 252f64.sqrt())
}
