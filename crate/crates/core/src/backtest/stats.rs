use serde::{Deserialize, Serialize};

use super::BacktestError;

pub const TRADING_DAYS_PER_YEAR: f64 = 252.0;
const DAY_MS: i64 = 86_400_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceStats {
    pub initial_equity: f64,
    pub final_equity: f64,
    pub total_return: f64,
    pub annualized_return: f64,
    /// Absent when there are fewer than two days or daily returns do not vary.
    pub sharpe: Option<f64>,
    /// Minimum of `equity / running max − 1`; never positive.
    pub max_drawdown: f64,
    pub trading_days: usize,
    pub profitable_days: usize,
    pub losing_days: usize,
    pub total_trades: usize,
    pub trades_per_day: f64,
    pub daily_returns: Vec<f64>,
}

/// Summary statistics of an equity curve.
///
/// The first point is the starting equity. Days are UTC calendar days; each
/// day's return compares its last equity point with the previous day's last
/// (the starting equity for the first day). Sharpe is `mean / sample std · √252`
/// with a zero risk-free rate.
pub fn performance_stats(
    equity: &[f64],
    timestamps: &[i64],
    total_trades: usize,
) -> Result<PerformanceStats, BacktestError> {
    if equity.is_empty() {
        return Err(BacktestError::DegenerateCurve("empty equity curve".into()));
    }
    if equity.len() != timestamps.len() {
        return Err(BacktestError::DegenerateCurve("equity and timestamps differ in length".into()));
    }
    let initial = equity[0];
    if !(initial > 0.0) {
        return Err(BacktestError::DegenerateCurve("starting equity must be positive".into()));
    }
    let last = *equity.last().expect("non-empty");

    let mut day_close: Vec<f64> = Vec::new();
    let mut current_day = None;
    for (&e, &ts) in equity.iter().zip(timestamps) {
        let day = ts.div_euclid(DAY_MS);
        if current_day == Some(day) {
            *day_close.last_mut().expect("day open") = e;
        } else {
            current_day = Some(day);
            day_close.push(e);
        }
    }
    let mut prev = initial;
    let mut daily_returns = Vec::with_capacity(day_close.len());
    let (mut profitable_days, mut losing_days) = (0, 0);
    for &c in &day_close {
        if c > prev {
            profitable_days += 1;
        } else if c < prev {
            losing_days += 1;
        }
        daily_returns.push(c / prev - 1.0);
        prev = c;
    }
    let trading_days = day_close.len();

    let sharpe = if daily_returns.len() < 2 {
        None
    } else {
        let n = daily_returns.len() as f64;
        let mean = daily_returns.iter().sum::<f64>() / n;
        let var = daily_returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1.0);
        let sd = var.sqrt();
        if sd > 1e-15 {
            Some(mean / sd * TRADING_DAYS_PER_YEAR.sqrt())
        } else {
            None
        }
    };

    let mut peak = f64::MIN;
    let mut max_drawdown: f64 = 0.0;
    for &e in equity {
        peak = peak.max(e);
        max_drawdown = max_drawdown.min(e / peak - 1.0);
    }

    let total_return = last / initial - 1.0;
    Ok(PerformanceStats {
        initial_equity: initial,
        final_equity: last,
        total_return,
        annualized_return: total_return * TRADING_DAYS_PER_YEAR / trading_days as f64,
        sharpe,
        max_drawdown,
        trading_days,
        profitable_days,
        losing_days,
        total_trades,
        trades_per_day: total_trades as f64 / trading_days as f64,
        daily_returns,
    })
}
