//! Label-driven strategy simulation, performance statistics, and genetic search
//! over the take-profit/stop-loss multipliers.

mod engine;
mod ga;
mod stats;

use thiserror::Error;

pub use engine::{
    run_backtest, BacktestReport, CostModel, Direction, ExitReason, StrategyParams, TradeRecord, LONG_CLASS,
    NEUTRAL_CLASS, SHORT_CLASS,
};
pub use ga::{ga_optimize, Bounds, GaConfig, GaOutcome};
pub use stats::{performance_stats, PerformanceStats, TRADING_DAYS_PER_YEAR};

use crate::exec::Execution;
use crate::labeling::VolatilityEstimate;
use crate::market_data::BarSeries;

#[derive(Debug, Error, PartialEq)]
pub enum BacktestError {
    #[error("misaligned inputs: {bars} bars, {labels} labels, {volatility} volatility values")]
    AlignmentMismatch { bars: usize, labels: usize, volatility: usize },
    #[error("need at least 2 bars, got {0}")]
    SeriesTooShort(usize),
    #[error("label {0} is not a class index")]
    InvalidLabel(u8),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("invalid bounds: {0}")]
    InvalidBounds(String),
    #[error("degenerate equity curve: {0}")]
    DegenerateCurve(String),
    #[error("objective failed for {candidate:?}: {message}")]
    ObjectiveFailure { candidate: Vec<f64>, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    Sharpe,
    TotalReturn,
}

impl Objective {
    /// Score of a finished backtest. An undefined Sharpe scores 0.
    pub fn score(self, report: &BacktestReport) -> f64 {
        match self {
            Objective::Sharpe => report.stats.sharpe.unwrap_or(0.0),
            Objective::TotalReturn => report.stats.total_return,
        }
    }
}

/// Searches `[pa, pb, pc, pd]` within `bounds` for the best backtest score.
#[allow(clippy::too_many_arguments)]
pub fn optimize_multipliers(
    series: &BarSeries,
    labels: &[u8],
    vol: &VolatilityEstimate,
    base: &StrategyParams,
    costs: &CostModel,
    bounds: &[Bounds; 4],
    objective: Objective,
    cfg: &GaConfig,
    exec: Execution,
) -> Result<(StrategyParams, GaOutcome), BacktestError> {
    // zero multipliers are not valid strategy parameters
    let floor = 1e-6;
    let bounds: Vec<Bounds> = bounds.iter().map(|b| Bounds::new(b.low.max(floor), b.high.max(floor))).collect();
    let outcome = ga_optimize(
        |genes| {
            let params = base.with_multipliers([genes[0], genes[1], genes[2], genes[3]]);
            run_backtest(series, labels, vol, &params, costs).map(|r| objective.score(&r))
        },
        &bounds,
        cfg,
        exec,
    )?;
    let best = base.with_multipliers([outcome.best[0], outcome.best[1], outcome.best[2], outcome.best[3]]);
    Ok((best, outcome))
}
