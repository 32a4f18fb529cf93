use serde::{Deserialize, Serialize};

use super::stats::{performance_stats, PerformanceStats};
use super::BacktestError;
use crate::labeling::VolatilityEstimate;
use crate::market_data::BarSeries;

/// Predicted class that opens a long position.
pub const LONG_CLASS: u8 = 2;
/// Predicted class that opens a short position.
pub const SHORT_CLASS: u8 = 0;
/// Predicted class that leaves the book untouched.
pub const NEUTRAL_CLASS: u8 = 1;

/// Volatility multipliers for take-profit and stop-loss levels.
///
/// Long: TP `close·(1 + pa·σ)`, SL `close·(1 − pb·σ)`.
/// Short: TP `close·(1 − pc·σ)`, SL `close·(1 + pd·σ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StrategyParams {
    pub pa: f64,
    pub pb: f64,
    pub pc: f64,
    pub pd: f64,
    pub lot_size: f64,
    pub contract_multiplier: f64,
}

impl Default for StrategyParams {
    fn default() -> Self {
        StrategyParams { pa: 5.0, pb: 2.0, pc: 5.0, pd: 2.0, lot_size: 1.0, contract_multiplier: 10.0 }
    }
}

impl StrategyParams {
    pub fn with_multipliers(self, m: [f64; 4]) -> Self {
        StrategyParams { pa: m[0], pb: m[1], pc: m[2], pd: m[3], ..self }
    }

    pub fn multipliers(&self) -> [f64; 4] {
        [self.pa, self.pb, self.pc, self.pd]
    }

    pub fn validate(&self) -> Result<(), BacktestError> {
        if self.multipliers().iter().any(|m| !(*m > 0.0)) {
            return Err(BacktestError::InvalidParams("pa, pb, pc, pd must be > 0".into()));
        }
        if !(self.lot_size > 0.0 && self.contract_multiplier > 0.0) {
            return Err(BacktestError::InvalidParams("lot_size and contract_multiplier must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostModel {
    /// Fraction of notional charged per side.
    pub commission_rate: f64,
    /// Adverse price points per fill.
    pub slippage: f64,
    pub initial_capital: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel { commission_rate: 0.00005, slippage: 1.0, initial_capital: 200_000.0 }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<(), BacktestError> {
        if !(self.commission_rate >= 0.0 && self.slippage >= 0.0 && self.initial_capital > 0.0) {
            return Err(BacktestError::InvalidParams(
                "commission_rate and slippage must be >= 0, initial_capital > 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Long,
    Short,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Long => 1.0,
            Direction::Short => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitReason {
    TakeProfit,
    StopLoss,
    EndOfData,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeRecord {
    pub direction: Direction,
    /// Bar whose close produced the signal.
    pub signal_index: usize,
    pub entry_index: usize,
    pub exit_index: usize,
    pub entry_price: f64,
    pub exit_price: f64,
    pub take_profit: f64,
    pub stop_loss: f64,
    pub exit_reason: ExitReason,
    pub commission: f64,
    pub pnl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub trades: Vec<TradeRecord>,
    /// Equity marked to each bar's close.
    pub equity_curve: Vec<f64>,
    pub timestamps: Vec<i64>,
    pub stats: PerformanceStats,
    /// Signals ignored because volatility was missing or not positive.
    pub skipped_entries: usize,
    pub params: StrategyParams,
    pub costs: CostModel,
}

struct Open {
    direction: Direction,
    signal_index: usize,
    entry_index: usize,
    entry_price: f64,
    take_profit: f64,
    stop_loss: f64,
    entry_commission: f64,
}

/// Single-position simulation driven by per-bar class predictions.
///
/// A signal on bar `t` fills at bar `t+1`'s open shifted by slippage against the
/// trader. TP and SL are frozen from bar `t`'s close and volatility. From the bar
/// after entry on, each bar checks the stop-loss before the take-profit against
/// its low/high; a trigger fills at the level shifted by slippage. Whatever is
/// still open is closed at the last close. Entries need at least one bar after
/// the fill bar.
pub fn run_backtest(
    series: &BarSeries,
    labels: &[u8],
    vol: &VolatilityEstimate,
    params: &StrategyParams,
    costs: &CostModel,
) -> Result<BacktestReport, BacktestError> {
    params.validate()?;
    costs.validate()?;
    let bars = series.bars();
    let n = bars.len();
    if labels.len() != n || vol.values.len() != n {
        return Err(BacktestError::AlignmentMismatch { bars: n, labels: labels.len(), volatility: vol.values.len() });
    }
    if n < 2 {
        return Err(BacktestError::SeriesTooShort(n));
    }
    if let Some(bad) = labels.iter().find(|&&l| l > LONG_CLASS) {
        return Err(BacktestError::InvalidLabel(*bad));
    }

    let size = params.lot_size * params.contract_multiplier;
    let commission = |price: f64| price * size * costs.commission_rate;
    let slip = costs.slippage;

    let mut cash = costs.initial_capital;
    let mut position: Option<Open> = None;
    let mut pending: Option<(Direction, usize, f64, f64)> = None;
    let mut trades = Vec::new();
    let mut equity_curve = Vec::with_capacity(n);
    let mut skipped_entries = 0;

    let close_trade = |pos: Open, exit_index: usize, exit_price: f64, reason: ExitReason, cash: &mut f64| {
        let exit_commission = commission(exit_price);
        let gross = pos.direction.sign() * (exit_price - pos.entry_price) * size;
        *cash += gross - exit_commission;
        TradeRecord {
            direction: pos.direction,
            signal_index: pos.signal_index,
            entry_index: pos.entry_index,
            exit_index,
            entry_price: pos.entry_price,
            exit_price,
            take_profit: pos.take_profit,
            stop_loss: pos.stop_loss,
            exit_reason: reason,
            commission: pos.entry_commission + exit_commission,
            pnl: gross - pos.entry_commission - exit_commission,
        }
    };

    for (t, bar) in bars.iter().enumerate() {
        if let Some((direction, signal_index, take_profit, stop_loss)) = pending.take() {
            let entry_price = bar.open + direction.sign() * slip;
            let entry_commission = commission(entry_price);
            cash -= entry_commission;
            position = Some(Open {
                direction,
                signal_index,
                entry_index: t,
                entry_price,
                take_profit,
                stop_loss,
                entry_commission,
            });
        } else if let Some(pos) = position.take() {
            let (sl_hit, tp_hit) = match pos.direction {
                Direction::Long => (bar.low <= pos.stop_loss, bar.high >= pos.take_profit),
                Direction::Short => (bar.high >= pos.stop_loss, bar.low <= pos.take_profit),
            };
            let adverse = -pos.direction.sign() * slip;
            if sl_hit {
                let level = pos.stop_loss + adverse;
                trades.push(close_trade(pos, t, level, ExitReason::StopLoss, &mut cash));
            } else if tp_hit {
                let level = pos.take_profit + adverse;
                trades.push(close_trade(pos, t, level, ExitReason::TakeProfit, &mut cash));
            } else {
                position = Some(pos);
            }
        }

        if t == n - 1 {
            if let Some(pos) = position.take() {
                let level = bar.close - pos.direction.sign() * slip;
                trades.push(close_trade(pos, t, level, ExitReason::EndOfData, &mut cash));
            }
        } else if position.is_none() && t + 2 < n {
            let direction = match labels[t] {
                LONG_CLASS => Some(Direction::Long),
                SHORT_CLASS => Some(Direction::Short),
                _ => None,
            };
            if let Some(direction) = direction {
                match vol.get(t) {
                    Some(sigma) if sigma > 0.0 => {
                        let c = bar.close;
                        let (tp, sl) = match direction {
                            Direction::Long => (c * (1.0 + params.pa * sigma), c * (1.0 - params.pb * sigma)),
                            Direction::Short => (c * (1.0 - params.pc * sigma), c * (1.0 + params.pd * sigma)),
                        };
                        pending = Some((direction, t, tp, sl));
                    }
                    _ => skipped_entries += 1,
                }
            }
        }

        let unrealized = position.as_ref().map_or(0.0, |p| p.direction.sign() * (bar.close - p.entry_price) * size);
        equity_curve.push(cash + unrealized);
    }

    let timestamps = series.timestamps();
    let stats = performance_stats(&equity_curve, &timestamps, trades.len())?;
    Ok(BacktestReport { trades, equity_curve, timestamps, stats, skipped_entries, params: *params, costs: *costs })
}

impl BacktestReport {
    pub fn write_trades_csv<W: std::io::Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "direction",
            "signal_time",
            "entry_time",
            "exit_time",
            "entry_price",
            "exit_price",
            "take_profit",
            "stop_loss",
            "exit_reason",
            "commission",
            "pnl",
        ])?;
        let ts = |i: usize| crate::market_data::format_timestamp(self.timestamps[i]);
        for t in &self.trades {
            w.write_record([
                format!("{:?}", t.direction).to_lowercase(),
                ts(t.signal_index),
                ts(t.entry_index),
                ts(t.exit_index),
                t.entry_price.to_string(),
                t.exit_price.to_string(),
                t.take_profit.to_string(),
                t.stop_loss.to_string(),
                serde_json::to_value(t.exit_reason).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(),
                t.commission.to_string(),
                t.pnl.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Per-bar equity, drawdown and cumulative pnl.
    pub fn write_equity_csv<W: std::io::Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["timestamp", "equity", "drawdown", "net_pnl"])?;
        let mut peak = f64::MIN;
        let initial = self.costs.initial_capital;
        for (t, &e) in self.equity_curve.iter().enumerate() {
            peak = peak.max(e);
            w.write_record([
                crate::market_data::format_timestamp(self.timestamps[t]),
                e.to_string(),
                (e / peak - 1.0).to_string(),
                (e - initial).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
