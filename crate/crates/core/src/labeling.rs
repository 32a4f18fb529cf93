//! Supervised labels from price paths: the triple-barrier method with
//! volatility-scaled horizontal barriers, and the fixed-horizon baseline.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::market_data::{Bar, BarSeries};

#[derive(Debug, Error, PartialEq)]
pub enum LabelingError {
    #[error("series of length {len} is too short (needs more than {needed})")]
    SeriesTooShort { len: usize, needed: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Down,
    Flat,
    Up,
}

impl Label {
    pub fn as_i8(self) -> i8 {
        match self {
            Label::Down => -1,
            Label::Flat => 0,
            Label::Up => 1,
        }
    }

    /// Class index after shifting `{-1, 0, 1}` to `{0, 1, 2}`.
    pub fn class_index(self) -> usize {
        (self.as_i8() + 1) as usize
    }

    pub fn from_i8(v: i8) -> Option<Label> {
        match v {
            -1 => Some(Label::Down),
            0 => Some(Label::Flat),
            1 => Some(Label::Up),
            _ => None,
        }
    }
}

/// Exponentially weighted volatility of one-bar close-to-close log returns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolatilityEstimate {
    pub span: usize,
    /// Aligned to the bars; `None` during warm-up.
    pub values: Vec<Option<f64>>,
}

impl VolatilityEstimate {
    pub fn get(&self, t: usize) -> Option<f64> {
        self.values.get(t).copied().flatten()
    }

    pub fn slice(&self, range: std::ops::Range<usize>) -> VolatilityEstimate {
        VolatilityEstimate { span: self.span, values: self.values[range].to_vec() }
    }
}

/// `σ_t = sqrt(Σ_i w_i r_{t-i}² / Σ_i w_i)` with `w_i = (1 - α)^i`, `α = 2 / (span + 1)`,
/// over the returns `r_1..r_t` seen so far. Returns are treated as zero-mean.
/// Defined from `t = span` on.
pub fn ema_volatility(series: &BarSeries, span: usize) -> Result<VolatilityEstimate, LabelingError> {
    if span == 0 {
        return Err(LabelingError::InvalidConfig("span must be positive".into()));
    }
    let bars = series.bars();
    if bars.len() <= span {
        return Err(LabelingError::SeriesTooShort { len: bars.len(), needed: span });
    }
    let decay = 1.0 - 2.0 / (span as f64 + 1.0);
    let mut num = 0.0;
    let mut den = 0.0;
    let mut values = vec![None; bars.len()];
    for t in 1..bars.len() {
        let r = (bars[t].close / bars[t - 1].close).ln();
        num = r * r + decay * num;
        den = 1.0 + decay * den;
        if t >= span {
            values[t] = Some((num / den).sqrt());
        }
    }
    Ok(VolatilityEstimate { span, values })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TripleBarrierConfig {
    /// Vertical barrier, in bars after entry.
    pub h: usize,
    pub upfactor: f64,
    /// Stored negative so that `lower = close · (1 + σ · lowerfactor)`.
    pub lowerfactor: f64,
    pub vol_span: usize,
}

impl Default for TripleBarrierConfig {
    fn default() -> Self {
        TripleBarrierConfig { h: 12, upfactor: 3.0, lowerfactor: -3.0, vol_span: 20 }
    }
}

impl TripleBarrierConfig {
    pub fn validate(&self) -> Result<(), LabelingError> {
        if self.h == 0 {
            return Err(LabelingError::InvalidConfig("h must be >= 1".into()));
        }
        if !(self.upfactor > 0.0) {
            return Err(LabelingError::InvalidConfig("upfactor must be > 0".into()));
        }
        if !(self.lowerfactor < 0.0) {
            return Err(LabelingError::InvalidConfig("lowerfactor must be < 0".into()));
        }
        if self.vol_span == 0 {
            return Err(LabelingError::InvalidConfig("vol_span must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelEvent {
    pub entry_index: usize,
    pub upper_barrier: f64,
    pub lower_barrier: f64,
    pub vertical_index: usize,
    pub touch_index: usize,
    pub label: Label,
    /// Both horizontal barriers fell inside the touching bar's range.
    pub intrabar_tie: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripleBarrierOutput {
    pub events: Vec<LabelEvent>,
    /// Entries skipped because their volatility was exactly zero.
    pub zero_volatility_entries: Vec<usize>,
    pub intrabar_ties: usize,
}

/// First-touch scan of `bars[entry+1..=entry+h]`.
///
/// A bar touches the upper barrier when its high reaches it and the lower one when
/// its low reaches it. If one bar touches both, the barrier nearer that bar's open
/// wins; at equal distance the event is labeled flat at that bar.
///
/// Panics if `entry + h` is past the end of `bars`.
pub fn first_touch(bars: &[Bar], entry: usize, upper: f64, lower: f64, h: usize) -> LabelEvent {
    let vertical = entry + h;
    assert!(vertical < bars.len(), "vertical barrier beyond the series");
    let event = |touch: usize, label: Label, tie: bool| LabelEvent {
        entry_index: entry,
        upper_barrier: upper,
        lower_barrier: lower,
        vertical_index: vertical,
        touch_index: touch,
        label,
        intrabar_tie: tie,
    };
    for (t, bar) in bars.iter().enumerate().take(vertical + 1).skip(entry + 1) {
        let up = bar.high >= upper;
        let down = bar.low <= lower;
        match (up, down) {
            (true, false) => return event(t, Label::Up, false),
            (false, true) => return event(t, Label::Down, false),
            (true, true) => {
                let du = (upper - bar.open).abs();
                let dl = (bar.open - lower).abs();
                let label = if du < dl {
                    Label::Up
                } else if dl < du {
                    Label::Down
                } else {
                    Label::Flat
                };
                return event(t, label, true);
            }
            (false, false) => {}
        }
    }
    event(vertical, Label::Flat, false)
}

pub fn triple_barrier_labels(
    series: &BarSeries,
    cfg: &TripleBarrierConfig,
) -> Result<TripleBarrierOutput, LabelingError> {
    triple_barrier_labels_with(series, cfg, Execution::Sequential)
}

/// Labels every bar with a defined volatility and a full `h`-bar horizon ahead.
pub fn triple_barrier_labels_with(
    series: &BarSeries,
    cfg: &TripleBarrierConfig,
    exec: Execution,
) -> Result<TripleBarrierOutput, LabelingError> {
    cfg.validate()?;
    let bars = series.bars();
    let needed = cfg.vol_span + cfg.h;
    if bars.len() <= needed {
        return Err(LabelingError::SeriesTooShort { len: bars.len(), needed });
    }
    let vol = ema_volatility(series, cfg.vol_span)?;
    let entries: Vec<usize> = (cfg.vol_span..bars.len() - cfg.h).collect();
    let outcomes = exec.map(&entries, |&t| {
        let sigma = vol.get(t)?;
        if sigma == 0.0 {
            return Some(Err(t));
        }
        let close = bars[t].close;
        let upper = close * (1.0 + sigma * cfg.upfactor);
        let lower = close * (1.0 + sigma * cfg.lowerfactor);
        Some(Ok(first_touch(bars, t, upper, lower, cfg.h)))
    });
    let mut events = Vec::with_capacity(outcomes.len());
    let mut zero_volatility_entries = Vec::new();
    for o in outcomes.into_iter().flatten() {
        match o {
            Ok(e) => events.push(e),
            Err(t) => zero_volatility_entries.push(t),
        }
    }
    if !zero_volatility_entries.is_empty() {
        log::warn!("{} entries skipped for zero volatility", zero_volatility_entries.len());
    }
    let intrabar_ties = events.iter().filter(|e| e.intrabar_tie).count();
    Ok(TripleBarrierOutput { events, zero_volatility_entries, intrabar_ties })
}

/// Label of the `h`-bar close-to-close return against a symmetric threshold, for
/// every `t` with `t + h` inside the series.
pub fn fixed_horizon_labels(series: &BarSeries, h: usize, threshold: f64) -> Result<Vec<Label>, LabelingError> {
    if h == 0 {
        return Err(LabelingError::InvalidConfig("h must be >= 1".into()));
    }
    if !(threshold > 0.0) {
        return Err(LabelingError::InvalidConfig("threshold must be > 0".into()));
    }
    let bars = series.bars();
    if bars.len() <= h {
        return Err(LabelingError::SeriesTooShort { len: bars.len(), needed: h });
    }
    Ok((0..bars.len() - h)
        .map(|t| {
            let r = bars[t + h].close / bars[t].close - 1.0;
            if r > threshold {
                Label::Up
            } else if r < -threshold {
                Label::Down
            } else {
                Label::Flat
            }
        })
        .collect())
}
