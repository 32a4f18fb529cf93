//! OHLCV bars: CSV ingestion, validation and wall-clock resampling.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

const MINUTE_MS: i64 = 60_000;
const DAY_MS: i64 = 86_400_000;
const MINUTES_PER_DAY: u32 = 1440;

#[derive(Debug, Error)]
pub enum MarketDataError {
    #[error("missing column `{0}`")]
    MissingColumn(String),
    /// 1-based data row number (the header is not counted).
    #[error("unparseable row {line}: {reason}")]
    UnparseableRow { line: usize, reason: String },
    #[error("timestamps not strictly increasing at {0}")]
    NonMonotonicTimestamp(String),
    /// 1-based data row number (the header is not counted).
    #[error("OHLC invariant violated on row {0}")]
    OhlcViolation(usize),
    #[error("bars overlap: {0} is closer than one period to its predecessor")]
    Overlap(String),
    #[error("target period {target} is not a positive multiple of {source_period} dividing a day")]
    IncompatiblePeriod { source_period: u32, target: u32 },
    #[error("invalid period: {0}")]
    InvalidPeriod(u32),
    #[error("empty input")]
    Empty,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bar {
    /// Window open time, UTC epoch milliseconds.
    pub timestamp: i64,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: f64,
}

impl Bar {
    pub fn is_valid(&self) -> bool {
        let finite = [self.open, self.high, self.low, self.close, self.volume].iter().all(|v| v.is_finite());
        finite
            && self.low <= self.open.min(self.close)
            && self.high >= self.open.max(self.close)
            && self.low <= self.high
            && self.volume >= 0.0
    }
}

/// A validated, time-ordered run of bars sharing one period. Gaps are allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct BarSeries {
    symbol: String,
    period_minutes: u32,
    bars: Vec<Bar>,
}

impl BarSeries {
    pub fn new(symbol: impl Into<String>, period_minutes: u32, bars: Vec<Bar>) -> Result<Self, MarketDataError> {
        if period_minutes == 0 {
            return Err(MarketDataError::InvalidPeriod(0));
        }
        for (i, b) in bars.iter().enumerate() {
            if !b.is_valid() {
                return Err(MarketDataError::OhlcViolation(i + 1));
            }
        }
        let period_ms = i64::from(period_minutes) * MINUTE_MS;
        for w in bars.windows(2) {
            if w[1].timestamp <= w[0].timestamp {
                return Err(MarketDataError::NonMonotonicTimestamp(format_timestamp(w[1].timestamp)));
            }
            if w[1].timestamp - w[0].timestamp < period_ms {
                return Err(MarketDataError::Overlap(format_timestamp(w[1].timestamp)));
            }
        }
        Ok(BarSeries { symbol: symbol.into(), period_minutes, bars })
    }

    pub fn symbol(&self) -> &str {
        &self.symbol
    }

    pub fn period_minutes(&self) -> u32 {
        self.period_minutes
    }

    pub fn bars(&self) -> &[Bar] {
        &self.bars
    }

    pub fn len(&self) -> usize {
        self.bars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bars.is_empty()
    }

    pub fn closes(&self) -> Vec<f64> {
        self.bars.iter().map(|b| b.close).collect()
    }

    pub fn timestamps(&self) -> Vec<i64> {
        self.bars.iter().map(|b| b.timestamp).collect()
    }

    /// Contiguous sub-series; bars keep their timestamps.
    pub fn slice(&self, range: std::ops::Range<usize>) -> BarSeries {
        BarSeries { symbol: self.symbol.clone(), period_minutes: self.period_minutes, bars: self.bars[range].to_vec() }
    }

    /// Same series with every price multiplied by `factor` (volume untouched).
    pub fn scale_prices(&self, factor: f64) -> BarSeries {
        let bars = self
            .bars
            .iter()
            .map(|b| Bar {
                open: b.open * factor,
                high: b.high * factor,
                low: b.low * factor,
                close: b.close * factor,
                ..*b
            })
            .collect();
        BarSeries { bars, ..self.clone() }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), MarketDataError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["timestamp", "open", "high", "low", "close", "volume"])?;
        for b in &self.bars {
            w.write_record([
                format_timestamp(b.timestamp),
                b.open.to_string(),
                b.high.to_string(),
                b.low.to_string(),
                b.close.to_string(),
                b.volume.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Column names used to locate the timestamp and OHLCV fields in a CSV header.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvSchema {
    pub timestamp: String,
    pub open: String,
    pub high: String,
    pub low: String,
    pub close: String,
    pub volume: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            timestamp: "timestamp".into(),
            open: "open".into(),
            high: "high".into(),
            low: "low".into(),
            close: "close".into(),
            volume: "volume".into(),
        }
    }
}

impl CsvSchema {
    /// Parses overrides of the form `timestamp=datetime,close=Close`.
    pub fn parse_overrides(spec: &str) -> Result<Self, String> {
        let mut schema = CsvSchema::default();
        for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part.split_once('=').ok_or_else(|| format!("schema entry `{part}` is not key=value"))?;
            let slot = match key.trim() {
                "timestamp" => &mut schema.timestamp,
                "open" => &mut schema.open,
                "high" => &mut schema.high,
                "low" => &mut schema.low,
                "close" => &mut schema.close,
                "volume" => &mut schema.volume,
                other => return Err(format!("unknown schema field `{other}`")),
            };
            *slot = value.trim().to_string();
        }
        Ok(schema)
    }
}

/// Loads bars from a CSV file. Rows may appear in any order; they are sorted by
/// timestamp before validation. The symbol is taken from the file stem.
pub fn load_csv(path: &Path, schema: &CsvSchema, period_minutes: u32) -> Result<BarSeries, MarketDataError> {
    let file = std::fs::File::open(path)?;
    let symbol = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    read_csv(file, schema, period_minutes, &symbol)
}

pub fn read_csv<R: Read>(
    reader: R,
    schema: &CsvSchema,
    period_minutes: u32,
    symbol: &str,
) -> Result<BarSeries, MarketDataError> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    let position: HashMap<&str, usize> = header.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let col = |name: &str| position.get(name).copied().ok_or_else(|| MarketDataError::MissingColumn(name.to_string()));
    let idx = [
        col(&schema.timestamp)?,
        col(&schema.open)?,
        col(&schema.high)?,
        col(&schema.low)?,
        col(&schema.close)?,
        col(&schema.volume)?,
    ];

    let mut rows: Vec<(usize, Bar)> = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let line = i + 1;
        let record = record.map_err(|e| MarketDataError::UnparseableRow { line, reason: e.to_string() })?;
        let field = |k: usize| {
            record.get(idx[k]).ok_or_else(|| MarketDataError::UnparseableRow { line, reason: "short row".into() })
        };
        let timestamp =
            parse_timestamp(field(0)?).map_err(|reason| MarketDataError::UnparseableRow { line, reason })?;
        let mut vals = [0.0; 5];
        for (k, v) in vals.iter_mut().enumerate() {
            let raw = field(k + 1)?;
            *v = raw
                .parse::<f64>()
                .map_err(|e| MarketDataError::UnparseableRow { line, reason: format!("`{raw}`: {e}") })?;
        }
        let bar = Bar { timestamp, open: vals[0], high: vals[1], low: vals[2], close: vals[3], volume: vals[4] };
        if !bar.is_valid() {
            return Err(MarketDataError::OhlcViolation(line));
        }
        rows.push((line, bar));
    }
    if rows.is_empty() {
        return Err(MarketDataError::Empty);
    }
    rows.sort_by_key(|(_, b)| b.timestamp);
    BarSeries::new(symbol, period_minutes, rows.into_iter().map(|(_, b)| b).collect())
}

/// Accepts integer epoch milliseconds, RFC 3339, or a naive `YYYY-MM-DD[ T]HH:MM[:SS[.fff]]`
/// (taken as UTC), or a bare date.
pub fn parse_timestamp(raw: &str) -> Result<i64, String> {
    let raw = raw.trim();
    if let Ok(ms) = raw.parse::<i64>() {
        return Ok(ms);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(raw) {
        return Ok(dt.timestamp_millis());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(raw, fmt) {
            return Ok(dt.and_utc().timestamp_millis());
        }
    }
    if let Ok(d) = NaiveDate::parse_from_str(raw, "%Y-%m-%d") {
        return Ok(d.and_hms_opt(0, 0, 0).expect("midnight").and_utc().timestamp_millis());
    }
    Err(format!("unrecognized timestamp `{raw}`"))
}

pub fn format_timestamp(ms: i64) -> String {
    match DateTime::<Utc>::from_timestamp_millis(ms) {
        Some(dt) => dt.format("%Y-%m-%dT%H:%M:%S%.3fZ").to_string(),
        None => ms.to_string(),
    }
}

/// Start of the `target_ms` window containing `ts`, aligned to midnight UTC.
fn window_start(ts: i64, target_ms: i64) -> i64 {
    let day = ts - ts.rem_euclid(DAY_MS);
    let offset = ts - day;
    day + offset - offset % target_ms
}

/// Aggregates bars into `target_minutes` windows aligned to midnight UTC.
/// Empty windows produce no bar. The target must divide a day, otherwise the
/// last window before midnight would be short.
pub fn resample(series: &BarSeries, target_minutes: u32) -> Result<BarSeries, MarketDataError> {
    let source = series.period_minutes();
    if target_minutes == 0 || !target_minutes.is_multiple_of(source) || !MINUTES_PER_DAY.is_multiple_of(target_minutes)
    {
        return Err(MarketDataError::IncompatiblePeriod { source_period: source, target: target_minutes });
    }
    let target_ms = i64::from(target_minutes) * MINUTE_MS;
    let mut out: Vec<Bar> = Vec::new();
    let mut current: Option<Bar> = None;
    for b in series.bars() {
        let start = window_start(b.timestamp, target_ms);
        match current.as_mut() {
            Some(acc) if acc.timestamp == start => {
                acc.high = acc.high.max(b.high);
                acc.low = acc.low.min(b.low);
                acc.close = b.close;
                acc.volume += b.volume;
            }
            _ => {
                if let Some(done) = current.take() {
                    out.push(done);
                }
                current = Some(Bar { timestamp: start, ..*b });
            }
        }
    }
    out.extend(current);
    BarSeries::new(series.symbol(), target_minutes, out)
}
