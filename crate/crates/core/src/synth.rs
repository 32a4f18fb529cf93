//! Seeded synthetic OHLCV generators for tests, benches and smoke runs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market_data::{Bar, BarSeries};

/// 2022-07-01T00:00:00Z.
pub const SYNTH_START_MS: i64 = 1_656_633_600_000;
pub const MIN_SYNTH_LENGTH: usize = 100;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

/// Close-price process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SynthKind {
    /// `c_t = c_{t-1} + N(0, step_sd)`.
    RandomWalk { start: f64, step_sd: f64 },
    /// `c_t = c_{t-1} · exp(mu − sigma²/2 + sigma·Z)`, per bar.
    Gbm { start: f64, mu: f64, sigma: f64 },
    /// `c_t = level + x_t`, `x_t = phi·x_{t-1} + N(0, noise_sd)`, `x_0 = 0`.
    Ar1 { level: f64, phi: f64, noise_sd: f64 },
}

impl SynthKind {
    pub fn random_walk() -> Self {
        SynthKind::RandomWalk { start: 3000.0, step_sd: 2.0 }
    }

    pub fn gbm() -> Self {
        SynthKind::Gbm { start: 3000.0, mu: 0.0, sigma: 0.001 }
    }

    pub fn ar1(phi: f64) -> Self {
        SynthKind::Ar1 { level: 3000.0, phi, noise_sd: 2.0 }
    }

    /// Default parameters for `random_walk`, `gbm` or `ar1`.
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "random_walk" | "random-walk" => Some(Self::random_walk()),
            "gbm" => Some(Self::gbm()),
            "ar1" => Some(Self::ar1(0.8)),
            _ => None,
        }
    }
}

/// Shape of the intra-bar range and volume.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub kind: SynthKind,
    /// Upper bound on each wick beyond the open/close body, as a fraction of close.
    pub wick_fraction: f64,
    pub period_minutes: u32,
    pub mean_volume: f64,
}

impl SynthParams {
    pub fn new(kind: SynthKind) -> Self {
        SynthParams { kind, wick_fraction: 0.0005, period_minutes: 1, mean_volume: 500.0 }
    }
}

/// Close path only.
pub fn synthetic_closes(kind: SynthKind, length: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>, SynthError> {
    let bad = |m: &str| Err(SynthError::InvalidParams(m.into()));
    let mut closes = Vec::with_capacity(length);
    match kind {
        SynthKind::RandomWalk { start, step_sd } => {
            if !(start > 0.0 && step_sd >= 0.0) {
                return bad("random walk needs start > 0 and step_sd >= 0");
            }
            let mut c = start;
            for _ in 0..length {
                closes.push(c);
                let z: f64 = StandardNormal.sample(rng);
                c += step_sd * z;
            }
        }
        SynthKind::Gbm { start, mu, sigma } => {
            if !(start > 0.0 && sigma >= 0.0 && mu.is_finite()) {
                return bad("gbm needs start > 0 and sigma >= 0");
            }
            let mut c = start;
            for _ in 0..length {
                closes.push(c);
                let z: f64 = StandardNormal.sample(rng);
                c *= (mu - 0.5 * sigma * sigma + sigma * z).exp();
            }
        }
        SynthKind::Ar1 { level, phi, noise_sd } => {
            if !(phi.abs() < 1.0 && noise_sd >= 0.0 && level.is_finite()) {
                return bad("ar1 needs |phi| < 1 and noise_sd >= 0");
            }
            let mut x = 0.0;
            for _ in 0..length {
                closes.push(level + x);
                let z: f64 = StandardNormal.sample(rng);
                x = phi * x + noise_sd * z;
            }
        }
    }
    if closes.iter().any(|c| !(*c > 0.0) || !c.is_finite()) {
        return bad("process left the positive reals; raise the level or lower the noise");
    }
    Ok(closes)
}

/// Seeded OHLCV series. Open is the previous close (the first open equals the
/// first close); high and low extend the body by independent seeded wicks.
pub fn generate_synthetic(length: usize, seed: u64, params: &SynthParams) -> Result<BarSeries, SynthError> {
    if length < MIN_SYNTH_LENGTH {
        return Err(SynthError::InvalidParams(format!("length {length} < {MIN_SYNTH_LENGTH}")));
    }
    if !(params.wick_fraction > 0.0 && params.wick_fraction < 0.5 && params.mean_volume > 0.0) {
        return Err(SynthError::InvalidParams("need 0 < wick_fraction < 0.5 and mean_volume > 0".into()));
    }
    if params.period_minutes == 0 {
        return Err(SynthError::InvalidParams("period must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let closes = synthetic_closes(params.kind, length, &mut rng)?;
    let vol_noise = Normal::<f64>::new(0.0, 0.3).expect("valid sd");
    let step = i64::from(params.period_minutes) * 60_000;
    let mut bars = Vec::with_capacity(length);
    for (i, &close) in closes.iter().enumerate() {
        let open = if i == 0 { close } else { closes[i - 1] };
        let up: f64 = rng.random::<f64>() * params.wick_fraction * close;
        let down: f64 = rng.random::<f64>() * params.wick_fraction * close;
        let volume = (params.mean_volume * vol_noise.sample(&mut rng).exp()).round().max(1.0);
        bars.push(Bar {
            timestamp: SYNTH_START_MS + i as i64 * step,
            open,
            high: open.max(close) + up,
            low: open.min(close) - down,
            close,
            volume,
        });
    }
    let symbol = match params.kind {
        SynthKind::RandomWalk { .. } => "synth_random_walk",
        SynthKind::Gbm { .. } => "synth_gbm",
        SynthKind::Ar1 { .. } => "synth_ar1",
    };
    BarSeries::new(symbol, params.period_minutes, bars).map_err(|e| SynthError::InvalidParams(e.to_string()))
}
