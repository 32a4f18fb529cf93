//! Fractionally differentiated features, triple-barrier labels, a residual MLP
//! classifier and a label-driven futures backtester.
//!
//! Data-parallel loops run on rayon when the default `parallel` feature is on;
//! see [`exec::Execution`].

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backtest;
pub mod exec;
pub mod features;
pub mod fracdiff;
pub mod labeling;
pub mod linalg;
pub mod market_data;
pub mod model;
pub mod pipeline;
pub mod stationarity;
pub mod synth;

pub use exec::Execution;
pub use market_data::{Bar, BarSeries};
