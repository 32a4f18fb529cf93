//! End-to-end run: resample, fracdiff, label, featurize, train, predict, report,
//! backtest. Every artifact is written under one run directory together with a
//! `manifest.json` carrying the config hash, derived seeds and artifact digests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backtest::{run_backtest, CostModel, StrategyParams, NEUTRAL_CLASS};
use crate::exec::Execution;
use crate::features::{assemble_dataset, Featurizer, SplitMode};
use crate::fracdiff::{self, FracdiffError, DEFAULT_MAX_WEIGHTS, DEFAULT_TAU};
use crate::labeling::{ema_volatility, triple_barrier_labels_with, TripleBarrierConfig};
use crate::market_data::{format_timestamp, load_csv, resample, CsvSchema};
use crate::model::{classification_report, predict_with, train, MlpConfig};
use crate::stationarity::{d_grid, d_sweep, StationarityError};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const STAGES: [&str; 8] = ["resample", "fracdiff", "label", "featurize", "train", "predict", "report", "backtest"];

/// Fractional order: a fixed value, or the smallest grid value that passes ADF.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DRaw", into = "DRaw")]
pub enum DChoice {
    Auto,
    Fixed(f64),
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum DRaw {
    Number(f64),
    Text(String),
}

impl TryFrom<DRaw> for DChoice {
    type Error = String;

    fn try_from(raw: DRaw) -> Result<Self, String> {
        match raw {
            DRaw::Number(d) => Ok(DChoice::Fixed(d)),
            DRaw::Text(s) if s == "auto" => Ok(DChoice::Auto),
            DRaw::Text(s) => {
                s.parse().map(DChoice::Fixed).map_err(|_| format!("d must be a number or \"auto\", got `{s}`"))
            }
        }
    }
}

impl From<DChoice> for DRaw {
    fn from(d: DChoice) -> Self {
        match d {
            DChoice::Auto => DRaw::Text("auto".into()),
            DChoice::Fixed(v) => DRaw::Number(v),
        }
    }
}

impl std::str::FromStr for DChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        DChoice::try_from(DRaw::Text(s.trim().to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InputConfig {
    pub path: Option<PathBuf>,
    /// Bar period of the input file.
    pub period_minutes: u32,
    pub schema: CsvSchema,
}

impl Default for InputConfig {
    fn default() -> Self {
        InputConfig { path: None, period_minutes: 1, schema: CsvSchema::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FracdiffConfig {
    pub d: DChoice,
    pub tau: f64,
    /// Spacing of the grid searched when `d = "auto"`.
    pub grid_step: f64,
    /// Difference log closes rather than raw closes.
    pub log_prices: bool,
}

impl Default for FracdiffConfig {
    fn default() -> Self {
        FracdiffConfig { d: DChoice::Auto, tau: DEFAULT_TAU, grid_step: 0.05, log_prices: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub pca_components: usize,
    pub split: f64,
    /// Shuffle rows before splitting instead of cutting chronologically.
    pub random_split: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig { pca_components: 16, split: 0.8, random_split: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct BacktestConfig {
    pub strategy: StrategyParams,
    pub costs: CostModel,
}

/// Whole-run configuration. Every field has a default, so an empty TOML file is
/// a valid config once an input path is supplied.
///
/// `model.seed` and `model.input_dim` are overwritten at run time: the seed by
/// the derived `train` stage seed, the width by the number of PCA components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub input: InputConfig,
    pub bar_minutes: u32,
    pub fracdiff: FracdiffConfig,
    pub labeling: TripleBarrierConfig,
    pub features: FeatureConfig,
    pub model: MlpConfig,
    pub backtest: BacktestConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 42,
            input: InputConfig::default(),
            bar_minutes: 10,
            fracdiff: FracdiffConfig::default(),
            labeling: TripleBarrierConfig::default(),
            features: FeatureConfig::default(),
            model: MlpConfig::default(),
            backtest: BacktestConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is always representable as TOML")
    }

    /// sha256 of the config's canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// `u64` from the first 8 bytes of `sha256(seed as little-endian ‖ stage)`.
pub fn stage_seed(global: u64, stage: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(global.to_le_bytes());
    h.update(stage.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

#[derive(Debug, Error)]
#[error("stage `{stage}` failed: {source}")]
pub struct PipelineError {
    pub stage: &'static str,
    #[source]
    pub source: Box<dyn std::error::Error + Send + Sync>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub file: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageEntry {
    pub name: String,
    pub artifacts: Vec<ArtifactEntry>,
}

/// The run parameters most often compared across runs, flattened.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadlineParams {
    pub bar_minutes: u32,
    pub h: usize,
    pub upfactor: f64,
    pub lowerfactor: f64,
    pub vol_span: usize,
    pub tau: f64,
    pub pca_components: usize,
    pub split: f64,
    pub multipliers: [f64; 4],
    pub commission_rate: f64,
    pub slippage: f64,
    pub initial_capital: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub model_format_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub stage_seeds: BTreeMap<String, u64>,
    pub input_sha256: String,
    pub d_mode: String,
    pub chosen_d: Option<f64>,
    pub parameters: HeadlineParams,
    pub config: PipelineConfig,
    pub stages: Vec<StageEntry>,
    pub status: String,
    pub failed_stage: Option<String>,
    pub error: Option<String>,
}

struct RunWriter {
    dir: PathBuf,
    hash: String,
    stages: Vec<StageEntry>,
}

impl RunWriter {
    fn stage(&mut self, name: &str) {
        self.stages.push(StageEntry { name: name.into(), artifacts: Vec::new() });
    }

    fn write(&mut self, file: &str, body: &[u8]) -> std::io::Result<()> {
        std::fs::write(self.dir.join(file), body)?;
        self.stages.last_mut().expect("stage opened").artifacts.push(ArtifactEntry {
            file: file.into(),
            sha256: hex::encode(Sha256::digest(body)),
            bytes: body.len(),
        });
        Ok(())
    }

    /// Text artifact with a leading `# config_hash=` line.
    fn write_tagged(&mut self, file: &str, body: &[u8]) -> std::io::Result<()> {
        let mut out = format!("# config_hash={}\n", self.hash).into_bytes();
        out.extend_from_slice(body);
        self.write(file, &out)
    }

    fn write_json<T: Serialize>(&mut self, file: &str, value: &T) -> std::io::Result<()> {
        #[derive(Serialize)]
        struct Tagged<'a, T> {
            config_hash: &'a str,
            #[serde(flatten)]
            body: &'a T,
        }
        let text = serde_json::to_string_pretty(&Tagged { config_hash: &self.hash, body: value })
            .map_err(std::io::Error::other)?;
        self.write(file, text.as_bytes())
    }
}

fn csv_bytes(write: impl FnOnce(&mut csv::Writer<&mut Vec<u8>>) -> csv::Result<()>) -> csv::Result<Vec<u8>> {
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        write(&mut w)?;
        w.flush()?;
    }
    Ok(buf)
}

fn fail<E: Into<Box<dyn std::error::Error + Send + Sync>>>(stage: &'static str) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError { stage, source: e.into() }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub manifest: Manifest,
    pub out_dir: PathBuf,
}

/// Runs every stage into `out_dir` (created if missing). On failure the
/// artifacts written so far stay in place and the manifest records the failing
/// stage before the error is returned.
pub fn run_pipeline(config: &PipelineConfig, out_dir: &Path, exec: Execution) -> Result<RunSummary, PipelineError> {
    std::fs::create_dir_all(out_dir).map_err(fail("setup"))?;
    let hash = config.hash();
    let mut writer = RunWriter { dir: out_dir.to_path_buf(), hash: hash.clone(), stages: Vec::new() };
    let stage_seeds: BTreeMap<String, u64> =
        STAGES.iter().map(|s| (s.to_string(), stage_seed(config.seed, s))).collect();

    let mut manifest = Manifest {
        tool: "ffdlab".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        model_format_version: 1,
        config_hash: hash,
        seed: config.seed,
        stage_seeds: stage_seeds.clone(),
        input_sha256: String::new(),
        d_mode: match config.fracdiff.d {
            DChoice::Auto => "auto".into(),
            DChoice::Fixed(_) => "fixed".into(),
        },
        chosen_d: None,
        parameters: HeadlineParams {
            bar_minutes: config.bar_minutes,
            h: config.labeling.h,
            upfactor: config.labeling.upfactor,
            lowerfactor: config.labeling.lowerfactor,
            vol_span: config.labeling.vol_span,
            tau: config.fracdiff.tau,
            pca_components: config.features.pca_components,
            split: config.features.split,
            multipliers: config.backtest.strategy.multipliers(),
            commission_rate: config.backtest.costs.commission_rate,
            slippage: config.backtest.costs.slippage,
            initial_capital: config.backtest.costs.initial_capital,
        },
        config: config.clone(),
        stages: Vec::new(),
        status: "ok".into(),
        failed_stage: None,
        error: None,
    };

    let result = run_stages(config, exec, &mut writer, &mut manifest, &stage_seeds);
    manifest.stages = writer.stages;
    if let Err(e) = &result {
        manifest.status = "failed".into();
        manifest.failed_stage = Some(e.stage.to_string());
        manifest.error = Some(e.source.to_string());
    }
    let text = serde_json::to_string_pretty(&manifest).map_err(fail("manifest"))?;
    std::fs::write(out_dir.join(MANIFEST_FILE), text).map_err(fail("manifest"))?;
    result?;
    Ok(RunSummary { manifest, out_dir: out_dir.to_path_buf() })
}

fn run_stages(
    config: &PipelineConfig,
    exec: Execution,
    w: &mut RunWriter,
    manifest: &mut Manifest,
    seeds: &BTreeMap<String, u64>,
) -> Result<(), PipelineError> {
    // resample
    let st = "resample";
    w.stage(st);
    let input = config.input.path.as_ref().ok_or_else(|| fail(st)("no input path configured"))?;
    let raw = std::fs::read(input).map_err(fail(st))?;
    manifest.input_sha256 = hex::encode(Sha256::digest(&raw));
    let source = load_csv(input, &config.input.schema, config.input.period_minutes).map_err(fail(st))?;
    let series = resample(&source, config.bar_minutes).map_err(fail(st))?;
    log::info!("{} source bars -> {} bars of {} minutes", source.len(), series.len(), config.bar_minutes);
    let mut buf = Vec::new();
    series.write_csv(&mut buf).map_err(fail(st))?;
    w.write_tagged("bars.csv", &buf).map_err(fail(st))?;

    // fracdiff
    let st = "fracdiff";
    w.stage(st);
    let fd = &config.fracdiff;
    let closes = series.closes();
    let basis: Vec<f64> = if fd.log_prices {
        if closes.iter().any(|c| !(*c > 0.0)) {
            return Err(fail(st)("log prices need positive closes"));
        }
        closes.iter().map(|c| c.ln()).collect()
    } else {
        closes.clone()
    };
    let d = match fd.d {
        DChoice::Fixed(d) => d,
        DChoice::Auto => {
            let grid = d_grid(fd.grid_step).map_err(fail(st))?;
            let rows = d_sweep(&basis, &grid, fd.tau, exec).map_err(fail(st))?;
            let mut chosen = None;
            let body = csv_bytes(|cw| {
                cw.write_record([
                    "d",
                    "adf_statistic",
                    "correlation",
                    "critical_95",
                    "passes",
                    "window",
                    "lags",
                    "status",
                ])?;
                for r in &rows {
                    match r {
                        Ok(r) => cw.write_record([
                            r.d.to_string(),
                            r.adf_statistic.to_string(),
                            r.correlation.to_string(),
                            r.critical_95.to_string(),
                            r.passes.to_string(),
                            r.window.to_string(),
                            r.lags.to_string(),
                            "ok".into(),
                        ])?,
                        Err(e) => cw.write_record([
                            e.d.to_string(),
                            String::new(),
                            String::new(),
                            String::new(),
                            "false".into(),
                            String::new(),
                            String::new(),
                            e.source.to_string(),
                        ])?,
                    }
                }
                Ok(())
            })
            .map_err(fail(st))?;
            w.write_tagged("d_sweep.csv", &body).map_err(fail(st))?;
            for r in &rows {
                match r {
                    Ok(row) if row.passes => {
                        chosen = Some(row.d);
                        break;
                    }
                    Ok(_) => {}
                    Err(e)
                        if matches!(
                            e.source,
                            StationarityError::Fracdiff(
                                FracdiffError::SeriesTooShort { .. } | FracdiffError::NonConvergence { .. }
                            )
                        ) => {}
                    Err(e) => return Err(fail(st)(format!("d={}: {}", e.d, e.source))),
                }
            }
            chosen.ok_or_else(|| fail(st)(StationarityError::NoPassingD))?
        }
    };
    manifest.chosen_d = Some(d);
    log::info!("fractional order d = {d}");
    let weights = fracdiff::generate_weights(d, fd.tau, DEFAULT_MAX_WEIGHTS).map_err(fail(st))?;
    let ffd = fracdiff::ffd_transform_with(&basis, &weights, exec).map_err(fail(st))?;
    let mut buf = Vec::new();
    fracdiff::write_weights_csv(&weights, &mut buf).map_err(fail(st))?;
    w.write_tagged("weights.csv", &buf).map_err(fail(st))?;
    let body = csv_bytes(|cw| {
        cw.write_record(["timestamp", "close", "ffd_close"])?;
        for (i, v) in ffd.values.iter().enumerate() {
            let t = ffd.start_index + i;
            cw.write_record([format_timestamp(series.bars()[t].timestamp), closes[t].to_string(), v.to_string()])?;
        }
        Ok(())
    })
    .map_err(fail(st))?;
    w.write_tagged("fracdiff.csv", &body).map_err(fail(st))?;

    // label
    let st = "label";
    w.stage(st);
    let labels = triple_barrier_labels_with(&series, &config.labeling, exec).map_err(fail(st))?;
    let ts = |i: usize| format_timestamp(series.bars()[i].timestamp);
    let body = csv_bytes(|cw| {
        cw.write_record(["entry_time", "touch_time", "label", "upper_barrier", "lower_barrier", "intrabar_tie"])?;
        for e in &labels.events {
            cw.write_record([
                ts(e.entry_index),
                ts(e.touch_index),
                e.label.as_i8().to_string(),
                e.upper_barrier.to_string(),
                e.lower_barrier.to_string(),
                e.intrabar_tie.to_string(),
            ])?;
        }
        Ok(())
    })
    .map_err(fail(st))?;
    w.write_tagged("labels.csv", &body).map_err(fail(st))?;
    if !labels.zero_volatility_entries.is_empty() {
        log::warn!("{} entries skipped for zero volatility", labels.zero_volatility_entries.len());
    }

    // featurize
    let st = "featurize";
    w.stage(st);
    let raw_features = Featurizer::default16().compute(series.bars(), &ffd, exec).map_err(fail(st))?;
    let split_mode = if config.features.random_split {
        SplitMode::Random { seed: seeds["featurize"] }
    } else {
        SplitMode::Chronological
    };
    let dataset = assemble_dataset(
        &raw_features,
        &labels.events,
        config.features.split,
        split_mode,
        config.features.pca_components,
    )
    .map_err(fail(st))?;
    let fm = &dataset.features;
    let body = csv_bytes(|cw| {
        let mut header = vec!["timestamp".to_string(), "split".into(), "class".into()];
        header.extend(fm.column_names.iter().cloned());
        cw.write_record(&header)?;
        for i in 0..fm.rows() {
            let mut rec = vec![
                ts(fm.row_index[i]),
                if i < dataset.split_index { "train" } else { "test" }.to_string(),
                dataset.labels[i].to_string(),
            ];
            rec.extend(fm.values.row(i).iter().map(|v| v.to_string()));
            cw.write_record(&rec)?;
        }
        Ok(())
    })
    .map_err(fail(st))?;
    w.write_tagged("features.csv", &body).map_err(fail(st))?;
    #[derive(Serialize)]
    struct Transform<'a> {
        split_index: usize,
        split_mode: SplitMode,
        normalization: &'a crate::features::NormalizationParams,
        pca: &'a crate::features::PcaParams,
    }
    w.write_json(
        "transform.json",
        &Transform {
            split_index: dataset.split_index,
            split_mode: dataset.split_mode,
            normalization: &dataset.normalization,
            pca: &dataset.pca,
        },
    )
    .map_err(fail(st))?;

    // train
    let st = "train";
    w.stage(st);
    let train_rows: Vec<usize> = dataset.train_range().collect();
    let test_rows: Vec<usize> = dataset.test_range().collect();
    let x_train = fm.values.select_rows(&train_rows);
    let y_train = &dataset.labels[dataset.train_range()];
    let model_cfg = MlpConfig { input_dim: fm.cols(), seed: seeds["train"], ..config.model.clone() };
    let model = train(&x_train, y_train, &model_cfg).map_err(fail(st))?;
    let text = model.to_json_tagged(Some(&w.hash)).map_err(fail(st))?;
    w.write("model.json", text.as_bytes()).map_err(fail(st))?;

    // predict
    let st = "predict";
    w.stage(st);
    let x_test = fm.values.select_rows(&test_rows);
    let y_test = &dataset.labels[dataset.test_range()];
    let predictions = predict_with(&model, &x_test, exec).map_err(fail(st))?;
    let body = csv_bytes(|cw| {
        cw.write_record(["timestamp", "class", "predicted"])?;
        for (k, &i) in test_rows.iter().enumerate() {
            cw.write_record([ts(fm.row_index[i]), y_test[k].to_string(), predictions[k].to_string()])?;
        }
        Ok(())
    })
    .map_err(fail(st))?;
    w.write_tagged("predictions.csv", &body).map_err(fail(st))?;

    // report
    let st = "report";
    w.stage(st);
    let report = classification_report(y_test, &predictions).map_err(fail(st))?;
    w.write_json("report.json", &report).map_err(fail(st))?;
    w.write_tagged("report.txt", report.to_text().as_bytes()).map_err(fail(st))?;

    // backtest over the test span, from its first row to the end of the series
    let st = "backtest";
    w.stage(st);
    let first = test_rows.iter().map(|&i| fm.row_index[i]).min().ok_or_else(|| fail(st)("empty test span"))?;
    let span = first..series.len();
    let mut signal = vec![NEUTRAL_CLASS; span.len()];
    for (k, &i) in test_rows.iter().enumerate() {
        signal[fm.row_index[i] - first] = predictions[k] as u8;
    }
    let vol = ema_volatility(&series, config.labeling.vol_span).map_err(fail(st))?;
    let bt = run_backtest(
        &series.slice(span.clone()),
        &signal,
        &vol.slice(span),
        &config.backtest.strategy,
        &config.backtest.costs,
    )
    .map_err(fail(st))?;
    #[derive(Serialize)]
    struct BacktestSummary<'a> {
        params: StrategyParams,
        costs: CostModel,
        skipped_entries: usize,
        n_trades: usize,
        stats: &'a crate::backtest::PerformanceStats,
    }
    w.write_json(
        "backtest.json",
        &BacktestSummary {
            params: bt.params,
            costs: bt.costs,
            skipped_entries: bt.skipped_entries,
            n_trades: bt.trades.len(),
            stats: &bt.stats,
        },
    )
    .map_err(fail(st))?;
    let mut buf = Vec::new();
    bt.write_trades_csv(&mut buf).map_err(fail(st))?;
    w.write_tagged("trades.csv", &buf).map_err(fail(st))?;
    let mut buf = Vec::new();
    bt.write_equity_csv(&mut buf).map_err(fail(st))?;
    w.write_tagged("equity.csv", &buf).map_err(fail(st))?;
    log::info!(
        "test accuracy {:.3}; {} trades, total return {:.4}",
        report.accuracy,
        bt.trades.len(),
        bt.stats.total_return
    );
    Ok(())
}
