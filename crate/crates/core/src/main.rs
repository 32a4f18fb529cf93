// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use ffdlab::backtest::{optimize_multipliers, run_backtest, Bounds, CostModel, GaConfig, Objective, StrategyParams};
use ffdlab::features::{assemble_dataset, Featurizer, SplitMode};
use ffdlab::fracdiff::{self, DEFAULT_MAX_WEIGHTS, DEFAULT_TAU};
use ffdlab::labeling::{ema_volatility, triple_barrier_labels_with, TripleBarrierConfig};
use ffdlab::linalg::Matrix;
use ffdlab::market_data::{format_timestamp, load_csv, parse_timestamp, resample, BarSeries, CsvSchema};
use ffdlab::model::{classification_report, predict_with, train, MlpConfig, MlpModel};
use ffdlab::pipeline::{run_pipeline, DChoice, PipelineConfig};
use ffdlab::stationarity::{d_grid, d_sweep};
use ffdlab::synth::{generate_synthetic, SynthKind, SynthParams};
use ffdlab::Execution;

#[derive(Parser)]
#[command(
    name = "ffdlab",
    version,
    about = "Fracdiff features, triple-barrier labels, MLP signals and backtests for futures bars"
)]
struct Cli {
    /// Run data-parallel loops on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Aggregate bars to a coarser period.
    Resample {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, default_value_t = 10)]
        period: u32,
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Fixed-window fractional differencing of closes.
    Fracdiff {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        d: f64,
        #[arg(long, default_value_t = DEFAULT_TAU)]
        tau: f64,
        /// Difference log closes.
        #[arg(long)]
        log: bool,
        #[arg(long, short)]
        output: PathBuf,
        /// Also write the weight vector.
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// ADF statistic and memory correlation over a grid of orders.
    AdfSweep {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, default_value_t = DEFAULT_TAU)]
        tau: f64,
        #[arg(long, default_value_t = 0.05)]
        step: f64,
        #[arg(long)]
        log: bool,
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Triple-barrier labels.
    Label {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        labeling: LabelArgs,
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Indicator features, normalized and PCA-reduced, joined with labels.
    Featurize {
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        labeling: LabelArgs,
        #[arg(long, default_value_t = 0.3)]
        d: f64,
        #[arg(long, default_value_t = DEFAULT_TAU)]
        tau: f64,
        #[arg(long, default_value_t = 16)]
        pca: usize,
        #[arg(long, default_value_t = 0.8)]
        split: f64,
        /// Shuffle before splitting, with this seed.
        #[arg(long)]
        random_split: Option<u64>,
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Fit the residual MLP on the train rows of a features file.
    Train {
        #[arg(long)]
        features: PathBuf,
        #[arg(long, default_value_t = 64)]
        hidden: usize,
        #[arg(long, default_value_t = 2)]
        blocks: usize,
        #[arg(long, default_value_t = 100)]
        epochs: usize,
        #[arg(long, default_value_t = 64)]
        batch: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Predict classes for the test rows (or all rows) and print a report.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        all: bool,
        #[arg(long, short)]
        output: PathBuf,
        /// Write the classification report as JSON here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Simulate the strategy from per-bar predictions.
    Backtest {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        predictions: PathBuf,
        #[command(flatten)]
        costs: CostArgs,
        /// Multipliers pa,pb,pc,pd.
        #[arg(long, default_value = "5,2,5,2")]
        params: String,
        /// Output directory.
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Genetic search over the TP/SL multipliers.
    Optimize {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        predictions: PathBuf,
        #[command(flatten)]
        costs: CostArgs,
        /// `lo:hi` for all four multipliers, or four comma-separated ranges.
        #[arg(long, default_value = "0:10")]
        bounds: String,
        #[arg(long, default_value_t = 32)]
        pop: usize,
        #[arg(long, default_value_t = 50)]
        gens: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = ObjectiveArg::Sharpe)]
        objective: ObjectiveArg,
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Whole pipeline from one config file.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Fractional order or `auto`.
        #[arg(long)]
        d: Option<DChoice>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Output directory.
        #[arg(long, short)]
        output: PathBuf,
        /// Print the effective config as TOML and exit.
        #[arg(long)]
        print_config: bool,
    },
    /// Write a seeded synthetic OHLCV series.
    Synth {
        #[arg(long, value_enum, default_value_t = KindArg::Gbm)]
        kind: KindArg,
        #[arg(long, default_value_t = 20_000)]
        length: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Bar period in minutes.
        #[arg(long, default_value_t = 1)]
        period: u32,
        /// AR(1) coefficient.
        #[arg(long, default_value_t = 0.8)]
        phi: f64,
        /// Per-bar volatility for gbm, per-bar step sd for random_walk, noise sd for ar1.
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long, short)]
        output: PathBuf,
    },
}

#[derive(Args)]
struct InputArgs {
    #[arg(long, short)]
    input: PathBuf,
    /// Column name overrides, e.g. `timestamp=datetime,close=Close`.
    #[arg(long, default_value = "")]
    schema: String,
    /// Bar period of the input in minutes.
    #[arg(long, default_value_t = 1)]
    source_period: u32,
}

impl InputArgs {
    fn load(&self) -> Result<BarSeries> {
        let schema = CsvSchema::parse_overrides(&self.schema).map_err(anyhow::Error::msg)?;
        load_csv(&self.input, &schema, self.source_period).with_context(|| format!("reading {}", self.input.display()))
    }
}

#[derive(Args)]
struct LabelArgs {
    #[arg(long, default_value_t = 12)]
    h: usize,
    #[arg(long, default_value_t = 3.0)]
    up: f64,
    /// Lower barrier factor, as a positive number of sigmas.
    #[arg(long, default_value_t = 3.0)]
    down: f64,
    #[arg(long, default_value_t = 20)]
    vol_span: usize,
}

impl LabelArgs {
    fn config(&self) -> TripleBarrierConfig {
        TripleBarrierConfig { h: self.h, upfactor: self.up, lowerfactor: -self.down.abs(), vol_span: self.vol_span }
    }
}

#[derive(Args)]
struct CostArgs {
    #[arg(long, default_value_t = 200_000.0)]
    capital: f64,
    #[arg(long, default_value_t = 0.00005)]
    commission: f64,
    #[arg(long, default_value_t = 1.0)]
    slippage: f64,
    #[arg(long, default_value_t = 1.0)]
    lots: f64,
    #[arg(long, default_value_t = 10.0)]
    multiplier: f64,
    #[arg(long, default_value_t = 20)]
    vol_span: usize,
}

impl CostArgs {
    fn costs(&self) -> CostModel {
        CostModel { commission_rate: self.commission, slippage: self.slippage, initial_capital: self.capital }
    }

    fn strategy(&self, m: [f64; 4]) -> StrategyParams {
        StrategyParams { lot_size: self.lots, contract_multiplier: self.multiplier, ..Default::default() }
            .with_multipliers(m)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    Sharpe,
    TotalReturn,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    RandomWalk,
    Gbm,
    Ar1,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn basis(series: &BarSeries, log: bool) -> Result<Vec<f64>> {
    let closes = series.closes();
    if !log {
        return Ok(closes);
    }
    if closes.iter().any(|c| !(*c > 0.0)) {
        bail!("--log needs positive closes");
    }
    Ok(closes.iter().map(|c| c.ln()).collect())
}

fn parse_multipliers(s: &str) -> Result<[f64; 4]> {
    let v: Vec<f64> = s.split(',').map(|p| p.trim().parse::<f64>()).collect::<Result<_, _>>().context("multipliers")?;
    v.try_into().map_err(|v: Vec<f64>| anyhow::anyhow!("expected 4 multipliers, got {}", v.len()))
}

fn parse_bounds(s: &str) -> Result<[Bounds; 4]> {
    let one = |p: &str| -> Result<Bounds> {
        let (lo, hi) = p.split_once(':').with_context(|| format!("bound `{p}` is not lo:hi"))?;
        Ok(Bounds::new(lo.trim().parse()?, hi.trim().parse()?))
    };
    let parts: Vec<&str> = s.split(',').collect();
    match parts.len() {
        1 => Ok([one(parts[0])?; 4]),
        4 => Ok([one(parts[0])?, one(parts[1])?, one(parts[2])?, one(parts[3])?]),
        n => bail!("expected 1 or 4 bounds, got {n}"),
    }
}

/// Features file written by `featurize`: timestamp, split, class, then features.
struct FeatureFile {
    timestamps: Vec<String>,
    is_train: Vec<bool>,
    labels: Vec<usize>,
    values: Matrix,
}

fn read_features(path: &Path) -> Result<FeatureFile> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let header = rdr.headers()?.clone();
    if header.len() < 4 || &header[0] != "timestamp" || &header[1] != "split" || &header[2] != "class" {
        bail!("{} is not a features file", path.display());
    }
    let cols = header.len() - 3;
    let (mut timestamps, mut is_train, mut labels, mut data) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for rec in rdr.records() {
        let rec = rec?;
        timestamps.push(rec[0].to_string());
        is_train.push(&rec[1] == "train");
        labels.push(rec[2].parse()?);
        for v in rec.iter().skip(3) {
            data.push(v.parse::<f64>()?);
        }
    }
    let rows = labels.len();
    Ok(FeatureFile { timestamps, is_train, labels, values: Matrix::from_vec(rows, cols, data) })
}

/// Per-bar classes from a predictions file; bars without a prediction are neutral.
fn read_signal(path: &Path, series: &BarSeries) -> Result<Vec<u8>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let header = rdr.headers()?.clone();
    let col = header.iter().position(|h| h == "predicted").context("predictions file lacks a `predicted` column")?;
    let index: HashMap<i64, usize> = series.bars().iter().enumerate().map(|(i, b)| (b.timestamp, i)).collect();
    let mut signal = vec![ffdlab::backtest::NEUTRAL_CLASS; series.len()];
    for rec in rdr.records() {
        let rec = rec?;
        let ts = parse_timestamp(&rec[0]).map_err(anyhow::Error::msg)?;
        let i = *index.get(&ts).with_context(|| format!("prediction at {} has no bar", &rec[0]))?;
        signal[i] = rec[col].parse()?;
    }
    Ok(signal)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let exec = if cli.sequential { Execution::Sequential } else { Execution::default() };

    match cli.command {
        Command::Resample { input, period, output } => {
            let out = resample(&input.load()?, period)?;
            out.write_csv(create(&output)?)?;
            log::info!("{} bars written", out.len());
        }
        Command::Fracdiff { input, d, tau, log, output, weights } => {
            let series = input.load()?;
            let x = basis(&series, log)?;
            let w = fracdiff::generate_weights(d, tau, DEFAULT_MAX_WEIGHTS)?;
            let ffd = fracdiff::ffd_transform_with(&x, &w, exec)?;
            let mut cw = csv::Writer::from_writer(create(&output)?);
            cw.write_record(["timestamp", "value", "ffd"])?;
            for (i, v) in ffd.values.iter().enumerate() {
                let t = ffd.start_index + i;
                cw.write_record([format_timestamp(series.bars()[t].timestamp), x[t].to_string(), v.to_string()])?;
            }
            cw.flush()?;
            if let Some(p) = weights {
                fracdiff::write_weights_csv(&w, create(&p)?)?;
            }
            log::info!("window {} weights, {} values", w.cutoff() + 1, ffd.values.len());
        }
        Command::AdfSweep { input, tau, step, log, output } => {
            let x = basis(&input.load()?, log)?;
            let rows = d_sweep(&x, &d_grid(step)?, tau, exec)?;
            let mut cw = csv::Writer::from_writer(create(&output)?);
            cw.write_record(["d", "adf_statistic", "correlation", "critical_95", "passes", "window", "lags"])?;
            let mut chosen = None;
            for r in &rows {
                match r {
                    Ok(r) => {
                        if r.passes && chosen.is_none() {
                            chosen = Some(r.d);
                        }
                        cw.write_record([
                            r.d.to_string(),
                            r.adf_statistic.to_string(),
                            r.correlation.to_string(),
                            r.critical_95.to_string(),
                            r.passes.to_string(),
                            r.window.to_string(),
                            r.lags.to_string(),
                        ])?;
                    }
                    Err(e) => log::warn!("d={}: {}", e.d, e.source),
                }
            }
            cw.flush()?;
            match chosen {
                Some(d) => println!("minimal d = {d}"),
                None => println!("no d on the grid rejects a unit root"),
            }
        }
        Command::Label { input, labeling, output } => {
            let series = input.load()?;
            let out = triple_barrier_labels_with(&series, &labeling.config(), exec)?;
            let mut cw = csv::Writer::from_writer(create(&output)?);
            cw.write_record(["entry_time", "touch_time", "label", "upper_barrier", "lower_barrier", "intrabar_tie"])?;
            let ts = |i: usize| format_timestamp(series.bars()[i].timestamp);
            for e in &out.events {
                cw.write_record([
                    ts(e.entry_index),
                    ts(e.touch_index),
                    e.label.as_i8().to_string(),
                    e.upper_barrier.to_string(),
                    e.lower_barrier.to_string(),
                    e.intrabar_tie.to_string(),
                ])?;
            }
            cw.flush()?;
            log::info!(
                "{} events, {} zero-volatility entries skipped, {} intra-bar ties",
                out.events.len(),
                out.zero_volatility_entries.len(),
                out.intrabar_ties
            );
        }
        Command::Featurize { input, labeling, d, tau, pca, split, random_split, output } => {
            let series = input.load()?;
            let x = basis(&series, true)?;
            let ffd =
                fracdiff::ffd_transform_with(&x, &fracdiff::generate_weights(d, tau, DEFAULT_MAX_WEIGHTS)?, exec)?;
            let events = triple_barrier_labels_with(&series, &labeling.config(), exec)?;
            let raw = Featurizer::default16().compute(series.bars(), &ffd, exec)?;
            let mode = random_split.map_or(SplitMode::Chronological, |seed| SplitMode::Random { seed });
            let ds = assemble_dataset(&raw, &events.events, split, mode, pca)?;
            let mut cw = csv::Writer::from_writer(create(&output)?);
            let mut header = vec!["timestamp".to_string(), "split".into(), "class".into()];
            header.extend(ds.features.column_names.iter().cloned());
            cw.write_record(&header)?;
            for i in 0..ds.features.rows() {
                let mut rec = vec![
                    format_timestamp(series.bars()[ds.features.row_index[i]].timestamp),
                    if i < ds.split_index { "train" } else { "test" }.to_string(),
                    ds.labels[i].to_string(),
                ];
                rec.extend(ds.features.values.row(i).iter().map(|v| v.to_string()));
                cw.write_record(&rec)?;
            }
            cw.flush()?;
            let explained: f64 = ds.pca.explained_variance_ratio.iter().sum();
            log::info!(
                "{} rows ({} train), {} components explaining {:.3}",
                ds.labels.len(),
                ds.split_index,
                pca,
                explained
            );
        }
        Command::Train { features, hidden, blocks, epochs, batch, lr, seed, output } => {
            let f = read_features(&features)?;
            let rows: Vec<usize> = (0..f.labels.len()).filter(|&i| f.is_train[i]).collect();
            let cfg = MlpConfig {
                input_dim: f.values.cols(),
                hidden_dim: hidden,
                n_residual_blocks: blocks,
                epochs,
                batch_size: batch,
                learning_rate: lr,
                seed,
                ..Default::default()
            };
            let y: Vec<usize> = rows.iter().map(|&i| f.labels[i]).collect();
            let model = train(&f.values.select_rows(&rows), &y, &cfg)?;
            create(&output)?.write_all(model.to_json()?.as_bytes())?;
            log::info!("final training loss {:.5}", model.loss_history.last().copied().unwrap_or(f64::NAN));
        }
        Command::Predict { model, features, all, output, report } => {
            let model = MlpModel::from_json(&std::fs::read_to_string(&model)?)?;
            let f = read_features(&features)?;
            let rows: Vec<usize> = (0..f.labels.len()).filter(|&i| all || !f.is_train[i]).collect();
            let pred = predict_with(&model, &f.values.select_rows(&rows), exec)?;
            let mut cw = csv::Writer::from_writer(create(&output)?);
            cw.write_record(["timestamp", "class", "predicted"])?;
            for (k, &i) in rows.iter().enumerate() {
                cw.write_record([f.timestamps[i].clone(), f.labels[i].to_string(), pred[k].to_string()])?;
            }
            cw.flush()?;
            let truth: Vec<usize> = rows.iter().map(|&i| f.labels[i]).collect();
            let rep = classification_report(&truth, &pred)?;
            print!("{}", rep.to_text());
            if let Some(p) = report {
                serde_json::to_writer_pretty(create(&p)?, &rep)?;
            }
        }
        Command::Backtest { input, predictions, costs, params, output } => {
            let series = input.load()?;
            let signal = read_signal(&predictions, &series)?;
            let vol = ema_volatility(&series, costs.vol_span)?;
            let rep =
                run_backtest(&series, &signal, &vol, &costs.strategy(parse_multipliers(&params)?), &costs.costs())?;
            std::fs::create_dir_all(&output)?;
            serde_json::to_writer_pretty(create(&output.join("backtest.json"))?, &rep.stats)?;
            rep.write_trades_csv(create(&output.join("trades.csv"))?)?;
            rep.write_equity_csv(create(&output.join("equity.csv"))?)?;
            let s = &rep.stats;
            println!(
                "trades {}  total return {:.4}  annualized {:.4}  sharpe {}  max drawdown {:.4}",
                rep.trades.len(),
                s.total_return,
                s.annualized_return,
                s.sharpe.map_or("n/a".to_string(), |v| format!("{v:.3}")),
                s.max_drawdown
            );
        }
        Command::Optimize { input, predictions, costs, bounds, pop, gens, seed, objective, output } => {
            let series = input.load()?;
            let signal = read_signal(&predictions, &series)?;
            let vol = ema_volatility(&series, costs.vol_span)?;
            let cfg = GaConfig { population: pop, generations: gens, seed, ..Default::default() };
            let objective = match objective {
                ObjectiveArg::Sharpe => Objective::Sharpe,
                ObjectiveArg::TotalReturn => Objective::TotalReturn,
            };
            let (best, outcome) = optimize_multipliers(
                &series,
                &signal,
                &vol,
                &costs.strategy([5.0, 2.0, 5.0, 2.0]),
                &costs.costs(),
                &parse_bounds(&bounds)?,
                objective,
                &cfg,
                exec,
            )?;
            #[derive(serde::Serialize)]
            struct Out<'a> {
                objective: Objective,
                best: StrategyParams,
                outcome: &'a ffdlab::backtest::GaOutcome,
                config: GaConfig,
            }
            serde_json::to_writer_pretty(create(&output)?, &Out { objective, best, outcome: &outcome, config: cfg })?;
            println!("best [pa,pb,pc,pd] = {:?}  fitness {}", best.multipliers(), outcome.best_fitness);
        }
        Command::Run { config, input, seed, d, epochs, output, print_config } => {
            let mut cfg = match &config {
                Some(p) => PipelineConfig::from_toml(&std::fs::read_to_string(p)?)
                    .with_context(|| format!("parsing {}", p.display()))?,
                None => PipelineConfig::default(),
            };
            if input.is_some() {
                cfg.input.path = input;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(d) = d {
                cfg.fracdiff.d = d;
            }
            if let Some(e) = epochs {
                cfg.model.epochs = e;
            }
            if print_config {
                print!("{}", cfg.to_toml());
                return Ok(());
            }
            let summary = run_pipeline(&cfg, &output, exec)?;
            println!(
                "run complete: d = {}, config hash {}",
                summary.manifest.chosen_d.map_or("n/a".into(), |d| d.to_string()),
                summary.manifest.config_hash
            );
        }
        Command::Synth { kind, length, seed, period, phi, sigma, output } => {
            let kind = match kind {
                KindArg::RandomWalk => SynthKind::RandomWalk { start: 3000.0, step_sd: sigma.unwrap_or(2.0) },
                KindArg::Gbm => SynthKind::Gbm { start: 3000.0, mu: 0.0, sigma: sigma.unwrap_or(0.001) },
                KindArg::Ar1 => SynthKind::Ar1 { level: 3000.0, phi, noise_sd: sigma.unwrap_or(2.0) },
            };
            let params = SynthParams { period_minutes: period, ..SynthParams::new(kind) };
            generate_synthetic(length, seed, &params)?.write_csv(create(&output)?)?;
        }
    }
    Ok(())
}
