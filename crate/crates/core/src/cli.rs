//! Command-line surface: `prepare`, `train`, `gridsearch`, `prune`, `online`,
//! `forecast` and `bench`.

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use crate::config::{keys_help, ReportFormat, RunConfig, ScalerFit};
use crate::data::{
    aggregate_machine_usage, apply_scaler, fit_scaler_matrix, interpolate_missing, parse_trace,
    read_series_csv, split_dataset, windows_from_matrix, write_series_csv, MachineSeries,
    ScalerParams, TraceSchema,
};
use crate::error::{Error, Result};
use crate::eval::{bench_forecast, mae, rmse, EvalReport};
use crate::matrix::Matrix;
use crate::model::{CellKind, ForecastModel, Network};
use crate::online::{prequential_run_with, BatchResult, BatchSizeRow};
use crate::prune::{prune_network, PruneMethod};
use crate::train::{grid_search, train_network, Optimizer};
use crate::util::atomic_write;

#[derive(Debug, Parser)]
#[command(
    name = "loadcast",
    version,
    about = "Multistep host-workload forecasting with recurrent networks"
)]
pub struct Cli {
    /// Configuration file (TOML).
    #[arg(long, global = true, env = "LOADCAST_CONFIG", value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Override one configuration key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse a raw trace, aggregate one machine and write its canonical series.
    Prepare(PrepareArgs),
    /// Train one network and save it with its scaler.
    Train(TrainArgs),
    /// Train every grid candidate and save the best.
    Gridsearch(GridArgs),
    /// Remove hidden units from a saved model.
    Prune(PruneArgs),
    /// Prequential evaluation with online adaptation.
    Online(OnlineArgs),
    /// Write `timestamp,actual,predicted` for the m-step-ahead target.
    Forecast(ForecastArgs),
    /// Accuracy, cost and latency report for a saved model.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// data.trace
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// data.machine
    #[arg(long)]
    pub machine: Option<String>,
    /// data.series
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// data.schema
    #[arg(long)]
    pub schema: Option<String>,
    /// data.interval
    #[arg(long)]
    pub interval: Option<i64>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// data.series
    #[arg(long)]
    pub series: Option<PathBuf>,
    /// data.features
    #[arg(long, value_delimiter = ',')]
    pub features: Option<Vec<String>>,
    /// data.target
    #[arg(long)]
    pub target: Option<String>,
    /// data.train_fraction
    #[arg(long)]
    pub train_fraction: Option<f64>,
    /// data.scaler_fit
    #[arg(long, value_parser = parse_scaler_fit)]
    pub scaler_fit: Option<ScalerFit>,
}

#[derive(Debug, Args)]
pub struct OptimArgs {
    /// train.optimizer
    #[arg(long, value_parser = parse_optimizer)]
    pub optimizer: Option<Optimizer>,
    /// train.learning_rate
    #[arg(long = "lr")]
    pub learning_rate: Option<f64>,
    /// train.epochs
    #[arg(long)]
    pub epochs: Option<usize>,
    /// train.batch_size
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// train.seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// train.lbfgs_memory
    #[arg(long)]
    pub lbfgs_memory: Option<usize>,
    /// train.lbfgs_max_iters
    #[arg(long)]
    pub lbfgs_max_iters: Option<usize>,
    /// train.convergence_tol
    #[arg(long)]
    pub tol: Option<f64>,
    /// train.clip_norm
    #[arg(long)]
    pub clip_norm: Option<f64>,
    /// train.freeze_biases
    #[arg(long)]
    pub freeze_biases: bool,
    /// train.report
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    /// model.path (output)
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// model.cell
    #[arg(long, value_parser = parse_cell)]
    pub cell: Option<CellKind>,
    /// model.hidden
    #[arg(long)]
    pub hidden: Option<usize>,
    /// model.layers
    #[arg(long)]
    pub layers: Option<usize>,
    /// model.lookback
    #[arg(long)]
    pub lookback: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
    /// model.path (output)
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// model.cell
    #[arg(long, value_parser = parse_cell)]
    pub cell: Option<CellKind>,
    /// grid.hidden_sizes
    #[arg(long, value_delimiter = ',')]
    pub hidden_sizes: Option<Vec<usize>>,
    /// grid.layer_counts
    #[arg(long, value_delimiter = ',')]
    pub layer_counts: Option<Vec<usize>>,
    /// grid.lookbacks
    #[arg(long, value_delimiter = ',')]
    pub lookbacks: Option<Vec<usize>>,
    /// grid.table
    #[arg(long)]
    pub table: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PruneArgs {
    /// model.path (input)
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// prune.output
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// prune.method
    #[arg(long, value_parser = parse_method)]
    pub method: Option<PruneMethod>,
    /// prune.amount
    #[arg(long)]
    pub amount: Option<f64>,
    /// prune.seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// prune.finetune_epochs
    #[arg(long)]
    pub finetune_epochs: Option<usize>,
    /// data.series (needed for fine-tuning)
    #[arg(long)]
    pub series: Option<PathBuf>,
    /// prune.report
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OnlineArgs {
    /// model.path (input)
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// data.series
    #[arg(long)]
    pub series: Option<PathBuf>,
    /// online.batch_sizes
    #[arg(long, value_delimiter = ',')]
    pub batch_sizes: Option<Vec<usize>>,
    /// online.optimizer
    #[arg(long, value_parser = parse_optimizer)]
    pub optimizer: Option<Optimizer>,
    /// online.adapt_epochs
    #[arg(long)]
    pub adapt_epochs: Option<usize>,
    /// online.learning_rate
    #[arg(long = "lr")]
    pub learning_rate: Option<f64>,
    /// online.lbfgs_memory
    #[arg(long)]
    pub lbfgs_memory: Option<usize>,
    /// online.lbfgs_max_iters
    #[arg(long)]
    pub lbfgs_max_iters: Option<usize>,
    /// online.clip_norm
    #[arg(long)]
    pub clip_norm: Option<f64>,
    /// online.start_fraction
    #[arg(long)]
    pub start_fraction: Option<f64>,
    /// online.output
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// online.summary
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ForecastArgs {
    /// model.path (input)
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// data.series
    #[arg(long)]
    pub series: Option<PathBuf>,
    /// forecast.steps
    #[arg(long)]
    pub steps: Option<usize>,
    /// forecast.start_fraction
    #[arg(long)]
    pub start_fraction: Option<f64>,
    /// forecast.output
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// model.path (input)
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// data.series
    #[arg(long)]
    pub series: Option<PathBuf>,
    /// forecast.steps
    #[arg(long)]
    pub steps: Option<usize>,
    /// forecast.start_fraction
    #[arg(long)]
    pub start_fraction: Option<f64>,
    /// bench.repetitions
    #[arg(long)]
    pub repetitions: Option<usize>,
    /// bench.windows
    #[arg(long)]
    pub windows: Option<usize>,
    /// bench.format
    #[arg(long, value_parser = parse_format)]
    pub format: Option<ReportFormat>,
    /// bench.output
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_optimizer(s: &str) -> std::result::Result<Optimizer, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_cell(s: &str) -> std::result::Result<CellKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_method(s: &str) -> std::result::Result<PruneMethod, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_scaler_fit(s: &str) -> std::result::Result<ScalerFit, String> {
    match s {
        "train" => Ok(ScalerFit::Train),
        "full" => Ok(ScalerFit::Full),
        _ => Err(format!("unknown scaler fit {s:?} (train or full)")),
    }
}

fn parse_format(s: &str) -> std::result::Result<ReportFormat, String> {
    match s {
        "json" => Ok(ReportFormat::Json),
        "csv" => Ok(ReportFormat::Csv),
        _ => Err(format!("unknown format {s:?} (json or csv)")),
    }
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

fn set_opt<T>(slot: &mut Option<T>, flag: Option<T>) {
    if flag.is_some() {
        *slot = flag;
    }
}

impl DataArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        set_opt(&mut cfg.data.series, self.series.clone());
        set(&mut cfg.data.features, self.features.clone());
        set(&mut cfg.data.target, self.target.clone());
        set(&mut cfg.data.train_fraction, self.train_fraction);
        set(&mut cfg.data.scaler_fit, self.scaler_fit);
    }
}

impl OptimArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        let t = &mut cfg.train;
        set(&mut t.optimizer, self.optimizer);
        set(&mut t.learning_rate, self.learning_rate);
        set(&mut t.epochs, self.epochs);
        set(&mut t.batch_size, self.batch_size);
        set(&mut t.seed, self.seed);
        set(&mut t.lbfgs_memory, self.lbfgs_memory);
        set(&mut t.lbfgs_max_iters, self.lbfgs_max_iters);
        set(&mut t.convergence_tol, self.tol);
        set(&mut t.clip_norm, self.clip_norm);
        t.freeze_biases |= self.freeze_biases;
        set_opt(&mut t.report, self.report.clone());
    }
}

impl Command {
    /// Folds this command's flags into `cfg`.
    fn apply(&self, cfg: &mut RunConfig) {
        match self {
            Command::Prepare(a) => {
                set_opt(&mut cfg.data.trace, a.trace.clone());
                set_opt(&mut cfg.data.machine, a.machine.clone());
                set_opt(&mut cfg.data.series, a.out.clone());
                set(&mut cfg.data.schema, a.schema.clone());
                set(&mut cfg.data.interval, a.interval);
            }
            Command::Train(a) => {
                a.data.apply(cfg);
                a.optim.apply(cfg);
                set_opt(&mut cfg.model.path, a.model.clone());
                set(&mut cfg.model.cell, a.cell);
                set(&mut cfg.model.hidden, a.hidden);
                set(&mut cfg.model.layers, a.layers);
                set(&mut cfg.model.lookback, a.lookback);
            }
            Command::Gridsearch(a) => {
                a.data.apply(cfg);
                a.optim.apply(cfg);
                set_opt(&mut cfg.model.path, a.model.clone());
                set(&mut cfg.model.cell, a.cell);
                set(&mut cfg.grid.hidden_sizes, a.hidden_sizes.clone());
                set(&mut cfg.grid.layer_counts, a.layer_counts.clone());
                set(&mut cfg.grid.lookbacks, a.lookbacks.clone());
                set_opt(&mut cfg.grid.table, a.table.clone());
            }
            Command::Prune(a) => {
                set_opt(&mut cfg.model.path, a.model.clone());
                set_opt(&mut cfg.prune.output, a.out.clone());
                set(&mut cfg.prune.method, a.method);
                set(&mut cfg.prune.amount, a.amount);
                set(&mut cfg.prune.seed, a.seed);
                set(&mut cfg.prune.finetune_epochs, a.finetune_epochs);
                set_opt(&mut cfg.data.series, a.series.clone());
                set_opt(&mut cfg.prune.report, a.report.clone());
            }
            Command::Online(a) => {
                set_opt(&mut cfg.model.path, a.model.clone());
                set_opt(&mut cfg.data.series, a.series.clone());
                let o = &mut cfg.online;
                set(&mut o.batch_sizes, a.batch_sizes.clone());
                set(&mut o.optimizer, a.optimizer);
                set(&mut o.adapt_epochs, a.adapt_epochs);
                set(&mut o.learning_rate, a.learning_rate);
                set(&mut o.lbfgs_memory, a.lbfgs_memory);
                set(&mut o.lbfgs_max_iters, a.lbfgs_max_iters);
                set(&mut o.clip_norm, a.clip_norm);
                set(&mut o.start_fraction, a.start_fraction);
                set_opt(&mut o.output, a.out.clone());
                set_opt(&mut o.summary, a.summary.clone());
            }
            Command::Forecast(a) => {
                set_opt(&mut cfg.model.path, a.model.clone());
                set_opt(&mut cfg.data.series, a.series.clone());
                set(&mut cfg.forecast.steps, a.steps);
                set(&mut cfg.forecast.start_fraction, a.start_fraction);
                set_opt(&mut cfg.forecast.output, a.out.clone());
            }
            Command::Bench(a) => {
                set_opt(&mut cfg.model.path, a.model.clone());
                set_opt(&mut cfg.data.series, a.series.clone());
                set(&mut cfg.forecast.steps, a.steps);
                set(&mut cfg.forecast.start_fraction, a.start_fraction);
                set(&mut cfg.bench.repetitions, a.repetitions);
                set(&mut cfg.bench.windows, a.windows);
                set(&mut cfg.bench.format, a.format);
                set_opt(&mut cfg.bench.output, a.out.clone());
            }
        }
    }
}

fn require<'a, T>(value: &'a Option<T>, key: &str) -> Result<&'a T> {
    value
        .as_ref()
        .ok_or_else(|| Error::config(format!("{key} is required for this command")))
}

/// Writes to `path` atomically, or to stdout when `path` is `None`.
fn emit(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => atomic_write(p, bytes),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes)?;
            out.flush()?;
            Ok(())
        }
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn load_series(path: &Path, cfg: &RunConfig, features: &[String]) -> Result<MachineSeries> {
    let machine = cfg.data.machine.clone().unwrap_or_else(|| "series".into());
    let series = read_series_csv(open(path)?, &machine, cfg.data.interval)?;
    let series = series.select(features)?;
    if series.has_missing() {
        interpolate_missing(&series)
    } else {
        Ok(series)
    }
}

fn scaler_rows(cfg: &RunConfig, len: usize) -> Result<usize> {
    let rows = match cfg.data.scaler_fit {
        ScalerFit::Full => len,
        ScalerFit::Train => (len as f64 * cfg.data.train_fraction).floor() as usize,
    };
    if rows == 0 {
        return Err(Error::InsufficientData(
            "no rows to fit the scaler on".into(),
        ));
    }
    Ok(rows)
}

struct Prepared {
    series: MachineSeries,
    scaler: ScalerParams,
    normalized: Matrix,
    target: usize,
}

fn prepare_training_data(cfg: &RunConfig) -> Result<Prepared> {
    let path = require(&cfg.data.series, "data.series")?;
    let series = load_series(path, cfg, &cfg.data.features)?;
    let scaler = fit_scaler_matrix(&series.values, 0..scaler_rows(cfg, series.len())?)?;
    let normalized = apply_scaler(&series.values, &scaler)?;
    Ok(Prepared {
        target: cfg.target_index()?,
        series,
        scaler,
        normalized,
    })
}

fn cmd_prepare(cfg: &RunConfig) -> Result<()> {
    let trace = require(&cfg.data.trace, "data.trace")?;
    let machine = require(&cfg.data.machine, "data.machine")?;
    let out = require(&cfg.data.series, "data.series")?;
    let schema = TraceSchema::preset(&cfg.data.schema)?;
    let parsed = parse_trace(open(trace)?, &schema)?;
    let raw = aggregate_machine_usage(&parsed.records, machine, cfg.data.interval)?;
    let series = interpolate_missing(&raw)?;
    let mut bytes = Vec::new();
    write_series_csv(&series, &mut bytes)?;
    atomic_write(out, &bytes)?;
    let mut msg = format!(
        "rows: {}\nskipped records: {}\n",
        series.len(),
        parsed.skipped
    );
    for (name, mean) in series.feature_names.iter().zip(series.feature_means()) {
        msg.push_str(&format!("mean {name}: {mean}\n"));
    }
    emit(None, msg.as_bytes())
}

fn save_model(path: &Path, network: Network, prepared: &Prepared) -> Result<()> {
    ForecastModel {
        network,
        feature_names: prepared.series.feature_names.clone(),
        target_feature: prepared.target,
        interval_seconds: prepared.series.interval_seconds,
        scaler: Some(prepared.scaler.clone()),
    }
    .save(path)
}

fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let model_path = require(&cfg.model.path, "model.path")?;
    let p = prepare_training_data(cfg)?;
    let m = &cfg.model;
    let ds = windows_from_matrix(&p.normalized, &p.series.feature_names, m.lookback, 1)?;
    let (train, val) = split_dataset(&ds, cfg.data.train_fraction)?;
    let tc = cfg.train.to_config(p.target);
    let init = Network::new(
        m.cell,
        p.series.feature_count(),
        m.hidden,
        m.layers,
        m.lookback,
        tc.seed,
    )?;
    let (net, report) = train_network(&init, &train, &val, &tc)?;
    save_model(model_path, net, &p)?;
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    emit(cfg.train.report.as_deref(), json.as_bytes())
}

fn cmd_gridsearch(cfg: &RunConfig) -> Result<()> {
    let model_path = require(&cfg.model.path, "model.path")?;
    let p = prepare_training_data(cfg)?;
    let result = grid_search(
        &cfg.grid.to_spec(),
        &p.normalized,
        &p.series.feature_names,
        cfg.model.cell,
        cfg.data.train_fraction,
        &cfg.train.to_config(p.target),
    )?;
    let mut table = Vec::new();
    result.write_csv(&mut table)?;
    save_model(model_path, result.best_network.clone(), &p)?;
    emit(cfg.grid.table.as_deref(), &table)?;
    eprintln!(
        "best: hidden={} layers={} lookback={} rmse={} ({} of {} candidates evaluated)",
        result.best.hidden,
        result.best.layers,
        result.best.lookback,
        result.best.rmse,
        result.evaluated(),
        result.table.len()
    );
    Ok(())
}

/// Loads a model and the series it was trained on, normalized with its scaler.
fn load_model_and_series(cfg: &RunConfig) -> Result<(ForecastModel, MachineSeries, Matrix)> {
    let model = ForecastModel::load(require(&cfg.model.path, "model.path")?)?;
    let series = load_series(
        require(&cfg.data.series, "data.series")?,
        cfg,
        &model.feature_names,
    )?;
    if series.len() > 1 && series.interval_seconds != model.interval_seconds {
        return Err(Error::config(format!(
            "series interval {}s differs from the model's {}s",
            series.interval_seconds, model.interval_seconds
        )));
    }
    let normalized = match &model.scaler {
        Some(s) => apply_scaler(&series.values, s)?,
        None => series.values.clone(),
    };
    Ok((model, series, normalized))
}

fn cmd_prune(cfg: &RunConfig) -> Result<()> {
    let input = require(&cfg.model.path, "model.path")?;
    let output = require(&cfg.prune.output, "prune.output")?;
    if cfg.prune.finetune_epochs > 0 {
        require(&cfg.data.series, "data.series")?;
    }
    let (mut model, normalized) = if cfg.prune.finetune_epochs > 0 {
        let (m, _, n) = load_model_and_series(cfg)?;
        (m, Some(n))
    } else {
        (ForecastModel::load(input)?, None)
    };
    let (mut pruned, report) = prune_network(&model.network, &cfg.prune.to_spec())?;
    if let Some(values) = normalized {
        let ds = windows_from_matrix(&values, &model.feature_names, pruned.lookback, 1)?;
        let (train, val) = split_dataset(&ds, cfg.data.train_fraction)?;
        let tc = crate::train::TrainConfig {
            epochs: cfg.prune.finetune_epochs,
            ..cfg.train.to_config(model.target_feature)
        };
        pruned = train_network(&pruned, &train, &val, &tc)?.0;
    }
    model.network = pruned;
    model.save(output)?;
    let mut json = report.to_json()?;
    json.push('\n');
    emit(cfg.prune.report.as_deref(), json.as_bytes())
}

fn cmd_online(cfg: &RunConfig) -> Result<()> {
    let (model, _, normalized) = load_model_and_series(cfg)?;
    let start = (normalized.rows() as f64 * cfg.online.start_fraction).floor() as usize;
    let n = normalized.cols();
    let stream = Matrix::from_vec(
        normalized.rows() - start,
        n,
        normalized.as_slice()[start * n..].to_vec(),
    )?;
    let mut sizes = cfg.online.batch_sizes.clone();
    sizes.sort_unstable();
    sizes.dedup();

    let mut per_batch: Box<dyn Write> = match &cfg.online.output {
        Some(p) => Box::new(tempfile_in_place(p)?),
        None => Box::new(std::io::stdout().lock()),
    };
    writeln!(per_batch, "batch_size,{}", BatchResult::CSV_HEADER)?;
    let mut rows = Vec::with_capacity(sizes.len());
    let mut failure = None;
    for &b in &sizes {
        let oc = cfg.online.to_config(b, model.target_feature);
        let mut write_err = None;
        let run = prequential_run_with(&model.network, &stream, &oc, |r| {
            if let Err(e) =
                writeln!(per_batch, "{b},{}", r.csv_row()).and_then(|_| per_batch.flush())
            {
                write_err.get_or_insert(e);
            }
        });
        if let Some(e) = write_err {
            return Err(e.into());
        }
        let row = match run {
            Ok((_, rep)) => BatchSizeRow {
                batch_size: b,
                batches: rep.batches.len(),
                cumulative_mae: rep.cumulative_mae,
                cumulative_rmse: rep.cumulative_rmse,
                final_batch_mae: rep.final_batch_mae,
                final_batch_rmse: rep.final_batch_rmse,
                error: rep
                    .aborted
                    .as_ref()
                    .map(|a| format!("batch {}: {}", a.batch_index, a.reason)),
                report: None,
            },
            Err(e) => BatchSizeRow {
                batch_size: b,
                batches: 0,
                cumulative_mae: f64::NAN,
                cumulative_rmse: f64::NAN,
                final_batch_mae: f64::NAN,
                final_batch_rmse: f64::NAN,
                error: Some(e.to_string()),
                report: None,
            },
        };
        if let Some(e) = &row.error {
            eprintln!("batch size {b} failed: {e}");
            failure.get_or_insert_with(|| e.clone());
        }
        rows.push(row);
    }
    per_batch.flush()?;
    drop(per_batch);
    if let Some(p) = &cfg.online.output {
        finish_in_place(p)?;
    }

    let mut summary = format!("{}\n", BatchSizeRow::CSV_HEADER);
    for r in &rows {
        summary.push_str(&r.csv_row());
        summary.push('\n');
    }
    match &cfg.online.summary {
        Some(p) => atomic_write(p, summary.as_bytes())?,
        None => eprint!("{summary}"),
    }
    match failure {
        Some(e) => Err(Error::numeric(format!("during online adaptation ({e})"))),
        None => Ok(()),
    }
}

fn staging_path(path: &Path) -> PathBuf {
    let mut name = path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".partial");
    path.with_file_name(name)
}

/// Streaming output goes to `<path>.partial` and is renamed once complete.
fn tempfile_in_place(path: &Path) -> Result<File> {
    let staging = staging_path(path);
    File::create(&staging).map_err(|e| Error::io(staging, e))
}

fn finish_in_place(path: &Path) -> Result<()> {
    std::fs::rename(staging_path(path), path).map_err(|e| Error::io(path, e))
}

/// Forecast origins `t` (first target row) with `k ≤ t` and `t + m ≤ T`,
/// starting at `floor(start_fraction · T)`.
fn origins(len: usize, k: usize, m: usize, start_fraction: f64) -> Result<std::ops::Range<usize>> {
    let first = ((len as f64 * start_fraction).floor() as usize).max(k);
    let end = (len + 1).saturating_sub(m);
    if first >= end {
        return Err(Error::EmptyInput(format!(
            "no forecast origins: series of {len} rows, lookback {k}, horizon {m}, start row {first}"
        )));
    }
    Ok(first..end)
}

fn window_at(values: &Matrix, origin: usize, k: usize) -> Matrix {
    let n = values.cols();
    Matrix::from_vec(
        k,
        n,
        values.as_slice()[(origin - k) * n..origin * n].to_vec(),
    )
    .expect("slice of a valid matrix")
}

struct Forecasts {
    rows: Vec<usize>,
    actual: Vec<f64>,
    predicted: Vec<f64>,
    actual_norm: Vec<f64>,
    predicted_norm: Vec<f64>,
}

fn forecast_range(
    model: &ForecastModel,
    series: &MachineSeries,
    normalized: &Matrix,
    m: usize,
    start_fraction: f64,
) -> Result<Forecasts> {
    let net = &model.network;
    let target = model.target_feature;
    let range = origins(series.len(), net.lookback, m, start_fraction)?;
    let mut f = Forecasts {
        rows: Vec::with_capacity(range.len()),
        actual: Vec::with_capacity(range.len()),
        predicted: Vec::with_capacity(range.len()),
        actual_norm: Vec::with_capacity(range.len()),
        predicted_norm: Vec::with_capacity(range.len()),
    };
    for t in range {
        let out = net.forecast(&window_at(normalized, t, net.lookback), m)?;
        let row = t + m - 1;
        let p = out.get(m - 1, target);
        f.rows.push(row);
        f.actual.push(series.values.get(row, target));
        f.actual_norm.push(normalized.get(row, target));
        f.predicted_norm.push(p);
        f.predicted.push(match &model.scaler {
            Some(s) => s.invert_value(target, p),
            None => p,
        });
    }
    Ok(f)
}

fn cmd_forecast(cfg: &RunConfig) -> Result<()> {
    let (model, series, normalized) = load_model_and_series(cfg)?;
    let f = forecast_range(
        &model,
        &series,
        &normalized,
        cfg.forecast.steps,
        cfg.forecast.start_fraction,
    )?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["timestamp", "actual", "predicted"])?;
    for i in 0..f.rows.len() {
        w.write_record([
            series.timestamp(f.rows[i]).to_string(),
            f.actual[i].to_string(),
            f.predicted[i].to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Internal(e.to_string()))?;
    emit(cfg.forecast.output.as_deref(), &bytes)
}

fn cmd_bench(cfg: &RunConfig) -> Result<()> {
    let (model, series, normalized) = load_model_and_series(cfg)?;
    let m = cfg.forecast.steps;
    let f = forecast_range(&model, &series, &normalized, m, cfg.forecast.start_fraction)?;
    let k = model.network.lookback;
    let windows: Vec<Matrix> = f
        .rows
        .iter()
        .take(cfg.bench.windows)
        .map(|&row| window_at(&normalized, row + 1 - m, k))
        .collect();
    let bench = bench_forecast(&model.network, &windows, cfg.bench.repetitions)?;
    let report = EvalReport {
        target_feature: model.feature_names[model.target_feature].clone(),
        horizon: m,
        n: f.rows.len(),
        mae: mae(&f.actual, &f.predicted)?,
        rmse: rmse(&f.actual, &f.predicted)?,
        mae_normalized: mae(&f.actual_norm, &f.predicted_norm)?,
        rmse_normalized: rmse(&f.actual_norm, &f.predicted_norm)?,
        params: bench.params,
        flops: bench.flops,
        latency: Some(bench.latency),
    };
    let text = match cfg.bench.format {
        ReportFormat::Json => format!("{}\n", report.to_json()?),
        ReportFormat::Csv => format!("{}\n{}", EvalReport::CSV_HEADER, report.csv_row()),
    };
    emit(cfg.bench.output.as_deref(), text.as_bytes())
}

/// Parses `args`, runs the command and returns the error that should set the
/// exit code. Argument errors and `--help` exit inside clap.
pub fn run_from<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let command = Cli::command().after_long_help(keys_help());
    let matches = command.get_matches_from(args);
    let cli = Cli::from_arg_matches(&matches).map_err(|e| Error::config(e.to_string()))?;
    let mut cfg = RunConfig::load(cli.config.as_deref(), &cli.overrides)?;
    cli.command.apply(&mut cfg);
    cfg.validate()?;
    match cli.command {
        Command::Prepare(_) => cmd_prepare(&cfg),
        Command::Train(_) => cmd_train(&cfg),
        Command::Gridsearch(_) => cmd_gridsearch(&cfg),
        Command::Prune(_) => cmd_prune(&cfg),
        Command::Online(_) => cmd_online(&cfg),
        Command::Forecast(_) => cmd_forecast(&cfg),
        Command::Bench(_) => cmd_bench(&cfg),
    }
}

/// Process entry point: runs the CLI and maps errors to exit codes.
pub fn main() -> i32 {
    match run_from(std::env::args_os()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
