//! The run configuration document shared by every CLI command.
//!
//! A TOML file with one table per section (`[train]`, or dotted keys such as
//! `train.epochs = 20`). Unknown keys are rejected. Overrides given as
//! `section.key=value` strings are merged before deserialization, and command
//! flags are applied after it; [`RunConfig::validate`] runs before any work.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{TraceSchema, FEATURE_NAMES};
use crate::error::{Error, Result};
use crate::model::CellKind;
use crate::online::OnlineConfig;
use crate::prune::{PruneMethod, PruneSpec};
use crate::train::{GridSpec, Optimizer, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalerFit {
    /// Fit on the rows of the training fraction only.
    Train,
    /// Fit on every row of the series.
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub trace: Option<PathBuf>,
    pub schema: String,
    pub machine: Option<String>,
    pub interval: i64,
    pub series: Option<PathBuf>,
    pub features: Vec<String>,
    pub target: String,
    pub train_fraction: f64,
    pub scaler_fit: ScalerFit,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            trace: None,
            schema: "google".into(),
            machine: None,
            interval: 300,
            series: None,
            features: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            target: "cpu_rate".into(),
            train_fraction: 0.8,
            scaler_fit: ScalerFit::Train,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub cell: CellKind,
    pub hidden: usize,
    pub layers: usize,
    pub lookback: usize,
    pub path: Option<PathBuf>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            cell: CellKind::Gru,
            hidden: 64,
            layers: 3,
            lookback: 12,
            path: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub lbfgs_memory: usize,
    pub lbfgs_max_iters: usize,
    pub convergence_tol: f64,
    pub clip_norm: f64,
    pub freeze_biases: bool,
    pub report: Option<PathBuf>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            optimizer: t.optimizer,
            learning_rate: t.learning_rate,
            epochs: t.epochs,
            batch_size: t.batch_size,
            seed: t.seed,
            lbfgs_memory: t.lbfgs_memory,
            lbfgs_max_iters: t.lbfgs_max_iters,
            convergence_tol: t.convergence_tol,
            clip_norm: t.clip_norm,
            freeze_biases: t.freeze_biases,
            report: None,
        }
    }
}

impl TrainSection {
    pub fn to_config(&self, target_feature: usize) -> TrainConfig {
        TrainConfig {
            optimizer: self.optimizer,
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            lbfgs_memory: self.lbfgs_memory,
            lbfgs_max_iters: self.lbfgs_max_iters,
            convergence_tol: self.convergence_tol,
            clip_norm: self.clip_norm,
            freeze_biases: self.freeze_biases,
            target_feature,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub hidden_sizes: Vec<usize>,
    pub layer_counts: Vec<usize>,
    pub lookbacks: Vec<usize>,
    pub table: Option<PathBuf>,
}

impl Default for GridSection {
    fn default() -> Self {
        let g = GridSpec::default();
        GridSection {
            hidden_sizes: g.hidden_sizes,
            layer_counts: g.layer_counts,
            lookbacks: g.lookbacks,
            table: None,
        }
    }
}

impl GridSection {
    pub fn to_spec(&self) -> GridSpec {
        GridSpec {
            hidden_sizes: self.hidden_sizes.clone(),
            layer_counts: self.layer_counts.clone(),
            lookbacks: self.lookbacks.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruneSection {
    pub method: PruneMethod,
    pub amount: f64,
    pub seed: u64,
    pub finetune_epochs: usize,
    pub output: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

impl Default for PruneSection {
    fn default() -> Self {
        let p = PruneSpec::default();
        PruneSection {
            method: p.method,
            amount: p.amount,
            seed: p.seed,
            finetune_epochs: 0,
            output: None,
            report: None,
        }
    }
}

impl PruneSection {
    pub fn to_spec(&self) -> PruneSpec {
        PruneSpec {
            method: self.method,
            amount: self.amount,
            seed: self.seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OnlineSection {
    pub batch_sizes: Vec<usize>,
    pub optimizer: Optimizer,
    pub adapt_epochs: usize,
    pub learning_rate: f64,
    pub lbfgs_memory: usize,
    pub lbfgs_max_iters: usize,
    pub convergence_tol: f64,
    pub clip_norm: f64,
    pub start_fraction: f64,
    pub output: Option<PathBuf>,
    pub summary: Option<PathBuf>,
}

impl Default for OnlineSection {
    fn default() -> Self {
        let o = OnlineConfig::default();
        OnlineSection {
            batch_sizes: vec![64, 128],
            optimizer: o.optimizer,
            adapt_epochs: o.adapt_epochs,
            learning_rate: o.learning_rate,
            lbfgs_memory: o.lbfgs_memory,
            lbfgs_max_iters: o.lbfgs_max_iters,
            convergence_tol: o.convergence_tol,
            clip_norm: o.clip_norm,
            start_fraction: 0.8,
            output: None,
            summary: None,
        }
    }
}

impl OnlineSection {
    pub fn to_config(&self, batch_size: usize, target_feature: usize) -> OnlineConfig {
        OnlineConfig {
            batch_size,
            optimizer: self.optimizer,
            adapt_epochs: self.adapt_epochs,
            learning_rate: self.learning_rate,
            lbfgs_memory: self.lbfgs_memory,
            lbfgs_max_iters: self.lbfgs_max_iters,
            convergence_tol: self.convergence_tol,
            clip_norm: self.clip_norm,
            target_feature,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastSection {
    pub steps: usize,
    pub start_fraction: f64,
    pub output: Option<PathBuf>,
}

impl Default for ForecastSection {
    fn default() -> Self {
        ForecastSection {
            steps: 3,
            start_fraction: 0.8,
            output: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub repetitions: usize,
    pub windows: usize,
    pub format: ReportFormat,
    pub output: Option<PathBuf>,
}

impl Default for BenchSection {
    fn default() -> Self {
        BenchSection {
            repetitions: 20,
            windows: 32,
            format: ReportFormat::Json,
            output: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub grid: GridSection,
    pub prune: PruneSection,
    pub online: OnlineSection,
    pub forecast: ForecastSection,
    pub bench: BenchSection,
}

/// Every configuration key with a one-line description.
pub const CONFIG_KEYS: &[(&str, &str)] = &[
    ("data.trace", "raw usage trace to prepare"),
    ("data.schema", "trace layout preset: google or simple"),
    ("data.machine", "machine ID to extract from the trace"),
    ("data.interval", "aggregation interval in seconds"),
    ("data.series", "canonical series CSV"),
    ("data.features", "feature columns used as model inputs"),
    ("data.target", "feature scored and forecast"),
    (
        "data.train_fraction",
        "chronological train share of the windows",
    ),
    (
        "data.scaler_fit",
        "rows the scaler is fit on: train or full",
    ),
    ("model.cell", "gru or lstm"),
    ("model.hidden", "units per recurrent layer"),
    ("model.layers", "number of stacked recurrent layers"),
    ("model.lookback", "input window length k"),
    (
        "model.path",
        "model file written by train/gridsearch, read by the rest",
    ),
    ("train.optimizer", "gd or lbfgs"),
    ("train.learning_rate", "GD step size"),
    ("train.epochs", "passes over the training set"),
    ("train.batch_size", "samples per GD step"),
    ("train.seed", "weight initialization seed"),
    ("train.lbfgs_memory", "L-BFGS curvature pairs kept"),
    ("train.lbfgs_max_iters", "L-BFGS iterations per epoch"),
    ("train.convergence_tol", "L-BFGS gradient-norm tolerance"),
    ("train.clip_norm", "GD gradient-norm clip, 0 disables"),
    ("train.freeze_biases", "keep biases fixed during training"),
    ("train.report", "training report JSON path (default stdout)"),
    ("grid.hidden_sizes", "hidden sizes searched"),
    ("grid.layer_counts", "layer counts searched"),
    ("grid.lookbacks", "lookbacks searched"),
    ("grid.table", "ranked results CSV path (default stdout)"),
    ("prune.method", "l1 or random"),
    (
        "prune.amount",
        "fraction of units removed per layer, in [0, 1)",
    ),
    ("prune.seed", "seed for random pruning"),
    (
        "prune.finetune_epochs",
        "training epochs after pruning (needs data.series)",
    ),
    ("prune.output", "pruned model path"),
    ("prune.report", "prune report JSON path (default stdout)"),
    ("online.batch_sizes", "online batch sizes compared"),
    ("online.optimizer", "gd or lbfgs"),
    (
        "online.adapt_epochs",
        "adaptation passes per batch, 0 disables",
    ),
    ("online.learning_rate", "GD adaptation step size"),
    ("online.lbfgs_memory", "L-BFGS curvature pairs kept"),
    (
        "online.lbfgs_max_iters",
        "L-BFGS iterations per adaptation pass",
    ),
    ("online.convergence_tol", "L-BFGS gradient-norm tolerance"),
    ("online.clip_norm", "GD gradient-norm clip, 0 disables"),
    (
        "online.start_fraction",
        "share of the series skipped before streaming",
    ),
    ("online.output", "per-batch CSV path (default stdout)"),
    ("online.summary", "summary CSV path (default stderr)"),
    ("forecast.steps", "horizon m in steps"),
    (
        "forecast.start_fraction",
        "share of the series before the first forecast origin",
    ),
    ("forecast.output", "forecast CSV path (default stdout)"),
    (
        "bench.repetitions",
        "timed passes over the benchmark windows",
    ),
    ("bench.windows", "windows timed per pass"),
    ("bench.format", "report format: json or csv"),
    ("bench.output", "report path (default stdout)"),
];

/// Text block listing [`CONFIG_KEYS`], used in `--help`.
pub fn keys_help() -> String {
    let width = CONFIG_KEYS.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut s =
        String::from("Configuration keys (set in the config file or with --set KEY=VALUE):\n");
    for (k, d) in CONFIG_KEYS {
        s.push_str(&format!("  {k:<width$}  {d}\n"));
    }
    s
}

fn parse_override(spec: &str) -> Result<(Vec<String>, toml::Value)> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::config(format!("override {spec:?} is not KEY=VALUE")))?;
    let key = key.trim();
    if !CONFIG_KEYS.iter().any(|(k, _)| *k == key) {
        return Err(Error::config(format!("unknown configuration key {key:?}")));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((key.split('.').map(str::to_string).collect(), value))
}

fn to_config_error(e: toml::de::Error) -> Error {
    Error::config(e.message().trim().to_string())
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_toml_with_overrides(text, &[])
    }

    /// Parses `text` after merging `overrides` (`section.key=value`) into it.
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: toml::Table = toml::from_str(text).map_err(to_config_error)?;
        for spec in overrides {
            let (path, value) = parse_override(spec)?;
            let (leaf, sections) = path.split_last().expect("keys have two parts");
            let mut table = &mut doc;
            for s in sections {
                table = table
                    .entry(s.clone())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                    .as_table_mut()
                    .ok_or_else(|| Error::config(format!("{s:?} is not a section")))?;
            }
            table.insert(leaf.clone(), value);
        }
        RunConfig::deserialize(toml::Value::Table(doc)).map_err(to_config_error)
    }

    /// Reads `path` if given, otherwise starts from defaults.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            None => String::new(),
        };
        Self::from_toml_with_overrides(&text, overrides)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Internal(e.to_string()))
    }

    pub fn target_index(&self) -> Result<usize> {
        self.data
            .features
            .iter()
            .position(|f| *f == self.data.target)
            .ok_or_else(|| {
                Error::config(format!(
                    "target {:?} is not among data.features",
                    self.data.target
                ))
            })
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        TraceSchema::preset(&d.schema)?;
        if d.interval <= 0 {
            return Err(Error::config("data.interval must be positive"));
        }
        if d.features.is_empty() {
            return Err(Error::config(
                "data.features must list at least one feature",
            ));
        }
        let mut sorted = d.features.clone();
        sorted.sort();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("data.features contains duplicates"));
        }
        let target = self.target_index()?;
        if !(d.train_fraction > 0.0 && d.train_fraction < 1.0) {
            return Err(Error::config(
                "data.train_fraction must lie strictly between 0 and 1",
            ));
        }
        let m = &self.model;
        if m.hidden < 1 || m.layers < 1 || m.lookback < 1 {
            return Err(Error::config(
                "model.hidden, model.layers and model.lookback must be at least 1",
            ));
        }
        self.train.to_config(target).validate()?;
        self.grid.to_spec().validate()?;
        self.prune.to_spec().validate()?;
        let o = &self.online;
        if o.batch_sizes.is_empty() || o.batch_sizes.contains(&0) {
            return Err(Error::config("online.batch_sizes must list positive sizes"));
        }
        o.to_config(1, target).validate()?;
        for (name, f) in [
            ("online.start_fraction", o.start_fraction),
            ("forecast.start_fraction", self.forecast.start_fraction),
        ] {
            if !(0.0..1.0).contains(&f) {
                return Err(Error::config(format!("{name} must lie in [0, 1)")));
            }
        }
        if self.forecast.steps < 1 {
            return Err(Error::config("forecast.steps must be at least 1"));
        }
        if self.bench.repetitions < 1 || self.bench.windows < 1 {
            return Err(Error::config(
                "bench.repetitions and bench.windows must be at least 1",
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn dotted_keys(v: &toml::Value, prefix: &str, out: &mut BTreeSet<String>) {
        if let toml::Value::Table(t) = v {
            for (k, child) in t {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                if prefix.is_empty() {
                    dotted_keys(child, &key, out);
                } else {
                    out.insert(key);
                }
            }
        }
    }

    #[test]
    fn key_table_covers_every_field() {
        let mut cfg = RunConfig::default();
        let p = Some(PathBuf::from("x"));
        cfg.data.trace = p.clone();
        cfg.data.machine = Some("m".into());
        cfg.data.series = p.clone();
        cfg.model.path = p.clone();
        cfg.train.report = p.clone();
        cfg.grid.table = p.clone();
        cfg.prune.output = p.clone();
        cfg.prune.report = p.clone();
        cfg.online.output = p.clone();
        cfg.online.summary = p.clone();
        cfg.forecast.output = p.clone();
        cfg.bench.output = p;
        let value = toml::Value::try_from(&cfg).unwrap();
        let mut found = BTreeSet::new();
        dotted_keys(&value, "", &mut found);
        let listed: BTreeSet<String> = CONFIG_KEYS.iter().map(|(k, _)| k.to_string()).collect();
        assert_eq!(found, listed);
        let help = keys_help();
        assert!(CONFIG_KEYS.iter().all(|(k, _)| help.contains(k)));
    }

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(
            RunConfig::from_toml_str("[train]\nepoch = 3\n"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            RunConfig::from_toml_str("bogus = 1\n"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            RunConfig::from_toml_with_overrides("", &["train.nope=1".into()]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn dotted_keys_and_overrides() {
        let cfg = RunConfig::from_toml_with_overrides(
            "train.epochs = 7\n[model]\ncell = \"lstm\"\n",
            &[
                "model.hidden=16".into(),
                "grid.lookbacks=[2, 3]".into(),
                "data.target=memory".into(),
                "train.epochs = 9".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.train.epochs, 9);
        assert_eq!(cfg.model.cell, CellKind::Lstm);
        assert_eq!(cfg.model.hidden, 16);
        assert_eq!(cfg.grid.lookbacks, vec![2, 3]);
        assert_eq!(cfg.target_index().unwrap(), 1);
    }

    #[test]
    fn validation_catches_bad_values() {
        let mut cfg = RunConfig::default();
        cfg.prune.amount = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.data.target = "gpu".into();
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.online.batch_sizes = vec![];
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.online.adapt_epochs = 0;
        cfg.train.epochs = 0;
        assert!(cfg.validate().is_ok());
    }
}
