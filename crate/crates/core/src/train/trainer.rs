use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{Sample, WindowedDataset};
use crate::error::{Error, Result};
use crate::eval::{mae, rmse};
use crate::model::Network;
use crate::train::backprop::{backprop, GradientSet};
use crate::train::optim::{gd_step, lbfgs_minimize, LbfgsOptions};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Gd,
    Lbfgs,
}

impl std::str::FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gd" => Ok(Optimizer::Gd),
            "lbfgs" | "l-bfgs" => Ok(Optimizer::Lbfgs),
            other => Err(Error::config(format!(
                "unknown optimizer {other:?} (gd or lbfgs)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    /// Passes over the training set. For L-BFGS, each epoch is one
    /// `lbfgs_max_iters`-iteration run with fresh curvature history.
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub lbfgs_memory: usize,
    pub lbfgs_max_iters: usize,
    pub convergence_tol: f64,
    /// Global gradient-norm clip for GD; `0` disables clipping.
    pub clip_norm: f64,
    /// Keep every bias at its current value (zero for fresh networks).
    pub freeze_biases: bool,
    /// Feature index validation errors are reported on.
    pub target_feature: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: Optimizer::Gd,
            learning_rate: 1e-3,
            epochs: 100,
            batch_size: 32,
            seed: 42,
            lbfgs_memory: 10,
            lbfgs_max_iters: 20,
            convergence_tol: 1e-6,
            clip_norm: 5.0,
            freeze_biases: false,
            target_feature: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning rate must be positive"));
        }
        if self.batch_size < 1 {
            return Err(Error::config("batch size must be at least 1"));
        }
        if self.lbfgs_memory < 1 || self.lbfgs_max_iters < 1 {
            return Err(Error::config(
                "L-BFGS memory and iteration limit must be at least 1",
            ));
        }
        if !(self.convergence_tol > 0.0) {
            return Err(Error::config("convergence tolerance must be positive"));
        }
        if !(self.clip_norm >= 0.0) {
            return Err(Error::config("clip norm must be non-negative"));
        }
        Ok(())
    }

    pub fn lbfgs_options(&self) -> LbfgsOptions {
        LbfgsOptions {
            memory: self.lbfgs_memory,
            max_iters: self.lbfgs_max_iters,
            tol: self.convergence_tol,
            ..LbfgsOptions::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    /// Next-step errors on the target feature of the validation set, normalized units.
    pub val_mae: Option<f64>,
    pub val_rmse: Option<f64>,
    pub wall_seconds: f64,
    pub seed: u64,
    pub config: TrainConfig,
}

/// One gradient-descent pass over `samples` in order, `batch_size` at a time.
/// Returns the sample-weighted mean batch loss.
pub(crate) fn gd_epoch(net: &mut Network, samples: &[Sample], cfg: &TrainConfig) -> Result<f64> {
    let mut weighted = 0.0;
    for (b, chunk) in samples.chunks(cfg.batch_size).enumerate() {
        let (loss, mut grads) = backprop(net, chunk).map_err(|e| at_batch(e, b))?;
        condition_gradient(net, &mut grads, cfg);
        gd_step(net, &grads, cfg.learning_rate);
        weighted += loss * chunk.len() as f64;
    }
    Ok(weighted / samples.len() as f64)
}

pub(crate) fn condition_gradient(net: &Network, grads: &mut GradientSet, cfg: &TrainConfig) {
    if cfg.freeze_biases {
        grads.zero_biases(net);
    }
    if cfg.clip_norm > 0.0 {
        let norm = grads.norm();
        if norm > cfg.clip_norm {
            grads.scale(cfg.clip_norm / norm);
        }
    }
}

/// Full-batch L-BFGS run from the network's current parameters.
pub(crate) fn lbfgs_fit(net: &mut Network, samples: &[Sample], cfg: &TrainConfig) -> Result<f64> {
    let template = net.clone();
    let freeze = cfg.freeze_biases;
    let objective = |theta: &[f64]| -> Result<(f64, Vec<f64>)> {
        let mut probe = template.clone();
        probe.set_flat(theta)?;
        let (loss, mut g) = backprop(&probe, samples)?;
        if freeze {
            g.zero_biases(&probe);
        }
        Ok((loss, g.to_flat()))
    };
    let (x, value) = match lbfgs_minimize(objective, net.to_flat(), &cfg.lbfgs_options()) {
        Ok(out) => (out.x, out.value),
        // A stalled line search still leaves the best iterate found.
        Err(Error::Stall {
            best, best_value, ..
        }) => (best, best_value),
        Err(e) => return Err(e),
    };
    net.set_flat(&x)?;
    Ok(value)
}

fn at_batch(e: Error, batch: usize) -> Error {
    match e {
        Error::Numeric { context } => Error::numeric(format!("{context} (batch {batch})")),
        other => other,
    }
}

fn at_epoch(e: Error, epoch: usize) -> Error {
    match e {
        Error::Numeric { context } => Error::numeric(format!("{context} (epoch {epoch})")),
        other => other,
    }
}

/// Next-step MAE/RMSE of `net` on the target feature of `set`.
pub fn next_step_errors(net: &Network, set: &WindowedDataset, target: usize) -> Result<(f64, f64)> {
    let mut actual = Vec::with_capacity(set.len());
    let mut pred = Vec::with_capacity(set.len());
    for s in &set.samples {
        pred.push(net.forward(&s.input)?[target]);
        actual.push(s.target.get(0, target));
    }
    Ok((mae(&actual, &pred)?, rmse(&actual, &pred)?))
}

/// Trains `net` in place-copy and returns the trained network with its report.
/// Deterministic: identical inputs give bit-identical parameters.
pub fn train_network(
    net: &Network,
    train_set: &WindowedDataset,
    val_set: &WindowedDataset,
    config: &TrainConfig,
) -> Result<(Network, TrainReport)> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyInput("training set is empty".into()));
    }
    if config.target_feature >= net.features {
        return Err(Error::config("target feature index out of range"));
    }
    let started = Instant::now();
    let mut net = net.clone();
    let mut losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let loss = match config.optimizer {
            Optimizer::Gd => gd_epoch(&mut net, &train_set.samples, config),
            Optimizer::Lbfgs => lbfgs_fit(&mut net, &train_set.samples, config),
        }
        .map_err(|e| at_epoch(e, epoch))?;
        losses.push(loss);
    }
    let (val_mae, val_rmse) = if val_set.is_empty() {
        (None, None)
    } else {
        let (a, b) = next_step_errors(&net, val_set, config.target_feature)?;
        (Some(a), Some(b))
    };
    Ok((
        net,
        TrainReport {
            epoch_losses: losses,
            val_mae,
            val_rmse,
            wall_seconds: started.elapsed().as_secs_f64(),
            seed: config.seed,
            config: config.clone(),
        },
    ))
}
