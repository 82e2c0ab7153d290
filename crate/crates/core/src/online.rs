//! Prequential (predict, then adapt) evaluation on a stream of unseen observations.
//!
//! The stream is cut into batches of `B` targets. Batch `n` holds the targets at
//! rows `[k + nB, k + (n+1)B)`; each is forecast one step ahead from the `k`
//! rows before it with the current model, the batch is scored, and only then is
//! the model adapted on those same windows.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::Network;
use crate::train::{condition_gradient, lbfgs_fit, Optimizer, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OnlineConfig {
    /// Observations per adaptation.
    pub batch_size: usize,
    pub optimizer: Optimizer,
    /// Adaptation passes per batch; `0` disables adaptation.
    pub adapt_epochs: usize,
    pub learning_rate: f64,
    pub lbfgs_memory: usize,
    pub lbfgs_max_iters: usize,
    pub convergence_tol: f64,
    /// Gradient-norm clip for GD; `0` disables clipping.
    pub clip_norm: f64,
    pub target_feature: usize,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        OnlineConfig {
            batch_size: 64,
            optimizer: Optimizer::Gd,
            adapt_epochs: 1,
            learning_rate: 0.1,
            lbfgs_memory: 10,
            lbfgs_max_iters: 10,
            convergence_tol: 1e-6,
            clip_norm: 5.0,
            target_feature: 0,
        }
    }
}

impl OnlineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::config("online batch size must be at least 1"));
        }
        self.adaptation_config().validate()
    }

    /// Training settings for one adaptation pass: a GD pass is one step on the
    /// whole batch.
    fn adaptation_config(&self) -> TrainConfig {
        TrainConfig {
            optimizer: self.optimizer,
            learning_rate: self.learning_rate,
            epochs: self.adapt_epochs,
            batch_size: self.batch_size,
            lbfgs_memory: self.lbfgs_memory,
            lbfgs_max_iters: self.lbfgs_max_iters,
            convergence_tol: self.convergence_tol,
            clip_norm: self.clip_norm,
            target_feature: self.target_feature,
            ..TrainConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchResult {
    pub batch_index: usize,
    /// Stream row of the batch's first target.
    pub first_target: usize,
    pub n: usize,
    /// Scored before adapting on this batch.
    pub mae: f64,
    pub rmse: f64,
    pub sum_abs_error: f64,
    pub sum_sq_error: f64,
    pub adapt_seconds: f64,
}

impl BatchResult {
    pub const CSV_HEADER: &'static str = "batch_index,mae,rmse,adapt_seconds";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{}",
            self.batch_index, self.mae, self.rmse, self.adapt_seconds
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OnlineAbort {
    pub batch_index: usize,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OnlineRunReport {
    pub batch_size: usize,
    pub lookback: usize,
    pub batches: Vec<BatchResult>,
    /// Pooled over every scored batch.
    pub cumulative_mae: f64,
    pub cumulative_rmse: f64,
    pub final_batch_mae: f64,
    pub final_batch_rmse: f64,
    /// Set when a batch failed. A batch whose adaptation failed is still
    /// listed; one whose forecasts were non-finite is not.
    pub aborted: Option<OnlineAbort>,
}

impl OnlineRunReport {
    /// Pooled `(mae, rmse)` over batches whose first target lies at or after
    /// stream row `from`; `None` when no batch qualifies.
    pub fn cumulative_from(&self, from: usize) -> Option<(f64, f64)> {
        pool(self.batches.iter().filter(|b| b.first_target >= from))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn pool<'a>(batches: impl Iterator<Item = &'a BatchResult>) -> Option<(f64, f64)> {
    let (n, sae, sse) = batches.fold((0usize, 0.0, 0.0), |(n, a, s), b| {
        (n + b.n, a + b.sum_abs_error, s + b.sum_sq_error)
    });
    (n > 0).then(|| (sae / n as f64, (sse / n as f64).sqrt()))
}

/// `floor((T − k) / B)`.
pub fn batch_count(stream_len: usize, lookback: usize, batch_size: usize) -> usize {
    if batch_size == 0 {
        return 0;
    }
    stream_len.saturating_sub(lookback) / batch_size
}

fn window(stream: &Matrix, target_row: usize, k: usize) -> Sample {
    let n = stream.cols();
    let data = stream.as_slice();
    let input = Matrix::from_vec(k, n, data[(target_row - k) * n..target_row * n].to_vec())
        .expect("slice of a valid matrix");
    let target = Matrix::from_vec(1, n, data[target_row * n..(target_row + 1) * n].to_vec())
        .expect("slice of a valid matrix");
    Sample { input, target }
}

fn adapt(net: &mut Network, samples: &[Sample], cfg: &TrainConfig) -> Result<()> {
    for _ in 0..cfg.epochs {
        match cfg.optimizer {
            Optimizer::Gd => {
                let (_, mut grads) = crate::train::backprop(net, samples)?;
                condition_gradient(net, &mut grads, cfg);
                crate::train::gd_step(net, &grads, cfg.learning_rate);
            }
            Optimizer::Lbfgs => {
                lbfgs_fit(net, samples, cfg)?;
            }
        }
    }
    if !net.is_finite() {
        return Err(Error::numeric("in adapted parameters"));
    }
    Ok(())
}

/// Runs the prequential loop over a normalized stream, calling `on_batch` as
/// each batch is finished. Returns the adapted model and the report.
pub fn prequential_run_with(
    net: &Network,
    stream: &Matrix,
    config: &OnlineConfig,
    mut on_batch: impl FnMut(&BatchResult),
) -> Result<(Network, OnlineRunReport)> {
    config.validate()?;
    if stream.cols() != net.features {
        return Err(Error::shape(format!(
            "stream has {} features, model expects {}",
            stream.cols(),
            net.features
        )));
    }
    if config.target_feature >= net.features {
        return Err(Error::config("target feature index out of range"));
    }
    let k = net.lookback;
    let b = config.batch_size;
    let count = batch_count(stream.rows(), k, b);
    if count == 0 {
        return Err(Error::InsufficientData(format!(
            "stream of {} rows cannot fit lookback {k} plus one batch of {b}",
            stream.rows()
        )));
    }
    let adapt_cfg = config.adaptation_config();
    let target = config.target_feature;
    let mut model = net.clone();
    let mut batches = Vec::with_capacity(count);
    let mut aborted = None;
    for idx in 0..count {
        let first = k + idx * b;
        let samples: Vec<Sample> = (first..first + b).map(|t| window(stream, t, k)).collect();
        let scored = samples.iter().try_fold((0.0, 0.0), |(sae, sse), s| {
            let e = model.forward(&s.input)?[target] - s.target.get(0, target);
            Ok::<_, Error>((sae + e.abs(), sse + e * e))
        });
        let (sae, sse) = match scored {
            Ok(v) if v.0.is_finite() && v.1.is_finite() => v,
            Ok(_) => {
                aborted = Some(OnlineAbort {
                    batch_index: idx,
                    reason: "non-finite forecast error".into(),
                });
                break;
            }
            Err(e) => {
                aborted = Some(OnlineAbort {
                    batch_index: idx,
                    reason: e.to_string(),
                });
                break;
            }
        };
        let started = Instant::now();
        let outcome = adapt(&mut model, &samples, &adapt_cfg);
        let result = BatchResult {
            batch_index: idx,
            first_target: first,
            n: b,
            mae: sae / b as f64,
            rmse: (sse / b as f64).sqrt(),
            sum_abs_error: sae,
            sum_sq_error: sse,
            adapt_seconds: started.elapsed().as_secs_f64(),
        };
        on_batch(&result);
        batches.push(result);
        if let Err(e) = outcome {
            aborted = Some(OnlineAbort {
                batch_index: idx,
                reason: e.to_string(),
            });
            break;
        }
    }
    let (cumulative_mae, cumulative_rmse) = pool(batches.iter()).unwrap_or((f64::NAN, f64::NAN));
    let (final_batch_mae, final_batch_rmse) = batches
        .last()
        .map(|r| (r.mae, r.rmse))
        .unwrap_or((f64::NAN, f64::NAN));
    Ok((
        model,
        OnlineRunReport {
            batch_size: b,
            lookback: k,
            batches,
            cumulative_mae,
            cumulative_rmse,
            final_batch_mae,
            final_batch_rmse,
            aborted,
        },
    ))
}

pub fn prequential_run(
    net: &Network,
    stream: &Matrix,
    config: &OnlineConfig,
) -> Result<(Network, OnlineRunReport)> {
    prequential_run_with(net, stream, config, |_| {})
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchSizeRow {
    pub batch_size: usize,
    pub batches: usize,
    pub cumulative_mae: f64,
    pub cumulative_rmse: f64,
    pub final_batch_mae: f64,
    pub final_batch_rmse: f64,
    pub error: Option<String>,
    #[serde(skip)]
    pub report: Option<OnlineRunReport>,
}

impl BatchSizeRow {
    pub const CSV_HEADER: &'static str =
        "batch_size,batches,cumulative_mae,cumulative_rmse,final_batch_mae,final_batch_rmse";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.batch_size,
            self.batches,
            self.cumulative_mae,
            self.cumulative_rmse,
            self.final_batch_mae,
            self.final_batch_rmse
        )
    }
}

/// Independent prequential runs from the same initial model, one per batch
/// size, sorted by batch size. A failed size is marked and the others proceed.
pub fn compare_batch_sizes(
    net: &Network,
    stream: &Matrix,
    sizes: &[usize],
    config: &OnlineConfig,
) -> Result<Vec<BatchSizeRow>> {
    if sizes.is_empty() {
        return Err(Error::config("at least one online batch size is required"));
    }
    let mut sizes = sizes.to_vec();
    sizes.sort_unstable();
    sizes.dedup();
    Ok(sizes
        .into_par_iter()
        .map(|b| {
            let cfg = OnlineConfig {
                batch_size: b,
                ..config.clone()
            };
            match prequential_run(net, stream, &cfg) {
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
                    report: Some(rep),
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
            }
        })
        .collect())
}
