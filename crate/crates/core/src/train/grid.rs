use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{split_dataset, windows_from_matrix};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{CellKind, Network};
use crate::train::trainer::{train_network, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub hidden_sizes: Vec<usize>,
    pub layer_counts: Vec<usize>,
    pub lookbacks: Vec<usize>,
}

impl Default for GridSpec {
    /// The 2 × 3 × 3 = 18-candidate space: hidden {32, 64}, layers {1, 3, 5}, lookback {4, 8, 12}.
    fn default() -> Self {
        GridSpec {
            hidden_sizes: vec![32, 64],
            layer_counts: vec![1, 3, 5],
            lookbacks: vec![4, 8, 12],
        }
    }
}

impl GridSpec {
    pub fn singleton(hidden: usize, layers: usize, lookback: usize) -> Self {
        GridSpec {
            hidden_sizes: vec![hidden],
            layer_counts: vec![layers],
            lookbacks: vec![lookback],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_sizes.is_empty() || self.layer_counts.is_empty() || self.lookbacks.is_empty()
        {
            return Err(Error::config(
                "every grid dimension needs at least one value",
            ));
        }
        let all = self
            .hidden_sizes
            .iter()
            .chain(&self.layer_counts)
            .chain(&self.lookbacks);
        if all.clone().any(|&v| v == 0) {
            return Err(Error::config("grid values must be positive"));
        }
        Ok(())
    }

    pub fn candidate_count(&self) -> usize {
        self.hidden_sizes.len() * self.layer_counts.len() * self.lookbacks.len()
    }

    /// `(hidden, layers, lookback)` in nested order.
    pub fn candidates(&self) -> Vec<(usize, usize, usize)> {
        let mut v = Vec::with_capacity(self.candidate_count());
        for &h in &self.hidden_sizes {
            for &l in &self.layer_counts {
                for &k in &self.lookbacks {
                    v.push((h, l, k));
                }
            }
        }
        v
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub hidden: usize,
    pub layers: usize,
    pub lookback: usize,
    pub rmse: f64,
    pub mae: f64,
    pub params: usize,
    pub seconds: f64,
    /// Set when this candidate failed; its metrics are then NaN.
    pub error: Option<String>,
}

#[derive(Clone, Debug)]
pub struct GridResult {
    /// Successful candidates ranked best first, then failed ones.
    pub table: Vec<GridRow>,
    pub best: GridRow,
    pub best_network: Network,
}

impl GridResult {
    pub fn evaluated(&self) -> usize {
        self.table.iter().filter(|r| r.error.is_none()).count()
    }

    /// `hidden,layers,lookback,rmse,mae,params,seconds`, ranked order.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "hidden", "layers", "lookback", "rmse", "mae", "params", "seconds",
        ])?;
        for r in &self.table {
            w.write_record([
                r.hidden.to_string(),
                r.layers.to_string(),
                r.lookback.to_string(),
                r.rmse.to_string(),
                r.mae.to_string(),
                r.params.to_string(),
                format!("{:.3}", r.seconds),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// RMSE, then parameter count, then MAE.
fn rank(a: &GridRow, b: &GridRow) -> std::cmp::Ordering {
    a.rmse
        .total_cmp(&b.rmse)
        .then(a.params.cmp(&b.params))
        .then(a.mae.total_cmp(&b.mae))
}

/// Trains one network per `(hidden, layers, lookback)` combination on the
/// chronological training split of the normalized `series` and ranks them by
/// next-step validation RMSE on the target feature.
pub fn grid_search(
    space: &GridSpec,
    series: &Matrix,
    feature_names: &[String],
    cell: CellKind,
    train_fraction: f64,
    base: &TrainConfig,
) -> Result<GridResult> {
    space.validate()?;
    base.validate()?;
    let results: Vec<(GridRow, Option<Network>)> = space
        .candidates()
        .into_par_iter()
        .map(|(hidden, layers, lookback)| {
            let started = Instant::now();
            let run = || -> Result<(Network, f64, f64)> {
                let ds = windows_from_matrix(series, feature_names, lookback, 1)?;
                let (train, val) = split_dataset(&ds, train_fraction)?;
                if val.is_empty() {
                    return Err(Error::InsufficientData("validation split is empty".into()));
                }
                let init = Network::new(cell, series.cols(), hidden, layers, lookback, base.seed)?;
                let (net, rep) = train_network(&init, &train, &val, base)?;
                Ok((
                    net,
                    rep.val_rmse.unwrap_or(f64::NAN),
                    rep.val_mae.unwrap_or(f64::NAN),
                ))
            };
            let params = Network::zeros(cell, series.cols(), &vec![hidden; layers], lookback)
                .map(|n| n.param_count())
                .unwrap_or(0);
            let mut row = GridRow {
                hidden,
                layers,
                lookback,
                rmse: f64::NAN,
                mae: f64::NAN,
                params,
                seconds: 0.0,
                error: None,
            };
            let net = match run() {
                Ok((net, rmse, mae)) => {
                    row.rmse = rmse;
                    row.mae = mae;
                    Some(net)
                }
                Err(e) => {
                    row.error = Some(e.to_string());
                    None
                }
            };
            row.seconds = started.elapsed().as_secs_f64();
            (row, net)
        })
        .collect();

    let best_idx = results
        .iter()
        .enumerate()
        .filter(|(_, (r, _))| r.error.is_none() && r.rmse.is_finite())
        .min_by(|(_, (a, _)), (_, (b, _))| rank(a, b))
        .map(|(i, _)| i)
        .ok_or(Error::SearchFailed)?;
    let best = results[best_idx].0.clone();
    let best_network = results[best_idx]
        .1
        .clone()
        .expect("successful candidate has a network");

    let (mut ok, failed): (Vec<GridRow>, Vec<GridRow>) = results
        .into_iter()
        .map(|(r, _)| r)
        .partition(|r| r.error.is_none() && r.rmse.is_finite());
    ok.sort_by(rank);
    ok.extend(failed);
    Ok(GridResult {
        table: ok,
        best,
        best_network,
    })
}
