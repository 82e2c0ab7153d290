//! Error metrics, forecast latency benchmarking and cost reports.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::Network;

fn check_pair(actual: &[f64], predicted: &[f64]) -> Result<()> {
    if actual.len() != predicted.len() {
        return Err(Error::shape(format!(
            "{} actual values vs {} predictions",
            actual.len(),
            predicted.len()
        )));
    }
    if actual.is_empty() {
        return Err(Error::EmptyInput("no values to score".into()));
    }
    Ok(())
}

/// `(1/n) Σ |yᵢ − y'ᵢ|`
pub fn mae(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    check_pair(actual, predicted)?;
    let sum: f64 = actual
        .iter()
        .zip(predicted)
        .map(|(a, p)| (a - p).abs())
        .sum();
    Ok(sum / actual.len() as f64)
}

/// `sqrt((1/n) Σ (yᵢ − y'ᵢ)²)`
pub fn rmse(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    check_pair(actual, predicted)?;
    let sum: f64 = actual
        .iter()
        .zip(predicted)
        .map(|(a, p)| (a - p) * (a - p))
        .sum();
    Ok((sum / actual.len() as f64).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean_us: f64,
    pub median_us: f64,
    pub p95_us: f64,
    pub repetitions: usize,
    /// Timed forecast calls (repetitions × windows).
    pub calls: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub latency: LatencyStats,
    pub flops: u64,
    pub params: usize,
}

pub const WARMUP_PASSES: usize = 3;

/// Times one forecast per window, `repetitions` times over all windows, after
/// [`WARMUP_PASSES`] untimed passes. Runs on the calling thread only.
pub fn bench_forecast(
    net: &Network,
    windows: &[Matrix],
    repetitions: usize,
) -> Result<BenchResult> {
    if repetitions < 1 {
        return Err(Error::config("benchmark repetitions must be at least 1"));
    }
    if windows.is_empty() {
        return Err(Error::EmptyInput("no windows to benchmark".into()));
    }
    for _ in 0..WARMUP_PASSES {
        for w in windows {
            std::hint::black_box(net.forward(w)?);
        }
    }
    let mut times = Vec::with_capacity(repetitions * windows.len());
    for _ in 0..repetitions {
        for w in windows {
            let t0 = Instant::now();
            std::hint::black_box(net.forward(w)?);
            times.push(t0.elapsed().as_secs_f64() * 1e6);
        }
    }
    times.sort_by(f64::total_cmp);
    let n = times.len();
    let median = if n % 2 == 1 {
        times[n / 2]
    } else {
        0.5 * (times[n / 2 - 1] + times[n / 2])
    };
    let p95 = times[((0.95 * n as f64).ceil() as usize).clamp(1, n) - 1];
    Ok(BenchResult {
        latency: LatencyStats {
            mean_us: times.iter().sum::<f64>() / n as f64,
            median_us: median,
            p95_us: p95,
            repetitions,
            calls: n,
        },
        flops: net.flop_count_per_forecast(),
        params: net.param_count(),
    })
}

/// Accuracy and cost of one model on one dataset.
///
/// `mae`/`rmse` are in original units; the `_normalized` pair is the same
/// evaluation in scaled units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub target_feature: String,
    pub horizon: usize,
    pub n: usize,
    pub mae: f64,
    pub rmse: f64,
    pub mae_normalized: f64,
    pub rmse_normalized: f64,
    pub params: usize,
    pub flops: u64,
    pub latency: Option<LatencyStats>,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "target_feature,horizon,n,mae,rmse,mae_normalized,rmse_normalized,params,flops,mean_us,median_us,p95_us,repetitions";

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn csv_row(&self) -> String {
        let (mean, median, p95, reps) = match &self.latency {
            Some(l) => (
                l.mean_us.to_string(),
                l.median_us.to_string(),
                l.p95_us.to_string(),
                l.repetitions.to_string(),
            ),
            None => Default::default(),
        };
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(Vec::new());
        w.write_record([
            self.target_feature.clone(),
            self.horizon.to_string(),
            self.n.to_string(),
            self.mae.to_string(),
            self.rmse.to_string(),
            self.mae_normalized.to_string(),
            self.rmse_normalized.to_string(),
            self.params.to_string(),
            self.flops.to_string(),
            mean,
            median,
            p95,
            reps,
        ])
        .expect("writing to memory");
        String::from_utf8(w.into_inner().expect("flush to memory")).expect("csv is utf-8")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CellKind;

    #[test]
    fn mae_examples() {
        assert_eq!(mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mae(&[0.0, 2.0], &[1.0, 0.0]).unwrap(), 1.5);
        assert_eq!(mae(&[1.0, 0.0], &[0.0, 2.0]).unwrap(), 1.5);
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[3.0], &[3.0]).unwrap(), 0.0);
        assert!((rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap() - 3.535534).abs() < 1e-6);
    }

    #[test]
    fn metric_errors() {
        assert!(matches!(mae(&[1.0], &[1.0, 2.0]), Err(Error::Shape(_))));
        assert!(matches!(rmse(&[], &[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn bench_reports_stable_flops() {
        let net = Network::new(CellKind::Gru, 2, 4, 1, 3, 0).unwrap();
        let w = vec![Matrix::zeros(3, 2); 4];
        let a = bench_forecast(&net, &w, 2).unwrap();
        let b = bench_forecast(&net, &w, 2).unwrap();
        assert_eq!(a.flops, b.flops);
        assert_eq!(a.latency.calls, 8);
        assert!(a.latency.median_us <= a.latency.p95_us);
        assert!(matches!(
            bench_forecast(&net, &[], 1),
            Err(Error::EmptyInput(_))
        ));
        assert!(matches!(bench_forecast(&net, &w, 0), Err(Error::Config(_))));
    }

    #[test]
    fn report_csv_matches_header_width() {
        let r = EvalReport {
            target_feature: "cpu_rate".into(),
            horizon: 3,
            n: 10,
            mae: 0.1,
            rmse: 0.2,
            mae_normalized: 0.01,
            rmse_normalized: 0.02,
            params: 100,
            flops: 1000,
            latency: None,
        };
        let cols = EvalReport::CSV_HEADER.split(',').count();
        assert_eq!(r.csv_row().trim_end().split(',').count(), cols);
        assert!(r.to_json().unwrap().contains("\"flops\": 1000"));
    }
}
