use std::collections::HashSet;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Feature order produced by trace aggregation.
pub const FEATURE_NAMES: [&str; 4] = ["cpu_rate", "memory", "disk_io_time", "disk_space"];

/// Uniformly spaced multivariate usage series for one machine.
///
/// Row `t` is the bucket starting at `start_time + t * interval_seconds`.
/// `NaN` entries are missing markers left by aggregation.
#[derive(Clone, Debug, PartialEq)]
pub struct MachineSeries {
    pub machine_id: String,
    pub interval_seconds: i64,
    pub start_time: i64,
    pub values: Matrix,
    pub feature_names: Vec<String>,
}

impl MachineSeries {
    pub fn new(
        machine_id: String,
        interval_seconds: i64,
        start_time: i64,
        values: Matrix,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        if interval_seconds <= 0 {
            return Err(Error::config("series interval must be positive"));
        }
        if feature_names.is_empty() {
            return Err(Error::config("a series needs at least one feature"));
        }
        if feature_names.len() != values.cols() {
            return Err(Error::shape(format!(
                "{} feature names for {} columns",
                feature_names.len(),
                values.cols()
            )));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = feature_names.iter().find(|n| !seen.insert(n.as_str())) {
            return Err(Error::config(format!("duplicate feature name {dup:?}")));
        }
        Ok(MachineSeries {
            machine_id,
            interval_seconds,
            start_time,
            values,
            feature_names,
        })
    }

    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.rows() == 0
    }

    pub fn feature_count(&self) -> usize {
        self.values.cols()
    }

    pub fn timestamp(&self, row: usize) -> i64 {
        self.start_time + row as i64 * self.interval_seconds
    }

    pub fn has_missing(&self) -> bool {
        self.values.as_slice().iter().any(|v| v.is_nan())
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }

    /// Keeps only the named features, in the given order.
    pub fn select(&self, names: &[String]) -> Result<MachineSeries> {
        let idx = names
            .iter()
            .map(|n| {
                self.feature_index(n)
                    .ok_or_else(|| Error::config(format!("series has no feature {n:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let values = Matrix::from_fn(self.len(), idx.len(), |r, c| self.values.get(r, idx[c]));
        MachineSeries::new(
            self.machine_id.clone(),
            self.interval_seconds,
            self.start_time,
            values,
            names.to_vec(),
        )
    }

    /// Per-feature mean over all rows (ignoring missing markers).
    pub fn feature_means(&self) -> Vec<f64> {
        (0..self.feature_count())
            .map(|c| {
                let obs: Vec<f64> = self
                    .values
                    .column(c)
                    .into_iter()
                    .filter(|v| !v.is_nan())
                    .collect();
                if obs.is_empty() {
                    f64::NAN
                } else {
                    obs.iter().sum::<f64>() / obs.len() as f64
                }
            })
            .collect()
    }
}

/// Fills missing markers: linear interpolation between the nearest observed
/// neighbours for interior gaps, nearest observed value for leading and
/// trailing gaps.
pub fn interpolate_missing(series: &MachineSeries) -> Result<MachineSeries> {
    let mut out = series.clone();
    let t_len = series.len();
    for c in 0..series.feature_count() {
        let col = series.values.column(c);
        let observed: Vec<usize> = (0..t_len).filter(|&t| !col[t].is_nan()).collect();
        let (first, last) = match (observed.first(), observed.last()) {
            (Some(&f), Some(&l)) => (f, l),
            _ => {
                if t_len == 0 {
                    continue;
                }
                return Err(Error::UnrecoverableFeature(series.feature_names[c].clone()));
            }
        };
        for t in 0..first {
            out.values.set(t, c, col[first]);
        }
        for t in last + 1..t_len {
            out.values.set(t, c, col[last]);
        }
        for pair in observed.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let span = (b - a) as f64;
            for t in a + 1..b {
                let w = (t - a) as f64 / span;
                out.values.set(t, c, col[a] + w * (col[b] - col[a]));
            }
        }
    }
    Ok(out)
}

/// Writes the canonical series CSV: header `timestamp,<features...>`, one row per interval,
/// missing markers as empty fields.
pub fn write_series_csv<W: Write>(series: &MachineSeries, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["timestamp".to_string()];
    header.extend(series.feature_names.iter().cloned());
    w.write_record(&header)?;
    for t in 0..series.len() {
        let mut rec = vec![series.timestamp(t).to_string()];
        rec.extend(series.values.row(t).iter().map(|v| {
            if v.is_nan() {
                String::new()
            } else {
                v.to_string()
            }
        }));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a canonical series CSV. The interval is inferred from the first two
/// timestamps; `fallback_interval` is used for single-row files.
pub fn read_series_csv<R: Read>(
    source: R,
    machine_id: &str,
    fallback_interval: i64,
) -> Result<MachineSeries> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(source);
    let header = r.headers()?.clone();
    if header.get(0) != Some("timestamp") || header.len() < 2 {
        return Err(Error::Format(
            "series CSV must start with a `timestamp,<features...>` header".into(),
        ));
    }
    let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut times = Vec::new();
    let mut data = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let ts: i64 = rec
            .get(0)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format(format!("row {}: bad timestamp", line + 1)))?;
        times.push(ts);
        for field in rec.iter().skip(1) {
            if field.is_empty() {
                data.push(f64::NAN);
            } else {
                data.push(field.parse::<f64>().map_err(|_| {
                    Error::Format(format!("row {}: bad value {field:?}", line + 1))
                })?);
            }
        }
    }
    let interval = if times.len() >= 2 {
        times[1] - times[0]
    } else {
        fallback_interval
    };
    if interval <= 0 {
        return Err(Error::Format(
            "timestamps must be strictly increasing".into(),
        ));
    }
    for (i, pair) in times.windows(2).enumerate() {
        if pair[1] - pair[0] != interval {
            return Err(Error::Format(format!(
                "row {}: timestamps are not uniformly spaced",
                i + 2
            )));
        }
    }
    let start = times.first().copied().unwrap_or(0);
    let values = Matrix::from_vec(times.len(), names.len(), data)?;
    MachineSeries::new(machine_id.to_string(), interval, start, values, names)
}
