use crate::data::series::MachineSeries;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// One supervised example: `k` input rows followed immediately by `m` target rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub input: Matrix,
    pub target: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowedDataset {
    pub lookback: usize,
    pub horizon: usize,
    pub samples: Vec<Sample>,
    pub feature_names: Vec<String>,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

pub fn make_windows(series: &MachineSeries, k: usize, m: usize) -> Result<WindowedDataset> {
    windows_from_matrix(&series.values, &series.feature_names, k, m)
}

/// Sample `j` takes rows `[j, j+k)` as input and `[j+k, j+k+m)` as target.
pub fn windows_from_matrix(
    values: &Matrix,
    feature_names: &[String],
    k: usize,
    m: usize,
) -> Result<WindowedDataset> {
    if k == 0 || m == 0 {
        return Err(Error::config(
            "lookback and horizon must both be at least 1",
        ));
    }
    let t_len = values.rows();
    if t_len < k + m {
        return Err(Error::InsufficientData(format!(
            "series of length {t_len} cannot fit lookback {k} plus horizon {m}"
        )));
    }
    let n = values.cols();
    let slice = |from: usize, len: usize| {
        Matrix::from_vec(
            len,
            n,
            values.as_slice()[from * n..(from + len) * n].to_vec(),
        )
        .expect("slice of a valid matrix")
    };
    let samples = (0..=t_len - k - m)
        .map(|j| Sample {
            input: slice(j, k),
            target: slice(j + k, m),
        })
        .collect();
    Ok(WindowedDataset {
        lookback: k,
        horizon: m,
        samples,
        feature_names: feature_names.to_vec(),
    })
}

/// Chronological split: the first `floor(fraction * len)` samples train, the rest test.
pub fn split_dataset(
    dataset: &WindowedDataset,
    train_fraction: f64,
) -> Result<(WindowedDataset, WindowedDataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::config(format!(
            "train fraction {train_fraction} must lie strictly between 0 and 1"
        )));
    }
    if dataset.is_empty() {
        return Err(Error::EmptyInput("cannot split an empty dataset".into()));
    }
    let cut = split_point(dataset.len(), train_fraction);
    let part = |samples: &[Sample]| WindowedDataset {
        lookback: dataset.lookback,
        horizon: dataset.horizon,
        samples: samples.to_vec(),
        feature_names: dataset.feature_names.clone(),
    };
    Ok((part(&dataset.samples[..cut]), part(&dataset.samples[cut..])))
}

pub fn split_point(count: usize, train_fraction: f64) -> usize {
    ((count as f64) * train_fraction).floor() as usize
}
