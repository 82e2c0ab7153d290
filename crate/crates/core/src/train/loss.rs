use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Mean over all entries of the squared error.
pub fn mse_loss(pred: &Matrix, target: &Matrix) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(format!(
            "prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    if pred.as_slice().is_empty() {
        return Err(Error::EmptyInput("loss of an empty matrix".into()));
    }
    Ok(mse_slices(pred.as_slice(), target.as_slice()))
}

pub(crate) fn mse_slices(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / pred.len() as f64
}
