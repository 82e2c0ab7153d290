use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::data::series::MachineSeries;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Per-feature min/max for MinMax scaling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    /// True where `max == min`; such features scale to 0 and invert to their constant.
    pub degenerate: Vec<bool>,
}

impl ScalerParams {
    pub fn from_bounds(min: Vec<f64>, max: Vec<f64>) -> Result<Self> {
        if min.len() != max.len() {
            return Err(Error::shape("scaler min/max lengths differ"));
        }
        if min.iter().zip(&max).any(|(lo, hi)| !(hi >= lo)) {
            return Err(Error::config("scaler max must be >= min for every feature"));
        }
        let degenerate = min.iter().zip(&max).map(|(lo, hi)| lo == hi).collect();
        Ok(ScalerParams {
            min,
            max,
            degenerate,
        })
    }

    pub fn feature_count(&self) -> usize {
        self.min.len()
    }

    #[inline]
    pub fn scale_value(&self, feature: usize, x: f64) -> f64 {
        if self.degenerate[feature] {
            0.0
        } else {
            (x - self.min[feature]) / (self.max[feature] - self.min[feature])
        }
    }

    #[inline]
    pub fn invert_value(&self, feature: usize, x: f64) -> f64 {
        if self.degenerate[feature] {
            self.min[feature]
        } else {
            x * (self.max[feature] - self.min[feature]) + self.min[feature]
        }
    }

    fn check(&self, m: &Matrix) -> Result<()> {
        if m.cols() != self.feature_count() {
            return Err(Error::shape(format!(
                "matrix has {} features, scaler has {}",
                m.cols(),
                self.feature_count()
            )));
        }
        Ok(())
    }
}

/// Per-feature min and max over `fit_range` rows only.
pub fn fit_scaler(series: &MachineSeries, fit_range: Range<usize>) -> Result<ScalerParams> {
    fit_scaler_matrix(&series.values, fit_range)
}

pub fn fit_scaler_matrix(values: &Matrix, fit_range: Range<usize>) -> Result<ScalerParams> {
    if fit_range.is_empty() {
        return Err(Error::config("scaler fit range is empty"));
    }
    if fit_range.end > values.rows() {
        return Err(Error::config(format!(
            "scaler fit range {fit_range:?} exceeds series length {}",
            values.rows()
        )));
    }
    let n = values.cols();
    let mut min = vec![f64::INFINITY; n];
    let mut max = vec![f64::NEG_INFINITY; n];
    for t in fit_range {
        for (c, &v) in values.row(t).iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::numeric(format!(
                    "in scaler fit at row {t}, feature {c}"
                )));
            }
            min[c] = min[c].min(v);
            max[c] = max[c].max(v);
        }
    }
    ScalerParams::from_bounds(min, max)
}

/// Maps each feature through `(x - min) / (max - min)`; values outside the fitted range are not clipped.
pub fn apply_scaler(values: &Matrix, params: &ScalerParams) -> Result<Matrix> {
    params.check(values)?;
    Ok(Matrix::from_fn(values.rows(), values.cols(), |r, c| {
        params.scale_value(c, values.get(r, c))
    }))
}

pub fn invert_scaler(values: &Matrix, params: &ScalerParams) -> Result<Matrix> {
    params.check(values)?;
    Ok(Matrix::from_fn(values.rows(), values.cols(), |r, c| {
        params.invert_value(c, values.get(r, c))
    }))
}

/// Scales a whole series, keeping its timing metadata.
pub fn apply_scaler_series(series: &MachineSeries, params: &ScalerParams) -> Result<MachineSeries> {
    let mut out = series.clone();
    out.values = apply_scaler(&series.values, params)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f64]) -> Matrix {
        Matrix::from_vec(v.len(), 1, v.to_vec()).unwrap()
    }

    #[test]
    fn fit_single_feature() {
        let p = fit_scaler_matrix(&col(&[2.0, 4.0, 6.0]), 0..3).unwrap();
        assert_eq!((p.min[0], p.max[0], p.degenerate[0]), (2.0, 6.0, false));
    }

    #[test]
    fn fit_constant_is_degenerate() {
        let p = fit_scaler_matrix(&col(&[5.0, 5.0]), 0..2).unwrap();
        assert_eq!((p.min[0], p.max[0], p.degenerate[0]), (5.0, 5.0, true));
    }

    #[test]
    fn fit_two_features() {
        let m = Matrix::from_rows(&[[0.0, 10.0], [4.0, 20.0], [2.0, 30.0]]).unwrap();
        let p = fit_scaler_matrix(&m, 0..3).unwrap();
        assert_eq!(p.min, vec![0.0, 10.0]);
        assert_eq!(p.max, vec![4.0, 30.0]);
    }

    #[test]
    fn fit_respects_range() {
        let p = fit_scaler_matrix(&col(&[100.0, 2.0, 6.0]), 1..3).unwrap();
        assert_eq!((p.min[0], p.max[0]), (2.0, 6.0));
    }

    #[test]
    fn empty_range_is_config_error() {
        assert!(matches!(
            fit_scaler_matrix(&col(&[1.0]), 0..0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn apply_examples() {
        let p = ScalerParams::from_bounds(vec![2.0], vec![6.0]).unwrap();
        let s = apply_scaler(&col(&[2.0, 4.0, 6.0, 8.0]), &p).unwrap();
        assert_eq!(s.as_slice(), &[0.0, 0.5, 1.0, 1.5]);
        let back = invert_scaler(&col(&[0.0, 0.5, 1.0]), &p).unwrap();
        assert_eq!(back.as_slice(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn degenerate_rules() {
        let p = ScalerParams::from_bounds(vec![5.0], vec![5.0]).unwrap();
        assert_eq!(apply_scaler(&col(&[5.0]), &p).unwrap().as_slice(), &[0.0]);
        assert_eq!(invert_scaler(&col(&[0.0]), &p).unwrap().as_slice(), &[5.0]);
    }

    #[test]
    fn dimension_mismatch() {
        let p = ScalerParams::from_bounds(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        assert!(matches!(
            apply_scaler(&col(&[1.0]), &p),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            invert_scaler(&col(&[1.0]), &p),
            Err(Error::Shape(_))
        ));
    }
}
