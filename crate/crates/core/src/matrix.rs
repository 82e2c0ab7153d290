//! Dense row-major matrices and the small set of kernels the recurrent
//! cells need.
//!
//! The matrix-vector kernels report every multiply-accumulate they execute to
//! a per-thread counter (see [`mac_counter`]). The counter is what the cost
//! model in `model::flops` is checked against, so kernels must never skip or
//! fuse work without reporting it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::shape(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.cols.max(1)).take(self.rows)
    }

    /// `out += self * x`.
    pub fn matvec_acc(&self, x: &[f64], out: &mut [f64], class: OpClass) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (o, row) in out.iter_mut().zip(self.data.chunks_exact(self.cols.max(1))) {
            *o += dot(row, x);
        }
        mac_counter::add(class, (self.rows * self.cols) as u64);
    }

    /// `out += selfᵀ * x`.
    pub fn matvec_t_acc(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        if self.cols == 0 {
            return;
        }
        for (&xi, row) in x.iter().zip(self.data.chunks_exact(self.cols)) {
            if xi != 0.0 {
                axpy(xi, row, out);
            }
        }
    }

    /// `self += a ⊗ b` (outer product; `a` indexes rows).
    pub fn add_outer(&mut self, a: &[f64], b: &[f64]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        if self.cols == 0 {
            return;
        }
        for (&ai, row) in a.iter().zip(self.data.chunks_exact_mut(self.cols)) {
            if ai != 0.0 {
                axpy(ai, b, row);
            }
        }
    }

    /// Copy without the listed rows and columns. Both index lists must be sorted.
    pub fn without(&self, drop_rows: &[usize], drop_cols: &[usize]) -> Matrix {
        let keep_rows: Vec<usize> = kept(self.rows, drop_rows);
        let keep_cols: Vec<usize> = kept(self.cols, drop_cols);
        Matrix::from_fn(keep_rows.len(), keep_cols.len(), |r, c| {
            self.get(keep_rows[r], keep_cols[c])
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Indices in `0..n` that are not in the sorted list `drop`.
pub(crate) fn kept(n: usize, drop: &[usize]) -> Vec<usize> {
    (0..n).filter(|i| drop.binary_search(i).is_err()).collect()
}

pub(crate) fn drop_indices(v: &[f64], drop: &[usize]) -> Vec<f64> {
    kept(v.len(), drop).into_iter().map(|i| v[i]).collect()
}

/// Dot product with four interleaved accumulators (fixed order, so results are reproducible).
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `out += diag(v) * x`, counted as peephole work.
#[inline]
pub fn diag_acc(v: &[f64], x: &[f64], out: &mut [f64]) {
    for ((o, vi), xi) in out.iter_mut().zip(v).zip(x) {
        *o += vi * xi;
    }
    mac_counter::add(OpClass::Peephole, v.len() as u64);
}

/// `y += a * x`
#[inline]
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Which part of a forward pass a multiply-accumulate belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpClass {
    /// Input-to-hidden weights (`W_*`).
    Input,
    /// Hidden-to-hidden weights (`U_*`).
    Recurrent,
    /// Diagonal peephole weights (`V_*`, LSTM only).
    Peephole,
    /// Dense output head.
    Head,
}

/// Thread-local tally of multiply-accumulates executed by the kernels.
pub mod mac_counter {
    use std::cell::Cell;

    use super::OpClass;

    thread_local! {
        static COUNTS: Cell<[u64; 4]> = const { Cell::new([0; 4]) };
    }

    fn slot(class: OpClass) -> usize {
        match class {
            OpClass::Input => 0,
            OpClass::Recurrent => 1,
            OpClass::Peephole => 2,
            OpClass::Head => 3,
        }
    }

    #[inline]
    pub fn add(class: OpClass, n: u64) {
        COUNTS.with(|c| {
            let mut v = c.get();
            v[slot(class)] += n;
            c.set(v);
        });
    }

    pub fn reset() {
        COUNTS.with(|c| c.set([0; 4]));
    }

    pub fn get(class: OpClass) -> u64 {
        COUNTS.with(|c| c.get()[slot(class)])
    }

    pub fn total() -> u64 {
        COUNTS.with(|c| c.get().iter().sum())
    }
}
