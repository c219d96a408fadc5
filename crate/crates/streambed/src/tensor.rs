//! Minimal row-major matrix used by the embedding and model layers.
//!
//! The shapes involved are tiny (tens by tens), the gradients are written by
//! hand, and checkpoints need a stable explicit layout — a thin `Vec<f64>`
//! wrapper with explicit `rows`/`cols` serves all three better than pulling
//! in a linear-algebra stack.

use serde::{Deserialize, Serialize};

use crate::rng::CounterRng;

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// All-zeros matrix.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds from row-major data; panics on a shape mismatch (internal use).
    pub fn from_rows(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "row-major data length mismatch");
        Matrix { rows, cols, data }
    }

    /// Entries drawn uniformly from `[-scale, scale]`.
    pub fn uniform_init(rows: usize, cols: usize, scale: f64, rng: &mut CounterRng) -> Self {
        let data = (0..rows * cols)
            .map(|_| (2.0 * rng.next_f64() - 1.0) * scale)
            .collect();
        Matrix { rows, cols, data }
    }

    /// Entries drawn from a centered normal with the given deviation.
    pub fn gaussian_init(rows: usize, cols: usize, std: f64, rng: &mut CounterRng) -> Self {
        let data = (0..rows * cols).map(|_| rng.next_gaussian() * std).collect();
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// True when the serialized shape and buffer length agree.
    pub fn shape_is_consistent(&self) -> bool {
        self.data.len() == self.rows * self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    /// Row `i` as a slice.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Flat row-major view.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Flat mutable row-major view.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `self * v` for a length-`cols` vector; returns length `rows`.
    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.cols);
        (0..self.rows)
            .map(|i| {
                self.row(i)
                    .iter()
                    .zip(v)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
            })
            .collect()
    }

    /// `self^T * v` for a length-`rows` vector; returns length `cols`.
    pub fn matvec_transpose(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (i, &vi) in v.iter().enumerate() {
            if vi != 0.0 {
                for (o, &a) in out.iter_mut().zip(self.row(i)) {
                    *o += a * vi;
                }
            }
        }
        out
    }

    /// `self += scale * a * b^T` (outer-product accumulation).
    pub fn add_outer(&mut self, a: &[f64], b: &[f64], scale: f64) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        for (i, &ai) in a.iter().enumerate() {
            if ai != 0.0 {
                let row = self.row_mut(i);
                for (r, &bj) in row.iter_mut().zip(b) {
                    *r += scale * ai * bj;
                }
            }
        }
    }

    /// `self += scale * other`, elementwise; shapes must match.
    pub fn add_scaled(&mut self, other: &Matrix, scale: f64) {
        debug_assert_eq!(self.rows, other.rows);
        debug_assert_eq!(self.cols, other.cols);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }
}
