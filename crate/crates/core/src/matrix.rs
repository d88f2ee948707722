//! Flat row-major f64 matrices. `Matrix` is the plain container used for
//! document vectors, centroids and projections; `AtomicMatrix` backs the
//! embedding tables so training workers can update rows without locks
//! (lossy writes are fine there, see the trainer module).

use std::sync::atomic::{AtomicU64, Ordering};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_flat(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "flat data does not match shape");
        Matrix { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Matrix { rows: rows.len(), cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1))
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mean of all rows; None for an empty matrix.
    pub fn mean_row(&self) -> Option<Vec<f64>> {
        if self.rows == 0 {
            return None;
        }
        let mut mean = vec![0.0; self.cols];
        for r in self.iter_rows() {
            for (m, x) in mean.iter_mut().zip(r) {
                *m += x;
            }
        }
        let n = self.rows as f64;
        for m in &mut mean {
            *m /= n;
        }
        Some(mean)
    }
}

/// An f64 cell updated through `AtomicU64` bit casts. Relaxed ordering is
/// enough: the training contract allows lossy concurrent updates, and the
/// thread join at the end of training publishes the final values.
pub struct AtomicF64 {
    bits: AtomicU64,
}

impl AtomicF64 {
    pub fn new(v: f64) -> Self {
        AtomicF64 { bits: AtomicU64::new(v.to_bits()) }
    }

    pub fn get(&self) -> f64 {
        f64::from_bits(self.bits.load(Ordering::Relaxed))
    }

    pub fn set(&self, v: f64) {
        self.bits.store(v.to_bits(), Ordering::Relaxed);
    }

    /// Read-modify-write without CAS: racing adds may drop each other's
    /// contribution, which the hogwild scheme tolerates by design.
    pub fn add(&self, v: f64) {
        self.set(self.get() + v);
    }
}

pub struct AtomicMatrix {
    rows: usize,
    cols: usize,
    cells: Vec<AtomicF64>,
}

impl AtomicMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        let cells = (0..rows * cols).map(|_| AtomicF64::new(0.0)).collect();
        AtomicMatrix { rows, cols, cells }
    }

    pub fn from_matrix(m: &Matrix) -> Self {
        let cells = m.data().iter().map(|&v| AtomicF64::new(v)).collect();
        AtomicMatrix { rows: m.rows(), cols: m.cols(), cells }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.cells[r * self.cols + c].get()
    }

    pub fn set(&self, r: usize, c: usize, v: f64) {
        self.cells[r * self.cols + c].set(v);
    }

    pub fn add(&self, r: usize, c: usize, v: f64) {
        self.cells[r * self.cols + c].add(v);
    }

    pub fn row_copy_into(&self, r: usize, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.cols);
        let base = r * self.cols;
        for (c, slot) in out.iter_mut().enumerate() {
            *slot = self.cells[base + c].get();
        }
    }

    pub fn row_copy(&self, r: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        self.row_copy_into(r, &mut out);
        out
    }

    pub fn add_to_row(&self, r: usize, delta: &[f64]) {
        debug_assert_eq!(delta.len(), self.cols);
        let base = r * self.cols;
        for (c, d) in delta.iter().enumerate() {
            self.cells[base + c].add(*d);
        }
    }

    /// row += s * v
    pub fn add_scaled_row(&self, r: usize, s: f64, v: &[f64]) {
        debug_assert_eq!(v.len(), self.cols);
        let base = r * self.cols;
        for (c, x) in v.iter().enumerate() {
            self.cells[base + c].add(s * x);
        }
    }

    pub fn to_matrix(&self) -> Matrix {
        let data = self.cells.iter().map(AtomicF64::get).collect();
        Matrix::from_flat(self.rows, self.cols, data)
    }
}
