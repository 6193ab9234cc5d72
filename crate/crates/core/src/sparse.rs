//! Row-compressed real symmetric operators acting on real or complex vectors.
//!
//! Every operator in this crate has real matrix elements in the configuration
//! basis (hopping, sigma^z products, fields), so entries are stored as `f64`
//! and applied to `Complex64` state vectors without conversion.

use std::io::Write;
use std::ops::{Add, Mul};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::par::*;

/// Element type a real operator can act on.
pub trait Scalar: Copy + Send + Sync + Add<Output = Self> + Mul<f64, Output = Self> {
    const ZERO: Self;
}

impl Scalar for f64 {
    const ZERO: Self = 0.0;
}

impl Scalar for Complex64 {
    const ZERO: Self = Complex64 { re: 0.0, im: 0.0 };
}

/// Rows handed to one worker in a parallel matvec.
const ROW_CHUNK: usize = 512;

#[derive(Debug, Clone, PartialEq)]
pub struct SparseOperator {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl SparseOperator {
    /// Builds from per-row `(column, value)` lists. Duplicate columns within a
    /// row are summed and exact zeros dropped.
    pub fn from_rows(dim: usize, rows: Vec<Vec<(u32, f64)>>) -> Result<Self> {
        if rows.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: rows.len() });
        }
        let mut row_ptr = Vec::with_capacity(dim + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_unstable_by_key(|&(c, _)| c);
            let mut last: Option<u32> = None;
            for (c, v) in row {
                if c as usize >= dim {
                    return Err(Error::Domain(format!("column {c} outside dimension {dim}")));
                }
                if last == Some(c) {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                    last = Some(c);
                }
            }
            // drop entries that cancelled
            let start = *row_ptr.last().unwrap();
            let mut w = start;
            for r in start..cols.len() {
                if vals[r] != 0.0 {
                    cols[w] = cols[r];
                    vals[w] = vals[r];
                    w += 1;
                }
            }
            cols.truncate(w);
            vals.truncate(w);
            row_ptr.push(cols.len());
        }
        Ok(Self { dim, row_ptr, cols, vals })
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let rows = diag
            .iter()
            .enumerate()
            .map(|(i, &d)| if d != 0.0 { vec![(i as u32, d)] } else { Vec::new() })
            .collect();
        Self::from_rows(diag.len(), rows).expect("diagonal rows are well formed")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Entry `(row, col)`, zero if not stored.
    pub fn entry(&self, row: usize, col: usize) -> f64 {
        let range = self.row_ptr[row]..self.row_ptr[row + 1];
        match self.cols[range.clone()].binary_search(&(col as u32)) {
            Ok(k) => self.vals[range.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn row(&self, row: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[row]..self.row_ptr[row + 1];
        self.cols[range.clone()].iter().map(|&c| c as usize).zip(self.vals[range].iter().copied())
    }

    /// Diagonal entries.
    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.entry(i, i)).collect()
    }

    /// True when no off-diagonal entry is stored.
    pub fn is_diagonal(&self) -> bool {
        (0..self.dim).all(|i| self.row(i).all(|(c, _)| c == i))
    }

    pub fn max_abs(&self) -> f64 {
        self.vals.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest `|A_ij - A_ji|` over stored entries.
    pub fn hermiticity_residual(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.dim {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.entry(j, i)).abs());
            }
        }
        worst
    }

    /// `y = A x`, rows distributed over workers when the `parallel` feature is on.
    pub fn apply_into<T: Scalar>(&self, x: &[T], y: &mut [T]) {
        assert_eq!(x.len(), self.dim);
        assert_eq!(y.len(), self.dim);
        y.par_chunks_mut(ROW_CHUNK).enumerate().for_each(|(chunk, ys)| {
            let base = chunk * ROW_CHUNK;
            for (k, yi) in ys.iter_mut().enumerate() {
                *yi = self.row_dot(base + k, x);
            }
        });
    }

    /// Sequential `y = A x`, kept for benchmarking against [`Self::apply_into`].
    pub fn apply_into_serial<T: Scalar>(&self, x: &[T], y: &mut [T]) {
        assert_eq!(x.len(), self.dim);
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = self.row_dot(i, x);
        }
    }

    pub fn apply<T: Scalar>(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::ZERO; self.dim];
        self.apply_into(x, &mut y);
        y
    }

    #[inline]
    fn row_dot<T: Scalar>(&self, i: usize, x: &[T]) -> T {
        let mut acc = T::ZERO;
        for p in self.row_ptr[i]..self.row_ptr[i + 1] {
            acc = acc + x[self.cols[p] as usize] * self.vals[p];
        }
        acc
    }

    /// Dense column-major copy.
    pub fn to_dense(&self) -> faer::Mat<f64> {
        let mut m = faer::Mat::<f64>::zeros(self.dim, self.dim);
        for i in 0..self.dim {
            for (j, v) in self.row(i) {
                m[(i, j)] = v;
            }
        }
        m
    }

    /// Writes `row col re im` triplets (0-based indices), one per stored entry.
    pub fn write_triplets<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# dim {} nnz {}", self.dim, self.nnz())?;
        writeln!(out, "row,col,re,im")?;
        for i in 0..self.dim {
            for (j, v) in self.row(i) {
                writeln!(out, "{i},{j},{v:e},0")?;
            }
        }
        Ok(())
    }
}
