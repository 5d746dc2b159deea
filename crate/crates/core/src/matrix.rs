use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Dense row-major matrix. Inputs `X` are stored one sample per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim("matrix buffer", rows * cols, data.len()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(Error::dim("matrix row", cols, row.len()));
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
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

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Frobenius norm.
    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// A `d × m` matrix whose columns `w_r` are stored contiguously.
///
/// Hidden-layer weights and their gradients share this layout so that the
/// per-neuron vectors can be quantized and updated as plain slices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightMatrix {
    d: usize,
    m: usize,
    data: Vec<f64>,
}

impl WeightMatrix {
    pub fn zeros(d: usize, m: usize) -> Self {
        Self {
            d,
            m,
            data: vec![0.0; d * m],
        }
    }

    /// Builds from column vectors `w_1 .. w_m`.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let d = columns.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(d * columns.len());
        for c in columns {
            if c.len() != d {
                return Err(Error::dim("weight column", d, c.len()));
            }
            data.extend_from_slice(c);
        }
        Ok(Self {
            d,
            m: columns.len(),
            data,
        })
    }

    pub(crate) fn from_raw(d: usize, m: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), d * m);
        Self { d, m, data }
    }

    /// Number of rows (input dimension).
    pub fn d(&self) -> usize {
        self.d
    }

    /// Number of columns (hidden width).
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn column(&self, r: usize) -> &[f64] {
        &self.data[r * self.d..(r + 1) * self.d]
    }

    pub fn column_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.d..(r + 1) * self.d]
    }

    pub fn columns(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        (0..self.m).map(move |r| self.column(r))
    }

    /// Entry in row `k`, column `r`.
    pub fn get(&self, k: usize, r: usize) -> f64 {
        self.data[r * self.d + k]
    }

    pub fn set(&mut self, k: usize, r: usize, v: f64) {
        self.data[r * self.d + k] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// `self -= eta * rhs`.
    pub fn sub_scaled(&mut self, eta: f64, rhs: &WeightMatrix) -> Result<()> {
        if self.d != rhs.d || self.m != rhs.m {
            return Err(Error::dim("weight update", self.d * self.m, rhs.d * rhs.m));
        }
        for (w, g) in self.data.iter_mut().zip(&rhs.data) {
            *w -= eta * g;
        }
        Ok(())
    }

    pub fn column_norm(&self, r: usize) -> f64 {
        self.column(r).iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}
