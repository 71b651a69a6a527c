//! Dense row-major `f64` matrices.
//!
//! All model parameters, activations, and feature batches are `Tensor2`s.
//! Operations check dimensions and reject non-finite results where the
//! callers rely on it; accumulation order is fixed so results are
//! reproducible bit for bit.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{FridaError, Result};

/// A `rows x cols` matrix of 64-bit floats, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor2 {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor2 {
    /// All-zero tensor.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor2 {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Build from a flat row-major vector; length must equal `rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(FridaError::Shape {
                context: "Tensor2::from_vec",
                expected: (rows, cols),
                got: (data.len(), 1),
            });
        }
        Ok(Tensor2 { rows, cols, data })
    }

    /// Single-row tensor from a slice.
    pub fn row_vector(values: &[f64]) -> Self {
        Tensor2 {
            rows: 1,
            cols: values.len(),
            data: values.to_vec(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    /// Borrow row `r` as a slice.
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// True when every entry is finite.
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Matrix product `self * rhs`.
    pub fn matmul(&self, rhs: &Tensor2) -> Result<Tensor2> {
        if self.cols != rhs.rows {
            return Err(FridaError::Shape {
                context: "matmul",
                expected: (self.cols, rhs.rows),
                got: (rhs.rows, rhs.cols),
            });
        }
        let mut out = Tensor2::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let lhs_row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (o, b) in out_row.iter_mut().zip(lhs_row.iter()) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self^T * rhs`, without materializing the transpose.
    pub fn t_matmul(&self, rhs: &Tensor2) -> Result<Tensor2> {
        if self.rows != rhs.rows {
            return Err(FridaError::Shape {
                context: "t_matmul",
                expected: (self.rows, 0),
                got: (rhs.rows, rhs.cols),
            });
        }
        let mut out = Tensor2::zeros(self.cols, rhs.cols);
        for r in 0..self.rows {
            let a_row = &self.data[r * self.cols..(r + 1) * self.cols];
            let b_row = &rhs.data[r * rhs.cols..(r + 1) * rhs.cols];
            for (i, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row.iter()) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self * rhs^T`.
    pub fn matmul_t(&self, rhs: &Tensor2) -> Result<Tensor2> {
        if self.cols != rhs.cols {
            return Err(FridaError::Shape {
                context: "matmul_t",
                expected: (0, self.cols),
                got: (rhs.rows, rhs.cols),
            });
        }
        let mut out = Tensor2::zeros(self.rows, rhs.rows);
        for i in 0..self.rows {
            let a_row = &self.data[i * self.cols..(i + 1) * self.cols];
            for j in 0..rhs.rows {
                let b_row = &rhs.data[j * rhs.cols..(j + 1) * rhs.cols];
                let mut acc = 0.0;
                for (&a, &b) in a_row.iter().zip(b_row.iter()) {
                    acc += a * b;
                }
                out.data[i * rhs.rows + j] = acc;
            }
        }
        Ok(out)
    }

    /// Add a `1 x cols` bias row to every row.
    pub fn add_row(&mut self, bias: &Tensor2) -> Result<()> {
        if bias.rows != 1 || bias.cols != self.cols {
            return Err(FridaError::Shape {
                context: "add_row",
                expected: (1, self.cols),
                got: (bias.rows, bias.cols),
            });
        }
        for r in 0..self.rows {
            let row = &mut self.data[r * self.cols..(r + 1) * self.cols];
            for (v, b) in row.iter_mut().zip(bias.data.iter()) {
                *v += b;
            }
        }
        Ok(())
    }

    /// Elementwise in-place addition.
    pub fn add_assign(&mut self, other: &Tensor2) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(FridaError::Shape {
                context: "add_assign",
                expected: (self.rows, self.cols),
                got: (other.rows, other.cols),
            });
        }
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += b;
        }
        Ok(())
    }

    /// Scale every entry in place.
    pub fn scale(&mut self, s: f64) {
        for v in self.data.iter_mut() {
            *v *= s;
        }
    }

    /// Column sums as a `1 x cols` tensor.
    pub fn col_sums(&self) -> Tensor2 {
        let mut out = Tensor2::zeros(1, self.cols);
        for r in 0..self.rows {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            for (o, v) in out.data.iter_mut().zip(row.iter()) {
                *o += v;
            }
        }
        out
    }

    /// Horizontal concatenation `[self | rhs]`.
    pub fn hcat(&self, rhs: &Tensor2) -> Result<Tensor2> {
        if self.rows != rhs.rows {
            return Err(FridaError::Shape {
                context: "hcat",
                expected: (self.rows, 0),
                got: (rhs.rows, rhs.cols),
            });
        }
        let cols = self.cols + rhs.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for r in 0..self.rows {
            data.extend_from_slice(self.row(r));
            data.extend_from_slice(rhs.row(r));
        }
        Ok(Tensor2 {
            rows: self.rows,
            cols,
            data,
        })
    }

    /// Vertical concatenation of `self` on top of `rhs`.
    pub fn vcat(&self, rhs: &Tensor2) -> Result<Tensor2> {
        if self.cols != rhs.cols {
            return Err(FridaError::Shape {
                context: "vcat",
                expected: (0, self.cols),
                got: (rhs.rows, rhs.cols),
            });
        }
        let mut data = Vec::with_capacity((self.rows + rhs.rows) * self.cols);
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&rhs.data);
        Ok(Tensor2 {
            rows: self.rows + rhs.rows,
            cols: self.cols,
            data,
        })
    }

    /// Copy of the column range `[lo, hi)`.
    pub fn col_slice(&self, lo: usize, hi: usize) -> Tensor2 {
        debug_assert!(lo <= hi && hi <= self.cols);
        let cols = hi - lo;
        let mut data = Vec::with_capacity(self.rows * cols);
        for r in 0..self.rows {
            data.extend_from_slice(&self.data[r * self.cols + lo..r * self.cols + hi]);
        }
        Tensor2 {
            rows: self.rows,
            cols,
            data,
        }
    }

    /// New tensor holding the rows listed in `indices`, in order.
    pub fn select_rows(&self, indices: &[usize]) -> Tensor2 {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Tensor2 {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    /// Sum of squared entries.
    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        let a = Tensor2::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Tensor2::from_vec(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.data(), &[58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn transpose_products_agree() {
        let a = Tensor2::from_vec(2, 3, vec![1.0, -2.0, 0.5, 4.0, 5.0, -6.0]).unwrap();
        let b = Tensor2::from_vec(2, 2, vec![1.5, 2.0, -1.0, 0.25]).unwrap();
        // a^T * b computed two ways
        let direct = a.t_matmul(&b).unwrap();
        let mut at = Tensor2::zeros(3, 2);
        for r in 0..2 {
            for c in 0..3 {
                at.set(c, r, a.get(r, c));
            }
        }
        let via_transpose = at.matmul(&b).unwrap();
        assert_eq!(direct, via_transpose);
    }

    #[test]
    fn shape_errors() {
        let a = Tensor2::zeros(2, 3);
        let b = Tensor2::zeros(2, 2);
        assert!(matches!(a.matmul(&b), Err(FridaError::Shape { .. })));
        assert!(Tensor2::from_vec(2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn hcat_and_slice_roundtrip() {
        let a = Tensor2::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor2::from_vec(2, 1, vec![9.0, 8.0]).unwrap();
        let cat = a.hcat(&b).unwrap();
        assert_eq!(cat.row(0), &[1.0, 2.0, 9.0]);
        assert_eq!(cat.col_slice(0, 2), a);
        assert_eq!(cat.col_slice(2, 3), b);
    }
}
