//! Small dense complex matrices and a Hermitian positive-definite solver.
//!
//! The per-symbol MMSE filters need `K^{-1} g` for `K` of size
//! `(l_max + 1)`; the solve is done with an in-place Cholesky factorization.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Row-major dense complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CMatrix {
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Complex64::new(1.0, 0.0);
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[Complex64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<Complex64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn matvec(&self, x: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|r| self.row(r).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Number of entries that are not exactly zero in row `r`.
    pub fn row_nnz(&self, r: usize) -> usize {
        self.row(r)
            .iter()
            .filter(|v| **v != Complex64::new(0.0, 0.0))
            .count()
    }
}

impl std::ops::Index<(usize, usize)> for CMatrix {
    type Output = Complex64;
    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &Complex64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for CMatrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut Complex64 {
        &mut self.data[r * self.cols + c]
    }
}

/// Solves `K x = b` in place for Hermitian positive-definite `K`.
///
/// `k` is overwritten with its Cholesky factor (lower triangle) and `b` with
/// the solution. Only the lower triangle of `k` is read.
pub fn hpd_solve_in_place(k: &mut CMatrix, b: &mut [Complex64]) -> Result<()> {
    let n = k.rows();
    debug_assert_eq!(n, k.cols());
    debug_assert_eq!(n, b.len());
    let scale = (0..n).map(|i| k[(i, i)].re.abs()).fold(0.0, f64::max);
    let tol = scale * 1e-13;
    for j in 0..n {
        let mut d = k[(j, j)].re;
        for p in 0..j {
            d -= k[(j, p)].norm_sqr();
        }
        if !(d > tol) || !d.is_finite() {
            return Err(Error::NumericalRank { row: j, pivot: d });
        }
        let d = d.sqrt();
        k[(j, j)] = Complex64::new(d, 0.0);
        for i in j + 1..n {
            let mut s = k[(i, j)];
            for p in 0..j {
                s -= k[(i, p)] * k[(j, p)].conj();
            }
            k[(i, j)] = s / d;
        }
    }
    // forward: L y = b
    for i in 0..n {
        let mut s = b[i];
        for p in 0..i {
            s -= k[(i, p)] * b[p];
        }
        b[i] = s / k[(i, i)].re;
    }
    // backward: L^H x = y
    for i in (0..n).rev() {
        let mut s = b[i];
        for p in i + 1..n {
            s -= k[(p, i)].conj() * b[p];
        }
        b[i] = s / k[(i, i)].re;
    }
    Ok(())
}
