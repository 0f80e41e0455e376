//! Small dense linear algebra: row-major matrices, Cholesky solves, and the
//! power iteration used to bound solver step sizes. Everything here is f64
//! and sized for dictionaries of a few dozen columns, so plain loops are
//! plenty fast.

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::validation(format!(
                "matrix data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Mat { rows, cols, data })
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

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// y = A x
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "matvec dimension mismatch");
        self.data
            .chunks_exact(self.cols)
            .map(|row| dot(row, x))
            .collect()
    }

    /// y = A^T x
    pub fn matvec_t(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.rows, "matvec_t dimension mismatch");
        let mut y = vec![0.0; self.cols];
        for (row, &xi) in self.data.chunks_exact(self.cols).zip(x) {
            for (yj, &a) in y.iter_mut().zip(row) {
                *yj += a * xi;
            }
        }
        y
    }

    /// A^T A as a dense symmetric matrix.
    pub fn gram(&self) -> Mat {
        let n = self.cols;
        let mut g = Mat::zeros(n, n);
        for row in self.data.chunks_exact(n) {
            for i in 0..n {
                let ri = row[i];
                if ri == 0.0 {
                    continue;
                }
                for j in i..n {
                    g.data[i * n + j] += ri * row[j];
                }
            }
        }
        // mirror the upper triangle
        for i in 0..n {
            for j in (i + 1)..n {
                g.data[j * n + i] = g.data[i * n + j];
            }
        }
        g
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Solve A x = b for symmetric positive definite A by Cholesky (A = L L^T).
/// Fails on non-positive pivots, which is how rank deficiency shows up.
pub fn cholesky_solve(a: &Mat, b: &[f64], context: &str) -> Result<Vec<f64>> {
    let n = a.rows();
    if a.cols() != n || b.len() != n {
        return Err(Error::validation(format!(
            "cholesky_solve: system is {}x{} with rhs length {}",
            a.rows(),
            a.cols(),
            b.len()
        )));
    }
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return Err(Error::Singular {
                        context: context.to_string(),
                        hint: "system is not positive definite; for an \
                               underdetermined dictionary use lambda > 0"
                            .to_string(),
                    });
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    // forward substitution L y = b
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    // back substitution L^T x = y
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    Ok(x)
}

/// Largest eigenvalue of the symmetric positive semidefinite matrix `g`
/// by power iteration with a fixed internal start vector, so results are
/// reproducible. Iterates at most `max_iters` times or until the Rayleigh
/// quotient stabilizes to `tol` relative.
pub fn power_iteration_max_eig(g: &Mat, max_iters: usize, tol: f64) -> f64 {
    let n = g.rows();
    assert_eq!(g.cols(), n);
    if n == 0 {
        return 0.0;
    }
    let mut rng = Rng::seed_from_u64(POWER_ITERATION_SEED);
    let mut v: Vec<f64> = (0..n).map(|_| rng.next_f64_in(-1.0, 1.0)).collect();
    let nv = norm2(&v);
    if nv == 0.0 {
        v[0] = 1.0;
    } else {
        v.iter_mut().for_each(|x| *x /= nv);
    }
    let mut eig = 0.0;
    for _ in 0..max_iters {
        let w = g.matvec(&v);
        let new_eig = dot(&v, &w);
        let nw = norm2(&w);
        if nw == 0.0 {
            return 0.0; // g annihilates v: spectrum reachable from v is zero
        }
        v = w.iter().map(|x| x / nw).collect();
        if (new_eig - eig).abs() <= tol * new_eig.abs().max(1.0) {
            return new_eig;
        }
        eig = new_eig;
    }
    eig
}

/// Fixed start-vector seed for [`power_iteration_max_eig`]; part of the
/// reproducibility contract, do not change.
const POWER_ITERATION_SEED: u64 = 0x5EED_0000_0001;
