//! Small dense linear algebra: complex Hermitian systems via Cholesky and a
//! partial-pivot real solver. Matrices here stay small (pilot length by pilot
//! length, or active-set sized), so straightforward O(n^3) kernels are fine.

use crate::error::{Error, Result};
use num_complex::Complex64;

pub type C64 = Complex64;

/// Dense real matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Grid { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut g = Grid::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                g.data[r * cols + c] = f(r, c);
            }
        }
        g
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Row `r` as a slice.
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Dense square complex matrix, column-major.
#[derive(Debug, Clone)]
pub struct CMat {
    n: usize,
    a: Vec<C64>,
}

impl CMat {
    pub fn identity(n: usize) -> Self {
        let mut a = vec![C64::new(0.0, 0.0); n * n];
        for i in 0..n {
            a[i * n + i] = C64::new(1.0, 0.0);
        }
        CMat { n, a }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> C64 {
        self.a[c * self.n + r]
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// A += alpha * x * x^H with real alpha.
    pub fn add_rank1_herm(&mut self, alpha: f64, x: &[C64]) {
        debug_assert_eq!(x.len(), self.n);
        let n = self.n;
        for c in 0..n {
            let xc = alpha * x[c].conj();
            let col = &mut self.a[c * n..(c + 1) * n];
            for r in 0..n {
                col[r] += x[r] * xc;
            }
        }
    }

    /// Cholesky factorization A = L L^H for Hermitian positive definite A.
    pub fn cholesky(mut self) -> Result<CholFactor> {
        let n = self.n;
        for j in 0..n {
            let mut d = self.a[j * n + j].re;
            for k in 0..j {
                d -= self.a[k * n + j].norm_sqr();
            }
            if d <= 0.0 || !d.is_finite() {
                return Err(Error::Linalg(format!(
                    "cholesky pivot {d:.3e} at column {j}: matrix not positive definite"
                )));
            }
            let ljj = d.sqrt();
            self.a[j * n + j] = C64::new(ljj, 0.0);
            for i in (j + 1)..n {
                let mut s = self.a[j * n + i];
                for k in 0..j {
                    s -= self.a[k * n + i] * self.a[k * n + j].conj();
                }
                self.a[j * n + i] = s / ljj;
            }
        }
        Ok(CholFactor { n, l: self.a })
    }
}

/// Lower-triangular Cholesky factor (column-major storage reused from `CMat`).
#[derive(Debug, Clone)]
pub struct CholFactor {
    n: usize,
    l: Vec<C64>,
}

impl CholFactor {
    /// Solves A x = b in place (A = L L^H).
    pub fn solve_in_place(&self, b: &mut [C64]) {
        let n = self.n;
        debug_assert_eq!(b.len(), n);
        // forward: L y = b
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.l[k * n + i] * b[k];
            }
            b[i] = s / self.l[i * n + i];
        }
        // backward: L^H x = y
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in (i + 1)..n {
                s -= self.l[i * n + k].conj() * b[k];
            }
            b[i] = s / self.l[i * n + i];
        }
    }

    pub fn solve(&self, b: &[C64]) -> Vec<C64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    /// Full inverse; used by the trace oracles on modest sizes.
    pub fn inverse(&self) -> CMat {
        let n = self.n;
        let mut inv = CMat::identity(n);
        for c in 0..n {
            let col = &mut inv.a[c * n..(c + 1) * n];
            self.solve_in_place(col);
        }
        inv
    }
}

/// x^H y.
pub fn dot_h(x: &[C64], y: &[C64]) -> C64 {
    debug_assert_eq!(x.len(), y.len());
    x.iter().zip(y).map(|(a, b)| a.conj() * b).sum()
}

/// Squared Euclidean norm of a complex vector.
pub fn norm_sqr(x: &[C64]) -> f64 {
    x.iter().map(|v| v.norm_sqr()).sum()
}

/// Solves the real dense system `a x = b` (row-major `a`, length n*n) by
/// Gaussian elimination with partial pivoting. `b` is overwritten with x.
pub fn solve_real_dense(a: &mut [f64], b: &mut [f64], n: usize) -> Result<()> {
    debug_assert_eq!(a.len(), n * n);
    debug_assert_eq!(b.len(), n);
    for col in 0..n {
        let mut piv = col;
        let mut best = a[col * n + col].abs();
        for r in (col + 1)..n {
            let v = a[r * n + col].abs();
            if v > best {
                best = v;
                piv = r;
            }
        }
        if best == 0.0 || !best.is_finite() {
            return Err(Error::Solver(format!("singular linear system at column {col}")));
        }
        if piv != col {
            for c in 0..n {
                a.swap(col * n + c, piv * n + c);
            }
            b.swap(col, piv);
        }
        let d = a[col * n + col];
        for r in (col + 1)..n {
            let f = a[r * n + col] / d;
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                a[r * n + c] -= f * a[col * n + c];
            }
            b[r] -= f * b[col];
        }
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for c in (i + 1)..n {
            s -= a[i * n + c] * b[c];
        }
        b[i] = s / a[i * n + i];
    }
    Ok(())
}
