//! Minimal dense linear algebra for the small (L x L and block) systems
//! used by the spline machinery and the group solver.

use crate::error::{Error, Result};
use crate::scalar::{fl, Scalar};

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat<F> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<F>,
}

impl<F: Scalar> Mat<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![F::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = F::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> F) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[F] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        Mat::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &Mat<F>) -> Mat<F> {
        assert_eq!(self.cols, other.rows);
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == F::zero() {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] = out[(i, j)] + a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn matvec(&self, x: &[F]) -> Vec<F> {
        assert_eq!(self.cols, x.len());
        (0..self.rows)
            .map(|i| {
                self.row(i)
                    .iter()
                    .zip(x)
                    .fold(F::zero(), |acc, (&a, &b)| acc + a * b)
            })
            .collect()
    }

    /// Frobenius norm of (self - other).
    pub fn max_abs_diff(&self, other: &Mat<F>) -> F {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(F::zero(), F::max)
    }
}

impl<F> std::ops::Index<(usize, usize)> for Mat<F> {
    type Output = F;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &F {
        &self.data[i * self.cols + j]
    }
}

impl<F> std::ops::IndexMut<(usize, usize)> for Mat<F> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut F {
        &mut self.data[i * self.cols + j]
    }
}

/// Upper-triangular Cholesky factor R with R^T R = A, for symmetric
/// positive-definite A.
pub fn cholesky_upper<F: Scalar>(a: &Mat<F>) -> Result<Mat<F>> {
    assert_eq!(a.rows, a.cols);
    let n = a.rows;
    let mut r = Mat::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d = d - r[(k, j)] * r[(k, j)];
        }
        if d <= F::zero() || !d.is_finite() {
            return Err(Error::NotPositiveDefinite {
                order: j,
                pivot: d.to_f64().unwrap_or(f64::NAN),
            });
        }
        let dj = d.sqrt();
        r[(j, j)] = dj;
        for i in j + 1..n {
            let mut s = a[(j, i)];
            for k in 0..j {
                s = s - r[(k, j)] * r[(k, i)];
            }
            r[(j, i)] = s / dj;
        }
    }
    Ok(r)
}

/// Solves R x = b for upper-triangular R.
pub fn solve_upper<F: Scalar>(r: &Mat<F>, b: &[F]) -> Vec<F> {
    let n = r.rows;
    let mut x = b.to_vec();
    for i in (0..n).rev() {
        let mut s = x[i];
        for j in i + 1..n {
            s = s - r[(i, j)] * x[j];
        }
        x[i] = s / r[(i, i)];
    }
    x
}

/// Solves R^T x = b for upper-triangular R (forward substitution).
pub fn solve_upper_transpose<F: Scalar>(r: &Mat<F>, b: &[F]) -> Vec<F> {
    let n = r.rows;
    let mut x = b.to_vec();
    for i in 0..n {
        let mut s = x[i];
        for j in 0..i {
            s = s - r[(j, i)] * x[j];
        }
        x[i] = s / r[(i, i)];
    }
    x
}

/// Inverse of an upper-triangular matrix.
pub fn inverse_upper<F: Scalar>(r: &Mat<F>) -> Mat<F> {
    let n = r.rows;
    let mut inv = Mat::zeros(n, n);
    for col in 0..n {
        let mut e = vec![F::zero(); n];
        e[col] = F::one();
        let x = solve_upper(r, &e);
        for i in 0..n {
            inv[(i, col)] = x[i];
        }
    }
    inv
}

/// Solves A x = b for symmetric positive-definite A via Cholesky.
pub fn spd_solve<F: Scalar>(a: &Mat<F>, b: &[F]) -> Result<Vec<F>> {
    let r = cholesky_upper(a)?;
    Ok(solve_upper(&r, &solve_upper_transpose(&r, b)))
}

/// Largest eigenvalue of a symmetric positive-semidefinite matrix by power
/// iteration.
pub fn largest_eigenvalue<F: Scalar>(a: &Mat<F>, tol: F, max_iter: usize) -> F {
    let n = a.rows;
    if n == 0 {
        return F::zero();
    }
    // Deterministic, not-too-symmetric start vector.
    let mut v: Vec<F> = (0..n)
        .map(|i| F::one() + fl::<F>(0.5) * F::from_usize(i % 3).unwrap())
        .collect();
    let mut lambda = F::zero();
    for _ in 0..max_iter {
        let w = a.matvec(&v);
        let norm = w.iter().map(|&x| x * x).sum::<F>().sqrt();
        if norm == F::zero() {
            return F::zero();
        }
        let new_lambda = v
            .iter()
            .zip(&w)
            .fold(F::zero(), |acc, (&a, &b)| acc + a * b);
        v = w.iter().map(|&x| x / norm).collect();
        if (new_lambda - lambda).abs() <= tol * (F::one() + new_lambda.abs()) {
            return new_lambda;
        }
        lambda = new_lambda;
    }
    lambda
}

/// Eigenvalues of a symmetric matrix by the cyclic Jacobi method.
///
/// Used for small matrices only (oracles, degrees-of-freedom checks).
pub fn symmetric_eigenvalues<F: Scalar>(a: &Mat<F>) -> Vec<F> {
    let n = a.rows;
    let mut m = a.clone();
    let eps = fl::<F>(1e-14);
    for _sweep in 0..100 {
        let mut off = F::zero();
        for i in 0..n {
            for j in i + 1..n {
                off = off + m[(i, j)] * m[(i, j)];
            }
        }
        if off.sqrt() <= eps {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[(p, q)].abs() <= eps {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (fl::<F>(2.0) * m[(p, q)]);
                let t = if theta >= F::zero() {
                    F::one() / (theta + (F::one() + theta * theta).sqrt())
                } else {
                    -F::one() / (-theta + (F::one() + theta * theta).sqrt())
                };
                let c = F::one() / (F::one() + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
            }
        }
    }
    (0..n).map(|i| m[(i, i)]).collect()
}

pub fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).fold(F::zero(), |acc, (&x, &y)| acc + x * y)
}

pub fn norm2<F: Scalar>(a: &[F]) -> F {
    dot(a, a).sqrt()
}
