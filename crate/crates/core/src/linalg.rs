//! Small dense complex linear algebra.
//!
//! Matrices are row-major and generic over [`Scalar`] so that the same
//! kernels can run on plain `Complex64` or on an instrumented type that
//! counts multiplications (see `complexity`). Additions are free in that
//! accounting; only `Mul` is counted.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Mul, Sub};

use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub trait Scalar:
    Copy
    + Debug
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + AddAssign
{
    fn from_c64(z: C64) -> Self;
    fn to_c64(self) -> C64;
    fn conj(self) -> Self;

    fn zero() -> Self {
        Self::from_c64(C64::new(0.0, 0.0))
    }

    fn from_real(x: f64) -> Self {
        Self::from_c64(C64::new(x, 0.0))
    }
}

impl Scalar for C64 {
    #[inline]
    fn from_c64(z: C64) -> Self {
        z
    }
    #[inline]
    fn to_c64(self) -> C64 {
        self
    }
    #[inline]
    fn conj(self) -> Self {
        Complex64::conj(&self)
    }
}

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CMat<S = C64> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> CMat<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![S::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = S::from_real(1.0);
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> S) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<S>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[S] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[S] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn map<T: Scalar>(&self, f: impl Fn(S) -> T) -> CMat<T> {
        CMat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// `self * x` for a column vector.
    pub fn mul_vec(&self, x: &[S]) -> Vec<S> {
        assert_eq!(x.len(), self.cols, "mul_vec dimension");
        (0..self.rows)
            .map(|r| {
                let mut acc = S::zero();
                for (a, &b) in self.row(r).iter().zip(x) {
                    acc += *a * b;
                }
                acc
            })
            .collect()
    }

    /// `xᵀ * self` for a row vector given by its entries.
    pub fn row_mul(&self, x: &[S]) -> Vec<S> {
        assert_eq!(x.len(), self.rows, "row_mul dimension");
        let mut out = vec![S::zero(); self.cols];
        for (r, &xr) in x.iter().enumerate() {
            for (o, &a) in out.iter_mut().zip(self.row(r)) {
                *o += xr * a;
            }
        }
        out
    }

    /// `self * Diag(d)`: scales column `c` by `d[c]`.
    pub fn scale_columns(&mut self, d: &[S]) {
        assert_eq!(d.len(), self.cols, "scale_columns dimension");
        for r in 0..self.rows {
            let cols = self.cols;
            for (x, &s) in self.data[r * cols..(r + 1) * cols].iter_mut().zip(d) {
                *x = *x * s;
            }
        }
    }

    pub fn matmul(&self, rhs: &CMat<S>) -> Result<CMat<S>> {
        if self.cols != rhs.rows {
            return Err(Error::Dimension(format!(
                "{}x{} times {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = CMat::zeros(self.rows, rhs.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(r, k)];
                let dst = &mut out.data[r * rhs.cols..(r + 1) * rhs.cols];
                for (o, &b) in dst.iter_mut().zip(rhs.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn adjoint(&self) -> CMat<S> {
        CMat::from_fn(self.cols, self.rows, |r, c| self[(c, r)].conj())
    }
}

impl CMat<C64> {
    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn is_hermitian(&self, rel_tol: f64) -> bool {
        if self.rows != self.cols {
            return false;
        }
        let scale = self.frobenius_norm().max(f64::MIN_POSITIVE);
        let mut diff = 0.0;
        for r in 0..self.rows {
            for c in 0..self.cols {
                diff += (self[(r, c)] - self[(c, r)].conj()).norm_sqr();
            }
        }
        diff.sqrt() <= rel_tol * scale
    }

    /// `xᴴ self x`, real part.
    pub fn quad_form(&self, x: &[C64]) -> f64 {
        let ax = self.mul_vec(x);
        dot_h(x, &ax).re
    }
}

impl<S> std::ops::Index<(usize, usize)> for CMat<S> {
    type Output = S;
    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &S {
        &self.data[r * self.cols + c]
    }
}

impl<S> std::ops::IndexMut<(usize, usize)> for CMat<S> {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut S {
        &mut self.data[r * self.cols + c]
    }
}

/// `aᴴ b`.
pub fn dot_h(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm(a: &[C64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Lower-triangular Cholesky factor of a Hermitian positive-definite matrix.
#[derive(Clone, Debug)]
pub struct Cholesky {
    lower: CMat<C64>,
}

impl Cholesky {
    pub fn new(a: &CMat<C64>) -> Result<Self> {
        let n = a.rows();
        if a.cols() != n {
            return Err(Error::Dimension(format!("cholesky of {}x{}", n, a.cols())));
        }
        let mut l = CMat::<C64>::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)].re;
            for k in 0..j {
                d -= l[(j, k)].norm_sqr();
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::Conditioning {
                    reason: format!("matrix not positive definite at pivot {j}"),
                    min_eigenvalue: hermitian_eigenvalues(a).first().copied().unwrap_or(f64::NAN),
                });
            }
            let djj = d.sqrt();
            l[(j, j)] = C64::new(djj, 0.0);
            for i in j + 1..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)].conj();
                }
                l[(i, j)] = s / djj;
            }
        }
        Ok(Self { lower: l })
    }

    pub fn lower(&self) -> &CMat<C64> {
        &self.lower
    }

    /// Solves `A x = b` by forward then backward substitution.
    pub fn solve(&self, b: &[C64]) -> Vec<C64> {
        let n = self.lower.rows();
        assert_eq!(b.len(), n);
        let l = &self.lower;
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= l[(i, k)] * y[k];
            }
            y[i] = s / l[(i, i)].re;
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= l[(k, i)].conj() * y[k];
            }
            y[i] = s / l[(i, i)].re;
        }
        y
    }
}

/// Eigen-decomposition of a Hermitian matrix via its real symmetric
/// embedding `[[Re, -Im], [Im, Re]]` and cyclic Jacobi rotations.
///
/// Every eigenvalue of the complex matrix appears twice in the embedding;
/// the returned values are deduplicated pairwise and sorted ascending.
pub fn hermitian_eigenvalues(a: &CMat<C64>) -> Vec<f64> {
    let (vals, _) = embedded_eigen(a);
    vals.chunks(2).map(|p| p[0]).collect()
}

fn embed(a: &CMat<C64>) -> Vec<Vec<f64>> {
    let n = a.rows();
    let mut m = vec![vec![0.0; 2 * n]; 2 * n];
    for r in 0..n {
        for c in 0..n {
            let z = a[(r, c)];
            m[r][c] = z.re;
            m[r + n][c + n] = z.re;
            m[r][c + n] = -z.im;
            m[r + n][c] = z.im;
        }
    }
    // Symmetrize against rounding in the input.
    for r in 0..2 * n {
        for c in r + 1..2 * n {
            let v = 0.5 * (m[r][c] + m[c][r]);
            m[r][c] = v;
            m[c][r] = v;
        }
    }
    m
}

/// Returns ascending eigenvalues and matching eigenvectors (columns) of the
/// real embedding.
fn embedded_eigen(a: &CMat<C64>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut m = embed(a);
    let n = m.len();
    let mut v = vec![vec![0.0; n]; n];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i][j] * m[i][j])
            .sum();
        let scale: f64 = (0..n).map(|i| m[i][i] * m[i][i]).sum::<f64>().max(f64::MIN_POSITIVE);
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q].abs() < f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k][p];
                    let mkq = m[k][q];
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p][k];
                    let mqk = m[q][k];
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for row in v.iter_mut() {
                    let vp = row[p];
                    let vq = row[q];
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[i][i].total_cmp(&m[j][j]));
    let vals = order.iter().map(|&i| m[i][i]).collect();
    let vecs = order
        .iter()
        .map(|&i| v.iter().map(|row| row[i]).collect())
        .collect();
    (vals, vecs)
}

/// Outcome of `zᴴ A⁺ z` for a Hermitian positive semidefinite `A`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PseudoQuadForm {
    /// `z` lies in the range of `A`; value of `zᴴ A⁺ z`.
    Finite(f64),
    /// `z` has a component in the null space of `A`.
    Unbounded,
}

/// Evaluates `zᴴ A⁺ z`, treating eigenvalues below `rel_tol · λ_max` as zero.
pub fn pseudo_quad_form(a: &CMat<C64>, z: &[C64], rel_tol: f64) -> PseudoQuadForm {
    let n = a.rows();
    let (vals, vecs) = embedded_eigen(a);
    let lmax = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let zr: Vec<f64> = z.iter().map(|c| c.re).chain(z.iter().map(|c| c.im)).collect();
    let znorm2: f64 = zr.iter().map(|x| x * x).sum();
    let mut value = 0.0;
    let mut null_energy = 0.0;
    for (lam, v) in vals.iter().zip(&vecs) {
        let proj: f64 = v.iter().zip(&zr).map(|(a, b)| a * b).sum();
        if *lam > rel_tol * lmax && lmax > 0.0 {
            value += proj * proj / lam;
        } else {
            null_energy += proj * proj;
        }
    }
    debug_assert_eq!(vals.len(), 2 * n);
    if null_energy > 1e-12 * znorm2.max(f64::MIN_POSITIVE) {
        PseudoQuadForm::Unbounded
    } else {
        PseudoQuadForm::Finite(value)
    }
}

/// Neumaier compensated summation over an ordered sequence.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}
