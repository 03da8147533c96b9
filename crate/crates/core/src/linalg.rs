//! Small dense helpers shared by the numerical modules.
//!
//! Hot loops work on plain slices; setup code (frames, spectra) uses
//! `nalgebra::DMatrix`.

use alloc::vec;
use alloc::vec::Vec;
use nalgebra::DMatrix;

use crate::{Error, Result};

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(libm::fabs(*v)))
}

/// `y = A x` for a row-major or nalgebra matrix.
pub fn mat_vec(a: &DMatrix<f64>, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(a.ncols(), x.len());
    for (i, yi) in y.iter_mut().enumerate() {
        let mut s = 0.0;
        for (j, xj) in x.iter().enumerate() {
            s += a[(i, j)] * xj;
        }
        *yi = s;
    }
}

/// `y = A^T x`.
pub fn mat_t_vec(a: &DMatrix<f64>, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(a.nrows(), x.len());
    for (j, yj) in y.iter_mut().enumerate() {
        let mut s = 0.0;
        for (i, xi) in x.iter().enumerate() {
            s += a[(i, j)] * xi;
        }
        *yj = s;
    }
}

/// Standard symplectic matrix `[[0, I], [-I, 0]]` of size `2h`.
pub fn standard_symplectic(h: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(2 * h, 2 * h);
    for i in 0..h {
        m[(i, h + i)] = 1.0;
        m[(h + i, i)] = -1.0;
    }
    m
}

/// Applies the frame complex structure `[[0, -I], [I, 0]]` to one block of
/// length `2h` starting at `offset`.
#[inline]
pub fn apply_block_j(u: &[f64], out: &mut [f64], offset: usize, h: usize) {
    for i in 0..h {
        out[offset + i] = -u[offset + h + i];
        out[offset + h + i] = u[offset + i];
    }
}

pub fn antisymmetry_residual(m: &DMatrix<f64>) -> f64 {
    (m + m.transpose()).abs().max()
}

pub fn symmetry_residual(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).abs().max()
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues ascending.
pub fn sym_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (c, &i) in order.iter().enumerate() {
        vectors.set_column(c, &eig.eigenvectors.column(i));
    }
    (values, vectors)
}

/// `M^{p}` for symmetric positive-definite `M` and `p` in `{1/2, -1/2}` etc.
pub fn sym_power(m: &DMatrix<f64>, p: f64) -> Result<DMatrix<f64>> {
    let (values, vectors) = sym_eigen(m);
    if values.first().copied().unwrap_or(1.0) <= 0.0 {
        return Err(Error::Singular("matrix power of a non-positive-definite matrix".into()));
    }
    let d = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        values.len(),
        values.iter().map(|v| libm::pow(*v, p)),
    ));
    Ok(&vectors * d * vectors.transpose())
}

pub fn inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    m.clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular(alloc::format!("{what} is not invertible")))
}

/// Gauss-Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let pi = core::f64::consts::PI;
    for i in 0..n.div_ceil(2) {
        let mut x = libm::cos(pi * (i as f64 + 0.75) / (n as f64 + 0.5));
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { x } else { p1 };
            let pn1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pn1) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if libm::fabs(dx) < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = 0.5 * (1.0 - x);
        nodes[n - 1 - i] = 0.5 * (1.0 + x);
        weights[i] = 0.5 * w;
        weights[n - 1 - i] = 0.5 * w;
    }
    (nodes, weights)
}

/// Quintic smoothstep `t^3 (10 - 15 t + 6 t^2)` clamped to `[0, 1]`, with its
/// first two derivatives.
#[inline]
pub fn smoothstep(t: f64) -> (f64, f64, f64) {
    if t <= 0.0 {
        (0.0, 0.0, 0.0)
    } else if t >= 1.0 {
        (1.0, 0.0, 0.0)
    } else {
        let t2 = t * t;
        (
            t2 * t * (10.0 - 15.0 * t + 6.0 * t2),
            30.0 * t2 * (1.0 - t) * (1.0 - t),
            60.0 * t * (1.0 - t) * (1.0 - 2.0 * t),
        )
    }
}
