//! Truncated Fourier loops in `T_m W` with the `H^{1/2}` geometry.
//!
//! Coefficients live in frame coordinates, where `g_J(m)` is the identity
//! and `J` acts blockwise as `[[0, -I], [I, 0]]`. A loop is
//! `z(t) = sum_k exp(2 pi k J t) z_k`, which is
//! `z_0 + sum_{k>0} cos(2 pi k t)(z_k + z_-k) + sin(2 pi k t) J (z_k - z_-k)`.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use serde::{Deserialize, Serialize};

use crate::linalg;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FourierLoop {
    pub m: Vec<f64>,
    pub k_max: usize,
    /// Phase dimension `2n`.
    pub dim: usize,
    /// Tangent dimension `2l`.
    pub tangent_dim: usize,
    /// `(2K + 1) * dim` reals; mode `k` occupies `[(k + K) dim, (k + K + 1) dim)`.
    pub coeffs: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Part {
    Minus,
    Zero,
    Plus,
    Tangent,
    Normal,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LoopNorms {
    pub h_half: f64,
    pub l2: f64,
}

impl FourierLoop {
    pub fn zeros(m: &[f64], k_max: usize, dim: usize, tangent_dim: usize) -> Self {
        Self { m: m.to_vec(), k_max, dim, tangent_dim, coeffs: vec![0.0; (2 * k_max + 1) * dim] }
    }

    pub fn from_coeffs(m: &[f64], k_max: usize, dim: usize, tangent_dim: usize, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != (2 * k_max + 1) * dim || tangent_dim > dim || dim % 2 != 0 {
            return Err(Error::Dimension(alloc::format!(
                "loop with K = {k_max}, dim = {dim} needs {} coefficients, got {}",
                (2 * k_max + 1) * dim,
                coeffs.len()
            )));
        }
        let mut z = Self { m: m.to_vec(), k_max, dim, tangent_dim, coeffs };
        z.enforce_mean_constraint();
        Ok(z)
    }

    /// Zeroes the tangential part of the mean.
    pub fn enforce_mean_constraint(&mut self) {
        let o = self.k_max * self.dim;
        self.coeffs[o..o + self.tangent_dim].iter_mut().for_each(|v| *v = 0.0);
    }

    #[inline]
    pub fn offset(&self, k: i64) -> usize {
        (k + self.k_max as i64) as usize * self.dim
    }

    pub fn mode(&self, k: i64) -> &[f64] {
        let o = self.offset(k);
        &self.coeffs[o..o + self.dim]
    }

    pub fn mode_mut(&mut self, k: i64) -> &mut [f64] {
        let o = self.offset(k);
        &mut self.coeffs[o..o + self.dim]
    }

    pub fn modes(&self) -> impl Iterator<Item = (i64, &[f64])> {
        let k = self.k_max as i64;
        (-k..=k).zip(self.coeffs.chunks(self.dim))
    }

    /// Frame complex structure applied to one coefficient vector.
    pub fn apply_j(&self, u: &[f64], out: &mut [f64]) {
        linalg::apply_block_j(u, out, 0, self.tangent_dim / 2);
        linalg::apply_block_j(u, out, self.tangent_dim, (self.dim - self.tangent_dim) / 2);
    }

    pub fn same_space(&self, other: &Self) -> Result<()> {
        if self.m != other.m {
            return Err(Error::BaseMismatch { left: self.m.clone(), right: other.m.clone() });
        }
        if self.k_max != other.k_max || self.dim != other.dim || self.tangent_dim != other.tangent_dim {
            return Err(Error::Dimension("loops with different truncation or dimension".into()));
        }
        Ok(())
    }

    /// Coefficient-array comparison ignoring the base point.
    pub fn same_shape(&self, other: &Self) -> bool {
        self.k_max == other.k_max && self.dim == other.dim && self.tangent_dim == other.tangent_dim
    }

    pub fn scale(&mut self, s: f64) {
        self.coeffs.iter_mut().for_each(|v| *v *= s);
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut z = self.clone();
        z.scale(s);
        z
    }

    /// `self += alpha * other` on the coefficient arrays.
    pub fn axpy(&mut self, alpha: f64, other: &Self) {
        linalg::axpy(alpha, &other.coeffs, &mut self.coeffs);
        self.enforce_mean_constraint();
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut z = self.clone();
        z.axpy(1.0, other);
        z
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut z = self.clone();
        z.axpy(-1.0, other);
        z
    }

    pub fn with_base(&self, m: &[f64]) -> Self {
        let mut z = self.clone();
        z.m = m.to_vec();
        z
    }

    fn weight(k: i64) -> f64 {
        if k == 0 {
            1.0
        } else {
            2.0 * PI * k.unsigned_abs() as f64
        }
    }

    /// `<z, w>_{1/2} = g(z_0, w_0) + 2 pi sum |k| g(z_k, w_k)`, on coefficient
    /// arrays only (no base check).
    pub fn h_half_dot(&self, other: &Self) -> f64 {
        self.modes().zip(other.modes()).map(|((k, a), (_, b))| Self::weight(k) * linalg::dot(a, b)).sum()
    }

    pub fn h_half_sq(&self) -> f64 {
        self.h_half_dot(self)
    }

    pub fn h_half(&self) -> f64 {
        libm::sqrt(self.h_half_sq())
    }

    /// `g(z_0, z_0) + 2 pi sum_{k != 0} g(z_k, z_k)`.
    pub fn l2_sq(&self) -> f64 {
        self.modes()
            .map(|(k, a)| if k == 0 { 1.0 } else { 2.0 * PI } * linalg::dot(a, a))
            .sum()
    }

    /// `int_0^1 |z(t)|^2 dt`.
    pub fn time_l2_sq(&self) -> f64 {
        linalg::dot(&self.coeffs, &self.coeffs)
    }

    pub fn norms(&self) -> LoopNorms {
        LoopNorms { h_half: self.h_half(), l2: libm::sqrt(self.l2_sq()) }
    }

    /// `1/2 (|z+|^2 - |z-|^2)`, the quadratic part of the action.
    pub fn quadratic_action(&self) -> f64 {
        self.modes().map(|(k, a)| PI * k as f64 * linalg::dot(a, a)).sum()
    }

    pub fn project(&self, part: Part) -> Self {
        let mut z = self.clone();
        let t = self.tangent_dim;
        let d = self.dim;
        let kmax = self.k_max as i64;
        for (idx, k) in (-kmax..=kmax).enumerate() {
            let block = &mut z.coeffs[idx * d..(idx + 1) * d];
            match part {
                Part::Minus if k >= 0 => block.fill(0.0),
                Part::Zero if k != 0 => block.fill(0.0),
                Part::Plus if k <= 0 => block.fill(0.0),
                Part::Tangent => block[t..].fill(0.0),
                Part::Normal => block[..t].fill(0.0),
                _ => {}
            }
        }
        z
    }

    /// `z+ - z-` (the gradient of the quadratic action).
    pub fn plus_minus_minus(&self) -> Self {
        let mut z = self.clone();
        let d = self.dim;
        for (idx, block) in z.coeffs.chunks_mut(d).enumerate() {
            match idx.cmp(&self.k_max) {
                core::cmp::Ordering::Less => block.iter_mut().for_each(|v| *v = -*v),
                core::cmp::Ordering::Equal => block.fill(0.0),
                core::cmp::Ordering::Greater => {}
            }
        }
        z
    }

    /// Coefficients of `dz/dt`: mode `k` becomes `2 pi k J z_k`.
    pub fn derivative(&self) -> Self {
        let mut out = Self::zeros(&self.m, self.k_max, self.dim, self.tangent_dim);
        let mut tmp = vec![0.0; self.dim];
        for (k, a) in self.modes() {
            self.apply_j(a, &mut tmp);
            let f = 2.0 * PI * k as f64;
            out.mode_mut(k).iter_mut().zip(&tmp).for_each(|(o, v)| *o = f * v);
        }
        out
    }

    /// Largest `|z_k|` per `|k|`, for decay fits.
    pub fn mode_magnitudes(&self) -> Vec<f64> {
        (0..=self.k_max as i64)
            .map(|k| {
                let a = linalg::norm(self.mode(k));
                let b = linalg::norm(self.mode(-k));
                a.max(b)
            })
            .collect()
    }

    /// Time shift `z(t) -> z(t + s)`: mode `k` picks up `exp(2 pi k J s)`.
    pub fn shifted(&self, s: f64) -> Self {
        let mut out = self.clone();
        let mut tmp = vec![0.0; self.dim];
        for (k, a) in self.modes() {
            self.apply_j(a, &mut tmp);
            let (sn, cs) = libm::sincos(2.0 * PI * k as f64 * s);
            for (o, (x, jx)) in out.mode_mut(k).iter_mut().zip(a.iter().zip(&tmp)) {
                *o = cs * x + sn * jx;
            }
        }
        out
    }
}

/// `<z, w>_{1/2}` with base and truncation checks.
pub fn h_half_inner(z: &FourierLoop, w: &FourierLoop) -> Result<f64> {
    z.same_space(w)?;
    Ok(z.h_half_dot(w))
}

pub fn project(z: &FourierLoop, part: Part) -> FourierLoop {
    z.project(part)
}

/// The section `t -> exp(2 pi J t) v` with `v` the first normal basis vector;
/// its `H^{1/2}` norm squared is `2 pi` and its time-`L^2` norm is 1.
pub fn e_n_plus(m: &[f64], k_max: usize, dim: usize, tangent_dim: usize) -> FourierLoop {
    let mut z = FourierLoop::zeros(m, k_max, dim, tangent_dim);
    z.mode_mut(1)[tangent_dim] = 1.0;
    z
}

/// Uniform time grid with cached trigonometric tables.
#[derive(Clone, Debug)]
pub struct LoopGrid {
    pub k_max: usize,
    pub n_t: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl LoopGrid {
    pub fn new(k_max: usize, n_t: usize) -> Result<Self> {
        if k_max == 0 {
            return Err(Error::Config("truncation K must be at least 1".into()));
        }
        if n_t < 2 * (2 * k_max + 1) {
            return Err(Error::Config(alloc::format!(
                "time grid of {n_t} points undersamples K = {k_max}; need at least {}",
                2 * (2 * k_max + 1)
            )));
        }
        let mut cos = vec![0.0; n_t * k_max];
        let mut sin = vec![0.0; n_t * k_max];
        for j in 0..n_t {
            for k in 1..=k_max {
                // Reduce the phase exactly before evaluating.
                let phase = ((j * k) % n_t) as f64 / n_t as f64;
                let (s, c) = libm::sincos(2.0 * PI * phase);
                cos[j * k_max + k - 1] = c;
                sin[j * k_max + k - 1] = s;
            }
        }
        Ok(Self { k_max, n_t, cos, sin })
    }

    /// Grid with `oversample * (2K + 1)` points.
    pub fn with_oversample(k_max: usize, oversample: usize) -> Result<Self> {
        Self::new(k_max, oversample * (2 * k_max + 1))
    }

    pub fn time(&self, j: usize) -> f64 {
        j as f64 / self.n_t as f64
    }

    /// Samples `z(t_j)` as one flat array of `n_t * dim` reals.
    pub fn synthesize(&self, z: &FourierLoop) -> Result<Vec<f64>> {
        self.check(z)?;
        let d = z.dim;
        let mut out = vec![0.0; self.n_t * d];
        let mut a = vec![0.0; d * self.k_max];
        let mut b = vec![0.0; d * self.k_max];
        let mut diff = vec![0.0; d];
        let mut jd = vec![0.0; d];
        for k in 1..=self.k_max as i64 {
            let (p, q) = (z.mode(k), z.mode(-k));
            let ku = k as usize - 1;
            for c in 0..d {
                a[ku * d + c] = p[c] + q[c];
                diff[c] = p[c] - q[c];
            }
            z.apply_j(&diff, &mut jd);
            b[ku * d..(ku + 1) * d].copy_from_slice(&jd);
        }
        let z0 = z.mode(0);
        for j in 0..self.n_t {
            let row = &mut out[j * d..(j + 1) * d];
            row.copy_from_slice(z0);
            let cs = &self.cos[j * self.k_max..(j + 1) * self.k_max];
            let sn = &self.sin[j * self.k_max..(j + 1) * self.k_max];
            for ku in 0..self.k_max {
                let (c, s) = (cs[ku], sn[ku]);
                let ak = &a[ku * d..(ku + 1) * d];
                let bk = &b[ku * d..(ku + 1) * d];
                for i in 0..d {
                    row[i] += c * ak[i] + s * bk[i];
                }
            }
        }
        Ok(out)
    }

    /// Discrete Fourier fit of `n_t` samples (flat, `dim` per sample) back to
    /// a loop at base `m`.
    pub fn fit(&self, m: &[f64], dim: usize, tangent_dim: usize, samples: &[f64]) -> Result<FourierLoop> {
        let mut z = self.fit_unconstrained(m, dim, tangent_dim, samples)?;
        z.enforce_mean_constraint();
        Ok(z)
    }

    /// As [`LoopGrid::fit`] but keeps the tangential mean.
    pub fn fit_unconstrained(&self, m: &[f64], dim: usize, tangent_dim: usize, samples: &[f64]) -> Result<FourierLoop> {
        if samples.len() != self.n_t * dim {
            return Err(Error::Dimension(alloc::format!(
                "fit expects {} samples of dimension {dim}",
                self.n_t
            )));
        }
        let mut z = FourierLoop::zeros(m, self.k_max, dim, tangent_dim);
        let inv = 1.0 / self.n_t as f64;
        let mut a = vec![0.0; dim * self.k_max];
        let mut b = vec![0.0; dim * self.k_max];
        let mut z0 = vec![0.0; dim];
        for j in 0..self.n_t {
            let row = &samples[j * dim..(j + 1) * dim];
            linalg::axpy(inv, row, &mut z0);
            let cs = &self.cos[j * self.k_max..(j + 1) * self.k_max];
            let sn = &self.sin[j * self.k_max..(j + 1) * self.k_max];
            for ku in 0..self.k_max {
                let (c, s) = (2.0 * inv * cs[ku], 2.0 * inv * sn[ku]);
                let ak = &mut a[ku * dim..(ku + 1) * dim];
                for i in 0..dim {
                    ak[i] += c * row[i];
                }
                let bk = &mut b[ku * dim..(ku + 1) * dim];
                for i in 0..dim {
                    bk[i] += s * row[i];
                }
            }
        }
        z.mode_mut(0).copy_from_slice(&z0);
        let mut jb = vec![0.0; dim];
        for k in 1..=self.k_max as i64 {
            let ku = k as usize - 1;
            z.apply_j(&b[ku * dim..(ku + 1) * dim], &mut jb);
            let ak = &a[ku * dim..(ku + 1) * dim];
            for i in 0..dim {
                z.mode_mut(k)[i] = 0.5 * (ak[i] - jb[i]);
                z.mode_mut(-k)[i] = 0.5 * (ak[i] + jb[i]);
            }
        }
        Ok(z)
    }

    fn check(&self, z: &FourierLoop) -> Result<()> {
        if z.k_max != self.k_max {
            return Err(Error::Dimension(alloc::format!(
                "loop truncation {} differs from grid truncation {}",
                z.k_max,
                self.k_max
            )));
        }
        Ok(())
    }
}
