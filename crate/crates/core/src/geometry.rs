//! Symplectic frames, compatible structures, Darboux charts and normal
//! Hessians at points of the extremal submanifold `M`.
//!
//! Frame coordinates `zeta = (x, y)` use the adapted basis
//! `(e_1..e_h, J e_1..J e_h)` of each block: in them `Omega` is the standard
//! `[[0, I], [-I, 0]]` per block, `J = [[0, -I], [I, 0]]` and `g_J = I`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::DMatrix;

use crate::linalg;
use crate::system::{MagneticTorus, Model, ModelSystem};
use crate::{Error, Result};

/// Returns `J` with `J^2 = -I` and `Omega(., J .)` symmetric positive definite.
///
/// In `metric_seed`-orthonormal coordinates the map `A` with
/// `seed(A u, v) = Omega(u, v)` is antisymmetric and `J = A (A^T A)^{-1/2}`.
pub fn compatible_structure(omega: &DMatrix<f64>, metric_seed: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = omega.nrows();
    if omega.shape() != (d, d) || metric_seed.shape() != (d, d) || d % 2 != 0 {
        return Err(Error::Dimension(format!("compatible_structure on {d}x{d}")));
    }
    let l = linalg::sym_power(metric_seed, 0.5)?;
    let l_inv = linalg::sym_power(metric_seed, -0.5)?;
    let om = &l_inv * omega * &l_inv;
    let a = -om;
    let ata = a.transpose() * &a;
    let (vals, _) = linalg::sym_eigen(&ata);
    if vals.first().copied().unwrap_or(0.0) <= 1e-24 * vals.last().copied().unwrap_or(1.0).max(1e-300) {
        return Err(Error::Singular("symplectic form".into()));
    }
    let j = &a * linalg::sym_power(&ata, -0.5)?;
    Ok(&l_inv * j * &l)
}

/// Columns `(e_1..e_h, J e_1..J e_h)`, orthonormal for `g = omega J`, in the
/// coordinates of the subspace.
fn unitary_basis(omega: &DMatrix<f64>, j: &DMatrix<f64>) -> DMatrix<f64> {
    let d = omega.nrows();
    let h = d / 2;
    let g = omega * j;
    let g = (&g + g.transpose()) * 0.5;
    let ip = |u: &nalgebra::DVector<f64>, v: &nalgebra::DVector<f64>| (u.transpose() * &g * v)[(0, 0)];
    let mut out = DMatrix::zeros(d, d);
    let mut found: Vec<nalgebra::DVector<f64>> = Vec::new();
    let mut cand = 0;
    while found.len() < d && cand < d {
        let mut v = nalgebra::DVector::zeros(d);
        v[cand] = 1.0;
        cand += 1;
        for _ in 0..2 {
            for u in &found {
                let c = ip(u, &v);
                v -= u * c;
            }
        }
        let nv = libm::sqrt(ip(&v, &v).max(0.0));
        if nv < 1e-8 {
            continue;
        }
        v /= nv;
        let jv = j * &v;
        out.set_column(found.len() / 2, &v);
        out.set_column(h + found.len() / 2, &jv);
        found.push(v);
        found.push(jv);
    }
    out
}

/// Symplectic splitting `T_m W = T_m M + (T_m M)^Omega` at a base point.
#[derive(Clone, Debug)]
pub struct TangentFrame {
    pub m: Vec<f64>,
    /// `2n x 2l`, adapted basis of `T_m M`.
    pub tangent_basis: DMatrix<f64>,
    /// `2n x 2(n-l)`, adapted basis of the symplectic normal space.
    pub normal_basis: DMatrix<f64>,
    pub omega_m: DMatrix<f64>,
    pub j_m: DMatrix<f64>,
    pub g_m: DMatrix<f64>,
    /// `N^T Omega(m) N` on the adapted normal basis (the standard form).
    pub omega_n: DMatrix<f64>,
    /// `[tangent_basis | normal_basis]`: frame coordinates to ambient.
    pub basis: DMatrix<f64>,
    pub basis_inv: DMatrix<f64>,
}

impl TangentFrame {
    pub fn phase_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn tangent_dim(&self) -> usize {
        self.tangent_basis.ncols()
    }

    pub fn normal_dim(&self) -> usize {
        self.normal_basis.ncols()
    }

    /// Ambient vector of frame coordinates.
    pub fn to_ambient(&self, zeta: &[f64], out: &mut [f64]) {
        linalg::mat_vec(&self.basis, zeta, out);
    }

    /// Max `|Omega(u, v)|` over tangent `u`, normal `v`.
    pub fn orthogonality_residual(&self) -> f64 {
        (self.tangent_basis.transpose() * &self.omega_m * &self.normal_basis).abs().max()
    }

    /// Largest off-diagonal block entry of `(Omega, J, g)` in the combined basis.
    pub fn block_residual(&self) -> f64 {
        let t = self.tangent_dim();
        let p = &self.basis;
        let mut worst = 0.0f64;
        let om = p.transpose() * &self.omega_m * p;
        let gm = p.transpose() * &self.g_m * p;
        let jm = &self.basis_inv * &self.j_m * p;
        for mat in [om, gm, jm] {
            let d = mat.nrows();
            for i in 0..d {
                for k in 0..d {
                    if (i < t) != (k < t) {
                        worst = worst.max(libm::fabs(mat[(i, k)]));
                    }
                }
            }
        }
        worst
    }
}

/// Builds the frame at `m`: tangent vectors are the base coordinate
/// directions, the normal space is the solution set of `Omega(u, v) = 0`
/// against them, and each block carries a compatible `J`.
pub fn build_frame(system: &ModelSystem, m: &[f64]) -> Result<TangentFrame> {
    let d = system.phase_dim();
    let bl = system.base_dim();
    if m.len() != bl {
        return Err(Error::Dimension(format!("base point has {} coordinates, expected {bl}", m.len())));
    }
    let w = system.embed(m);
    let omega = system.omega(&w);
    let mut t_raw = DMatrix::zeros(d, bl);
    for i in 0..bl {
        t_raw[(i, i)] = 1.0;
    }
    let omega_t = t_raw.transpose() * &omega * &t_raw;
    if bl > 0 {
        let (sv_min, sv_max) = singular_range(&omega_t);
        if sv_min <= 1e-10 * sv_max.max(1.0) {
            return Err(Error::DegenerateSplitting {
                point: m.to_vec(),
                reason: format!("Omega restricted to T_mM is degenerate (smallest singular value {sv_min:e})"),
            });
        }
    }
    let n_raw = orthogonal_complement(&(omega.transpose() * &t_raw), d)?;
    if n_raw.ncols() != d - bl {
        return Err(Error::DegenerateSplitting {
            point: m.to_vec(),
            reason: format!("normal space has dimension {}, expected {}", n_raw.ncols(), d - bl),
        });
    }
    let omega_nraw = n_raw.transpose() * &omega * &n_raw;
    let j_n = compatible_structure(&omega_nraw, &(n_raw.transpose() * &n_raw))?;
    let normal_basis = &n_raw * unitary_basis(&omega_nraw, &j_n);
    let tangent_basis = if bl > 0 {
        let j_t = compatible_structure(&omega_t, &system.base_metric(m))?;
        &t_raw * unitary_basis(&omega_t, &j_t)
    } else {
        DMatrix::zeros(d, 0)
    };
    let mut basis = DMatrix::zeros(d, d);
    basis.view_mut((0, 0), (d, bl)).copy_from(&tangent_basis);
    basis.view_mut((0, bl), (d, d - bl)).copy_from(&normal_basis);
    let basis_inv = linalg::inverse(&basis, "frame basis")?;
    let mut j_frame = DMatrix::zeros(d, d);
    for (off, h) in [(0, bl / 2), (bl, (d - bl) / 2)] {
        for i in 0..h {
            j_frame[(off + h + i, off + i)] = 1.0;
            j_frame[(off + i, off + h + i)] = -1.0;
        }
    }
    let j_m = &basis * j_frame * &basis_inv;
    let g_m = basis_inv.transpose() * &basis_inv;
    let omega_n = normal_basis.transpose() * &omega * &normal_basis;
    Ok(TangentFrame {
        m: m.to_vec(),
        tangent_basis,
        normal_basis,
        omega_m: omega,
        j_m,
        g_m,
        omega_n,
        basis,
        basis_inv,
    })
}

fn singular_range(a: &DMatrix<f64>) -> (f64, f64) {
    let (vals, _) = linalg::sym_eigen(&(a.transpose() * a));
    (
        libm::sqrt(vals.first().copied().unwrap_or(0.0).max(0.0)),
        libm::sqrt(vals.last().copied().unwrap_or(0.0).max(0.0)),
    )
}

/// Orthonormal basis of the Euclidean orthogonal complement of the column
/// span of `a` in `R^d`.
fn orthogonal_complement(a: &DMatrix<f64>, d: usize) -> Result<DMatrix<f64>> {
    let mut span: Vec<nalgebra::DVector<f64>> = Vec::new();
    let push = |mut v: nalgebra::DVector<f64>, span: &mut Vec<nalgebra::DVector<f64>>| {
        let n0 = v.norm();
        for _ in 0..2 {
            for u in span.iter() {
                let c = u.dot(&v);
                v -= u * c;
            }
        }
        let nv = v.norm();
        if nv > 1e-10 * n0.max(1e-300) && nv > 1e-14 {
            span.push(v / nv);
            true
        } else {
            false
        }
    };
    for c in 0..a.ncols() {
        if !push(a.column(c).into_owned(), &mut span) {
            return Err(Error::DegenerateSplitting {
                point: Vec::new(),
                reason: "tangent image under Omega is rank deficient".into(),
            });
        }
    }
    let start = span.len();
    for i in 0..d {
        let mut e = nalgebra::DVector::zeros(d);
        e[i] = 1.0;
        push(e, &mut span);
    }
    let cols: Vec<_> = span[start..].to_vec();
    Ok(if cols.is_empty() { DMatrix::zeros(d, 0) } else { DMatrix::from_columns(&cols) })
}

#[derive(Clone, Debug)]
enum ChartKind {
    /// `z -> center + z`.
    Translation { center: Vec<f64> },
    /// Radial-gauge chart on the twisted cotangent bundle of the torus.
    Torus { field: MagneticTorus, shift: DMatrix<f64>, constant: bool, nodes: Vec<f64>, weights: Vec<f64> },
}

/// Chart `Phi_m` from a ball in `T_m W` (ambient coordinates) with
/// `Phi_m(0) = m`, `D_0 Phi_m = I` and `Phi_m^* Omega = Omega(m)`.
#[derive(Clone, Debug)]
pub struct DarbouxChart {
    pub m: Vec<f64>,
    pub chart_radius: f64,
    omega_m: DMatrix<f64>,
    kind: ChartKind,
}

/// Number of Gauss-Legendre nodes for the radial-gauge integrals.
const GAUSS_NODES: usize = 16;

pub fn darboux_chart(system: &ModelSystem, m: &[f64]) -> Result<DarbouxChart> {
    if m.len() != system.base_dim() {
        return Err(Error::Dimension(format!("base point has {} coordinates", m.len())));
    }
    let center = system.embed(m);
    let omega_m = system.omega(&center);
    let kind = match &system.model {
        Model::PointQuadratic(_) => ChartKind::Translation { center },
        Model::MagneticTorus(t) => {
            let wq = t.magnetic_matrix(m);
            let (nodes, weights) = linalg::gauss_legendre_unit(GAUSS_NODES);
            ChartKind::Torus {
                field: t.clone(),
                shift: wq * -0.5,
                constant: t.magnetic_is_constant(),
                nodes,
                weights,
            }
        }
    };
    Ok(DarbouxChart { m: m.to_vec(), chart_radius: system.chart_radius, omega_m, kind })
}

impl DarbouxChart {
    pub fn omega_m(&self) -> &DMatrix<f64> {
        &self.omega_m
    }

    /// Radial-gauge potential `A(m + delta)` and, if requested, its Jacobian
    /// `dA_j / dx_k` (row `j`, column `k`).
    fn potential(&self, delta: &[f64], a: &mut [f64], da: Option<&mut DMatrix<f64>>) {
        let ChartKind::Torus { field, shift, constant, nodes, weights } = &self.kind else {
            return;
        };
        let d = delta.len();
        if *constant {
            // Linear potential A = -omega delta / 2.
            linalg::mat_vec(shift, delta, a);
            if let Some(da) = da {
                da.copy_from(shift);
            }
            return;
        }
        a.iter_mut().for_each(|v| *v = 0.0);
        let mut da = da;
        if let Some(da) = da.as_deref_mut() {
            da.fill(0.0);
        }
        let mut x = vec![0.0; d];
        let mut grad = vec![0.0; d];
        for (s, w) in nodes.iter().zip(weights) {
            for i in 0..d {
                x[i] = self.m[i] + s * delta[i];
            }
            // Entry (i, j, v) stands for omega_ij = v, omega_ji = -v.
            for (i, j, f) in &field.magnetic {
                let (i, j) = (*i, *j);
                let v = if da.is_some() { f.value_gradient(&x, &mut grad) } else { f.value(&x) };
                a[j] += w * s * delta[i] * v;
                a[i] -= w * s * delta[j] * v;
                if let Some(da) = da.as_deref_mut() {
                    da[(j, i)] += w * s * v;
                    da[(i, j)] -= w * s * v;
                    for k in 0..d {
                        da[(j, k)] += w * s * s * delta[i] * grad[k];
                        da[(i, k)] -= w * s * s * delta[j] * grad[k];
                    }
                }
            }
        }
    }

    /// `Phi_m(z)`.
    pub fn map(&self, z: &[f64], out: &mut [f64]) {
        match &self.kind {
            ChartKind::Translation { center } => {
                for i in 0..z.len() {
                    out[i] = center[i] + z[i];
                }
            }
            ChartKind::Torus { shift, .. } => {
                let d = self.m.len();
                let (zq, zp) = z.split_at(d);
                let mut a = vec![0.0; d];
                self.potential(zq, &mut a, None);
                for i in 0..d {
                    out[i] = self.m[i] + zq[i];
                    let mut s = zp[i] + a[i];
                    for k in 0..d {
                        s -= shift[(i, k)] * zq[k];
                    }
                    out[d + i] = s;
                }
            }
        }
    }

    /// `Phi_m(z)` together with `D Phi_m(z)`.
    pub fn map_with_differential(&self, z: &[f64], out: &mut [f64]) -> DMatrix<f64> {
        let dim = z.len();
        match &self.kind {
            ChartKind::Translation { .. } => {
                self.map(z, out);
                DMatrix::identity(dim, dim)
            }
            ChartKind::Torus { shift, .. } => {
                let d = self.m.len();
                let (zq, zp) = z.split_at(d);
                let mut a = vec![0.0; d];
                let mut da = DMatrix::zeros(d, d);
                self.potential(zq, &mut a, Some(&mut da));
                for i in 0..d {
                    out[i] = self.m[i] + zq[i];
                    let mut s = zp[i] + a[i];
                    for k in 0..d {
                        s -= shift[(i, k)] * zq[k];
                    }
                    out[d + i] = s;
                }
                let mut jac = DMatrix::identity(dim, dim);
                jac.view_mut((d, 0), (d, d)).copy_from(&(da - shift));
                jac
            }
        }
    }

    /// `Phi_m^{-1}(w)` (on the universal cover for tori).
    pub fn inverse(&self, w: &[f64], out: &mut [f64]) {
        match &self.kind {
            ChartKind::Translation { center } => {
                for i in 0..w.len() {
                    out[i] = w[i] - center[i];
                }
            }
            ChartKind::Torus { shift, .. } => {
                let d = self.m.len();
                let zq: Vec<f64> = (0..d).map(|i| w[i] - self.m[i]).collect();
                let mut a = vec![0.0; d];
                self.potential(&zq, &mut a, None);
                for i in 0..d {
                    out[i] = zq[i];
                    let mut s = w[d + i] - a[i];
                    for k in 0..d {
                        s += shift[(i, k)] * zq[k];
                    }
                    out[d + i] = s;
                }
            }
        }
    }

    pub fn differential(&self, z: &[f64]) -> DMatrix<f64> {
        let mut out = vec![0.0; z.len()];
        self.map_with_differential(z, &mut out)
    }

    /// Whether `D Phi_m` is the identity everywhere (so gradients need no pullback).
    pub fn is_flat(&self) -> bool {
        match &self.kind {
            ChartKind::Translation { .. } => true,
            ChartKind::Torus { constant, .. } => *constant,
        }
    }

    /// `max |D Phi^T Omega(Phi(z)) D Phi - Omega(m)|`.
    pub fn pullback_residual(&self, system: &ModelSystem, z: &[f64]) -> f64 {
        let mut w = vec![0.0; z.len()];
        let jac = self.map_with_differential(z, &mut w);
        (jac.transpose() * system.omega(&w) * &jac - &self.omega_m).abs().max()
    }

    /// Checks the pullback residual on `samples` deterministic points of the
    /// ball of the given radius.
    pub fn check_symplectic(&self, system: &ModelSystem, radius: f64, samples: usize, tolerance: f64) -> Result<f64> {
        if radius > self.chart_radius {
            return Err(Error::ChartDomain { norm: radius, radius: self.chart_radius });
        }
        let mut worst = 0.0f64;
        for p in crate::sampling::halton_ball(samples, system.phase_dim()) {
            let z: Vec<f64> = p.iter().map(|v| v * radius).collect();
            worst = worst.max(self.pullback_residual(system, &z));
        }
        if worst > tolerance {
            return Err(Error::Symplecticity { residual: worst, tolerance, radius });
        }
        Ok(worst)
    }
}

/// System pulled back to frame coordinates at one base point:
/// `H~(zeta) = H(Phi_m(P zeta))`.
#[derive(Clone, Debug)]
pub struct LocalModel {
    pub system: ModelSystem,
    pub frame: TangentFrame,
    pub chart: DarbouxChart,
}

impl LocalModel {
    pub fn new(system: &ModelSystem, m: &[f64]) -> Result<Self> {
        Ok(Self { system: system.clone(), frame: build_frame(system, m)?, chart: darboux_chart(system, m)? })
    }

    pub fn m(&self) -> &[f64] {
        &self.frame.m
    }

    pub fn dim(&self) -> usize {
        self.frame.phase_dim()
    }

    /// Phase-space point `Phi_m(P zeta)`.
    pub fn phase_point(&self, zeta: &[f64], out: &mut [f64]) {
        let mut z = vec![0.0; zeta.len()];
        self.frame.to_ambient(zeta, &mut z);
        self.chart.map(&z, out);
    }

    /// Frame coordinates of a phase-space point: `P^{-1} Phi_m^{-1}(w)`.
    pub fn frame_coords(&self, w: &[f64], zeta: &mut [f64]) {
        let mut z = vec![0.0; w.len()];
        self.chart.inverse(w, &mut z);
        linalg::mat_vec(&self.frame.basis_inv, &z, zeta);
    }

    pub fn value(&self, zeta: &[f64]) -> f64 {
        let mut w = vec![0.0; zeta.len()];
        self.phase_point(zeta, &mut w);
        self.system.hamiltonian(&w)
    }

    /// Writes `grad H~(zeta)` and returns `H~(zeta)`.
    pub fn value_gradient(&self, zeta: &[f64], grad: &mut [f64]) -> f64 {
        let d = zeta.len();
        let mut z = vec![0.0; d];
        self.frame.to_ambient(zeta, &mut z);
        let mut w = vec![0.0; d];
        let mut gw = vec![0.0; d];
        if self.chart.is_flat() {
            self.chart.map(&z, &mut w);
            let v = self.system.gradient(&w, &mut gw);
            linalg::mat_t_vec(&self.frame.basis, &gw, grad);
            v
        } else {
            let jac = self.chart.map_with_differential(&z, &mut w);
            let v = self.system.gradient(&w, &mut gw);
            let mut gz = vec![0.0; d];
            linalg::mat_t_vec(&jac, &gw, &mut gz);
            linalg::mat_t_vec(&self.frame.basis, &gz, grad);
            v
        }
    }

    /// Ambient norm of `P zeta` checked against the chart radius.
    pub fn check_domain(&self, zeta: &[f64]) -> Result<()> {
        let mut z = vec![0.0; zeta.len()];
        self.frame.to_ambient(zeta, &mut z);
        let nz = linalg::norm(&z);
        if nz > self.chart.chart_radius {
            return Err(Error::ChartDomain { norm: nz, radius: self.chart.chart_radius });
        }
        Ok(())
    }

    /// Normal Hessian form `S` (`Q(y) = y^T S y`, so `S` is half the Hessian of
    /// `H~` in normal frame coordinates) by central differences of the gradient.
    pub fn normal_hessian(&self) -> Result<DMatrix<f64>> {
        let d = self.dim();
        let t = self.frame.tangent_dim();
        let k = d - t;
        let step = libm::cbrt(f64::EPSILON) * self.chart.chart_radius.min(1.0);
        let mut s = DMatrix::zeros(k, k);
        let mut zeta = vec![0.0; d];
        let mut gp = vec![0.0; d];
        let mut gm = vec![0.0; d];
        for j in 0..k {
            zeta[t + j] = step;
            self.value_gradient(&zeta, &mut gp);
            zeta[t + j] = -step;
            self.value_gradient(&zeta, &mut gm);
            zeta[t + j] = 0.0;
            for i in 0..k {
                s[(i, j)] = (gp[t + i] - gm[t + i]) / (4.0 * step);
            }
        }
        let s = (&s + s.transpose()) * 0.5;
        let (vals, _) = linalg::sym_eigen(&s);
        let min = vals.first().copied().unwrap_or(0.0);
        if min <= 0.0 {
            return Err(Error::NotPositiveDefinite { point: self.m().to_vec(), min_eigenvalue: min });
        }
        Ok(s)
    }
}

/// Normal Hessian of `system` at the base point `m`.
pub fn normal_hessian(system: &ModelSystem, m: &[f64]) -> Result<DMatrix<f64>> {
    LocalModel::new(system, m)?.normal_hessian()
}
