//! Built-in Hamiltonian systems near a symplectic extremum.
//!
//! Conventions: phase points are column vectors `w` in `R^{2n}`, the
//! symplectic form is `Omega(u, v) = u^T Omega(w) v`, and the Hamiltonian
//! vector field solves `Omega(X_H, .) = dH`, i.e. `X_H = -Omega^{-1} grad H`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::field::FourierField;
use crate::linalg;
use crate::{Error, Result};

/// Base manifold `M`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaseKind {
    Point,
    FlatTorus,
}

/// `H(z) = z^T S0 z + quartic |z|^4 + cubic z_{n}^3` on `R^{2n}` with a
/// constant symplectic form. `M = {0}`.
#[derive(Clone, Debug, PartialEq)]
pub struct PointQuadratic {
    pub quadratic: DMatrix<f64>,
    pub quartic: f64,
    pub cubic: f64,
    pub omega: DMatrix<f64>,
}

/// Kinetic Hamiltonian `p^T g(q)^{-1} p (+ quartic (p^T g^{-1} p)^2)` on the
/// cotangent bundle of the flat torus `T^{d}`, `d = 2l = n`, with the twisted
/// form `sum dq_i ^ dp_i + pi^* omega`. `M` is the zero section.
#[derive(Clone, Debug, PartialEq)]
pub struct MagneticTorus {
    pub dim: usize,
    /// Upper-triangular entries `omega_ij`, `i < j`.
    pub magnetic: Vec<(usize, usize, FourierField)>,
    /// Row-major `d x d` symmetric metric; `None` is the identity.
    pub metric: Option<Vec<FourierField>>,
    pub quartic: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    PointQuadratic(PointQuadratic),
    MagneticTorus(MagneticTorus),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSystem {
    pub n: usize,
    pub l: usize,
    pub chart_radius: f64,
    pub model: Model,
}

impl ModelSystem {
    /// `H = a |z|^2` on `R^{2n}` with the standard form.
    pub fn harmonic_oscillator(n: usize, a: f64) -> Self {
        Self::point_quadratic(vec![a; 2 * n], 0.0, 0.0).expect("valid oscillator")
    }

    pub fn point_quadratic(hessian_diag: Vec<f64>, quartic: f64, cubic: f64) -> Result<Self> {
        let d = hessian_diag.len();
        if d == 0 || d % 2 != 0 {
            return Err(Error::Dimension(format!("point system needs an even dimension, got {d}")));
        }
        let quadratic = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(hessian_diag));
        let omega = linalg::standard_symplectic(d / 2);
        Self::point_with_form(quadratic, omega, quartic, cubic)
    }

    pub fn point_with_form(
        quadratic: DMatrix<f64>,
        omega: DMatrix<f64>,
        quartic: f64,
        cubic: f64,
    ) -> Result<Self> {
        let d = quadratic.nrows();
        if quadratic.ncols() != d || omega.shape() != (d, d) || d % 2 != 0 {
            return Err(Error::Dimension("point system matrices must be square of even size".into()));
        }
        let sys = Self {
            n: d / 2,
            l: 0,
            chart_radius: 1.0,
            model: Model::PointQuadratic(PointQuadratic { quadratic, quartic, cubic, omega }),
        };
        sys.check_form(&vec![0.0; d])?;
        Ok(sys)
    }

    /// Constant field `B dq_1 ^ dq_2` on `T^2` with `H = |p|^2`.
    pub fn constant_magnetic(b: f64) -> Self {
        Self::magnetic_torus(2, vec![(0, 1, FourierField::constant(b))], None, 0.0)
            .expect("valid torus")
    }

    /// `B(q) = b0 + amp cos(q_1)` on `T^2` with `H = |p|^2`.
    pub fn varying_magnetic(b0: f64, amp: f64) -> Self {
        Self::magnetic_torus(2, vec![(0, 1, FourierField::cosine(b0, amp, 0, 2))], None, 0.0)
            .expect("valid torus")
    }

    pub fn magnetic_torus(
        dim: usize,
        magnetic: Vec<(usize, usize, FourierField)>,
        metric: Option<Vec<FourierField>>,
        quartic: f64,
    ) -> Result<Self> {
        if dim == 0 || dim % 2 != 0 {
            return Err(Error::Dimension(format!(
                "magnetic torus needs an even base dimension, got {dim}"
            )));
        }
        for (i, j, f) in &magnetic {
            if i >= j || *j >= dim || !f.dimension_ok(dim) {
                return Err(Error::Config(format!("bad magnetic entry ({i}, {j})")));
            }
        }
        if let Some(g) = &metric {
            if g.len() != dim * dim || !g.iter().all(|f| f.dimension_ok(dim)) {
                return Err(Error::Config("metric table must have d*d entries".into()));
            }
            for i in 0..dim {
                for j in 0..i {
                    if g[i * dim + j] != g[j * dim + i] {
                        return Err(Error::Config("metric table must be symmetric".into()));
                    }
                }
            }
        }
        let sys = Self {
            n: dim,
            l: dim / 2,
            chart_radius: 2.0 * core::f64::consts::PI,
            model: Model::MagneticTorus(MagneticTorus { dim, magnetic, metric, quartic }),
        };
        let mut probe = vec![0.0; 2 * dim];
        sys.check_form(&probe)?;
        probe[0] = 1.0;
        sys.check_form(&probe)?;
        Ok(sys)
    }

    pub fn with_chart_radius(mut self, radius: f64) -> Self {
        self.chart_radius = radius;
        self
    }

    fn check_form(&self, w: &[f64]) -> Result<()> {
        let om = self.omega(w);
        if linalg::antisymmetry_residual(&om) > 1e-12 {
            return Err(Error::Config("symplectic form is not antisymmetric".into()));
        }
        if libm::fabs(om.determinant()) < 1e-10 {
            return Err(Error::Config("symplectic form is degenerate".into()));
        }
        Ok(())
    }

    pub fn phase_dim(&self) -> usize {
        2 * self.n
    }

    pub fn base_dim(&self) -> usize {
        2 * self.l
    }

    pub fn normal_dim(&self) -> usize {
        2 * (self.n - self.l)
    }

    pub fn base_kind(&self) -> BaseKind {
        match self.model {
            Model::PointQuadratic(_) => BaseKind::Point,
            Model::MagneticTorus(_) => BaseKind::FlatTorus,
        }
    }

    /// Embedding of a base point into phase space.
    pub fn embed(&self, m: &[f64]) -> Vec<f64> {
        let mut w = vec![0.0; self.phase_dim()];
        w[..m.len()].copy_from_slice(m);
        w
    }

    pub fn hamiltonian(&self, w: &[f64]) -> f64 {
        match &self.model {
            Model::PointQuadratic(p) => p.value(w),
            Model::MagneticTorus(t) => t.value(w),
        }
    }

    /// Writes `grad H(w)` into `grad` and returns `H(w)`.
    pub fn gradient(&self, w: &[f64], grad: &mut [f64]) -> f64 {
        match &self.model {
            Model::PointQuadratic(p) => p.value_gradient(w, grad),
            Model::MagneticTorus(t) => t.value_gradient(w, grad),
        }
    }

    pub fn omega(&self, w: &[f64]) -> DMatrix<f64> {
        match &self.model {
            Model::PointQuadratic(p) => p.omega.clone(),
            Model::MagneticTorus(t) => {
                let d = t.dim;
                let mut om = DMatrix::zeros(2 * d, 2 * d);
                for i in 0..d {
                    om[(i, d + i)] = 1.0;
                    om[(d + i, i)] = -1.0;
                }
                let wq = t.magnetic_matrix(&w[..d]);
                om.view_mut((0, 0), (d, d)).copy_from(&wq);
                om
            }
        }
    }

    /// `X_H(w) = -Omega(w)^{-1} grad H(w)`.
    pub fn vector_field(&self, w: &[f64], out: &mut [f64]) {
        let mut g = vec![0.0; self.phase_dim()];
        self.gradient(w, &mut g);
        match &self.model {
            Model::PointQuadratic(p) => {
                let inv = p.omega.clone().try_inverse().expect("checked at construction");
                linalg::mat_vec(&inv, &g, out);
                out.iter_mut().for_each(|v| *v = -*v);
            }
            Model::MagneticTorus(t) => {
                let d = t.dim;
                let wq = t.magnetic_matrix(&w[..d]);
                for i in 0..d {
                    out[i] = g[d + i];
                    let mut s = -g[i];
                    for j in 0..d {
                        s -= wq[(i, j)] * g[d + j];
                    }
                    out[d + i] = s;
                }
            }
        }
    }

    /// Riemannian metric on the base (identity for a point base of size 0).
    pub fn base_metric(&self, m: &[f64]) -> DMatrix<f64> {
        match &self.model {
            Model::PointQuadratic(_) => DMatrix::zeros(0, 0),
            Model::MagneticTorus(t) => t.metric_matrix(m),
        }
    }

    /// Whether every field entering `H` and `Omega` is independent of the base point.
    pub fn is_homogeneous(&self) -> bool {
        match &self.model {
            Model::PointQuadratic(_) => true,
            Model::MagneticTorus(t) => {
                t.magnetic.iter().all(|(_, _, f)| f.is_constant())
                    && t.metric.as_ref().is_none_or(|g| g.iter().all(|f| f.is_constant()))
            }
        }
    }

    /// Reduces a base point into the fundamental domain `[-pi, pi)^{2l}`.
    pub fn wrap_base(&self, m: &mut [f64]) {
        let tau = 2.0 * core::f64::consts::PI;
        for x in m.iter_mut() {
            *x -= tau * libm::floor((*x + core::f64::consts::PI) / tau);
        }
    }
}

impl PointQuadratic {
    fn value(&self, z: &[f64]) -> f64 {
        let d = z.len();
        let mut q = 0.0;
        for i in 0..d {
            let mut s = 0.0;
            for j in 0..d {
                s += self.quadratic[(i, j)] * z[j];
            }
            q += z[i] * s;
        }
        let r2 = linalg::dot(z, z);
        let y0 = z[d / 2];
        q + self.quartic * r2 * r2 + self.cubic * y0 * y0 * y0
    }

    fn value_gradient(&self, z: &[f64], grad: &mut [f64]) -> f64 {
        let d = z.len();
        let r2 = linalg::dot(z, z);
        for i in 0..d {
            let mut s = 0.0;
            for j in 0..d {
                s += (self.quadratic[(i, j)] + self.quadratic[(j, i)]) * z[j];
            }
            grad[i] = s + 4.0 * self.quartic * r2 * z[i];
        }
        let y0 = z[d / 2];
        grad[d / 2] += 3.0 * self.cubic * y0 * y0;
        self.value(z)
    }
}

impl MagneticTorus {
    pub fn magnetic_matrix(&self, q: &[f64]) -> DMatrix<f64> {
        let mut w = DMatrix::zeros(self.dim, self.dim);
        for (i, j, f) in &self.magnetic {
            let v = f.value(q);
            w[(*i, *j)] += v;
            w[(*j, *i)] -= v;
        }
        w
    }

    /// `d omega_ij / d q_k` stored as `out[k]`, each a `d x d` antisymmetric matrix.
    pub fn magnetic_derivatives(&self, q: &[f64]) -> Vec<DMatrix<f64>> {
        let d = self.dim;
        let mut out = vec![DMatrix::zeros(d, d); d];
        let mut g = vec![0.0; d];
        for (i, j, f) in &self.magnetic {
            f.value_gradient(q, &mut g);
            for k in 0..d {
                out[k][(*i, *j)] += g[k];
                out[k][(*j, *i)] -= g[k];
            }
        }
        out
    }

    pub fn magnetic_is_constant(&self) -> bool {
        self.magnetic.iter().all(|(_, _, f)| f.is_constant())
    }

    pub fn metric_matrix(&self, q: &[f64]) -> DMatrix<f64> {
        let d = self.dim;
        match &self.metric {
            None => DMatrix::identity(d, d),
            Some(g) => DMatrix::from_fn(d, d, |i, j| g[i * d + j].value(q)),
        }
    }

    fn value(&self, w: &[f64]) -> f64 {
        let d = self.dim;
        let (q, p) = w.split_at(d);
        let k = match &self.metric {
            None => linalg::dot(p, p),
            Some(_) => {
                let ginv = self.metric_matrix(q).try_inverse().expect("metric positive definite");
                let mut gp = vec![0.0; d];
                linalg::mat_vec(&ginv, p, &mut gp);
                linalg::dot(p, &gp)
            }
        };
        k + self.quartic * k * k
    }

    fn value_gradient(&self, w: &[f64], grad: &mut [f64]) -> f64 {
        let d = self.dim;
        let (q, p) = w.split_at(d);
        match &self.metric {
            None => {
                let k = linalg::dot(p, p);
                let c = 2.0 * (1.0 + 2.0 * self.quartic * k);
                for i in 0..d {
                    grad[i] = 0.0;
                    grad[d + i] = c * p[i];
                }
                k + self.quartic * k * k
            }
            Some(g) => {
                let ginv = self.metric_matrix(q).try_inverse().expect("metric positive definite");
                let mut gp = vec![0.0; d];
                linalg::mat_vec(&ginv, p, &mut gp);
                let k = linalg::dot(p, &gp);
                let c = 1.0 + 2.0 * self.quartic * k;
                let mut dg = vec![0.0; d];
                for kk in 0..d {
                    grad[kk] = 0.0;
                }
                for a in 0..d {
                    for b in 0..d {
                        g[a * d + b].value_gradient(q, &mut dg);
                        for kk in 0..d {
                            grad[kk] -= c * gp[a] * dg[kk] * gp[b];
                        }
                    }
                }
                for i in 0..d {
                    grad[d + i] = 2.0 * c * gp[i];
                }
                k + self.quartic * k * k
            }
        }
    }
}

/// Closed-form Larmor circle for `H = |p|^2`, `omega = B dq_1 ^ dq_2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LarmorReference {
    pub radius: f64,
    pub period: f64,
    pub speed: f64,
}

pub fn larmor_reference(b: f64, energy: f64) -> Result<LarmorReference> {
    if !(b > 0.0 && energy > 0.0) {
        return Err(Error::Config(format!("Larmor reference needs B, E > 0, got {b}, {energy}")));
    }
    let speed = 2.0 * libm::sqrt(energy);
    Ok(LarmorReference { radius: libm::sqrt(energy) / b, period: core::f64::consts::PI / b, speed })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(sys: &ModelSystem, w: &[f64]) {
        let mut g = vec![0.0; w.len()];
        sys.gradient(w, &mut g);
        for i in 0..w.len() {
            let h = 1e-6;
            let mut wp = w.to_vec();
            let mut wm = w.to_vec();
            wp[i] += h;
            wm[i] -= h;
            let fd = (sys.hamiltonian(&wp) - sys.hamiltonian(&wm)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-7 * (1.0 + g[i].abs()), "component {i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn gradients_match_differences() {
        fd_check(&ModelSystem::point_quadratic(vec![1.0, 2.0], 0.5, 0.3).unwrap(), &[0.3, -0.7]);
        fd_check(&ModelSystem::varying_magnetic(1.0, 0.3), &[0.4, 1.0, 0.2, -0.5]);
        let metric = vec![
            FourierField::cosine(1.5, 0.2, 1, 2),
            FourierField::constant(0.1),
            FourierField::constant(0.1),
            FourierField::constant(1.0),
        ];
        let sys = ModelSystem::magnetic_torus(2, vec![(0, 1, FourierField::constant(1.0))], Some(metric), 0.2)
            .unwrap();
        fd_check(&sys, &[0.4, 1.0, 0.2, -0.5]);
    }

    #[test]
    fn larmor_field_rotates_momentum() {
        let sys = ModelSystem::constant_magnetic(2.0);
        let mut x = [0.0; 4];
        sys.vector_field(&[0.0, 0.0, 1.0, 0.0], &mut x);
        // q' = 2p, p' = -2B J p with J = [[0,1],[-1,0]].
        assert_eq!(x, [2.0, 0.0, 0.0, 4.0]);
    }

    #[test]
    fn larmor_closed_forms() {
        let r = larmor_reference(1.0, 1.0).unwrap();
        assert_eq!((r.radius, r.period), (1.0, core::f64::consts::PI));
        let r = larmor_reference(2.0, 4.0).unwrap();
        assert_eq!((r.radius, r.period), (1.0, core::f64::consts::PI / 2.0));
        assert!(larmor_reference(0.0, 1.0).is_err());
    }

    #[test]
    fn wrap_into_fundamental_domain() {
        let sys = ModelSystem::constant_magnetic(1.0);
        let mut m = [7.0, -4.0];
        sys.wrap_base(&mut m);
        assert!((m[0] - (7.0 - 2.0 * core::f64::consts::PI)).abs() < 1e-15);
        assert!((m[1] - (-4.0 + 2.0 * core::f64::consts::PI)).abs() < 1e-15);
    }
}
