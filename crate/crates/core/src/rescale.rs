//! Fibre dilation, the rescaled field `X_eps`, its linear limit `X_0` and
//! symplectic eigenvalues of the normal Hessian.
//!
//! In frame coordinates `zeta = (x, y)` the form is standard, the dilation is
//! `(x, y) -> (x, eps y)`, and the rescaled Hamiltonian `eps^-2 H~(x, eps y)`
//! with the rescaled form gives
//! `X_eps = (J0 d_x H~(x, eps y), eps^-1 J0 d_y H~(x, eps y))`,
//! `J0 = [[0, I], [-I, 0]]`. The limit is `X_0 = (0, J0 2S y)`.

use alloc::vec;
use alloc::vec::Vec;
use nalgebra::DMatrix;

use crate::geometry::LocalModel;
use crate::linalg;
use crate::system::ModelSystem;
use crate::{Error, Result};

/// `X_eps` at one base point.
#[derive(Clone, Debug)]
pub struct RescaledField {
    pub epsilon: f64,
    pub local: LocalModel,
}

pub fn rescaled_field(system: &ModelSystem, m: &[f64], epsilon: f64) -> Result<RescaledField> {
    if !(epsilon > 0.0) {
        return Err(Error::Config(alloc::format!("epsilon must be positive, got {epsilon}")));
    }
    Ok(RescaledField { epsilon, local: LocalModel::new(system, m)? })
}

impl RescaledField {
    /// Evaluates `X_eps(zeta)`; fails if the dilated point leaves the chart.
    pub fn evaluate(&self, zeta: &[f64], out: &mut [f64]) -> Result<()> {
        let d = zeta.len();
        let t = self.local.frame.tangent_dim();
        let mut dilated = zeta.to_vec();
        dilated[t..].iter_mut().for_each(|v| *v *= self.epsilon);
        self.local.check_domain(&dilated)?;
        let mut g = vec![0.0; d];
        self.local.value_gradient(&dilated, &mut g);
        let inv = 1.0 / self.epsilon;
        g[t..].iter_mut().for_each(|v| *v *= inv);
        linalg::apply_block_j(&g, out, 0, t / 2);
        linalg::apply_block_j(&g, out, t, (d - t) / 2);
        // apply_block_j is the frame J = -J0; X uses J0.
        out.iter_mut().for_each(|v| *v = -*v);
        Ok(())
    }
}

/// Fibrewise linear field `X_0 = (0, L y)`.
#[derive(Clone, Debug)]
pub struct LimitField {
    pub m: Vec<f64>,
    /// `L = -(Omega^N)^{-1} 2S` acting on normal frame coordinates.
    pub matrix: DMatrix<f64>,
    pub tangent_dim: usize,
}

impl LimitField {
    pub fn evaluate(&self, zeta: &[f64], out: &mut [f64]) {
        let t = self.tangent_dim;
        out[..t].iter_mut().for_each(|v| *v = 0.0);
        linalg::mat_vec(&self.matrix, &zeta[t..], &mut out[t..]);
    }

    /// Largest `|Re lambda|` over the eigenvalues of `L`.
    pub fn max_real_part(&self) -> f64 {
        self.matrix
            .clone()
            .complex_eigenvalues()
            .iter()
            .fold(0.0, |acc, c| acc.max(libm::fabs(c.re)))
    }
}

pub fn limit_field(system: &ModelSystem, m: &[f64]) -> Result<LimitField> {
    let local = LocalModel::new(system, m)?;
    limit_field_of(&local)
}

pub fn limit_field_of(local: &LocalModel) -> Result<LimitField> {
    let s = local.normal_hessian()?;
    let om_inv = linalg::inverse(&local.frame.omega_n, "normal symplectic form")?;
    Ok(LimitField {
        m: local.m().to_vec(),
        matrix: -(om_inv * s * 2.0),
        tangent_dim: local.frame.tangent_dim(),
    })
}

/// Symplectic eigenvalues `a_1 <= ... <= a_{n-l}` at one base point.
#[derive(Clone, Debug, PartialEq)]
pub struct SymplecticSpectrum {
    pub m: Vec<f64>,
    pub values: Vec<f64>,
}

/// Half-moduli of the eigenvalues of `omega_n^{-1} 2S`.
///
/// `omega_n^{-1} 2S` is similar to the antisymmetric matrix
/// `M = 2 S^{1/2} omega_n^{-1} S^{1/2}`, whose eigenvalues are `+-i sigma`
/// with `sigma` the singular values of `M`; these come from the symmetric
/// eigenproblem of `M^T M`, where each appears twice.
pub fn symplectic_eigenvalues(omega_n: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<Vec<f64>> {
    let k = s.nrows();
    if omega_n.shape() != (k, k) || s.ncols() != k || k % 2 != 0 {
        return Err(Error::Dimension(alloc::format!(
            "symplectic_eigenvalues: form {:?}, Hessian {:?}",
            omega_n.shape(),
            s.shape()
        )));
    }
    let (vals, _) = linalg::sym_eigen(s);
    let min = vals.first().copied().unwrap_or(0.0);
    if min <= 0.0 {
        return Err(Error::NotPositiveDefinite { point: Vec::new(), min_eigenvalue: min });
    }
    let root = linalg::sym_power(s, 0.5)?;
    let om_inv = linalg::inverse(omega_n, "normal symplectic form")?;
    let mm = &root * om_inv * &root * 2.0;
    let (sq, _) = linalg::sym_eigen(&(mm.transpose() * &mm));
    Ok(sq
        .chunks(2)
        .map(|pair| 0.25 * (libm::sqrt(pair[0].max(0.0)) + libm::sqrt(pair[1].max(0.0))))
        .collect())
}

pub fn spectrum(system: &ModelSystem, m: &[f64]) -> Result<SymplecticSpectrum> {
    let local = LocalModel::new(system, m)?;
    spectrum_of(&local)
}

pub fn spectrum_of(local: &LocalModel) -> Result<SymplecticSpectrum> {
    let s = local.normal_hessian()?;
    let mut values = symplectic_eigenvalues(&local.frame.omega_n, &s)?;
    values.sort_by(f64::total_cmp);
    Ok(SymplecticSpectrum { m: local.m().to_vec(), values })
}

/// Number of deterministic sample points used by [`convergence_probe`].
pub const PROBE_SAMPLES: usize = 256;

/// For each `eps`, the sup over a fixed low-discrepancy sample of the unit
/// normal ball (at `x = 0`) of `|X_eps - X_0|` in the `g_J(m)` norm.
pub fn convergence_probe(system: &ModelSystem, m: &[f64], epsilons: &[f64]) -> Result<Vec<f64>> {
    let local = LocalModel::new(system, m)?;
    let limit = limit_field_of(&local)?;
    let t = local.frame.tangent_dim();
    let d = local.dim();
    let samples = crate::sampling::halton_ball(PROBE_SAMPLES, d - t);
    let mut out = Vec::with_capacity(epsilons.len());
    let mut xe = vec![0.0; d];
    let mut x0 = vec![0.0; d];
    for &eps in epsilons {
        let field = RescaledField { epsilon: eps, local: local.clone() };
        let mut worst = 0.0f64;
        for y in &samples {
            let mut zeta = vec![0.0; d];
            zeta[t..].copy_from_slice(y);
            field.evaluate(&zeta, &mut xe)?;
            limit.evaluate(&zeta, &mut x0);
            let diff: Vec<f64> = xe.iter().zip(&x0).map(|(a, b)| a - b).collect();
            worst = worst.max(linalg::norm(&diff));
        }
        out.push(worst);
    }
    Ok(out)
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| libm::log(*v)).collect();
    let ly: Vec<f64> = y.iter().map(|v| libm::log(*v)).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (a, b) in lx.iter().zip(&ly) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
    }
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling;
    use proptest::prelude::*;

    fn brute_force(omega_n: &DMatrix<f64>, s: &DMatrix<f64>) -> Vec<f64> {
        let a = omega_n.clone().try_inverse().unwrap() * s * 2.0;
        let mut mods: Vec<f64> = a.complex_eigenvalues().iter().map(|c| 0.5 * libm::hypot(c.re, c.im)).collect();
        mods.sort_by(f64::total_cmp);
        mods.chunks(2).map(|p| 0.5 * (p[0] + p[1])).collect()
    }

    #[test]
    fn unit_form_gives_a_one() {
        let a = symplectic_eigenvalues(&linalg::standard_symplectic(1), &DMatrix::identity(2, 2)).unwrap();
        assert!((a[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn anisotropic_form() {
        let s = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 4.0]));
        let a = symplectic_eigenvalues(&linalg::standard_symplectic(1), &s).unwrap();
        // Characteristic polynomial of Omega^{-1} 2S: lambda^2 + 4 det S = 0, so lambda = +-4i.
        assert!((a[0] - 2.0).abs() < 1e-13);
        assert!((a[0] - brute_force(&linalg::standard_symplectic(1), &s)[0]).abs() < 1e-12);
    }

    #[test]
    fn isotropic_four_dimensional() {
        let a = symplectic_eigenvalues(&linalg::standard_symplectic(2), &DMatrix::identity(4, 4)).unwrap();
        assert_eq!(a.len(), 2);
        assert!((a[0] - 1.0).abs() < 1e-14 && (a[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn rejects_indefinite() {
        let s = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, -1.0]));
        assert!(symplectic_eigenvalues(&linalg::standard_symplectic(1), &s).is_err());
    }

    fn random_spd(entries: &[f64], k: usize) -> DMatrix<f64> {
        let b = DMatrix::from_column_slice(k, k, entries);
        &b * b.transpose() + DMatrix::<f64>::identity(k, k) * 0.1
    }

    proptest! {
        #[test]
        fn matches_brute_force(entries in proptest::collection::vec(-1.0f64..1.0, 16)) {
            let s = random_spd(&entries, 4);
            let om = linalg::standard_symplectic(2);
            let a = symplectic_eigenvalues(&om, &s).unwrap();
            let b = brute_force(&om, &s);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-9 * y.max(1.0));
            }
        }
    }

    #[test]
    fn limit_field_oscillator() {
        let sys = ModelSystem::harmonic_oscillator(1, 1.0);
        let l = limit_field(&sys, &[]).unwrap();
        // Hand solve: L = J0 2I, eigenvalues +-2i, period pi.
        let expect = linalg::standard_symplectic(1) * 2.0;
        assert!((&l.matrix - expect).abs().max() < 1e-8);
        assert!(l.max_real_part() < 1e-10);
        let ev = l.matrix.complex_eigenvalues();
        assert!(ev.iter().all(|c| (c.im.abs() - 2.0).abs() < 1e-8));
        let l3 = limit_field(&ModelSystem::harmonic_oscillator(1, 3.0), &[]).unwrap();
        let ev3 = l3.matrix.complex_eigenvalues();
        assert!(ev3.iter().all(|c| (c.im.abs() - 6.0).abs() < 1e-7));
    }

    #[test]
    fn limit_field_anisotropic() {
        let sys = ModelSystem::point_quadratic(vec![1.0, 4.0], 0.0, 0.0).unwrap();
        let l = limit_field(&sys, &[]).unwrap();
        let ev = l.matrix.complex_eigenvalues();
        assert!(ev.iter().all(|c| (c.im.abs() - 4.0).abs() < 1e-7 && c.re.abs() < 1e-10));
        let a = spectrum(&sys, &[]).unwrap();
        assert!((a.values[0] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn torus_spectrum_tracks_field() {
        let sys = ModelSystem::varying_magnetic(1.0, 0.3);
        for x in [0.0, 1.0, 2.5] {
            let a = spectrum(&sys, &[x, 0.4]).unwrap();
            assert!((a.values[0] - (1.0 + 0.3 * libm::cos(x))).abs() < 1e-8);
        }
    }

    #[test]
    fn quadratic_field_is_scale_invariant() {
        let sys = ModelSystem::harmonic_oscillator(2, 1.0);
        let mut prev: Option<Vec<f64>> = None;
        for eps in [0.3, 0.1, 0.01] {
            let f = rescaled_field(&sys, &[], eps).unwrap();
            let mut out = vec![0.0; 4];
            f.evaluate(&[0.2, -0.4, 0.1, 0.7], &mut out).unwrap();
            if let Some(p) = &prev {
                for (a, b) in p.iter().zip(&out) {
                    assert!((a - b).abs() < 1e-15);
                }
            }
            prev = Some(out);
        }
        let dev = convergence_probe(&sys, &[], &[0.2, 0.1, 0.05]).unwrap();
        assert!(dev.iter().all(|d| *d < 1e-12));
    }

    #[test]
    fn quartic_deviation_bounded_by_eps_squared() {
        let sys = ModelSystem::point_quadratic(vec![1.0, 1.0], 1.0, 0.0).unwrap();
        let l = limit_field(&sys, &[]).unwrap();
        for eps in [0.2, 0.1] {
            let f = rescaled_field(&sys, &[], eps).unwrap();
            for y in sampling::halton_ball(100, 2) {
                let mut xe = vec![0.0; 2];
                let mut x0 = vec![0.0; 2];
                f.evaluate(&y, &mut xe).unwrap();
                l.evaluate(&y, &mut x0);
                let diff = ((xe[0] - x0[0]).powi(2) + (xe[1] - x0[1]).powi(2)).sqrt();
                // Quartic contributes eps^2 4 |y|^2 y, so C = 4 on the unit ball.
                assert!(diff <= 4.0 * eps * eps * (1.0 + 1e-9));
            }
        }
    }

    #[test]
    fn cubic_deviation_is_linear() {
        let sys = ModelSystem::point_quadratic(vec![1.0, 1.0], 0.0, 0.5).unwrap();
        let eps = [0.2, 0.1, 0.05, 0.025];
        let dev = convergence_probe(&sys, &[], &eps).unwrap();
        let slope = log_log_slope(&eps, &dev);
        assert!((0.9..=1.1).contains(&slope), "slope {slope}");
    }

    #[test]
    fn varying_torus_deviation_decreases() {
        let sys = ModelSystem::varying_magnetic(1.0, 0.3);
        let eps = [0.2, 0.1, 0.05, 0.025];
        let dev = convergence_probe(&sys, &[0.5, 0.0], &eps).unwrap();
        for w in dev.windows(2) {
            let ratio = w[1] / w[0];
            assert!((ratio - 0.5).abs() < 0.5 * 0.15, "ratio {ratio}");
        }
        assert!(dev[3] < dev[0] / 4.0);
    }

    #[test]
    fn probe_reports_chart_escape() {
        let sys = ModelSystem::harmonic_oscillator(1, 1.0).with_chart_radius(0.05);
        assert!(matches!(convergence_probe(&sys, &[], &[0.2]), Err(Error::ChartDomain { .. })));
    }
}
