//! The modified Hamiltonian `h_m` and the action functional
//! `F_m(z) = 1/2 (|z+|^2 - |z-|^2) - int h_m(z(t)) dt` with its gradients.
//!
//! Levels are parametrised by `rho`: `H~ = eps^2 + rho eps^2 / 4`. Inside the
//! chart region `rho` comes from `H~` itself; away from `T_m M` (large `|x|`)
//! it comes from the normal quadratic form `Q(y) = y^T S y`, blended over a
//! collar. Then `h_m = f(rho)` for `|y| < r` and `h_m = g(|y|)` beyond.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use nalgebra::DMatrix;

use crate::geometry::LocalModel;
use crate::linalg::{self, smoothstep};
use crate::loops::{FourierLoop, LoopGrid};
use crate::rescale;
use crate::sampling;
use crate::system::{BaseKind, ModelSystem};
use crate::{Error, Result};

/// L^2 constant of the reference section `e_N^+` (its time-L^2 norm is 1).
pub const SECTION_CONSTANT: f64 = 1.0;

/// Tunable knobs of the profile construction.
#[derive(Clone, Debug, PartialEq)]
pub struct ProfileSettings {
    pub q: f64,
    pub r_factor: f64,
    pub b_factor: f64,
    /// Collar width as a fraction of `gamma0`.
    pub collar_width: f64,
    /// Base samples per torus axis used for the global `gamma`.
    pub base_grid: usize,
    /// Directions in the normal fibre scanned for the outer level set.
    pub ray_count: usize,
}

impl Default for ProfileSettings {
    fn default() -> Self {
        Self { q: 3.0, r_factor: 1.5, b_factor: 0.75, collar_width: 0.1, base_grid: 4, ray_count: 48 }
    }
}

/// Checks `q` against the even-integer rule and the lower bound
/// `q > max(2l / (n - l), 2 / c)`.
pub fn check_q(q: f64, n: usize, l: usize) -> Result<()> {
    if !q.is_finite() {
        return Err(Error::Config(format!("q = {q} is not finite")));
    }
    if libm::fmod(q, 2.0) == 0.0 {
        return Err(Error::EvenQ { q });
    }
    if n <= l {
        return Err(Error::Dimension(format!("l = {l} leaves no normal directions (n = {n})")));
    }
    let bound = (2.0 * l as f64 / (n - l) as f64).max(2.0 / SECTION_CONSTANT);
    if q <= bound {
        return Err(Error::Config(format!("q = {q} must exceed max(2l/(n-l), 2/c) = {bound}")));
    }
    Ok(())
}

/// Cutoff profiles `f`, `g` and the parameters `(eps, gamma, r, b, q)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CutoffProfile {
    pub epsilon: f64,
    pub q: f64,
    pub gamma: f64,
    pub r: f64,
    pub b: f64,
    /// Radius from which `g(s) = (q/2) pi s^2`.
    pub s_quad: f64,
    /// `s_quad - r`.
    pub blend_len: f64,
    /// `eps sqrt(1.25 / a_min)`: outer level radius of the pure quadratic form.
    pub gamma0: f64,
    /// Tangential radius where the quadratic-form extension takes over.
    pub r_u: f64,
    pub collar: f64,
    pub a_min: f64,
    pub a_max: f64,
}

impl CutoffProfile {
    /// Assembles a profile from `gamma` and the factors; checks the windows.
    pub fn from_gamma(epsilon: f64, q: f64, gamma: f64, gamma0: f64, a: (f64, f64), settings: &ProfileSettings) -> Result<Self> {
        let p = Self::assemble(epsilon, q, gamma, gamma0, a, settings);
        let report = p.window_report();
        if let Some(v) = report.violations.first() {
            return Err(Error::Inequality(v.clone()));
        }
        Ok(p)
    }

    /// Same as [`CutoffProfile::from_gamma`] without the window checks.
    pub fn assemble(epsilon: f64, q: f64, gamma: f64, gamma0: f64, a: (f64, f64), settings: &ProfileSettings) -> Self {
        let r = settings.r_factor * gamma;
        let b = settings.b_factor * q * PI * r * r;
        let d = (b - 0.5 * q * PI * r * r) / (q * PI);
        let blend_len = 3.5 * (-0.5 * r + libm::sqrt(0.25 * r * r + 4.0 * d / 7.0));
        Self {
            epsilon,
            q,
            gamma,
            r,
            b,
            s_quad: r + blend_len,
            blend_len,
            gamma0,
            r_u: 3.0 * gamma0,
            collar: settings.collar_width * gamma0,
            a_min: a.0,
            a_max: a.1,
        }
    }

    pub fn window_report(&self) -> WindowReport {
        let mut violations = Vec::new();
        if !(self.gamma < self.r && self.r < 2.0 * self.gamma) {
            violations.push(format!("gamma < r < 2 gamma fails: gamma = {}, r = {}", self.gamma, self.r));
        }
        let lo = 0.5 * self.q * PI * self.r * self.r;
        let hi = self.q * PI * self.r * self.r;
        if !(lo < self.b && self.b < hi) {
            violations.push(format!("(q/2) pi r^2 < b < q pi r^2 fails: b = {}, window ({lo}, {hi})", self.b));
        }
        if !(self.blend_len > 0.0 && self.blend_len.is_finite()) {
            violations.push(format!("no admissible quadratic switch radius (blend length {})", self.blend_len));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            violations.push(format!("epsilon = {} outside (0, 1)", self.epsilon));
        }
        WindowReport { violations }
    }

    /// `f(rho)` and `f'(rho)`.
    #[inline]
    pub fn f(&self, rho: f64) -> (f64, f64) {
        let e = self.epsilon;
        let (v, dv, _) = smoothstep((rho + e) / (2.0 * e));
        (self.b * v, self.b * dv / (2.0 * e))
    }

    /// `g(s)` and `g'(s)`.
    #[inline]
    pub fn g(&self, s: f64) -> (f64, f64) {
        let qp = self.q * PI;
        if s <= self.r {
            (self.b, 0.0)
        } else if s >= self.s_quad {
            (0.5 * qp * s * s, qp * s)
        } else {
            let l = self.blend_len;
            let t = (s - self.r) / l;
            let t4 = t * t * t * t;
            let p1 = t4 * (2.5 - 3.0 * t + t * t);
            let p2 = t4 * t * (2.0 - 2.5 * t + 6.0 / 7.0 * t * t);
            let (phi, _, _) = smoothstep(t);
            (self.b + qp * l * (self.r * p1 + l * p2), qp * phi * s)
        }
    }

    /// `(q/2) pi s^2`.
    pub fn quadratic_tail(&self, s: f64) -> f64 {
        0.5 * self.q * PI * s * s
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct WindowReport {
    pub violations: Vec<String>,
}

impl WindowReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Geometry shared by the level parametrisation: the local model, its
/// normal Hessian and the collar placement.
#[derive(Clone, Debug)]
struct LevelGeometry {
    local: LocalModel,
    s: DMatrix<f64>,
    t: usize,
    eps2: f64,
    r_u: f64,
    collar: f64,
}

impl LevelGeometry {
    fn quad(&self, y: &[f64], sy: &mut [f64]) -> f64 {
        linalg::mat_vec(&self.s, y, sy);
        linalg::dot(y, sy)
    }

    /// Collar weight `chi(|x|)` and `d chi / d|x|`.
    fn chi(&self, x: &[f64]) -> (f64, f64, f64) {
        if self.t == 0 {
            return (0.0, 0.0, 0.0);
        }
        let nx = linalg::norm(x);
        let (v, d, _) = smoothstep((nx - self.r_u) / self.collar);
        (v, d / self.collar, nx)
    }

    /// `rho(zeta)`.
    fn rho(&self, zeta: &[f64]) -> f64 {
        let (x, y) = zeta.split_at(self.t);
        let mut sy = vec![0.0; y.len()];
        let rho_e = 4.0 * (self.quad(y, &mut sy) / self.eps2 - 1.0);
        let (chi, _, _) = self.chi(x);
        if chi >= 1.0 {
            return rho_e;
        }
        let rho_c = 4.0 * (self.local.value(zeta) / self.eps2 - 1.0);
        (1.0 - chi) * rho_c + chi * rho_e
    }
}

/// How `h_m` is realised.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HamiltonianMode {
    /// The four-case construction.
    Full,
    /// Only the quadratic tail `(q/2) pi |y|^2` (resonance experiments).
    QuadraticTail,
}

/// `h_m` on `T_m W` in frame coordinates.
#[derive(Clone, Debug)]
pub struct ModifiedHamiltonian {
    pub profile: CutoffProfile,
    pub mode: HamiltonianMode,
    geo: LevelGeometry,
}

impl ModifiedHamiltonian {
    pub fn new(system: &ModelSystem, m: &[f64], profile: &CutoffProfile) -> Result<Self> {
        Self::from_local(LocalModel::new(system, m)?, profile)
    }

    pub fn from_local(local: LocalModel, profile: &CutoffProfile) -> Result<Self> {
        let s = local.normal_hessian()?;
        let t = local.frame.tangent_dim();
        Ok(Self {
            profile: profile.clone(),
            mode: HamiltonianMode::Full,
            geo: LevelGeometry {
                local,
                s,
                t,
                eps2: profile.epsilon * profile.epsilon,
                r_u: profile.r_u,
                collar: profile.collar,
            },
        })
    }

    pub fn with_mode(mut self, mode: HamiltonianMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn local(&self) -> &LocalModel {
        &self.geo.local
    }

    pub fn m(&self) -> &[f64] {
        self.geo.local.m()
    }

    pub fn dim(&self) -> usize {
        self.geo.local.dim()
    }

    pub fn tangent_dim(&self) -> usize {
        self.geo.t
    }

    pub fn normal_hessian(&self) -> &DMatrix<f64> {
        &self.geo.s
    }

    /// Level parameter `rho` (meaningful for `|y| < r`).
    pub fn rho(&self, zeta: &[f64]) -> f64 {
        self.geo.rho(zeta)
    }

    pub fn value(&self, zeta: &[f64]) -> f64 {
        let p = &self.profile;
        let y = &zeta[self.geo.t..];
        let ny = linalg::norm(y);
        if self.mode == HamiltonianMode::QuadraticTail {
            return p.quadratic_tail(ny);
        }
        if ny >= p.r {
            return p.g(ny).0;
        }
        p.f(self.geo.rho(zeta)).0
    }

    /// Writes `grad h_m(zeta)` and returns `h_m(zeta)`.
    pub fn value_gradient(&self, zeta: &[f64], grad: &mut [f64]) -> f64 {
        let p = &self.profile;
        let t = self.geo.t;
        let (x, y) = zeta.split_at(t);
        let ny = linalg::norm(y);
        grad.iter_mut().for_each(|v| *v = 0.0);
        if self.mode == HamiltonianMode::QuadraticTail {
            let qp = p.q * PI;
            for (gi, yi) in grad[t..].iter_mut().zip(y) {
                *gi = qp * yi;
            }
            return p.quadratic_tail(ny);
        }
        if ny >= p.r {
            let (v, d) = p.g(ny);
            for (gi, yi) in grad[t..].iter_mut().zip(y) {
                *gi = d * yi / ny;
            }
            return v;
        }
        let geo = &self.geo;
        let mut sy = vec![0.0; y.len()];
        let rho_e = 4.0 * (geo.quad(y, &mut sy) / geo.eps2 - 1.0);
        let (chi, dchi, nx) = geo.chi(x);
        let mut hgrad = vec![0.0; zeta.len()];
        let rho_c = if chi < 1.0 { 4.0 * (geo.local.value_gradient(zeta, &mut hgrad) / geo.eps2 - 1.0) } else { 0.0 };
        let rho = (1.0 - chi) * rho_c + chi * rho_e;
        let (v, fd) = p.f(rho);
        if fd == 0.0 {
            return v;
        }
        if chi < 1.0 {
            let c = fd * (1.0 - chi) * 4.0 / geo.eps2;
            linalg::axpy(c, &hgrad, grad);
        }
        if chi > 0.0 {
            let c = fd * chi * 8.0 / geo.eps2;
            linalg::axpy(c, &sy, &mut grad[t..]);
        }
        if dchi != 0.0 && nx > 0.0 {
            let c = fd * (rho_e - rho_c) * dchi / nx;
            linalg::axpy(c, x, &mut grad[..t]);
        }
        v
    }
}

/// Base points whose levels determine the global `gamma`.
pub fn profile_base_samples(system: &ModelSystem, m: &[f64], per_axis: usize) -> Vec<Vec<f64>> {
    let mut out = vec![m.to_vec()];
    if system.base_kind() == BaseKind::Point || system.is_homogeneous() {
        return out;
    }
    let d = system.base_dim();
    let axis = sampling::linspace(-PI, PI, per_axis + 1);
    let total = per_axis.pow(d as u32);
    for idx in 0..total {
        let mut rem = idx;
        let mut p = vec![0.0; d];
        for c in p.iter_mut() {
            *c = axis[rem % per_axis];
            rem /= per_axis;
        }
        out.push(p);
    }
    out
}

/// Builds the cutoff profile at level scale `epsilon`.
///
/// `gamma` is the largest `|y|` on the outer level set `rho = 1`, found by
/// scanning rays in the normal fibre (from several tangential offsets and,
/// for non-homogeneous tori, a grid of base points) and bisecting the
/// outermost crossing.
pub fn build_profile(system: &ModelSystem, m: &[f64], epsilon: f64, settings: &ProfileSettings) -> Result<CutoffProfile> {
    let p = build_profile_unchecked(system, m, epsilon, settings)?;
    if let Some(v) = p.window_report().violations.first() {
        return Err(Error::Inequality(v.clone()));
    }
    Ok(p)
}

/// [`build_profile`] without the parameter-window checks, for reporting.
pub fn build_profile_unchecked(system: &ModelSystem, m: &[f64], epsilon: f64, settings: &ProfileSettings) -> Result<CutoffProfile> {
    check_q(settings.q, system.n, system.l)?;
    if !(epsilon > 0.0) {
        return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
    }
    let bases = profile_base_samples(system, m, settings.base_grid);
    let mut locals = Vec::with_capacity(bases.len());
    let (mut a_min, mut a_max) = (f64::INFINITY, 0.0f64);
    let mut lambda_min = f64::INFINITY;
    for b in &bases {
        let local = LocalModel::new(system, b)?;
        let spec = rescale::spectrum_of(&local)?;
        lambda_min = lambda_min.min(linalg::sym_eigen(&local.normal_hessian()?).0[0]);
        a_min = a_min.min(spec.values[0]);
        a_max = a_max.max(*spec.values.last().expect("nonempty spectrum"));
        locals.push(local);
    }
    let gamma0 = epsilon * libm::sqrt(1.25 / a_min);
    let r_u = 3.0 * gamma0;
    let collar = settings.collar_width * gamma0;
    // Outer crossings of the quadratic form lie within eps sqrt(1.25 / lambda_min(S)).
    let s_max = 2.5 * epsilon * libm::sqrt(1.25 / lambda_min);
    let mut gamma = 0.0f64;
    for local in locals {
        let s = local.normal_hessian()?;
        let t = local.frame.tangent_dim();
        let geo = LevelGeometry { local, s, t, eps2: epsilon * epsilon, r_u, collar };
        gamma = gamma.max(outer_level_radius(&geo, s_max, settings.ray_count)?);
    }
    Ok(CutoffProfile::assemble(epsilon, settings.q, gamma, gamma0, (a_min, a_max), settings))
}

/// Largest `epsilon` in `(0, 1)` (to relative precision `1e-6`) for which
/// the profile construction stays inside the chart.
pub fn epsilon_max(system: &ModelSystem, m: &[f64], settings: &ProfileSettings) -> Result<f64> {
    let fits = |eps: f64| match build_profile_unchecked(system, m, eps, settings) {
        Ok(_) => Ok(true),
        Err(Error::LevelEscape(_)) | Err(Error::ChartDomain { .. }) => Ok(false),
        Err(e) => Err(e),
    };
    if fits(1.0)? {
        return Ok(1.0);
    }
    let mut hi = 1.0f64;
    let mut probe = 1e-3;
    while !fits(probe)? {
        hi = probe;
        probe *= 1e-3;
        if probe < 1e-12 {
            return Ok(0.0);
        }
    }
    let mut lo = probe;
    while hi - lo > 1e-6 * hi {
        let mid = 0.5 * (lo + hi);
        if fits(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

fn outer_level_radius(geo: &LevelGeometry, s_max: f64, ray_count: usize) -> Result<f64> {
    let t = geo.t;
    let k = geo.local.dim() - t;
    let mut offsets: Vec<Vec<f64>> = vec![vec![0.0; t]];
    for radius in [0.5 * geo.r_u, geo.r_u, geo.r_u + 0.5 * geo.collar, geo.r_u + geo.collar] {
        for i in 0..t {
            for sign in [1.0, -1.0] {
                let mut x = vec![0.0; t];
                x[i] = sign * radius;
                offsets.push(x);
            }
        }
    }
    let mut dirs: Vec<Vec<f64>> = Vec::new();
    for i in 0..k {
        for sign in [1.0, -1.0] {
            let mut u = vec![0.0; k];
            u[i] = sign;
            dirs.push(u);
        }
    }
    for p in sampling::halton_ball(ray_count, k) {
        let n = linalg::norm(&p);
        if n > 1e-6 {
            dirs.push(p.iter().map(|v| v / n).collect());
        }
    }
    let steps = 32;
    let mut best = 0.0f64;
    let mut zeta = vec![0.0; t + k];
    for x in &offsets {
        for u in &dirs {
            let mut at = |s: f64| -> Result<f64> {
                zeta[..t].copy_from_slice(x);
                for (zi, ui) in zeta[t..].iter_mut().zip(u) {
                    *zi = s * ui;
                }
                geo.local.check_domain(&zeta).map_err(|e| Error::LevelEscape(format!("{e}")))?;
                Ok(geo.rho(&zeta))
            };
            if at(s_max)? <= 1.0 {
                return Err(Error::LevelEscape(format!(
                    "level rho = 1 not closed within |y| <= {s_max:.4e} at base {:?}",
                    geo.local.m()
                )));
            }
            let mut hi = s_max;
            let mut lo = None;
            for i in (0..steps).rev() {
                let s = s_max * i as f64 / steps as f64;
                if at(s)? <= 1.0 {
                    lo = Some(s);
                    break;
                }
                hi = s;
            }
            let Some(mut lo) = lo else { continue };
            for _ in 0..50 {
                let mid = 0.5 * (lo + hi);
                if at(mid)? <= 1.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            best = best.max(hi);
        }
    }
    Ok(best)
}

/// `F_m` on loops at one base point, with the `h_m` integral taken by the
/// uniform rule on `grid`.
#[derive(Clone, Debug)]
pub struct ActionFunctional {
    pub hm: ModifiedHamiltonian,
    pub grid: LoopGrid,
}

impl ActionFunctional {
    pub fn new(hm: ModifiedHamiltonian, grid: LoopGrid) -> Self {
        Self { hm, grid }
    }

    fn check(&self, z: &FourierLoop) -> Result<()> {
        if z.m.as_slice() != self.hm.m() {
            return Err(Error::BaseMismatch { left: z.m.clone(), right: self.hm.m().to_vec() });
        }
        if z.dim != self.hm.dim() || z.tangent_dim != self.hm.tangent_dim() {
            return Err(Error::Dimension("loop dimension differs from the system".into()));
        }
        Ok(())
    }

    /// `int_0^1 h_m(z(t)) dt`.
    pub fn mean_h(&self, z: &FourierLoop) -> Result<f64> {
        self.check(z)?;
        let samples = self.grid.synthesize(z)?;
        let sum: f64 = samples.chunks(z.dim).map(|p| self.hm.value(p)).sum();
        Ok(sum / self.grid.n_t as f64)
    }

    pub fn value(&self, z: &FourierLoop) -> Result<f64> {
        Ok(z.quadratic_action() - self.mean_h(z)?)
    }

    /// `F_m(z)` and its `H^{1/2}` fibre gradient `z+ - z- - j*(grad h_m(z))`.
    pub fn value_gradient(&self, z: &FourierLoop) -> Result<(f64, FourierLoop)> {
        self.value_gradient_impl(z, true)
    }

    /// Value and gradient over all loops in `T_m W`, the tangential mean
    /// included (`z` itself may carry one). Its zeros solve `z' = J grad h_m(z)`.
    pub fn value_gradient_free(&self, z: &FourierLoop) -> Result<(f64, FourierLoop)> {
        self.value_gradient_impl(z, false)
    }

    fn value_gradient_impl(&self, z: &FourierLoop, constrained: bool) -> Result<(f64, FourierLoop)> {
        self.check(z)?;
        let d = z.dim;
        let samples = self.grid.synthesize(z)?;
        let mut grads = vec![0.0; samples.len()];
        let mut sum = 0.0;
        for (p, g) in samples.chunks(d).zip(grads.chunks_mut(d)) {
            sum += self.hm.value_gradient(p, g);
        }
        let value = z.quadratic_action() - sum / self.grid.n_t as f64;
        let w = self.grid.fit_unconstrained(&z.m, d, z.tangent_dim, &grads)?;
        let mut grad = z.plus_minus_minus();
        let kmax = z.k_max as i64;
        for k in -kmax..=kmax {
            let c = if k == 0 { 1.0 } else { 1.0 / (2.0 * PI * k.unsigned_abs() as f64) };
            let wk = w.mode(k).to_vec();
            linalg::axpy(-c, &wk, grad.mode_mut(k));
        }
        if constrained {
            grad.enforce_mean_constraint();
        }
        Ok((value, grad))
    }

    pub fn gradient_fibre(&self, z: &FourierLoop) -> Result<FourierLoop> {
        Ok(self.value_gradient(z)?.1)
    }

    /// Max over samples of `|z'(t) - J grad h_m(z(t))|`, the residual of the
    /// critical-point equation in the time domain.
    pub fn ode_residual(&self, z: &FourierLoop) -> Result<f64> {
        self.check(z)?;
        let d = z.dim;
        let samples = self.grid.synthesize(z)?;
        let vel = self.grid.synthesize(&z.derivative())?;
        let mut g = vec![0.0; d];
        let mut jg = vec![0.0; d];
        let mut worst = 0.0f64;
        for (p, v) in samples.chunks(d).zip(vel.chunks(d)) {
            self.hm.value_gradient(p, &mut g);
            z.apply_j(&g, &mut jg);
            let diff: Vec<f64> = v.iter().zip(&jg).map(|(a, b)| a - b).collect();
            worst = worst.max(linalg::norm(&diff));
        }
        Ok(worst)
    }
}

/// The family `m -> F_m` sharing one global profile.
#[derive(Clone, Debug)]
pub struct ActionFamily {
    pub system: ModelSystem,
    pub profile: CutoffProfile,
    pub grid: LoopGrid,
    pub mode: HamiltonianMode,
}

/// Central-difference step for base gradients, as a fraction of the torus period.
pub const BASE_STEP: f64 = 1e-4;

impl ActionFamily {
    pub fn new(system: &ModelSystem, profile: &CutoffProfile, grid: LoopGrid) -> Self {
        Self { system: system.clone(), profile: profile.clone(), grid, mode: HamiltonianMode::Full }
    }

    pub fn with_mode(mut self, mode: HamiltonianMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn at(&self, m: &[f64]) -> Result<ActionFunctional> {
        let hm = ModifiedHamiltonian::new(&self.system, m, &self.profile)?.with_mode(self.mode);
        Ok(ActionFunctional::new(hm, self.grid.clone()))
    }

    pub fn value(&self, z: &FourierLoop) -> Result<f64> {
        self.at(&z.m)?.value(z)
    }

    /// Base gradient: central differences of `F(m', z)` with the coefficient
    /// array carried to `m'` unchanged (the flat-torus trivialisation).
    pub fn gradient_base(&self, z: &FourierLoop) -> Result<Vec<f64>> {
        let bl = self.system.base_dim();
        let h = 2.0 * PI * BASE_STEP;
        let mut out = vec![0.0; bl];
        for (i, o) in out.iter_mut().enumerate() {
            let mut mp = z.m.clone();
            let mut mm = z.m.clone();
            mp[i] += h;
            mm[i] -= h;
            let fp = self.at(&mp)?.value(&z.with_base(&mp))?;
            let fm = self.at(&mm)?.value(&z.with_base(&mm))?;
            *o = (fp - fm) / (2.0 * h);
        }
        Ok(out)
    }
}

/// Outcome of [`verify_bounds`].
#[derive(Clone, Debug, PartialEq)]
pub struct BoundsReport {
    pub samples: usize,
    pub u1_ok: bool,
    pub u2_ok: bool,
    pub measured_c1: f64,
    /// Largest tangential gradient component seen.
    pub max_tangential_grad: f64,
}

/// Samples the ball of radius `4 s_quad` and checks
/// `-b + (q/2) pi |y|^2 <= h_m <= (q/2) pi |y|^2 + b` and
/// `|grad h_m(z)| <= c1 |z|` (recording the measured `c1`).
pub fn verify_bounds(hm: &ModifiedHamiltonian, sample_count: usize) -> Result<BoundsReport> {
    if sample_count < 1000 {
        return Err(Error::Config(format!("verify_bounds needs at least 1000 samples, got {sample_count}")));
    }
    let p = &hm.profile;
    let d = hm.dim();
    let t = hm.tangent_dim();
    let radius = 4.0 * p.s_quad;
    let mut grad = vec![0.0; d];
    let mut c1 = 0.0f64;
    let mut tangential = 0.0f64;
    let slack = 1e-12 * p.b;
    for unit in sampling::halton_ball(sample_count, d) {
        let z: Vec<f64> = unit.iter().map(|v| v * radius).collect();
        let h = hm.value_gradient(&z, &mut grad);
        let ny = linalg::norm(&z[t..]);
        let quad = p.quadratic_tail(ny);
        if !(h >= quad - p.b - slack && h <= quad + p.b + slack) {
            return Err(Error::Inequality(format!(
                "(u1) fails at |y| = {ny:.6e}: h = {h:.6e}, window [{:.6e}, {:.6e}]",
                quad - p.b,
                quad + p.b
            )));
        }
        let nz = linalg::norm(&z);
        if nz > 1e-8 {
            c1 = c1.max(linalg::norm(&grad) / nz);
        }
        tangential = tangential.max(linalg::norm(&grad[..t]));
    }
    Ok(BoundsReport {
        samples: sample_count,
        u1_ok: true,
        u2_ok: c1.is_finite(),
        measured_c1: c1,
        max_tangential_grad: tangential,
    })
}
