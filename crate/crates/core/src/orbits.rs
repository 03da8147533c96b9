//! From critical loops to periodic orbits of `X_H`, plus an independent ODE
//! oracle and the per-level pipeline.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::Serialize;

use crate::action::{build_profile, ActionFamily, CutoffProfile, ProfileSettings};
use crate::linalg;
use crate::loops::{FourierLoop, LoopGrid};
use crate::minimax::{minimax_search, polish_critical, CriticalCandidate, MinimaxOutcome, MinimaxSettings};
use crate::system::ModelSystem;
use crate::{Error, Result};

/// A periodic orbit of the original system recovered from a critical loop.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PeriodicOrbit {
    pub m: Vec<f64>,
    pub epsilon: f64,
    /// Phase-space points at physical times `times[j]`, along `X_H`.
    pub samples: Vec<Vec<f64>>,
    pub times: Vec<f64>,
    pub energy: f64,
    /// Max `|H - energy|` over the samples.
    pub energy_deviation: f64,
    /// `H = eps^2 + rho eps^2 / 4`.
    pub rho: f64,
    pub period_phys: f64,
    /// `(max - min) / mean` of the gradient ratio that fixes the period.
    pub lambda_spread: f64,
    pub action: f64,
    /// `|z(T) - z(0)|` from the independent integrator, once verified.
    pub closure_residual: Option<f64>,
    pub ode_residual: f64,
    /// `zeta` of the fit `|z_k| ~ C zeta^|k|`.
    pub spectral_decay_zeta: f64,
    #[serde(skip)]
    pub source: FourierLoop,
}

/// Converts a polished critical loop into a physical orbit.
pub fn loop_to_orbit(family: &ActionFamily, candidate: &CriticalCandidate) -> Result<PeriodicOrbit> {
    let fun = family.at(&candidate.m)?;
    let z = &candidate.z;
    let p = &family.profile;
    let local = fun.hm.local();
    let (d, t) = (z.dim, z.tangent_dim);
    let zeta = fun.grid.synthesize(z)?;
    let n_t = fun.grid.n_t;

    let mut ambient = Vec::with_capacity(n_t);
    let mut energies = Vec::with_capacity(n_t);
    let mut lambdas = Vec::with_capacity(n_t);
    let mut gh = vec![0.0; d];
    let mut gf = vec![0.0; d];
    for (j, s) in zeta.chunks(d).enumerate() {
        local.check_domain(s).map_err(|e| Error::Escape(format!("sample {j}: {e}")))?;
        let (nx, ny) = (linalg::norm(&s[..t]), linalg::norm(&s[t..]));
        if nx > p.r_u {
            return Err(Error::Escape(format!("sample {j}: tangential offset {nx:e} enters the collar at {:e}", p.r_u)));
        }
        if ny >= p.r {
            return Err(Error::Escape(format!("sample {j}: normal radius {ny:e} reaches the outer cutoff {:e}", p.r)));
        }
        let mut w = vec![0.0; d];
        local.phase_point(s, &mut w);
        energies.push(family.system.hamiltonian(&w));
        ambient.push(w);
        local.value_gradient(s, &mut gf);
        let nf = linalg::norm(&gf);
        fun.hm.value_gradient(s, &mut gh);
        lambdas.push((nf, linalg::norm(&gh)));
    }

    let energy = energies.iter().sum::<f64>() / n_t as f64;
    let energy_deviation = energies.iter().map(|e| libm::fabs(e - energy)).fold(0.0, f64::max);
    let eps2 = p.epsilon * p.epsilon;
    let rho = 4.0 * (energy / eps2 - 1.0);
    if libm::fabs(rho) > p.epsilon * (1.0 + 1e-9) {
        return Err(Error::RhoBand { rho, epsilon: p.epsilon });
    }
    if let Some(j) = lambdas.iter().position(|l| l.1 == 0.0) {
        return Err(Error::Escape(format!("sample {j}: h_m is flat, the loop is not on a level of H")));
    }
    let lambdas: Vec<f64> = lambdas.iter().map(|(nf, nh)| nf / nh).collect();
    let lambda = lambdas.iter().sum::<f64>() / n_t as f64;
    let (lo, hi) = lambdas.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &x| (a.min(x), b.max(x)));
    let period_phys = 1.0 / lambda;

    // Critical loops run against X_H: sample j of the orbit is loop time -j / N.
    let samples: Vec<Vec<f64>> = (0..n_t).map(|j| ambient[(n_t - j) % n_t].clone()).collect();
    let times = (0..n_t).map(|j| period_phys * j as f64 / n_t as f64).collect();

    Ok(PeriodicOrbit {
        m: candidate.m.clone(),
        epsilon: p.epsilon,
        samples,
        times,
        energy,
        energy_deviation,
        rho,
        period_phys,
        lambda_spread: (hi - lo) / lambda,
        action: candidate.value,
        closure_residual: None,
        ode_residual: fun.ode_residual(z)?,
        spectral_decay_zeta: decay_rate(z),
        source: z.clone(),
    })
}

/// Least-squares `zeta` in `log |z_k| = c + |k| log zeta` over modes above round-off.
pub fn decay_rate(z: &FourierLoop) -> f64 {
    let mags = z.mode_magnitudes();
    let top = mags.iter().skip(1).copied().fold(0.0, f64::max);
    let pts: Vec<(f64, f64)> = mags
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, &a)| a > 1e-13 * top)
        .map(|(k, &a)| (k as f64, libm::log(a)))
        .collect();
    if pts.len() < 2 {
        return 0.0;
    }
    let n = pts.len() as f64;
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    libm::exp(sxy / sxx)
}

/// Result of integrating `X_H` from the first orbit sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct VerifyReport {
    pub closure: f64,
    /// Max distance between the integrated state and the sample at the same time.
    pub max_distance: f64,
    pub steps: usize,
}

const MAX_STEPS: usize = 2_000_000;

/// Classical RK4 with step doubling; used only as an oracle.
fn rk4(system: &ModelSystem, y: &[f64], h: f64, out: &mut [f64]) {
    let d = y.len();
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    let stage = |k: &[f64], c: f64| -> Vec<f64> { y.iter().zip(k).map(|(a, b)| a + c * b).collect() };
    system.vector_field(y, &mut k1);
    system.vector_field(&stage(&k1, 0.5 * h), &mut k2);
    system.vector_field(&stage(&k2, 0.5 * h), &mut k3);
    system.vector_field(&stage(&k3, h), &mut k4);
    for i in 0..d {
        out[i] = y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

fn integrate(system: &ModelSystem, y: &mut [f64], span: f64, h: &mut f64, tol: f64, steps: &mut usize) -> Result<()> {
    let d = y.len();
    let (mut full, mut half, mut two) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    let mut left = span;
    while left > 0.0 {
        let dt = h.min(left);
        if dt < 1e-14 * span.max(1e-300) && dt < left {
            return Err(Error::Integrator(format!("step size {dt:e} underflow with {left:e} remaining")));
        }
        *steps += 1;
        if *steps > MAX_STEPS {
            return Err(Error::Integrator(format!("more than {MAX_STEPS} steps")));
        }
        rk4(system, y, dt, &mut full);
        rk4(system, y, 0.5 * dt, &mut half);
        rk4(system, &half, 0.5 * dt, &mut two);
        let err = (0..d)
            .map(|i| libm::fabs(two[i] - full[i]) / (15.0 * tol * (1.0 + libm::fabs(y[i]))))
            .fold(0.0, f64::max);
        if !err.is_finite() {
            return Err(Error::Integrator("non-finite state".into()));
        }
        if err <= 1.0 {
            y.copy_from_slice(&two);
            left -= dt;
            if left < 1e-15 * span {
                left = 0.0;
            }
        }
        let grow = if err == 0.0 { 4.0 } else { (0.9 * libm::pow(err, -0.2)).clamp(0.2, 4.0) };
        if err <= 1.0 && dt < *h {
            // A step truncated to land on a target says nothing about the next.
            continue;
        }
        *h = dt * grow;
    }
    Ok(())
}

/// States of the `X_H` flow from `start` at increasing `times` (first time 0).
pub fn integrate_flow(system: &ModelSystem, start: &[f64], times: &[f64], tol: f64) -> Result<Vec<Vec<f64>>> {
    let mut y = start.to_vec();
    let span = times.last().copied().unwrap_or(0.0);
    let mut h = span / times.len().max(1) as f64;
    let mut steps = 0;
    let mut now = 0.0;
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        if t < now {
            return Err(Error::Integrator("times must be increasing".into()));
        }
        if t > now {
            integrate(system, &mut y, t - now, &mut h, tol, &mut steps)?;
            now = t;
        }
        out.push(y.clone());
    }
    Ok(out)
}

/// Integrates `X_H` from `orbit.samples[0]` over `period_phys` and compares
/// with the samples at their times.
pub fn verify_orbit(system: &ModelSystem, orbit: &PeriodicOrbit, integrator_tol: f64) -> Result<VerifyReport> {
    if orbit.samples.is_empty() || !(orbit.period_phys > 0.0) || !(integrator_tol > 0.0) {
        return Err(Error::Integrator("orbit needs samples, a positive period and a positive tolerance".into()));
    }
    let start = &orbit.samples[0];
    let mut y = start.clone();
    let mut h = orbit.period_phys / orbit.samples.len() as f64;
    let mut steps = 0;
    let mut max_distance = 0.0f64;
    let mut now = 0.0;
    let targets = orbit.times.iter().skip(1).copied().chain(core::iter::once(orbit.period_phys));
    for (j, target) in targets.enumerate() {
        integrate(system, &mut y, target - now, &mut h, integrator_tol, &mut steps)?;
        now = target;
        let reference = orbit.samples.get(j + 1).unwrap_or(start);
        let diff: Vec<f64> = y.iter().zip(reference).map(|(a, b)| a - b).collect();
        max_distance = max_distance.max(linalg::norm(&diff));
    }
    let diff: Vec<f64> = y.iter().zip(start).map(|(a, b)| a - b).collect();
    Ok(VerifyReport { closure: linalg::norm(&diff), max_distance, steps })
}

/// Centroid, mean radius and max radial deviation of the projection of the
/// samples onto coordinates `range`.
pub fn circle_fit(samples: &[Vec<f64>], range: core::ops::Range<usize>) -> (Vec<f64>, f64, f64) {
    let n = samples.len() as f64;
    let mut c = vec![0.0; range.len()];
    for s in samples {
        for (ci, x) in c.iter_mut().zip(&s[range.clone()]) {
            *ci += x / n;
        }
    }
    let radii: Vec<f64> = samples
        .iter()
        .map(|s| {
            let d: Vec<f64> = s[range.clone()].iter().zip(&c).map(|(a, b)| a - b).collect();
            linalg::norm(&d)
        })
        .collect();
    let r = radii.iter().sum::<f64>() / n;
    let dev = radii.iter().map(|x| libm::fabs(x - r)).fold(0.0, f64::max);
    (c, r, dev)
}

/// Knobs for one full run at a single level.
#[derive(Clone, Debug)]
pub struct PipelineSettings {
    pub profile: ProfileSettings,
    pub k_max: usize,
    pub oversample: usize,
    /// Time samples; `oversample * (2K + 1)` when unset.
    pub n_t: Option<usize>,
    pub minimax: MinimaxSettings,
    pub integrator_tol: f64,
    pub closure_tol: f64,
    /// Fibre used for the profile and the initial front; origin of the base by default.
    pub base_point: Option<Vec<f64>>,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        Self {
            profile: ProfileSettings::default(),
            k_max: 16,
            oversample: 4,
            n_t: None,
            minimax: MinimaxSettings::default(),
            integrator_tol: 1e-12,
            closure_tol: 1e-6,
            base_point: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct OrbitRun {
    pub epsilon: f64,
    pub profile: CutoffProfile,
    pub search: MinimaxOutcome,
    pub candidate: CriticalCandidate,
    pub orbit: PeriodicOrbit,
    pub verification: VerifyReport,
    /// Closure, band, energy and action checks all hold.
    pub verified: bool,
}

/// Profile, minimax search, polish, conversion and verification at one level.
pub fn find_orbit(system: &ModelSystem, epsilon: f64, settings: &PipelineSettings) -> Result<OrbitRun> {
    let m = settings.base_point.clone().unwrap_or_else(|| vec![0.0; system.base_dim()]);
    let profile = build_profile(system, &m, epsilon, &settings.profile)?;
    let grid = match settings.n_t {
        Some(n) => LoopGrid::new(settings.k_max, n)?,
        None => LoopGrid::with_oversample(settings.k_max, settings.oversample)?,
    };
    let family = ActionFamily::new(system, &profile, grid);
    let search = minimax_search(&family, core::slice::from_ref(&m), &settings.minimax)?;
    let candidate = polish_critical(&family, &search.candidate.z, &settings.minimax)?;
    if !candidate.polished {
        return Err(Error::Newton(format!(
            "candidate not polished (grad {:e}): {}",
            candidate.grad_norm,
            candidate.note.as_deref().unwrap_or("gradient above tolerance")
        )));
    }
    if !(candidate.value > 0.0) {
        return Err(Error::Verification(format!("critical value {} is not positive", candidate.value)));
    }
    let mut orbit = loop_to_orbit(&family, &candidate)?;
    let verification = verify_orbit(system, &orbit, settings.integrator_tol)?;
    orbit.closure_residual = Some(verification.closure);
    let verified = verification.closure <= settings.closure_tol
        && orbit.action > 0.0
        && libm::fabs(orbit.rho) <= epsilon
        && orbit.energy_deviation <= 1e-6 * epsilon * epsilon;
    Ok(OrbitRun { epsilon, profile, search, candidate, orbit, verification, verified })
}

/// One entry of a level sequence; failures are kept, not fatal.
#[derive(Clone, Debug)]
pub struct LevelResult {
    pub epsilon: f64,
    pub outcome: Result<OrbitRun>,
}

/// Runs [`find_orbit`] for each `epsilon` in order.
pub fn level_sequence_experiment(system: &ModelSystem, epsilons: &[f64], settings: &PipelineSettings) -> Result<Vec<LevelResult>> {
    if epsilons.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Config("epsilon list must be strictly decreasing".into()));
    }
    Ok(epsilons.iter().map(|&epsilon| LevelResult { epsilon, outcome: find_orbit(system, epsilon, settings) }).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling;
    use crate::system::larmor_reference;
    use core::f64::consts::PI;

    fn quick(k_max: usize) -> PipelineSettings {
        PipelineSettings { k_max, minimax: MinimaxSettings { budget: 20_000, ..Default::default() }, ..Default::default() }
    }

    /// Exact circle of `H = |z|^2 + c |z|^4` through `(r, 0)`; the angular
    /// speed `2 (1 + 2 c r^2)` and its sign are read off the field at one point.
    fn anharmonic_circle(sys: &ModelSystem, r: f64, n: usize) -> PeriodicOrbit {
        let mut v = [0.0; 2];
        sys.vector_field(&[r, 0.0], &mut v);
        let omega = v[1] / r;
        let period = 2.0 * PI / libm::fabs(omega);
        let times: Vec<f64> = (0..n).map(|j| period * j as f64 / n as f64).collect();
        let samples = times.iter().map(|t| vec![r * libm::cos(omega * t), r * libm::sin(omega * t)]).collect();
        PeriodicOrbit {
            m: vec![],
            epsilon: r,
            samples,
            times,
            energy: sys.hamiltonian(&[r, 0.0]),
            energy_deviation: 0.0,
            rho: 0.0,
            period_phys: period,
            lambda_spread: 0.0,
            action: 1.0,
            closure_residual: None,
            ode_residual: 0.0,
            spectral_decay_zeta: 0.0,
            source: FourierLoop::zeros(&[], 1, 2, 0),
        }
    }

    #[test]
    fn oracle_closes_exact_orbits_and_rejects_perturbed_ones() {
        let sys = ModelSystem::point_quadratic(vec![1.0, 1.0], 0.5, 0.0).unwrap();
        let orbit = anharmonic_circle(&sys, 0.3, 64);
        let rep = verify_orbit(&sys, &orbit, 1e-12).unwrap();
        assert!(rep.closure < 1e-9 && rep.max_distance < 1e-9, "{rep:?}");

        let mut off = orbit.clone();
        off.samples[0][0] += 1e-3;
        let bad = verify_orbit(&sys, &off, 1e-12).unwrap();
        assert!(bad.closure > 1e-4, "{bad:?}");

        assert!(verify_orbit(&sys, &PeriodicOrbit { period_phys: 0.0, ..orbit }, 1e-12).is_err());
    }

    #[test]
    fn larmor_circles_from_the_oracle() {
        for (b, e) in [(1.0, 1.0), (2.0, 4.0), (1.5, 0.3)] {
            let sys = ModelSystem::constant_magnetic(b);
            let reference = larmor_reference(b, e).unwrap();
            let start = [0.0, 0.0, libm::sqrt(e), 0.0];
            let n = 64;
            let times: Vec<f64> = (0..=n).map(|j| reference.period * j as f64 / n as f64).collect();
            let states = integrate_flow(&sys, &start, &times, 1e-13).unwrap();
            let (_, radius, dev) = circle_fit(&states[..n], 0..2);
            assert!((radius - reference.radius).abs() < 1e-9 * reference.radius);
            assert!(dev < 1e-9);
            let closure: f64 = states[n].iter().zip(&start).map(|(a, b)| (a - b) * (a - b)).sum();
            assert!(libm::sqrt(closure) < 1e-9);
            // Half a period puts q on the far side of the circle.
            let half = &states[n / 2];
            assert!((libm::hypot(half[0], half[1]) - 2.0 * reference.radius).abs() < 1e-9);
            for s in &states {
                assert!((sys.hamiltonian(s) - e).abs() < 1e-10 * e);
            }
        }
        assert!((larmor_reference(1.0, 1.0).unwrap().period - PI).abs() < 1e-15);
        assert!((larmor_reference(2.0, 4.0).unwrap().radius - 1.0).abs() < 1e-15);
        assert!(larmor_reference(0.0, 1.0).is_err());
    }

    #[test]
    fn decay_rate_of_geometric_modes() {
        let mut z = FourierLoop::zeros(&[], 8, 2, 0);
        for k in 1..=8i64 {
            z.mode_mut(k)[0] = libm::pow(0.5, k as f64);
            z.mode_mut(-k)[1] = 0.3 * libm::pow(0.5, k as f64);
        }
        assert!((decay_rate(&z) - 0.5).abs() < 1e-12);
        let mut circle = FourierLoop::zeros(&[], 8, 2, 0);
        circle.mode_mut(1)[0] = 0.1;
        assert_eq!(decay_rate(&circle), 0.0);
    }

    #[test]
    fn oscillator_pipeline_gives_the_circle() {
        let sys = ModelSystem::harmonic_oscillator(1, 1.0);
        let run = find_orbit(&sys, 0.1, &quick(8)).unwrap();
        let o = &run.orbit;
        assert!(run.verified, "{:?}", run.verification);
        let (centre, radius, dev) = circle_fit(&o.samples, 0..2);
        assert!(linalg::norm(&centre) < 1e-9 && dev < 1e-9);
        assert!((radius - libm::sqrt(o.energy)).abs() < 1e-6 * radius);
        assert!(o.rho.abs() <= 0.1 && o.energy_deviation <= 1e-6 * 0.01);
        assert!((o.period_phys - PI).abs() < 1e-6 * PI);
        assert!(o.action > 0.0 && o.lambda_spread < 1e-9);
        assert!(run.verification.closure <= 1e-6 && run.verification.max_distance <= 1e-6);
        assert!(o.spectral_decay_zeta < 1.0);
    }

    #[test]
    fn larmor_pipeline_matches_closed_form() {
        for b in [1.0, 2.0] {
            let sys = ModelSystem::constant_magnetic(b);
            let run = find_orbit(&sys, 0.25, &quick(8)).unwrap();
            let o = &run.orbit;
            assert!(run.verified, "{:?}", run.verification);
            let reference = larmor_reference(b, o.energy).unwrap();
            let (_, radius, _) = circle_fit(&o.samples, 0..2);
            assert!((radius - reference.radius).abs() < 1e-5 * reference.radius);
            assert!((o.period_phys - reference.period).abs() < 1e-5 * reference.period);
        }
    }

    fn circle_candidate(fam: &ActionFamily, radius: f64) -> CriticalCandidate {
        let mut z = FourierLoop::zeros(&[], fam.grid.k_max, 2, 0);
        z.mode_mut(1)[0] = radius;
        CriticalCandidate {
            m: vec![],
            value: 1.0,
            grad_norm: 0.0,
            polish_residual: 0.0,
            iterations: 0,
            null_directions: 0,
            value_change: 0.0,
            polished: true,
            note: None,
            z,
        }
    }

    #[test]
    fn conversion_rejects_escapes_and_off_band_levels() {
        let sys = ModelSystem::harmonic_oscillator(1, 1.0);
        let eps = 0.1;
        let profile = build_profile(&sys, &[], eps, &ProfileSettings::default()).unwrap();
        let fam = ActionFamily::new(&sys, &profile, LoopGrid::with_oversample(4, 4).unwrap());
        let far = circle_candidate(&fam, 1.1 * profile.r);
        assert!(matches!(loop_to_orbit(&fam, &far), Err(Error::Escape(_))));
        // rho = 2 eps, outside the band but inside the cutoff.
        let off = circle_candidate(&fam, eps * libm::sqrt(1.0 + eps / 2.0));
        let r = loop_to_orbit(&fam, &off);
        assert!(matches!(r, Err(Error::RhoBand { .. })), "{r:?}");
        let inside = circle_candidate(&fam, eps * libm::sqrt(1.0 + eps / 8.0));
        let o = loop_to_orbit(&fam, &inside).unwrap();
        assert!((o.rho - eps / 2.0).abs() < 1e-9);
    }

    #[test]
    fn level_sequences() {
        let sys = ModelSystem::harmonic_oscillator(1, 1.0);
        assert!(level_sequence_experiment(&sys, &[], &quick(6)).unwrap().is_empty());
        assert!(level_sequence_experiment(&sys, &[0.1, 0.2], &quick(6)).is_err());
        let eps: Vec<f64> = (1..=3).map(|k| libm::pow(2.0, -(k as f64) - 2.0)).collect();
        let runs = level_sequence_experiment(&sys, &eps, &quick(6)).unwrap();
        let energies: Vec<f64> = runs.iter().map(|r| r.outcome.as_ref().unwrap().orbit.energy).collect();
        assert!(energies.windows(2).all(|w| w[1] < w[0]));
        for r in &runs {
            let run = r.outcome.as_ref().unwrap();
            assert!(run.verified && run.orbit.rho.abs() <= r.epsilon);
        }
        let _ = sampling::linspace(0.0, 1.0, 2);
    }
}
