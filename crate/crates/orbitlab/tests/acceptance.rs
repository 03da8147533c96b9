//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero when any criterion fails.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::Rng;
use orbitlab::config::ExperimentConfig;
use orbitlab::validate::validate;
use orbitlab_core::action::{build_profile, verify_bounds, ActionFamily, ModifiedHamiltonian, ProfileSettings};
use orbitlab_core::loops::{FourierLoop, LoopGrid};
use orbitlab_core::minimax::{minimax_search, palais_smale_monitor, spectral_q_check, MinimaxSettings};
use orbitlab_core::orbits::{circle_fit, find_orbit, OrbitRun, PipelineSettings};
use orbitlab_core::rescale::{convergence_probe, log_log_slope, symplectic_eigenvalues};
use orbitlab_core::sampling::{gaussian, rng};
use orbitlab_core::system::{larmor_reference, ModelSystem};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn settings(k_max: usize, base: &[f64]) -> PipelineSettings {
    PipelineSettings { k_max, base_point: Some(base.to_vec()), ..Default::default() }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

/// Every pipeline run kept for the cross-cutting checks (7 and 8).
struct Accepted {
    system: ModelSystem,
    settings: PipelineSettings,
    run: OrbitRun,
}

fn criterion_1(accepted: &mut Vec<Accepted>) -> Outcome {
    let sys = ModelSystem::harmonic_oscillator(1, 1.0);
    let mut notes = Vec::new();
    let mut pass = true;
    for eps in [0.2, 0.1, 0.05] {
        let s = settings(32, &[]);
        let t0 = Instant::now();
        let res = find_orbit(&sys, eps, &s);
        let dt = t0.elapsed();
        match res {
            Ok(run) => {
                let o = &run.orbit;
                // H = |z|^2: the level E is the circle of radius sqrt(E).
                let (_, radius, _) = circle_fit(&o.samples, 0..2);
                let err = rel(radius, o.energy.sqrt());
                let band = o.rho.abs() <= eps;
                let ok = run.verified && band && err <= 1e-5 && dt <= Duration::from_secs(30);
                pass &= ok;
                notes.push(format!("eps {eps}: rel radius err {err:.1e}, rho {:.3}, {:.1}s", o.rho, dt.as_secs_f64()));
                accepted.push(Accepted { system: sys.clone(), settings: s, run });
            }
            Err(e) => {
                pass = false;
                notes.push(format!("eps {eps}: {e}"));
            }
        }
    }
    outcome(pass, notes.join("; "))
}

/// `(radius, period)` per `(B, k)`, or the failure message.
type LarmorTable = Vec<(f64, usize, Result<(f64, f64), String>)>;

fn larmor_runs(k_max: usize, accepted: Option<&mut Vec<Accepted>>) -> (LarmorTable, bool, String) {
    let mut table = Vec::new();
    let mut pass = true;
    let mut worst = (0.0f64, 0.0f64, 0.0f64);
    let mut slowest = 0.0f64;
    let mut keep = Vec::new();
    for b in [1.0, 2.0] {
        let sys = ModelSystem::constant_magnetic(b);
        for k in 1..=6 {
            let eps = 0.5f64.powi(k as i32);
            let s = settings(k_max, &[0.0, 0.0]);
            let t0 = Instant::now();
            let res = find_orbit(&sys, eps, &s);
            let dt = t0.elapsed().as_secs_f64();
            slowest = slowest.max(dt);
            match res {
                Ok(run) => {
                    let o = &run.orbit;
                    let reference = larmor_reference(b, o.energy).unwrap();
                    let (_, radius, _) = circle_fit(&o.samples, 0..2);
                    let (er, ep) = (rel(radius, reference.radius), rel(o.period_phys, reference.period));
                    let closure = run.verification.closure;
                    worst = (worst.0.max(er), worst.1.max(ep), worst.2.max(closure));
                    pass &= er <= 1e-5 && ep <= 1e-5 && o.action > 0.0 && closure <= 1e-6 && dt <= 120.0;
                    table.push((b, k, Ok((radius, o.period_phys))));
                    keep.push(Accepted { system: sys.clone(), settings: s, run });
                }
                Err(e) => {
                    pass = false;
                    table.push((b, k, Err(e.to_string())));
                }
            }
        }
    }
    if let Some(acc) = accepted {
        acc.extend(keep);
    }
    let failures: Vec<String> =
        table.iter().filter_map(|(b, k, r)| r.as_ref().err().map(|e| format!("B {b} k {k}: {e}"))).collect();
    let mut detail = format!(
        "{}/12 runs, max rel err radius {:.1e} period {:.1e}, max closure {:.1e}, slowest {slowest:.1}s",
        table.iter().filter(|t| t.2.is_ok()).count(),
        worst.0,
        worst.1,
        worst.2
    );
    if !failures.is_empty() {
        detail.push_str(&format!("; {}", failures.join("; ")));
    }
    (table, pass, detail)
}

fn criterion_3(accepted: &mut Vec<Accepted>) -> Outcome {
    let sys = ModelSystem::varying_magnetic(1.0, 0.3);
    let mut energies = Vec::new();
    let mut verified = 0;
    let mut notes = Vec::new();
    for k in 1..=5 {
        let eps = 0.5f64.powi(k);
        let s = settings(16, &[0.0, 0.0]);
        match find_orbit(&sys, eps, &s) {
            Ok(run) => {
                let o = &run.orbit;
                let ok = run.verified && o.rho.abs() <= eps && o.action > 0.0 && run.verification.closure <= 1e-6;
                if ok {
                    verified += 1;
                    energies.push(o.energy);
                }
                notes.push(format!("eps {eps}: {} E {:.4e}", if ok { "ok" } else { "unverified" }, o.energy));
                accepted.push(Accepted { system: sys.clone(), settings: s, run });
            }
            Err(e) => notes.push(format!("eps {eps}: {e}")),
        }
    }
    let monotone = energies.windows(2).all(|w| w[1] < w[0]) && energies.last().is_some_and(|e| *e < 1e-2);
    outcome(verified >= 4 && monotone, format!("{verified}/5 verified, energies decreasing {monotone}; {}", notes.join("; ")))
}

fn criterion_4() -> Outcome {
    let eps = [0.2, 0.1, 0.05, 0.025];
    // B'(x_1) is largest at x_1 = pi/2; at x_1 = 0 it vanishes and the
    // deviation is second order.
    let torus = ModelSystem::varying_magnetic(1.0, 0.3);
    let slope = convergence_probe(&torus, &[PI / 2.0, 0.0], &eps).map(|d| log_log_slope(&eps, &d));
    let quad = ModelSystem::point_quadratic(vec![1.0, 2.0, 3.0, 4.0], 0.0, 0.0).unwrap();
    let quad_dev = convergence_probe(&quad, &[], &eps).map(|d| d.into_iter().fold(0.0, f64::max));
    match (slope, quad_dev) {
        (Ok(s), Ok(d)) => outcome((0.9..=1.1).contains(&s) && d <= 1e-12, format!("slope {s:.4}, quadratic max deviation {d:.1e}")),
        (s, d) => outcome(false, format!("{s:?} {d:?}")),
    }
}

fn random_matrix(r: &mut impl Rng, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |_, _| gaussian(r))
}

/// Half-moduli of the eigenvalues of `omega^{-1} 2S`, from the general
/// (non-symmetric) eigensolver; each appears twice.
fn brute_force(omega: &DMatrix<f64>, s: &DMatrix<f64>) -> Vec<f64> {
    let m = omega.clone().try_inverse().unwrap() * s * 2.0;
    let mut v: Vec<f64> = m.complex_eigenvalues().iter().map(|z| 0.5 * z.norm()).collect();
    v.sort_by(f64::total_cmp);
    v.into_iter().step_by(2).collect()
}

fn criterion_5() -> Outcome {
    let mut r = rng(2024);
    let (mut worst, mut worst_inv) = (0.0f64, 0.0f64);
    for case in 0..1000 {
        let n = if case % 2 == 0 { 2 } else { 4 };
        let a = random_matrix(&mut r, n);
        let s = a.transpose() * &a + DMatrix::identity(n, n) * 0.1;
        let g = random_matrix(&mut r, n);
        let mut j = DMatrix::zeros(n, n);
        for i in 0..n / 2 {
            j[(i, n / 2 + i)] = 1.0;
            j[(n / 2 + i, i)] = -1.0;
        }
        let omega = (&g - g.transpose()) * 0.3 + j;
        let got = symplectic_eigenvalues(&omega, &s).unwrap();
        let want = brute_force(&omega, &s);
        let scale = want.iter().fold(0.0f64, |m, x| m.max(*x));
        worst = worst.max(got.iter().zip(&want).map(|(x, y)| (x - y).abs() / scale).fold(0.0, f64::max));
        // Cayley transform of the omega-Hamiltonian matrix omega^{-1} Y is
        // omega-symplectic; |X| = 1/2 keeps cond(P) <= 9.
        let y = random_matrix(&mut r, n);
        let x = omega.clone().try_inverse().unwrap() * (&y + y.transpose());
        let x = &x * (0.5 / x.clone().singular_values().max());
        let id = DMatrix::<f64>::identity(n, n);
        let p = (&id - &x).try_inverse().unwrap() * (&id + &x);
        let conj = symplectic_eigenvalues(&omega, &(p.transpose() * &s * &p)).unwrap();
        worst_inv = worst_inv.max(conj.iter().zip(&got).map(|(x, y)| (x - y).abs() / scale).fold(0.0, f64::max));
    }
    outcome(worst <= 1e-9 && worst_inv <= 1e-9, format!("1000 cases, max rel err {worst:.1e}, conjugation {worst_inv:.1e}"))
}

fn random_loop(r: &mut impl Rng, m: &[f64], k: usize, dim: usize, t: usize, amp: f64) -> FourierLoop {
    let c = (0..(2 * k + 1) * dim).map(|i| amp * gaussian(r) / ((i / dim) as f64 - k as f64).abs().max(1.0)).collect();
    FourierLoop::from_coeffs(m, k, dim, t, c).unwrap()
}

fn criterion_6() -> Outcome {
    let sys = ModelSystem::varying_magnetic(1.0, 0.3);
    let profile = build_profile(&sys, &[0.0, 0.0], 0.25, &ProfileSettings::default()).unwrap();
    let fam = ActionFamily::new(&sys, &profile, LoopGrid::with_oversample(6, 2).unwrap());
    let mut r = rng(77);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let m = [2.0 * PI * r.gen::<f64>(), 2.0 * PI * r.gen::<f64>()];
        let f = fam.at(&m).unwrap();
        let z = random_loop(&mut r, &m, 6, 4, 2, 0.15);
        let (_, g) = f.value_gradient(&z).unwrap();
        for _ in 0..20 {
            let mut dir = random_loop(&mut r, &m, 6, 4, 2, 1.0);
            dir.scale(1.0 / dir.h_half());
            let h = 1e-6 * z.h_half().max(1e-3);
            let fd = (f.value(&z.add(&dir.scaled(h))).unwrap() - f.value(&z.sub(&dir.scaled(h))).unwrap()) / (2.0 * h);
            worst = worst.max((fd - g.h_half_dot(&dir)).abs() / g.h_half().max(1e-12));
        }
    }
    outcome(worst <= 1e-5, format!("2000 trials, max error relative to |grad F| {worst:.1e}"))
}

fn criterion_7(accepted: &[Accepted]) -> Outcome {
    let mut pass = !accepted.is_empty();
    let mut min_margin = f64::INFINITY;
    let mut samples = 0;
    let mut notes = Vec::new();
    for a in accepted {
        let p = &a.run.profile;
        let windows = p.window_report();
        let margin = spectral_q_check(a.settings.k_max, p.q).map(|c| c.margin).unwrap_or(f64::NAN);
        min_margin = min_margin.min(margin);
        let bounds = ModifiedHamiltonian::new(&a.system, &a.run.orbit.m, p).and_then(|hm| verify_bounds(&hm, 10_000));
        match bounds {
            Ok(b) => {
                samples = b.samples;
                let ok = b.u1_ok && b.u2_ok && b.samples >= 10_000 && windows.ok() && margin > 0.0;
                if !ok {
                    notes.push(format!("eps {}: {:?} {:?}", p.epsilon, b, windows.violations));
                }
                pass &= ok;
            }
            Err(e) => {
                pass = false;
                notes.push(format!("eps {}: {e}", p.epsilon));
            }
        }
    }
    let mut detail = format!("{} profiles, {samples} samples each, min q margin {min_margin:.3}", accepted.len());
    if !notes.is_empty() {
        detail.push_str(&format!("; {}", notes.join("; ")));
    }
    outcome(pass, detail)
}

fn criterion_8(accepted: &[Accepted]) -> Outcome {
    let mut pass = !accepted.is_empty();
    let (mut max_boundary, mut min_gap, mut max_rise) = (f64::NEG_INFINITY, f64::INFINITY, 0.0f64);
    for a in accepted {
        let s = &a.run.search;
        let grid = LoopGrid::with_oversample(a.settings.k_max, a.settings.oversample).unwrap();
        let fam = ActionFamily::new(&a.system, &a.run.profile, grid);
        let gamma_min =
            s.config.gamma_sample.iter().map(|z| fam.value(z).unwrap_or(f64::NEG_INFINITY)).fold(f64::INFINITY, f64::min);
        let rise = s.trace.windows(2).map(|w| w[1].sup - w[0].sup).fold(0.0, f64::max);
        max_boundary = max_boundary.max(s.boundary_sup);
        min_gap = min_gap.min(s.c_estimate - s.config.beta_floor);
        max_rise = max_rise.max(rise);
        pass &= s.boundary_sup <= 1e-9
            && s.config.beta_floor > 0.0
            && gamma_min >= s.config.beta_floor
            && rise <= 0.0
            && s.c_estimate >= s.config.beta_floor - 1e-8;
    }
    outcome(
        pass,
        format!(
            "{} runs, max sup F on boundary {max_boundary:.1e}, min c - beta_floor {min_gap:.3e}, max sup rise {max_rise:.1e}",
            accepted.len()
        ),
    )
}

fn criterion_9(base: &LarmorTable) -> Outcome {
    let (table, _, _) = larmor_runs(64, None);
    let mut worst = 0.0f64;
    let mut pass = true;
    for ((b, k, lo), (_, _, hi)) in base.iter().zip(&table) {
        match (lo, hi) {
            (Ok((r0, p0)), Ok((r1, p1))) => worst = worst.max((r0 - r1).abs()).max((p0 - p1).abs()),
            _ => {
                pass = false;
                println!("  B {b} k {k}: missing run at one of the truncations");
            }
        }
    }
    outcome(pass && worst < 1e-6, format!("max change K=16 -> 64: {worst:.1e}"))
}

/// Doubling the resolution of the `Sigma` sample (slice grid and string
/// points) moves `c_estimate` by less than `1e-4`.
fn sigma_refinement() -> Outcome {
    let cases = [
        (ModelSystem::harmonic_oscillator(1, 1.0), vec![], 0.1),
        (ModelSystem::constant_magnetic(1.0), vec![0.0, 0.0], 0.25),
        (ModelSystem::varying_magnetic(1.0, 0.3), vec![0.0, 0.0], 0.25),
    ];
    let mut worst = 0.0f64;
    for (sys, m, eps) in cases {
        let c = |grid: usize, points: usize| {
            let profile = build_profile(&sys, &m, eps, &ProfileSettings::default())?;
            let fam = ActionFamily::new(&sys, &profile, LoopGrid::with_oversample(8, 4)?);
            let s = MinimaxSettings { sigma_grid: grid, string_points: points, max_string_points: 4 * points, ..Default::default() };
            minimax_search(&fam, core::slice::from_ref(&m), &s).map(|o| o.c_estimate)
        };
        match (c(3, 33), c(5, 65)) {
            (Ok(a), Ok(b)) => worst = worst.max((a - b).abs()),
            (a, b) => return outcome(false, format!("eps {eps}: {:?} / {:?}", a.err(), b.err())),
        }
    }
    outcome(worst < 1e-4, format!("3 systems, max change in c_estimate {worst:.1e}"))
}

const Q_CONFIG: &str = r#"
[system]
kind = "oscillator"
chart_radius = 50.0

[experiment]
kind = "find-orbit"
epsilon = 0.1
"#;

fn criterion_10() -> Outcome {
    let even = ExperimentConfig::from_toml(&format!("{Q_CONFIG}\n[profile]\nq = 2.0\n")).unwrap();
    let report = validate(&even);
    let rejected = !report.ok() && report.violations().any(|c| c.detail.contains("even integer"));
    let near = ExperimentConfig::from_toml(&format!("{Q_CONFIG}\n[profile]\nq = 2.01\n")).unwrap();
    let admitted = validate(&near).ok();

    let run = |seed| {
        let sys = ModelSystem::harmonic_oscillator(1, 1.0).with_chart_radius(50.0);
        let profile = build_profile(&sys, &[], 0.1, &ProfileSettings { q: 2.01, ..Default::default() })?;
        let fam = ActionFamily::new(&sys, &profile, LoopGrid::with_oversample(6, 4)?);
        let settings = MinimaxSettings { budget: 5_000, seed, ..Default::default() };
        minimax_search(&fam, &[vec![]], &settings).map(|o| palais_smale_monitor(&o.ps_samples))
    };
    match (run(7), run(7)) {
        (Ok(a), Ok(b)) => outcome(
            rejected && admitted && a.slow_decay && a == b,
            format!(
                "q = 2 rejected {rejected}, q = 2.01 admitted {admitted}, slow decay {} (tail ratio {:.3e}), reproducible {}",
                a.slow_decay,
                a.tail_ratio,
                a == b
            ),
        ),
        (a, b) => outcome(false, format!("{:?} / {:?}", a.err(), b.err())),
    }
}

fn main() {
    let mut accepted = Vec::new();
    let mut results: Vec<(u32, Outcome)> = Vec::new();
    let mut report = |n: u32, o: Outcome| {
        let label = if n == 0 { "check sigma-refinement".to_string() } else { format!("criterion {n:>2}") };
        println!("{label} {}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, o));
    };
    report(1, criterion_1(&mut accepted));
    let (larmor, pass, detail) = larmor_runs(16, Some(&mut accepted));
    report(2, outcome(pass, detail));
    report(3, criterion_3(&mut accepted));
    report(4, criterion_4());
    report(5, criterion_5());
    report(6, criterion_6());
    report(7, criterion_7(&accepted));
    report(8, criterion_8(&accepted));
    report(9, criterion_9(&larmor));
    report(10, criterion_10());
    report(0, sigma_refinement());
    let failed: Vec<u32> = results.iter().filter(|(_, o)| !o.pass).map(|(n, _)| *n).collect();
    if failed.is_empty() {
        println!("acceptance: all criteria pass");
    } else {
        println!("acceptance: failing criteria {failed:?} (0 = sigma refinement)");
        std::process::exit(1);
    }
}
