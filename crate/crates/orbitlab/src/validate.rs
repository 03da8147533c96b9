//! Pre-flight checks for a config, plus the parameter ledger per level.

use std::fmt;

use orbitlab_core::action::{build_profile_unchecked, check_q, epsilon_max, ActionFamily};
use orbitlab_core::loops::LoopGrid;
use orbitlab_core::minimax::{choose_parameters, spectral_q_check};

use crate::config::{Experiment, ExperimentConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub ok: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LedgerRow {
    pub epsilon: f64,
    pub epsilon_max: f64,
    pub gamma: f64,
    pub r: f64,
    pub b: f64,
    pub tau: f64,
    pub alpha: f64,
    pub beta_floor: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
    pub ledger: Vec<LedgerRow>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.checks.iter().all(|c| c.ok)
    }

    pub fn violations(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.ok)
    }

    fn push(&mut self, name: impl Into<String>, ok: bool, detail: impl Into<String>) {
        self.checks.push(Check { name: name.into(), ok, detail: detail.into() });
    }

    fn push_result<T, E: fmt::Display>(&mut self, name: impl Into<String>, r: &Result<T, E>, ok_detail: &str) {
        match r {
            Ok(_) => self.push(name, true, ok_detail),
            Err(e) => self.push(name, false, e.to_string()),
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{} {}: {}", if c.ok { "ok  " } else { "FAIL" }, c.name, c.detail)?;
        }
        if !self.ledger.is_empty() {
            writeln!(f, "{:>10} {:>10} {:>12} {:>12} {:>12} {:>12} {:>12} {:>12}", "eps", "eps_max", "gamma", "r", "b", "tau", "alpha", "beta_floor")?;
            for r in &self.ledger {
                writeln!(
                    f,
                    "{:>10.4e} {:>10.4e} {:>12.5e} {:>12.5e} {:>12.5e} {:>12.5e} {:>12.5e} {:>12.5e}",
                    r.epsilon, r.epsilon_max, r.gamma, r.r, r.b, r.tau, r.alpha, r.beta_floor
                )?;
            }
        }
        Ok(())
    }
}

pub fn validate(config: &ExperimentConfig) -> ValidationReport {
    let mut rep = ValidationReport::default();
    let system = match config.build_system() {
        Ok(s) => {
            rep.push("system", true, format!("n = {}, l = {}", s.n, s.l));
            s
        }
        Err(e) => {
            rep.push("system", false, e.to_string());
            return rep;
        }
    };
    for (name, declared, actual) in [("n", config.system.n, system.n), ("l", config.system.l, system.l)] {
        if let Some(d) = declared {
            rep.push(format!("declared {name}"), d == actual, format!("declared {d}, model has {actual}"));
        }
    }
    let (n, l) = (config.system.n.unwrap_or(system.n), config.system.l.unwrap_or(system.l));

    let q = config.profile.q;
    rep.push_result("q admissible", &check_q(q, n, l), &format!("q = {q}"));
    let k_max = config.discretization.k_max;
    match spectral_q_check(k_max, q) {
        Ok(c) => rep.push("q spectrum", true, format!("margin {:.3e} at mode {}", c.margin, c.nearest_k)),
        Err(e) => rep.push("q spectrum", false, e.to_string()),
    }
    rep.push("K", k_max >= 4, format!("K = {k_max} (need >= 4)"));

    let mm = &config.minimax;
    let v = &config.verification;
    let positive = [
        ("minimax.plateau_tol", mm.plateau_tol),
        ("minimax.tol_grad", mm.tol_grad),
        ("minimax.capture", mm.capture),
        ("minimax.step_tol", mm.step_tol),
        ("verification.integrator_tol", v.integrator_tol),
        ("verification.closure_tol", v.closure_tol),
    ];
    for (name, x) in positive {
        if !(x > 0.0 && x.is_finite()) {
            rep.push(name, false, format!("{x} must be positive"));
        }
    }
    if let Some(a) = mm.alpha {
        rep.push("minimax.alpha", a > 0.0 && a.is_finite(), format!("alpha = {a}"));
    }
    rep.push("minimax.tau_margin", mm.tau_margin >= 1.0, format!("{} (need >= 1)", mm.tau_margin));
    rep.push("minimax.sigma_grid", mm.sigma_grid % 2 == 1, format!("{} (must be odd)", mm.sigma_grid));
    if mm.budget == 0 {
        rep.push("minimax.budget", false, "budget must be positive");
    }

    let epsilons = config.epsilons();
    match &config.experiment {
        Experiment::LevelSequence { .. } => {
            let dec = !epsilons.is_empty() && epsilons.windows(2).all(|w| w[1] < w[0]);
            rep.push("epsilon order", dec, "levels must be non-empty and strictly decreasing");
        }
        Experiment::ConvergenceProbe { .. } => {
            rep.push("epsilon count", epsilons.len() >= 2, format!("{} levels (need >= 2)", epsilons.len()));
        }
        _ => {}
    }
    if matches!(config.experiment, Experiment::ConvergenceProbe { .. } | Experiment::Spectrum { .. }) {
        return rep;
    }

    let m = config.base_point(&system);
    if m.len() != system.base_dim() {
        rep.push("base point", false, format!("length {} but base dimension {}", m.len(), system.base_dim()));
        return rep;
    }
    let profile_settings = config.profile_settings();
    let eps_max = match epsilon_max(&system, &m, &profile_settings) {
        Ok(e) => e,
        Err(e) => {
            rep.push("epsilon_max", false, e.to_string());
            return rep;
        }
    };
    let grid = match config.discretization.n_t {
        Some(nt) => LoopGrid::new(k_max, nt),
        None => LoopGrid::with_oversample(k_max, config.discretization.oversample),
    };
    let grid = match grid {
        Ok(g) => g,
        Err(e) => {
            rep.push("grid", false, e.to_string());
            return rep;
        }
    };
    let minimax = config.minimax_settings();
    for eps in epsilons {
        let tag = format!("eps = {eps}");
        rep.push(format!("{tag}: range"), eps > 0.0 && eps < eps_max, format!("need 0 < eps < eps_max = {eps_max:.6e}"));
        let profile = match build_profile_unchecked(&system, &m, eps, &profile_settings) {
            Ok(p) => p,
            Err(e) => {
                rep.push(format!("{tag}: profile"), false, e.to_string());
                continue;
            }
        };
        let windows = profile.window_report();
        if windows.ok() {
            rep.push(format!("{tag}: windows"), true, "gamma < r < 2 gamma, (q/2) pi r^2 < b < q pi r^2");
        }
        for v in &windows.violations {
            rep.push(format!("{tag}: windows"), false, v.clone());
        }
        if !windows.ok() {
            continue;
        }
        let family = ActionFamily::new(&system, &profile, grid.clone());
        match choose_parameters(&family, std::slice::from_ref(&m), &minimax) {
            Ok(c) => {
                rep.push(format!("{tag}: linking"), true, format!("{:?} branch, beta_floor {:.4e}", c.tau_branch, c.beta_floor));
                rep.ledger.push(LedgerRow {
                    epsilon: eps,
                    epsilon_max: eps_max,
                    gamma: profile.gamma,
                    r: profile.r,
                    b: profile.b,
                    tau: c.tau,
                    alpha: c.alpha,
                    beta_floor: c.beta_floor,
                });
            }
            Err(e) => rep.push(format!("{tag}: linking"), false, e.to_string()),
        }
    }
    rep
}
