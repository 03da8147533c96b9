//! Artifact writers. JSON summaries carry no timings so reruns are byte-identical.

use std::fs;
use std::path::Path;

use orbitlab_core::loops::FourierLoop;
use orbitlab_core::minimax::palais_smale_monitor;
use orbitlab_core::orbits::OrbitRun;
use orbitlab_core::system::ModelSystem;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Parameters {
    pub gamma: f64,
    pub r: f64,
    pub b: f64,
    pub q: f64,
    pub tau: f64,
    pub alpha: f64,
    pub beta_floor: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    pub closure: f64,
    pub max_distance: f64,
    pub ode: f64,
    pub polish: f64,
    pub grad_norm: f64,
    pub energy_deviation: f64,
    pub lambda_spread: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSummary {
    pub c_estimate: f64,
    pub boundary_sup: f64,
    pub converged: bool,
    pub evaluations: usize,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub linking_ok: bool,
    pub linking_fibre: Vec<f64>,
    pub newton_iterations: usize,
    pub null_directions: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsSummary {
    pub bounded: bool,
    pub cauchy: bool,
    pub slow_decay: bool,
    /// Absent when no outer samples were recorded.
    pub tail_ratio: Option<f64>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrbitSummary {
    pub epsilon: f64,
    pub verified: bool,
    pub m: Vec<f64>,
    pub rho: f64,
    pub energy: f64,
    pub period_phys: f64,
    pub action: f64,
    pub critical_value: f64,
    pub spectral_decay_zeta: f64,
    pub residuals: Residuals,
    pub parameters: Parameters,
    pub search: SearchSummary,
    pub palais_smale: PsSummary,
    #[serde(rename = "loop")]
    pub fourier_loop: FourierLoop,
}

impl OrbitSummary {
    pub fn from_run(run: &OrbitRun) -> Self {
        let o = &run.orbit;
        let c = &run.candidate;
        let s = &run.search;
        let ps = palais_smale_monitor(&s.ps_samples);
        Self {
            epsilon: run.epsilon,
            verified: run.verified,
            m: o.m.clone(),
            rho: o.rho,
            energy: o.energy,
            period_phys: o.period_phys,
            action: o.action,
            critical_value: c.value,
            spectral_decay_zeta: o.spectral_decay_zeta,
            residuals: Residuals {
                closure: run.verification.closure,
                max_distance: run.verification.max_distance,
                ode: o.ode_residual,
                polish: c.polish_residual,
                grad_norm: c.grad_norm,
                energy_deviation: o.energy_deviation,
                lambda_spread: o.lambda_spread,
            },
            parameters: Parameters {
                gamma: run.profile.gamma,
                r: run.profile.r,
                b: run.profile.b,
                q: run.profile.q,
                tau: s.config.tau,
                alpha: s.config.alpha,
                beta_floor: s.config.beta_floor,
            },
            search: SearchSummary {
                c_estimate: s.c_estimate,
                boundary_sup: s.boundary_sup,
                converged: s.converged,
                evaluations: s.evaluations,
                accepted_steps: s.accepted_steps,
                rejected_steps: s.rejected_steps,
                linking_ok: s.linking_ok,
                linking_fibre: s.linking_fibre.clone(),
                newton_iterations: c.iterations,
                null_directions: c.null_directions,
            },
            palais_smale: PsSummary {
                bounded: ps.bounded,
                cauchy: ps.cauchy,
                slow_decay: ps.slow_decay,
                tail_ratio: ps.tail_ratio.is_finite().then_some(ps.tail_ratio),
                warnings: ps.warnings,
            },
            fourier_loop: c.z.clone(),
        }
    }
}

/// Outcome of one level: a summary or the failure that stopped it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum LevelEntry {
    Ok(Box<OrbitSummary>),
    Failed { epsilon: f64, exit_code: i32, message: String },
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// `t, q_1.., p_1.., H` with `q` the first half of the phase coordinates.
pub fn write_orbit_csv(path: &Path, system: &ModelSystem, run: &OrbitRun) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    let n = system.n;
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("q{i}")));
    header.extend((1..=n).map(|i| format!("p{i}")));
    header.push("H".into());
    w.write_record(&header)?;
    for (t, x) in run.orbit.times.iter().zip(&run.orbit.samples) {
        let mut row = vec![t.to_string()];
        row.extend(x.iter().map(f64::to_string));
        row.push(system.hamiltonian(x).to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trace_csv(path: &Path, run: &OrbitRun) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "sup_value", "front_size"])?;
    for e in &run.search.trace {
        w.write_record([e.time.to_string(), e.sup.to_string(), e.front_size.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the Fourier loop back out of a JSON orbit summary.
pub fn read_loop(path: &Path) -> Result<FourierLoop, CliError> {
    let text = fs::read_to_string(path)?;
    let summary: OrbitSummary = serde_json::from_str(&text)?;
    let z = summary.fourier_loop;
    FourierLoop::from_coeffs(&z.m, z.k_max, z.dim, z.tangent_dim, z.coeffs.clone())?;
    Ok(z)
}
