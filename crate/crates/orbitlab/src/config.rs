//! Experiment configuration: one TOML file per run.

use std::path::{Path, PathBuf};

use orbitlab_core::action::ProfileSettings;
use orbitlab_core::field::FourierField;
use orbitlab_core::minimax::MinimaxSettings;
use orbitlab_core::orbits::PipelineSettings;
use orbitlab_core::system::ModelSystem;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    /// Worker threads for per-epsilon fan-out; 0 picks the machine default.
    #[serde(default)]
    pub workers: usize,
    pub system: SystemBlock,
    #[serde(default)]
    pub discretization: Discretization,
    #[serde(default)]
    pub profile: ProfileBlock,
    #[serde(default)]
    pub minimax: MinimaxBlock,
    #[serde(default)]
    pub verification: VerificationBlock,
    pub experiment: Experiment,
    #[serde(default)]
    pub output: OutputBlock,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemBlock {
    #[serde(flatten)]
    pub model: SystemModel,
    pub chart_radius: Option<f64>,
    /// Declared half-dimensions, checked against the model when present.
    pub n: Option<usize>,
    pub l: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SystemModel {
    /// `H = a |z|^2` on `R^{2 dim}`.
    Oscillator {
        #[serde(default = "one")]
        dim: usize,
        #[serde(default = "onef")]
        a: f64,
    },
    PointQuadratic {
        hessian_diag: Vec<f64>,
        #[serde(default)]
        quartic: f64,
        #[serde(default)]
        cubic: f64,
    },
    /// `H = |p|^2` on `T*T^2` with `B dq_1 ^ dq_2`.
    ConstantMagnetic { b: f64 },
    /// `B(q) = b0 + amp cos(q_1)`.
    VaryingMagnetic { b0: f64, amp: f64 },
    MagneticTorus {
        base_dim: usize,
        magnetic: Vec<MagneticEntry>,
        metric: Option<Vec<FourierField>>,
        #[serde(default)]
        quartic: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MagneticEntry {
    pub i: usize,
    pub j: usize,
    #[serde(flatten)]
    pub field: FourierField,
}

fn one() -> usize {
    1
}

fn onef() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Discretization {
    pub k_max: usize,
    pub oversample: usize,
    pub n_t: Option<usize>,
}

impl Default for Discretization {
    fn default() -> Self {
        let p = PipelineSettings::default();
        Self { k_max: p.k_max, oversample: p.oversample, n_t: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProfileBlock {
    pub q: f64,
    pub r_factor: f64,
    pub b_factor: f64,
    pub collar_width: f64,
    pub base_grid: usize,
    pub ray_count: usize,
}

impl Default for ProfileBlock {
    fn default() -> Self {
        let p = ProfileSettings::default();
        Self {
            q: p.q,
            r_factor: p.r_factor,
            b_factor: p.b_factor,
            collar_width: p.collar_width,
            base_grid: p.base_grid,
            ray_count: p.ray_count,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MinimaxBlock {
    pub alpha: Option<f64>,
    pub tau_margin: f64,
    pub budget: usize,
    pub plateau_window: usize,
    pub plateau_tol: f64,
    pub tol_grad: f64,
    pub sigma_grid: usize,
    pub string_points: usize,
    pub max_string_points: usize,
    pub capture: f64,
    pub gamma_samples: usize,
    pub step_tol: f64,
    pub newton_max_iter: usize,
}

impl Default for MinimaxBlock {
    fn default() -> Self {
        let m = MinimaxSettings::default();
        Self {
            alpha: m.alpha,
            tau_margin: m.tau_margin,
            budget: m.budget,
            plateau_window: m.plateau_window,
            plateau_tol: m.plateau_tol,
            tol_grad: m.tol_grad,
            sigma_grid: m.sigma_grid,
            string_points: m.string_points,
            max_string_points: m.max_string_points,
            capture: m.capture,
            gamma_samples: m.gamma_samples,
            step_tol: m.step_tol,
            newton_max_iter: m.newton_max_iter,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerificationBlock {
    pub integrator_tol: f64,
    pub closure_tol: f64,
}

impl Default for VerificationBlock {
    fn default() -> Self {
        let p = PipelineSettings::default();
        Self { integrator_tol: p.integrator_tol, closure_tol: p.closure_tol }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Experiment {
    /// Symplectic eigenvalues over a base grid (`grid` points per axis).
    Spectrum {
        #[serde(default = "spectrum_grid")]
        grid: usize,
    },
    FindOrbit {
        epsilon: f64,
        base_point: Option<Vec<f64>>,
    },
    LevelSequence {
        epsilons: Vec<f64>,
        base_point: Option<Vec<f64>>,
    },
    ConvergenceProbe {
        epsilons: Vec<f64>,
        base_point: Option<Vec<f64>>,
    },
}

fn spectrum_grid() -> usize {
    8
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputBlock {
    pub dir: PathBuf,
    pub formats: Vec<Format>,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self { dir: PathBuf::from("orbitlab-out"), formats: vec![Format::Csv, Format::Json] }
    }
}

/// Environment variable overriding `output.dir`.
pub const OUTPUT_DIR_ENV: &str = "ORBITLAB_OUTPUT_DIR";

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("cannot parse config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.output.dir.clone(),
        }
    }

    pub fn wants(&self, f: Format) -> bool {
        self.output.formats.contains(&f)
    }

    pub fn build_system(&self) -> Result<ModelSystem, CliError> {
        let mut sys = match &self.system.model {
            SystemModel::Oscillator { dim, a } => {
                ModelSystem::point_quadratic(vec![*a; 2 * dim], 0.0, 0.0)?
            }
            SystemModel::PointQuadratic { hessian_diag, quartic, cubic } => {
                ModelSystem::point_quadratic(hessian_diag.clone(), *quartic, *cubic)?
            }
            SystemModel::ConstantMagnetic { b } => ModelSystem::constant_magnetic(*b),
            SystemModel::VaryingMagnetic { b0, amp } => ModelSystem::varying_magnetic(*b0, *amp),
            SystemModel::MagneticTorus { base_dim, magnetic, metric, quartic } => {
                let entries = magnetic.iter().map(|e| (e.i, e.j, e.field.clone())).collect();
                ModelSystem::magnetic_torus(*base_dim, entries, metric.clone(), *quartic)?
            }
        };
        if let Some(r) = self.system.chart_radius {
            sys = sys.with_chart_radius(r);
        }
        Ok(sys)
    }

    pub fn base_point(&self, system: &ModelSystem) -> Vec<f64> {
        let given = match &self.experiment {
            Experiment::FindOrbit { base_point, .. }
            | Experiment::LevelSequence { base_point, .. }
            | Experiment::ConvergenceProbe { base_point, .. } => base_point.clone(),
            Experiment::Spectrum { .. } => None,
        };
        given.unwrap_or_else(|| vec![0.0; system.base_dim()])
    }

    pub fn epsilons(&self) -> Vec<f64> {
        match &self.experiment {
            Experiment::FindOrbit { epsilon, .. } => vec![*epsilon],
            Experiment::LevelSequence { epsilons, .. } | Experiment::ConvergenceProbe { epsilons, .. } => epsilons.clone(),
            Experiment::Spectrum { .. } => Vec::new(),
        }
    }

    pub fn profile_settings(&self) -> ProfileSettings {
        let p = &self.profile;
        ProfileSettings {
            q: p.q,
            r_factor: p.r_factor,
            b_factor: p.b_factor,
            collar_width: p.collar_width,
            base_grid: p.base_grid,
            ray_count: p.ray_count,
        }
    }

    pub fn minimax_settings(&self) -> MinimaxSettings {
        let m = &self.minimax;
        MinimaxSettings {
            alpha: m.alpha,
            tau_margin: m.tau_margin,
            budget: m.budget,
            plateau_window: m.plateau_window,
            plateau_tol: m.plateau_tol,
            tol_grad: m.tol_grad,
            sigma_grid: m.sigma_grid,
            string_points: m.string_points,
            max_string_points: m.max_string_points,
            capture: m.capture,
            gamma_samples: m.gamma_samples,
            step_tol: m.step_tol,
            newton_max_iter: m.newton_max_iter,
            seed: self.seed,
        }
    }

    pub fn pipeline_settings(&self, system: &ModelSystem) -> PipelineSettings {
        PipelineSettings {
            profile: self.profile_settings(),
            k_max: self.discretization.k_max,
            oversample: self.discretization.oversample,
            n_t: self.discretization.n_t,
            minimax: self.minimax_settings(),
            integrator_tol: self.verification.integrator_tol,
            closure_tol: self.verification.closure_tol,
            base_point: Some(self.base_point(system)),
        }
    }
}
