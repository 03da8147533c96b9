//! Experiment drivers behind `orbitlab run` and `orbitlab spectrum`.

use std::fs;
use std::path::{Path, PathBuf};

use orbitlab_core::orbits::{find_orbit, PipelineSettings};
use orbitlab_core::rescale::{convergence_probe, log_log_slope, spectrum};
use orbitlab_core::system::{BaseKind, ModelSystem};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Experiment, ExperimentConfig, Format};
use crate::output::{write_json, write_orbit_csv, write_trace_csv, LevelEntry, OrbitSummary};
use crate::{CliError, EXIT_OK, EXIT_VERIFICATION};

/// What a run produced: the exit status, a line per level for stdout and the files written.
#[derive(Clone, Debug, Default)]
pub struct RunReport {
    pub exit_code: i32,
    pub lines: Vec<String>,
    pub files: Vec<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRow {
    pub m: Vec<f64>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeSummary {
    pub m: Vec<f64>,
    pub epsilons: Vec<f64>,
    pub deviations: Vec<f64>,
    pub slope: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelsSummary {
    pub levels: Vec<LevelEntry>,
}

fn pool(workers: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {workers} workers: {e}")))
}

fn prepare_dir(config: &ExperimentConfig) -> Result<PathBuf, CliError> {
    let dir = config.output_dir();
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

pub fn run(config: &ExperimentConfig) -> Result<RunReport, CliError> {
    let system = config.build_system()?;
    match &config.experiment {
        Experiment::Spectrum { grid } => run_spectrum(config, &system, *grid),
        Experiment::FindOrbit { epsilon, .. } => run_levels(config, &system, &[*epsilon]),
        Experiment::LevelSequence { epsilons, .. } => {
            if epsilons.is_empty() {
                return Err(CliError::Config("level-sequence needs at least one epsilon".into()));
            }
            if epsilons.windows(2).any(|w| w[1] >= w[0]) {
                return Err(CliError::Config("epsilon list must be strictly decreasing".into()));
            }
            run_levels(config, &system, epsilons)
        }
        Experiment::ConvergenceProbe { epsilons, .. } => run_probe(config, &system, epsilons),
    }
}

/// Base grid with `per_axis` points per torus axis (a single point for point bases).
pub fn base_grid(system: &ModelSystem, per_axis: usize) -> Vec<Vec<f64>> {
    let d = system.base_dim();
    if system.base_kind() == BaseKind::Point || d == 0 {
        return vec![vec![0.0; d]];
    }
    let per_axis = per_axis.max(1);
    let step = 2.0 * std::f64::consts::PI / per_axis as f64;
    (0..per_axis.pow(d as u32))
        .map(|mut idx| {
            (0..d)
                .map(|_| {
                    let j = idx % per_axis;
                    idx /= per_axis;
                    j as f64 * step
                })
                .collect()
        })
        .collect()
}

pub fn run_spectrum(config: &ExperimentConfig, system: &ModelSystem, grid: usize) -> Result<RunReport, CliError> {
    let points = base_grid(system, grid);
    let rows: Vec<SpectrumRow> = pool(config.workers)?.install(|| {
        points
            .par_iter()
            .map(|m| spectrum(system, m).map(|s| SpectrumRow { m: s.m, values: s.values }))
            .collect::<Result<_, _>>()
    })?;
    let dir = prepare_dir(config)?;
    let mut report = RunReport::default();
    if config.wants(Format::Csv) {
        let path = dir.join("spectrum.csv");
        let mut w = csv::Writer::from_path(&path)?;
        let mut header: Vec<String> = (1..=system.base_dim()).map(|i| format!("x{i}")).collect();
        header.extend((1..=system.n - system.l).map(|i| format!("a{i}")));
        w.write_record(&header)?;
        for r in &rows {
            w.write_record(r.m.iter().chain(&r.values).map(f64::to_string))?;
        }
        w.flush()?;
        report.files.push(path);
    }
    if config.wants(Format::Json) {
        let path = dir.join("spectrum.json");
        write_json(&path, &rows)?;
        report.files.push(path);
    }
    let lo = rows.iter().flat_map(|r| r.values.iter().copied()).fold(f64::INFINITY, f64::min);
    let hi = rows.iter().flat_map(|r| r.values.iter().copied()).fold(f64::NEG_INFINITY, f64::max);
    report.lines.push(format!("spectrum: {} base points, a in [{lo:.6e}, {hi:.6e}]", rows.len()));
    Ok(report)
}

fn write_level(dir: &Path, config: &ExperimentConfig, system: &ModelSystem, i: usize, run: &orbitlab_core::orbits::OrbitRun, files: &mut Vec<PathBuf>) -> Result<OrbitSummary, CliError> {
    let summary = OrbitSummary::from_run(run);
    if config.wants(Format::Csv) {
        let orbit = dir.join(format!("orbit_{i}.csv"));
        write_orbit_csv(&orbit, system, run)?;
        let trace = dir.join(format!("trace_{i}.csv"));
        write_trace_csv(&trace, run)?;
        files.extend([orbit, trace]);
    }
    if config.wants(Format::Json) {
        let path = dir.join(format!("orbit_{i}.json"));
        write_json(&path, &summary)?;
        files.push(path);
    }
    Ok(summary)
}

/// Runs the pipeline at each level in parallel; results keep the input order.
///
/// Exit status is 0 when at least one level verifies, otherwise the code of
/// the first failure (5 for orbits found but not verified).
pub fn run_levels(config: &ExperimentConfig, system: &ModelSystem, epsilons: &[f64]) -> Result<RunReport, CliError> {
    let settings: PipelineSettings = config.pipeline_settings(system);
    let outcomes: Vec<_> = pool(config.workers)?
        .install(|| epsilons.par_iter().map(|&eps| find_orbit(system, eps, &settings)).collect());
    let dir = prepare_dir(config)?;
    let mut report = RunReport::default();
    let mut levels = Vec::with_capacity(epsilons.len());
    let mut first_failure = None;
    let mut any_verified = false;
    for (i, (&eps, outcome)) in epsilons.iter().zip(outcomes).enumerate() {
        match outcome {
            Ok(run) => {
                let summary = write_level(&dir, config, system, i, &run, &mut report.files)?;
                report.lines.push(format!(
                    "eps = {eps}: {} energy = {:.9e} period = {:.9e} action = {:.9e} closure = {:.3e}",
                    if run.verified { "verified" } else { "NOT verified" },
                    summary.energy,
                    summary.period_phys,
                    summary.action,
                    summary.residuals.closure
                ));
                for w in &summary.palais_smale.warnings {
                    report.lines.push(format!("eps = {eps}: warning: {w}"));
                }
                if run.verified {
                    any_verified = true;
                } else {
                    first_failure.get_or_insert(EXIT_VERIFICATION);
                }
                levels.push(LevelEntry::Ok(Box::new(summary)));
            }
            Err(e) => {
                let err = CliError::from(e);
                let code = err.exit_code();
                report.lines.push(format!("eps = {eps}: failed (exit {code}): {err}"));
                first_failure.get_or_insert(code);
                levels.push(LevelEntry::Failed { epsilon: eps, exit_code: code, message: err.to_string() });
            }
        }
    }
    if config.wants(Format::Json) {
        let path = dir.join("summary.json");
        write_json(&path, &LevelsSummary { levels })?;
        report.files.push(path);
    }
    report.exit_code = if any_verified { EXIT_OK } else { first_failure.unwrap_or(EXIT_OK) };
    Ok(report)
}

pub fn run_probe(config: &ExperimentConfig, system: &ModelSystem, epsilons: &[f64]) -> Result<RunReport, CliError> {
    if epsilons.len() < 2 || epsilons.iter().any(|e| !(*e > 0.0)) {
        return Err(CliError::Config("convergence-probe needs at least two positive epsilons".into()));
    }
    let m = config.base_point(system);
    let deviations = convergence_probe(system, &m, epsilons)?;
    let slope = log_log_slope(epsilons, &deviations);
    let dir = prepare_dir(config)?;
    let mut report = RunReport::default();
    if config.wants(Format::Csv) {
        let path = dir.join("convergence.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["epsilon", "deviation"])?;
        for (e, d) in epsilons.iter().zip(&deviations) {
            w.write_record([e.to_string(), d.to_string()])?;
        }
        w.flush()?;
        report.files.push(path);
    }
    if config.wants(Format::Json) {
        let path = dir.join("convergence.json");
        write_json(&path, &ProbeSummary { m, epsilons: epsilons.to_vec(), deviations: deviations.clone(), slope })?;
        report.files.push(path);
    }
    report.lines.push(format!("convergence: log-log slope {slope:.6}"));
    Ok(report)
}
