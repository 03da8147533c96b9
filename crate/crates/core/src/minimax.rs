//! Linking sets, the negative `H^{1/2}`-gradient flow, the minimax search
//! for a positive critical value, Newton polishing and Palais-Smale
//! diagnostics.
//!
//! `Sigma` is sampled by strings `s -> v + s e_N^+`, `s in [0, tau]`, with `v`
//! on a grid in the span of the `k = -1` and `k = 0` normal modes. `Gamma`
//! is sampled on the sphere `|y+|^2 = alpha` of `E+ ∩ E_N`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::action::{ActionFamily, ActionFunctional, SECTION_CONSTANT};
use crate::linalg;
use crate::loops::{e_n_plus, FourierLoop, Part};
use crate::sampling;
use crate::system::{Model, ModelSystem};
use crate::{Error, Result};

/// Search settings (all tolerances are positive).
#[derive(Clone, Debug, PartialEq)]
pub struct MinimaxSettings {
    /// Requested `alpha`; `None` uses `eps^2 / a_max`.
    pub alpha: Option<f64>,
    pub tau_margin: f64,
    /// Budget in functional evaluations.
    pub budget: usize,
    pub plateau_window: usize,
    pub plateau_tol: f64,
    pub tol_grad: f64,
    /// Grid points per axis of the `Sigma` slice; odd, so the centre string is sampled.
    pub sigma_grid: usize,
    /// Samples along each string.
    pub string_points: usize,
    /// Cap on points per string after adaptive refinement of the sample.
    pub max_string_points: usize,
    /// Newton polishing is attempted only when the first Newton step is
    /// shorter than this fraction of the candidate's norm.
    pub capture: f64,
    pub gamma_samples: usize,
    /// Relative local error tolerance of the flow integrator.
    pub step_tol: f64,
    pub newton_max_iter: usize,
    pub seed: u64,
}

impl Default for MinimaxSettings {
    fn default() -> Self {
        Self {
            alpha: None,
            tau_margin: 1.05,
            budget: 100_000,
            plateau_window: 50,
            plateau_tol: 1e-8,
            tol_grad: 1e-9,
            sigma_grid: 3,
            string_points: 33,
            max_string_points: 129,
            capture: 1e-2,
            gamma_samples: 64,
            step_tol: 1e-3,
            newton_max_iter: 30,
            seed: 0,
        }
    }
}

/// Resonance margin of `q` against the spectrum `{2 pi k}` of `u -> J u'`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QCheck {
    pub q: f64,
    pub k_max: usize,
    pub margin: f64,
    /// Mode index closest to resonance.
    pub nearest_k: i64,
}

pub fn spectral_q_check(k_max: usize, q: f64) -> Result<QCheck> {
    if libm::fmod(q, 2.0) == 0.0 {
        return Err(Error::EvenQ { q });
    }
    let kmax = k_max as i64;
    let (mut margin, mut nearest) = (f64::INFINITY, 0);
    for k in -kmax..=kmax {
        let d = libm::fabs(q * PI - 2.0 * PI * k as f64);
        if d < margin {
            margin = d;
            nearest = k;
        }
    }
    Ok(QCheck { q, k_max, margin, nearest_k: nearest })
}

/// Which sufficiency condition fixes `tau`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TauBranch {
    /// `tau^2 / 2 >= b`.
    Half,
    /// `tau^2 ((q/2) pi c - pi) >= b`.
    Tail,
}

#[derive(Clone, Debug)]
pub struct LinkingConfig {
    pub tau: f64,
    pub tau_branch: TauBranch,
    pub alpha: f64,
    pub alpha_halvings: usize,
    pub beta_floor: f64,
    pub gamma_sample: Vec<FourierLoop>,
}

/// Chooses `tau` and `alpha` and certifies `min F` on the `Gamma` sample.
pub fn choose_parameters(family: &ActionFamily, base_points: &[Vec<f64>], settings: &MinimaxSettings) -> Result<LinkingConfig> {
    if settings.sigma_grid % 2 == 0 {
        return Err(Error::Config(format!("sigma_grid = {} must be odd", settings.sigma_grid)));
    }
    let p = &family.profile;
    let tail = 0.5 * p.q * PI * SECTION_CONSTANT - PI;
    if tail <= 0.0 {
        return Err(Error::Config(format!("q = {} does not exceed 2/c; Sigma cannot be closed", p.q)));
    }
    let (need, branch) = if 2.0 * p.b >= p.b / tail { (2.0 * p.b, TauBranch::Half) } else { (p.b / tail, TauBranch::Tail) };
    let tau = libm::sqrt(need) * settings.tau_margin;
    let request = settings.alpha.unwrap_or(p.epsilon * p.epsilon / p.a_max);
    let mut alpha = request.min(0.25 * tau * tau);
    let mut halvings = 0;
    let fams: Vec<ActionFunctional> = base_points.iter().map(|m| family.at(m)).collect::<Result<_>>()?;
    loop {
        let gamma_sample = gamma_sample(&fams, alpha, settings.gamma_samples, settings.seed)?;
        let mut min_f = f64::INFINITY;
        for z in &gamma_sample {
            let f = fams.iter().find(|f| f.hm.m() == z.m.as_slice()).expect("sample base");
            min_f = min_f.min(f.value(z)?);
        }
        if min_f >= 0.25 * alpha {
            return Ok(LinkingConfig { tau, tau_branch: branch, alpha, alpha_halvings: halvings, beta_floor: min_f, gamma_sample });
        }
        alpha *= 0.5;
        halvings += 1;
        if alpha < 1e-8 {
            return Err(Error::Linking(format!(
                "F on Gamma stays below alpha/4 down to alpha = {alpha:e}; h_m is not flat near the zero section"
            )));
        }
    }
}

/// Seeded random loops of normal `k = 1..3` modes with `|y+|^2 = alpha`,
/// cycling over the given base points.
fn gamma_sample(fams: &[ActionFunctional], alpha: f64, count: usize, seed: u64) -> Result<Vec<FourierLoop>> {
    let mut rng = sampling::rng(seed ^ 0x9e37_79b9_7f4a_7c15);
    let grid = &fams[0].grid;
    let mut out = Vec::with_capacity(count);
    for i in 0..count.max(1) {
        let f = &fams[i % fams.len()];
        let (dim, t) = (f.hm.dim(), f.hm.tangent_dim());
        let mut z = FourierLoop::zeros(f.hm.m(), grid.k_max, dim, t);
        for k in 1..=grid.k_max.min(3) as i64 {
            for c in t..dim {
                z.mode_mut(k)[c] = sampling::gaussian(&mut rng) / k as f64;
            }
        }
        let n = z.h_half();
        if n == 0.0 {
            continue;
        }
        z.scale(libm::sqrt(alpha) / n);
        out.push(z);
    }
    if out.is_empty() {
        return Err(Error::Linking("empty Gamma sample".into()));
    }
    Ok(out)
}

/// `H^{1/2}` distance from `z` to the sphere `{|y+|^2 = alpha} ⊂ E+ ∩ E_N`
/// in the fibre of `z`.
pub fn distance_to_gamma(z: &FourierLoop, alpha: f64) -> f64 {
    let pn = z.project(Part::Plus).project(Part::Normal);
    let off = z.sub(&pn).h_half_sq();
    let radial = pn.h_half() - libm::sqrt(alpha);
    libm::sqrt(off + radial * radial)
}

/// Unit directions (in `H^{1/2}`) spanning the `Sigma` slice at `m`.
fn slice_directions(m: &[f64], k_max: usize, dim: usize, t: usize) -> Vec<FourierLoop> {
    let mut out = Vec::new();
    for k in [-1i64, 0] {
        for c in t..dim {
            let mut z = FourierLoop::zeros(m, k_max, dim, t);
            z.mode_mut(k)[c] = if k == 0 { 1.0 } else { 1.0 / libm::sqrt(2.0 * PI) };
            out.push(z);
        }
    }
    out
}

/// The `Sigma` sample: one string `s -> v + s e_N^+` per slice grid point `v`
/// (with `|v| <= tau`) and base point.
pub fn sigma_sample(family: &ActionFamily, base_points: &[Vec<f64>], config: &LinkingConfig, settings: &MinimaxSettings) -> Vec<Vec<FourierLoop>> {
    let k_max = family.grid.k_max;
    let dim = family.system.phase_dim();
    let t = family.system.base_dim();
    let mut strings = Vec::new();
    for m in base_points {
        let dirs = slice_directions(m, k_max, dim, t);
        let nd = dirs.len();
        let axis = if settings.sigma_grid <= 1 {
            vec![0.0]
        } else {
            let h = config.tau / libm::sqrt(nd as f64);
            sampling::linspace(-h, h, settings.sigma_grid)
        };
        let total = axis.len().pow(nd as u32);
        let e = e_n_plus(m, k_max, dim, t);
        for idx in 0..total {
            let mut rem = idx;
            let mut v = FourierLoop::zeros(m, k_max, dim, t);
            for d in &dirs {
                v.axpy(axis[rem % axis.len()], d);
                rem /= axis.len();
            }
            if v.h_half() > config.tau * (1.0 + 1e-12) {
                continue;
            }
            let string = sampling::linspace(0.0, config.tau, settings.string_points.max(2))
                .into_iter()
                .map(|s| {
                    let mut z = v.clone();
                    z.axpy(s, &e);
                    z
                })
                .collect();
            strings.push(string);
        }
    }
    strings
}

/// `sup F` over the boundary of the `Sigma` sample: string ends and strings
/// whose slice point lies on `|v| = tau`.
pub fn sigma_boundary_sup(family: &ActionFamily, strings: &[Vec<FourierLoop>], tau: f64) -> Result<f64> {
    let mut sup = f64::NEG_INFINITY;
    for s in strings {
        let v = s[0].h_half();
        let on_rim = v >= tau * (1.0 - 1e-9);
        let f = family.at(&s[0].m)?;
        for (i, z) in s.iter().enumerate() {
            if on_rim || i == 0 || i + 1 == s.len() {
                sup = sup.max(f.value(z)?);
            }
        }
    }
    Ok(sup)
}

/// Base axes along which every field of the system is invariant
/// (continuous symmetries of the functional besides the time shift).
pub fn symmetric_axes(system: &ModelSystem) -> Vec<usize> {
    match &system.model {
        Model::PointQuadratic(_) => Vec::new(),
        Model::MagneticTorus(t) => (0..t.dim)
            .filter(|&axis| {
                let flat = |f: &crate::field::FourierField| {
                    f.terms.iter().all(|term| term.k[axis] == 0 || (term.cos == 0.0 && term.sin == 0.0))
                };
                t.magnetic.iter().all(|(_, _, f)| flat(f)) && t.metric.as_ref().is_none_or(|g| g.iter().all(flat))
            })
            .collect(),
    }
}

/// A loop together with its value and `H^{1/2} x` base gradient.
#[derive(Clone, Debug)]
pub struct FrontPoint {
    pub z: FourierLoop,
    pub value: f64,
    pub grad: FourierLoop,
    pub grad_base: Vec<f64>,
}

impl FrontPoint {
    pub fn grad_norm(&self) -> f64 {
        libm::sqrt(self.grad.h_half_sq() + linalg::dot(&self.grad_base, &self.grad_base))
    }

    fn advanced(&self, dt: f64, grad: &FourierLoop, grad_base: &[f64]) -> FourierLoop {
        let m: Vec<f64> = self.z.m.iter().zip(grad_base).map(|(m, g)| m - dt * g).collect();
        let mut z = self.z.with_base(&m);
        z.axpy(-dt, grad);
        z
    }
}

/// Distance in `H^{1/2} x R^{2l}`.
fn combined_distance(a: &FourierLoop, b: &FourierLoop) -> f64 {
    let dm: f64 = a.m.iter().zip(&b.m).map(|(x, y)| (x - y) * (x - y)).sum();
    libm::sqrt(a.sub(&b.with_base(&a.m)).h_half_sq() + dm)
}

fn interpolate(a: &FourierLoop, b: &FourierLoop, u: f64) -> FourierLoop {
    let m: Vec<f64> = a.m.iter().zip(&b.m).map(|(x, y)| x + u * (y - x)).collect();
    let mut z = a.with_base(&m).scaled(1.0 - u);
    z.axpy(u, &b.with_base(&m));
    z
}

/// Evaluates points of the front, caching functionals by base point and
/// counting functional evaluations.
pub struct FlowContext<'a> {
    pub family: &'a ActionFamily,
    pub move_base: bool,
    pub evaluations: usize,
    cache: Vec<ActionFunctional>,
}

impl<'a> FlowContext<'a> {
    pub fn new(family: &'a ActionFamily) -> Self {
        Self { family, move_base: !family.system.is_homogeneous(), evaluations: 0, cache: Vec::new() }
    }

    fn functional(&mut self, m: &[f64]) -> Result<usize> {
        if let Some(i) = self.cache.iter().position(|f| f.hm.m() == m) {
            return Ok(i);
        }
        if self.cache.len() >= 8 {
            self.cache.remove(0);
        }
        self.cache.push(self.family.at(m)?);
        Ok(self.cache.len() - 1)
    }

    pub fn evaluate(&mut self, z: FourierLoop) -> Result<FrontPoint> {
        let i = self.functional(&z.m)?;
        let (value, grad) = self.cache[i].value_gradient(&z)?;
        self.evaluations += 1;
        let grad_base = if self.move_base {
            self.evaluations += 2 * z.m.len();
            self.family.gradient_base(&z)?
        } else {
            vec![0.0; z.m.len()]
        };
        Ok(FrontPoint { z, value, grad, grad_base })
    }
}

/// Strings of front points.
#[derive(Clone, Debug)]
pub struct Front {
    pub strings: Vec<Vec<FrontPoint>>,
}

impl Front {
    pub fn new(ctx: &mut FlowContext, strings: Vec<Vec<FourierLoop>>) -> Result<Self> {
        let strings = strings
            .into_iter()
            .map(|s| s.into_iter().map(|z| ctx.evaluate(z)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { strings })
    }

    pub fn size(&self) -> usize {
        self.strings.iter().map(Vec::len).sum()
    }

    pub fn points(&self) -> impl Iterator<Item = &FrontPoint> {
        self.strings.iter().flatten()
    }

    /// `(string, index, value)` of the largest value.
    pub fn argmax(&self) -> (usize, usize, f64) {
        let mut best = (0, 0, f64::NEG_INFINITY);
        for (i, s) in self.strings.iter().enumerate() {
            for (j, p) in s.iter().enumerate() {
                if p.value > best.2 {
                    best = (i, j, p.value);
                }
            }
        }
        best
    }

    pub fn sup(&self) -> f64 {
        self.argmax().2
    }

    fn scale(&self) -> f64 {
        self.points().map(|p| libm::sqrt(p.z.h_half_sq() + 0.0)).fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepOutcome {
    Accepted { error: f64, frozen: usize },
    Rejected { error: f64 },
}

/// One explicit midpoint step of the negative gradient flow on every front
/// point. The local error is the midpoint-Euler gap relative to the front
/// size; a point whose value would rise keeps its old state, so the sup
/// never increases.
pub fn flow_step(ctx: &mut FlowContext, front: &mut Front, dt: f64, tol: f64) -> Result<StepOutcome> {
    let scale = front.scale().max(ctx.family.profile.epsilon);
    let mut next = Vec::with_capacity(front.strings.len());
    let mut error = 0.0f64;
    for s in &front.strings {
        let mut row = Vec::with_capacity(s.len());
        for p in s {
            let half = ctx.evaluate(p.advanced(0.5 * dt, &p.grad, &p.grad_base))?;
            let gap_m: f64 = half.grad_base.iter().zip(&p.grad_base).map(|(a, b)| (a - b) * (a - b)).sum();
            let gap = dt * libm::sqrt(half.grad.sub(&p.grad).h_half_sq() + gap_m);
            error = error.max(gap / scale);
            row.push(p.advanced(dt, &half.grad, &half.grad_base));
        }
        next.push(row);
    }
    if error > tol || !error.is_finite() {
        return Ok(StepOutcome::Rejected { error });
    }
    let mut frozen = 0;
    for (s, row) in front.strings.iter_mut().zip(next) {
        for (p, z) in s.iter_mut().zip(row) {
            let q = ctx.evaluate(z)?;
            if q.value <= p.value {
                *p = q;
            } else {
                frozen += 1;
            }
        }
    }
    Ok(StepOutcome::Accepted { error, frozen })
}

/// Redistributes the points of each string uniformly in arclength. Returns
/// false (and leaves the front unchanged) if that would raise the sup.
pub fn reparametrize(ctx: &mut FlowContext, front: &mut Front) -> Result<bool> {
    let sup = front.sup();
    let mut strings = Vec::with_capacity(front.strings.len());
    for s in &front.strings {
        let n = s.len();
        let mut arc = vec![0.0; n];
        for j in 1..n {
            arc[j] = arc[j - 1] + combined_distance(&s[j - 1].z, &s[j].z);
        }
        let total = arc[n - 1];
        if total == 0.0 {
            strings.push(s.clone());
            continue;
        }
        let mut row = Vec::with_capacity(n);
        row.push(s[0].clone());
        let mut seg = 0;
        for j in 1..n - 1 {
            let target = total * j as f64 / (n - 1) as f64;
            while seg + 2 < n && arc[seg + 1] < target {
                seg += 1;
            }
            let len = arc[seg + 1] - arc[seg];
            let u = if len > 0.0 { ((target - arc[seg]) / len).clamp(0.0, 1.0) } else { 0.0 };
            row.push(ctx.evaluate(interpolate(&s[seg].z, &s[seg + 1].z, u))?);
        }
        row.push(s[n - 1].clone());
        strings.push(row);
    }
    let candidate = Front { strings };
    if candidate.sup() > sup {
        return Ok(false);
    }
    *front = candidate;
    Ok(true)
}

/// Bisects string segments whose value jump is large compared with the
/// string's value range, so the sample resolves the narrow ridge where `h`
/// switches on. Part of building the `Sigma` sample; runs before the flow.
pub fn refine_strings(ctx: &mut FlowContext, front: &mut Front, max_points: usize) -> Result<()> {
    for s in front.strings.iter_mut() {
        loop {
            if s.len() >= max_points {
                break;
            }
            let (lo, hi) = s.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.value), b.max(p.value)));
            let range = hi - lo;
            if range <= 0.0 {
                break;
            }
            let tol = 4.0 * range / max_points as f64;
            let (mut j_best, mut jump) = (0, 0.0);
            for j in 0..s.len() - 1 {
                let d = libm::fabs(s[j + 1].value - s[j].value);
                if d > jump {
                    (j_best, jump) = (j, d);
                }
            }
            if jump <= tol {
                break;
            }
            let mid = ctx.evaluate(interpolate(&s[j_best].z, &s[j_best + 1].z, 0.5))?;
            s.insert(j_best + 1, mid);
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceEntry {
    pub time: f64,
    pub sup: f64,
    pub front_size: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleRole {
    /// The front's sup point.
    Sup,
    /// The front point of largest norm.
    Outer,
}

/// One Palais-Smale sample along the flow.
#[derive(Clone, Debug)]
pub struct PsSample {
    pub role: SampleRole,
    pub time: f64,
    pub norm: f64,
    pub grad_norm: f64,
    pub value: f64,
    /// `z+ - z-` at the sample.
    pub pm: FourierLoop,
}

impl PsSample {
    fn new(role: SampleRole, time: f64, p: &FrontPoint) -> Self {
        Self { role, time, norm: p.z.h_half(), grad_norm: p.grad_norm(), value: p.value, pm: p.z.plus_minus_minus() }
    }

    /// Outer samples measure the `E+` normal parts only: the tail of `F` there
    /// is `(1 - q/2) |z+|^2 / 2`-like.
    fn outer(time: f64, p: &FrontPoint) -> Self {
        let plus = |z: &FourierLoop| z.project(Part::Plus).project(Part::Normal);
        Self {
            role: SampleRole::Outer,
            time,
            norm: plus(&p.z).h_half(),
            grad_norm: plus(&p.grad).h_half(),
            value: p.value,
            pm: p.z.plus_minus_minus(),
        }
    }
}

/// Ratio `|P+ grad F| / |P+ z|` on far loops below which decay is flagged as slow.
pub const SLOW_DECAY_RATIO: f64 = 0.05;

/// Diagnostics on the flow's sampled sequences.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PsReport {
    pub samples: usize,
    /// Length of the subsequence of sup points with record-low gradient.
    pub near_critical: usize,
    pub max_norm: f64,
    /// Last over first norm along the near-critical subsequence.
    pub norm_growth: f64,
    pub bounded: bool,
    /// `|(z+ - z-)_{i+1} - (z+ - z-)_i|` along the near-critical subsequence.
    pub cauchy_steps: Vec<f64>,
    pub cauchy: bool,
    /// Min of `|grad F| / |z|` over outer samples with at least half the max norm.
    pub tail_ratio: f64,
    pub slow_decay: bool,
    pub warnings: Vec<alloc::string::String>,
}

impl PsReport {
    pub fn clean(&self) -> bool {
        self.warnings.is_empty()
    }
}

pub fn palais_smale_monitor(samples: &[PsSample]) -> PsReport {
    if samples.is_empty() {
        return PsReport::default();
    }
    let mut sub: Vec<&PsSample> = Vec::new();
    for s in samples.iter().filter(|s| s.role == SampleRole::Sup) {
        if sub.last().is_none_or(|l| s.grad_norm < l.grad_norm) {
            sub.push(s);
        }
    }
    let max_norm = samples.iter().filter(|s| s.role == SampleRole::Sup).map(|s| s.norm).fold(0.0, f64::max);
    let norm_growth = match (sub.first(), sub.last()) {
        (Some(a), Some(b)) if a.norm > 0.0 => b.norm / a.norm,
        _ => 1.0,
    };
    let bounded = norm_growth <= 2.0;
    let cauchy_steps: Vec<f64> = sub.windows(2).map(|w| w[1].pm.sub(&w[0].pm).h_half()).collect();
    let scale = sub.iter().map(|s| s.norm).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let tail = &cauchy_steps[cauchy_steps.len() * 2 / 3..];
    let cauchy = tail.iter().all(|d| *d <= 0.1 * scale);
    let outer_max = samples.iter().filter(|s| s.role == SampleRole::Outer).map(|s| s.norm).fold(0.0, f64::max);
    let outer: Vec<&PsSample> = samples.iter().filter(|s| s.role == SampleRole::Outer && s.norm >= 0.5 * outer_max).collect();
    let tail_ratio = outer.iter().filter(|s| s.norm > 0.0).map(|s| s.grad_norm / s.norm).fold(f64::INFINITY, f64::min);
    let slow_decay = tail_ratio < SLOW_DECAY_RATIO;
    let mut warnings = Vec::new();
    if !bounded {
        warnings.push(format!("near-critical norms grow by a factor {norm_growth:.3}"));
    }
    if !cauchy {
        warnings.push("z+ - z- is not settling along the near-critical subsequence".into());
    }
    if slow_decay {
        warnings.push(format!(
            "slow gradient decay on large loops (|P+ grad F|/|P+ z| = {tail_ratio:.3e}); q is close to resonance"
        ));
    }
    PsReport {
        samples: samples.len(),
        near_critical: sub.len(),
        max_norm,
        norm_growth,
        bounded,
        cauchy_steps,
        cauchy,
        tail_ratio,
        slow_decay,
        warnings,
    }
}

#[derive(Clone, Debug)]
pub struct MinimaxOutcome {
    pub config: LinkingConfig,
    pub boundary_sup: f64,
    pub c_estimate: f64,
    /// Sup point of the front at the recorded time where its gradient was
    /// smallest (maximisers along strings are refined by golden section).
    pub candidate: FrontPoint,
    pub candidate_time: f64,
    pub converged: bool,
    pub trace: Vec<TraceEntry>,
    pub evaluations: usize,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    /// Per accepted step: min over the front of the distance to `Gamma`.
    pub linking_distance: Vec<f64>,
    pub linking_ok: bool,
    /// Base point of the front point closest to `Gamma` at the end.
    pub linking_fibre: Vec<f64>,
    pub ps_samples: Vec<PsSample>,
}

/// Runs the negative gradient flow on the `Sigma` sample until the sup
/// plateaus or the evaluation budget is spent, then refines the maximiser.
fn record_ps(front: &Front, t: f64, out: &mut Vec<PsSample>) {
    let (i, j, _) = front.argmax();
    out.push(PsSample::new(SampleRole::Sup, t, &front.strings[i][j]));
    // The farthest point along E+ with the least weight elsewhere.
    let lead = |p: &FrontPoint| {
        let plus = p.z.project(Part::Plus).project(Part::Normal).h_half_sq();
        2.0 * plus - p.z.h_half_sq()
    };
    let outer = front.points().max_by(|a, b| lead(a).total_cmp(&lead(b))).expect("non-empty front");
    out.push(PsSample::outer(t, outer));
}

pub fn minimax_search(family: &ActionFamily, base_points: &[Vec<f64>], settings: &MinimaxSettings) -> Result<MinimaxOutcome> {
    if base_points.is_empty() {
        return Err(Error::Config("no base points for the linking sample".into()));
    }
    let config = choose_parameters(family, base_points, settings)?;
    let sigma = sigma_sample(family, base_points, &config, settings);
    let boundary_sup = sigma_boundary_sup(family, &sigma, config.tau)?;
    if boundary_sup > 1e-9 {
        return Err(Error::Linking(format!("sup F on the boundary of Sigma is {boundary_sup:e} > 0")));
    }
    let mut ctx = FlowContext::new(family);
    let mut front = Front::new(&mut ctx, sigma)?;
    refine_strings(&mut ctx, &mut front, settings.max_string_points)?;
    let mut best = refine_along_string(&mut ctx, &front)?;
    let mut best_time = 0.0;
    let alpha = config.alpha;
    let mut trace = vec![TraceEntry { time: 0.0, sup: front.sup(), front_size: front.size() }];
    let mut linking_distance = Vec::new();
    let mut ps_samples = Vec::new();
    record_ps(&front, 0.0, &mut ps_samples);
    let (mut t, mut dt) = (0.0, 1e-2);
    let (mut accepted, mut rejected) = (0usize, 0usize);
    let mut converged = false;
    let per_step = 2 * front.size() * (1 + if ctx.move_base { 2 * family.system.base_dim() } else { 0 });
    while ctx.evaluations + per_step <= settings.budget {
        match flow_step(&mut ctx, &mut front, dt, settings.step_tol)? {
            StepOutcome::Rejected { error } => {
                rejected += 1;
                dt *= (0.9 * libm::sqrt(settings.step_tol / error)).clamp(0.1, 0.5);
                if !error.is_finite() {
                    dt *= 0.1;
                }
                if dt < 1e-12 {
                    let (_, j, _) = front.argmax();
                    return Err(Error::StepUnderflow { dt, index: j });
                }
                continue;
            }
            StepOutcome::Accepted { error, .. } => {
                accepted += 1;
                t += dt;
                dt *= (0.9 * libm::sqrt(settings.step_tol / error.max(1e-300))).min(2.0);
            }
        }
        if accepted % 10 == 0 && ctx.evaluations + front.size() <= settings.budget {
            reparametrize(&mut ctx, &mut front)?;
        }
        let sup = front.sup();
        trace.push(TraceEntry { time: t, sup, front_size: front.size() });
        linking_distance.push(front.points().map(|p| distance_to_gamma(&p.z, alpha)).fold(f64::INFINITY, f64::min));
        let (i, j, _) = front.argmax();
        let p = &front.strings[i][j];
        if p.grad_norm() < best.grad_norm() {
            best = p.clone();
            best_time = t;
        }
        record_ps(&front, t, &mut ps_samples);
        let w = settings.plateau_window;
        if trace.len() > w {
            let old = trace[trace.len() - 1 - w].sup;
            if old - sup <= settings.plateau_tol * libm::fabs(sup).max(1e-300) {
                converged = true;
                break;
            }
        }
    }
    let linking_ok = trace.iter().zip(core::iter::once(&0.0).chain(linking_distance.iter())).all(|(e, d)| {
        e.sup <= config.beta_floor || *d <= 10.0 * libm::sqrt(alpha)
    });
    let linking_fibre = front
        .points()
        .min_by(|a, b| distance_to_gamma(&a.z, alpha).total_cmp(&distance_to_gamma(&b.z, alpha)))
        .map(|p| p.z.m.clone())
        .unwrap_or_default();
    let last = refine_along_string(&mut ctx, &front)?;
    let c_estimate = last.value.max(front.sup());
    if last.grad_norm() <= best.grad_norm() {
        best = last;
        best_time = t;
    }
    let mut candidate = best;
    let mut m = candidate.z.m.clone();
    family.system.wrap_base(&mut m);
    if m != candidate.z.m {
        candidate = ctx.evaluate(candidate.z.with_base(&m))?;
    }
    if c_estimate < config.beta_floor - 1e-8 {
        return Err(Error::Linking(format!(
            "minimax estimate {c_estimate:e} fell below the Gamma floor {:e}",
            config.beta_floor
        )));
    }
    Ok(MinimaxOutcome {
        config,
        boundary_sup,
        c_estimate,
        candidate,
        candidate_time: best_time,
        converged,
        trace,
        evaluations: ctx.evaluations,
        accepted_steps: accepted,
        rejected_steps: rejected,
        linking_distance,
        linking_ok,
        linking_fibre,
        ps_samples,
    })
}

/// Golden-section maximisation of `F` along the polyline through the
/// neighbours of the front maximiser.
fn refine_along_string(ctx: &mut FlowContext, front: &Front) -> Result<FrontPoint> {
    let (i, j, _) = front.argmax();
    let s = &front.strings[i];
    let best = s[j].clone();
    if s.len() < 2 {
        return Ok(best);
    }
    let lo = j.saturating_sub(1) as f64;
    let hi = (j + 1).min(s.len() - 1) as f64;
    let at = |u: f64| {
        let k = (libm::floor(u) as usize).min(s.len() - 2);
        interpolate(&s[k].z, &s[k + 1].z, u - k as f64)
    };
    let phi = 0.5 * (libm::sqrt(5.0) - 1.0);
    let (mut a, mut b) = (lo, hi);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let mut fc = ctx.evaluate(at(c))?;
    let mut fd = ctx.evaluate(at(d))?;
    for _ in 0..40 {
        if fc.value > fd.value {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = ctx.evaluate(at(c))?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = ctx.evaluate(at(d))?;
        }
        if b - a < 1e-10 {
            break;
        }
    }
    let top = if fc.value > fd.value { fc } else { fd };
    Ok(if top.value > best.value { top } else { best })
}


/// Polished critical loop.
#[derive(Clone, Debug)]
pub struct CriticalCandidate {
    pub m: Vec<f64>,
    pub z: FourierLoop,
    pub value: f64,
    /// `H^{1/2}` norm of the gradient with the tangential mean released.
    pub grad_norm: f64,
    /// Max deviation of `z'` from `J grad h_m(z)` on the grid.
    pub polish_residual: f64,
    pub iterations: usize,
    /// Singular directions dropped from the last Newton solve.
    pub null_directions: usize,
    pub value_change: f64,
    pub polished: bool,
    /// Why polishing stopped short, when it did.
    pub note: Option<alloc::string::String>,
}

fn weights(z: &FourierLoop) -> Vec<f64> {
    let mut w = vec![0.0; z.coeffs.len()];
    for k in -(z.k_max as i64)..=z.k_max as i64 {
        let o = z.offset(k);
        let wk = if k == 0 { 1.0 } else { libm::sqrt(2.0 * PI * k.unsigned_abs() as f64) };
        w[o..o + z.dim].iter_mut().for_each(|x| *x = wk);
    }
    w
}

const LM_DAMPING: [f64; 9] = [0.0, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2];

/// Singular values below this fraction of the largest are treated as zero.
pub const NULL_CUTOFF: f64 = 1e-11;

/// Orthonormal symmetry directions in weighted coordinates: the time shift
/// `z'` and the chart pull-backs of shifts along invariant base axes.
fn symmetry_directions(fun: &ActionFunctional, z: &FourierLoop, w: &[f64], axes: &[usize]) -> Result<Vec<Vec<f64>>> {
    let weigh = |l: &FourierLoop| l.coeffs.iter().zip(w).map(|(c, w)| c * w).collect::<Vec<f64>>();
    let mut raw = vec![weigh(&z.derivative())];
    if !axes.is_empty() {
        let local = fun.hm.local();
        let samples = fun.grid.synthesize(z)?;
        let h = 1e-5;
        let mut amb = vec![0.0; z.dim];
        let (mut zp, mut zm) = (vec![0.0; z.dim], vec![0.0; z.dim]);
        for &a in axes {
            let mut diff = vec![0.0; samples.len()];
            for (p, out) in samples.chunks(z.dim).zip(diff.chunks_mut(z.dim)) {
                local.phase_point(p, &mut amb);
                amb[a] += h;
                local.frame_coords(&amb, &mut zp);
                amb[a] -= 2.0 * h;
                local.frame_coords(&amb, &mut zm);
                for i in 0..z.dim {
                    out[i] = (zp[i] - zm[i]) / (2.0 * h);
                }
            }
            raw.push(weigh(&fun.grid.fit_unconstrained(&z.m, z.dim, z.tangent_dim, &diff)?));
        }
    }
    let mut out: Vec<Vec<f64>> = Vec::new();
    for mut v in raw {
        for u in &out {
            let c = linalg::dot(u, &v);
            linalg::axpy(-c, u, &mut v);
        }
        let n = linalg::norm(&v);
        if n > 1e-12 {
            v.iter_mut().for_each(|x| *x /= n);
            out.push(v);
        }
    }
    Ok(out)
}

struct NewtonReport {
    z: FourierLoop,
    iterations: usize,
    null_directions: usize,
    failure: Option<alloc::string::String>,
}

/// Newton on `grad F = 0` over all of `T_m W`-valued loops, in `H^{1/2}`-
/// orthonormal coordinates, with an SVD pseudo-inverse dropping the expected
/// symmetry directions.
fn newton_free(fun: &ActionFunctional, start: &FourierLoop, axes: &[usize], tol: f64, max_iter: usize, capture: Option<f64>) -> Result<NewtonReport> {
    let w = weights(start);
    let n = w.len();
    let residual = |z: &FourierLoop| -> Result<Vec<f64>> {
        let (_, g) = fun.value_gradient_free(z)?;
        Ok(g.coeffs.iter().zip(&w).map(|(g, w)| g * w).collect())
    };
    let mut z = start.clone();
    let mut r = residual(&z)?;
    let mut gn = linalg::norm(&r);
    let mut null = 0;
    for it in 0..max_iter {
        if gn <= tol {
            return Ok(NewtonReport { z, iterations: it, null_directions: null, failure: None });
        }
        let delta = 3e-5 * z.h_half().max(fun.hm.profile.epsilon);
        let mut jac = nalgebra::DMatrix::zeros(n, n);
        let column = |j: usize, d: f64| -> Result<Vec<f64>> {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp.coeffs[j] += d / w[j];
            zm.coeffs[j] -= d / w[j];
            let (rp, rm) = (residual(&zp)?, residual(&zm)?);
            Ok(rp.iter().zip(&rm).map(|(p, m)| (p - m) / (2.0 * d)).collect())
        };
        for j in 0..n {
            // Richardson extrapolation of central differences: the steep
            // profile makes the second-order error visible in soft directions.
            let (full, half) = (column(j, delta)?, column(j, 0.5 * delta)?);
            for i in 0..n {
                jac[(i, j)] = (4.0 * half[i] - full[i]) / 3.0;
            }
        }
        let sym = symmetry_directions(fun, &z, &w, axes)?;
        let mut proj = nalgebra::DMatrix::<f64>::identity(n, n);
        for v in &sym {
            let v = nalgebra::DVector::from_column_slice(v);
            proj -= &v * v.transpose();
        }
        let jac = &proj * jac * &proj;
        let svd = jac.svd(true, true);
        let smax = svd.singular_values.max();
        let cut = NULL_CUTOFF * smax;
        null = svd.singular_values.iter().filter(|&&s| s < cut).count();
        if null > sym.len() {
            return Ok(NewtonReport {
                z,
                iterations: it,
                null_directions: null,
                failure: Some(format!(
                    "singular Jacobian: {null} null directions where the symmetries account for {}",
                    sym.len()
                )),
            });
        }
        let (u, vt) = (svd.u.as_ref().expect("u"), svd.v_t.as_ref().expect("v_t"));
        let solve = |rhs: &[f64], mu: f64, lam: f64| -> Vec<f64> {
            let mut out = vec![0.0; n];
            for (s_i, &sigma) in svd.singular_values.iter().enumerate() {
                if sigma < cut {
                    continue;
                }
                let c: f64 = (0..n).map(|i| u[(i, s_i)] * rhs[i]).sum::<f64>() * lam * sigma / (sigma * sigma + mu * mu);
                for (j, x) in out.iter_mut().enumerate() {
                    *x -= c * vt[(s_i, j)];
                }
            }
            out
        };
        let moved = |step: &[f64]| {
            let mut t = z.clone();
            for (j, x) in t.coeffs.iter_mut().enumerate() {
                *x += step[j] / w[j];
            }
            t
        };
        // Geodesic acceleration: the second directional derivative of the
        // residual along the Newton step corrects for the curved valley of
        // soft directions.
        let newton = solve(&r, 0.0, 1.0);
        let (rp, rm) = (residual(&moved(&newton))?, residual(&moved(&newton.iter().map(|x| -x).collect::<Vec<_>>()))?);
        let curvature: Vec<f64> = (0..n).map(|i| rp[i] - 2.0 * r[i] + rm[i]).collect();
        if let Some(threshold) = capture.filter(|_| it == 0) {
            let relative_step = linalg::norm(&newton) / z.h_half();
            if !(relative_step <= threshold) {
                return Err(Error::Capture { relative_step, threshold });
            }
        }
        let accel = solve(&curvature, 0.0, 1.0);
        let mut best: Option<(f64, FourierLoop, Vec<f64>)> = None;
        let mut consider = |step: Vec<f64>| -> Result<()> {
            let trial = moved(&step);
            let rt = residual(&trial)?;
            let gt = linalg::norm(&rt);
            if gt < best.as_ref().map_or(gn, |b| b.0) {
                best = Some((gt, trial, rt));
            }
            Ok(())
        };
        for &mu in &LM_DAMPING {
            consider(solve(&r, mu * smax, 1.0))?;
        }
        for j in 0..14 {
            let lam = libm::ldexp(1.0, -j);
            consider(newton.iter().map(|x| lam * x).collect())?;
            consider(newton.iter().zip(&accel).map(|(x, a)| lam * x + 0.5 * lam * lam * a).collect())?;
        }
        let accepted = best.is_some();
        if let Some((gt, trial, rt)) = best {
            z = trial;
            r = rt;
            gn = gt;
        }
        if !accepted {
            return Ok(NewtonReport {
                z,
                iterations: it + 1,
                null_directions: null,
                failure: Some(format!("no damped step reduces the gradient norm {gn:e}")),
            });
        }
    }
    let failure = (gn > tol).then(|| format!("no convergence in {max_iter} iterations (gradient norm {gn:e})"));
    Ok(NewtonReport { z, iterations: max_iter, null_directions: null, failure })
}

/// Moves the base point to absorb the tangential mean of `z` and re-expresses
/// the loop in the chart at the new base point.
fn recentre(family: &ActionFamily, fun: &ActionFunctional, z: &FourierLoop) -> Result<(ActionFunctional, FourierLoop)> {
    let t = z.tangent_dim;
    let local = fun.hm.local();
    let mut mean = vec![0.0; z.dim];
    mean[..t].copy_from_slice(&z.mode(0)[..t]);
    let mut shift = vec![0.0; z.dim];
    local.frame.to_ambient(&mean, &mut shift);
    let m: Vec<f64> = z.m.iter().zip(&shift).map(|(m, s)| m + s).collect();
    let next = family.at(&m)?;
    let samples = fun.grid.synthesize(z)?;
    let mut moved = vec![0.0; samples.len()];
    let mut w = vec![0.0; z.dim];
    for (p, out) in samples.chunks(z.dim).zip(moved.chunks_mut(z.dim)) {
        local.phase_point(p, &mut w);
        next.hm.local().frame_coords(&w, out);
    }
    let refit = fun.grid.fit_unconstrained(&m, z.dim, t, &moved)?;
    Ok((next, refit))
}

/// Newton refinement of a minimax candidate. On torus bases the tangential
/// mean is released during Newton and then absorbed into the base point.
pub fn polish_critical(family: &ActionFamily, candidate: &FourierLoop, settings: &MinimaxSettings) -> Result<CriticalCandidate> {
    let mut fun = family.at(&candidate.m)?;
    let value0 = fun.value(candidate)?;
    if candidate.h_half() == 0.0 {
        return Err(Error::Capture { relative_step: f64::INFINITY, threshold: settings.capture });
    }
    let axes = symmetric_axes(&family.system);
    let mut z = candidate.clone();
    let mut iterations = 0;
    let mut report;
    let mut rounds = 0;
    loop {
        report = newton_free(&fun, &z, &axes, settings.tol_grad, settings.newton_max_iter, (rounds == 0).then_some(settings.capture))?;
        iterations += report.iterations;
        z = report.z.clone();
        let t = z.tangent_dim;
        let drift = linalg::norm(&z.mode(0)[..t]);
        rounds += 1;
        if report.failure.is_some() || t == 0 || drift < 1e-13 || rounds > 6 {
            break;
        }
        let (next, refit) = recentre(family, &fun, &z)?;
        fun = next;
        z = refit;
    }
    let mut m = z.m.clone();
    family.system.wrap_base(&mut m);
    if m != z.m {
        z = z.with_base(&m);
        fun = family.at(&m)?;
    }
    let (value, gfree) = fun.value_gradient_free(&z)?;
    let polish_residual = fun.ode_residual(&z)?;
    Ok(CriticalCandidate {
        m,
        value,
        grad_norm: gfree.h_half(),
        polish_residual,
        iterations,
        null_directions: report.null_directions,
        value_change: libm::fabs(value - value0),
        polished: report.failure.is_none() && gfree.h_half() <= settings.tol_grad,
        note: report.failure,
        z,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action::{build_profile, HamiltonianMode, ProfileSettings};
    use crate::loops::LoopGrid;
    use proptest::prelude::*;

    fn oscillator_family(eps: f64, q: f64, k_max: usize) -> ActionFamily {
        let sys = ModelSystem::harmonic_oscillator(1, 1.0).with_chart_radius(50.0);
        let settings = ProfileSettings { q, ..Default::default() };
        let profile = build_profile(&sys, &[], eps, &settings).unwrap();
        ActionFamily::new(&sys, &profile, LoopGrid::with_oversample(k_max, 4).unwrap())
    }

    fn torus_family(sys: ModelSystem, eps: f64, k_max: usize) -> ActionFamily {
        let profile = build_profile(&sys, &[0.0, 0.0], eps, &ProfileSettings::default()).unwrap();
        ActionFamily::new(&sys, &profile, LoopGrid::with_oversample(k_max, 4).unwrap())
    }

    fn quick() -> MinimaxSettings {
        MinimaxSettings::default()
    }

    #[test]
    fn q_spectrum_margins() {
        let r = spectral_q_check(8, 3.0).unwrap();
        assert!((r.margin - PI).abs() < 1e-12);
        assert!(matches!(spectral_q_check(8, 2.0), Err(Error::EvenQ { .. })));
        assert!(matches!(spectral_q_check(8, 4.0), Err(Error::EvenQ { .. })));
        let r = spectral_q_check(8, 2.5).unwrap();
        assert!((r.margin - PI / 2.0).abs() < 1e-12);
        assert_eq!(r.nearest_k, 1);
        // Far beyond the truncation the nearest mode is the last one.
        let r = spectral_q_check(2, 9.0).unwrap();
        assert_eq!(r.nearest_k, 2);
        assert!((r.margin - 5.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn linking_parameters() {
        let fam = oscillator_family(0.1, 3.0, 8);
        let cfg = choose_parameters(&fam, &[vec![]], &quick()).unwrap();
        let b = fam.profile.b;
        let tail = 1.5 * PI - PI;
        // 2b against b / (pi/2): the first binds for q = 3.
        assert_eq!(cfg.tau_branch, TauBranch::Half);
        assert!((cfg.tau - libm::sqrt(2.0 * b) * 1.05).abs() < 1e-12);
        assert!(cfg.tau * cfg.tau >= 2.0 * b && cfg.tau * cfg.tau * tail >= b);
        assert!(cfg.alpha <= 0.25 * cfg.tau * cfg.tau && cfg.alpha < cfg.tau * cfg.tau);
        assert!(cfg.beta_floor > 0.0);
        for z in &cfg.gamma_sample {
            let plus = z.project(Part::Plus).project(Part::Normal);
            assert!((plus.h_half_sq() - cfg.alpha).abs() < 1e-12 * cfg.alpha);
            assert!(z.sub(&plus).h_half() < 1e-15);
            assert!(fam.value(z).unwrap() >= cfg.beta_floor);
        }
        // Sigma and Gamma meet at s = sqrt(alpha / 2 pi) on the e+ ray, where F = alpha / 2.
        let s = libm::sqrt(cfg.alpha / (2.0 * PI));
        let z = e_n_plus(&[], 8, 2, 0).scaled(s);
        assert!(distance_to_gamma(&z, cfg.alpha) < 1e-12);
        assert!((fam.value(&z).unwrap() - 0.5 * cfg.alpha).abs() < 1e-12);
    }

    #[test]
    fn even_slice_grid_is_rejected() {
        let fam = oscillator_family(0.1, 3.0, 4);
        let settings = MinimaxSettings { sigma_grid: 2, ..quick() };
        assert!(matches!(choose_parameters(&fam, &[vec![]], &settings), Err(Error::Config(_))));
    }

    #[test]
    fn tail_branch_binds_near_two() {
        let fam = oscillator_family(0.1, 2.2, 4);
        let cfg = choose_parameters(&fam, &[vec![]], &quick()).unwrap();
        assert_eq!(cfg.tau_branch, TauBranch::Tail);
        let tail = 1.1 * PI - PI;
        assert!((cfg.tau - libm::sqrt(fam.profile.b / tail) * 1.05).abs() < 1e-12);
    }

    #[test]
    fn sigma_boundary_is_nonpositive() {
        let fams = [
            (oscillator_family(0.1, 3.0, 8), vec![]),
            (torus_family(ModelSystem::constant_magnetic(2.0), 0.25, 6), vec![0.0, 0.0]),
            (torus_family(ModelSystem::varying_magnetic(1.0, 0.3), 0.25, 6), vec![0.0, 0.0]),
        ];
        for (fam, m) in &fams {
            let settings = quick();
            let cfg = choose_parameters(fam, core::slice::from_ref(m), &settings).unwrap();
            let sigma = sigma_sample(fam, core::slice::from_ref(m), &cfg, &settings);
            // 3^4 slice points; the corners lie on the rim.
            assert_eq!(sigma.len(), 81);
            assert!(sigma_boundary_sup(fam, &sigma, cfg.tau).unwrap() <= 1e-9);
        }
    }

    #[test]
    fn critical_front_is_fixed() {
        let fam = oscillator_family(0.1, 3.0, 4);
        let mut ctx = FlowContext::new(&fam);
        let mut front = Front::new(&mut ctx, vec![vec![FourierLoop::zeros(&[], 4, 2, 0)]]).unwrap();
        let before = front.strings[0][0].z.clone();
        assert!(matches!(flow_step(&mut ctx, &mut front, 0.1, 1e-3).unwrap(), StepOutcome::Accepted { .. }));
        assert_eq!(front.strings[0][0].z, before);
        assert_eq!(front.sup(), 0.0);
    }

    #[test]
    fn flow_contracts_positive_ray_at_unit_rate() {
        // Deep inside the zero section h vanishes and the flow on E+ is z' = -z.
        let fam = oscillator_family(0.1, 3.0, 4);
        let mut ctx = FlowContext::new(&fam);
        let s0 = 0.01;
        let e = e_n_plus(&[], 4, 2, 0);
        let mut front = Front::new(&mut ctx, vec![vec![e.scaled(s0)]]).unwrap();
        let dt = 1e-3;
        for _ in 0..1000 {
            assert!(matches!(flow_step(&mut ctx, &mut front, dt, 1.0).unwrap(), StepOutcome::Accepted { .. }));
        }
        let s1 = front.strings[0][0].z.h_half_dot(&e) / e.h_half_sq();
        let exact = s0 * libm::exp(-1.0);
        assert!(((s1 - exact) / exact).abs() < 1e-6);
    }

    #[test]
    fn energy_identity_along_flow() {
        let fam = oscillator_family(0.1, 3.0, 6);
        let f = fam.at(&[]).unwrap();
        let mut ctx = FlowContext::new(&fam);
        let mut z = e_n_plus(&[], 6, 2, 0).scaled(0.1 / libm::sqrt(2.0 * PI) * 1.2);
        z.mode_mut(-1)[0] = 0.01;
        z.mode_mut(2)[1] = 0.005;
        let mut front = Front::new(&mut ctx, vec![vec![z]]).unwrap();
        let f0 = front.strings[0][0].value;
        let mut dissipated = 0.0;
        let mut dt = 1e-4;
        for _ in 0..400 {
            let g0 = front.strings[0][0].grad.h_half_sq();
            let z0 = front.strings[0][0].z.clone();
            match flow_step(&mut ctx, &mut front, dt, 1e-5).unwrap() {
                StepOutcome::Accepted { frozen, .. } => {
                    assert_eq!(frozen, 0);
                    // Simpson's rule on |G|^2 with the midpoint recomputed independently.
                    let zh = z0.sub(&front.strings[0][0].z).scaled(-0.5).add(&z0);
                    let gh = f.value_gradient(&zh).unwrap().1.h_half_sq();
                    let g1 = front.strings[0][0].grad.h_half_sq();
                    dissipated += dt * (g0 + 4.0 * gh + g1) / 6.0;
                }
                StepOutcome::Rejected { .. } => dt *= 0.5,
            }
        }
        let drop = f0 - front.strings[0][0].value;
        assert!(drop > 0.0);
        assert!(((drop - dissipated) / drop).abs() < 1e-4, "{drop} vs {dissipated}");
    }

    #[test]
    fn oscillator_search_finds_circle() {
        let fam = oscillator_family(0.1, 3.0, 8);
        let out = minimax_search(&fam, &[vec![]], &quick()).unwrap();
        assert!(out.c_estimate > 0.0);
        assert!(out.c_estimate >= out.config.beta_floor - 1e-8);
        assert!(out.boundary_sup <= 1e-9);
        assert!(out.trace.windows(2).all(|w| w[1].sup <= w[0].sup));
        assert!(out.linking_ok);
        let pc = polish_critical(&fam, &out.candidate.z, &quick()).unwrap();
        assert!(pc.polished && pc.grad_norm <= 1e-9 && pc.value > 0.0);
        let f = fam.at(&[]).unwrap();
        let samples = f.grid.synthesize(&pc.z).unwrap();
        let radii: Vec<f64> = samples.chunks(2).map(linalg::norm).collect();
        let r = radii[0];
        assert!(radii.iter().all(|x| (x - r).abs() < 1e-9 * r));
        let eps = 0.1;
        let rho = 4.0 * (r * r - eps * eps) / (eps * eps);
        assert!(rho.abs() <= eps, "rho = {rho}");
    }

    #[test]
    fn polish_handles_exact_and_perturbed_input() {
        let fam = oscillator_family(0.1, 3.0, 8);
        let out = minimax_search(&fam, &[vec![]], &quick()).unwrap();
        let exact = polish_critical(&fam, &out.candidate.z, &quick()).unwrap();
        let again = polish_critical(&fam, &exact.z, &quick()).unwrap();
        assert_eq!(again.iterations, 0);
        assert_eq!(again.z, exact.z);

        let mut rng = sampling::rng(11);
        let mut noise = exact.z.scaled(0.0);
        noise.coeffs.iter_mut().for_each(|c| *c = sampling::gaussian(&mut rng));
        noise.enforce_mean_constraint();
        // Relative noise level 1e-4 in the H^1/2 norm.
        let noisy = exact.z.add(&noise.scaled(1e-4 * exact.z.h_half() / noise.h_half()));
        let pc = polish_critical(&fam, &noisy, &quick()).unwrap();
        assert!(pc.polished && pc.grad_norm < 1e-9);
        assert!(pc.iterations <= 6, "{} iterations", pc.iterations);
    }

    #[test]
    fn polish_rejects_far_candidates() {
        let fam = oscillator_family(0.1, 3.0, 8);
        let mut z = e_n_plus(&[], 8, 2, 0).scaled(0.08);
        z.mode_mut(-2)[1] = 0.03;
        assert!(matches!(polish_critical(&fam, &z, &quick()), Err(Error::Capture { .. })));
    }

    #[test]
    fn resonant_quadratic_tail_is_singular() {
        let mut fam = oscillator_family(0.1, 3.0, 4).with_mode(HamiltonianMode::QuadraticTail);
        fam.profile.q = 2.0;
        // Any k = 1 normal loop is critical; nudge it off so Newton has to act.
        let mut z = e_n_plus(&[], 4, 2, 0).scaled(0.3);
        z.mode_mut(2)[0] = 1e-4;
        let pc = polish_critical(&fam, &z, &quick()).unwrap();
        assert!(!pc.polished);
        assert!(pc.null_directions > 1);
        assert!(pc.note.unwrap().contains("singular"));
    }

    #[test]
    fn torus_candidates_polish() {
        for (sys, axes) in [(ModelSystem::constant_magnetic(1.0), 2), (ModelSystem::varying_magnetic(1.0, 0.3), 1)] {
            assert_eq!(symmetric_axes(&sys).len(), axes);
            let fam = torus_family(sys, 0.25, 8);
            let out = minimax_search(&fam, &[vec![0.0, 0.0]], &quick()).unwrap();
            assert!(out.trace.windows(2).all(|w| w[1].sup <= w[0].sup));
            assert!(out.c_estimate >= out.config.beta_floor - 1e-8);
            let pc = polish_critical(&fam, &out.candidate.z, &quick()).unwrap();
            assert!(pc.polished && pc.value > 0.0, "{:?}", pc.note);
            assert!(pc.polish_residual < 1e-9);
            assert_eq!(pc.null_directions, 1 + axes);
        }
        assert!(symmetric_axes(&ModelSystem::harmonic_oscillator(2, 1.0)).is_empty());
    }

    #[test]
    fn refinement_resolves_the_ridge() {
        let fam = torus_family(ModelSystem::varying_magnetic(1.0, 0.3), 0.25, 6);
        let settings = quick();
        let cfg = choose_parameters(&fam, &[vec![0.0, 0.0]], &settings).unwrap();
        let sigma = sigma_sample(&fam, &[vec![0.0, 0.0]], &cfg, &settings);
        let mut ctx = FlowContext::new(&fam);
        let mut front = Front::new(&mut ctx, sigma).unwrap();
        let coarse = front.sup();
        refine_strings(&mut ctx, &mut front, settings.max_string_points).unwrap();
        let fine = front.sup();
        let top = refine_along_string(&mut ctx, &front).unwrap().value;
        assert!(fine >= coarse);
        assert!(top - fine < 0.01 * top, "{coarse} {fine} {top}");
    }

    #[test]
    fn palais_smale_reports() {
        assert_eq!(palais_smale_monitor(&[]), PsReport::default());

        let fam = oscillator_family(0.1, 3.0, 8);
        let out = minimax_search(&fam, &[vec![]], &quick()).unwrap();
        let rep = palais_smale_monitor(&out.ps_samples);
        assert!(rep.bounded && rep.cauchy && !rep.slow_decay, "{rep:?}");

        let run = |seed| {
            let fam = oscillator_family(0.1, 2.01, 6);
            let settings = MinimaxSettings { budget: 5_000, seed, ..Default::default() };
            palais_smale_monitor(&minimax_search(&fam, &[vec![]], &settings).unwrap().ps_samples)
        };
        let a = run(7);
        assert!(a.slow_decay, "tail ratio {}", a.tail_ratio);
        assert_eq!(a, run(7));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn gamma_distance_vanishes_on_the_sphere(c in proptest::collection::vec(-1.0f64..1.0, 12), alpha in 0.001f64..1.0) {
            let mut z = FourierLoop::zeros(&[], 3, 2, 0);
            for (k, pair) in (1..=3).zip(c.chunks(2)) {
                z.mode_mut(k).copy_from_slice(pair);
            }
            prop_assume!(z.h_half() > 1e-3);
            let on = z.scaled(libm::sqrt(alpha) / z.h_half());
            prop_assert!(distance_to_gamma(&on, alpha) < 1e-12);
            let mut off = on.clone();
            off.mode_mut(-1).copy_from_slice(&c[6..8]);
            let expect = off.mode(-1).iter().map(|x| x * x).sum::<f64>() * 2.0 * PI;
            prop_assert!((distance_to_gamma(&off, alpha) - libm::sqrt(expect)).abs() < 1e-12);
        }
    }
}
