//! p-sweeps of the global gradient bound, bound-shape verdicts, and the
//! randomized inequality suites.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::constants::{self, Regime, SourceSpace};
use crate::error::{Error, Result};
use crate::grid::{Shape, Source};
use crate::numeric;
use crate::rearrange::SampledFunction;
use crate::solver::{self, BoundaryCondition, GridProblem, SolveResult};
use crate::structural::StructuralParams;

/// Everything about a sweep problem except the exponent and the resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemTemplate {
    pub shape: Shape,
    pub dim: usize,
    pub bc: BoundaryCondition,
    pub source: Source,
    pub epsilon: f64,
}

impl ProblemTemplate {
    pub fn instantiate(&self, p: f64, n: usize) -> Result<GridProblem> {
        let params = StructuralParams::new(p, self.epsilon)?;
        GridProblem::builtin(self.shape, self.dim, n, self.bc, &self.source, params)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub p_list: Vec<f64>,
    pub template: ProblemTemplate,
    pub space: SourceSpace,
    /// Lebesgue exponent, used when `space` is [`SourceSpace::LebesgueQ`].
    pub q: f64,
    pub theta: f64,
    pub regime: Regime,
    pub grid_levels: Vec<usize>,
    pub seed: u64,
    pub tol: f64,
    pub max_iter: usize,
    pub c_doubleprime: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            p_list: vec![1.2, 1.5, 2.0, 3.0, 5.0, 8.0],
            template: ProblemTemplate {
                shape: Shape::Box,
                dim: 2,
                bc: BoundaryCondition::Dirichlet,
                source: Source::Gaussian { width: 0.1 },
                epsilon: 1e-6,
            },
            space: SourceSpace::LebesgueQ,
            q: 4.0,
            theta: 3.0,
            regime: Regime::Convex,
            grid_levels: vec![64, 128],
            seed: 1,
            tol: 1e-8,
            max_iter: 500,
            c_doubleprime: 1.0,
        }
    }
}

fn parse_list<T: std::str::FromStr>(value: &str) -> Option<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| v.parse().ok())
        .collect()
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.p_list.is_empty() {
            return Err(Error::domain("p_list is empty"));
        }
        if self.p_list.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::domain("p_list must be strictly ascending"));
        }
        if let Some(p) = self.p_list.iter().find(|&&p| !(p > 1.01) || !p.is_finite()) {
            return Err(Error::domain(format!("sweep exponents must exceed 1.01, got {p}")));
        }
        let dim = self.template.dim;
        match self.space {
            SourceSpace::LorentzN1 if dim < 3 => {
                return Err(Error::domain("lorentz_N1 sources need dim >= 3"));
            }
            SourceSpace::LebesgueQ if dim != 2 => {
                return Err(Error::domain("lebesgue_q sources are the dim = 2 branch"));
            }
            SourceSpace::LebesgueQ if !(self.q > 2.0) || !self.q.is_finite() => {
                return Err(Error::domain(format!("q must exceed 2, got {}", self.q)));
            }
            _ => {}
        }
        if self.regime == Regime::Boundary {
            constants::boundary_exponent(dim, self.theta)?;
        }
        if self.grid_levels.is_empty() || self.grid_levels.iter().any(|&n| n < 4) {
            return Err(Error::domain("grid_levels needs resolutions of at least 4"));
        }
        if self.grid_levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::domain("grid_levels must be strictly ascending"));
        }
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::domain("tol and max_iter must be positive"));
        }
        if !(self.c_doubleprime > 0.0) {
            return Err(Error::domain("c_doubleprime must be positive"));
        }
        if !(self.template.epsilon >= 0.0) {
            return Err(Error::domain("epsilon must be nonnegative"));
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment. Missing keys keep
    /// their defaults.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        let mut width = None;
        let mut source_name = None;
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::parse(origin, idx + 1, msg);
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err("expected `key = value`".into()))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = || err(format!("bad value for `{key}`: `{value}`"));
            match key {
                "p_list" => cfg.p_list = parse_list(value).ok_or_else(bad)?,
                "grid_levels" => cfg.grid_levels = parse_list(value).ok_or_else(bad)?,
                "shape" => cfg.template.shape = value.parse().map_err(|_| bad())?,
                "dim" => cfg.template.dim = value.parse().map_err(|_| bad())?,
                "bc" => cfg.template.bc = value.parse().map_err(|_| bad())?,
                "source" => source_name = Some(value.to_string()),
                "source_width" => width = Some(value.parse::<f64>().map_err(|_| bad())?),
                "epsilon" | "eps" => cfg.template.epsilon = value.parse().map_err(|_| bad())?,
                "space" => cfg.space = value.parse().map_err(|_| bad())?,
                "q" => cfg.q = value.parse().map_err(|_| bad())?,
                "theta" => cfg.theta = value.parse().map_err(|_| bad())?,
                "regime" => cfg.regime = value.parse().map_err(|_| bad())?,
                "seed" => cfg.seed = value.parse().map_err(|_| bad())?,
                "tol" => cfg.tol = value.parse().map_err(|_| bad())?,
                "max_iter" => cfg.max_iter = value.parse().map_err(|_| bad())?,
                "c_doubleprime" => cfg.c_doubleprime = value.parse().map_err(|_| bad())?,
                _ => return Err(err(format!("unknown key `{key}`"))),
            }
        }
        if let Some(name) = source_name {
            cfg.template.source = name
                .parse()
                .map_err(|e: Error| Error::parse(origin, 0, e.to_string()))?;
        }
        if let Some(w) = width {
            match &mut cfg.template.source {
                Source::Gaussian { width } | Source::GaussianPair { width } => *width = w,
                _ => return Err(Error::parse(origin, 0, "source_width needs a Gaussian source")),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?, path)
    }

    /// `||f||_{N,1}` or `||f||_q` of the gridded source over the active cells.
    pub fn source_norm(&self, problem: &GridProblem) -> Result<f64> {
        let grid = problem.grid();
        let values: Vec<f64> = grid.active_indices().iter().map(|&i| problem.source()[i]).collect();
        let f = SampledFunction::uniform(grid.cell_volume(), &values)?;
        match self.space {
            SourceSpace::LorentzN1 => f.lorentz_norm(grid.dim() as f64),
            SourceSpace::LebesgueQ => f.lq_norm(self.q),
        }
    }

    pub fn factor(&self, p: f64) -> Result<f64> {
        constants::theorem_factor(p, self.template.dim, self.theta, self.regime, self.space)
    }
}

/// One sweep point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundReport {
    pub p: f64,
    /// `||grad u_p||_inf^(p-1)`
    pub grad_sup_pow: f64,
    pub source_norm: f64,
    pub factor: f64,
    /// `grad_sup_pow / (factor * source_norm)`, or 0 when the source vanishes.
    pub ratio: f64,
    pub grid_n: usize,
    pub converged: bool,
}

impl BoundReport {
    fn new(p: f64, grad_sup: f64, source_norm: f64, factor: f64, grid_n: usize, converged: bool) -> Self {
        let grad_sup_pow = grad_sup.powf(p - 1.0);
        let ratio = if source_norm == 0.0 && grad_sup_pow == 0.0 {
            0.0
        } else {
            grad_sup_pow / (factor * source_norm)
        };
        Self {
            p,
            grad_sup_pow,
            source_norm,
            factor,
            ratio,
            grid_n,
            converged,
        }
    }
}

/// A report together with the energy-bound ratio of the same solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub report: BoundReport,
    pub energy_ratio: f64,
}

/// Solves every `(p, grid level)` pair of the sweep. A failed solve yields a
/// report with `converged = false` (and the best iterate's values when the
/// iteration budget ran out) instead of aborting the sweep.
pub fn run_sweep_points(cfg: &SweepConfig) -> Result<Vec<SweepPoint>> {
    cfg.validate()?;
    let mut points = Vec::new();
    for &p in &cfg.p_list {
        let factor = cfg.factor(p)?;
        for &n in &cfg.grid_levels {
            let problem = cfg.template.instantiate(p, n)?;
            let norm = cfg.source_norm(&problem)?;
            let (result, converged) = match solver::solve(&problem, cfg.tol, cfg.max_iter) {
                Ok(r) => (Some(r), true),
                Err(Error::MaxIterExceeded { best, .. }) => (Some(*best), false),
                Err(e) => {
                    log::warn!("p = {p}, n = {n}: {e}");
                    (None, false)
                }
            };
            let point = match result {
                Some(r) => {
                    log::info!("p = {p}, n = {n}: {} iterations, residual {:e}", r.iterations, r.residual);
                    SweepPoint {
                        report: BoundReport::new(p, r.grad_sup, norm, factor, n, converged),
                        energy_ratio: check_lemma_2_14(&r, &problem.params(), norm, cfg.c_doubleprime)?,
                    }
                }
                None => SweepPoint {
                    report: BoundReport {
                        p,
                        grad_sup_pow: f64::NAN,
                        source_norm: norm,
                        factor,
                        ratio: f64::NAN,
                        grid_n: n,
                        converged: false,
                    },
                    energy_ratio: f64::NAN,
                },
            };
            points.push(point);
        }
    }
    points.sort_by(|a, b| {
        a.report
            .p
            .total_cmp(&b.report.p)
            .then(a.report.grid_n.cmp(&b.report.grid_n))
    });
    Ok(points)
}

pub fn run_sweep(cfg: &SweepConfig) -> Result<Vec<BoundReport>> {
    Ok(run_sweep_points(cfg)?.into_iter().map(|pt| pt.report).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeVerdict {
    pub max_ratio: f64,
    pub min_ratio: f64,
    /// Largest relative change of a ratio between the two grid levels.
    pub stability: f64,
    pub pass: bool,
}

/// Relative change between grid levels allowed by [`check_bound_shape`].
pub const STABILITY_LIMIT: f64 = 0.05;

/// Boundedness and refinement stability of `(p, grid_n, value)` triples.
pub fn check_shape(values: &[(f64, usize, f64, bool)], refinement: (usize, usize)) -> Result<ShapeVerdict> {
    let ok: Vec<_> = values.iter().filter(|v| v.3 && v.2.is_finite()).collect();
    if ok.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "need at least 3 successful reports, got {}",
            ok.len()
        )));
    }
    let max_ratio = ok.iter().map(|v| v.2).fold(f64::NEG_INFINITY, f64::max);
    let min_ratio = ok.iter().map(|v| v.2).fold(f64::INFINITY, f64::min);
    let mut by_p: BTreeMap<u64, [Option<f64>; 2]> = BTreeMap::new();
    for v in values {
        let slot = if v.1 == refinement.0 {
            0
        } else if v.1 == refinement.1 {
            1
        } else {
            continue;
        };
        let value = (v.3 && v.2.is_finite()).then_some(v.2);
        by_p.entry(v.0.to_bits()).or_default()[slot] = value;
    }
    if by_p.is_empty() {
        return Err(Error::InsufficientData("no reports at the refinement levels".into()));
    }
    let mut stability: f64 = 0.0;
    for pair in by_p.values() {
        let change = match pair {
            [Some(a), Some(b)] if *a == *b => 0.0,
            [Some(a), Some(b)] => (b - a).abs() / a.abs(),
            _ => f64::INFINITY,
        };
        stability = stability.max(change);
    }
    Ok(ShapeVerdict {
        max_ratio,
        min_ratio,
        stability,
        pass: stability < STABILITY_LIMIT && max_ratio.is_finite(),
    })
}

/// Bound-shape verdict over a sweep: the ratios must be finite and change by
/// less than 5% between the grid levels of `refinement` (coarse, fine).
pub fn check_bound_shape(reports: &[BoundReport], refinement: (usize, usize)) -> Result<ShapeVerdict> {
    let values: Vec<_> = reports.iter().map(|r| (r.p, r.grid_n, r.ratio, r.converged)).collect();
    check_shape(&values, refinement)
}

/// `int B(|grad u|) / (C'' C_p psi(||f||))`, the solve's energy measured
/// against the energy bound. Returns 0 for a vanishing source and energy.
pub fn check_lemma_2_14(
    result: &SolveResult,
    params: &StructuralParams,
    f_norm: f64,
    c_doubleprime: f64,
) -> Result<f64> {
    let lhs = solver::gradient_integral_b(result, params);
    if f_norm == 0.0 {
        return Ok(if lhs == 0.0 { 0.0 } else { f64::INFINITY });
    }
    let rhs = c_doubleprime * constants::c_p(params.p())? * params.psi(f_norm)?;
    Ok(lhs / rhs)
}

/// Outcome of one randomized inequality check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub samples: usize,
    pub violations: usize,
    /// Largest relative excess over the bound among all samples, before slack;
    /// negative when every sample holds strictly.
    pub worst_excess: f64,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }

    fn new(name: &'static str) -> Self {
        Self {
            name,
            samples: 0,
            violations: 0,
            worst_excess: f64::NEG_INFINITY,
        }
    }

    /// Records `lhs <= rhs` with relative slack `slack`.
    fn record(&mut self, lhs: f64, rhs: f64, slack: f64) {
        let excess = (lhs - rhs) / rhs.abs().max(f64::MIN_POSITIVE);
        self.worst_excess = self.worst_excess.max(excess);
        if !(lhs <= rhs + slack * rhs.abs()) {
            self.violations += 1;
        }
    }

    fn fail(&mut self) {
        self.violations += 1;
        self.worst_excess = f64::INFINITY;
    }
}

/// Slack for inequalities between closed forms.
pub const ANALYTIC_SLACK: f64 = 1e-12;
/// Slack where quadrature or root finding enters.
pub const NUMERIC_SLACK: f64 = 1e-7;
/// Slack for the finite-difference derivative in (h2).
pub const DIFFERENCE_SLACK: f64 = 1e-6;

const INVERSE_TOL: f64 = 1e-14;

/// Generator for trial `i` of a suite: the stream is the trial number, so
/// any trial can be replayed without the ones before it.
fn trial_rng(seed: u64, suite: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ suite.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    rng.set_stream(trial as u64);
    rng
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (rng.gen_range(lo.ln()..hi.ln())).exp()
}

/// Random `(p, epsilon)` with `p in [1.05, 10]`; one draw in ten has
/// `epsilon = 0`, the rest are log-uniform in `[1e-8, 10]`.
fn random_params(rng: &mut ChaCha8Rng) -> StructuralParams {
    let p = rng.gen_range(1.05..=10.0);
    let eps = if rng.gen_range(0..10) == 0 {
        0.0
    } else {
        log_uniform(rng, 1e-8, 10.0)
    };
    StructuralParams::new(p, eps).expect("valid by construction")
}

fn structural_suite<F>(name: &'static str, suite: u64, samples: usize, seed: u64, mut check: F) -> CheckOutcome
where
    F: FnMut(&mut ChaCha8Rng, &mut CheckOutcome) -> Result<()>,
{
    let mut out = CheckOutcome::new(name);
    for i in 0..samples {
        let mut rng = trial_rng(seed, suite, i);
        out.samples += 1;
        if check(&mut rng, &mut out).is_err() {
            out.fail();
        }
    }
    out
}

/// `min{c, c^(p-1)} <= b(ct)/b(t) <= max{c, c^(p-1)}`.
pub fn check_h5(samples: usize, seed: u64) -> CheckOutcome {
    structural_suite("h5", 1, samples, seed, |rng, out| {
        let sp = random_params(rng);
        let t = log_uniform(rng, 1e-3, 1e2);
        let c = log_uniform(rng, 1e-3, 1e2);
        let r = sp.b(c * t)? / sp.b(t)?;
        let cp = c.powf(sp.p() - 1.0);
        out.record(c.min(cp), r, ANALYTIC_SLACK);
        out.record(r, c.max(cp), ANALYTIC_SLACK);
        Ok(())
    })
}

/// `min{1, p-1} <= t b'(t)/b(t) <= max{1, p-1}` with the analytic `b'`,
/// cross-checked with a central difference.
pub fn check_h2(samples: usize, seed: u64) -> CheckOutcome {
    structural_suite("h2", 2, samples, seed, |rng, out| {
        let sp = random_params(rng);
        let t = log_uniform(rng, 1e-3, 1e2);
        let b = sp.b(t)?;
        let p1 = sp.p() - 1.0;
        let (lo, hi) = (p1.min(1.0), p1.max(1.0));
        let r = t * sp.b_prime(t)? / b;
        out.record(lo, r, ANALYTIC_SLACK);
        out.record(r, hi, ANALYTIC_SLACK);
        let d = 1e-4 * t;
        let r_fd = t * (sp.b(t + d)? - sp.b(t - d)?) / (2.0 * d) / b;
        out.record(lo, r_fd, DIFFERENCE_SLACK);
        out.record(r_fd, hi, DIFFERENCE_SLACK);
        Ok(())
    })
}

/// `m(c,p) <= t b(ct)/B(t) <= M(c,p)`.
pub fn check_bbcp(samples: usize, seed: u64) -> CheckOutcome {
    structural_suite("Bbcp", 3, samples, seed, |rng, out| {
        let sp = random_params(rng);
        let t = log_uniform(rng, 1e-3, 1e2);
        let c = log_uniform(rng, 1e-3, 1e2);
        let r = t * sp.b(c * t)? / sp.big_b(t)?;
        out.record(constants::m_cp(c, sp.p())?, r, ANALYTIC_SLACK);
        out.record(r, constants::big_m_cp(c, sp.p())?, ANALYTIC_SLACK);
        Ok(())
    })
}

/// `min{2,p} B(t) <= t b(t) <= max{2,p} B(t)`.
pub fn check_bb(samples: usize, seed: u64) -> CheckOutcome {
    structural_suite("Bb", 4, samples, seed, |rng, out| {
        let sp = random_params(rng);
        let t = log_uniform(rng, 1e-3, 1e2);
        let big_b = sp.big_b(t)?;
        let tb = t * sp.b(t)?;
        out.record(sp.p().min(2.0) * big_b, tb, ANALYTIC_SLACK);
        out.record(tb, sp.p().max(2.0) * big_b, ANALYTIC_SLACK);
        Ok(())
    })
}

/// `B^{-1}-hat(s) <= C_p b^{-1}(s)`.
pub fn check_bhat(samples: usize, seed: u64) -> CheckOutcome {
    structural_suite("B^", 5, samples, seed, |rng, out| {
        let sp = random_params(rng);
        let s = log_uniform(rng, 1e-2, 1e2);
        let lhs = sp.bhat_inv(s, INVERSE_TOL)?;
        let rhs = constants::c_p(sp.p())? * sp.b_inv(s, INVERSE_TOL)?;
        out.record(lhs, rhs, NUMERIC_SLACK);
        Ok(())
    })
}

/// `F(t) <= t b(t)^2 <= K_p F(t)`.
pub fn check_fb(samples: usize, seed: u64) -> CheckOutcome {
    structural_suite("Fb", 6, samples, seed, |rng, out| {
        let sp = random_params(rng);
        let t = log_uniform(rng, 1e-3, 1e2);
        let f = sp.big_f(t, 1e-12)?;
        let tb2 = t * sp.b(t)?.powi(2);
        out.record(f, tb2, NUMERIC_SLACK);
        out.record(tb2, constants::k_p(sp.p())? * f, NUMERIC_SLACK);
        Ok(())
    })
}

/// `C psi(s) <= psi(C s)` for `C >= 1`.
pub fn check_psitil(samples: usize, seed: u64) -> CheckOutcome {
    structural_suite("psitil", 7, samples, seed, |rng, out| {
        let sp = random_params(rng);
        let s = log_uniform(rng, 1e-2, 1e2);
        let c = log_uniform(rng, 1.0, 1e2);
        let lhs = c * s * sp.b_inv(s, INVERSE_TOL)?;
        let rhs = c * s * sp.b_inv(c * s, INVERSE_TOL)?;
        out.record(lhs, rhs, NUMERIC_SLACK);
        Ok(())
    })
}

/// The seven structural inequalities, `samples` draws each.
pub fn structural_suite_all(samples: usize, seed: u64) -> Vec<CheckOutcome> {
    vec![
        check_h5(samples, seed),
        check_h2(samples, seed),
        check_bbcp(samples, seed),
        check_bb(samples, seed),
        check_bhat(samples, seed),
        check_fb(samples, seed),
        check_psitil(samples, seed),
    ]
}

/// Closed-form `B` against adaptive quadrature of `b`, relative `1e-8`.
pub fn check_big_b_quadrature(samples: usize, seed: u64) -> CheckOutcome {
    let mut out = structural_suite("B-quadrature", 8, samples, seed, |rng, out| {
        let sp = random_params(rng);
        let t = log_uniform(rng, 1e-3, 1e2);
        let closed = sp.big_b(t)?;
        let quad = numeric::integrate(|s| sp.b_unchecked(s), 0.0, t, 1e-12)?;
        let err = (closed - quad).abs() / closed;
        out.worst_excess = out.worst_excess.max(err);
        if !(err <= 1e-8) {
            out.violations += 1;
        }
        Ok(())
    });
    out.name = "B-quadrature";
    out
}

/// Random step function: 1 to 20 cells, measures in `[0.01, 1]`, values in
/// `[-5, 5]` with about one in five set to 0.
fn random_step_function(rng: &mut ChaCha8Rng) -> SampledFunction {
    let cells = rng.gen_range(1..=20);
    let pairs: Vec<(f64, f64)> = (0..cells)
        .map(|_| {
            let m = rng.gen_range(0.01..1.0);
            let v = if rng.gen_range(0..5) == 0 { 0.0 } else { rng.gen_range(-5.0..5.0) };
            (m, v)
        })
        .collect();
    SampledFunction::from_pairs(&pairs).expect("valid by construction")
}

/// `int_0^r f*^2 <= ||f||_q^2 r^(1-2/q)` at a random `r` in `(0, |Omega|]`.
pub fn check_faa(samples: usize, seed: u64) -> CheckOutcome {
    structural_suite("faa", 9, samples, seed, |rng, out| {
        let f = random_step_function(rng);
        let q = rng.gen_range(2.0..=6.0_f64).max(2.0 + 1e-9);
        let total = f.total_measure();
        let r = if rng.gen_range(0..10) == 0 { total } else { rng.gen_range(0.0..total).max(1e-9) };
        let lhs = f.decreasing_rearrangement().square_integral(r);
        let rhs = f.lq_norm(q)?.powi(2) * r.powf(1.0 - 2.0 / q);
        out.record(lhs, rhs, ANALYTIC_SLACK);
        Ok(())
    })
}

/// `int_0^|Omega| r^-1 int_0^r f*^2 <= (q/(q-2)) |Omega|^((q-2)/q) ||f||_q^2`.
pub fn check_fb2(samples: usize, seed: u64) -> CheckOutcome {
    structural_suite("fb2", 10, samples, seed, |rng, out| {
        let f = random_step_function(rng);
        let q = rng.gen_range(2.0..=6.0_f64).max(2.0 + 1e-9);
        let total = f.total_measure();
        let lhs = f.decreasing_rearrangement().log_weighted_square_integral();
        let rhs = q / (q - 2.0) * total.powf((q - 2.0) / q) * f.lq_norm(q)?.powi(2);
        out.record(lhs, rhs, ANALYTIC_SLACK);
        Ok(())
    })
}

/// Largest `X` allowed by `X^2 <= c x^2 + c Y X + c Y^2`.
pub fn square_premise_root(x: f64, y: f64, c: f64) -> f64 {
    0.5 * (c * y + (c * c * y * y + 4.0 * c * (x * x + y * y)).sqrt())
}

/// `X <= sqrt(c) x + (c+1) Y`, checked exactly.
pub fn square_conclusion(big_x: f64, x: f64, y: f64, c: f64) -> bool {
    big_x <= c.sqrt() * x + (c + 1.0) * y
}

/// Draws `(x, Y, c)` log-uniformly and `X` uniformly below the premise root,
/// rejecting draws that miss the premise; every tenth trial sits exactly at
/// the root. Counts conclusion failures with no tolerance.
pub fn check_lemma_square(trials: usize, seed: u64) -> CheckOutcome {
    let mut out = CheckOutcome::new("square");
    for i in 0..trials {
        let mut rng = trial_rng(seed, 11, i);
        let x = log_uniform(&mut rng, 1e-3, 1e3);
        let y = log_uniform(&mut rng, 1e-3, 1e3);
        let c = log_uniform(&mut rng, 1e-3, 1e2);
        let root = square_premise_root(x, y, c);
        let big_x = if i % 10 == 9 {
            root
        } else {
            loop {
                let candidate = rng.gen_range(0.0..=root);
                if candidate * candidate <= c * x * x + c * y * candidate + c * y * y {
                    break candidate;
                }
            }
        };
        out.samples += 1;
        let bound = c.sqrt() * x + (c + 1.0) * y;
        out.worst_excess = out.worst_excess.max((big_x - bound) / bound);
        if !square_conclusion(big_x, x, y, c) {
            out.violations += 1;
        }
    }
    out
}

pub const CSV_HEADER: &str = "p,grad_sup_pow,source_norm,factor,ratio,grid_n,converged";

pub fn write_reports<W: Write>(mut out: W, reports: &[BoundReport]) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in reports {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.p, r.grad_sup_pow, r.source_norm, r.factor, r.ratio, r.grid_n, r.converged
        )?;
    }
    Ok(())
}

/// Writes the reports in the given order. Floats use the shortest
/// representation that parses back to the same value.
pub fn emit_csv(reports: &[BoundReport], path: &Path) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_reports(&mut file, reports)?;
    file.flush()?;
    Ok(())
}

pub fn read_reports<R: BufRead>(reader: R, origin: &Path) -> Result<Vec<BoundReport>> {
    let mut lines = reader.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.trim() != CSV_HEADER {
        return Err(Error::parse(origin, 1, format!("expected header `{CSV_HEADER}`")));
    }
    let mut reports = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: &str| Error::parse(origin, idx + 2, msg.to_string());
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 7 {
            return Err(err("expected 7 fields"));
        }
        let num = |i: usize| fields[i].parse::<f64>().map_err(|_| err("bad number"));
        reports.push(BoundReport {
            p: num(0)?,
            grad_sup_pow: num(1)?,
            source_norm: num(2)?,
            factor: num(3)?,
            ratio: num(4)?,
            grid_n: fields[5].parse().map_err(|_| err("bad grid_n"))?,
            converged: fields[6].parse().map_err(|_| err("bad converged flag"))?,
        });
    }
    Ok(reports)
}

pub fn read_csv(path: &Path) -> Result<Vec<BoundReport>> {
    let file = std::fs::File::open(path)?;
    read_reports(std::io::BufReader::new(file), path)
}
