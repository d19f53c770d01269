use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pgrad::constants::{self, GeometryConstants, Regime, SourceSpace};
use pgrad::grid::{self, Grid, Shape, Source};
use pgrad::harness::{self, SweepConfig};
use pgrad::solver::{self, BoundaryCondition, GridProblem};
use pgrad::structural::{GrowthBounds, StructuralParams};
use pgrad::{Error, Result};

#[derive(Parser)]
#[command(name = "pgrad", version, about = "Gradient bounds for p-Laplacian Poisson problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tabulate the constant chain over a range of exponents.
    Constants {
        #[arg(long, default_value_t = 1.1)]
        p_min: f64,
        #[arg(long, default_value_t = 10.0)]
        p_max: f64,
        #[arg(long, default_value_t = 19)]
        steps: usize,
        #[arg(long, default_value_t = 3.0)]
        theta: f64,
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(long, default_value = "convex")]
        regime: Regime,
        /// Defaults to lebesgue_q in 2D and lorentz_N1 otherwise.
        #[arg(long)]
        space: Option<SourceSpace>,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve one regularized problem and write `u.csv` and `gradmag.csv`.
    Solve {
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(long, default_value = "box")]
        shape: Shape,
        #[arg(long, default_value_t = 64)]
        n: usize,
        #[arg(long)]
        p: f64,
        #[arg(long, default_value_t = 1e-6)]
        eps: f64,
        #[arg(long, default_value = "dirichlet")]
        bc: BoundaryCondition,
        /// Builtin name (zero, one, sine, gaussian, gaussian-pair) or a grid CSV file.
        #[arg(long, default_value = "gaussian")]
        source: String,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long, default_value_t = 500)]
        max_iter: usize,
        /// Directory receiving the output grids.
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Run a p-sweep from a `key = value` config file and check the bound shape.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "sweep.csv")]
        out: PathBuf,
    },
    /// Run the randomized inequality suites.
    CheckLemmas {
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Draws per structural inequality.
        #[arg(long, default_value_t = 1000)]
        samples: usize,
    },
}

fn linspace(lo: f64, hi: f64, steps: usize) -> Vec<f64> {
    match steps {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..steps)
            .map(|i| lo + (hi - lo) * i as f64 / (steps - 1) as f64)
            .collect(),
    }
}

#[allow(clippy::too_many_arguments)]
fn constants_table(
    p_min: f64,
    p_max: f64,
    steps: usize,
    theta: f64,
    dim: usize,
    regime: Regime,
    space: Option<SourceSpace>,
    out: Option<PathBuf>,
) -> Result<bool> {
    if p_min <= 1.0 || p_max < p_min || p_min.is_nan() || p_max.is_nan() {
        return Err(Error::Domain(format!("need 1 < p-min <= p-max, got {p_min}, {p_max}")));
    }
    let space = space.unwrap_or(if dim == 2 { SourceSpace::LebesgueQ } else { SourceSpace::LorentzN1 });
    let geo = GeometryConstants {
        theta,
        ..GeometryConstants::default()
    };
    let mut text = String::from("p,C_p,K_p,xi_p,S1,sbar_p,factor,Lambda\n");
    for p in linspace(p_min, p_max, steps) {
        let lambda = constants::lambda_general(GrowthBounds::new(p - 2.0, p - 2.0)?, dim, theta, regime == Regime::Convex)?;
        if lambda.discrepancy() > 0.0 {
            eprintln!(
                "p = {p}: Lambda with max{{s_a,0}} = {}, with raw s_a = {} (difference {:e})",
                lambda.value,
                lambda.literal,
                lambda.discrepancy()
            );
        }
        text.push_str(&format!(
            "{p},{},{},{},{},{},{},{}\n",
            constants::c_p(p)?,
            constants::k_p(p)?,
            constants::xi_p(p)?,
            constants::s1(p)?,
            constants::sbar_p_any(p, dim, &geo)?,
            constants::theorem_factor(p, dim, theta, regime, space)?,
            lambda.value
        ));
    }
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(true)
}

/// A builtin source name, or else a grid CSV whose shape must match `grid`.
fn load_source(spec: &str, grid: &Grid) -> Result<Source> {
    if let Ok(source) = spec.parse::<Source>() {
        return Ok(source);
    }
    let path = Path::new(spec);
    if !path.exists() {
        return Err(Error::Domain(format!("`{spec}` is neither a builtin source nor a file")));
    }
    let data = grid::read_grid_csv_path(path)?;
    if data.shape[..] != grid.shape()[..grid.dim()] || (data.h - grid.spacing()).abs() > 1e-12 * grid.spacing() {
        return Err(Error::Domain(format!(
            "{spec}: grid {:?} with h = {} does not match the requested {:?} with h = {}",
            data.shape,
            data.h,
            &grid.shape()[..grid.dim()],
            grid.spacing()
        )));
    }
    Ok(Source::Values(
        data.values.into_iter().map(|v| if v.is_nan() { 0.0 } else { v }).collect(),
    ))
}

#[allow(clippy::too_many_arguments)]
fn solve(
    dim: usize,
    shape: Shape,
    n: usize,
    p: f64,
    eps: f64,
    bc: BoundaryCondition,
    source: &str,
    tol: f64,
    max_iter: usize,
    out_dir: &Path,
) -> Result<bool> {
    let params = StructuralParams::new(p, eps)?;
    let grid = Grid::for_shape(shape, dim, n)?;
    let source = load_source(source, &grid)?;
    let problem = GridProblem::builtin(shape, dim, n, bc, &source, params)?;
    let (result, converged) = match solver::solve(&problem, tol, max_iter) {
        Ok(r) => (r, true),
        Err(Error::MaxIterExceeded { best, .. }) => (*best, false),
        Err(e) => return Err(e),
    };
    std::fs::create_dir_all(out_dir)?;
    grid::write_grid_csv_path(&out_dir.join("u.csv"), &result.grid, &result.u)?;
    grid::write_grid_csv_path(&out_dir.join("gradmag.csv"), &result.grid, &result.grad_mag)?;
    println!("grad_sup = {}", result.grad_sup);
    println!("energy = {}", result.energy);
    println!("iterations = {}", result.iterations);
    println!("residual = {:e}", result.residual);
    println!("converged = {converged}");
    Ok(converged)
}

fn sweep(config: &Path, out: &Path) -> Result<bool> {
    let cfg = SweepConfig::from_path(config)?;
    let reports = harness::run_sweep(&cfg)?;
    harness::emit_csv(&reports, out)?;
    let all_converged = reports.iter().all(|r| r.converged);
    if !all_converged {
        eprintln!("some solves did not converge");
    }
    let levels = &cfg.grid_levels;
    if levels.len() < 2 {
        eprintln!("one grid level: refinement stability not checked");
        return Ok(all_converged && reports.iter().all(|r| r.ratio.is_finite()));
    }
    let pair = (levels[levels.len() - 2], levels[levels.len() - 1]);
    let verdict = harness::check_bound_shape(&reports, pair)?;
    eprintln!(
        "max ratio {:e}, min ratio {:e}, stability {:.4} between n = {} and n = {}: {}",
        verdict.max_ratio,
        verdict.min_ratio,
        verdict.stability,
        pair.0,
        pair.1,
        if verdict.pass { "PASS" } else { "FAIL" }
    );
    Ok(all_converged && verdict.pass)
}

fn check_lemmas(trials: usize, seed: u64, samples: usize) -> Result<bool> {
    let mut outcomes = vec![harness::check_lemma_square(trials, seed)];
    outcomes.extend(harness::structural_suite_all(samples, seed));
    outcomes.push(harness::check_big_b_quadrature(samples.min(200), seed));
    outcomes.push(harness::check_faa(samples.min(200), seed));
    outcomes.push(harness::check_fb2(samples.min(200), seed));
    println!("check,samples,violations,worst_excess,result");
    for o in &outcomes {
        println!(
            "{},{},{},{:e},{}",
            o.name,
            o.samples,
            o.violations,
            o.worst_excess,
            if o.passed() { "PASS" } else { "FAIL" }
        );
    }
    Ok(outcomes.iter().all(|o| o.passed()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Constants {
            p_min,
            p_max,
            steps,
            theta,
            dim,
            regime,
            space,
            out,
        } => constants_table(p_min, p_max, steps, theta, dim, regime, space, out),
        Command::Solve {
            dim,
            shape,
            n,
            p,
            eps,
            bc,
            source,
            tol,
            max_iter,
            out_dir,
        } => solve(dim, shape, n, p, eps, bc, &source, tol, max_iter, &out_dir),
        Command::Sweep { config, out } => sweep(&config, &out),
        Command::CheckLemmas { trials, seed, samples } => check_lemmas(trials, seed, samples),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
