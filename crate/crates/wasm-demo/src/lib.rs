//! Browser bindings for the demo page: the constant table, a 2D solve, and
//! the square-lemma check.

use wasm_bindgen::prelude::*;

use pgrad::constants::{self, GeometryConstants, Regime, SourceSpace};
use pgrad::grid::{Shape, Source};
use pgrad::harness;
use pgrad::solver::{self, BoundaryCondition, GridProblem};
use pgrad::structural::{GrowthBounds, StructuralParams};
use pgrad::Error;

fn js_err(e: Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

/// Row `[C_p, K_p, xi_p, S1, sbar_p, factor, Lambda]` for a 2D domain.
#[wasm_bindgen]
pub fn constants_row(p: f64, theta: f64, convex: bool) -> Result<Vec<f64>, JsValue> {
    let regime = if convex { Regime::Convex } else { Regime::Boundary };
    let geo = GeometryConstants {
        theta,
        ..GeometryConstants::default()
    };
    let row = (|| -> pgrad::Result<Vec<f64>> {
        let lambda = constants::lambda_general(GrowthBounds::new(p - 2.0, p - 2.0)?, 2, theta, convex)?;
        Ok(vec![
            constants::c_p(p)?,
            constants::k_p(p)?,
            constants::xi_p(p)?,
            constants::s1(p)?,
            constants::sbar_p_2d(p, &geo)?,
            constants::theorem_factor(p, 2, theta, regime, SourceSpace::LebesgueQ)?,
            lambda.value,
        ])
    })();
    row.map_err(js_err)
}

/// Result of [`solve_2d`]: row-major grids of `n * n` values, `NaN` outside
/// the domain.
#[wasm_bindgen]
pub struct Solution {
    n: usize,
    u: Vec<f64>,
    grad_mag: Vec<f64>,
    grad_sup: f64,
    iterations: usize,
    residual: f64,
    converged: bool,
}

#[wasm_bindgen]
impl Solution {
    #[wasm_bindgen(getter)]
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn u(&self) -> Vec<f64> {
        self.u.clone()
    }
    pub fn grad_mag(&self) -> Vec<f64> {
        self.grad_mag.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn grad_sup(&self) -> f64 {
        self.grad_sup
    }
    #[wasm_bindgen(getter)]
    pub fn iterations(&self) -> usize {
        self.iterations
    }
    #[wasm_bindgen(getter)]
    pub fn residual(&self) -> f64 {
        self.residual
    }
    #[wasm_bindgen(getter)]
    pub fn converged(&self) -> bool {
        self.converged
    }
}

/// Solves on a 2D `shape` ("box", "disk", "lshape") with a builtin source.
#[wasm_bindgen]
pub fn solve_2d(shape: &str, n: usize, p: f64, eps: f64, bc: &str, source: &str) -> Result<Solution, JsValue> {
    let run = || -> pgrad::Result<Solution> {
        let shape: Shape = shape.parse()?;
        let bc: BoundaryCondition = bc.parse()?;
        let source: Source = source.parse()?;
        let params = StructuralParams::new(p, eps)?;
        let problem = GridProblem::builtin(shape, 2, n, bc, &source, params)?;
        let (r, converged) = match solver::solve(&problem, 1e-8, 300) {
            Ok(r) => (r, true),
            Err(Error::MaxIterExceeded { best, .. }) => (*best, false),
            Err(e) => return Err(e),
        };
        let mask = r.grid.mask();
        let hide = |v: &[f64]| -> Vec<f64> {
            v.iter().zip(mask).map(|(&x, &m)| if m { x } else { f64::NAN }).collect()
        };
        Ok(Solution {
            n,
            u: hide(&r.u),
            grad_mag: hide(&r.grad_mag),
            grad_sup: r.grad_sup,
            iterations: r.iterations,
            residual: r.residual,
            converged,
        })
    };
    run().map_err(js_err)
}

/// Number of conclusion failures among `trials` premise-satisfying draws.
#[wasm_bindgen]
pub fn lemma_square_violations(trials: usize, seed: u64) -> usize {
    harness::check_lemma_square(trials, seed).violations
}
