//! Energy-minimizing solver for the regularized p-Laplacian Poisson problem
//! `-div(a_eps(|grad u|) grad u) = f` on masked uniform grids.
//!
//! The discrete energy is
//!
//! ```text
//! E(u) = h^N sum_cells [ 2^-N sum_sigma B_eps(|g_sigma|) - f u ]
//! ```
//!
//! where `g_sigma` runs over the `2^N` gradients formed by picking, along each
//! axis, either the backward or the forward face difference of the cell.
//! Every face difference therefore enters the energy directly (no odd-even
//! decoupling), and for `p = 2` the minimizer solves the standard
//! `2N+1`-point scheme. Dirichlet data sits on the true boundary: half a
//! cell from the centre on lattice faces, at the axial distance to the sphere
//! on the ball, with the half-cell quadrature weight sized to that distance.
//! Neumann faces carry a zero difference.
//!
//! Minimization starts with Kačanov iteration: with the coefficient frozen at
//! the current iterate the quadratic model is a symmetric M-matrix system,
//! solved by Jacobi-preconditioned CG, and the resulting direction is accepted
//! via an Armijo line search on the true energy. When a frozen-coefficient
//! step fails to halve the residual, later steps use the full Hessian instead.

use log::debug;

use crate::error::{Error, Result};
use crate::grid::{Grid, Shape, Source, NONE};
use crate::structural::StructuralParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryCondition {
    Dirichlet,
    Neumann,
}

impl std::str::FromStr for BoundaryCondition {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dirichlet" | "Dirichlet" => Ok(BoundaryCondition::Dirichlet),
            "neumann" | "Neumann" => Ok(BoundaryCondition::Neumann),
            _ => Err(Error::domain(format!("unknown boundary condition `{s}`"))),
        }
    }
}

impl std::fmt::Display for BoundaryCondition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BoundaryCondition::Dirichlet => "dirichlet",
            BoundaryCondition::Neumann => "neumann",
        })
    }
}

/// How [`grad_field`] closes the difference stencil at the domain boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryTreatment {
    /// Use the one-sided interior difference; no boundary data assumed.
    OneSided,
    /// Homogeneous Dirichlet data on the boundary face.
    Dirichlet,
    /// Zero normal derivative on the boundary face.
    Neumann,
}

impl From<BoundaryCondition> for BoundaryTreatment {
    fn from(bc: BoundaryCondition) -> Self {
        match bc {
            BoundaryCondition::Dirichlet => BoundaryTreatment::Dirichlet,
            BoundaryCondition::Neumann => BoundaryTreatment::Neumann,
        }
    }
}

/// A discretized boundary value problem.
#[derive(Debug, Clone)]
pub struct GridProblem {
    grid: Grid,
    shape: Option<Shape>,
    bc: BoundaryCondition,
    f: Vec<f64>,
    params: StructuralParams,
}

impl GridProblem {
    pub fn new(grid: Grid, bc: BoundaryCondition, f: Vec<f64>, params: StructuralParams) -> Result<Self> {
        if !(2..=3).contains(&grid.dim()) {
            return Err(Error::domain("problems are posed in 2 or 3 dimensions"));
        }
        if grid.shape()[..grid.dim()].iter().any(|&n| n < 4) {
            return Err(Error::domain("grid needs at least 4 cells per axis"));
        }
        if f.len() != grid.len() {
            return Err(Error::domain("source length does not match the grid"));
        }
        if grid.active_count() == 0 {
            return Err(Error::domain("grid has no active cells"));
        }
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("source has non-finite values"));
        }
        let f: Vec<f64> = f
            .into_iter()
            .zip(grid.mask())
            .map(|(v, &m)| if m { v } else { 0.0 })
            .collect();
        if bc == BoundaryCondition::Neumann {
            let vol = grid.cell_volume();
            let integral: f64 = f.iter().sum::<f64>() * vol;
            let scale: f64 = f.iter().map(|v| v.abs()).sum::<f64>() * vol;
            if integral.abs() > 1e-10 * scale {
                return Err(Error::IncompatibleSource { integral, scale });
            }
        }
        Ok(Self {
            grid,
            shape: None,
            bc,
            f,
            params,
        })
    }

    /// Builds the grid for `shape` and samples `source` on it.
    pub fn builtin(
        shape: Shape,
        dim: usize,
        n: usize,
        bc: BoundaryCondition,
        source: &Source,
        params: StructuralParams,
    ) -> Result<Self> {
        let grid = Grid::for_shape(shape, dim, n)?;
        let f = source.sample(&grid)?;
        let mut problem = Self::new(grid, bc, f, params)?;
        problem.shape = Some(shape);
        Ok(problem)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn shape(&self) -> Option<Shape> {
        self.shape
    }

    pub fn bc(&self) -> BoundaryCondition {
        self.bc
    }

    pub fn source(&self) -> &[f64] {
        &self.f
    }

    pub fn params(&self) -> StructuralParams {
        self.params
    }

    pub fn with_params(&self, params: StructuralParams) -> Self {
        Self {
            params,
            ..self.clone()
        }
    }

    /// Same problem with the source multiplied by `lambda`.
    pub fn scaled_source(&self, lambda: f64) -> Self {
        Self {
            f: self.f.iter().map(|v| lambda * v).collect(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub grid: Grid,
    /// Solution over the whole grid; masked cells hold 0.
    pub u: Vec<f64>,
    /// Cell gradient magnitudes over the whole grid; masked cells hold 0.
    pub grad_mag: Vec<f64>,
    pub grad_sup: f64,
    pub energy: f64,
    pub iterations: usize,
    /// Relative gradient norm of the discrete energy at the returned iterate.
    pub residual: f64,
    /// Energy after each accepted step of the final continuation stage,
    /// starting with the initial iterate.
    pub energy_trace: Vec<f64>,
    /// Regularization levels visited, ending with the target.
    pub epsilon_stages: Vec<f64>,
}

/// Quadrature structure of the discrete energy on one problem.
struct Discretization {
    dim: usize,
    h: f64,
    dirichlet: bool,
    active: Vec<usize>,
    nbr: Vec<[u32; 6]>,
    /// Reciprocal distance to the Dirichlet boundary on sides without an
    /// active neighbour (0 for Neumann).
    bcoef: Vec<[f64; 6]>,
    /// Weight of each (cell, sigma) lattice element; 0 drops it.
    qweight: Vec<f64>,
    /// Linear elements filling the cut lattice squares along a curved
    /// boundary.
    elements: Vec<Element>,
    /// `h^N f` on active cells.
    load: Vec<f64>,
}

/// A triangle carrying a linear interpolant; nodes set to [`NONE`] sit on the
/// boundary with value 0.
struct Element {
    nodes: [u32; 3],
    coef: [[f64; 3]; 3],
    weight: f64,
}

impl Element {
    #[inline]
    fn grad(&self, u: &[f64]) -> [f64; 3] {
        let mut g = [0.0; 3];
        for (&node, c) in self.nodes.iter().zip(&self.coef) {
            if node != NONE {
                let v = u[node as usize];
                g[0] += c[0] * v;
                g[1] += c[1] * v;
            }
        }
        g
    }

    /// Adds `weight * grad^T s` into `y`.
    #[inline]
    fn scatter(&self, s: &[f64; 3], y: &mut [f64]) {
        for (&node, c) in self.nodes.iter().zip(&self.coef) {
            if node != NONE {
                y[node as usize] += self.weight * (c[0] * s[0] + c[1] * s[1]);
            }
        }
    }
}

/// Polygon vertex in square-local coordinates: an active cell or a boundary
/// point.
type Vertex = ([f64; 2], u32);

/// Linear elements for the lattice squares of a 2D grid that are cut by the
/// boundary. Each cut square becomes the polygon through its active corners
/// and the boundary points on its edges, triangulated as a fan from each
/// vertex in turn with weight `1/vertices` per fan. Complete squares
/// likewise average their two diagonal triangulations.
fn cut_elements(grid: &Grid, number: &[u32]) -> Vec<Element> {
    let [nx, ny, _] = grid.shape();
    let h = grid.spacing();
    let corner_index = |i: isize, j: isize| -> Option<usize> {
        if i < 0 || j < 0 || i >= nx as isize || j >= ny as isize {
            return None;
        }
        let idx = grid.index(i as usize, j as usize, 0);
        grid.mask()[idx].then_some(idx)
    };
    let offsets = [(0isize, 0isize), (1, 0), (1, 1), (0, 1)];
    let mut out = Vec::new();
    for j in -1..ny as isize {
        for i in -1..nx as isize {
            let corners: Vec<Option<usize>> = offsets.iter().map(|&(a, b)| corner_index(i + a, j + b)).collect();
            let count = corners.iter().filter(|c| c.is_some()).count();
            if count == 0 || count == 4 {
                continue;
            }
            let mut poly: Vec<Vertex> = Vec::with_capacity(6);
            for m in 0..4 {
                let next = (m + 1) % 4;
                let pos = |q: usize| [offsets[q].0 as f64 * h, offsets[q].1 as f64 * h];
                if let Some(idx) = corners[m] {
                    poly.push((pos(m), number[idx]));
                }
                let (from, to) = match (corners[m], corners[next]) {
                    (Some(_), None) => (m, next),
                    (None, Some(_)) => (next, m),
                    _ => continue,
                };
                let axis = if offsets[from].0 != offsets[to].0 { 0 } else { 1 };
                let step = if axis == 0 {
                    offsets[to].0 - offsets[from].0
                } else {
                    offsets[to].1 - offsets[from].1
                };
                let delta = grid.boundary_distance(corners[from].unwrap(), axis, step > 0);
                let mut x = pos(from);
                x[axis] += step as f64 * delta;
                poly.push((x, NONE));
            }
            // Fans from every vertex keep the element set invariant under the
            // symmetries of the square.
            let fans = poly.len();
            for apex in 0..fans {
                for t in 1..poly.len() - 1 {
                    let tri = [poly[apex], poly[(apex + t) % poly.len()], poly[(apex + t + 1) % poly.len()]];
                    if let Some(e) = triangle(&tri, 1.0 / fans as f64, h) {
                        out.push(e);
                    }
                }
            }
        }
    }
    out
}

/// Linear element on `tri` with weight `scale * area`, or `None` when the
/// triangle is degenerate or has no unknowns.
fn triangle(tri: &[Vertex; 3], scale: f64, h: f64) -> Option<Element> {
    let [(p0, n0), (p1, n1), (p2, n2)] = *tri;
    let det = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]);
    if det.abs() < 1e-12 * h * h || [n0, n1, n2].iter().all(|&n| n == NONE) {
        return None;
    }
    let coef = [
        [(p1[1] - p2[1]) / det, (p2[0] - p1[0]) / det, 0.0],
        [(p2[1] - p0[1]) / det, (p0[0] - p2[0]) / det, 0.0],
        [(p0[1] - p1[1]) / det, (p1[0] - p0[0]) / det, 0.0],
    ];
    Some(Element {
        nodes: [n0, n1, n2],
        coef,
        weight: scale * 0.5 * det.abs(),
    })
}

/// Per-cell one-sided differences `(minus, plus)` along each axis.
#[inline]
fn one_sided(u: &[f64], k: usize, nbr: &[u32; 6], bcoef: &[f64; 6], dim: usize, h: f64) -> ([f64; 3], [f64; 3]) {
    let mut dm = [0.0; 3];
    let mut dp = [0.0; 3];
    let uk = u[k];
    for d in 0..dim {
        let m = nbr[2 * d];
        let p = nbr[2 * d + 1];
        dm[d] = if m != NONE { (uk - u[m as usize]) / h } else { uk * bcoef[2 * d] };
        dp[d] = if p != NONE { (u[p as usize] - uk) / h } else { -uk * bcoef[2 * d + 1] };
    }
    (dm, dp)
}

#[inline]
fn pick(dm: &[f64; 3], dp: &[f64; 3], sigma: usize, dim: usize) -> [f64; 3] {
    let mut g = [0.0; 3];
    for ax in 0..dim {
        g[ax] = if sigma >> ax & 1 == 1 { dp[ax] } else { dm[ax] };
    }
    g
}

#[inline]
fn norm2(g: &[f64; 3]) -> f64 {
    g[0] * g[0] + g[1] * g[1] + g[2] * g[2]
}

impl Discretization {
    fn new(problem: &GridProblem) -> Self {
        let grid = &problem.grid;
        let dim = grid.dim();
        let active = grid.active_indices();
        let nbr = grid.neighbors(&active);
        let h = grid.spacing();
        let vol = grid.cell_volume();
        let dirichlet = problem.bc == BoundaryCondition::Dirichlet;
        let cut = dirichlet && dim == 2 && grid.has_curved_boundary();
        let q = 1usize << dim;
        let mut bcoef = vec![[0.0; 6]; active.len()];
        let mut qweight = vec![vol / q as f64; active.len() * q];
        let mut elements = Vec::new();
        if cut {
            // Lattice elements survive only in complete squares.
            for k in 0..active.len() {
                for sigma in 0..q {
                    let x = nbr[k][usize::from(sigma & 1 == 1)];
                    let y = nbr[k][2 + usize::from(sigma & 2 == 2)];
                    let complete = x != NONE && y != NONE && {
                        let diag = nbr[x as usize][2 + usize::from(sigma & 2 == 2)];
                        diag != NONE && diag == nbr[y as usize][usize::from(sigma & 1 == 1)]
                    };
                    if !complete {
                        qweight[k * q + sigma] = 0.0;
                    }
                }
            }
            let mut number = vec![NONE; grid.len()];
            for (k, &idx) in active.iter().enumerate() {
                number[idx] = k as u32;
            }
            elements = cut_elements(grid, &number);
        } else if dirichlet {
            for (k, row) in nbr.iter().enumerate() {
                for (slot, &j) in row.iter().enumerate().take(2 * dim) {
                    if j == NONE {
                        bcoef[k][slot] = 2.0 / h;
                    }
                }
            }
        }
        let load = active.iter().map(|&i| vol * problem.f[i]).collect();
        Self {
            dim,
            h,
            dirichlet,
            active,
            nbr,
            bcoef,
            qweight,
            elements,
            load,
        }
    }

    fn n(&self) -> usize {
        self.active.len()
    }

    fn quad_points(&self) -> usize {
        1 << self.dim
    }

    #[inline]
    fn diffs(&self, u: &[f64], k: usize) -> ([f64; 3], [f64; 3]) {
        one_sided(u, k, &self.nbr[k], &self.bcoef[k], self.dim, self.h)
    }

    fn energy(&self, params: &StructuralParams, u: &[f64]) -> f64 {
        let mut total = 0.0;
        for k in 0..self.n() {
            let (dm, dp) = self.diffs(u, k);
            let q = self.quad_points();
            for sigma in 0..q {
                let b = params.big_b_of_square(norm2(&pick(&dm, &dp, sigma, self.dim)));
                total += self.qweight[k * q + sigma] * b;
            }
            total -= self.load[k] * u[k];
        }
        for e in &self.elements {
            total += e.weight * params.big_b_of_square(norm2(&e.grad(u)));
        }
        total
    }

    /// `E(u + alpha d) - E(u)` without cancellation against `E(u)`.
    fn energy_increment(&self, params: &StructuralParams, u: &[f64], d: &[f64], alpha: f64) -> f64 {
        let mut total = 0.0;
        for k in 0..self.n() {
            let (um, up) = self.diffs(u, k);
            let (dm, dp) = self.diffs(d, k);
            let q = self.quad_points();
            for sigma in 0..q {
                let g = pick(&um, &up, sigma, self.dim);
                let s = pick(&dm, &dp, sigma, self.dim);
                let mut delta = 0.0;
                for ax in 0..self.dim {
                    delta += alpha * s[ax] * (2.0 * g[ax] + alpha * s[ax]);
                }
                total += self.qweight[k * q + sigma] * params.big_b_increment(norm2(&g), delta);
            }
            total -= alpha * self.load[k] * d[k];
        }
        for e in &self.elements {
            let g = e.grad(u);
            let s = e.grad(d);
            let delta: f64 = (0..2).map(|ax| alpha * s[ax] * (2.0 * g[ax] + alpha * s[ax])).sum();
            total += e.weight * params.big_b_increment(norm2(&g), delta);
        }
        total
    }

    /// Adds `weight * D_sigma^T s` for cell `k` into `y`.
    #[inline]
    fn scatter(&self, k: usize, sigma: usize, s: &[f64; 3], y: &mut [f64]) {
        let row = &self.nbr[k];
        let w = self.qweight[(k << self.dim) + sigma];
        for ax in 0..self.dim {
            let ws = w * s[ax];
            let slot = 2 * ax + (sigma >> ax & 1);
            let j = row[slot];
            let plus = slot & 1 == 1;
            if j != NONE {
                let v = ws / self.h;
                let (to, from) = if plus { (j as usize, k) } else { (k, j as usize) };
                y[to] += v;
                y[from] -= v;
            } else {
                let v = ws * self.bcoef[k][slot];
                y[k] += if plus { -v } else { v };
            }
        }
    }

    /// Gradient of the energy with respect to the active unknowns.
    fn gradient(&self, params: &StructuralParams, u: &[f64], out: &mut [f64]) {
        for (o, l) in out.iter_mut().zip(&self.load) {
            *o = -l;
        }
        for k in 0..self.n() {
            let (dm, dp) = self.diffs(u, k);
            for sigma in 0..self.quad_points() {
                let g = pick(&dm, &dp, sigma, self.dim);
                let a = params.a_of_square(norm2(&g));
                self.scatter(k, sigma, &[a * g[0], a * g[1], a * g[2]], out);
            }
        }
        for e in &self.elements {
            let g = e.grad(u);
            let a = params.a_of_square(norm2(&g));
            e.scatter(&[a * g[0], a * g[1], 0.0], out);
        }
    }

    /// Dependence of the one-sided differences of cell `k` on `u_k` itself.
    #[inline]
    fn self_coefficients(&self, k: usize, sigma: usize) -> [f64; 3] {
        let row = &self.nbr[k];
        let mut alpha = [0.0; 3];
        for ax in 0..self.dim {
            let slot = 2 * ax + (sigma >> ax & 1);
            let mag = if row[slot] != NONE { 1.0 / self.h } else { self.bcoef[k][slot] };
            alpha[ax] = if slot & 1 == 1 { -mag } else { mag };
        }
        alpha
    }
}

/// Symmetric operator `sum_sigma w D^T (a I + c g g^T) D` linearized at an
/// iterate. With `c = 0` this is the frozen-coefficient (Kačanov) matrix;
/// with `c = a'(t)/t` it is the Hessian of the energy.
struct Operator<'a> {
    disc: &'a Discretization,
    a: Vec<f64>,
    c: Vec<f64>,
    g: Vec<[f64; 3]>,
    diag: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Direction {
    Kacanov,
    Newton,
}

/// Rank-one Hessian weight `a'(t)/t` at `t^2 = t2`, or 0 for the frozen
/// coefficient.
#[inline]
fn coupling(kind: Direction, p: f64, eps: f64, a: f64, t2: f64) -> f64 {
    match kind {
        Direction::Newton if p != 2.0 => (p - 2.0) * a / (t2 + eps),
        _ => 0.0,
    }
}

impl<'a> Operator<'a> {
    fn new(disc: &'a Discretization) -> Self {
        let m = disc.n() * disc.quad_points() + disc.elements.len();
        Self {
            disc,
            a: vec![0.0; m],
            c: vec![0.0; m],
            g: vec![[0.0; 3]; m],
            diag: vec![0.0; disc.n()],
        }
    }

    fn linearize(&mut self, params: &StructuralParams, u: &[f64], kind: Direction) {
        let disc = self.disc;
        let q = disc.quad_points();
        let p = params.p();
        let eps = params.epsilon();
        self.diag.iter_mut().for_each(|d| *d = 0.0);
        let inv_h2 = 1.0 / (disc.h * disc.h);
        for k in 0..disc.n() {
            let (dm, dp) = disc.diffs(u, k);
            let row = &disc.nbr[k];
            for sigma in 0..q {
                let i = k * q + sigma;
                let g = pick(&dm, &dp, sigma, disc.dim);
                let t2 = norm2(&g);
                let a = params.a_of_square(t2);
                let c = coupling(kind, p, eps, a, t2);
                self.a[i] = a;
                self.c[i] = c;
                self.g[i] = g;
                let alpha = disc.self_coefficients(k, sigma);
                let ga: f64 = (0..disc.dim).map(|ax| g[ax] * alpha[ax]).sum();
                let w = disc.qweight[i];
                self.diag[k] += w * (a * norm2(&alpha) + c * ga * ga);
                for ax in 0..disc.dim {
                    let plus = sigma >> ax & 1 == 1;
                    let j = row[2 * ax + usize::from(plus)];
                    if j != NONE {
                        self.diag[j as usize] += w * inv_h2 * (a + c * g[ax] * g[ax]);
                    }
                }
            }
        }
        let base = disc.n() * q;
        for (m, e) in disc.elements.iter().enumerate() {
            let g = e.grad(u);
            let t2 = norm2(&g);
            let a = params.a_of_square(t2);
            let c = coupling(kind, p, eps, a, t2);
            self.a[base + m] = a;
            self.c[base + m] = c;
            self.g[base + m] = g;
            for (&node, cv) in e.nodes.iter().zip(&e.coef) {
                if node != NONE {
                    let gc = g[0] * cv[0] + g[1] * cv[1];
                    self.diag[node as usize] += e.weight * (a * (cv[0] * cv[0] + cv[1] * cv[1]) + c * gc * gc);
                }
            }
        }
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let disc = self.disc;
        let q = disc.quad_points();
        y.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..disc.n() {
            let (xm, xp) = disc.diffs(x, k);
            for sigma in 0..q {
                let i = k * q + sigma;
                let gx = pick(&xm, &xp, sigma, disc.dim);
                let a = self.a[i];
                let s = if self.c[i] == 0.0 {
                    [a * gx[0], a * gx[1], a * gx[2]]
                } else {
                    let g = &self.g[i];
                    let cg = self.c[i] * (g[0] * gx[0] + g[1] * gx[1] + g[2] * gx[2]);
                    [a * gx[0] + cg * g[0], a * gx[1] + cg * g[1], a * gx[2] + cg * g[2]]
                };
                disc.scatter(k, sigma, &s, y);
            }
        }
        let base = disc.n() * q;
        for (m, e) in disc.elements.iter().enumerate() {
            let gx = e.grad(x);
            let (a, c, g) = (self.a[base + m], self.c[base + m], &self.g[base + m]);
            let cg = c * (g[0] * gx[0] + g[1] * gx[1]);
            e.scatter(&[a * gx[0] + cg * g[0], a * gx[1] + cg * g[1], 0.0], y);
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn remove_mean(v: &mut [f64]) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
}

/// Jacobi-preconditioned CG for `A x = b` from `x = 0`. Returns the iteration
/// count. With `singular` set, the constant null space is projected out.
fn pcg(op: &Operator, b: &[f64], x: &mut [f64], rel_tol: f64, max_iter: usize, singular: bool) -> usize {
    let n = b.len();
    x.iter_mut().for_each(|v| *v = 0.0);
    let mut r = b.to_vec();
    if singular {
        remove_mean(&mut r);
    }
    let target = rel_tol * dot(&r, &r).sqrt();
    let mut z: Vec<f64> = r.iter().zip(&op.diag).map(|(ri, di)| ri / di).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut it = 0;
    while it < max_iter {
        if dot(&r, &r).sqrt() <= target {
            break;
        }
        op.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] / op.diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        it += 1;
    }
    if singular {
        remove_mean(x);
    }
    it
}

const ARMIJO_C: f64 = 1e-4;
const MAX_CG_ITER: usize = 20_000;
/// Kačanov steps that shrink the residual by less than this factor count as
/// stalled.
const STALL_RATIO: f64 = 0.5;

/// Outcome of one continuation stage.
struct Stage {
    iterations: usize,
    residual: f64,
    converged: bool,
    trace: Vec<f64>,
}

/// Armijo line search along `d` with forward expansion when the unit step is
/// accepted. Returns the step and the energy change.
fn line_search(
    disc: &Discretization,
    params: &StructuralParams,
    u: &[f64],
    d: &[f64],
    slope: f64,
) -> Option<(f64, f64)> {
    let phi = |alpha: f64| disc.energy_increment(params, u, d, alpha);
    let armijo = |alpha: f64, value: f64| value.is_finite() && value <= ARMIJO_C * alpha * slope;
    let mut alpha = 1.0;
    let mut value = phi(alpha);
    if armijo(alpha, value) {
        loop {
            let next = 2.0 * alpha;
            let v = phi(next);
            if armijo(next, v) && v < value && next < 1e12 {
                alpha = next;
                value = v;
            } else {
                return Some((alpha, value));
            }
        }
    }
    while alpha > 1e-14 {
        // Minimizer of the quadratic through phi(0), phi'(0), phi(alpha),
        // safeguarded to [0.1, 0.5] of the current step.
        let trial = if value.is_finite() {
            let denom = 2.0 * (value - slope * alpha);
            if denom > 0.0 {
                (-slope * alpha * alpha / denom).clamp(0.1 * alpha, 0.5 * alpha)
            } else {
                0.5 * alpha
            }
        } else {
            0.1 * alpha
        };
        alpha = trial;
        value = phi(alpha);
        if armijo(alpha, value) {
            return Some((alpha, value));
        }
    }
    None
}

fn run_stage(
    disc: &Discretization,
    params: &StructuralParams,
    u: &mut [f64],
    tol: f64,
    max_iter: usize,
    load_norm: f64,
) -> Stage {
    let n = disc.n();
    let singular = !disc.dirichlet;
    let mut op = Operator::new(disc);
    let mut grad = vec![0.0; n];
    let mut dir = vec![0.0; n];
    let mut neg = vec![0.0; n];
    let mut energy = disc.energy(params, u);
    let mut trace = vec![energy];
    let mut residual;
    let mut previous = f64::INFINITY;
    let mut kind = Direction::Kacanov;
    let mut iterations = 0;
    loop {
        disc.gradient(params, u, &mut grad);
        if singular {
            remove_mean(&mut grad);
        }
        residual = dot(&grad, &grad).sqrt() / load_norm;
        if residual <= tol {
            return Stage {
                iterations,
                residual,
                converged: true,
                trace,
            };
        }
        if iterations >= max_iter {
            break;
        }
        // Frozen-coefficient steps converge only linearly, and slowly where
        // the coefficient degenerates; once they stall, switch to the full
        // Hessian of the energy.
        if kind == Direction::Kacanov && residual > STALL_RATIO * previous {
            kind = Direction::Newton;
        }
        previous = residual;
        for (ng, g) in neg.iter_mut().zip(&grad) {
            *ng = -g;
        }
        let inner_tol = (0.1 * residual).clamp(1e-12, 0.1);
        let mut step = None;
        for attempt in [kind, Direction::Kacanov] {
            op.linearize(params, u, attempt);
            let cg_iters = pcg(&op, &neg, &mut dir, inner_tol, MAX_CG_ITER, singular);
            let slope = dot(&grad, &dir);
            if slope < 0.0 {
                if let Some(found) = line_search(disc, params, u, &dir, slope) {
                    debug!("{attempt:?} step: cg={cg_iters} alpha={:e}", found.0);
                    step = Some(found);
                    break;
                }
            }
            if attempt == Direction::Kacanov {
                break;
            }
            kind = Direction::Kacanov;
        }
        let Some((alpha, change)) = step else {
            debug!("line search failed at iteration {iterations}, residual {residual:e}");
            break;
        };
        debug_assert!(change <= 0.0, "accepted step increased the energy");
        for (ui, di) in u.iter_mut().zip(&dir) {
            *ui += alpha * di;
        }
        if singular {
            remove_mean(u);
        }
        energy += change;
        trace.push(energy);
        iterations += 1;
        debug!(
            "eps={:e} it={iterations} residual={residual:e} energy={energy:e}",
            params.epsilon()
        );
    }
    Stage {
        iterations,
        residual,
        converged: false,
        trace,
    }
}

/// Regularization ladder `1, 0.1, ...` down to `target`, used when `p` is far
/// from 2.
fn epsilon_ladder(p: f64, target: f64) -> Vec<f64> {
    let mut stages = Vec::new();
    if (p - 2.0).abs() > 1.0 && target < 1.0 {
        let mut eps = 1.0;
        while eps > target * (1.0 + 1e-9) {
            stages.push(eps);
            eps *= 0.1;
        }
    }
    stages.push(target);
    stages
}

/// Minimizes the discrete energy of `problem` to relative stationarity `tol`.
pub fn solve(problem: &GridProblem, tol: f64, max_iter: usize) -> Result<SolveResult> {
    if !(tol > 0.0) {
        return Err(Error::domain(format!("tolerance must be positive, got {tol}")));
    }
    let params = problem.params;
    if params.epsilon() == 0.0 && params.p() != 2.0 {
        return Err(Error::SingularCoefficient(format!(
            "epsilon = 0 with p = {} leaves the coefficient singular or degenerate where the gradient vanishes; use epsilon > 0",
            params.p()
        )));
    }
    let disc = Discretization::new(problem);
    let n = disc.n();
    let mut u = vec![0.0; n];
    let load_norm = dot(&disc.load, &disc.load).sqrt();
    let ladder = epsilon_ladder(params.p(), params.epsilon());

    if load_norm == 0.0 {
        return Ok(finish(problem, &disc, &params, u, 0, 0.0, vec![0.0], ladder));
    }

    let mut total_iter = 0;
    let last = ladder.len() - 1;
    let mut outcome = None;
    for (i, &eps) in ladder.iter().enumerate() {
        let stage_params = params.with_epsilon(eps)?;
        let stage_tol = if i == last { tol } else { tol.max(1e-5) };
        let stage = run_stage(&disc, &stage_params, &mut u, stage_tol, max_iter, load_norm);
        total_iter += stage.iterations;
        if i == last {
            outcome = Some(stage);
        }
    }
    let stage = outcome.expect("ladder is nonempty");
    let result = finish(problem, &disc, &params, u, total_iter, stage.residual, stage.trace, ladder);
    if stage.converged {
        Ok(result)
    } else {
        Err(Error::MaxIterExceeded {
            iterations: total_iter,
            residual: stage.residual,
            best: Box::new(result),
        })
    }
}

#[allow(clippy::too_many_arguments)]
fn finish(
    problem: &GridProblem,
    disc: &Discretization,
    params: &StructuralParams,
    u_active: Vec<f64>,
    iterations: usize,
    residual: f64,
    energy_trace: Vec<f64>,
    epsilon_stages: Vec<f64>,
) -> SolveResult {
    let grid = problem.grid.clone();
    let mut u = vec![0.0; grid.len()];
    for (k, &idx) in disc.active.iter().enumerate() {
        u[idx] = u_active[k];
    }
    let grad_mag = grad_field(&u, &grid, problem.bc.into());
    let grad_sup = grad_mag.iter().copied().fold(0.0, f64::max);
    let energy = disc.energy(params, &u_active);
    SolveResult {
        grid,
        u,
        grad_mag,
        grad_sup,
        energy,
        iterations,
        residual,
        energy_trace,
        epsilon_stages,
    }
}

/// Cell gradient magnitudes: the mean of the backward and forward face
/// differences along each axis (centred differences in the interior), with
/// the boundary faces closed according to `treatment`. Masked cells get 0.
pub fn grad_field(u: &[f64], grid: &Grid, treatment: BoundaryTreatment) -> Vec<f64> {
    let dim = grid.dim();
    let h = grid.spacing();
    let mut out = vec![0.0; grid.len()];
    for idx in 0..grid.len() {
        if !grid.mask()[idx] {
            continue;
        }
        let mut g2 = 0.0;
        for d in 0..dim {
            let m = grid.neighbor(idx, d, false).map(|j| (u[idx] - u[j]) / h);
            let p = grid.neighbor(idx, d, true).map(|j| (u[j] - u[idx]) / h);
            let g = match (m, p, treatment) {
                (Some(a), Some(b), _) => 0.5 * (a + b),
                (Some(a), None, BoundaryTreatment::OneSided) => a,
                (None, Some(b), BoundaryTreatment::OneSided) => b,
                (None, None, BoundaryTreatment::OneSided) => 0.0,
                (m, p, BoundaryTreatment::Dirichlet) => {
                    let a = m.unwrap_or_else(|| u[idx] / grid.boundary_distance(idx, d, false));
                    let b = p.unwrap_or_else(|| -u[idx] / grid.boundary_distance(idx, d, true));
                    0.5 * (a + b)
                }
                (m, p, BoundaryTreatment::Neumann) => 0.5 * (m.unwrap_or(0.0) + p.unwrap_or(0.0)),
            };
            g2 += g * g;
        }
        out[idx] = g2.sqrt();
    }
    out
}

/// Discrete energy of an arbitrary grid function `u` for `problem`.
pub fn energy(u: &[f64], problem: &GridProblem) -> Result<f64> {
    if u.len() != problem.grid.len() {
        return Err(Error::domain("u does not match the problem grid"));
    }
    let disc = Discretization::new(problem);
    let active: Vec<f64> = disc.active.iter().map(|&i| u[i]).collect();
    Ok(disc.energy(&problem.params, &active))
}

/// `sum B_eps(|grad u|) * cell volume` over the active cells of a solution.
pub fn gradient_integral_b(result: &SolveResult, params: &StructuralParams) -> f64 {
    let vol = result.grid.cell_volume();
    result
        .grad_mag
        .iter()
        .zip(result.grid.mask())
        .filter(|(_, &m)| m)
        .map(|(&g, _)| params.big_b_unchecked(g) * vol)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sp(p: f64, eps: f64) -> StructuralParams {
        StructuralParams::new(p, eps).unwrap()
    }

    fn unit_square(n: usize) -> Grid {
        Grid::for_shape(Shape::Box, 2, n).unwrap()
    }

    fn linear_x(grid: &Grid) -> Vec<f64> {
        (0..grid.len()).map(|i| grid.center(i)[0]).collect()
    }

    #[test]
    fn grad_field_constant_and_linear() {
        let g = unit_square(4);
        let zeros = grad_field(&vec![3.0; g.len()], &g, BoundaryTreatment::OneSided);
        assert!(zeros.iter().all(|&v| v == 0.0));
        let ones = grad_field(&linear_x(&g), &g, BoundaryTreatment::OneSided);
        for v in ones {
            assert_relative_eq!(v, 1.0, max_relative = 1e-14);
        }
    }

    #[test]
    fn grad_field_quadratic_centered_is_exact() {
        // Cell centres at 0, 0.1, ..., 1.0.
        let g = Grid::new(1, 11, 0.1, [-0.05, 0.0, 0.0]).unwrap();
        let u: Vec<f64> = (0..11).map(|i| g.center(i)[0].powi(2)).collect();
        let grad = grad_field(&u, &g, BoundaryTreatment::OneSided);
        assert_relative_eq!(g.center(5)[0], 0.5, max_relative = 1e-14);
        assert_relative_eq!(grad[5], 1.0, max_relative = 1e-12);
    }

    #[test]
    fn grad_field_neumann_forces_zero_normal_difference() {
        let g = Grid::new(1, 4, 0.25, [0.0; 3]).unwrap();
        let u = [0.0, 1.0, 2.0, 3.0];
        let grad = grad_field(&u, &g, BoundaryTreatment::Neumann);
        assert_relative_eq!(grad[0], 2.0, max_relative = 1e-14);
        assert_relative_eq!(grad[1], 4.0, max_relative = 1e-14);
    }

    #[test]
    fn energy_examples() {
        // Neumann faces carry a zero difference, so u = x loses one face per
        // row: E = (1 - 1/n) B(1), tending to B(1) as the grid refines.
        for n in [8usize, 512] {
            let g = unit_square(n);
            let zero_f = vec![0.0; g.len()];
            let p2 = GridProblem::new(g.clone(), BoundaryCondition::Neumann, zero_f, sp(2.0, 0.0)).unwrap();
            assert_eq!(energy(&vec![0.0; g.len()], &p2).unwrap(), 0.0);
            let shrink = 1.0 - 1.0 / n as f64;
            assert_relative_eq!(energy(&linear_x(&g), &p2).unwrap(), 0.5 * shrink, max_relative = 1e-12);
            let p4 = p2.with_params(sp(4.0, 0.0));
            assert_relative_eq!(energy(&linear_x(&g), &p4).unwrap(), 0.25 * shrink, max_relative = 1e-12);
        }
    }

    #[test]
    fn gradient_integral_examples() {
        let g = unit_square(4);
        let mut r = SolveResult {
            grid: g.clone(),
            u: vec![0.0; g.len()],
            grad_mag: vec![0.0; g.len()],
            grad_sup: 0.0,
            energy: 0.0,
            iterations: 0,
            residual: 0.0,
            energy_trace: vec![],
            epsilon_stages: vec![],
        };
        assert_eq!(gradient_integral_b(&r, &sp(2.0, 0.0)), 0.0);
        r.grad_mag = vec![1.0; g.len()];
        assert_relative_eq!(gradient_integral_b(&r, &sp(2.0, 0.0)), 0.5, max_relative = 1e-14);
        // Volume 3 via a 3x-scaled cell: h^2 = 3/16.
        let g3 = Grid::new(2, 4, (3.0f64 / 16.0).sqrt(), [0.0; 3]).unwrap();
        r.grid = g3;
        r.grad_mag = vec![2.0; 16];
        assert_relative_eq!(gradient_integral_b(&r, &sp(3.0, 0.0)), 8.0, max_relative = 1e-13);
    }

    #[test]
    fn zero_source_gives_zero_solution() {
        let problem = GridProblem::builtin(Shape::Box, 2, 8, BoundaryCondition::Dirichlet, &Source::Zero, sp(3.0, 1e-6)).unwrap();
        let r = solve(&problem, 1e-10, 10).unwrap();
        assert!(r.u.iter().all(|&v| v == 0.0));
        assert_eq!(r.grad_sup, 0.0);
    }

    #[test]
    fn rejects_incompatible_neumann_source() {
        let err = GridProblem::builtin(Shape::Box, 2, 8, BoundaryCondition::Neumann, &Source::Constant(1.0), sp(2.0, 0.0))
            .unwrap_err();
        assert!(matches!(err, Error::IncompatibleSource { .. }));
    }

    #[test]
    fn rejects_singular_coefficient() {
        let problem = GridProblem::builtin(Shape::Box, 2, 8, BoundaryCondition::Dirichlet, &Source::Constant(1.0), sp(1.5, 0.0)).unwrap();
        assert!(matches!(solve(&problem, 1e-8, 10), Err(Error::SingularCoefficient(_))));
    }

    #[test]
    fn rejects_tiny_grids() {
        let g = Grid::for_shape(Shape::Box, 2, 3).unwrap();
        let f = vec![1.0; g.len()];
        assert!(GridProblem::new(g, BoundaryCondition::Dirichlet, f, sp(2.0, 0.0)).is_err());
    }

    #[test]
    fn laplace_matches_five_point_scheme() {
        // For p = 2 the minimizer solves the ghost-cell 5-point scheme;
        // check the discrete residual directly.
        let n = 8;
        let problem = GridProblem::builtin(Shape::Box, 2, n, BoundaryCondition::Dirichlet, &Source::Sine, sp(2.0, 0.0)).unwrap();
        let r = solve(&problem, 1e-12, 50).unwrap();
        let g = problem.grid();
        let h = g.spacing();
        for idx in 0..g.len() {
            let mut lap = 0.0;
            for d in 0..2 {
                for side in [false, true] {
                    let other = g.neighbor(idx, d, side).map(|j| r.u[j]).unwrap_or(-r.u[idx]);
                    lap += other - r.u[idx];
                }
            }
            assert!((-lap / (h * h) - problem.source()[idx]).abs() < 1e-8);
        }
    }

    #[test]
    fn dirichlet_laplace_is_nonnegative_for_nonnegative_source() {
        let problem = GridProblem::builtin(Shape::LShape, 2, 16, BoundaryCondition::Dirichlet, &Source::Gaussian { width: 0.2 }, sp(2.0, 0.0)).unwrap();
        let r = solve(&problem, 1e-10, 50).unwrap();
        assert!(r.u.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn energy_trace_is_nonincreasing() {
        for &p in &[1.4, 4.0] {
            let problem = GridProblem::builtin(Shape::Box, 2, 16, BoundaryCondition::Dirichlet, &Source::Gaussian { width: 0.15 }, sp(p, 1e-6)).unwrap();
            let r = solve(&problem, 1e-8, 500).unwrap();
            assert!(r.energy_trace.windows(2).all(|w| w[1] <= w[0]), "p={p}");
            let last = *r.energy_trace.last().unwrap();
            assert!((last - r.energy).abs() <= 1e-10 * r.energy.abs().max(1e-300) + 1e-14);
        }
    }

    #[test]
    fn neumann_solution_has_zero_mean_and_is_symmetric() {
        let problem = GridProblem::builtin(Shape::Box, 2, 16, BoundaryCondition::Neumann, &Source::GaussianPair { width: 0.12 }, sp(3.0, 1e-6)).unwrap();
        let r = solve(&problem, 1e-9, 500).unwrap();
        let mean: f64 = r.u.iter().sum::<f64>() / r.u.len() as f64;
        assert!(mean.abs() < 1e-12);
        // The source is odd under (x,y) -> (1-x,1-y), so u is too.
        let g = problem.grid();
        let scale = r.u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for idx in 0..g.len() {
            let [i, j, _] = g.coords(idx);
            let mirror = g.index(15 - i, 15 - j, 0);
            assert!((r.u[idx] + r.u[mirror]).abs() < 1e-8 * scale);
        }
    }

    #[test]
    fn dirichlet_solution_is_symmetric() {
        let problem = GridProblem::builtin(Shape::Box, 2, 16, BoundaryCondition::Dirichlet, &Source::Gaussian { width: 0.15 }, sp(1.6, 1e-6)).unwrap();
        let r = solve(&problem, 1e-10, 500).unwrap();
        let g = problem.grid();
        let scale = r.u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for idx in 0..g.len() {
            let [i, j, _] = g.coords(idx);
            for mirror in [g.index(15 - i, j, 0), g.index(j, i, 0)] {
                assert!((r.u[idx] - r.u[mirror]).abs() < 1e-8 * scale);
            }
        }
    }

    #[test]
    fn continuation_ladder() {
        assert_eq!(epsilon_ladder(2.5, 1e-6), vec![1e-6]);
        let l = epsilon_ladder(5.0, 1e-3);
        assert_eq!(l.len(), 4);
        assert_eq!(*l.last().unwrap(), 1e-3);
        assert_eq!(epsilon_ladder(0.5 + 1.0, 0.0).len(), 1);
    }

    #[test]
    fn max_iter_returns_best_iterate() {
        let problem = GridProblem::builtin(Shape::Box, 2, 16, BoundaryCondition::Dirichlet, &Source::Gaussian { width: 0.15 }, sp(6.0, 1e-6)).unwrap();
        match solve(&problem, 1e-12, 2) {
            Err(Error::MaxIterExceeded { best, residual, .. }) => {
                assert!(residual > 1e-12);
                assert!(best.grad_sup > 0.0);
            }
            other => panic!("expected MaxIterExceeded, got {other:?}"),
        }
    }
}
