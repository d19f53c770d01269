//! Uniform cell-centred grids with an activity mask, the domain shapes built
//! on them, and the builtin source terms.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Marks a missing neighbour in [`Grid::neighbors`].
pub const NONE: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    /// Unit square or cube `[0,1]^N`.
    Box,
    /// Unit disk or ball centred at the origin, masked on `[-1,1]^N`. The disk
    /// keeps cells whose centre is inside and is closed at the true circle;
    /// the ball keeps cells lying entirely inside and is closed at the
    /// lattice faces.
    Ball,
    /// `[0,1]^N` minus the quadrant `x > 1/2, y > 1/2` (all `z` in 3D).
    LShape,
}

impl Shape {
    pub fn is_convex(&self) -> bool {
        !matches!(self, Shape::LShape)
    }
}

impl FromStr for Shape {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "box" | "square" | "cube" | "rectangle" => Ok(Shape::Box),
            "ball" | "disk" => Ok(Shape::Ball),
            "lshape" | "l-shape" | "L" => Ok(Shape::LShape),
            _ => Err(Error::domain(format!("unknown shape `{s}`"))),
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Shape::Box => "box",
            Shape::Ball => "ball",
            Shape::LShape => "lshape",
        })
    }
}

/// A uniform grid of `n[0] x n[1] x n[2]` cells of side `h` (unused axes have
/// extent 1), lower corner at `origin`, with cells outside the domain masked.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    dim: usize,
    n: [usize; 3],
    h: f64,
    origin: [f64; 3],
    mask: Vec<bool>,
    /// Curved domain whose true boundary closes the masked stencil.
    domain: Option<Shape>,
}

impl Grid {
    /// Fully active grid with `n` cells along each of `dim` axes.
    pub fn new(dim: usize, n: usize, h: f64, origin: [f64; 3]) -> Result<Self> {
        if !(1..=3).contains(&dim) || n == 0 || !(h > 0.0) {
            return Err(Error::domain(format!(
                "grid needs 1 <= dim <= 3, n > 0, h > 0 (got {dim}, {n}, {h})"
            )));
        }
        let mut shape = [1usize; 3];
        shape[..dim].fill(n);
        Ok(Self {
            dim,
            n: shape,
            h,
            origin,
            mask: vec![true; shape.iter().product()],
            domain: None,
        })
    }

    /// Grid with `n` cells per axis covering `shape`.
    pub fn for_shape(shape: Shape, dim: usize, n: usize) -> Result<Self> {
        if !(2..=3).contains(&dim) {
            return Err(Error::domain(format!("domains are 2D or 3D, got dim {dim}")));
        }
        match shape {
            Shape::Box => Self::new(dim, n, 1.0 / n as f64, [0.0; 3]),
            Shape::LShape => {
                if !n.is_multiple_of(2) {
                    return Err(Error::domain("the L-shape needs an even cell count"));
                }
                let mut g = Self::new(dim, n, 1.0 / n as f64, [0.0; 3])?;
                g.retain(|x| !(x[0] > 0.5 && x[1] > 0.5));
                Ok(g)
            }
            Shape::Ball => {
                let mut g = Self::new(dim, n, 2.0 / n as f64, [-1.0; 3])?;
                if dim == 2 {
                    g.retain(|x| x[0] * x[0] + x[1] * x[1] < 1.0);
                    g.domain = Some(Shape::Ball);
                } else {
                    let half = 0.5 * g.h;
                    // Farthest corner from the origin.
                    g.retain(|x| x.iter().map(|c| (c.abs() + half).powi(2)).sum::<f64>() <= 1.0 + 1e-12);
                }
                Ok(g)
            }
        }
    }

    fn retain(&mut self, keep: impl Fn(&[f64; 3]) -> bool) {
        for idx in 0..self.mask.len() {
            let c = self.center(idx);
            self.mask[idx] = keep(&c);
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Cells per axis; unused axes report 1.
    pub fn shape(&self) -> [usize; 3] {
        self.n
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn set_mask(&mut self, mask: Vec<bool>) -> Result<()> {
        if mask.len() != self.mask.len() {
            return Err(Error::domain("mask length does not match the grid"));
        }
        self.mask = mask;
        Ok(())
    }

    pub fn active_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.n[0] * (j + self.n[1] * k)
    }

    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.n[0];
        let j = (idx / self.n[0]) % self.n[1];
        let k = idx / (self.n[0] * self.n[1]);
        [i, j, k]
    }

    /// Physical centre of cell `idx`; unused axes report the origin.
    pub fn center(&self, idx: usize) -> [f64; 3] {
        let c = self.coords(idx);
        let mut x = self.origin;
        for d in 0..self.dim {
            x[d] += (c[d] as f64 + 0.5) * self.h;
        }
        x
    }

    /// Active neighbour of `idx` one step along `axis` (`side` false: minus,
    /// true: plus).
    pub fn neighbor(&self, idx: usize, axis: usize, side: bool) -> Option<usize> {
        let c = self.coords(idx);
        let mut c2 = c;
        if side {
            if c[axis] + 1 >= self.n[axis] {
                return None;
            }
            c2[axis] += 1;
        } else {
            if c[axis] == 0 {
                return None;
            }
            c2[axis] -= 1;
        }
        let j = self.index(c2[0], c2[1], c2[2]);
        self.mask[j].then_some(j)
    }

    /// True when the boundary is curved and not aligned with cell faces, so
    /// the stencil must be closed at [`Grid::boundary_distance`].
    pub fn has_curved_boundary(&self) -> bool {
        self.domain.is_some()
    }

    /// Distance from the centre of `idx` to the domain boundary along `axis`
    /// on the given side, for a side with no active neighbour. Lattice faces
    /// give `h/2`; on the disk it is the distance to the circle, kept within
    /// `[h/100, h]` so no boundary node collapses onto a cell centre.
    pub fn boundary_distance(&self, idx: usize, axis: usize, side: bool) -> f64 {
        match self.domain {
            Some(Shape::Ball) => {
                let x = self.center(idx);
                let perp: f64 = (0..self.dim).filter(|&d| d != axis).map(|d| x[d] * x[d]).sum();
                let reach = (1.0 - perp).max(0.0).sqrt();
                let along = if side { reach - x[axis] } else { reach + x[axis] };
                along.clamp(0.01 * self.h, self.h)
            }
            _ => 0.5 * self.h,
        }
    }

    /// Grid indices of the active cells in storage order.
    pub fn active_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.mask[i]).collect()
    }

    /// Neighbour table over active cells: entry `2*axis + side` of row `k` is
    /// the active-cell number of the neighbour, or [`NONE`].
    pub fn neighbors(&self, active: &[usize]) -> Vec<[u32; 6]> {
        let mut number = vec![NONE; self.len()];
        for (k, &idx) in active.iter().enumerate() {
            number[idx] = k as u32;
        }
        active
            .iter()
            .map(|&idx| {
                let mut row = [NONE; 6];
                for d in 0..self.dim {
                    for (s, side) in [false, true].into_iter().enumerate() {
                        if let Some(j) = self.neighbor(idx, d, side) {
                            row[2 * d + s] = number[j];
                        }
                    }
                }
                row
            })
            .collect()
    }
}

/// Values over a grid as read back from a grid CSV file.
#[derive(Debug, Clone, PartialEq)]
pub struct GridValues {
    pub shape: Vec<usize>,
    pub h: f64,
    /// Storage order; `nan` marks a masked cell.
    pub values: Vec<f64>,
}

/// Writes `values` as rows of `nx` numbers under the header
/// `# shape: nx,ny[,nz]; h: <spacing>`. Masked cells are written as `nan`.
pub fn write_grid_csv<W: Write>(mut out: W, grid: &Grid, values: &[f64]) -> Result<()> {
    if values.len() != grid.len() {
        return Err(Error::domain("value count does not match the grid"));
    }
    let dims: Vec<String> = grid.shape()[..grid.dim()].iter().map(usize::to_string).collect();
    writeln!(out, "# shape: {}; h: {}", dims.join(","), grid.spacing())?;
    let nx = grid.shape()[0];
    for (r, row) in values.chunks(nx).enumerate() {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(i, v)| {
                if grid.mask()[r * nx + i] {
                    v.to_string()
                } else {
                    "nan".to_string()
                }
            })
            .collect();
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(())
}

pub fn write_grid_csv_path(path: &Path, grid: &Grid, values: &[f64]) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_grid_csv(file, grid, values)
}

/// Reads a file written by [`write_grid_csv`].
pub fn read_grid_csv<R: BufRead>(reader: R, origin: &Path) -> Result<GridValues> {
    let mut lines = reader.lines();
    let header = match lines.next() {
        Some(line) => line?,
        None => return Err(Error::parse(origin, 1, "empty input")),
    };
    let bad_header = || Error::parse(origin, 1, "expected `# shape: nx,ny[,nz]; h: <spacing>`");
    let rest = header.trim().strip_prefix('#').ok_or_else(bad_header)?;
    let (shape_part, h_part) = rest.split_once(';').ok_or_else(bad_header)?;
    let dims = shape_part.trim().strip_prefix("shape:").ok_or_else(bad_header)?;
    let shape = dims
        .split(',')
        .map(|d| d.trim().parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| bad_header())?;
    let h = h_part
        .trim()
        .strip_prefix("h:")
        .ok_or_else(bad_header)?
        .trim()
        .parse::<f64>()
        .map_err(|_| bad_header())?;
    if !(2..=3).contains(&shape.len()) || shape.contains(&0) || !(h > 0.0) {
        return Err(bad_header());
    }
    let mut values = Vec::with_capacity(shape.iter().product());
    for (idx, line) in lines.enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::parse(origin, idx + 2, e.to_string()))?;
        if row.len() != shape[0] {
            return Err(Error::parse(origin, idx + 2, format!("expected {} values", shape[0])));
        }
        values.extend(row);
    }
    if values.len() != shape.iter().product::<usize>() {
        return Err(Error::parse(origin, 1, "row count does not match the shape"));
    }
    Ok(GridValues { shape, h, values })
}

pub fn read_grid_csv_path(path: &Path) -> Result<GridValues> {
    let file = std::fs::File::open(path)?;
    read_grid_csv(std::io::BufReader::new(file), path)
}

/// Builtin source terms.
#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Zero,
    Constant(f64),
    /// `N pi^2 prod sin(pi x_i)`, whose Dirichlet Poisson solution on the unit
    /// box is `prod sin(pi x_i)`.
    Sine,
    /// Gaussian density of unit mass and the given width at the domain
    /// centre.
    Gaussian { width: f64 },
    /// Positive and negative unit-mass Gaussian bumps on the main diagonal,
    /// shifted to have exactly zero discrete mean.
    GaussianPair { width: f64 },
    /// Explicit values over the whole grid, in storage order.
    Values(Vec<f64>),
}

impl FromStr for Source {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(Source::Zero),
            "one" | "constant" => Ok(Source::Constant(1.0)),
            "sine" => Ok(Source::Sine),
            "gaussian" => Ok(Source::Gaussian { width: 0.1 }),
            "gaussian-pair" | "gaussian_pair" => Ok(Source::GaussianPair { width: 0.1 }),
            _ => Err(Error::domain(format!("unknown builtin source `{s}`"))),
        }
    }
}

fn shape_center(grid: &Grid) -> [f64; 3] {
    let mut c = [0.0; 3];
    for (d, cd) in c.iter_mut().enumerate().take(grid.dim()) {
        *cd = grid.origin()[d] + 0.5 * grid.shape()[d] as f64 * grid.spacing();
    }
    c
}

fn gaussian(x: &[f64; 3], c: &[f64; 3], width: f64, dim: usize) -> f64 {
    let r2: f64 = (0..dim).map(|d| (x[d] - c[d]).powi(2)).sum();
    let norm = (2.0 * std::f64::consts::PI * width * width).powf(-(dim as f64) / 2.0);
    norm * (-r2 / (2.0 * width * width)).exp()
}

impl Source {
    /// Samples the source at the active cell centres; masked cells get 0.
    pub fn sample(&self, grid: &Grid) -> Result<Vec<f64>> {
        let dim = grid.dim();
        let mut f = vec![0.0; grid.len()];
        match self {
            Source::Values(v) => {
                if v.len() != grid.len() {
                    return Err(Error::domain(format!(
                        "source has {} values, grid has {} cells",
                        v.len(),
                        grid.len()
                    )));
                }
                for (idx, fi) in f.iter_mut().enumerate() {
                    if grid.mask()[idx] {
                        *fi = v[idx];
                    }
                }
                return Ok(f);
            }
            Source::GaussianPair { width } => {
                let centre = shape_center(grid);
                let span = 0.5 * grid.shape()[0] as f64 * grid.spacing();
                let mut plus = centre;
                let mut minus = centre;
                for d in 0..dim {
                    plus[d] -= 0.4 * span;
                    minus[d] += 0.4 * span;
                }
                let active = grid.active_indices();
                for &idx in &active {
                    let x = grid.center(idx);
                    f[idx] = gaussian(&x, &plus, *width, dim) - gaussian(&x, &minus, *width, dim);
                }
                let mean = active.iter().map(|&i| f[i]).sum::<f64>() / active.len() as f64;
                for &idx in &active {
                    f[idx] -= mean;
                }
                return Ok(f);
            }
            _ => {}
        }
        let centre = shape_center(grid);
        for (idx, fi) in f.iter_mut().enumerate() {
            if !grid.mask()[idx] {
                continue;
            }
            let x = grid.center(idx);
            *fi = match self {
                Source::Zero => 0.0,
                Source::Constant(c) => *c,
                Source::Sine => {
                    let prod: f64 = (0..dim).map(|d| (std::f64::consts::PI * x[d]).sin()).product();
                    dim as f64 * std::f64::consts::PI.powi(2) * prod
                }
                Source::Gaussian { width } => gaussian(&x, &centre, *width, dim),
                Source::Values(_) | Source::GaussianPair { .. } => unreachable!(),
            };
        }
        Ok(f)
    }
}
