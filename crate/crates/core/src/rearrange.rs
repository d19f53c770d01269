//! Distribution functions, decreasing rearrangements and Lorentz norms of
//! piecewise-constant functions on finite measure spaces.
//!
//! Every computation is exact up to floating point: a sampled function is a
//! finite list of `(measure, value)` cells, so its rearrangement is a step
//! function obtained by sorting and every integral against it is evaluated
//! in closed form per step.

use std::io::BufRead;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub measure: f64,
    pub value: f64,
}

/// A measurable function given by values on disjoint cells of positive measure.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledFunction {
    cells: Vec<Cell>,
    total_measure: f64,
}

/// A nonincreasing, nonnegative step function on `[0, total]`, zero beyond.
///
/// Step `k` holds `values[k]` on `[breakpoints[k], breakpoints[k+1])`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFunction {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
}

impl SampledFunction {
    pub fn new(cells: Vec<Cell>) -> Result<Self> {
        if cells.is_empty() {
            return Err(Error::domain("a sampled function needs at least one cell"));
        }
        for c in &cells {
            if !(c.measure > 0.0) || !c.measure.is_finite() || !c.value.is_finite() {
                return Err(Error::domain(format!(
                    "cells need positive finite measure and finite value, got {c:?}"
                )));
            }
        }
        let total_measure = cells.iter().map(|c| c.measure).sum();
        Ok(Self {
            cells,
            total_measure,
        })
    }

    /// Builds from parallel slices of measures and values.
    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
        Self::new(
            pairs
                .iter()
                .map(|&(measure, value)| Cell { measure, value })
                .collect(),
        )
    }

    /// All cells share one measure, as on a uniform grid.
    pub fn uniform(cell_measure: f64, values: &[f64]) -> Result<Self> {
        Self::new(
            values
                .iter()
                .map(|&value| Cell {
                    measure: cell_measure,
                    value,
                })
                .collect(),
        )
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn total_measure(&self) -> f64 {
        self.total_measure
    }

    /// `c * v`, cell by cell.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            cells: self
                .cells
                .iter()
                .map(|cell| Cell {
                    measure: cell.measure,
                    value: c * cell.value,
                })
                .collect(),
            total_measure: self.total_measure,
        }
    }

    /// Reads `measure,value` rows after a mandatory header line.
    pub fn from_csv_reader<R: BufRead>(reader: R, origin: &Path) -> Result<Self> {
        let mut lines = reader.lines().enumerate();
        match lines.next() {
            Some((_, Ok(header))) => {
                let fields: Vec<_> = header.split(',').map(str::trim).collect();
                if fields != ["measure", "value"] {
                    return Err(Error::parse(origin, 1, "expected header `measure,value`"));
                }
            }
            Some((_, Err(e))) => return Err(e.into()),
            None => return Err(Error::parse(origin, 1, "empty input")),
        }
        let mut cells = Vec::new();
        for (idx, line) in lines {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split(',').map(str::trim);
            let mut field = |name: &str| -> Result<f64> {
                parts
                    .next()
                    .ok_or_else(|| Error::parse(origin, idx + 1, format!("missing {name}")))?
                    .parse::<f64>()
                    .map_err(|e| Error::parse(origin, idx + 1, format!("bad {name}: {e}")))
            };
            let measure = field("measure")?;
            let value = field("value")?;
            cells.push(Cell { measure, value });
        }
        Self::new(cells)
    }

    pub fn from_csv_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(std::io::BufReader::new(file), path)
    }

    /// `mu(t)`: total measure of the cells where `|v| > t`.
    pub fn distribution_function(&self, t: f64) -> f64 {
        self.cells
            .iter()
            .filter(|c| c.value.abs() > t)
            .map(|c| c.measure)
            .sum()
    }

    /// The decreasing rearrangement of `|v|`.
    pub fn decreasing_rearrangement(&self) -> StepFunction {
        let mut sorted: Vec<Cell> = self
            .cells
            .iter()
            .map(|c| Cell {
                measure: c.measure,
                value: c.value.abs(),
            })
            .collect();
        // Stable sort; ties merge below so their order is irrelevant.
        sorted.sort_by(|x, y| y.value.total_cmp(&x.value));

        let mut breakpoints = vec![0.0];
        let mut values: Vec<f64> = Vec::new();
        let mut acc = 0.0;
        for c in sorted {
            acc += c.measure;
            if values.last() == Some(&c.value) {
                *breakpoints.last_mut().expect("nonempty") = acc;
            } else {
                values.push(c.value);
                breakpoints.push(acc);
            }
        }
        StepFunction {
            breakpoints,
            values,
        }
    }

    /// `||v||_{l,1} = int_0^m v**(tau) tau^(-1/l') dtau`.
    pub fn lorentz_norm(&self, l: f64) -> Result<f64> {
        self.decreasing_rearrangement().lorentz_norm(l)
    }

    /// `(sum measure |value|^q)^(1/q)`.
    pub fn lq_norm(&self, q: f64) -> Result<f64> {
        if !(q >= 1.0) || !q.is_finite() {
            return Err(Error::domain(format!("L^q norm needs 1 <= q < inf, got {q}")));
        }
        let max = self.cells.iter().fold(0.0_f64, |m, c| m.max(c.value.abs()));
        if max == 0.0 {
            return Ok(0.0);
        }
        // Scale by the max to keep |value|^q in range for large q.
        let sum: f64 = self
            .cells
            .iter()
            .map(|c| c.measure * (c.value.abs() / max).powf(q))
            .sum();
        Ok(max * sum.powf(1.0 / q))
    }
}

impl StepFunction {
    /// Builds a step function from explicit steps. Values must be
    /// nonincreasing and nonnegative, breakpoints strictly increasing from 0.
    pub fn new(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if breakpoints.len() != values.len() + 1 || breakpoints[0] != 0.0 {
            return Err(Error::domain("need len(values)+1 breakpoints starting at 0"));
        }
        if breakpoints.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::domain("breakpoints must be strictly increasing"));
        }
        if values.iter().any(|v| !(*v >= 0.0))
            || values.windows(2).any(|w| w[1] > w[0])
        {
            return Err(Error::domain("values must be nonnegative and nonincreasing"));
        }
        Ok(Self {
            breakpoints,
            values,
        })
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn total(&self) -> f64 {
        *self.breakpoints.last().expect("nonempty")
    }

    fn steps(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.values
            .iter()
            .enumerate()
            .map(move |(k, &v)| (self.breakpoints[k], self.breakpoints[k + 1], v))
    }

    /// `v*(s)`; right-continuous, zero for `s >= total`.
    pub fn eval(&self, s: f64) -> f64 {
        if s < 0.0 {
            return self.values.first().copied().unwrap_or(0.0);
        }
        // First breakpoint strictly greater than s closes the step containing s.
        let k = self.breakpoints.partition_point(|&b| b <= s);
        if k == 0 || k > self.values.len() {
            0.0
        } else {
            self.values[k - 1]
        }
    }

    /// `int_0^s v*(r) dr`.
    pub fn integral(&self, s: f64) -> f64 {
        self.steps()
            .take_while(|&(a, _, _)| a < s)
            .map(|(a, b, v)| v * (b.min(s) - a))
            .sum()
    }

    /// `int_0^s v*(r)^2 dr`.
    pub fn square_integral(&self, s: f64) -> f64 {
        self.steps()
            .take_while(|&(a, _, _)| a < s)
            .map(|(a, b, v)| v * v * (b.min(s) - a))
            .sum()
    }

    /// `v**(s) = (1/s) int_0^s v*`.
    pub fn double_star(&self, s: f64) -> Result<f64> {
        if !(s > 0.0) {
            return Err(Error::domain(format!("v** needs s > 0, got {s}")));
        }
        Ok(self.integral(s) / s)
    }

    /// `int_0^m v**(tau) tau^(-1/l') dtau` in closed form.
    ///
    /// On a step `[s0, s1)` with value `c` and running integral `P` at `s0`,
    /// `v**(tau) = c + (P - c s0) / tau`, whose weighted integral has the
    /// antiderivative `c l tau^(1/l) - (P - c s0) l' tau^(-1/l')`.
    pub fn lorentz_norm(&self, l: f64) -> Result<f64> {
        if !(l > 1.0) || !l.is_finite() {
            return Err(Error::domain(format!("Lorentz index must satisfy 1 < l < inf, got {l}")));
        }
        let lp = l / (l - 1.0);
        let mut running = 0.0;
        let mut total = 0.0;
        for (s0, s1, c) in self.steps() {
            total += c * l * (s1.powf(1.0 / l) - s0.powf(1.0 / l));
            let beta = running - c * s0;
            if s0 > 0.0 && beta != 0.0 {
                total += beta * lp * (s0.powf(-1.0 / lp) - s1.powf(-1.0 / lp));
            }
            running += c * (s1 - s0);
        }
        Ok(total)
    }

    /// `int_0^m r^-1 int_0^r v*(rho)^2 drho dr` in closed form.
    pub fn log_weighted_square_integral(&self) -> f64 {
        let mut running = 0.0;
        let mut total = 0.0;
        for (s0, s1, c) in self.steps() {
            let c2 = c * c;
            total += c2 * (s1 - s0);
            if s0 > 0.0 {
                total += (running - c2 * s0) * (s1 / s0).ln();
            }
            running += c2 * (s1 - s0);
        }
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn two_cells() -> SampledFunction {
        SampledFunction::from_pairs(&[(1.0, 3.0), (2.0, 1.0)]).unwrap()
    }

    #[test]
    fn validates_cells() {
        assert!(SampledFunction::from_pairs(&[]).is_err());
        assert!(SampledFunction::from_pairs(&[(0.0, 1.0)]).is_err());
        assert!(SampledFunction::from_pairs(&[(1.0, f64::NAN)]).is_err());
        assert!(StepFunction::new(vec![0.0, 1.0, 1.0], vec![2.0, 1.0]).is_err());
        assert!(StepFunction::new(vec![0.0, 1.0, 2.0], vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn distribution_function_examples() {
        let c = SampledFunction::from_pairs(&[(2.0, 5.0)]).unwrap();
        assert_eq!(c.distribution_function(3.0), 2.0);
        assert_eq!(c.distribution_function(5.0), 0.0);
        assert_eq!(two_cells().distribution_function(2.0), 1.0);
    }

    #[test]
    fn rearrangement_examples() {
        let c = SampledFunction::from_pairs(&[(2.0, 5.0)]).unwrap();
        let r = c.decreasing_rearrangement();
        assert_eq!(r.breakpoints(), &[0.0, 2.0]);
        assert_eq!(r.values(), &[5.0]);

        let ind = SampledFunction::from_pairs(&[(0.5, 0.0), (1.5, 1.0), (1.0, 0.0)]).unwrap();
        let r = ind.decreasing_rearrangement();
        assert_eq!(r.breakpoints(), &[0.0, 1.5, 3.0]);
        assert_eq!(r.values(), &[1.0, 0.0]);

        let r = two_cells().decreasing_rearrangement();
        assert_eq!(r.breakpoints(), &[0.0, 1.0, 3.0]);
        assert_eq!(r.values(), &[3.0, 1.0]);
        assert_eq!(r.eval(0.5), 3.0);
        assert_eq!(r.eval(2.0), 1.0);
        assert_eq!(r.eval(3.0), 0.0);
    }

    #[test]
    fn negative_values_rearrange_by_magnitude() {
        let v = SampledFunction::from_pairs(&[(1.0, -4.0), (1.0, 2.0)]).unwrap();
        let r = v.decreasing_rearrangement();
        assert_eq!(r.values(), &[4.0, 2.0]);
        assert_eq!(v.distribution_function(3.0), 1.0);
    }

    #[test]
    fn tie_order_does_not_matter() {
        let a = SampledFunction::from_pairs(&[(1.0, 2.0), (0.5, 2.0), (2.0, 1.0)]).unwrap();
        let b = SampledFunction::from_pairs(&[(2.0, 1.0), (0.5, 2.0), (1.0, 2.0)]).unwrap();
        assert_eq!(a.decreasing_rearrangement(), b.decreasing_rearrangement());
    }

    #[test]
    fn double_star_examples() {
        let c = SampledFunction::from_pairs(&[(2.0, 5.0)]).unwrap().decreasing_rearrangement();
        assert_relative_eq!(c.double_star(1.3).unwrap(), 5.0, max_relative = 1e-15);
        let ind = SampledFunction::from_pairs(&[(0.75, 1.0), (2.0, 0.0)]).unwrap();
        assert_relative_eq!(
            ind.decreasing_rearrangement().double_star(1.5).unwrap(),
            0.5,
            max_relative = 1e-15
        );
        assert_relative_eq!(
            two_cells().decreasing_rearrangement().double_star(2.0).unwrap(),
            2.0,
            max_relative = 1e-15
        );
        assert!(c.double_star(0.0).is_err());
    }

    #[test]
    fn lorentz_norm_examples() {
        let zero = SampledFunction::from_pairs(&[(3.0, 0.0)]).unwrap();
        assert_eq!(zero.lorentz_norm(3.0).unwrap(), 0.0);

        let (c, m, l) = (2.5_f64, 1.7_f64, 3.0_f64);
        let constant = SampledFunction::from_pairs(&[(m, c)]).unwrap();
        assert_relative_eq!(
            constant.lorentz_norm(l).unwrap(),
            c * l * m.powf(1.0 / l),
            max_relative = 1e-14
        );

        let (a, total, l) = (0.3_f64, 2.0_f64, 2.5_f64);
        let lp = l / (l - 1.0);
        let ind = SampledFunction::from_pairs(&[(a, 1.0), (total - a, 0.0)]).unwrap();
        let expected = l * a.powf(1.0 / l) + lp * (a.powf(1.0 / l) - a * total.powf(-1.0 / lp));
        assert_relative_eq!(ind.lorentz_norm(l).unwrap(), expected, max_relative = 1e-13);
        assert!(ind.lorentz_norm(1.0).is_err());
    }

    #[test]
    fn lorentz_norm_matches_quadrature() {
        let v = SampledFunction::from_pairs(&[(0.4, 3.0), (1.1, -1.5), (0.7, 0.2), (0.3, 2.0)])
            .unwrap();
        let r = v.decreasing_rearrangement();
        let l = 3.0;
        let lp = l / (l - 1.0);
        // Substitute tau = x^3 to remove the endpoint singularity.
        let q = crate::numeric::integrate(
            |x: f64| {
                let tau = x * x * x;
                r.double_star(tau).unwrap() * tau.powf(-1.0 / lp) * 3.0 * x * x
            },
            0.0,
            r.total().cbrt(),
            1e-12,
        )
        .unwrap();
        assert_relative_eq!(r.lorentz_norm(l).unwrap(), q, max_relative = 1e-9);
    }

    #[test]
    fn lq_norm_examples() {
        let c = SampledFunction::from_pairs(&[(1.0, 2.0)]).unwrap();
        assert_relative_eq!(c.lq_norm(3.0).unwrap(), 2.0, max_relative = 1e-15);
        let zero = SampledFunction::from_pairs(&[(1.0, 0.0)]).unwrap();
        assert_eq!(zero.lq_norm(2.0).unwrap(), 0.0);
        assert_relative_eq!(two_cells().lq_norm(2.0).unwrap(), 11f64.sqrt(), max_relative = 1e-15);
        assert!(c.lq_norm(0.5).is_err());
    }

    #[test]
    fn log_weighted_square_integral_matches_quadrature() {
        let r = two_cells().decreasing_rearrangement();
        // inner(r) = 9r on [0,1], 9 + (r-1) on [1,3]
        let exact = 9.0 + 2.0 + 8.0 * 3f64.ln();
        assert_relative_eq!(r.log_weighted_square_integral(), exact, max_relative = 1e-14);
    }

    #[test]
    fn csv_round_trip() {
        let text = "measure,value\n1,3\n2,-1\n";
        let v = SampledFunction::from_csv_reader(text.as_bytes(), Path::new("mem")).unwrap();
        assert_eq!(v, SampledFunction::from_pairs(&[(1.0, 3.0), (2.0, -1.0)]).unwrap());
        let bad = SampledFunction::from_csv_reader("1,3\n".as_bytes(), Path::new("mem"));
        assert!(matches!(bad, Err(Error::Parse { .. })));
    }
}
