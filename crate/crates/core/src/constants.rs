//! Explicit constants of the gradient estimate and their p-dependent factors.
//!
//! The geometric constants of the domain (`c_Omega`, `C''`, `||k||_{theta,1}`,
//! the abstract `C` of the quadratic step) are not computable from the
//! theory; they are carried as configuration in [`GeometryConstants`] with
//! neutral defaults of 1.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::structural::GrowthBounds;

fn check_p(p: f64) -> Result<()> {
    if !(p > 1.0) || !p.is_finite() {
        return Err(Error::domain(format!("p must satisfy 1 < p < inf, got {p}")));
    }
    Ok(())
}

/// `C_p`: `2^(1/(p-1))` for `p < 2`, `p` otherwise.
pub fn c_p(p: f64) -> Result<f64> {
    check_p(p)?;
    Ok(if p < 2.0 { 2f64.powf(1.0 / (p - 1.0)) } else { p })
}

/// `K_p`: 3 for `p < 2`, `2p - 1` otherwise.
pub fn k_p(p: f64) -> Result<f64> {
    check_p(p)?;
    Ok(if p < 2.0 { 3.0 } else { 2.0 * p - 1.0 })
}

/// `xi_p = min{p-1, 1} / 2`.
pub fn xi_p(p: f64) -> Result<f64> {
    check_p(p)?;
    Ok((p - 1.0).min(1.0) / 2.0)
}

fn ratio_candidates(c: f64, p: f64) -> Result<[f64; 4]> {
    check_p(p)?;
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::domain(format!("c must be positive, got {c}")));
    }
    let cp = c.powf(p - 1.0);
    Ok([2.0 * c, 2.0 * cp, p * c, p * cp])
}

/// `m(c,p) = min{2c, 2c^(p-1), pc, pc^(p-1)}`.
pub fn m_cp(c: f64, p: f64) -> Result<f64> {
    Ok(ratio_candidates(c, p)?.into_iter().fold(f64::INFINITY, f64::min))
}

/// `M(c,p) = max{2c, 2c^(p-1), pc, pc^(p-1)}`.
pub fn big_m_cp(c: f64, p: f64) -> Result<f64> {
    Ok(ratio_candidates(c, p)?.into_iter().fold(0.0, f64::max))
}

/// `S1 = max{2,p} C_p`.
pub fn s1(p: f64) -> Result<f64> {
    check_p(p)?;
    Ok(if p < 2.0 { 2f64.powf(p / (p - 1.0)) } else { p * p })
}

/// Exponent `theta N / (theta - (N-1))` governing the boundary-curvature term.
pub fn boundary_exponent(dim: usize, theta: f64) -> Result<f64> {
    if dim < 2 {
        return Err(Error::domain(format!("dimension must be >= 2, got {dim}")));
    }
    let n = dim as f64;
    if !(theta > n - 1.0) || !theta.is_finite() {
        return Err(Error::domain(format!("theta must exceed N-1 = {}, got {theta}", n - 1.0)));
    }
    Ok(theta * n / (theta - (n - 1.0)))
}

/// Domain-dependent inputs to the constant chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometryConstants {
    pub c_omega: f64,
    pub c_doubleprime: f64,
    /// `|Omega|`
    pub volume: f64,
    /// `|dOmega|`
    pub boundary_area: f64,
    /// `||k||_{theta,1}` of the curvature bound on the boundary.
    pub k_norm_theta1: f64,
    pub theta: f64,
}

impl Default for GeometryConstants {
    fn default() -> Self {
        Self {
            c_omega: 1.0,
            c_doubleprime: 1.0,
            volume: 1.0,
            boundary_area: 1.0,
            k_norm_theta1: 1.0,
            theta: 3.0,
        }
    }
}

impl GeometryConstants {
    pub fn validate(&self, dim: usize) -> Result<()> {
        let fields = [
            ("c_omega", self.c_omega),
            ("c_doubleprime", self.c_doubleprime),
            ("volume", self.volume),
            ("boundary_area", self.boundary_area),
            ("k_norm_theta1", self.k_norm_theta1),
        ];
        for (name, v) in fields {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidGeometry(format!("{name} must be positive, got {v}")));
            }
        }
        boundary_exponent(dim, self.theta)
            .map(|_| ())
            .map_err(|e| Error::InvalidGeometry(e.to_string()))
    }

    /// `C-bar = (c_Omega^(1/theta) / (N' ||k||))^(theta N/(theta-(N-1)))`.
    ///
    /// For `N = 2` this coincides with `(2 ||k|| c_Omega^(-1/theta))^(-2 theta/(theta-1))`.
    pub fn c_bar(&self, dim: usize) -> Result<f64> {
        self.validate(dim)?;
        let n = dim as f64;
        let n_conj = n / (n - 1.0);
        let e = boundary_exponent(dim, self.theta)?;
        Ok((self.c_omega.powf(1.0 / self.theta) / (n_conj * self.k_norm_theta1)).powf(e))
    }

    /// `C_{N,Omega} = min{(|dOmega|/c_Omega)^N', |Omega|/2, C''}`.
    pub fn c_n_omega(&self, dim: usize) -> Result<f64> {
        self.validate(dim)?;
        let n = dim as f64;
        let n_conj = n / (n - 1.0);
        Ok((self.boundary_area / self.c_omega)
            .powf(n_conj)
            .min(self.volume / 2.0)
            .min(self.c_doubleprime))
    }
}

fn sbar_base(p: f64) -> f64 {
    if p < 2.0 {
        (p - 1.0) / 6.0
    } else {
        1.0 / (2.0 * (2.0 * p - 1.0))
    }
}

/// `s-bar_p` for `N >= 3`.
pub fn sbar_p(p: f64, dim: usize, geo: &GeometryConstants) -> Result<f64> {
    check_p(p)?;
    if dim < 3 {
        return Err(Error::domain("sbar_p is the N >= 3 form; use sbar_p_2d for N = 2"));
    }
    let e = boundary_exponent(dim, geo.theta)?;
    Ok(geo.c_bar(dim)? * sbar_base(p).powf(e))
}

/// `s-bar_p` for `N = 2`, exponent `2 theta / (theta - 1)`.
pub fn sbar_p_2d(p: f64, geo: &GeometryConstants) -> Result<f64> {
    check_p(p)?;
    let e = boundary_exponent(2, geo.theta)?;
    Ok(geo.c_bar(2)? * sbar_base(p).powf(e))
}

/// `s-bar_p` dispatched on the dimension.
pub fn sbar_p_any(p: f64, dim: usize, geo: &GeometryConstants) -> Result<f64> {
    if dim == 2 {
        sbar_p_2d(p, geo)
    } else {
        sbar_p(p, dim, geo)
    }
}

/// `s_p`: `|Omega|/2` on convex domains, else `min{C_{N,Omega}, s-bar_p}`.
pub fn s_p(p: f64, dim: usize, geo: &GeometryConstants, convex: bool) -> Result<f64> {
    check_p(p)?;
    geo.validate(dim)?;
    if convex {
        return Ok(geo.volume / 2.0);
    }
    Ok(geo.c_n_omega(dim)?.min(sbar_p_any(p, dim, geo)?))
}

/// `S2 = C'' S1 / s_p`.
pub fn s2(p: f64, s_p_val: f64, c_doubleprime: f64) -> Result<f64> {
    if !(s_p_val > 0.0) || !(c_doubleprime > 0.0) {
        return Err(Error::domain("S2 needs s_p > 0 and C'' > 0"));
    }
    Ok(c_doubleprime * s1(p)? / s_p_val)
}

/// `S3 = sqrt(C K_p) S2 + 2 (C K_p + 1) / min{p-1, 1}`.
pub fn s3(p: f64, s2_val: f64, c_env: f64) -> Result<f64> {
    if !(s2_val > 0.0) || !(c_env > 0.0) {
        return Err(Error::domain("S3 needs S2 > 0 and C > 0"));
    }
    let ck = c_env * k_p(p)?;
    Ok(ck.sqrt() * s2_val + 2.0 * (ck + 1.0) / (p - 1.0).min(1.0))
}

/// Which hypothesis on the domain the bound is taken under.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// `dOmega in W^2 L^{theta,1}` for some `theta > N - 1`.
    Boundary,
    Convex,
}

/// Norm the source is measured in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceSpace {
    /// `L^{N,1}`, for `N >= 3`.
    LorentzN1,
    /// `L^q` with `q > 2`, for `N = 2`.
    LebesgueQ,
}

impl FromStr for Regime {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "boundary" | "boundary_W2Ltheta1" => Ok(Regime::Boundary),
            "convex" => Ok(Regime::Convex),
            _ => Err(Error::domain(format!("unknown regime `{s}`"))),
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Boundary => "boundary",
            Regime::Convex => "convex",
        })
    }
}

impl FromStr for SourceSpace {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lorentz" | "lorentz_N1" => Ok(SourceSpace::LorentzN1),
            "lebesgue" | "lebesgue_q" => Ok(SourceSpace::LebesgueQ),
            _ => Err(Error::domain(format!("unknown source space `{s}`"))),
        }
    }
}

impl fmt::Display for SourceSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SourceSpace::LorentzN1 => "lorentz_N1",
            SourceSpace::LebesgueQ => "lebesgue_q",
        })
    }
}

/// The p-dependent factor multiplying `C ||f||` in the global gradient bound.
///
/// | regime   | `1 < p < 2`                         | `p >= 2`           |
/// |----------|-------------------------------------|--------------------|
/// | boundary | `2^(p/(p-1)) (p-1)^(-e)`            | `p^(5/2 + e)`      |
/// | convex   | `2^(p/(p-1))`                       | `p^(5/2)`          |
///
/// with `e = theta N / (theta - (N-1))` (`2 theta/(theta-1)` when `N = 2`).
pub fn theorem_factor(
    p: f64,
    dim: usize,
    theta: f64,
    regime: Regime,
    space: SourceSpace,
) -> Result<f64> {
    check_p(p)?;
    match (space, dim) {
        (SourceSpace::LorentzN1, d) if d >= 3 => {}
        (SourceSpace::LebesgueQ, 2) => {}
        _ => {
            return Err(Error::domain(format!(
                "source space {space} does not apply in dimension {dim}"
            )))
        }
    }
    let e = match regime {
        Regime::Boundary => boundary_exponent(dim, theta)?,
        Regime::Convex => 0.0,
    };
    Ok(if p < 2.0 {
        2f64.powf(p / (p - 1.0)) * (p - 1.0).powf(-e)
    } else {
        p.powf(2.5 + e)
    })
}

/// `Lambda(i_a, s_a)` for a general coefficient, in both readings of the
/// final term's numerator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaValue {
    /// Numerator `4 + 2 max{s_a, 0}`, consistent with every other substitution.
    pub value: f64,
    /// Numerator `4 + 2 s_a` with the raw upper index.
    pub literal: f64,
}

impl LambdaValue {
    pub fn discrepancy(&self) -> f64 {
        (self.value - self.literal).abs()
    }
}

/// General-operator factor `Lambda(i_a, s_a)`:
/// `sqrt(3 + 2s) (2 + s)^((2+i)/(1+i)) X + (4 + 2s) / (1 + i)` with
/// `s = max{s_a, 0}`, `i = min{i_a, 0}` and `X = ((3+2s)/(1+i))^e` on
/// non-convex domains, `X = 1` on convex ones.
pub fn lambda_general(g: GrowthBounds, dim: usize, theta: f64, convex: bool) -> Result<LambdaValue> {
    let s_plus = g.upper().max(0.0);
    let i_minus = g.lower().min(0.0);
    if !(i_minus > -1.0) {
        return Err(Error::domain("Lambda needs i_a > -1"));
    }
    let mut lead = (3.0 + 2.0 * s_plus).sqrt() * (2.0 + s_plus).powf((2.0 + i_minus) / (1.0 + i_minus));
    if !convex {
        let e = boundary_exponent(dim, theta)?;
        lead *= ((3.0 + 2.0 * s_plus) / (1.0 + i_minus)).powf(e);
    }
    Ok(LambdaValue {
        value: lead + (4.0 + 2.0 * s_plus) / (1.0 + i_minus),
        literal: lead + (4.0 + 2.0 * g.upper()) / (1.0 + i_minus),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn c_p_examples() {
        assert_eq!(c_p(2.0).unwrap(), 2.0);
        assert_eq!(2f64.powf(1.0 / (2.0 - 1.0)), 2.0);
        assert_relative_eq!(c_p(1.5).unwrap(), 4.0, max_relative = 1e-15);
        assert_eq!(c_p(3.0).unwrap(), 3.0);
        assert!(c_p(1.0).is_err());
    }

    #[test]
    fn k_p_and_xi_examples() {
        assert_eq!(k_p(1.5).unwrap(), 3.0);
        assert_eq!(k_p(2.0).unwrap(), 3.0);
        assert_eq!(k_p(5.0).unwrap(), 9.0);
        assert!(k_p(0.5).is_err());
        assert_eq!(xi_p(1.5).unwrap(), 0.25);
        assert_eq!(xi_p(2.0).unwrap(), 0.5);
        assert_eq!(xi_p(10.0).unwrap(), 0.5);
    }

    #[test]
    fn m_examples() {
        assert_eq!((m_cp(1.0, 3.0).unwrap(), big_m_cp(1.0, 3.0).unwrap()), (2.0, 3.0));
        assert_eq!((m_cp(2.0, 2.0).unwrap(), big_m_cp(2.0, 2.0).unwrap()), (4.0, 4.0));
        assert_relative_eq!(m_cp(0.5, 4.0).unwrap(), 0.25, max_relative = 1e-15);
        assert_relative_eq!(big_m_cp(0.5, 4.0).unwrap(), 2.0, max_relative = 1e-15);
    }

    #[test]
    fn s1_examples() {
        assert_eq!(s1(2.0).unwrap(), 4.0);
        assert_relative_eq!(s1(1.5).unwrap(), 8.0, max_relative = 1e-15);
        assert_eq!(s1(3.0).unwrap(), 9.0);
        // S1 = max{2,p} C_p
        for &p in &[1.2, 1.9, 2.5, 7.0] {
            assert_relative_eq!(s1(p).unwrap(), p.max(2.0) * c_p(p).unwrap(), max_relative = 1e-14);
        }
    }

    #[test]
    fn sbar_examples() {
        let unit_cbar = |dim: usize, theta: f64| {
            // Choose c_Omega so that C-bar = 1: c^(1/theta) = N' ||k||.
            let n = dim as f64;
            let n_conj = n / (n - 1.0);
            GeometryConstants {
                c_omega: n_conj.powf(theta),
                theta,
                ..Default::default()
            }
        };
        let g3 = unit_cbar(3, 4.0);
        assert_relative_eq!(g3.c_bar(3).unwrap(), 1.0, max_relative = 1e-14);
        assert_relative_eq!(sbar_p(3.0, 3, &g3).unwrap(), 1e-6, max_relative = 1e-13);
        assert!(sbar_p(1.0 + 1e-9, 3, &g3).unwrap() < 1e-50);
        assert!(sbar_p(1e6, 3, &g3).unwrap() < 1e-30);
        assert!(sbar_p(2.0, 2, &g3).is_err());

        let g2 = unit_cbar(2, 3.0);
        assert_relative_eq!(g2.c_bar(2).unwrap(), 1.0, max_relative = 1e-14);
        let direct = (2.0 * g2.k_norm_theta1 * g2.c_omega.powf(-1.0 / 3.0)).powf(-3.0);
        assert_relative_eq!(g2.c_bar(2).unwrap(), direct, max_relative = 1e-14);
        assert_relative_eq!(sbar_p_2d(2.0, &g2).unwrap(), (1.0f64 / 6.0).powi(3), max_relative = 1e-14);
        assert_relative_eq!(sbar_p_2d(1.5, &g2).unwrap(), (1.0f64 / 12.0).powi(3), max_relative = 1e-14);
        assert!(sbar_p_2d(1e8, &g2).unwrap() < 1e-20);
    }

    #[test]
    fn s_p_examples() {
        let geo = GeometryConstants {
            volume: 4.0,
            ..Default::default()
        };
        assert_eq!(s_p(3.0, 3, &geo, true).unwrap(), 2.0);
        // C_{N,Omega} = min{1, 2, 1} = 1 and s-bar_p tiny near p = 1.
        let near_one = s_p(1.01, 3, &geo, false).unwrap();
        assert_eq!(near_one, sbar_p(1.01, 3, &geo).unwrap());
        assert!(s_p(2.0, 3, &geo, false).unwrap() <= 1.0);
        let bad = GeometryConstants {
            c_omega: -1.0,
            ..Default::default()
        };
        assert!(matches!(s_p(2.0, 3, &bad, false), Err(Error::InvalidGeometry(_))));
    }

    #[test]
    fn s2_s3_examples() {
        assert_eq!(s2(2.0, 1.0, 1.0).unwrap(), 4.0);
        assert_eq!(s2(3.0, 0.5, 1.0).unwrap(), 18.0);
        assert_relative_eq!(s2(1.5, 1.0, 2.0).unwrap(), 16.0, max_relative = 1e-15);
        assert_relative_eq!(s3(2.0, 4.0, 1.0).unwrap(), 3f64.sqrt() * 4.0 + 8.0, max_relative = 1e-15);
        assert_relative_eq!(s3(3.0, 9.0, 1.0).unwrap(), 5f64.sqrt() * 9.0 + 12.0, max_relative = 1e-15);
        assert_relative_eq!(s3(1.5, 8.0, 1.0).unwrap(), 3f64.sqrt() * 8.0 + 16.0, max_relative = 1e-15);
    }

    #[test]
    fn theorem_factor_examples() {
        use Regime::*;
        use SourceSpace::*;
        assert_relative_eq!(
            theorem_factor(3.0, 3, 4.0, Convex, LorentzN1).unwrap(),
            3f64.powf(2.5),
            max_relative = 1e-15
        );
        assert_relative_eq!(theorem_factor(1.5, 3, 4.0, Convex, LorentzN1).unwrap(), 8.0, max_relative = 1e-15);
        assert_relative_eq!(
            theorem_factor(3.0, 3, 4.0, Boundary, LorentzN1).unwrap(),
            3f64.powf(8.5),
            max_relative = 1e-14
        );
        assert_relative_eq!(
            theorem_factor(1.5, 2, 3.0, Boundary, LebesgueQ).unwrap(),
            8.0 * 0.5f64.powf(-3.0),
            max_relative = 1e-14
        );
        assert!(theorem_factor(2.0, 2, 3.0, Convex, LorentzN1).is_err());
        assert!(theorem_factor(2.0, 3, 3.0, Convex, LebesgueQ).is_err());
        assert!(theorem_factor(2.0, 3, 2.0, Boundary, LorentzN1).is_err());
    }

    #[test]
    fn lambda_examples() {
        let g = |i, s| GrowthBounds::new(i, s).unwrap();
        let l = lambda_general(g(0.0, 0.0), 3, 4.0, true).unwrap();
        assert_relative_eq!(l.value, 3f64.sqrt() * 4.0 + 4.0, max_relative = 1e-15);
        let l = lambda_general(g(1.0, 1.0), 3, 4.0, true).unwrap();
        assert_relative_eq!(l.value, 5f64.sqrt() * 9.0 + 6.0, max_relative = 1e-15);
        let l = lambda_general(g(-0.5, 0.0), 3, 4.0, true).unwrap();
        assert_relative_eq!(l.value, 3f64.sqrt() * 8.0 + 8.0, max_relative = 1e-14);
        // The two numerator readings differ only when s_a < 0.
        let l = lambda_general(g(-0.5, -0.5), 3, 4.0, true).unwrap();
        assert_relative_eq!(l.discrepancy(), 2.0, max_relative = 1e-14);
        let convex = lambda_general(g(1.0, 1.0), 3, 4.0, true).unwrap();
        let rough = lambda_general(g(1.0, 1.0), 3, 4.0, false).unwrap();
        assert_relative_eq!(
            rough.value - 6.0,
            (convex.value - 6.0) * 5f64.powf(6.0),
            max_relative = 1e-13
        );
    }
}
