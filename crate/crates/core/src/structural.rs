//! The regularized p-Laplacian structural functions.
//!
//! For `p > 1` and `epsilon >= 0` the coefficient `a(t) = (t^2 + epsilon)^((p-2)/2)`
//! generates the flux `b(t) = a(t) t`, its primitive `B`, the quadratic flux
//! integral `F(t) = int_0^t b(s)^2 ds` and the auxiliary `psi(s) = s b^{-1}(s)`.
//! `epsilon = 0` is the unregularized operator; evaluations that are singular
//! there return [`Error::Domain`].

use crate::error::{Error, Result};
use crate::numeric;

/// Default relative tolerance for quadrature and root finding.
pub const DEFAULT_TOL: f64 = 1e-12;

/// The pair `(p, epsilon)` selecting one member of the regularized family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StructuralParams {
    p: f64,
    epsilon: f64,
}

/// Lower and upper growth indices `i_a <= s_a` of a coefficient function,
/// the infimum and supremum of `t a'(t) / a(t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrowthBounds {
    i_a: f64,
    s_a: f64,
}

impl GrowthBounds {
    pub fn new(i_a: f64, s_a: f64) -> Result<Self> {
        if !(i_a > -1.0) || !s_a.is_finite() || i_a > s_a {
            return Err(Error::domain(format!(
                "growth indices require -1 < i_a <= s_a < inf, got ({i_a}, {s_a})"
            )));
        }
        Ok(Self { i_a, s_a })
    }

    pub fn lower(&self) -> f64 {
        self.i_a
    }

    pub fn upper(&self) -> f64 {
        self.s_a
    }
}

impl StructuralParams {
    pub fn new(p: f64, epsilon: f64) -> Result<Self> {
        if !(p > 1.0) || !p.is_finite() {
            return Err(Error::domain(format!("p must satisfy 1 < p < inf, got {p}")));
        }
        if !(epsilon >= 0.0) || !epsilon.is_finite() {
            return Err(Error::domain(format!("epsilon must be finite and >= 0, got {epsilon}")));
        }
        Ok(Self { p, epsilon })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Same exponent, different regularization.
    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        Self::new(self.p, epsilon)
    }

    fn check_t(t: f64) -> Result<()> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::domain(format!("argument must be finite and >= 0, got {t}")));
        }
        Ok(())
    }

    /// `a(t) = (t^2 + epsilon)^((p-2)/2)`.
    pub fn a(&self, t: f64) -> Result<f64> {
        Self::check_t(t)?;
        if t == 0.0 && self.epsilon == 0.0 && self.p < 2.0 {
            return Err(Error::domain("a(0) is unbounded for epsilon = 0 and p < 2"));
        }
        Ok(self.a_unchecked(t))
    }

    /// Coefficient without argument validation, for hot loops. Returns `+inf`
    /// at the singular point and `0` at `t = 0`, `epsilon = 0`, `p > 2`.
    #[inline]
    pub fn a_unchecked(&self, t: f64) -> f64 {
        self.a_of_square(t * t)
    }

    /// Coefficient as a function of `t^2`.
    #[inline]
    pub fn a_of_square(&self, t2: f64) -> f64 {
        let e = 0.5 * (self.p - 2.0);
        if e == 0.0 {
            1.0
        } else {
            (t2 + self.epsilon).powf(e)
        }
    }

    /// `b(t) = a(t) t`, strictly increasing with `b(0) = 0`.
    pub fn b(&self, t: f64) -> Result<f64> {
        Self::check_t(t)?;
        Ok(self.b_unchecked(t))
    }

    #[inline]
    pub fn b_unchecked(&self, t: f64) -> f64 {
        if t == 0.0 {
            0.0
        } else {
            self.a_unchecked(t) * t
        }
    }

    /// Analytic derivative `b'(t) = a(t) (1 + (p-2) t^2 / (t^2 + epsilon))`.
    pub fn b_prime(&self, t: f64) -> Result<f64> {
        let a = self.a(t)?;
        let t2 = t * t;
        let ratio = if t2 + self.epsilon == 0.0 {
            1.0
        } else {
            t2 / (t2 + self.epsilon)
        };
        Ok(a * (1.0 + (self.p - 2.0) * ratio))
    }

    /// `B(t) = int_0^t b = ((t^2 + eps)^(p/2) - eps^(p/2)) / p`.
    pub fn big_b(&self, t: f64) -> Result<f64> {
        Self::check_t(t)?;
        Ok(self.big_b_unchecked(t))
    }

    #[inline]
    pub fn big_b_unchecked(&self, t: f64) -> f64 {
        self.big_b_of_square(t * t)
    }

    /// `B` as a function of `t^2`, evaluated without cancellation when
    /// `t^2 << epsilon`.
    #[inline]
    pub fn big_b_of_square(&self, t2: f64) -> f64 {
        let p = self.p;
        if t2 == 0.0 {
            return 0.0;
        }
        if self.epsilon == 0.0 {
            return t2.powf(0.5 * p) / p;
        }
        let eps = self.epsilon;
        eps.powf(0.5 * p) * (0.5 * p * (t2 / eps).ln_1p()).exp_m1() / p
    }

    /// `B(s) - B(t)` given `t^2` and `delta = s^2 - t^2`, accurate even when
    /// `delta` is tiny compared to `t^2 + epsilon`.
    #[inline]
    pub fn big_b_increment(&self, t2: f64, delta: f64) -> f64 {
        let base = t2 + self.epsilon;
        if base == 0.0 {
            return self.big_b_of_square(delta.max(0.0));
        }
        let p = self.p;
        base.powf(0.5 * p) * (0.5 * p * (delta / base).ln_1p()).exp_m1() / p
    }

    /// `B^(t) = B(t) / t` with `B^(0) = 0`.
    pub fn bhat(&self, t: f64) -> Result<f64> {
        Self::check_t(t)?;
        Ok(if t == 0.0 { 0.0 } else { self.big_b_unchecked(t) / t })
    }

    /// `F(t) = int_0^t b(s)^2 ds` to relative accuracy `tol`.
    pub fn big_f(&self, t: f64, tol: f64) -> Result<f64> {
        Self::check_t(t)?;
        if !(tol > 0.0) {
            return Err(Error::domain(format!("tolerance must be positive, got {tol}")));
        }
        if t == 0.0 {
            return Ok(0.0);
        }
        let p = self.p;
        if self.epsilon == 0.0 {
            return Ok(t.powf(2.0 * p - 1.0) / (2.0 * p - 1.0));
        }
        if p == 2.0 {
            return Ok(t * t * t / 3.0);
        }
        numeric::integrate(
            |s| {
                let b = self.b_unchecked(s);
                b * b
            },
            0.0,
            t,
            tol,
        )
    }

    /// `b^{-1}(s)` by bracketed bisection seeded with `s^(1/(p-1))`.
    pub fn b_inv(&self, s: f64, tol: f64) -> Result<f64> {
        Self::check_t(s)?;
        if s == 0.0 {
            return Ok(0.0);
        }
        let seed = s.powf(1.0 / (self.p - 1.0));
        if self.epsilon == 0.0 || self.p == 2.0 {
            return Ok(seed);
        }
        Ok(numeric::invert_increasing(|t| self.b_unchecked(t), s, seed, tol))
    }

    /// `psi(s) = s b^{-1}(s)`.
    pub fn psi(&self, s: f64) -> Result<f64> {
        Ok(s * self.b_inv(s, 0.0)?)
    }

    /// The unique `t > 0` with `B(t)/t = s`.
    pub fn bhat_inv(&self, s: f64, tol: f64) -> Result<f64> {
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::domain(format!("bhat_inv needs s > 0, got {s}")));
        }
        let p = self.p;
        // epsilon = 0 gives B^(t) = t^(p-1)/p.
        let seed = (p * s).powf(1.0 / (p - 1.0));
        if self.epsilon == 0.0 {
            return Ok(seed);
        }
        Ok(numeric::invert_increasing(
            |t| if t == 0.0 { 0.0 } else { self.big_b_unchecked(t) / t },
            s,
            seed,
            tol,
        ))
    }

    /// Growth indices of `a`: `(min{p-2,0}, max{p-2,0})` for `epsilon > 0`,
    /// `(p-2, p-2)` for the pure power.
    pub fn growth_indices(&self) -> GrowthBounds {
        let d = self.p - 2.0;
        if self.epsilon == 0.0 {
            GrowthBounds { i_a: d, s_a: d }
        } else {
            GrowthBounds {
                i_a: d.min(0.0),
                s_a: d.max(0.0),
            }
        }
    }
}
