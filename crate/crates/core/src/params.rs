//! The exponent `p` and the constants derived from it.

use crate::Error;

/// Default distance kept from the endpoints of `(1, 2)`.
pub const GUARD_BAND: f64 = 1e-3;

/// Exponent `p` of the profile equation. Every derived constant is computed
/// from `p` on demand.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Params {
    p: f64,
}

impl Params {
    pub fn new(p: f64) -> Result<Self, Error> {
        Self::with_guard(p, GUARD_BAND)
    }

    pub fn with_guard(p: f64, guard: f64) -> Result<Self, Error> {
        if !(guard > 0.0 && guard < 0.5) {
            return Err(Error::InvalidParameter(format!("guard band {guard} not in (0, 0.5)")));
        }
        if !(p >= 1.0 + guard && p <= 2.0 - guard) {
            return Err(Error::InvalidParameter(format!(
                "p = {p} outside [{}, {}]",
                1.0 + guard,
                2.0 - guard
            )));
        }
        Ok(Self { p })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    /// Dichotomy constant `(p-1)^{-p}`.
    pub fn kappa(&self) -> f64 {
        (self.p - 1.0).powf(-self.p)
    }

    /// Exponential decay rate `1/(p-1)` of the critical profile.
    pub fn exp_fast(&self) -> f64 {
        1.0 / (self.p - 1.0)
    }

    /// Algebraic decay exponent `(p-1)/(2-p)`: `f(r) ~ slow_const * r^{-exp_slow}`.
    pub fn exp_slow(&self) -> f64 {
        (self.p - 1.0) / (2.0 - self.p)
    }

    /// Limit of `r^{exp_slow} f(r)` on the decaying branch.
    pub fn slow_const(&self) -> f64 {
        let e = self.exp_slow();
        e.powf(e)
    }

    /// Largest `a` of the explicit interval known to lie in the decaying set.
    pub fn c_lower(&self) -> f64 {
        let p = self.p;
        (p - 1.0).powf((p - 1.0) / (2.0 - p)) * p.powf(-p / (2.0 - p))
    }

    /// Exponent `(p-1)/p` of the drain term in the first-order equation.
    pub fn sigma(&self) -> f64 {
        (self.p - 1.0) / self.p
    }

    /// Slope of `psi` at the origin, `p a^{2-p} / (p-1)`.
    pub fn psi_slope(&self, a: f64) -> f64 {
        self.p * a.powf(2.0 - self.p) / (self.p - 1.0)
    }

    /// Smallest `a` satisfying the closed-form sufficient condition for a finite zero.
    pub fn crossing_seed(&self) -> f64 {
        let p = self.p;
        let rhs = self.kappa() * (1.0 + p * std::f64::consts::LN_2);
        let coef = p * (1.0 - 2f64.powf(p - 2.0)) / ((p - 1.0) * (2.0 - p));
        (rhs / coef).powf(1.0 / (2.0 - p))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constants_at_three_halves() {
        let pr = Params::new(1.5).unwrap();
        assert!((pr.kappa() - 0.5f64.powf(-1.5)).abs() < 1e-15);
        assert!((pr.c_lower() - 4.0 / 27.0).abs() < 1e-15);
        assert!((pr.exp_fast() - 2.0).abs() < 1e-15);
        assert!((pr.exp_slow() - 1.0).abs() < 1e-15);
        assert!((pr.slow_const() - 1.0).abs() < 1e-15);
        assert!((pr.psi_slope(1.0) - 3.0).abs() < 1e-15);
        let seed = pr.crossing_seed();
        assert!((seed - (5.76896f64 / 1.75736).powi(2)).abs() < 2e-3, "{seed}");
    }

    #[test]
    fn slow_constant_at_four_thirds() {
        let pr = Params::new(4.0 / 3.0).unwrap();
        assert!((pr.exp_slow() - 0.5).abs() < 1e-14);
        assert!((pr.slow_const() - 0.5f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn guard_band() {
        assert!(Params::new(1.0005).is_err());
        assert!(Params::new(1.9995).is_err());
        assert!(Params::new(2.5).is_err());
        assert!(Params::new(f64::NAN).is_err());
        assert!(Params::new(1.001).is_ok());
        assert!(Params::with_guard(1.0005, 1e-4).is_ok());
    }

    #[test]
    fn c_lower_is_the_barrier_threshold() {
        for p in [1.2, 1.5, 1.8] {
            let pr = Params::new(p).unwrap();
            let lhs = pr.c_lower().powf(2.0 - p);
            let rhs = (p - 1.0).powf(p - 1.0) / p.powf(p);
            assert!((lhs - rhs).abs() < 1e-14 * rhs);
        }
    }
}
