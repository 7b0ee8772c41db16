//! Radial initial value problem for the profile `f(., a)`.
//!
//! The second-order equation is integrated as the regular first-order system
//! in `(f, g)` with `g = -|f'|^{p-2} f'`:
//!
//! ```text
//! f' = -|g|^{(2-p)/(p-1)} g,    g' = f - |g|,    f(0) = a,  g(0) = 0.
//! ```
//!
//! Integration starts slightly off the origin from a short series and stops at
//! the first zero of `f` when there is one.

use crate::ode::{integrate_adaptive, Direction, EventSpec, StepControl, TerminalReason, Trajectory};
use crate::quad;
use crate::{Error, Params, Result};

/// Relative slack allowed when checking the a priori bounds at nodes.
pub const BOUND_TOL: f64 = 1e-8;

/// Default radius for classification support runs.
pub const DEFAULT_R_MAX: f64 = 100.0;

/// First zero of `f` and the slope there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Crossing {
    pub radius: f64,
    pub slope: f64,
}

#[derive(Debug, Clone)]
pub struct ProfileTrajectory {
    pub a: f64,
    pub params: Params,
    pub path: Trajectory,
    pub r_end: f64,
    pub crossing: Option<Crossing>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualReport {
    pub max_ode_residual: f64,
    pub max_identity_b1b_defect: f64,
    pub nodes_checked: usize,
}

/// Start radius used by [`integrate_profile`].
pub fn default_start_radius(a: f64) -> f64 {
    1e-6 * (1.0f64).max(1.0 / a)
}

/// Series values `(f, g)` at a small radius `r0`.
pub fn profile_series_start(params: &Params, a: f64, r0: f64) -> Result<(f64, f64)> {
    if !(r0 > 0.0) || !r0.is_finite() {
        return Err(Error::InvalidParameter(format!("start radius {r0} must be positive")));
    }
    if !(a > 0.0) {
        return Err(Error::InvalidParameter(format!("a = {a} must be positive")));
    }
    let q = params.exp_fast();
    let aq = a.powf(q);
    // f' = -g^q with g = a r - a r^2/2 + ...
    let drop = aq * (r0.powf(q + 1.0) / (q + 1.0) - q * r0.powf(q + 2.0) / (2.0 * (q + 2.0)));
    let f0 = a - drop;
    // g' = f - g, so g = a (1 - e^{-r}) minus the feedback of the drop in f
    let g0 = -a * (-r0).exp_m1() - aq * r0.powf(q + 2.0) / ((q + 1.0) * (q + 2.0));
    Ok((f0, g0))
}

pub(crate) fn profile_rhs(params: &Params) -> impl Fn(f64, &[f64], &mut [f64]) + Copy {
    let q = params.exp_fast();
    move |_r, y, dy| {
        let g = y[1];
        dy[0] = -g.abs().powf(q - 1.0) * g;
        dy[1] = y[0] - g.abs();
    }
}

/// Integrate the profile from the series start to `min(r_max, R(a))`.
pub fn integrate_profile(
    params: &Params,
    a: f64,
    r_max: f64,
    ctrl: &StepControl,
) -> Result<ProfileTrajectory> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(Error::InvalidParameter(format!("a = {a} must be positive")));
    }
    let r0 = default_start_radius(a);
    if !(r_max > r0) {
        return Err(Error::InvalidParameter(format!("r_max = {r_max} must exceed {r0}")));
    }
    let (f0, g0) = profile_series_start(params, a, r0)?;
    let root_tol = 1e-13 * r_max.max(1.0);
    let zero = EventSpec::new(Direction::Falling, root_tol, |_, y| y[0]);
    let path = integrate_adaptive(profile_rhs(params), r0, &[f0, g0], r_max, ctrl, &[zero])?;
    let r_end = path.t_end();
    let crossing = match path.terminal_reason() {
        TerminalReason::EventHit { .. } => {
            let g = path.last_state()[1];
            Some(Crossing {
                radius: r_end,
                slope: -g.abs().powf(params.exp_fast() - 1.0) * g,
            })
        }
        _ => None,
    };
    let traj = ProfileTrajectory {
        a,
        params: *params,
        path,
        r_end,
        crossing,
    };
    traj.check_bounds()?;
    Ok(traj)
}

impl ProfileTrajectory {
    pub fn radii(&self) -> &[f64] {
        self.path.times()
    }

    pub fn f(&self, i: usize) -> f64 {
        self.path.state(i)[0]
    }

    pub fn g(&self, i: usize) -> f64 {
        self.path.state(i)[1]
    }

    /// `f'` at node `i`, recovered from `g`.
    pub fn fprime(&self, i: usize) -> f64 {
        let g = self.g(i);
        -g.abs().powf(self.params.exp_fast() - 1.0) * g
    }

    pub fn r_start(&self) -> f64 {
        self.path.t_start()
    }

    /// Dense `(f, g)` at radius `r`. Below the start radius the series is used.
    pub fn state_at(&self, r: f64) -> Result<(f64, f64)> {
        if r >= 0.0 && r < self.r_start() {
            if r == 0.0 {
                return Ok((self.a, 0.0));
            }
            return profile_series_start(&self.params, self.a, r);
        }
        let s = self.path.dense_eval(r).map_err(|_| Error::OutOfSpan {
            x: r,
            start: 0.0,
            end: self.r_end,
        })?;
        Ok((s[0], s[1]))
    }

    pub fn f_at(&self, r: f64) -> Result<f64> {
        Ok(self.state_at(r)?.0)
    }

    /// Number of nodes strictly before the first zero.
    pub fn interior_len(&self) -> usize {
        if self.crossing.is_some() {
            self.path.len() - 1
        } else {
            self.path.len()
        }
    }

    /// Check the a priori bounds `0 < f < a`, `0 < g < a (1 - e^{-r})` and the
    /// monotonicity of `f` at every node before the first zero.
    pub fn check_bounds(&self) -> Result<()> {
        let a = self.a;
        let mut prev_f = f64::INFINITY;
        for i in 0..self.interior_len() {
            let r = self.path.t(i);
            let (f, g) = (self.f(i), self.g(i));
            let cap = -a * (-r).exp_m1();
            let violation = if !(f > 0.0) {
                Some("f > 0")
            } else if f > a * (1.0 + BOUND_TOL) {
                Some("f < a")
            } else if !(g > 0.0) {
                Some("g > 0")
            } else if g > cap * (1.0 + BOUND_TOL) {
                Some("g < a(1 - e^{-r})")
            } else if f > prev_f + BOUND_TOL * a * 1e-6 {
                Some("f decreasing")
            } else {
                None
            };
            if let Some(what) = violation {
                return Err(Error::InvariantViolation {
                    what: what.to_string(),
                    at: r,
                });
            }
            prev_f = f;
        }
        Ok(())
    }
}

/// ODE residual and weighted-integral identity defect along a trajectory.
///
/// The residual `|-g' + f - g| / (|f| + |g|)` is evaluated at every node (node
/// state against the interpolant's derivative) and at every segment midpoint.
/// The identity `d/dr (e^r g) = e^r f` is checked per segment and cumulatively
/// from the first node, normalised by `g` at the right end.
pub fn check_residuals(traj: &ProfileTrajectory) -> Result<ResidualReport> {
    let path = &traj.path;
    let n = path.len();
    if n < 3 {
        return Err(Error::TooFewNodes { nodes: n, needed: 3 });
    }
    let interior = traj.interior_len();
    let residual = |r: f64, f: f64, g: f64| -> Result<f64> {
        let d = path.dense_derivative(r)?;
        Ok((-d[1] + f - g).abs() / (f.abs() + g.abs()))
    };
    let mut max_res = 0.0f64;
    for i in 0..interior {
        let r = path.t(i);
        max_res = max_res.max(residual(r, traj.f(i), traj.g(i))?);
        if i + 1 < interior {
            let rm = 0.5 * (r + path.t(i + 1));
            let s = path.dense_eval(rm)?;
            max_res = max_res.max(residual(rm, s[0], s[1])?);
        }
    }

    let r_first = path.t(0);
    let g_first = traj.g(0);
    let mut cumulative = 0.0; // integral of e^{s - r_first} f(s) from r_first
    let mut max_def = 0.0f64;
    let f_dense = |s: f64| path.dense_eval(s).map(|v| v[0]).unwrap_or(f64::NAN);
    for i in 0..interior.saturating_sub(1) {
        let (r1, r2) = (path.t(i), path.t(i + 1));
        let (g1, g2) = (traj.g(i), traj.g(i + 1));
        // segment integral of e^{s - r2} f(s), scaled to avoid overflow
        let seg = quad::integrate(|s| (s - r2).exp() * f_dense(s), r1, r2, 0.0, 1e-13);
        let local = (g2 - (r1 - r2).exp() * g1 - seg).abs() / g2.abs();
        cumulative += seg * (r2 - r_first).exp();
        let global = (g2 - (r_first - r2).exp() * g_first - cumulative * (r_first - r2).exp()).abs()
            / g2.abs();
        if !(local.is_finite() && global.is_finite()) {
            return Err(Error::InvariantViolation {
                what: "finite identity defect".into(),
                at: r2,
            });
        }
        max_def = max_def.max(local).max(global);
    }
    Ok(ResidualReport {
        max_ode_residual: max_res,
        max_identity_b1b_defect: max_def,
        nodes_checked: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctrl() -> StepControl {
        StepControl::relative(1e-10)
    }

    fn rk4_reference(params: &Params, a: f64, r_end: f64, h: f64) -> (f64, f64) {
        let rhs = profile_rhs(params);
        let mut y = [a, 0.0];
        let mut r = 0.0;
        let n = (r_end / h).round() as usize;
        let mut k = [[0.0; 2]; 4];
        for _ in 0..n {
            rhs(r, &y, &mut k[0]);
            let y2 = [y[0] + 0.5 * h * k[0][0], y[1] + 0.5 * h * k[0][1]];
            rhs(r + 0.5 * h, &y2, &mut k[1]);
            let y3 = [y[0] + 0.5 * h * k[1][0], y[1] + 0.5 * h * k[1][1]];
            rhs(r + 0.5 * h, &y3, &mut k[2]);
            let y4 = [y[0] + h * k[2][0], y[1] + h * k[2][1]];
            rhs(r + h, &y4, &mut k[3]);
            for c in 0..2 {
                y[c] += h / 6.0 * (k[0][c] + 2.0 * k[1][c] + 2.0 * k[2][c] + k[3][c]);
            }
            r += h;
        }
        (y[0], y[1])
    }

    #[test]
    fn series_limits_and_leading_terms() {
        let pr = Params::new(1.5).unwrap();
        let (f, g) = profile_series_start(&pr, 1.0, 1e-12).unwrap();
        assert_eq!(f, 1.0);
        assert!(g.abs() < 1e-11);

        let r0 = 1e-4;
        let (f, g) = profile_series_start(&pr, 1.0, r0).unwrap();
        assert!(((1.0 - f) / 3.333_333e-13 - 1.0).abs() < 1e-3, "{}", 1.0 - f);
        assert!((g / r0 - 1.0).abs() < 1e-3);

        assert!(profile_series_start(&pr, 1.0, 0.0).is_err());
        assert!(profile_series_start(&pr, 1.0, -1.0).is_err());
    }

    #[test]
    fn series_matches_fixed_step_reference() {
        for (p, a) in [(1.5, 1.0), (1.2, 0.5), (1.8, 2.0)] {
            let pr = Params::new(p).unwrap();
            let r0 = 1e-4;
            let (f_ref, g_ref) = rk4_reference(&pr, a, r0, 1e-7);
            let (f, g) = profile_series_start(&pr, a, r0).unwrap();
            let drop_ref = a - f_ref;
            let drop = a - f;
            assert!((g - g_ref).abs() < 1e-12 * a, "p={p}: g {g} vs {g_ref}");
            if drop_ref > 1e-14 * a {
                assert!(((drop - drop_ref) / drop_ref).abs() < 1e-2, "p={p}: {drop} vs {drop_ref}");
            }
        }
    }

    #[test]
    fn small_a_never_crosses() {
        let pr = Params::new(1.5).unwrap();
        let tr = integrate_profile(&pr, 0.1, 50.0, &ctrl()).unwrap();
        assert!(tr.crossing.is_none());
        assert_eq!(tr.r_end, 50.0);
    }

    #[test]
    fn large_a_crosses_with_negative_slope() {
        let pr = Params::new(1.5).unwrap();
        let tr = integrate_profile(&pr, 11.0, DEFAULT_R_MAX, &ctrl()).unwrap();
        let c = tr.crossing.expect("crossing");
        assert!(c.radius.is_finite() && c.radius > 0.0);
        assert!(c.slope < 0.0);
        assert!(tr.path.last_state()[0].abs() < 1e-9);
    }

    #[test]
    fn bounds_hold_at_every_node() {
        for (p, a) in [(1.2, 0.05), (1.5, 1.0), (1.8, 2.0), (1.5, 11.0)] {
            let pr = Params::new(p).unwrap();
            let tr = integrate_profile(&pr, a, 30.0, &ctrl()).unwrap();
            for i in 0..tr.interior_len() {
                let r = tr.radii()[i];
                assert!(tr.g(i) > 0.0);
                assert!(tr.g(i) <= -a * (-r).exp_m1() * (1.0 + BOUND_TOL));
                if i > 0 && tr.f(i - 1) < a {
                    assert!(tr.f(i) < tr.f(i - 1), "p={p} a={a} r={r}");
                }
            }
        }
    }

    #[test]
    fn residuals_small_at_tight_tolerance() {
        let pr = Params::new(1.5).unwrap();
        let tr = integrate_profile(&pr, 1.0, 30.0, &ctrl()).unwrap();
        let rep = check_residuals(&tr).unwrap();
        assert_eq!(rep.nodes_checked, tr.path.len());
        assert!(rep.max_ode_residual < 1e-6, "{rep:?}");
        assert!(rep.max_identity_b1b_defect < 1e-6, "{rep:?}");
    }

    #[test]
    fn corrupted_node_is_detected() {
        let pr = Params::new(1.5).unwrap();
        let mut tr = integrate_profile(&pr, 1.0, 30.0, &ctrl()).unwrap();
        let i = tr.path.len() / 2;
        tr.path.state_mut(i)[0] *= 1.01;
        let rep = check_residuals(&tr).unwrap();
        assert!(rep.max_ode_residual > 1e-6 || rep.max_identity_b1b_defect > 1e-6, "{rep:?}");
    }

    #[test]
    fn short_interval_has_roundoff_defects() {
        let pr = Params::new(1.5).unwrap();
        let c = StepControl { h_init: 1e-7, h_max: 1e-7, ..ctrl() };
        let tr = integrate_profile(&pr, 1.0, 5e-6, &c).unwrap();
        let rep = check_residuals(&tr).unwrap();
        assert_eq!(rep.nodes_checked, tr.path.len());
        assert!(rep.max_identity_b1b_defect < 1e-9, "{rep:?}");
        assert!(matches!(
            check_residuals(&ProfileTrajectory {
                path: integrate_profile(&pr, 1.0, 1.5e-6, &StepControl { h_init: 1e-6, ..ctrl() })
                    .unwrap()
                    .path,
                ..tr.clone()
            }),
            Err(Error::TooFewNodes { .. })
        ));
    }

    #[test]
    fn rejects_bad_arguments() {
        let pr = Params::new(1.5).unwrap();
        assert!(integrate_profile(&pr, 0.0, 10.0, &ctrl()).is_err());
        assert!(integrate_profile(&pr, 1.0, 0.0, &ctrl()).is_err());
    }
}
