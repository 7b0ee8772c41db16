//! First-order transform of the profile equation.
//!
//! With `y = 1 - f/a` and `psi(y) = |f'|^p / a^p`, the profile satisfies
//!
//! ```text
//! psi' + p/(p-1) psi^{(p-1)/p} = p a^{2-p} (1-y) / (p-1),    psi(0) = 0,
//! ```
//!
//! and `phi = psi (1-y)^{-p}` separates the three regimes through the constant
//! `kappa = (p-1)^{-p}`.
//!
//! The equation is integrated in the log-distance `s = -ln(1-y)`, which keeps
//! full relative resolution of `1-y` as `y -> 1`. Node times of
//! [`PsiTrajectory::path`] are values of `s`; use [`PsiTrajectory::y`] to map back.

use crate::ode::{
    integrate_adaptive, integrate_stiff, Direction, EventSpec, OdeError, StepControl, TerminalReason, Trajectory,
};
use crate::profile::ProfileTrajectory;
use crate::{Error, Params, Result};

/// Largest start ordinate; see [`start_ordinate`].
pub const Y_START: f64 = 1e-8;

/// Relative size of the first dropped series term at the start ordinate.
const SERIES_TOL: f64 = 1e-3;

/// Default end ordinate.
pub const DEFAULT_Y_END: f64 = 1.0 - 1e-6;

/// Normalised slope above which a rise of `psi` after its peak counts as a second turning point.
pub const SHAPE_TOL: f64 = 1e-6;

/// Relative slack used by the node-wise shape and bound checks.
pub const CHECK_TOL: f64 = 1e-8;

/// Minimal reach for [`tail_estimate`]: `y_end >= 1 - 1e-4`.
pub const TAIL_MIN_GAP: f64 = 1e-4;

pub(crate) fn s_of_y(y: f64) -> f64 {
    -(-y).ln_1p()
}

pub(crate) fn y_of_s(s: f64) -> f64 {
    -(-s).exp_m1()
}

#[derive(Debug, Clone)]
pub struct PsiTrajectory {
    pub a: f64,
    pub params: Params,
    /// Nodes in `s = -ln(1-y)` with state `(psi)`.
    pub path: Trajectory,
    /// Location of the maximum of `psi`.
    pub y_a: Option<f64>,
    /// Node index of that maximum.
    pub peak_node: Option<usize>,
    /// Location and value of the interior maximum of `phi`, when there is one.
    pub phi_peak: Option<(f64, f64)>,
    pub phi_nodes: Vec<f64>,
    /// Requested end ordinate.
    pub y_target: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailEstimate {
    pub ell: f64,
    pub phi_end: f64,
    pub phi_slope_sign: f64,
    pub y_end: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderingReport {
    /// `max (psi_lhs - psi_rhs)` over the common grid; non-positive up to round-off.
    pub max_lhs_minus_rhs: f64,
    /// `max (psi_rhs - psi_lhs)`; strictly positive for distinct parameters.
    pub max_rhs_minus_lhs: f64,
    /// `psi_rhs - psi_lhs` at `y = 1/2` when the grid covers it.
    pub gap_at_half: Option<f64>,
    /// `max (psi_rhs - psi_lhs) / (a_rhs - a_lhs)^{2-p}`.
    pub gap_ratio: f64,
    pub grid_points: usize,
}

impl OrderingReport {
    /// Whether the gap obeys `psi_rhs - psi_lhs <= k (a_rhs - a_lhs)^{2-p}`.
    pub fn gap_within(&self, k: f64) -> bool {
        self.gap_ratio <= k
    }
}

/// Three-term series of `psi` near the origin.
pub fn psi_series_start(params: &Params, a: f64, y0: f64) -> Result<f64> {
    if !(y0 > 0.0) || !y0.is_finite() {
        return Err(Error::InvalidParameter(format!("start ordinate {y0} must be positive")));
    }
    if !(a > 0.0) {
        return Err(Error::InvalidParameter(format!("a = {a} must be positive")));
    }
    let sg = params.sigma();
    let beta = params.psi_slope(a);
    let c1 = beta.powf(sg) / (sg * (1.0 + sg));
    let c2 = beta.powf(2.0 * sg - 1.0) / (sg * (1.0 + sg) * (1.0 + 2.0 * sg));
    Ok(beta * y0 - c1 * y0.powf(1.0 + sg) + c2 * y0.powf(1.0 + 2.0 * sg) - 0.5 * beta * y0 * y0)
}

/// Start ordinate for parameter `a`. The series is only valid on a scale
/// `a^{(2-p)/(p-1)}`, so small parameters start closer to the origin.
pub fn start_ordinate(params: &Params, a: f64) -> f64 {
    let sg = params.sigma();
    let beta = params.psi_slope(a);
    let y = (SERIES_TOL * sg * (1.0 + sg) * beta.powf(1.0 - sg)).powf(1.0 / sg);
    if y.is_finite() && y > 0.0 {
        y.min(Y_START)
    } else {
        Y_START
    }
}

/// Step control with initial and minimal steps scaled to the start ordinate.
pub(crate) fn start_control(ctrl: &StepControl, y0: f64) -> StepControl {
    StepControl {
        h_init: ctrl.h_init.min(0.1 * y0),
        h_min: ctrl.h_min.min(1e-6 * y0),
        ..*ctrl
    }
}

/// Stiffness ratio above which the implicit stepper takes over, and below
/// which (divided by [`STIFF_HYSTERESIS`]) the explicit one resumes.
const STIFF_ON: f64 = 30.0;
const STIFF_HYSTERESIS: f64 = 3.0;

/// Fast rate `e^{-s} psi^{-1/p}` times the natural step scale `min(y, 1)`.
fn stiffness(sg: f64, s: f64, psi: f64) -> f64 {
    if psi > 0.0 {
        (-s).exp() * psi.powf(sg - 1.0) * y_of_s(s).min(1.0)
    } else {
        0.0
    }
}

/// Integrate the transform in `s`. Small parameters put `psi` on a slow
/// manifold with fast rate `e^{-s} psi^{-1/p}`; those stretches use the
/// implicit stepper, the rest the explicit one. Event indices refer to `events`.
pub(crate) fn solve_psi(
    params: &Params,
    a: f64,
    s0: f64,
    psi0: f64,
    s_end: f64,
    ctrl: &StepControl,
    events: &[EventSpec<'_>],
) -> std::result::Result<Trajectory, OdeError> {
    let sg = params.sigma();
    let rhs = psi_rhs_log(params, a);
    let jac = move |s: f64, y: &[f64], out: &mut [f64]| {
        out[0] = if y[0] > 0.0 { -(-s).exp() * y[0].powf(sg - 1.0) } else { 0.0 };
    };
    let n = events.len();
    let mut stiff = stiffness(sg, s0, psi0) > STIFF_ON;
    let mut path: Option<Trajectory> = None;
    let (mut s, mut psi) = (s0, psi0);
    let mut budget = ctrl.max_steps;
    loop {
        let mut evs: Vec<EventSpec<'_>> = events
            .iter()
            .map(|e| EventSpec::new(e.direction, e.root_tol, move |t, y| e.eval(t, y)))
            .collect();
        let tol = 1e-13 * s_end.max(1.0);
        evs.push(if stiff {
            EventSpec::new(Direction::Falling, tol, move |t, y| {
                stiffness(sg, t, y[0]) - STIFF_ON / STIFF_HYSTERESIS
            })
        } else {
            EventSpec::new(Direction::Rising, tol, move |t, y| stiffness(sg, t, y[0]) - STIFF_ON)
        });
        let c = StepControl { max_steps: budget, ..*ctrl };
        let res = if stiff {
            integrate_stiff(rhs, jac, s, &[psi], s_end, &c, &evs)
        } else {
            integrate_adaptive(rhs, s, &[psi], s_end, &c, &evs)
        };
        let join = |path: Option<Trajectory>, piece: Trajectory| -> std::result::Result<Trajectory, OdeError> {
            match path {
                None => Ok(piece),
                Some(mut p) => {
                    p.extend(piece)?;
                    Ok(p)
                }
            }
        };
        let piece = match res {
            Ok(t) => t,
            Err(OdeError::MaxStepsExceeded { t, partial }) => {
                return Err(OdeError::MaxStepsExceeded { t, partial: Box::new(join(path, *partial)?) })
            }
            Err(OdeError::StepUnderflow { t, partial }) => {
                return Err(OdeError::StepUnderflow { t, partial: Box::new(join(path, *partial)?) })
            }
            Err(e) => return Err(e),
        };
        budget = budget.saturating_sub(piece.len().saturating_sub(1)).max(1);
        let reason = piece.terminal_reason();
        s = piece.t_end();
        psi = piece.last_state()[0];
        let mut whole = join(path, piece)?;
        match reason {
            TerminalReason::EventHit { index } if index == n => {
                if s >= s_end {
                    whole.set_terminal_reason(TerminalReason::ReachedEnd);
                    return Ok(whole);
                }
                stiff = !stiff;
                path = Some(whole);
            }
            _ => return Ok(whole),
        }
    }
}

/// Right-hand side of the transform in the log variable.
pub(crate) fn psi_rhs_log(params: &Params, a: f64) -> impl Fn(f64, &[f64], &mut [f64]) + Copy {
    let sg = params.sigma();
    let inv = 1.0 / sg;
    let forcing = a.powf(2.0 - params.p());
    move |s, y, dy| {
        let e = (-s).exp();
        dy[0] = e * inv * (forcing * e - y[0].max(0.0).powf(sg));
    }
}

/// Sign-carrying normalised slope of `psi`: `1 - psi^{(p-1)/p} / (a^{2-p}(1-y))`.
pub(crate) fn psi_slope_normalised(params: &Params, a: f64, s: f64, psi: f64) -> f64 {
    1.0 - psi.max(0.0).powf(params.sigma()) * s.exp() / a.powf(2.0 - params.p())
}

/// `d phi / ds` in closed form, from `psi` at `s`.
pub(crate) fn phi_slope_log(params: &Params, a: f64, s: f64, psi: f64) -> f64 {
    let p = params.p();
    let phi = psi.max(0.0) * (p * s).exp();
    let inv = 1.0 / params.sigma();
    p * phi - inv * phi.powf(params.sigma()) + inv * a.powf(2.0 - p) * (-(2.0 - p) * s).exp()
}

struct Phase {
    path: Trajectory,
    event: Option<usize>,
    exhausted: bool,
}

fn run_phase(
    params: &Params,
    a: f64,
    s0: f64,
    psi0: f64,
    s_end: f64,
    ctrl: &StepControl,
    events: &[EventSpec<'_>],
) -> Result<Phase> {
    match solve_psi(params, a, s0, psi0, s_end, ctrl, events) {
        Ok(path) => {
            let event = match path.terminal_reason() {
                TerminalReason::EventHit { index } => Some(index),
                _ => None,
            };
            Ok(Phase { path, event, exhausted: false })
        }
        Err(e @ (OdeError::MaxStepsExceeded { .. } | OdeError::StepUnderflow { .. })) => Ok(Phase {
            path: e.into_partial().expect("budget errors carry a trajectory"),
            event: None,
            exhausted: true,
        }),
        Err(e) => Err(e.into()),
    }
}

fn root_tol(s_end: f64) -> f64 {
    1e-13 * s_end.max(1.0)
}

/// Integrate the transform from [`start_ordinate`] to `y_end`, locating the peaks of
/// `psi` and `phi` on the way.
///
/// A run that exhausts the step budget in the stiff decaying tail returns the
/// part computed so far; [`PsiTrajectory::y_end`] tells how far it got.
pub fn integrate_psi(params: &Params, a: f64, y_end: f64, ctrl: &StepControl) -> Result<PsiTrajectory> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(Error::InvalidParameter(format!("a = {a} must be positive")));
    }
    if !(y_end > Y_START && y_end < 1.0) {
        return Err(Error::InvalidParameter(format!("y_end = {y_end} not in ({Y_START}, 1)")));
    }
    let s_end = s_of_y(y_end);
    let tol = root_tol(s_end);
    let pr = *params;
    let psi_peak = EventSpec::new(Direction::Falling, tol, move |s, y| {
        psi_slope_normalised(&pr, a, s, y[0])
    });
    let second_turn = || {
        EventSpec::new(Direction::Rising, tol, move |s, y| {
            psi_slope_normalised(&pr, a, s, y[0]) - SHAPE_TOL
        })
    };

    let y0 = start_ordinate(params, a);
    let psi0 = psi_series_start(params, a, y0)?;
    let ctrl = &start_control(ctrl, y0);
    let mut ph = run_phase(params, a, s_of_y(y0), psi0, s_end, ctrl, &[psi_peak])?;
    let mut path = ph.path;
    let mut y_a = None;
    let mut peak_node = None;
    let mut phi_peak = None;

    if ph.event.is_some() {
        y_a = Some(y_of_s(path.t_end()));
        peak_node = Some(path.len() - 1);
        let mut with_phi = true;
        loop {
            let s = path.t_end();
            if s >= s_end {
                break;
            }
            let psi = path.last_state()[0];
            let evs: Vec<EventSpec<'_>> = if with_phi {
                vec![second_turn(), EventSpec::new(Direction::Falling, tol, move |s, y| {
                    phi_slope_log(&pr, a, s, y[0])
                })]
            } else {
                vec![second_turn()]
            };
            ph = run_phase(params, a, s, psi, s_end, ctrl, &evs)?;
            let hit = ph.event;
            let exhausted = ph.exhausted;
            path.extend(ph.path)?;
            match hit {
                Some(0) => return Err(Error::ShapeViolation { y: y_of_s(path.t_end()) }),
                Some(_) => {
                    let s_pk = path.t_end();
                    let phi = path.last_state()[0] * (params.p() * s_pk).exp();
                    phi_peak = Some((y_of_s(s_pk), phi));
                    with_phi = false;
                }
                None => break,
            }
            if exhausted {
                break;
            }
        }
    }

    // tiny negative overshoot in the deep tail is integrator noise
    for i in 0..path.len() {
        let v = path.state(i)[0];
        if v < 0.0 {
            if -v <= ctrl.abs_tol.max(1e-300) {
                path.state_mut(i)[0] = 0.0;
            } else {
                return Err(Error::InvariantViolation {
                    what: "psi >= 0".into(),
                    at: y_of_s(path.t(i)),
                });
            }
        }
    }
    let p = params.p();
    let phi_nodes = (0..path.len())
        .map(|i| path.state(i)[0] * (p * path.t(i)).exp())
        .collect();
    Ok(PsiTrajectory {
        a,
        params: *params,
        path,
        y_a,
        peak_node,
        phi_peak,
        phi_nodes,
        y_target: y_end,
    })
}

impl PsiTrajectory {
    pub fn len(&self) -> usize {
        self.path.len()
    }

    pub fn is_empty(&self) -> bool {
        self.path.is_empty()
    }

    pub fn s(&self, i: usize) -> f64 {
        self.path.t(i)
    }

    pub fn y(&self, i: usize) -> f64 {
        y_of_s(self.path.t(i))
    }

    pub fn psi(&self, i: usize) -> f64 {
        self.path.state(i)[0]
    }

    pub fn phi(&self, i: usize) -> f64 {
        self.phi_nodes[i]
    }

    pub fn y_start(&self) -> f64 {
        self.y(0)
    }

    /// Last ordinate actually reached.
    pub fn y_end(&self) -> f64 {
        y_of_s(self.path.t_end())
    }

    /// Whether integration reached the requested end ordinate.
    pub fn reached_target(&self) -> bool {
        matches!(self.path.terminal_reason(), TerminalReason::ReachedEnd)
            && self.path.t_end() >= s_of_y(self.y_target)
    }

    /// `psi` at log-distance `s`; the start series covers `s` below the first node.
    pub fn psi_at_s(&self, s: f64) -> Result<f64> {
        if s >= 0.0 && s < self.path.t_start() {
            if s == 0.0 {
                return Ok(0.0);
            }
            return psi_series_start(&self.params, self.a, y_of_s(s));
        }
        if s > self.path.t_end() {
            return Err(Error::RangeMismatch { y: y_of_s(s), span_end: self.y_end() });
        }
        Ok(self.path.dense_eval(s)?[0])
    }

    pub fn psi_at(&self, y: f64) -> Result<f64> {
        if !(0.0..1.0).contains(&y) {
            return Err(Error::OutOfSpan { x: y, start: 0.0, end: self.y_end() });
        }
        self.psi_at_s(s_of_y(y))
    }

    pub fn phi_at(&self, y: f64) -> Result<f64> {
        Ok(self.psi_at(y)? * (1.0 - y).powf(-self.params.p()))
    }

    /// Largest relative violation of "increasing up to `y_a`, decreasing after".
    pub fn shape_defect(&self) -> f64 {
        let top = self.peak_node.unwrap_or(usize::MAX);
        let mut worst = 0.0f64;
        for i in 1..self.len() {
            let (prev, cur) = (self.psi(i - 1), self.psi(i));
            let scale = prev.abs().max(cur.abs()).max(f64::MIN_POSITIVE);
            let d = if i <= top { prev - cur } else { cur - prev };
            worst = worst.max(d / scale);
        }
        worst
    }

    /// Largest relative shortfall below `a^{p(2-p)/(p-1)} (1-y)^{p/(p-1)}` past `y_a`.
    pub fn lower_bound_deficit(&self) -> f64 {
        let Some(top) = self.peak_node else { return 0.0 };
        let p = self.params.p();
        let ln_coef = p * (2.0 - p) / (p - 1.0) * self.a.ln();
        let rate = p / (p - 1.0);
        let mut worst = 0.0f64;
        for i in 0..self.len() {
            if i <= top {
                continue;
            }
            let s = self.s(i);
            let bound = (ln_coef - rate * s).exp();
            worst = worst.max((bound - self.psi(i)) / bound);
        }
        worst
    }

    /// Largest relative excess of `phi` over `kappa`.
    pub fn envelope_excess(&self) -> f64 {
        let k = self.params.kappa();
        self.phi_nodes.iter().fold(f64::NEG_INFINITY, |m, &ph| m.max((ph - k) / k))
    }

    /// Largest relative excess of `psi` over the barrier `A (1-y)^{p/(p-1)}`.
    pub fn barrier_excess(&self, amplitude: f64) -> f64 {
        let rate = self.params.p() / (self.params.p() - 1.0);
        let ln_amp = amplitude.ln();
        (0..self.len()).fold(f64::NEG_INFINITY, |m, i| {
            let bar = (ln_amp - rate * self.s(i)).exp();
            m.max((self.psi(i) - bar) / bar)
        })
    }

    /// Number of sign changes of the closed-form slope of `psi` across nodes.
    pub fn slope_sign_changes(&self) -> usize {
        let mut count = 0;
        let mut prev: Option<bool> = None;
        for i in 0..self.len() {
            let v = psi_slope_normalised(&self.params, self.a, self.s(i), self.psi(i));
            if v.abs() <= SHAPE_TOL {
                continue;
            }
            let pos = v > 0.0;
            if let Some(pp) = prev {
                if pp != pos {
                    count += 1;
                }
            }
            prev = Some(pos);
        }
        count
    }
}

/// Smallest `A` in `(0, A_max]` with `A^{(p-1)/p} - A >= a^{2-p}`, where
/// `A_max` maximises the left side. `None` when no such `A` exists.
pub fn barrier_amplitude(params: &Params, a: f64) -> Option<f64> {
    let sg = params.sigma();
    let target = a.powf(2.0 - params.p());
    let a_max = sg.powf(params.p());
    let h = |x: f64| x.powf(sg) - x;
    if h(a_max) < target {
        return None;
    }
    let (mut lo, mut hi) = (0.0, a_max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if h(mid) >= target {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-16 * hi {
            break;
        }
    }
    Some(hi)
}

/// Limit of `psi` as `y -> 1`, with `phi` diagnostics at the last node.
pub fn tail_estimate(traj: &PsiTrajectory) -> Result<TailEstimate> {
    let needed = 1.0 - TAIL_MIN_GAP;
    let s_last = traj.path.t_end();
    if s_last < s_of_y(needed) {
        return Err(Error::InsufficientRange { reached: traj.y_end(), needed });
    }
    let last = traj.len() - 1;
    let phi_end = traj.phi(last);
    let slope = phi_slope_log(&traj.params, traj.a, s_last, traj.psi(last));
    let kappa = traj.params.kappa();
    let ell = if slope > 0.0 && phi_end > kappa {
        // psi(y) ~ ell + c (1-y): extrapolate from 1-y and 10(1-y)
        let near = traj.psi(last);
        let far = traj.psi_at_s(s_last - 10f64.ln())?;
        (near - (far - near) / 9.0).max(0.0)
    } else {
        0.0
    };
    Ok(TailEstimate {
        ell,
        phi_end,
        phi_slope_sign: slope.signum(),
        y_end: traj.y_end(),
    })
}

/// Pointwise ordering of two transforms on the union of their nodes.
pub fn compare_on_grid(lhs: &PsiTrajectory, rhs: &PsiTrajectory) -> Result<OrderingReport> {
    if lhs.params != rhs.params || lhs.a > rhs.a {
        return Err(Error::MismatchedParams);
    }
    let lo = lhs.path.t_start().max(rhs.path.t_start());
    let hi = lhs.path.t_end().min(rhs.path.t_end());
    let mut grid: Vec<f64> = lhs
        .path
        .times()
        .iter()
        .chain(rhs.path.times())
        .copied()
        .filter(|&s| s >= lo && s <= hi)
        .collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let mut up = f64::NEG_INFINITY;
    let mut down = f64::NEG_INFINITY;
    for &s in &grid {
        let d = rhs.psi_at_s(s)? - lhs.psi_at_s(s)?;
        up = up.max(d);
        down = down.max(-d);
    }
    let half = s_of_y(0.5);
    let gap_at_half = if half >= lo && half <= hi {
        Some(rhs.psi_at_s(half)? - lhs.psi_at_s(half)?)
    } else {
        None
    };
    let da = rhs.a - lhs.a;
    let gap_ratio = if da > 0.0 {
        up.max(0.0) / da.powf(2.0 - lhs.params.p())
    } else {
        0.0
    };
    Ok(OrderingReport {
        max_lhs_minus_rhs: down,
        max_rhs_minus_lhs: up,
        gap_at_half,
        gap_ratio,
        grid_points: grid.len(),
    })
}

/// Largest `|psi(1 - f/a) - |f'|^p / a^p|` over the profile nodes before any zero.
pub fn transform_check(profile: &ProfileTrajectory, psi: &PsiTrajectory) -> Result<f64> {
    if profile.params != psi.params || profile.a != psi.a {
        return Err(Error::MismatchedParams);
    }
    let a = profile.a;
    let rate = profile.params.p() / (profile.params.p() - 1.0);
    let ap = a.powf(profile.params.p());
    let mut worst = 0.0f64;
    for i in 0..profile.interior_len() {
        let (f, g) = (profile.f(i), profile.g(i));
        let s = if f >= a { 0.0 } else { -((f - a) / a).ln_1p() };
        let lhs = psi.psi_at_s(s)?;
        let rhs = g.powf(rate) / ap;
        worst = worst.max((lhs - rhs).abs());
    }
    Ok(worst)
}
