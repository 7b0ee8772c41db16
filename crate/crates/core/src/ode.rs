//! Adaptive explicit Runge–Kutta integration with dense output and event location.
//!
//! The scheme is the Dormand–Prince 5(4) pair with its fourth-order continuous
//! extension. Every accepted step stores enough data to evaluate the solution
//! anywhere inside the step, which is what event location and the downstream
//! cross-checks rely on.

use thiserror::Error;

pub use crate::stiff::integrate_stiff;

#[derive(Debug, Error)]
pub enum OdeError {
    #[error("invalid step control: {0}")]
    InvalidControl(String),
    #[error("integration interval is empty or reversed (t0 = {t0}, t_end = {t_end})")]
    EmptyInterval { t0: f64, t_end: f64 },
    #[error("right-hand side returned a non-finite value near t = {t}")]
    NonFiniteRhs { t: f64 },
    #[error("required step fell below h_min at t = {t}")]
    StepUnderflow { t: f64, partial: Box<Trajectory> },
    #[error("step budget exhausted at t = {t}")]
    MaxStepsExceeded { t: f64, partial: Box<Trajectory> },
    #[error("t = {t} lies outside the trajectory span [{start}, {end}]")]
    OutOfSpan { t: f64, start: f64, end: f64 },
    #[error("trajectories cannot be joined: {0}")]
    Join(String),
}

impl OdeError {
    /// Partial trajectory carried by budget and underflow failures.
    pub fn into_partial(self) -> Option<Trajectory> {
        match self {
            OdeError::StepUnderflow { partial, .. } | OdeError::MaxStepsExceeded { partial, .. } => {
                Some(*partial)
            }
            _ => None,
        }
    }
}

/// Step-size and tolerance settings for [`integrate_adaptive`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepControl {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub h_init: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub max_steps: usize,
}

impl Default for StepControl {
    fn default() -> Self {
        Self {
            abs_tol: 1e-12,
            rel_tol: 1e-10,
            h_init: 1e-4,
            h_min: 1e-14,
            h_max: f64::INFINITY,
            max_steps: 200_000,
        }
    }
}

impl StepControl {
    /// Control dominated by the relative tolerance; the absolute floor only
    /// guards against division by zero.
    pub fn relative(rel_tol: f64) -> Self {
        Self {
            abs_tol: 1e-200,
            rel_tol,
            ..Self::default()
        }
    }

    pub fn with_max_steps(mut self, max_steps: usize) -> Self {
        self.max_steps = max_steps;
        self
    }

    pub fn with_h_max(mut self, h_max: f64) -> Self {
        self.h_max = h_max;
        self
    }

    pub fn validate(&self) -> Result<(), OdeError> {
        let bad = |m: &str| Err(OdeError::InvalidControl(m.to_string()));
        if !(self.abs_tol >= 0.0 && self.rel_tol >= 0.0) {
            return bad("tolerances must be non-negative");
        }
        if !(self.abs_tol > 0.0 || self.rel_tol > 0.0) {
            return bad("at least one tolerance must be positive");
        }
        if !(self.h_min > 0.0 && self.h_init > 0.0 && self.h_max > 0.0) {
            return bad("step sizes must be positive");
        }
        if !(self.h_min <= self.h_init && self.h_init <= self.h_max) {
            return bad("need h_min <= h_init <= h_max");
        }
        if self.max_steps == 0 {
            return bad("max_steps must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Rising,
    Falling,
    Any,
}

type EventFn<'a> = Box<dyn Fn(f64, &[f64]) -> f64 + Send + Sync + 'a>;

/// A scalar event function; integration stops at its first qualifying sign change.
pub struct EventSpec<'a> {
    func: EventFn<'a>,
    pub direction: Direction,
    pub root_tol: f64,
}

impl<'a> EventSpec<'a> {
    pub fn new(
        direction: Direction,
        root_tol: f64,
        func: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'a,
    ) -> Self {
        Self {
            func: Box::new(func),
            direction,
            root_tol,
        }
    }

    pub fn eval(&self, t: f64, y: &[f64]) -> f64 {
        (self.func)(t, y)
    }

    /// True when `g` is still on the pre-event side.
    fn before(&self, g_ref: f64, g: f64) -> bool {
        match self.direction {
            Direction::Rising => g < 0.0,
            Direction::Falling => g > 0.0,
            Direction::Any => g_ref.signum() == g.signum() && g != 0.0,
        }
    }

    fn triggered(&self, g_old: f64, g_new: f64) -> bool {
        match self.direction {
            Direction::Rising => g_old < 0.0 && g_new >= 0.0,
            Direction::Falling => g_old > 0.0 && g_new <= 0.0,
            Direction::Any => g_old != 0.0 && (g_new == 0.0 || g_old.signum() != g_new.signum()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TerminalReason {
    ReachedEnd,
    EventHit { index: usize },
    StepUnderflow,
    MaxSteps,
}

/// Borrowed view of one stored node.
#[derive(Debug, Clone, Copy)]
pub struct Node<'t> {
    pub t: f64,
    pub state: &'t [f64],
    pub derivative: &'t [f64],
}

pub(crate) const NCOEF: usize = 5;

/// Accepted nodes of an integration together with per-step interpolation data.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    dim: usize,
    t: Vec<f64>,
    states: Vec<f64>,
    derivs: Vec<f64>,
    seg_h: Vec<f64>,
    seg_coef: Vec<f64>,
    terminal_reason: TerminalReason,
}

impl Trajectory {
    fn start(dim: usize, t0: f64, y0: &[f64], k0: &[f64]) -> Self {
        Self {
            dim,
            t: vec![t0],
            states: y0.to_vec(),
            derivs: k0.to_vec(),
            seg_h: Vec::new(),
            seg_coef: Vec::new(),
            terminal_reason: TerminalReason::ReachedEnd,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn terminal_reason(&self) -> TerminalReason {
        self.terminal_reason
    }

    pub(crate) fn set_terminal_reason(&mut self, r: TerminalReason) {
        self.terminal_reason = r;
    }

    pub fn times(&self) -> &[f64] {
        &self.t
    }

    pub fn t(&self, i: usize) -> f64 {
        self.t[i]
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn derivative(&self, i: usize) -> &[f64] {
        &self.derivs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn node(&self, i: usize) -> Node<'_> {
        Node {
            t: self.t[i],
            state: self.state(i),
            derivative: self.derivative(i),
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = Node<'_>> + '_ {
        (0..self.len()).map(move |i| self.node(i))
    }

    /// Component `c` of every node state.
    pub fn component(&self, c: usize) -> Vec<f64> {
        (0..self.len()).map(|i| self.state(i)[c]).collect()
    }

    pub fn t_start(&self) -> f64 {
        self.t[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.t.last().expect("trajectory has at least one node")
    }

    pub fn last_state(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    pub(crate) fn state_mut(&mut self, i: usize) -> &mut [f64] {
        let d = self.dim;
        &mut self.states[i * d..(i + 1) * d]
    }

    fn push(&mut self, t: f64, y: &[f64], k: &[f64], h: f64, coef: &[f64]) {
        self.t.push(t);
        self.states.extend_from_slice(y);
        self.derivs.extend_from_slice(k);
        self.seg_h.push(h);
        self.seg_coef.extend_from_slice(coef);
    }

    fn coef(&self, seg: usize) -> &[f64] {
        let w = NCOEF * self.dim;
        &self.seg_coef[seg * w..(seg + 1) * w]
    }

    fn locate(&self, t: f64) -> Result<Located, OdeError> {
        let (start, end) = (self.t_start(), self.t_end());
        if !(t >= start && t <= end) {
            return Err(OdeError::OutOfSpan { t, start, end });
        }
        let idx = self.t.partition_point(|&x| x <= t);
        let node = idx - 1;
        if self.t[node] == t {
            return Ok(Located::Node(node));
        }
        Ok(Located::Segment(node, (t - self.t[node]) / self.seg_h[node]))
    }

    /// Interpolated state at `t`; exact at stored nodes.
    pub fn dense_eval(&self, t: f64) -> Result<Vec<f64>, OdeError> {
        let mut out = vec![0.0; self.dim];
        self.dense_eval_into(t, &mut out)?;
        Ok(out)
    }

    pub fn dense_eval_into(&self, t: f64, out: &mut [f64]) -> Result<(), OdeError> {
        match self.locate(t)? {
            Located::Node(i) => out.copy_from_slice(self.state(i)),
            Located::Segment(s, theta) => interpolate(self.coef(s), self.dim, theta, out),
        }
        Ok(())
    }

    /// Time derivative of the interpolant at `t`. At a node this is the
    /// derivative of the segment ending there (the first segment for the first node).
    pub fn dense_derivative(&self, t: f64) -> Result<Vec<f64>, OdeError> {
        let mut out = vec![0.0; self.dim];
        if self.len() < 2 {
            out.copy_from_slice(self.derivative(0));
            return Ok(out);
        }
        let (seg, theta) = match self.locate(t)? {
            Located::Node(0) => (0, 0.0),
            Located::Node(i) => (i - 1, (self.t[i] - self.t[i - 1]) / self.seg_h[i - 1]),
            Located::Segment(s, th) => (s, th),
        };
        interpolate_derivative(self.coef(seg), self.dim, theta, self.seg_h[seg], &mut out);
        Ok(out)
    }

    /// Append `other`, whose first node must coincide with this trajectory's last node.
    pub fn extend(&mut self, other: Trajectory) -> Result<(), OdeError> {
        if other.dim != self.dim {
            return Err(OdeError::Join("dimension mismatch".into()));
        }
        if other.t_start() != self.t_end() {
            return Err(OdeError::Join(format!(
                "gap between {} and {}",
                self.t_end(),
                other.t_start()
            )));
        }
        let d = self.dim;
        self.t.extend_from_slice(&other.t[1..]);
        self.states.extend_from_slice(&other.states[d..]);
        self.derivs.extend_from_slice(&other.derivs[d..]);
        self.seg_h.extend_from_slice(&other.seg_h);
        self.seg_coef.extend_from_slice(&other.seg_coef);
        self.terminal_reason = other.terminal_reason;
        Ok(())
    }
}

enum Located {
    Node(usize),
    Segment(usize, f64),
}

/// Free-function form of [`Trajectory::dense_eval`].
pub fn dense_eval(traj: &Trajectory, t: f64) -> Result<Vec<f64>, OdeError> {
    traj.dense_eval(t)
}

pub(crate) fn interpolate(coef: &[f64], dim: usize, theta: f64, out: &mut [f64]) {
    let th1 = 1.0 - theta;
    for i in 0..dim {
        let r = |k: usize| coef[k * dim + i];
        out[i] = r(0) + theta * (r(1) + th1 * (r(2) + theta * (r(3) + th1 * r(4))));
    }
}

pub(crate) fn interpolate_derivative(coef: &[f64], dim: usize, theta: f64, h: f64, out: &mut [f64]) {
    let th1 = 1.0 - theta;
    for i in 0..dim {
        let r = |k: usize| coef[k * dim + i];
        let c = r(3) + th1 * r(4);
        let dc = -r(4);
        let b = r(2) + theta * c;
        let db = c + theta * dc;
        let a = r(1) + th1 * b;
        let da = -b + th1 * db;
        out[i] = (a + theta * da) / h;
    }
}

// Dormand–Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 5.0;
const MAX_ROOT_ITERS: usize = 200;

/// Outcome of one attempted step.
pub(crate) enum Attempt {
    /// Scaled error norm; the step is accepted when it is at most 1.
    Done(f64),
    /// The stage equations could not be solved; retry with a smaller step.
    Failed,
    NonFinite,
}

/// One-step method plugged into [`drive`]. After an accepted attempt,
/// `y_new`, `k_new` and `coef` hold the end state, its derivative and the
/// interpolation coefficients of the step.
pub(crate) trait Stepper {
    /// Exponent used in the step-size update `err^(-1/order)`.
    fn order(&self) -> f64;
    fn eval(&self, t: f64, y: &[f64], out: &mut [f64]);
    fn attempt(&mut self, t: f64, y: &[f64], k0: &[f64], h: f64, ctrl: &StepControl) -> Attempt;
    fn y_new(&self) -> &[f64];
    fn k_new(&self) -> &[f64];
    fn coef(&self) -> &[f64];
}

pub(crate) fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

pub(crate) fn scaled_norm(e: &[f64], y: &[f64], y_new: &[f64], ctrl: &StepControl) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..e.len() {
        let scale = ctrl.abs_tol + ctrl.rel_tol * y[i].abs().max(y_new[i].abs());
        let r = e[i].abs() / scale;
        if r.is_nan() {
            return f64::NAN;
        }
        worst = worst.max(r);
    }
    worst
}

/// Integrate `y' = rhs(t, y)` from `t0` to `t_end`, stopping early at the first event.
///
/// `rhs` writes the derivative into its third argument. Budget and underflow
/// failures return the trajectory computed so far inside the error.
pub fn integrate_adaptive<F>(
    rhs: F,
    t0: f64,
    state0: &[f64],
    t_end: f64,
    ctrl: &StepControl,
    events: &[EventSpec<'_>],
) -> Result<Trajectory, OdeError>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    let mut st = Dopri::new(rhs, state0.len());
    drive(&mut st, t0, state0, t_end, ctrl, events)
}

pub(crate) fn drive<S: Stepper>(
    st: &mut S,
    t0: f64,
    state0: &[f64],
    t_end: f64,
    ctrl: &StepControl,
    events: &[EventSpec<'_>],
) -> Result<Trajectory, OdeError> {
    ctrl.validate()?;
    if !(t_end > t0) {
        return Err(OdeError::EmptyInterval { t0, t_end });
    }
    let dim = state0.len();
    let mut y = state0.to_vec();
    let mut k = vec![0.0; dim];
    let mut t = t0;
    st.eval(t, &y, &mut k);
    if !all_finite(&k) || !all_finite(&y) {
        return Err(OdeError::NonFiniteRhs { t });
    }
    let mut traj = Trajectory::start(dim, t, &y, &k);
    let mut g_old: Vec<f64> = events.iter().map(|e| e.eval(t, &y)).collect();
    let mut h = ctrl.h_init.min(ctrl.h_max);
    let mut steps = 0usize;
    let mut rejected_last = false;
    let expo = -1.0 / st.order();

    loop {
        if t >= t_end {
            traj.terminal_reason = TerminalReason::ReachedEnd;
            return Ok(traj);
        }
        if steps >= ctrl.max_steps {
            traj.terminal_reason = TerminalReason::MaxSteps;
            return Err(OdeError::MaxStepsExceeded {
                t,
                partial: Box::new(traj),
            });
        }
        let last = t + h >= t_end;
        if last {
            h = t_end - t;
        }
        steps += 1;
        let err = match st.attempt(t, &y, &k, h, ctrl) {
            Attempt::Done(e) if e.is_finite() => e,
            Attempt::Done(_) | Attempt::NonFinite => return Err(OdeError::NonFiniteRhs { t }),
            Attempt::Failed => f64::INFINITY,
        };
        if err <= 1.0 {
            let t_new = if last { t_end } else { t + h };
            // event search on this step
            let mut hit: Option<(usize, f64)> = None;
            let mut g_new = Vec::with_capacity(events.len());
            for (j, ev) in events.iter().enumerate() {
                let gn = ev.eval(t_new, st.y_new());
                g_new.push(gn);
                if ev.triggered(g_old[j], gn) {
                    let te = refine_root(ev, g_old[j], t, t_new, h, st.coef(), dim);
                    if hit.is_none_or(|(_, tb)| te < tb) {
                        hit = Some((j, te));
                    }
                }
            }
            if let Some((j, te)) = hit {
                let mut ye = vec![0.0; dim];
                if te >= t_new {
                    ye.copy_from_slice(st.y_new());
                } else {
                    interpolate(st.coef(), dim, (te - t) / h, &mut ye);
                }
                let mut ke = vec![0.0; dim];
                st.eval(te, &ye, &mut ke);
                if !all_finite(&ke) {
                    return Err(OdeError::NonFiniteRhs { t: te });
                }
                traj.push(te, &ye, &ke, h, st.coef());
                traj.terminal_reason = TerminalReason::EventHit { index: j };
                return Ok(traj);
            }
            traj.push(t_new, st.y_new(), st.k_new(), h, st.coef());
            t = t_new;
            y.copy_from_slice(st.y_new());
            k.copy_from_slice(st.k_new());
            g_old = g_new;
            let mut fac = SAFETY * err.max(1e-10).powf(expo);
            fac = fac.clamp(FAC_MIN, FAC_MAX);
            if rejected_last {
                fac = fac.min(1.0);
            }
            rejected_last = false;
            h = (h * fac).clamp(ctrl.h_min, ctrl.h_max);
        } else {
            rejected_last = true;
            let fac = if err.is_finite() { (SAFETY * err.powf(expo)).max(FAC_MIN) } else { 0.5 };
            let h_new = h * fac;
            if h_new < ctrl.h_min {
                if h > ctrl.h_min {
                    h = ctrl.h_min;
                } else {
                    traj.terminal_reason = TerminalReason::StepUnderflow;
                    return Err(OdeError::StepUnderflow {
                        t,
                        partial: Box::new(traj),
                    });
                }
            } else {
                h = h_new.min(ctrl.h_max);
            }
        }
    }
}

struct Dopri<F> {
    rhs: F,
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
    y_new: Vec<f64>,
    coef: Vec<f64>,
    err: Vec<f64>,
}

impl<F: Fn(f64, &[f64], &mut [f64])> Dopri<F> {
    fn new(rhs: F, dim: usize) -> Self {
        Dopri {
            rhs,
            k: std::array::from_fn(|_| vec![0.0; dim]),
            tmp: vec![0.0; dim],
            y_new: vec![0.0; dim],
            coef: vec![0.0; NCOEF * dim],
            err: vec![0.0; dim],
        }
    }

    fn stages(&mut self, t: f64, y: &[f64], h: f64) {
        let dim = y.len();
        let rhs = &self.rhs;
        let [k1, k2, k3, k4, k5, k6, k7] = &mut self.k;
        let tmp = &mut self.tmp;
        for i in 0..dim {
            tmp[i] = y[i] + h * A21 * k1[i];
        }
        rhs(t + C2 * h, tmp, k2);
        for i in 0..dim {
            tmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        rhs(t + C3 * h, tmp, k3);
        for i in 0..dim {
            tmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        rhs(t + C4 * h, tmp, k4);
        for i in 0..dim {
            tmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        rhs(t + C5 * h, tmp, k5);
        for i in 0..dim {
            tmp[i] = y[i]
                + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        rhs(t + h, tmp, k6);
        for i in 0..dim {
            self.y_new[i] = y[i]
                + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        rhs(t + h, &self.y_new, k7);
    }

    fn dense_coefficients(&mut self, y: &[f64], h: f64) {
        let dim = y.len();
        let k = &self.k;
        for i in 0..dim {
            let ydiff = self.y_new[i] - y[i];
            let bspl = h * k[0][i] - ydiff;
            self.coef[i] = y[i];
            self.coef[dim + i] = ydiff;
            self.coef[2 * dim + i] = bspl;
            self.coef[3 * dim + i] = ydiff - h * k[6][i] - bspl;
            self.coef[4 * dim + i] = h
                * (D1 * k[0][i] + D3 * k[2][i] + D4 * k[3][i] + D5 * k[4][i] + D6 * k[5][i]
                    + D7 * k[6][i]);
        }
    }
}

impl<F: Fn(f64, &[f64], &mut [f64])> Stepper for Dopri<F> {
    fn order(&self) -> f64 {
        5.0
    }

    fn eval(&self, t: f64, y: &[f64], out: &mut [f64]) {
        (self.rhs)(t, y, out)
    }

    fn attempt(&mut self, t: f64, y: &[f64], k0: &[f64], h: f64, ctrl: &StepControl) -> Attempt {
        self.k[0].copy_from_slice(k0);
        self.stages(t, y, h);
        if !(1..7).all(|i| all_finite(&self.k[i])) || !all_finite(&self.y_new) {
            return Attempt::NonFinite;
        }
        let k = &self.k;
        for i in 0..y.len() {
            self.err[i] = h
                * (E1 * k[0][i] + E3 * k[2][i] + E4 * k[3][i] + E5 * k[4][i] + E6 * k[5][i]
                    + E7 * k[6][i]);
        }
        let err = scaled_norm(&self.err, y, &self.y_new, ctrl);
        if err <= 1.0 {
            self.dense_coefficients(y, h);
        }
        Attempt::Done(err)
    }

    fn y_new(&self) -> &[f64] {
        &self.y_new
    }

    fn k_new(&self) -> &[f64] {
        &self.k[6]
    }

    fn coef(&self) -> &[f64] {
        &self.coef
    }
}

/// Bracketed root refinement on the step interpolant: Illinois false position
/// interleaved with bisection. Returns the post-crossing end of the final bracket.
fn refine_root(
    ev: &EventSpec<'_>,
    g_ref: f64,
    t_old: f64,
    t_new: f64,
    h: f64,
    coef: &[f64],
    dim: usize,
) -> f64 {
    let mut buf = vec![0.0; dim];
    let mut g_at = |t: f64| {
        interpolate(coef, dim, (t - t_old) / h, &mut buf);
        ev.eval(t, &buf)
    };
    let (mut lo, mut hi) = (t_old, t_new);
    let mut g_lo = g_ref;
    let mut g_hi = g_at(hi);
    let mut side = 0i8;
    for iter in 0..MAX_ROOT_ITERS {
        if hi - lo <= ev.root_tol {
            break;
        }
        let mut mid = 0.5 * (lo + hi);
        if iter % 2 == 0 && g_hi != g_lo {
            let cand = hi - g_hi * (hi - lo) / (g_hi - g_lo);
            if cand > lo && cand < hi {
                mid = cand;
            }
        }
        let gm = g_at(mid);
        if ev.before(g_ref, gm) {
            lo = mid;
            g_lo = gm;
            if side == -1 {
                g_hi *= 0.5;
            }
            side = -1;
        } else {
            hi = mid;
            g_hi = gm;
            if side == 1 {
                g_lo *= 0.5;
            }
            side = 1;
        }
    }
    hi
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decay(_t: f64, y: &[f64], dy: &mut [f64]) {
        dy[0] = -y[0];
    }

    fn tight() -> StepControl {
        StepControl {
            abs_tol: 1e-12,
            rel_tol: 1e-10,
            ..StepControl::default()
        }
    }

    #[test]
    fn zero_field_is_constant() {
        let tr = integrate_adaptive(|_, _, d| d[0] = 0.0, 0.0, &[1.0], 5.0, &tight(), &[]).unwrap();
        assert_eq!(tr.terminal_reason(), TerminalReason::ReachedEnd);
        assert!(tr.nodes().all(|n| n.state[0] == 1.0));
        assert_eq!(tr.t_end(), 5.0);
    }

    #[test]
    fn exponential_decay_final_state() {
        let tr = integrate_adaptive(decay, 0.0, &[1.0], 1.0, &tight(), &[]).unwrap();
        assert!((tr.last_state()[0] - (-1.0f64).exp()).abs() < 1e-8);
    }

    #[test]
    fn event_at_ln2() {
        let ev = EventSpec::new(Direction::Falling, 1e-12, |_, y| y[0] - 0.5);
        let tr = integrate_adaptive(decay, 0.0, &[1.0], 5.0, &tight(), &[ev]).unwrap();
        assert_eq!(tr.terminal_reason(), TerminalReason::EventHit { index: 0 });
        assert!((tr.t_end() - std::f64::consts::LN_2).abs() < 1e-8);
    }

    #[test]
    fn event_direction_is_respected() {
        let ev = EventSpec::new(Direction::Rising, 1e-12, |_, y| y[0] - 0.5);
        let tr = integrate_adaptive(decay, 0.0, &[1.0], 2.0, &tight(), &[ev]).unwrap();
        assert_eq!(tr.terminal_reason(), TerminalReason::ReachedEnd);
    }

    #[test]
    fn event_location_independent_of_initial_step() {
        let mut hits = Vec::new();
        for h0 in [1e-6, 1e-3, 1e-1] {
            let ctrl = StepControl { h_init: h0, ..tight() };
            let ev = EventSpec::new(Direction::Falling, 1e-12, |_, y| y[0] - 0.5);
            let tr = integrate_adaptive(decay, 0.0, &[1.0], 5.0, &ctrl, &[ev]).unwrap();
            hits.push(tr.t_end());
        }
        for w in hits.windows(2) {
            assert!((w[0] - w[1]).abs() < 1e-10, "{hits:?}");
        }
    }

    #[test]
    fn dense_output_is_exact_at_nodes_and_accurate_between() {
        let tr = integrate_adaptive(decay, 0.0, &[1.0], 3.0, &tight(), &[]).unwrap();
        for i in 0..tr.len() {
            assert_eq!(tr.dense_eval(tr.t(i)).unwrap()[0], tr.state(i)[0]);
        }
        for i in 0..tr.len() - 1 {
            let tm = 0.5 * (tr.t(i) + tr.t(i + 1));
            assert!((dense_eval(&tr, tm).unwrap()[0] - (-tm).exp()).abs() < 1e-7);
        }
        assert!(matches!(tr.dense_eval(3.5), Err(OdeError::OutOfSpan { .. })));
    }

    #[test]
    fn linear_field_reproduced_exactly() {
        let tr = integrate_adaptive(|_, _, d| d[0] = 1.0, 0.0, &[2.0], 4.0, &tight(), &[]).unwrap();
        for x in [0.013, 0.77, 1.5, 3.999] {
            let v = tr.dense_eval(x).unwrap()[0];
            assert!((v - (2.0 + x)).abs() < 1e-13);
            assert!((tr.dense_derivative(x).unwrap()[0] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn halving_tolerances_never_hurts() {
        let mut prev = f64::INFINITY;
        for k in 0..4 {
            let tol = 1e-6 / 2f64.powi(k);
            let ctrl = StepControl {
                abs_tol: tol,
                rel_tol: tol,
                ..StepControl::default()
            };
            let tr = integrate_adaptive(decay, 0.0, &[1.0], 1.0, &ctrl, &[]).unwrap();
            let err = (tr.last_state()[0] - (-1.0f64).exp()).abs();
            assert!(err <= prev * 1.0000001, "level {k}: {err} > {prev}");
            prev = err;
        }
    }

    #[test]
    fn reruns_are_bit_identical() {
        let run = || integrate_adaptive(decay, 0.0, &[1.0], 2.0, &tight(), &[]).unwrap();
        assert_eq!(run(), run());
    }

    #[test]
    fn budget_and_bad_input_errors() {
        let ctrl = tight().with_max_steps(3);
        let err = integrate_adaptive(decay, 0.0, &[1.0], 100.0, &ctrl, &[]).unwrap_err();
        let partial = err.into_partial().unwrap();
        assert_eq!(partial.terminal_reason(), TerminalReason::MaxSteps);

        let err = integrate_adaptive(|_, _, d| d[0] = f64::NAN, 0.0, &[1.0], 1.0, &tight(), &[]);
        assert!(matches!(err, Err(OdeError::NonFiniteRhs { .. })));

        let bad = StepControl { h_min: 1.0, h_init: 0.1, ..tight() };
        assert!(matches!(
            integrate_adaptive(decay, 0.0, &[1.0], 1.0, &bad, &[]),
            Err(OdeError::InvalidControl(_))
        ));
        assert!(integrate_adaptive(decay, 1.0, &[1.0], 1.0, &tight(), &[]).is_err());
    }

    #[test]
    fn underflow_reported() {
        // y' = y^2 blows up at t = 1
        let ctrl = StepControl { h_min: 1e-6, ..tight() };
        let err = integrate_adaptive(|_, y, d| d[0] = y[0] * y[0], 0.0, &[1.0], 2.0, &ctrl, &[]);
        assert!(matches!(err, Err(OdeError::StepUnderflow { .. })));
    }

    #[test]
    fn node_derivatives_match_rhs() {
        let tr = integrate_adaptive(decay, 0.0, &[1.0], 2.0, &tight(), &[]).unwrap();
        for n in tr.nodes() {
            assert_eq!(n.derivative[0], -n.state[0]);
        }
        assert!(tr.times().windows(2).all(|w| w[1] > w[0]));
    }
}
