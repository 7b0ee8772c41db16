//! Regime classification of a shooting parameter and bisection for `a*`.
//!
//! `phi = psi (1-y)^{-p}` either exceeds `kappa` (crossing profile), attains an
//! interior maximum below `kappa` (algebraically decaying profile), or tends to
//! `kappa` from below without turning (the single critical value). The
//! classifier never asserts the critical case: it reports that the margin did
//! not separate the other two.

use crate::ode::{Direction, EventSpec, OdeError, StepControl, TerminalReason};
use crate::psi::{phi_slope_log, psi_series_start, s_of_y, solve_psi, start_control, start_ordinate, y_of_s};
use crate::{Error, Params, Result};

pub const DEFAULT_MARGIN: f64 = 1e-4;

/// End of the classification run in `s = -ln(1-y)`.
pub const CLASSIFY_S_END: f64 = 80.0;

/// Floor of the bisection margin.
pub const MIN_MARGIN: f64 = 1e-8;

const MAX_MARGIN: f64 = 1e-2;
const RETRIES: usize = 2;
const DEFAULT_MAX_DOUBLINGS: u32 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Regime {
    Crossing,
    Critical,
    Decaying,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::Crossing => "Crossing",
            Regime::Critical => "Critical",
            Regime::Decaying => "Decaying",
        }
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Evidence {
    /// `phi` rose through `kappa (1 + margin)` at `y`.
    PhiExceedsKappa { y: f64, phi: f64 },
    /// `phi` turned at `y_peak` with value `peak < kappa (1 - margin)`.
    PhiPeakBelowKappa { y_peak: f64, peak: f64 },
    /// Neither test was decisive; `peak` is set when `phi` turned inside the band.
    Undecided { y_end: f64, phi_end: f64, peak: Option<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassLabel {
    pub regime: Regime,
    pub evidence: Evidence,
    pub margin: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probe {
    pub a: f64,
    pub label: ClassLabel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdResult {
    pub a_lo: f64,
    pub a_hi: f64,
    pub a_star: f64,
    pub width: f64,
    pub iterations: usize,
    pub tol_a: f64,
    /// Bracketing probes followed by bisection probes, in evaluation order.
    pub log: Vec<Probe>,
    /// Number of leading bracketing probes in `log`.
    pub bracket_probes: usize,
}

/// Integrator settings used by [`classify`].
pub fn default_control() -> StepControl {
    StepControl::relative(1e-10).with_max_steps(400_000)
}

pub fn classify(params: &Params, a: f64, margin: f64) -> Result<ClassLabel> {
    classify_with(params, a, margin, &default_control())
}

pub fn classify_with(params: &Params, a: f64, margin: f64, ctrl: &StepControl) -> Result<ClassLabel> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(Error::InvalidParameter(format!("a = {a} must be positive")));
    }
    if !(margin > 0.0 && margin < 0.5) {
        return Err(Error::InvalidParameter(format!("margin {margin} not in (0, 0.5)")));
    }
    let pr = *params;
    let p = pr.p();
    let kappa = pr.kappa();
    let upper = kappa * (1.0 + margin);
    let tol = 1e-13 * CLASSIFY_S_END;
    let events = [
        EventSpec::new(Direction::Rising, tol, move |s, y| {
            y[0].max(0.0) * (p * s).exp() - upper
        }),
        EventSpec::new(Direction::Falling, tol, move |s, y| phi_slope_log(&pr, a, s, y[0])),
    ];
    let y0 = start_ordinate(params, a);
    let psi0 = psi_series_start(params, a, y0)?;
    let path = match solve_psi(params, a, s_of_y(y0), psi0, CLASSIFY_S_END, &start_control(ctrl, y0), &events) {
        Ok(t) => t,
        Err(e @ (OdeError::MaxStepsExceeded { .. } | OdeError::StepUnderflow { .. })) => {
            e.into_partial().expect("budget errors carry a trajectory")
        }
        Err(e) => return Err(e.into()),
    };
    let s = path.t_end();
    let y = y_of_s(s);
    let phi = path.last_state()[0].max(0.0) * (p * s).exp();
    let (regime, evidence) = match path.terminal_reason() {
        TerminalReason::EventHit { index: 0 } => (Regime::Crossing, Evidence::PhiExceedsKappa { y, phi }),
        TerminalReason::EventHit { .. } if phi < kappa * (1.0 - margin) => {
            (Regime::Decaying, Evidence::PhiPeakBelowKappa { y_peak: y, peak: phi })
        }
        TerminalReason::EventHit { .. } => (
            Regime::Critical,
            Evidence::Undecided { y_end: y, phi_end: phi, peak: Some(phi) },
        ),
        _ => (Regime::Critical, Evidence::Undecided { y_end: y, phi_end: phi, peak: None }),
    };
    Ok(ClassLabel { regime, evidence, margin })
}

/// Labels of a parameter grid, in grid order.
pub fn classify_grid(params: &Params, grid: &[f64], margin: f64, ctrl: &StepControl) -> Result<Vec<ClassLabel>> {
    grid.iter().map(|&a| classify_with(params, a, margin, ctrl)).collect()
}

/// Whether labels follow the pattern Decaying*, Critical*, Crossing*.
pub fn labels_monotone(labels: &[Regime]) -> bool {
    let rank = |r: &Regime| match r {
        Regime::Decaying => 0,
        Regime::Critical => 1,
        Regime::Crossing => 2,
    };
    labels.windows(2).all(|w| rank(&w[0]) <= rank(&w[1]))
}

/// `(c_lower, a_hi)` where `a_hi` is the first doubling of `c_lower` classified as crossing.
pub fn initial_bracket(params: &Params) -> Result<(f64, f64)> {
    let (_, hi, _) = bracket_with(params, DEFAULT_MAX_DOUBLINGS, &default_control())?;
    Ok((params.c_lower(), hi))
}

/// Doubling search from `c_lower`. Returns the largest decaying probe, the
/// crossing probe and the probe log.
pub fn bracket_with(params: &Params, max_doublings: u32, ctrl: &StepControl) -> Result<(f64, f64, Vec<Probe>)> {
    let c = params.c_lower();
    let mut log = Vec::new();
    let mut lo = c;
    let label = classify_with(params, c, DEFAULT_MARGIN, ctrl)?;
    log.push(Probe { a: c, label });
    if label.regime != Regime::Decaying {
        return Err(Error::WrongLabel(format!("c_lower = {c} classified {}", label.regime)));
    }
    let mut a = c;
    for _ in 0..max_doublings {
        a *= 2.0;
        let label = classify_with(params, a, DEFAULT_MARGIN, ctrl)?;
        log.push(Probe { a, label });
        match label.regime {
            Regime::Crossing => return Ok((lo, a, log)),
            Regime::Decaying => lo = a,
            Regime::Critical => {}
        }
    }
    Err(Error::BracketFailure { a })
}

fn tighter(ctrl: &StepControl) -> StepControl {
    StepControl {
        abs_tol: ctrl.abs_tol / 10.0,
        rel_tol: ctrl.rel_tol / 10.0,
        max_steps: ctrl.max_steps.saturating_mul(2),
        ..*ctrl
    }
}

fn check_consistent(log: &[Probe]) -> Result<()> {
    let dec = log
        .iter()
        .filter(|p| p.label.regime == Regime::Decaying)
        .map(|p| p.a)
        .fold(f64::NEG_INFINITY, f64::max);
    let cro = log
        .iter()
        .filter(|p| p.label.regime == Regime::Crossing)
        .map(|p| p.a)
        .fold(f64::INFINITY, f64::min);
    if dec >= cro {
        return Err(Error::InconsistentClassification { decaying: dec, crossing: cro });
    }
    Ok(())
}

/// Bisection for `a*`. `tol_a = None` selects `1e-10 max(1, a_hi)`.
pub fn find_threshold(params: &Params, tol_a: Option<f64>, ctrl: &StepControl) -> Result<ThresholdResult> {
    if let Some(t) = tol_a {
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::InvalidParameter(format!("tol_a = {t} must be positive")));
        }
    }
    let (mut lo, mut hi, mut log) = bracket_with(params, DEFAULT_MAX_DOUBLINGS, ctrl)?;
    let tol = tol_a.unwrap_or(1e-10 * hi.max(1.0));
    let bracket_probes = log.len();
    let mut iterations = 0;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let mut margin = ((hi - lo) / hi).clamp(MIN_MARGIN, MAX_MARGIN);
        let mut c = *ctrl;
        let mut label = classify_with(params, mid, margin, &c)?;
        let mut tries = 0;
        while label.regime == Regime::Critical && tries < RETRIES {
            margin /= 100.0;
            c = tighter(&c);
            label = classify_with(params, mid, margin, &c)?;
            tries += 1;
        }
        log.push(Probe { a: mid, label });
        match label.regime {
            Regime::Decaying => lo = mid,
            Regime::Crossing => hi = mid,
            Regime::Critical => return Err(Error::Unresolved { a: mid, margin }),
        }
        check_consistent(&log)?;
        iterations += 1;
    }
    Ok(ThresholdResult {
        a_lo: lo,
        a_hi: hi,
        a_star: 0.5 * (lo + hi),
        width: hi - lo,
        iterations,
        tol_a: tol,
        log,
        bracket_probes,
    })
}
