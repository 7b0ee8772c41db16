//! Invariant suite over a matrix of exponents and shooting parameters.

use crate::classify::{classify, classify_with, default_control, find_threshold, Regime, DEFAULT_MARGIN};
use crate::ode::StepControl;
use crate::profile::{check_residuals, integrate_profile, DEFAULT_R_MAX};
use crate::psi::{barrier_amplitude, integrate_psi, transform_check, CHECK_TOL, DEFAULT_Y_END};
use crate::Params;

pub const DEFAULT_EXPONENTS: [f64; 3] = [1.2, 1.5, 1.8];

/// Shooting parameters besides `c_lower` and `c_lower / 2`.
pub const DEFAULT_PARAMETERS: [f64; 4] = [0.05, 0.5, 2.0, 11.0];

pub const RESIDUAL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckRow {
    pub p: f64,
    /// `None` for per-exponent checks.
    pub a: Option<f64>,
    pub check: &'static str,
    pub value: f64,
    pub limit: f64,
    pub passed: bool,
    pub note: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub rows: Vec<CheckRow>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        !self.rows.is_empty() && self.rows.iter().all(|r| r.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckRow> {
        self.rows.iter().filter(|r| !r.passed)
    }
}

/// One validation case: an exponent alone or an exponent with a parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Case {
    Exponent(f64),
    Point(f64, f64),
}

/// Cases of the default matrix in a fixed order.
pub fn default_cases() -> Vec<Case> {
    let mut out = Vec::new();
    for p in DEFAULT_EXPONENTS {
        let c = Params::new(p).expect("default exponents are valid").c_lower();
        out.push(Case::Exponent(p));
        for a in [c / 2.0, c].into_iter().chain(DEFAULT_PARAMETERS) {
            out.push(Case::Point(p, a));
        }
    }
    out
}

fn row(p: f64, a: Option<f64>, check: &'static str, value: f64, limit: f64, passed: bool) -> CheckRow {
    CheckRow { p, a, check, value, limit, passed, note: String::new() }
}

fn failed(p: f64, a: Option<f64>, check: &'static str, err: impl std::fmt::Display) -> CheckRow {
    CheckRow {
        p,
        a,
        check,
        value: f64::NAN,
        limit: f64::NAN,
        passed: false,
        note: err.to_string(),
    }
}

pub fn run_case(case: Case) -> Vec<CheckRow> {
    match case {
        Case::Exponent(p) => exponent_checks(p),
        Case::Point(p, a) => point_checks(p, a),
    }
}

pub fn run_cases(cases: &[Case]) -> ValidationReport {
    ValidationReport { rows: cases.iter().flat_map(|c| run_case(*c)).collect() }
}

fn exponent_checks(p: f64) -> Vec<CheckRow> {
    let params = match Params::new(p) {
        Ok(x) => x,
        Err(e) => return vec![failed(p, None, "params", e)],
    };
    let mut rows = Vec::new();
    let c = params.c_lower();
    match classify(&params, c, DEFAULT_MARGIN) {
        Ok(l) => rows.push(row(p, Some(c), "c_lower_decaying", 0.0, 0.0, l.regime == Regime::Decaying)),
        Err(e) => rows.push(failed(p, Some(c), "c_lower_decaying", e)),
    }
    match find_threshold(&params, None, &default_control()) {
        Ok(t) => {
            rows.push(row(p, None, "threshold_width", t.width, 1e-9 * t.a_hi, t.width <= 1e-9 * t.a_hi));
            let tight = StepControl::relative(1e-12).with_max_steps(800_000);
            let edges = classify_with(&params, t.a_lo, 1e-8, &tight)
                .and_then(|lo| Ok((lo, classify_with(&params, t.a_hi, 1e-8, &tight)?)));
            match edges {
                Ok((lo, hi)) => rows.push(row(
                    p,
                    Some(t.a_star),
                    "threshold_edges",
                    0.0,
                    0.0,
                    lo.regime == Regime::Decaying && hi.regime == Regime::Crossing,
                )),
                Err(e) => rows.push(failed(p, Some(t.a_star), "threshold_edges", e)),
            }
        }
        Err(e) => rows.push(failed(p, None, "threshold_width", e)),
    }
    rows
}

fn point_checks(p: f64, a: f64) -> Vec<CheckRow> {
    let params = match Params::new(p) {
        Ok(x) => x,
        Err(e) => return vec![failed(p, Some(a), "params", e)],
    };
    let at = Some(a);
    let ctrl = StepControl::relative(1e-10);
    let mut rows = Vec::new();

    let profile = match integrate_profile(&params, a, DEFAULT_R_MAX, &ctrl) {
        Ok(t) => {
            rows.push(row(p, at, "profile_bounds", 0.0, 0.0, true));
            t
        }
        Err(e) => {
            rows.push(failed(p, at, "profile_bounds", e));
            return rows;
        }
    };
    match check_residuals(&profile) {
        Ok(r) => {
            rows.push(row(p, at, "ode_residual", r.max_ode_residual, RESIDUAL_TOL, r.max_ode_residual < RESIDUAL_TOL));
            rows.push(row(
                p,
                at,
                "identity_defect",
                r.max_identity_b1b_defect,
                RESIDUAL_TOL,
                r.max_identity_b1b_defect < RESIDUAL_TOL,
            ));
        }
        Err(e) => rows.push(failed(p, at, "ode_residual", e)),
    }

    let psi = match integrate_psi(&params, a, DEFAULT_Y_END, &ctrl) {
        Ok(t) => t,
        Err(e) => {
            rows.push(failed(p, at, "psi_single_peak", e));
            return rows;
        }
    };
    match transform_check(&profile, &psi) {
        Ok(d) => rows.push(row(p, at, "transform_defect", d, RESIDUAL_TOL, d < RESIDUAL_TOL)),
        Err(e) => rows.push(failed(p, at, "transform_defect", e)),
    }
    let shape = psi.shape_defect();
    rows.push(row(
        p,
        at,
        "psi_single_peak",
        shape,
        CHECK_TOL,
        psi.y_a.is_some() && psi.slope_sign_changes() == 1 && shape < CHECK_TOL,
    ));
    let low = psi.lower_bound_deficit();
    rows.push(row(p, at, "psi_lower_bound", low, CHECK_TOL, low < CHECK_TOL));

    match classify(&params, a, DEFAULT_MARGIN) {
        Ok(l) => {
            let crossing_agrees = (l.regime == Regime::Crossing) == profile.crossing.is_some();
            rows.push(row(p, at, "label_matches_profile", 0.0, 0.0, crossing_agrees && l.regime != Regime::Critical));
            if l.regime == Regime::Decaying {
                let env = psi.envelope_excess();
                rows.push(row(p, at, "phi_envelope", env, CHECK_TOL, env <= CHECK_TOL));
            }
        }
        Err(e) => rows.push(failed(p, at, "label_matches_profile", e)),
    }
    if let Some(amp) = barrier_amplitude(&params, a) {
        let ex = psi.barrier_excess(amp);
        rows.push(row(p, at, "barrier", ex, CHECK_TOL, ex <= CHECK_TOL));
    }
    rows
}

/// Fixed-width text table of a report.
pub fn render_table(report: &ValidationReport) -> String {
    let mut s = format!("{:<6} {:<14} {:<22} {:>12} {:>10}  {}\n", "p", "a", "check", "value", "limit", "result");
    for r in &report.rows {
        let a = r.a.map(|a| format!("{a:.6e}")).unwrap_or_else(|| "-".into());
        s.push_str(&format!(
            "{:<6} {:<14} {:<22} {:>12.3e} {:>10.1e}  {}{}\n",
            r.p,
            a,
            r.check,
            r.value,
            r.limit,
            if r.passed { "PASS" } else { "FAIL" },
            if r.note.is_empty() { String::new() } else { format!(" ({})", r.note) }
        ));
    }
    s
}

pub fn validate_default() -> ValidationReport {
    run_cases(&default_cases())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_matrix_passes() {
        let rep = validate_default();
        let table = render_table(&rep);
        assert!(rep.all_passed(), "{table}");
        for p in DEFAULT_EXPONENTS {
            for check in ["barrier", "phi_envelope", "psi_single_peak", "identity_defect"] {
                assert!(rep.rows.iter().any(|r| r.p == p && r.check == check), "{p} {check}");
            }
        }
    }

    #[test]
    fn failures_are_reported_not_hidden() {
        let rows = run_case(Case::Point(2.5, 1.0));
        assert_eq!(rows.len(), 1);
        assert!(!rows[0].passed);
        let rep = ValidationReport { rows };
        assert!(!rep.all_passed());
        assert!(render_table(&rep).contains("FAIL"));
        assert!(!ValidationReport::default().all_passed());
    }
}
