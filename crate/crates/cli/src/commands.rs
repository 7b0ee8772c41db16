use std::path::Path;

use rayon::prelude::*;

use extprof_core::asymptotics::{fit_decaying, reconstruct_selfsimilar, TailFit};
use extprof_core::classify::{classify_with, find_threshold, Evidence, Regime};
use extprof_core::profile::{check_residuals, integrate_profile};
use extprof_core::psi::{integrate_psi, tail_estimate};
use extprof_core::validation::{default_cases, render_table, run_case, ValidationReport};

use crate::config::{CommandKind, Format, RunConfig, UsageError};
use crate::output::{emit_csv, emit_json, record_to_json, table_to_csv, Cell, OutputRecord, OutputError, Table};

pub const THREADS_ENV: &str = "EXTPROF_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("usage: {0}")]
    Usage(#[from] UsageError),
    #[error("numerical error: {0}")]
    Numeric(#[from] extprof_core::Error),
    #[error("output error: {0}")]
    Output(#[from] OutputError),
    #[error("{0} validation checks failed")]
    ValidationFailed(usize),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Usage(_) => 2,
            _ => 1,
        }
    }
}

/// Result of a command: the full record and its plain-text rendering.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub record: OutputRecord,
    pub text: String,
    pub failures: usize,
}

fn num_or_blank(x: Option<f64>) -> Cell {
    match x {
        Some(v) if v.is_finite() => Cell::Num(v),
        _ => Cell::Text(String::new()),
    }
}

fn thread_pool() -> rayon::ThreadPool {
    let n = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|n| *n > 0)
        .unwrap_or(0);
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .expect("thread pool")
}

pub fn run(cfg: &RunConfig) -> Result<Outcome, RunError> {
    cfg.validate()?;
    match cfg.command {
        CommandKind::Classify => classify_cmd(cfg),
        CommandKind::Threshold => threshold_cmd(cfg),
        CommandKind::Profile => profile_cmd(cfg),
        CommandKind::Psi => psi_cmd(cfg),
        CommandKind::Selfsim => selfsim_cmd(cfg),
        CommandKind::Sweep => sweep_cmd(cfg),
        CommandKind::Validate => validate_cmd(cfg),
    }
}

fn classify_cmd(cfg: &RunConfig) -> Result<Outcome, RunError> {
    let a = cfg.a.expect("validated");
    let label = classify_with(&cfg.params(), a, cfg.margin, &cfg.step_control())?;
    let mut rec = OutputRecord::new(cfg.clone());
    rec.table = Table::new(&["a", "regime"]);
    rec.table.push(vec![a.into(), label.regime.name().into()]);
    rec.summary("regime", label.regime.name());
    rec.summary("margin", label.margin);
    match label.evidence {
        Evidence::PhiExceedsKappa { y, phi } => {
            rec.summary("evidence", "phi_exceeds_kappa");
            rec.summary("y", y);
            rec.summary("phi", phi);
        }
        Evidence::PhiPeakBelowKappa { y_peak, peak } => {
            rec.summary("evidence", "phi_peak_below_kappa");
            rec.summary("y", y_peak);
            rec.summary("phi", peak);
        }
        Evidence::Undecided { y_end, phi_end, .. } => {
            rec.summary("evidence", "undecided");
            rec.summary("y", y_end);
            rec.summary("phi", phi_end);
        }
    }
    Ok(Outcome { record: rec, text: format!("{}\n", label.regime), failures: 0 })
}

fn threshold_cmd(cfg: &RunConfig) -> Result<Outcome, RunError> {
    let ctrl = cfg.step_control().with_max_steps(400_000);
    let res = find_threshold(&cfg.params(), cfg.tol_a, &ctrl)?;
    let mut rec = OutputRecord::new(cfg.clone());
    rec.table = Table::new(&["a", "regime", "margin"]);
    for pb in &res.log {
        rec.table.push(vec![pb.a.into(), pb.label.regime.name().into(), pb.label.margin.into()]);
    }
    rec.summary("a_lo", res.a_lo);
    rec.summary("a_hi", res.a_hi);
    rec.summary("a_star", res.a_star);
    rec.summary("width", res.width);
    rec.summary("tol_a", res.tol_a);
    rec.summary("iterations", res.iterations as f64);
    let text = format!(
        "a_lo = {:.16e}\na_hi = {:.16e}\na_star = {:.16e}\nwidth = {:.3e}\niterations = {}\n",
        res.a_lo, res.a_hi, res.a_star, res.width, res.iterations
    );
    Ok(Outcome { record: rec, text, failures: 0 })
}

fn profile_cmd(cfg: &RunConfig) -> Result<Outcome, RunError> {
    let prof = integrate_profile(&cfg.params(), cfg.a.expect("validated"), cfg.r_max, &cfg.step_control())?;
    let res = check_residuals(&prof)?;
    let mut rec = OutputRecord::new(cfg.clone());
    rec.table = Table::new(&["r", "f", "fprime"]);
    for i in 0..prof.path.len() {
        rec.table.push(vec![prof.radii()[i].into(), prof.f(i).into(), prof.fprime(i).into()]);
    }
    rec.diagnostic("max_ode_residual", res.max_ode_residual);
    rec.diagnostic("max_identity_defect", res.max_identity_b1b_defect);
    rec.summary("r_end", prof.r_end);
    rec.summary("crossing_radius", num_or_blank(prof.crossing.map(|c| c.radius)));
    rec.summary("crossing_slope", num_or_blank(prof.crossing.map(|c| c.slope)));
    let text = table_to_csv(&rec.table)?;
    Ok(Outcome { record: rec, text, failures: 0 })
}

fn psi_cmd(cfg: &RunConfig) -> Result<Outcome, RunError> {
    let tr = integrate_psi(&cfg.params(), cfg.a.expect("validated"), cfg.y_end, &cfg.step_control())?;
    let mut rec = OutputRecord::new(cfg.clone());
    rec.table = Table::new(&["y", "psi", "phi"]);
    for i in 0..tr.len() {
        rec.table.push(vec![tr.y(i).into(), tr.psi(i).into(), tr.phi(i).into()]);
    }
    rec.summary("y_a", num_or_blank(tr.y_a));
    rec.summary("phi_peak_y", num_or_blank(tr.phi_peak.map(|p| p.0)));
    rec.summary("phi_peak", num_or_blank(tr.phi_peak.map(|p| p.1)));
    rec.summary("y_reached", tr.y_end());
    if let Ok(t) = tail_estimate(&tr) {
        rec.summary("ell", t.ell);
        rec.summary("phi_end", t.phi_end);
    }
    rec.diagnostic("shape_defect", tr.shape_defect());
    rec.diagnostic("lower_bound_deficit", tr.lower_bound_deficit());
    let text = table_to_csv(&rec.table)?;
    Ok(Outcome { record: rec, text, failures: 0 })
}

fn selfsim_cmd(cfg: &RunConfig) -> Result<Outcome, RunError> {
    let prof = integrate_profile(&cfg.params(), cfg.a.expect("validated"), cfg.r_max, &cfg.step_control())?;
    let xs: Vec<f64> = if cfg.nx == 1 {
        vec![0.0]
    } else {
        (0..cfg.nx)
            .map(|i| -cfg.x_max + 2.0 * cfg.x_max * i as f64 / (cfg.nx - 1) as f64)
            .collect()
    };
    let slice = reconstruct_selfsimilar(&prof, cfg.extinction_time, cfg.t, &xs)?;
    let mut rec = OutputRecord::new(cfg.clone());
    rec.table = Table::new(&["x", "u"]);
    for (x, u) in slice.x_grid.iter().zip(&slice.u_values) {
        rec.table.push(vec![(*x).into(), (*u).into()]);
    }
    rec.summary("extinction_time", slice.extinction_time);
    rec.summary("t", slice.t);
    let text = table_to_csv(&rec.table)?;
    Ok(Outcome { record: rec, text, failures: 0 })
}

fn sweep_row(cfg: &RunConfig, a: f64) -> Result<Vec<Cell>, extprof_core::Error> {
    let params = cfg.params();
    let ctrl = cfg.step_control();
    let label = classify_with(&params, a, cfg.margin, &ctrl)?;
    let (radius, slope, constant, note) = match label.regime {
        Regime::Crossing => {
            let prof = integrate_profile(&params, a, cfg.r_max, &ctrl)?;
            (prof.crossing.map(|c| c.radius), prof.crossing.map(|c| c.slope), None, "")
        }
        // small parameters reach the algebraic regime only near r ~ a^{-(2-p)/(p-1)}
        Regime::Decaying => match fit_decaying(&params, a, &ctrl) {
            Ok(TailFit::Decaying { constant_estimate, .. }) => (None, None, Some(constant_estimate), ""),
            Ok(_) => (None, None, None, ""),
            Err(extprof_core::Error::NotConverged(_)) => (None, None, None, "tail_not_converged"),
            Err(e) => return Err(e),
        },
        Regime::Critical => (None, None, None, ""),
    };
    Ok(vec![
        a.into(),
        label.regime.name().into(),
        num_or_blank(radius),
        num_or_blank(slope),
        num_or_blank(constant),
        note.into(),
    ])
}

fn sweep_cmd(cfg: &RunConfig) -> Result<Outcome, RunError> {
    let params = cfg.params();
    let a_min = cfg.a_min.unwrap_or(params.c_lower() / 10.0);
    let a_max = cfg.a_max.unwrap_or(10.0 * params.crossing_seed());
    if !(a_min > 0.0 && a_max > a_min) {
        return Err(UsageError(format!("need 0 < a_min < a_max, got {a_min}, {a_max}")).into());
    }
    let (l0, l1) = (a_min.ln(), a_max.ln());
    let grid: Vec<f64> = (0..cfg.n)
        .map(|i| (l0 + (l1 - l0) * i as f64 / (cfg.n - 1) as f64).exp())
        .collect();
    let rows: Vec<Result<Vec<Cell>, extprof_core::Error>> =
        thread_pool().install(|| grid.par_iter().map(|&a| sweep_row(cfg, a)).collect());
    let mut rec = OutputRecord::new(cfg.clone());
    rec.table = Table::new(&["a", "regime", "crossing_radius", "crossing_slope", "algebraic_constant", "note"]);
    for r in rows {
        rec.table.push(r?);
    }
    rec.summary("slow_constant", params.slow_const());
    let text = table_to_csv(&rec.table)?;
    Ok(Outcome { record: rec, text, failures: 0 })
}

fn validate_cmd(cfg: &RunConfig) -> Result<Outcome, RunError> {
    let cases = default_cases();
    let rows: Vec<_> = thread_pool().install(|| cases.par_iter().map(|c| run_case(*c)).collect());
    let report = ValidationReport { rows: rows.into_iter().flatten().collect() };
    let mut rec = OutputRecord::new(cfg.clone());
    rec.table = Table::new(&["p", "a", "check", "value", "limit", "result"]);
    for r in &report.rows {
        rec.table.push(vec![
            r.p.into(),
            num_or_blank(r.a),
            r.check.into(),
            num_or_blank(Some(r.value)),
            num_or_blank(Some(r.limit)),
            (if r.passed { "PASS" } else { "FAIL" }).into(),
        ]);
    }
    let failures = report.failures().count();
    rec.summary("checks", report.rows.len() as f64);
    rec.summary("failures", failures as f64);
    let mut text = render_table(&report);
    text.push_str(&format!("{} checks, {} failed\n", report.rows.len(), failures));
    Ok(Outcome { record: rec, text, failures })
}

/// Write an outcome according to the configured format and path. Returns
/// what should go to stdout.
pub fn deliver(cfg: &RunConfig, out: &Outcome) -> Result<String, RunError> {
    let format = cfg.format.or_else(|| {
        cfg.output.as_ref().map(|p| {
            if p.extension().is_some_and(|e| e == "json") {
                Format::Json
            } else {
                Format::Csv
            }
        })
    });
    match (format, cfg.output.as_deref()) {
        (None, _) => Ok(out.text.clone()),
        (Some(Format::Json), None) => Ok(record_to_json(&out.record)?),
        (Some(Format::Csv), None) => {
            out.record.check_finite()?;
            Ok(table_to_csv(&out.record.table)?)
        }
        (Some(Format::Json), Some(p)) => {
            emit_json(&out.record, p)?;
            Ok(written(p))
        }
        (Some(Format::Csv), Some(p)) => {
            emit_csv(&out.record, p)?;
            Ok(written(p))
        }
    }
}

fn written(p: &Path) -> String {
    format!("wrote {}\n", p.display())
}

/// Run a command end to end; the returned code is the process exit status.
pub fn main_with(cfg: &RunConfig) -> (String, Result<(), RunError>) {
    let out = match run(cfg) {
        Ok(o) => o,
        Err(e) => return (String::new(), Err(e)),
    };
    match deliver(cfg, &out) {
        Ok(s) if out.failures > 0 => (s, Err(RunError::ValidationFailed(out.failures))),
        Ok(s) => (s, Ok(())),
        Err(e) => (String::new(), Err(e)),
    }
}
