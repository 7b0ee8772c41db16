//! One test per acceptance criterion. Each prints a PASS/FAIL line.

use std::time::Instant;

use clap::Parser;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use extprof_core::asymptotics::{fit_decaying, fit_tail, weighted_limit, TailFit, PLATEAU_WINDOW};
use extprof_core::classify::{
    classify, classify_with, default_control, find_threshold, ClassLabel, Evidence, Regime, DEFAULT_MARGIN,
};
use extprof_core::ode::StepControl;
use extprof_core::profile::{integrate_profile, DEFAULT_R_MAX};
use extprof_core::psi::{compare_on_grid, integrate_psi, transform_check, DEFAULT_Y_END};
use extprof_core::Params;
use extprof_cli::{main_with, Cli, RunConfig};

fn verdict(n: u32, name: &str, pass: bool, detail: &str) -> bool {
    println!("criterion {n} [{name}]: {} {detail}", if pass { "PASS" } else { "FAIL" });
    pass
}

fn tol10() -> StepControl {
    StepControl::relative(1e-10)
}

#[test]
fn criterion_1_transform_identity() {
    let mut worst = 0.0f64;
    for p in [1.2, 1.5, 1.8] {
        let pr = Params::new(p).unwrap();
        for a in [0.05, 0.5, 2.0] {
            let prof = integrate_profile(&pr, a, DEFAULT_R_MAX, &tol10()).unwrap();
            let psi = integrate_psi(&pr, a, DEFAULT_Y_END, &tol10()).unwrap();
            worst = worst.max(transform_check(&prof, &psi).unwrap());
        }
    }
    assert!(verdict(1, "transform identity", worst < 1e-6, &format!("max defect {worst:.3e} (limit 1e-6)")));
}

#[test]
fn criterion_2_monotonicity_in_a() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut worst = f64::NEG_INFINITY;
    let mut min_gap = f64::INFINITY;
    for p in [1.2, 1.5, 1.8] {
        let pr = Params::new(p).unwrap();
        for _ in 0..10 {
            let (l0, l1) = (0.01f64.ln(), 5.0f64.ln());
            let x: f64 = rng.gen_range(l0..l1);
            let y: f64 = rng.gen_range(l0..l1);
            let (a1, a2) = (x.min(y).exp(), x.max(y).exp());
            let lo = integrate_psi(&pr, a1, DEFAULT_Y_END, &tol10()).unwrap();
            let hi = integrate_psi(&pr, a2, DEFAULT_Y_END, &tol10()).unwrap();
            let rep = compare_on_grid(&lo, &hi).unwrap();
            worst = worst.max(rep.max_lhs_minus_rhs);
            min_gap = min_gap.min(rep.gap_at_half.unwrap_or(f64::NEG_INFINITY));
        }
    }
    let pass = worst <= 1e-8 && min_gap > 0.0;
    assert!(verdict(
        2,
        "monotonicity",
        pass,
        &format!("max psi(a1)-psi(a2) {worst:.3e} (limit 1e-8), min gap at y=1/2 {min_gap:.3e}")
    ));
}

#[test]
fn criterion_3_explicit_decaying_interval() {
    let c15 = Params::new(1.5).unwrap().c_lower();
    let mut pass = (c15 - 0.148148148148148).abs() < 1e-12;
    for p in [1.2, 1.5, 1.8] {
        let pr = Params::new(p).unwrap();
        let c = pr.c_lower();
        for a in [c, c / 2.0, c / 10.0, c / 100.0, c / 1000.0] {
            pass &= classify(&pr, a, DEFAULT_MARGIN).unwrap().regime == Regime::Decaying;
        }
    }
    assert!(verdict(3, "explicit decaying interval", pass, &format!("c_lower(1.5) = {c15:.15}")));
}

#[test]
fn criterion_4_explicit_crossing() {
    let pr = Params::new(1.5).unwrap();
    let lab = classify(&pr, 11.0, DEFAULT_MARGIN).unwrap();
    let prof = integrate_profile(&pr, 11.0, DEFAULT_R_MAX, &tol10()).unwrap();
    let c = prof.crossing;
    let pass = lab.regime == Regime::Crossing && c.is_some_and(|c| c.radius.is_finite() && c.slope < 0.0);
    assert!(verdict(4, "explicit crossing", pass, &format!("label {}, zero {c:?}", lab.regime)));
}

#[test]
fn criterion_5_threshold_certification() {
    let tight = StepControl::relative(1e-12).with_max_steps(800_000);
    let mut pass = true;
    let mut detail = String::new();
    for p in [1.2, 1.5, 1.8] {
        let pr = Params::new(p).unwrap();
        let start = Instant::now();
        let res = find_threshold(&pr, None, &default_control()).unwrap();
        let secs = start.elapsed().as_secs_f64();
        let lo = classify_with(&pr, res.a_lo, 1e-8, &tight).unwrap().regime;
        let hi = classify_with(&pr, res.a_hi, 1e-8, &tight).unwrap().regime;
        let ok = res.width <= 1e-9 * res.a_hi && lo == Regime::Decaying && hi == Regime::Crossing && secs < 60.0;
        pass &= ok;
        detail.push_str(&format!(
            "\n  p={p}: a*={:.12} width={:.2e} edges {lo}/{hi} {secs:.2}s",
            res.a_star, res.width
        ));
    }
    assert!(verdict(5, "threshold certification", pass, &detail));
}

#[test]
fn criterion_6_algebraic_decay_constant() {
    // stated weight (2-p)/(p-1) and stated constant ((p-1)/(2-p))^{(2-p)/(p-1)}
    let stated = |p: f64| ((p - 1.0) / (2.0 - p)).powf((2.0 - p) / (p - 1.0));
    let mut pass = true;
    let mut detail = String::new();
    for p in [1.5, 4.0 / 3.0] {
        let pr = Params::new(p).unwrap();
        let star = find_threshold(&pr, None, &default_control()).unwrap().a_star;
        let w = (2.0 - p) / (p - 1.0);
        let target = stated(p);
        let mut est = Vec::new();
        for a in [star / 8.0, star / 4.0] {
            let prof = integrate_profile(&pr, a, 1e5, &tol10().with_max_steps(1_000_000)).unwrap();
            let lim = weighted_limit(&prof, w).unwrap();
            let gap = ((lim.estimate - target) / target).abs();
            pass &= gap < 0.02;
            est.push(lim.estimate);
            detail.push_str(&format!(
                "\n  p={p:.4} a={a:.6}: r^{w:.3} f -> {:.6e} vs {target:.6} (gap {gap:.2e}, drift {:.2e})",
                lim.estimate, lim.drift
            ));
        }
        let agree = ((est[0] - est[1]) / est[1]).abs();
        pass &= agree < 0.02;
        detail.push_str(&format!("\n  p={p:.4}: a-independence {agree:.2e}"));
        if let TailFit::Decaying { exponent, constant_estimate, expected_constant, relative_gap, .. } =
            fit_decaying(&pr, star / 4.0, &tol10()).unwrap()
        {
            detail.push_str(&format!(
                "\n  info p={p:.4}: weight {exponent:.4} gives {constant_estimate:.6} vs {expected_constant:.6} (gap {relative_gap:.2e})"
            ));
        }
    }
    assert!(verdict(6, "algebraic decay constant", pass, &detail));
}

#[test]
fn criterion_7_critical_plateau() {
    let pr = Params::new(1.5).unwrap();
    let res = find_threshold(&pr, None, &default_control()).unwrap();
    let prof = integrate_profile(&pr, res.a_star, 40.0, &StepControl::relative(1e-12)).unwrap();
    let label = ClassLabel {
        regime: Regime::Critical,
        evidence: Evidence::Undecided { y_end: 1.0, phi_end: pr.kappa(), peak: None },
        margin: 0.0,
    };
    let fit = fit_tail(&prof, &label).unwrap();
    let TailFit::Critical { ell_star, integral, plateau, .. } = fit else { panic!("{fit:?}") };
    let agree = ((ell_star - plateau.value) / plateau.value).abs();
    let pass = plateau.r_to - plateau.r_from >= PLATEAU_WINDOW - 1e-9 && plateau.variation < 0.1 && agree < 0.05;
    assert!(verdict(
        7,
        "critical plateau",
        pass,
        &format!(
            "window [{:.2}, {:.2}] variation {:.2e}, plateau {:.6}, (p-1)I^(1/(p-1)) {ell_star:.6} with I {integral:.6}, gap {agree:.2e}",
            plateau.r_from, plateau.r_to, plateau.variation, plateau.value
        )
    ));
}

#[test]
fn criterion_8_structural_invariants() {
    let cfg = RunConfig::from_cli(Cli::parse_from(["extprof", "validate"])).unwrap();
    let (text, res) = main_with(&cfg);
    let code = res.map_or_else(|e| e.exit_code(), |()| 0);
    let checks = ["profile_bounds", "identity_defect", "psi_single_peak", "phi_envelope", "psi_lower_bound", "barrier"];
    let present = checks.iter().all(|c| text.contains(c));
    let pass = code == 0 && present && !text.contains("FAIL");
    let last = text.lines().last().unwrap_or("");
    assert!(verdict(8, "structural invariants", pass, &format!("exit {code}, {last}")));
}
