//! Tail constants of the three regimes and the self-similar solution.
//!
//! Decaying profiles satisfy `f^{-(q-1)} = (q-1) r + q ln r + C + o(1)` with
//! `q = 1/(p-1)`, so `Q(r) = r^e f(r)` with `e = (p-1)/(2-p)` tends to
//! `((p-1)/(2-p))^e` like `c0 + c1 ln r / r + c2 / r`. The limit is fitted on
//! that basis.

use crate::classify::{ClassLabel, Regime};
use crate::ode::StepControl;
use crate::profile::{integrate_profile, ProfileTrajectory};
use crate::quad;
use crate::{Error, Params, Result};

/// Relative drift allowed between fits one decade of `r` apart.
pub const DRIFT_TOL: f64 = 1e-3;

/// Length of the plateau window for the critical profile.
pub const PLATEAU_WINDOW: f64 = 5.0;

/// Sampling step of the plateau search.
pub const PLATEAU_STEP: f64 = 0.05;

const R_FIT_START: f64 = 1e4;
const R_FIT_CAP: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plateau {
    pub r_from: f64,
    pub r_to: f64,
    /// Mean of `e^{r/(p-1)} f` over the window.
    pub value: f64,
    /// `(max - min) / mean` over the window.
    pub variation: f64,
    /// First radius past the window where the weighted profile leaves the plateau by 10%.
    pub crossover: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TailFit {
    Crossing {
        radius: f64,
        slope: f64,
    },
    Critical {
        rate: f64,
        ell_star: f64,
        integral: f64,
        plateau: Plateau,
    },
    Decaying {
        exponent: f64,
        constant_estimate: f64,
        expected_constant: f64,
        relative_gap: f64,
        drift: f64,
        r_end: f64,
    },
}

impl TailFit {
    pub fn regime(&self) -> Regime {
        match self {
            TailFit::Crossing { .. } => Regime::Crossing,
            TailFit::Critical { .. } => Regime::Critical,
            TailFit::Decaying { .. } => Regime::Decaying,
        }
    }
}

/// Extrapolated limit of `r^w f(r)` and its drift over the last decade.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedLimit {
    pub weight: f64,
    pub estimate: f64,
    pub drift: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelfSimilarSlice {
    pub extinction_time: f64,
    pub t: f64,
    pub x_grid: Vec<f64>,
    pub u_values: Vec<f64>,
}

fn solve3(m: [[f64; 3]; 3], b: [f64; 3]) -> [f64; 3] {
    let det = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(&m);
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let mut mc = m;
        for r in 0..3 {
            mc[r][c] = b[r];
        }
        *o = det(&mc) / d;
    }
    out
}

fn fit_at(profile: &ProfileTrajectory, weight: f64, r_top: f64) -> Result<f64> {
    let mut m = [[0.0; 3]; 3];
    let mut b = [0.0; 3];
    for (k, r) in [r_top / 4.0, r_top / 2.0, r_top].into_iter().enumerate() {
        m[k] = [1.0, r.ln() / r, 1.0 / r];
        b[k] = r.powf(weight) * profile.f_at(r)?;
    }
    Ok(solve3(m, b)[0])
}

/// Limit of `r^weight f(r)` fitted at the end of the trajectory, with the
/// relative change against the same fit one decade earlier.
pub fn weighted_limit(profile: &ProfileTrajectory, weight: f64) -> Result<WeightedLimit> {
    if profile.crossing.is_some() {
        return Err(Error::WrongLabel("weighted limit of a crossing profile".into()));
    }
    let r_top = profile.r_end;
    if r_top / 40.0 <= profile.r_start() {
        return Err(Error::NotConverged(format!("r_end = {r_top} too short for a tail fit")));
    }
    let late = fit_at(profile, weight, r_top)?;
    let early = fit_at(profile, weight, r_top / 10.0)?;
    Ok(WeightedLimit {
        weight,
        estimate: late,
        drift: ((late - early) / late).abs(),
    })
}

/// Regime-specific tail constants of `profile`.
pub fn fit_tail(profile: &ProfileTrajectory, label: &ClassLabel) -> Result<TailFit> {
    match label.regime {
        Regime::Crossing => match profile.crossing {
            Some(c) => Ok(TailFit::Crossing { radius: c.radius, slope: c.slope }),
            None => Err(Error::WrongLabel("crossing label but no zero on the trajectory".into())),
        },
        Regime::Decaying => {
            let params = profile.params;
            let w = weighted_limit(profile, params.exp_slow())?;
            if !(w.drift < DRIFT_TOL) {
                return Err(Error::NotConverged(format!(
                    "r^e f still drifting by {:.3e} at r = {}",
                    w.drift, profile.r_end
                )));
            }
            let target = params.slow_const();
            Ok(TailFit::Decaying {
                exponent: params.exp_slow(),
                constant_estimate: w.estimate,
                expected_constant: target,
                relative_gap: ((w.estimate - target) / target).abs(),
                drift: w.drift,
                r_end: profile.r_end,
            })
        }
        Regime::Critical => {
            let plateau = find_plateau(profile)?;
            let integral = weighted_integral(profile, plateau.r_to, plateau.value)?;
            let p = profile.params.p();
            Ok(TailFit::Critical {
                rate: profile.params.exp_fast(),
                ell_star: (p - 1.0) * integral.powf(1.0 / (p - 1.0)),
                integral,
                plateau,
            })
        }
    }
}

/// Integrate a decaying profile far enough for [`fit_tail`], growing the
/// range tenfold until the fit settles.
pub fn fit_decaying(params: &Params, a: f64, ctrl: &StepControl) -> Result<TailFit> {
    let mut r_max = R_FIT_START;
    let label = ClassLabel {
        regime: Regime::Decaying,
        evidence: crate::classify::Evidence::Undecided { y_end: 0.0, phi_end: 0.0, peak: None },
        margin: 0.0,
    };
    loop {
        let c = ctrl.with_max_steps(ctrl.max_steps.max((4.0 * r_max) as usize + 100_000));
        let prof = integrate_profile(params, a, r_max, &c)?;
        match fit_tail(&prof, &label) {
            Err(Error::NotConverged(_)) if r_max < R_FIT_CAP => r_max *= 10.0,
            other => return other,
        }
    }
}

/// Window of length [`PLATEAU_WINDOW`] on which `e^{r/(p-1)} f` varies least.
pub fn find_plateau(profile: &ProfileTrajectory) -> Result<Plateau> {
    let rate = profile.params.exp_fast();
    let r_last = profile.crossing.map(|c| c.radius).unwrap_or(profile.r_end);
    let n = ((r_last / PLATEAU_STEP).floor() as usize).saturating_sub(1);
    let w = (PLATEAU_WINDOW / PLATEAU_STEP).round() as usize;
    if n < w + 1 {
        return Err(Error::TooFewNodes { nodes: n, needed: w + 1 });
    }
    let vals: Vec<f64> = (0..=n)
        .map(|i| {
            let r = i as f64 * PLATEAU_STEP;
            profile.f_at(r).map(|f| (rate * r).exp() * f)
        })
        .collect::<Result<_>>()?;
    let mut best: Option<(usize, f64, f64)> = None;
    for start in 0..=(n - w) {
        let win = &vals[start..=start + w];
        if win.iter().any(|v| *v <= 0.0) {
            continue;
        }
        let (lo, hi) = win.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(*v), h.max(*v)));
        let mean = win.iter().sum::<f64>() / win.len() as f64;
        let var = (hi - lo) / mean;
        if best.is_none_or(|(_, bv, _)| var < bv) {
            best = Some((start, var, mean));
        }
    }
    let (start, variation, value) =
        best.ok_or_else(|| Error::NotConverged("no positive plateau window".into()))?;
    let crossover = vals[start + w..]
        .iter()
        .position(|v| ((v - value) / value).abs() > 0.1)
        .map(|k| (start + w + k) as f64 * PLATEAU_STEP);
    Ok(Plateau {
        r_from: start as f64 * PLATEAU_STEP,
        r_to: (start + w) as f64 * PLATEAU_STEP,
        value,
        variation,
        crossover,
    })
}

/// `I = int_0^inf e^r f dr`: quadrature up to `r_cut`, then the exponential
/// tail `ell e^{-(q-1) r_cut} / (q-1)` with `q = 1/(p-1)`.
pub fn weighted_integral(profile: &ProfileTrajectory, r_cut: f64, ell: f64) -> Result<f64> {
    if r_cut > profile.r_end {
        return Err(Error::OutOfSpan { x: r_cut, start: 0.0, end: profile.r_end });
    }
    let r0 = profile.r_start();
    let mut total = quad::integrate(
        |r| r.exp() * profile.f_at(r).unwrap_or(f64::NAN),
        0.0,
        r0,
        1e-300,
        1e-13,
    );
    let radii = profile.radii();
    for win in radii.windows(2) {
        let (lo, hi) = (win[0], win[1].min(r_cut));
        if lo >= r_cut {
            break;
        }
        total += quad::integrate(
            |r| r.exp() * profile.path.dense_eval(r).map(|s| s[0]).unwrap_or(f64::NAN),
            lo,
            hi,
            1e-300,
            1e-13,
        );
    }
    let decay = profile.params.exp_fast() - 1.0;
    total += ell * (-decay * r_cut).exp() / decay;
    if !total.is_finite() {
        return Err(Error::NotConverged("weighted integral is not finite".into()));
    }
    Ok(total)
}

/// `u(t, x) = ((2-p)(T-t))^{1/(2-p)} f(|x|)`, zero past the first zero of `f`.
pub fn reconstruct_selfsimilar(
    profile: &ProfileTrajectory,
    extinction_time: f64,
    t: f64,
    x_grid: &[f64],
) -> Result<SelfSimilarSlice> {
    if !(extinction_time > 0.0) || !extinction_time.is_finite() {
        return Err(Error::InvalidParameter(format!("T = {extinction_time} must be positive")));
    }
    if !(0.0..=extinction_time).contains(&t) {
        return Err(Error::InvalidParameter(format!("t = {t} not in [0, {extinction_time}]")));
    }
    let p = profile.params.p();
    let factor = ((2.0 - p) * (extinction_time - t)).powf(1.0 / (2.0 - p));
    let zero = profile.crossing.map(|c| c.radius);
    let u_values = x_grid
        .iter()
        .map(|&x| {
            let r = x.abs();
            match zero {
                Some(rz) if r >= rz => Ok(0.0),
                _ if r > profile.r_end => Err(Error::OutOfSpan { x, start: -profile.r_end, end: profile.r_end }),
                _ => Ok(factor * profile.f_at(r)?.max(0.0)),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SelfSimilarSlice {
        extinction_time,
        t,
        x_grid: x_grid.to_vec(),
        u_values,
    })
}
