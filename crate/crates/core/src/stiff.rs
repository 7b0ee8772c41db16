//! Three-stage Radau IIA stepper (order 5, L-stable) for stiff segments.

use crate::ode::{all_finite, drive, interpolate, interpolate_derivative, scaled_norm, Attempt, EventSpec, OdeError, StepControl, Stepper, Trajectory, NCOEF};

const S6: f64 = 2.449_489_742_783_178;
const C: [f64; 3] = [(4.0 - S6) / 10.0, (4.0 + S6) / 10.0, 1.0];
const A: [[f64; 3]; 3] = [
    [(88.0 - 7.0 * S6) / 360.0, (296.0 - 169.0 * S6) / 1800.0, (-2.0 + 3.0 * S6) / 225.0],
    [(296.0 + 169.0 * S6) / 1800.0, (88.0 + 7.0 * S6) / 360.0, (-2.0 - 3.0 * S6) / 225.0],
    [(16.0 - S6) / 36.0, (16.0 + S6) / 36.0, 1.0 / 9.0],
];
const NEWTON_ITERS: usize = 12;
const NEWTON_TOL: f64 = 1e-3;
/// Dense output is held to this multiple of the step tolerance.
const DENSE_FACTOR: f64 = 100.0;

/// Integrate a stiff system with an implicit method.
///
/// `jac(t, y, out)` writes the row-major Jacobian `d rhs_i / d y_j`. The
/// step error is estimated by step doubling. Events, dense output and
/// failure modes behave as in [`crate::ode::integrate_adaptive`].
pub fn integrate_stiff<F, J>(
    rhs: F,
    jac: J,
    t0: f64,
    state0: &[f64],
    t_end: f64,
    ctrl: &StepControl,
    events: &[EventSpec<'_>],
) -> Result<Trajectory, OdeError>
where
    F: Fn(f64, &[f64], &mut [f64]),
    J: Fn(f64, &[f64], &mut [f64]),
{
    let mut st = Radau::new(rhs, jac, state0.len());
    drive(&mut st, t0, state0, t_end, ctrl, events)
}

struct Radau<F, J> {
    rhs: F,
    jac: J,
    n: usize,
    jmat: Vec<f64>,
    mat: Vec<f64>,
    z: Vec<f64>,
    z_first: Vec<f64>,
    rhs_buf: Vec<f64>,
    tmp: Vec<f64>,
    ftmp: Vec<f64>,
    y_full: Vec<f64>,
    y_mid: Vec<f64>,
    k_mid: Vec<f64>,
    y_new: Vec<f64>,
    k_new: Vec<f64>,
    err: Vec<f64>,
    coef: Vec<f64>,
}

impl<F, J> Radau<F, J>
where
    F: Fn(f64, &[f64], &mut [f64]),
    J: Fn(f64, &[f64], &mut [f64]),
{
    fn new(rhs: F, jac: J, n: usize) -> Self {
        let v = |m: usize| vec![0.0; m];
        Radau {
            rhs,
            jac,
            n,
            jmat: v(n * n),
            mat: v(9 * n * n),
            z: v(3 * n),
            z_first: v(3 * n),
            rhs_buf: v(3 * n),
            tmp: v(n),
            ftmp: v(n),
            y_full: v(n),
            y_mid: v(n),
            k_mid: v(n),
            y_new: v(n),
            k_new: v(n),
            err: v(n),
            coef: v(NCOEF * n),
        }
    }

    /// Coefficients of component `i` from values at `0`, `th[..]` and `1`.
    /// With `p = y0 + th (y1 - y0) + th (1 - th) q(th)`, `q` is the quadratic
    /// through the three interior points.
    fn set_coef_from_values(&mut self, i: usize, y0: f64, y1: f64, th: [f64; 3], vals: [f64; 3]) {
        let n = self.n;
        let q: [f64; 3] = std::array::from_fn(|j| (vals[j] - y0 - th[j] * (y1 - y0)) / (th[j] * (1.0 - th[j])));
        // monomial form q = c0 + c1 th + c2 th^2 by divided differences
        let d01 = (q[1] - q[0]) / (th[1] - th[0]);
        let d12 = (q[2] - q[1]) / (th[2] - th[1]);
        let c2 = (d12 - d01) / (th[2] - th[0]);
        let c1 = d01 - c2 * (th[0] + th[1]);
        let c0 = q[0] - th[0] * (c1 + c2 * th[0]);
        self.coef[i] = y0;
        self.coef[n + i] = y1 - y0;
        self.coef[2 * n + i] = c0;
        self.coef[3 * n + i] = c1 + c2;
        self.coef[4 * n + i] = -c2;
    }

    /// `h` times the largest Jacobian entry from the last evaluation.
    fn stiffness(&self, h: f64) -> f64 {
        h * self.jmat.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    /// One Radau step from (t, y) with slope k0; result in `out`.
    /// Simplified Newton with the Jacobian frozen at the step start.
    fn step(&mut self, t: f64, y: &[f64], k0: &[f64], h: f64, ctrl: &StepControl, out: &mut [f64]) -> Attempt {
        let n = self.n;
        let m = 3 * n;
        (self.jac)(t, y, &mut self.jmat);
        if !all_finite(&self.jmat) {
            return Attempt::NonFinite;
        }
        for i in 0..3 {
            for j in 0..3 {
                for r in 0..n {
                    for c in 0..n {
                        let id = if i == j && r == c { 1.0 } else { 0.0 };
                        self.mat[(i * n + r) * m + j * n + c] = id - h * A[i][j] * self.jmat[r * n + c];
                    }
                }
            }
        }
        let Some(piv) = lu_factor(&mut self.mat, m) else {
            return Attempt::Failed;
        };
        // On a stiff slow manifold f is a difference of nearly equal terms and
        // h f is rounding noise larger than y, so start from Z = 0 there.
        let explicit_guess = self.stiffness(h) <= 1.0;
        for i in 0..3 {
            for r in 0..n {
                self.z[i * n + r] = if explicit_guess { C[i] * h * k0[r] } else { 0.0 };
            }
        }
        let mut prev = f64::INFINITY;
        for _ in 0..NEWTON_ITERS {
            // residual G_i = -Z_i + h sum_j A_ij f(t + c_j h, y + Z_j)
            for i in 0..3 {
                for r in 0..n {
                    self.rhs_buf[i * n + r] = -self.z[i * n + r];
                }
            }
            for j in 0..3 {
                for r in 0..n {
                    self.tmp[r] = y[r] + self.z[j * n + r];
                }
                (self.rhs)(t + C[j] * h, &self.tmp, &mut self.ftmp);
                if !all_finite(&self.ftmp) {
                    return Attempt::Failed;
                }
                for i in 0..3 {
                    for r in 0..n {
                        self.rhs_buf[i * n + r] += h * A[i][j] * self.ftmp[r];
                    }
                }
            }
            lu_solve(&self.mat, &piv, m, &mut self.rhs_buf);
            let mut norm = 0.0f64;
            for i in 0..m {
                self.z[i] += self.rhs_buf[i];
                let r = i % n;
                let scale = ctrl.abs_tol + ctrl.rel_tol * y[r].abs().max(self.z[i].abs());
                norm = norm.max(self.rhs_buf[i].abs() / scale);
            }
            if !norm.is_finite() || norm > 2.0 * prev && prev > NEWTON_TOL {
                return Attempt::Failed;
            }
            if norm <= NEWTON_TOL {
                for r in 0..n {
                    out[r] = y[r] + self.z[2 * n + r];
                }
                return if all_finite(out) { Attempt::Done(0.0) } else { Attempt::Failed };
            }
            prev = norm;
        }
        Attempt::Failed
    }
}

impl<F, J> Stepper for Radau<F, J>
where
    F: Fn(f64, &[f64], &mut [f64]),
    J: Fn(f64, &[f64], &mut [f64]),
{
    fn order(&self) -> f64 {
        6.0
    }

    fn eval(&self, t: f64, y: &[f64], out: &mut [f64]) {
        (self.rhs)(t, y, out)
    }

    fn attempt(&mut self, t: f64, y: &[f64], k0: &[f64], h: f64, ctrl: &StepControl) -> Attempt {
        let n = self.n;
        let mut full = std::mem::take(&mut self.y_full);
        let mut mid = std::mem::take(&mut self.y_mid);
        let mut end = std::mem::take(&mut self.y_new);
        let mut k_mid = std::mem::take(&mut self.k_mid);
        let res = (|| {
            let r = self.step(t, y, k0, h, ctrl, &mut full);
            if !matches!(r, Attempt::Done(_)) {
                return r;
            }
            // slopes are rounding noise once h |J| eps reaches the tolerance
            let noisy = self.stiffness(h) * f64::EPSILON > DENSE_FACTOR * ctrl.rel_tol.max(f64::EPSILON);
            let r = self.step(t, y, k0, 0.5 * h, ctrl, &mut mid);
            if !matches!(r, Attempt::Done(_)) {
                return r;
            }
            self.z_first.copy_from_slice(&self.z);
            (self.rhs)(t + 0.5 * h, &mid, &mut k_mid);
            if !all_finite(&k_mid) {
                return Attempt::Failed;
            }
            let r = self.step(t + 0.5 * h, &mid, &k_mid, 0.5 * h, ctrl, &mut end);
            if !matches!(r, Attempt::Done(_)) {
                return r;
            }
            for i in 0..n {
                self.err[i] = (end[i] - full[i]) / 31.0;
            }
            let mut err = scaled_norm(&self.err, y, &end, ctrl);
            if err > 1.0 {
                return Attempt::Done(err);
            }
            (self.rhs)(t + h, &end, &mut self.k_new);
            if !all_finite(&self.k_new) {
                return Attempt::Failed;
            }
            if noisy {
                // quartic through y0, two stage values, y(h/2), y1
                let th = [0.5 * C[0], 0.5, 0.5 + 0.5 * C[1]];
                for i in 0..n {
                    let vals = [y[i] + self.z_first[i], mid[i], mid[i] + self.z[n + i]];
                    self.set_coef_from_values(i, y[i], end[i], th, vals);
                }
                // check against the unused stage value at c_2 h / 2
                interpolate(&self.coef, n, 0.5 * C[1], &mut self.err);
                for i in 0..n {
                    self.err[i] -= y[i] + self.z_first[n + i];
                }
            } else {
                // quartic through y0, k0, y(h/2), y1, k1
                for i in 0..n {
                    let r1 = end[i] - y[i];
                    let r2 = h * k0[i] - r1;
                    let r3 = r1 - r2 - h * self.k_new[i];
                    self.coef[i] = y[i];
                    self.coef[n + i] = r1;
                    self.coef[2 * n + i] = r2;
                    self.coef[3 * n + i] = r3;
                    self.coef[4 * n + i] = 16.0 * (mid[i] - y[i] - 0.5 * r1 - 0.25 * r2 - 0.125 * r3);
                }
                // the interpolation error is C th^2 (th - 1/2) (th - 1)^2, whose
                // maximum is about h/8 times the slope defect at th = 1/2
                interpolate_derivative(&self.coef, n, 0.5, h, &mut self.err);
                for i in 0..n {
                    self.err[i] = 0.125 * h * (self.err[i] - k_mid[i]);
                }
            }
            err = err.max(scaled_norm(&self.err, y, &end, ctrl) / DENSE_FACTOR);
            Attempt::Done(err)
        })();
        self.y_full = full;
        self.y_mid = mid;
        self.y_new = end;
        self.k_mid = k_mid;
        res
    }

    fn y_new(&self) -> &[f64] {
        &self.y_new
    }

    fn k_new(&self) -> &[f64] {
        &self.k_new
    }

    fn coef(&self) -> &[f64] {
        &self.coef
    }
}

/// In-place LU with partial pivoting; `None` when singular.
fn lu_factor(a: &mut [f64], m: usize) -> Option<Vec<usize>> {
    let mut piv: Vec<usize> = (0..m).collect();
    for k in 0..m {
        let p = (k..m).max_by(|&i, &j| a[i * m + k].abs().total_cmp(&a[j * m + k].abs()))?;
        if a[p * m + k] == 0.0 || !a[p * m + k].is_finite() {
            return None;
        }
        if p != k {
            for c in 0..m {
                a.swap(k * m + c, p * m + c);
            }
            piv.swap(k, p);
        }
        for i in k + 1..m {
            let l = a[i * m + k] / a[k * m + k];
            a[i * m + k] = l;
            for c in k + 1..m {
                a[i * m + c] -= l * a[k * m + c];
            }
        }
    }
    Some(piv)
}

fn lu_solve(lu: &[f64], piv: &[usize], m: usize, b: &mut [f64]) {
    let x: Vec<f64> = piv.iter().map(|&i| b[i]).collect();
    b.copy_from_slice(&x);
    for i in 0..m {
        for c in 0..i {
            b[i] -= lu[i * m + c] * b[c];
        }
    }
    for i in (0..m).rev() {
        for c in i + 1..m {
            b[i] -= lu[i * m + c] * b[c];
        }
        b[i] /= lu[i * m + i];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ode::{Direction, TerminalReason};

    #[test]
    fn tableau_order_conditions() {
        for i in 0..3 {
            let row: f64 = A[i].iter().sum();
            assert!((row - C[i]).abs() < 1e-15);
        }
        // B = last row; sum b c^{k-1} = 1/k for k <= 5
        for k in 1..=5i32 {
            let s: f64 = (0..3).map(|j| A[2][j] * C[j].powi(k - 1)).sum();
            assert!((s - 1.0 / k as f64).abs() < 1e-14, "k={k}");
        }
        // stage order 3: sum_j a_ij c_j^{k-1} = c_i^k / k
        for i in 0..3 {
            for k in 1..=3i32 {
                let s: f64 = (0..3).map(|j| A[i][j] * C[j].powi(k - 1)).sum();
                assert!((s - C[i].powi(k) / k as f64).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn lu_solves_small_system() {
        let mut a = vec![0.0, 2.0, 1.0, 1.0, 1.0, 0.0, 3.0, 0.0, 1.0];
        let piv = lu_factor(&mut a, 3).unwrap();
        // x = (1, 2, 3)
        let mut b = vec![7.0, 3.0, 6.0];
        lu_solve(&a, &piv, 3, &mut b);
        for (x, e) in b.iter().zip([1.0, 2.0, 3.0]) {
            assert!((x - e).abs() < 1e-14);
        }
        assert!(lu_factor(&mut [1.0, 2.0, 2.0, 4.0], 2).is_none());
    }

    #[test]
    fn stiff_linear_decay_to_slow_manifold() {
        // y' = -L (y - cos t) - sin t, exact y = cos t + (y0 - 1) e^{-L t}
        let l = 1e8;
        let rhs = move |t: f64, y: &[f64], o: &mut [f64]| o[0] = -l * (y[0] - t.cos()) - t.sin();
        let jac = move |_t: f64, _y: &[f64], o: &mut [f64]| o[0] = -l;
        let ctrl = StepControl::relative(1e-10);
        let tr = integrate_stiff(rhs, jac, 0.0, &[2.0], 3.0, &ctrl, &[]).unwrap();
        assert_eq!(tr.terminal_reason(), TerminalReason::ReachedEnd);
        assert!(tr.len() < 2000, "{} steps", tr.len());
        let y = tr.dense_eval(3.0).unwrap()[0];
        assert!((y - 3.0f64.cos()).abs() < 1e-9, "{y}");
        // dense output is held to a looser tolerance than the nodes
        let mut worst = 0.0f64;
        for i in 1..=300 {
            let t = 0.01 * i as f64;
            let y = tr.dense_eval(t).unwrap()[0];
            worst = worst.max((y - t.cos()).abs());
        }
        assert!(worst < 1e-7, "{worst:e}");
    }

    #[test]
    fn nonstiff_accuracy_and_dense_output() {
        // rotation, exact (cos t, -sin t)
        let rhs = |_t: f64, y: &[f64], o: &mut [f64]| {
            o[0] = y[1];
            o[1] = -y[0];
        };
        let jac = |_t: f64, _y: &[f64], o: &mut [f64]| o.copy_from_slice(&[0.0, 1.0, -1.0, 0.0]);
        let ctrl = StepControl { abs_tol: 1e-12, rel_tol: 1e-10, ..StepControl::default() };
        let tr = integrate_stiff(rhs, jac, 0.0, &[1.0, 0.0], 6.0, &ctrl, &[]).unwrap();
        let mut worst = 0.0f64;
        for i in 0..=600 {
            let t = i as f64 * 0.01;
            let s = tr.dense_eval(t).unwrap();
            worst = worst.max((s[0] - t.cos()).abs()).max((s[1] + t.sin()).abs());
        }
        assert!(worst < 1e-7, "{worst:e}");
    }

    #[test]
    fn events_are_located() {
        let rhs = |_t: f64, y: &[f64], o: &mut [f64]| o[0] = -y[0];
        let jac = |_t: f64, _y: &[f64], o: &mut [f64]| o[0] = -1.0;
        let ev = |_t: f64, y: &[f64]| y[0] - 0.5;
        let events = [EventSpec::new(Direction::Falling, 1e-13, ev)];
        let tr = integrate_stiff(rhs, jac, 0.0, &[1.0], 10.0, &StepControl::relative(1e-10), &events).unwrap();
        assert_eq!(tr.terminal_reason(), TerminalReason::EventHit { index: 0 });
        assert!((tr.t_end() - 2.0f64.ln()).abs() < 1e-8, "{} {}", tr.t_end(), tr.len());
    }
}
