//! Dormand–Prince 5(4) pair with standard step-size control.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dopri5Options {
    pub rtol: f64,
    pub atol: f64,
    /// Initial step; chosen automatically when `None`.
    pub h0: Option<f64>,
    pub max_steps: usize,
}

impl Default for Dopri5Options {
    fn default() -> Self {
        Self {
            rtol: 1e-8,
            atol: 1e-12,
            h0: None,
            max_steps: 10_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Dopri5Stats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
}

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
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// Fifth minus fourth order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Integrates `y' = f(t, y)` from `t0` to `t1` in place.
///
/// `after_step` runs on every accepted state and may modify it (returning
/// `true` if it did); the stage reused by the next step is then recomputed.
pub fn dopri5<F, P>(
    y: &mut [f64],
    t0: f64,
    t1: f64,
    opts: &Dopri5Options,
    mut rhs: F,
    mut after_step: P,
) -> Result<Dopri5Stats>
where
    F: FnMut(f64, &[f64], &mut [f64]),
    P: FnMut(f64, &mut [f64]) -> bool,
{
    let n = y.len();
    let mut stats = Dopri5Stats::default();
    if t1 <= t0 || n == 0 {
        return Ok(stats);
    }
    let mut k = vec![vec![0.0; n]; 7];
    let mut tmp = vec![0.0; n];
    let mut ynew = vec![0.0; n];
    let mut t = t0;
    rhs(t, y, &mut k[0]);
    stats.rhs_evals += 1;

    let err_norm = |e: &[f64], y0: &[f64], y1: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            let sc = opts.atol + opts.rtol * y0[i].abs().max(y1[i].abs());
            let r = e[i] / sc;
            s += r * r;
        }
        (s / n as f64).sqrt()
    };

    let mut h = match opts.h0 {
        Some(h) => h,
        None => {
            let zero = vec![0.0; n];
            let d0 = err_norm(y, y, &zero);
            let d1 = err_norm(&k[0], y, &zero);
            let h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
            h.min(t1 - t0)
        }
    };

    let mut steps = 0;
    while t < t1 {
        if steps >= opts.max_steps {
            return Err(Error::Precondition(format!(
                "ODE integration exceeded {} steps at t = {t}",
                opts.max_steps
            )));
        }
        steps += 1;
        let last = t + h >= t1;
        if last {
            h = t1 - t;
        }
        let stage = |k: &[Vec<f64>], w: &[(usize, f64)], out: &mut [f64], y: &[f64]| {
            for i in 0..n {
                let mut acc = y[i];
                for &(j, a) in w {
                    acc += h * a * k[j][i];
                }
                out[i] = acc;
            }
        };
        stage(&k, &[(0, A21)], &mut tmp, y);
        rhs(t + C2 * h, &tmp, &mut k[1]);
        stage(&k, &[(0, A31), (1, A32)], &mut tmp, y);
        rhs(t + C3 * h, &tmp, &mut k[2]);
        stage(&k, &[(0, A41), (1, A42), (2, A43)], &mut tmp, y);
        rhs(t + C4 * h, &tmp, &mut k[3]);
        stage(&k, &[(0, A51), (1, A52), (2, A53), (3, A54)], &mut tmp, y);
        rhs(t + C5 * h, &tmp, &mut k[4]);
        stage(&k, &[(0, A61), (1, A62), (2, A63), (3, A64), (4, A65)], &mut tmp, y);
        rhs(t + h, &tmp, &mut k[5]);
        stage(&k, &[(0, B1), (2, B3), (3, B4), (4, B5), (5, B6)], &mut ynew, y);
        rhs(t + h, &ynew, &mut k[6]);
        stats.rhs_evals += 6;

        for i in 0..n {
            tmp[i] = h
                * (E1 * k[0][i] + E3 * k[2][i] + E4 * k[3][i] + E5 * k[4][i] + E6 * k[5][i]
                    + E7 * k[6][i]);
        }
        let err = err_norm(&tmp, y, &ynew);
        if !err.is_finite() {
            return Err(Error::NonFinite(format!("ODE state at t = {t}")));
        }
        if err <= 1.0 {
            t = if last { t1 } else { t + h };
            y.copy_from_slice(&ynew);
            stats.accepted += 1;
            if after_step(t, y) {
                rhs(t, y, &mut k[0]);
                stats.rhs_evals += 1;
            } else {
                k.swap(0, 6);
            }
            let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            h *= fac;
        } else {
            stats.rejected += 1;
            h *= (0.9 * err.powf(-0.2)).clamp(0.1, 1.0);
        }
        if h <= f64::EPSILON * t.abs().max(1.0) {
            return Err(Error::Precondition(format!("ODE step size underflow at t = {t}")));
        }
    }
    Ok(stats)
}
