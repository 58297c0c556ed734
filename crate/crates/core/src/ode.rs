//! Adaptive Dormand–Prince 5(4) integration for real and complex vectors.

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

/// Vector space operations the integrator needs.
pub trait OdeVector: Clone {
    fn zeros_like(&self) -> Self;
    /// `self += a * x`
    fn axpy(&mut self, a: f64, x: &Self);
    /// RMS of `err_i / (atol + rtol * max(|y0_i|, |y1_i|))`.
    fn error_norm(err: &Self, y0: &Self, y1: &Self, atol: f64, rtol: f64) -> f64;
    fn all_finite(&self) -> bool;
}

impl OdeVector for Vec<f64> {
    fn zeros_like(&self) -> Self {
        vec![0.0; self.len()]
    }

    fn axpy(&mut self, a: f64, x: &Self) {
        self.iter_mut().zip(x).for_each(|(s, v)| *s += a * v);
    }

    fn error_norm(err: &Self, y0: &Self, y1: &Self, atol: f64, rtol: f64) -> f64 {
        let sum: f64 = err
            .iter()
            .zip(y0.iter().zip(y1))
            .map(|(e, (a, b))| (e / (atol + rtol * a.abs().max(b.abs()))).powi(2))
            .sum();
        (sum / err.len().max(1) as f64).sqrt()
    }

    fn all_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
}

impl OdeVector for Vec<C64> {
    fn zeros_like(&self) -> Self {
        vec![C64::new(0.0, 0.0); self.len()]
    }

    fn axpy(&mut self, a: f64, x: &Self) {
        self.iter_mut().zip(x).for_each(|(s, v)| *s += v * a);
    }

    fn error_norm(err: &Self, y0: &Self, y1: &Self, atol: f64, rtol: f64) -> f64 {
        let sum: f64 = err
            .iter()
            .zip(y0.iter().zip(y1))
            .map(|(e, (a, b))| e.norm_sqr() / (atol + rtol * a.norm().max(b.norm())).powi(2))
            .sum();
        (sum / err.len().max(1) as f64).sqrt()
    }

    fn all_finite(&self) -> bool {
        self.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    /// First trial step; picked from the output spacing when `None`.
    pub initial_step: Option<f64>,
    pub min_step: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions { rtol: 1e-9, atol: 1e-9, initial_step: None, min_step: 1e-14, max_steps: 10_000_000 }
    }
}

impl OdeOptions {
    pub fn with_tolerance(tol: f64) -> Self {
        OdeOptions { rtol: tol, atol: tol, ..Default::default() }
    }
}

// Dormand–Prince tableau
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
// fifth minus fourth order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Integrates `dy/dt = f(t, y)` from `t0` and returns the state at each of
/// the (non-decreasing, `>= t0`) output times. Steps are clipped to land on
/// output times exactly.
pub fn integrate<V, F>(mut f: F, t0: f64, y0: V, t_out: &[f64], opts: &OdeOptions) -> Result<Vec<V>>
where
    V: OdeVector,
    F: FnMut(f64, &V, &mut V),
{
    let mut out = Vec::with_capacity(t_out.len());
    let mut t = t0;
    let mut y = y0;
    let mut k1 = y.zeros_like();
    f(t, &y, &mut k1);
    let span = t_out.last().map(|&te| te - t0).unwrap_or(0.0);
    let mut h = opts.initial_step.unwrap_or_else(|| {
        let spacing = if t_out.len() > 1 { span / (t_out.len() - 1) as f64 } else { span };
        (spacing * 0.1).max(1e-6)
    });
    let mut steps = 0usize;

    let mut k2 = y.zeros_like();
    let mut k3 = y.zeros_like();
    let mut k4 = y.zeros_like();
    let mut k5 = y.zeros_like();
    let mut k6 = y.zeros_like();
    let mut k7 = y.zeros_like();

    for &target in t_out {
        if target < t {
            return Err(Error::Argument(format!("output time {target} precedes current time {t}")));
        }
        while t < target {
            steps += 1;
            if steps > opts.max_steps {
                return Err(Error::Integration { time: t, reason: "step budget exhausted".into() });
            }
            let remaining = target - t;
            let last = h >= remaining;
            let step = if last { remaining } else { h };

            let mut tmp = y.clone();
            tmp.axpy(step * A21, &k1);
            f(t + C2 * step, &tmp, &mut k2);

            let mut tmp = y.clone();
            tmp.axpy(step * A31, &k1);
            tmp.axpy(step * A32, &k2);
            f(t + C3 * step, &tmp, &mut k3);

            let mut tmp = y.clone();
            tmp.axpy(step * A41, &k1);
            tmp.axpy(step * A42, &k2);
            tmp.axpy(step * A43, &k3);
            f(t + C4 * step, &tmp, &mut k4);

            let mut tmp = y.clone();
            tmp.axpy(step * A51, &k1);
            tmp.axpy(step * A52, &k2);
            tmp.axpy(step * A53, &k3);
            tmp.axpy(step * A54, &k4);
            f(t + C5 * step, &tmp, &mut k5);

            let mut tmp = y.clone();
            tmp.axpy(step * A61, &k1);
            tmp.axpy(step * A62, &k2);
            tmp.axpy(step * A63, &k3);
            tmp.axpy(step * A64, &k4);
            tmp.axpy(step * A65, &k5);
            f(t + step, &tmp, &mut k6);

            let mut y_new = y.clone();
            y_new.axpy(step * B1, &k1);
            y_new.axpy(step * B3, &k3);
            y_new.axpy(step * B4, &k4);
            y_new.axpy(step * B5, &k5);
            y_new.axpy(step * B6, &k6);
            f(t + step, &y_new, &mut k7);

            let mut err = y.zeros_like();
            err.axpy(step * E1, &k1);
            err.axpy(step * E3, &k3);
            err.axpy(step * E4, &k4);
            err.axpy(step * E5, &k5);
            err.axpy(step * E6, &k6);
            err.axpy(step * E7, &k7);
            let norm = V::error_norm(&err, &y, &y_new, opts.atol, opts.rtol);

            if !norm.is_finite() || !y_new.all_finite() {
                h = step * 0.2;
            } else if norm <= 1.0 {
                t = if last { target } else { t + step };
                y = y_new;
                std::mem::swap(&mut k1, &mut k7);
                let factor = if norm == 0.0 { 5.0 } else { (0.9 * norm.powf(-0.2)).clamp(0.2, 5.0) };
                // a step clipped to an output time says little about the next one
                if !last || factor < 1.0 {
                    h = step * factor;
                }
            } else {
                h = step * (0.9 * norm.powf(-0.2)).clamp(0.1, 0.9);
            }
            if h < opts.min_step * t.abs().max(1.0) {
                return Err(Error::Integration { time: t, reason: format!("step size underflow (h = {h:e})") });
            }
        }
        out.push(y.clone());
    }
    Ok(out)
}
