//! Pair-correlation cumulant theory and its large-`N` limit.
//!
//! The state is `(sz, spm, szz)`: the single-atom inversion, the two-atom
//! dipole correlation `<sigma+_1 sigma-_2>` and the connected inversion
//! correlation `<sigma_z1 sigma_z2> - sz^2`. Third-order cumulants are
//! dropped. Two closures are offered:
//!
//! * [`Closure::RateBalanced`] follows from the Lindblad adjoint of the
//!   master equation. The inversion equation carries the source term
//!   `w - gamma_c` and the dipole equation couples to the full correlator
//!   `szz + sz^2`.
//! * [`Closure::AsPrinted`] omits both. Its inversion equation is
//!   homogeneous, so `(0, 0, 0)` is stationary at every pump strength.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ode::{self, OdeOptions};
use crate::params::ModelParams;

/// Slack on the physical bounds when filtering roots and flagging breakdown.
pub const INVARIANT_TOL: f64 = 1e-6;
const STABILITY_TOL: f64 = 1e-8;
const FIXED_POINT_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Closure {
    AsPrinted,
    #[default]
    RateBalanced,
}

impl Closure {
    pub fn as_str(&self) -> &'static str {
        match self {
            Closure::AsPrinted => "as-printed",
            Closure::RateBalanced => "rate-balanced",
        }
    }

    fn source(&self, params: &ModelParams) -> f64 {
        match self {
            Closure::AsPrinted => 0.0,
            Closure::RateBalanced => params.w() - params.gamma_c(),
        }
    }

    fn full_correlator(&self) -> f64 {
        match self {
            Closure::AsPrinted => 0.0,
            Closure::RateBalanced => 1.0,
        }
    }
}

impl std::str::FromStr for Closure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "as-printed" => Ok(Closure::AsPrinted),
            "rate-balanced" => Ok(Closure::RateBalanced),
            other => Err(Error::Argument(format!("unknown closure `{other}` (expected as-printed or rate-balanced)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CumulantState {
    pub sz: f64,
    pub spm: f64,
    pub szz: f64,
}

impl CumulantState {
    pub fn new(sz: f64, spm: f64, szz: f64) -> Self {
        CumulantState { sz, spm, szz }
    }

    /// Fully inverted, uncorrelated.
    pub fn inverted() -> Self {
        CumulantState::new(1.0, 0.0, 0.0)
    }

    fn to_vec(self) -> Vec<f64> {
        vec![self.sz, self.spm, self.szz]
    }

    fn from_slice(v: &[f64]) -> Self {
        CumulantState::new(v[0], v[1], v[2])
    }

    /// First violated physical bound, if any, with slack `tol`.
    pub fn violation(&self, tol: f64) -> Option<String> {
        if !(self.sz.is_finite() && self.spm.is_finite() && self.szz.is_finite()) {
            return Some("non-finite cumulant".into());
        }
        if self.sz.abs() > 1.0 + tol {
            return Some(format!("|sz| = {} exceeds 1", self.sz.abs()));
        }
        let zz = self.szz + self.sz * self.sz;
        if zz.abs() > 1.0 + tol {
            return Some(format!("|<sz sz>| = {} exceeds 1", zz.abs()));
        }
        let bound = 0.25 * (1.0 - self.sz * self.sz);
        if self.spm.abs() > bound + tol {
            return Some(format!("|spm| = {} exceeds (1 - sz^2)/4 = {bound}", self.spm.abs()));
        }
        None
    }

    pub fn is_physical(&self) -> bool {
        self.violation(INVARIANT_TOL).is_none()
    }

    /// `<J+J->` of the full ensemble: `N(1 + sz)/2 + N(N - 1) spm`.
    pub fn jpjm(&self, n: usize) -> f64 {
        let n = n as f64;
        0.5 * n * (1.0 + self.sz) + n * (n - 1.0) * self.spm
    }

    /// Emission rate `gamma_c <J+J->`.
    pub fn intensity(&self, params: &ModelParams) -> f64 {
        params.gamma_c() * self.jpjm(params.n())
    }

    /// Mean number of excited atoms.
    pub fn excited(&self, n: usize) -> f64 {
        0.5 * n as f64 * (1.0 + self.sz)
    }
}

/// Time derivative of the truncated cumulant equations. For `N = 1` the pair
/// quantities do not exist and their derivatives are zero.
pub fn cumulant_rhs(state: &CumulantState, params: &ModelParams, closure: Closure) -> CumulantState {
    let g = params.gamma_c();
    let a = params.w() + g;
    let n = params.n_f64();
    let CumulantState { sz, spm, szz } = *state;
    let dsz = -a * sz + closure.source(params) - 2.0 * g * (n - 1.0) * spm;
    if params.n() == 1 {
        return CumulantState::new(dsz, 0.0, 0.0);
    }
    let dspm = -a * spm + 0.5 * g * (szz + closure.full_correlator() * sz * sz + sz) + g * (n - 2.0) * sz * spm;
    let dszz = -2.0 * a * szz + 4.0 * g * spm * (1.0 + sz);
    CumulantState::new(dsz, dspm, dszz)
}

/// Jacobian of [`cumulant_rhs`] in the order `(sz, spm, szz)`.
pub fn jacobian(state: &CumulantState, params: &ModelParams, closure: Closure) -> Matrix3<f64> {
    let g = params.gamma_c();
    let a = params.w() + g;
    let n = params.n_f64();
    let k = closure.full_correlator();
    let CumulantState { sz, spm, .. } = *state;
    if params.n() == 1 {
        return Matrix3::new(-a, 0.0, 0.0, 0.0, -a, 0.0, 0.0, 0.0, -2.0 * a);
    }
    Matrix3::new(
        -a,
        -2.0 * g * (n - 1.0),
        0.0,
        0.5 * g * (2.0 * k * sz + 1.0) + g * (n - 2.0) * spm,
        -a + g * (n - 2.0) * sz,
        0.5 * g,
        4.0 * g * spm,
        4.0 * g * (1.0 + sz),
        -2.0 * a,
    )
}

/// Largest real part of the Jacobian spectrum.
pub fn spectral_abscissa(state: &CumulantState, params: &ModelParams, closure: Closure) -> f64 {
    jacobian(state, params, closure).complex_eigenvalues().iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CumulantTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<CumulantState>,
    /// Output times at which the truncated state left the physical region.
    pub warnings: Vec<String>,
}

impl CumulantTrajectory {
    pub fn last(&self) -> &CumulantState {
        self.states.last().expect("trajectory has at least one sample")
    }
}

/// Integrates from `state0` to `t_end`, sampling `samples + 1` equally spaced
/// times. Excursions outside the physical bounds are reported as warnings
/// rather than errors since the truncation can overshoot transiently.
pub fn integrate_cumulant(
    state0: CumulantState,
    params: &ModelParams,
    closure: Closure,
    t_end: f64,
    samples: usize,
) -> Result<CumulantTrajectory> {
    if let Some(problem) = state0.violation(INVARIANT_TOL) {
        return Err(Error::Argument(format!("initial cumulant state is unphysical: {problem}")));
    }
    if !(t_end > 0.0 && t_end.is_finite()) || samples == 0 {
        return Err(Error::Argument(format!("need t_end > 0 and at least one sample, got {t_end} and {samples}")));
    }
    let times: Vec<f64> = (0..=samples).map(|k| t_end * k as f64 / samples as f64).collect();
    let opts = OdeOptions::with_tolerance(1e-10);
    let ys = ode::integrate(
        |_, y: &Vec<f64>, dy: &mut Vec<f64>| {
            let d = cumulant_rhs(&CumulantState::from_slice(y), params, closure);
            dy.copy_from_slice(&d.to_vec());
        },
        0.0,
        state0.to_vec(),
        &times,
        &opts,
    )?;
    let states: Vec<CumulantState> = ys.iter().map(|y| CumulantState::from_slice(y)).collect();
    let warnings = times
        .iter()
        .zip(&states)
        .filter_map(|(t, s)| s.violation(INVARIANT_TOL).map(|p| format!("model breakdown at t = {t}: {p}")))
        .collect();
    Ok(CumulantTrajectory { times, states, warnings })
}

/// A stationary point with its classification.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CumulantRoot {
    pub state: CumulantState,
    pub physical: bool,
    /// Largest real part of the Jacobian eigenvalues.
    pub abscissa: f64,
}

impl CumulantRoot {
    pub fn stable(&self) -> bool {
        self.abscissa <= STABILITY_TOL
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SteadyStateSolution {
    pub state: CumulantState,
    pub closure: Closure,
    /// Every real stationary point, selected one included.
    pub roots: Vec<CumulantRoot>,
    /// Which rule settled the choice: `unique`, `stability` or `homotopy`.
    pub selected_by: &'static str,
}

/// Coefficients `c[k]` of `sum_k c[k] x^k`.
type Poly = [f64; 4];

fn poly_mul(a: &Poly, b: &Poly) -> Poly {
    let mut out = [0.0; 4];
    for i in 0..4 {
        for j in 0..4 - i {
            out[i + j] += a[i] * b[j];
        }
    }
    out
}

fn poly_add(a: &Poly, b: &Poly, scale: f64) -> Poly {
    let mut out = *a;
    for k in 0..4 {
        out[k] += scale * b[k];
    }
    out
}

fn poly_eval(p: &Poly, x: f64) -> (f64, f64) {
    let value = ((p[3] * x + p[2]) * x + p[1]) * x + p[0];
    let deriv = (3.0 * p[3] * x + 2.0 * p[2]) * x + p[1];
    (value, deriv)
}

/// Real roots of a polynomial of degree at most three. Leading coefficients
/// that are negligible against the others are dropped.
pub fn real_roots(p: &Poly) -> Vec<f64> {
    let scale = p.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if scale == 0.0 {
        return Vec::new();
    }
    let mut degree = 3;
    while degree > 0 && p[degree].abs() <= 1e-14 * scale {
        degree -= 1;
    }
    let mut roots = match degree {
        0 => Vec::new(),
        1 => vec![-p[0] / p[1]],
        2 => quadratic_roots(p[2], p[1], p[0]),
        _ => cubic_roots(p[3], p[2], p[1], p[0]),
    };
    for r in roots.iter_mut() {
        for _ in 0..8 {
            let (v, d) = poly_eval(p, *r);
            if d == 0.0 || v == 0.0 {
                break;
            }
            let next = *r - v / d;
            if !next.is_finite() {
                break;
            }
            let done = (next - *r).abs() <= 1e-15 * next.abs().max(1e-300);
            *r = next;
            if done {
                break;
            }
        }
    }
    roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    roots.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1e-300));
    roots
}

fn quadratic_roots(a: f64, b: f64, c: f64) -> Vec<f64> {
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        // a double root can come out slightly negative
        if disc > -1e-14 * b * b {
            return vec![-b / (2.0 * a)];
        }
        return Vec::new();
    }
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    if q == 0.0 {
        return vec![0.0];
    }
    vec![q / a, c / q]
}

fn cubic_roots(a: f64, b: f64, c: f64, d: f64) -> Vec<f64> {
    // depressed cubic t^3 + p t + q with x = t - b/(3a)
    let (b, c, d) = (b / a, c / a, d / a);
    let shift = b / 3.0;
    let p = c - b * b / 3.0;
    let q = 2.0 * b * b * b / 27.0 - b * c / 3.0 + d;
    let disc = (q / 2.0).powi(2) + (p / 3.0).powi(3);
    if disc > 0.0 {
        let s = disc.sqrt();
        let t = (-q / 2.0 + s).cbrt() + (-q / 2.0 - s).cbrt();
        vec![t - shift]
    } else if p == 0.0 {
        vec![-shift]
    } else {
        let r = (-p / 3.0).sqrt();
        let phi = (-q / (2.0 * r * r * r)).clamp(-1.0, 1.0).acos();
        (0..3)
            .map(|k| 2.0 * r * ((phi - 2.0 * std::f64::consts::PI * k as f64) / 3.0).cos() - shift)
            .collect()
    }
}

/// Stationarity reduced to one polynomial in `spm`. Returns the polynomial
/// and the affine map `spm -> sz`.
fn stationarity_polynomial(params: &ModelParams, closure: Closure) -> (Poly, f64, f64) {
    let g = params.gamma_c();
    let a = params.w() + g;
    let n = params.n_f64();
    // sz = alpha + beta spm
    let alpha = closure.source(params) / a;
    let beta = -2.0 * g * (n - 1.0) / a;
    let sz: Poly = [alpha, beta, 0.0, 0.0];
    let x: Poly = [0.0, 1.0, 0.0, 0.0];
    let one_plus_sz: Poly = [1.0 + alpha, beta, 0.0, 0.0];
    // szz = 2 g spm (1 + sz) / a
    let szz = poly_mul(&x, &one_plus_sz).map(|c| c * 2.0 * g / a);
    let sz_sq = poly_mul(&sz, &sz);
    let mut f = x.map(|c| -a * c);
    f = poly_add(&f, &szz, 0.5 * g);
    f = poly_add(&f, &sz_sq, 0.5 * g * closure.full_correlator());
    f = poly_add(&f, &sz, 0.5 * g);
    f = poly_add(&f, &poly_mul(&sz, &x), g * (n - 2.0));
    (f, alpha, beta)
}

fn state_from_spm(params: &ModelParams, alpha: f64, beta: f64, spm: f64) -> CumulantState {
    let a = params.w() + params.gamma_c();
    let sz = alpha + beta * spm;
    CumulantState::new(sz, spm, 2.0 * params.gamma_c() * spm * (1.0 + sz) / a)
}

/// All real stationary points of the truncated equations.
pub fn stationary_points(params: &ModelParams, closure: Closure) -> Vec<CumulantRoot> {
    let states: Vec<CumulantState> = if params.n() == 1 {
        let a = params.w() + params.gamma_c();
        vec![CumulantState::new(closure.source(params) / a, 0.0, 0.0)]
    } else {
        let (poly, alpha, beta) = stationarity_polynomial(params, closure);
        real_roots(&poly).into_iter().map(|p| state_from_spm(params, alpha, beta, p)).collect()
    };
    states
        .into_iter()
        .map(|state| CumulantRoot {
            state,
            physical: state.is_physical(),
            abscissa: spectral_abscissa(&state, params, closure),
        })
        .collect()
}

fn residual(state: &CumulantState, params: &ModelParams, closure: Closure) -> f64 {
    let d = cumulant_rhs(state, params, closure);
    d.sz.abs().max(d.spm.abs()).max(d.szz.abs())
}

/// The physical stationary state: roots are filtered by the physical bounds,
/// then by linear stability, and any remaining tie is broken by following
/// the root continuously in `w` down from strong pumping.
pub fn steady_state_cubic(params: &ModelParams, closure: Closure) -> Result<SteadyStateSolution> {
    if params.w() <= 0.0 {
        return Err(Error::Degenerate("w = 0 has no unique steady state".into()));
    }
    let roots = stationary_points(params, closure);
    let physical: Vec<&CumulantRoot> = roots.iter().filter(|r| r.physical).collect();
    let stable: Vec<&CumulantRoot> = physical.iter().copied().filter(|r| r.stable()).collect();
    let (chosen, selected_by) = match (physical.len(), stable.len()) {
        (0, _) => {
            return Err(Error::Solver(format!(
                "no physical stationary point among {} real roots: {:?}",
                roots.len(),
                roots.iter().map(|r| r.state).collect::<Vec<_>>()
            )))
        }
        (1, _) => (*physical[0], "unique"),
        (_, 1) => (*stable[0], "stability"),
        _ => {
            let pool: Vec<CumulantRoot> = if stable.is_empty() { physical.iter().map(|r| **r).collect() } else { stable.iter().map(|r| **r).collect() };
            (homotopy_pick(params, closure, &pool)?, "homotopy")
        }
    };
    let res = residual(&chosen.state, params, closure);
    if res > FIXED_POINT_TOL {
        return Err(Error::Solver(format!("selected root has residual {res:e}")));
    }
    Ok(SteadyStateSolution { state: chosen.state, closure, roots, selected_by })
}

/// Follows the stationary branch that starts near `sz = 1, spm = 0` at
/// strong pumping and returns the candidate closest to where it ends up.
fn homotopy_pick(params: &ModelParams, closure: Closure, pool: &[CumulantRoot]) -> Result<CumulantRoot> {
    let w_target = params.w();
    let w_start = (10.0 * params.n_f64() * params.gamma_c()).max(10.0 * w_target);
    let steps = 400;
    let mut current: Option<f64> = None;
    for k in 0..=steps {
        let w = w_start * (w_target / w_start).powf(k as f64 / steps as f64);
        let p = params.with_w(w)?;
        let roots = stationary_points(&p, closure);
        let next = match current {
            None => roots
                .iter()
                .filter(|r| r.physical)
                .max_by(|a, b| a.state.sz.partial_cmp(&b.state.sz).unwrap())
                .map(|r| r.state.spm),
            Some(prev) => roots
                .iter()
                .min_by(|a, b| (a.state.spm - prev).abs().partial_cmp(&(b.state.spm - prev).abs()).unwrap())
                .map(|r| r.state.spm),
        };
        current = Some(next.ok_or_else(|| Error::Solver(format!("root branch lost at w = {w}")))?);
    }
    let end = current.unwrap();
    pool.iter()
        .min_by(|a, b| (a.state.spm - end).abs().partial_cmp(&(b.state.spm - end).abs()).unwrap())
        .copied()
        .ok_or_else(|| Error::Solver("no candidate roots".into()))
}

/// Large-`N` state `(jz, jpjm)` with `jz = Jz / N` and `jpjm = <J+J-> / N^2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RescaledState {
    pub jz: f64,
    pub jpjm: f64,
}

/// Leading-order equations in `1/N`.
pub fn rescaled_rhs(state: &RescaledState, params: &ModelParams) -> RescaledState {
    let w = params.w();
    let ng = params.n_f64() * params.gamma_c();
    RescaledState {
        jz: -w * (state.jz - 0.5) - ng * state.jpjm,
        jpjm: -w * state.jpjm + 2.0 * ng * state.jz * state.jpjm,
    }
}

/// Closed-form stationary state of [`rescaled_rhs`]: below threshold
/// `w < N gamma_c` the correlated branch, above it full inversion.
pub fn rescaled_steady_state(params: &ModelParams) -> RescaledState {
    let x = params.w() / (params.n_f64() * params.gamma_c());
    if x < 1.0 {
        RescaledState { jz: 0.5 * x, jpjm: 0.5 * x * (1.0 - x) }
    } else {
        RescaledState { jz: 0.5, jpjm: 0.0 }
    }
}

/// Emission rate predicted by the large-`N` closed form, `N^2 gamma_c jpjm`.
pub fn rescaled_intensity(params: &ModelParams) -> f64 {
    let n = params.n_f64();
    n * n * params.gamma_c() * rescaled_steady_state(params).jpjm
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MaxIntensity {
    pub w_star: f64,
    pub i_max: f64,
    /// Whether `w_star` lies in the collective regime `gamma_c << w ~ N gamma_c`
    /// where the closed form applies (taken as `w_star >= 10 gamma_c`).
    pub large_n_valid: bool,
}

/// Peak of the large-`N` emission curve: `N^2 gamma_c / 8` at `w = N gamma_c / 2`.
pub fn max_intensity(params: &ModelParams) -> MaxIntensity {
    let n = params.n_f64();
    let g = params.gamma_c();
    let w_star = 0.5 * n * g;
    MaxIntensity { w_star, i_max: n * n * g / 8.0, large_n_valid: w_star >= 10.0 * g }
}

/// The large-`N` emission curve `I(w)` at the atom number and decay rate of `params`.
pub fn intensity_curve(params: &ModelParams) -> impl Fn(f64) -> f64 {
    let (n, g) = (params.n(), params.gamma_c());
    move |w| match ModelParams::new(n, g, w) {
        Ok(p) => rescaled_intensity(&p),
        Err(_) => f64::NAN,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CoherenceTime {
    /// `N / (N gamma_c + 2 w)`.
    pub t_coh: f64,
    /// `(w + gamma_c - (N - 2) gamma_c sz) / 2` with `sz = 2 jz` from the closed form.
    pub regression_rate: f64,
    /// `1 / regression_rate`, equal to `2 t_coh` below threshold.
    pub inverse_rate: f64,
    pub sz_ss: f64,
}

pub fn coherence_time(params: &ModelParams) -> CoherenceTime {
    let n = params.n_f64();
    let g = params.gamma_c();
    let w = params.w();
    let sz_ss = 2.0 * rescaled_steady_state(params).jz;
    let regression_rate = 0.5 * (w + g - (n - 2.0) * g * sz_ss);
    CoherenceTime { t_coh: n / (n * g + 2.0 * w), regression_rate, inverse_rate: 1.0 / regression_rate, sz_ss }
}
