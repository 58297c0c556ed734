//! Deterministic evolution between quantum jumps.
//!
//! The no-jump generator is `K = gamma_c J+J- + w n_g` with `n_g` the number
//! of ground-state atoms, and the unnormalized state obeys
//! `psi(s) = exp(-K s / 2) psi(0)`. Both parts commute with `Jz`, so on each
//! `Jz` sector the repump part is a scalar exponential and only `J+J-`
//! needs a series. A [`Segment`] stores the Krylov powers
//! `v_k = (J+J-)^k psi(0)` for one step; the state at any time inside the
//! step is a polynomial in those vectors and the squared norm is a scalar
//! series in the sector moments `<psi|(J+J-)^n|psi>`.

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::hilbert;
use crate::params::ModelParams;

/// Largest `gamma_c * ||J+J-|| * h` allowed in one segment.
const SERIES_ARGUMENT: f64 = 6.0;
/// Largest repump exponent `w * N * h` allowed in one segment.
const REPUMP_ARGUMENT: f64 = 30.0;
const SERIES_TOL: f64 = 1e-17;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Read-only operator data shared by every trajectory of one parameter point.
#[derive(Debug)]
pub struct NoJumpGenerator {
    params: ModelParams,
    n_atoms: usize,
    dim: usize,
    /// Excitation count of each basis state; doubles as the sector index.
    excitations: Vec<usize>,
    spectral_bound: f64,
}

impl NoJumpGenerator {
    pub fn new(params: ModelParams) -> Self {
        let n_atoms = params.n();
        let dim = hilbert::dim(n_atoms);
        let half = n_atoms as f64 / 2.0;
        NoJumpGenerator {
            params,
            n_atoms,
            dim,
            excitations: (0..dim).map(hilbert::excitations).collect(),
            // max over (J, M) of (J + M)(J - M + 1) is (J + 1/2)^2 at J = N/2
            spectral_bound: (half + 0.5) * (half + 0.5),
        }
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Upper bound on the spectrum of `J+J-`.
    pub fn spectral_bound(&self) -> f64 {
        self.spectral_bound
    }

    /// Longest segment the series is trusted for.
    pub fn max_step(&self) -> f64 {
        let collective = SERIES_ARGUMENT / (self.params.gamma_c() * self.spectral_bound);
        let pump = self.params.w() * self.n_atoms as f64;
        if pump > 0.0 {
            collective.min(REPUMP_ARGUMENT / pump)
        } else {
            collective
        }
    }

    /// `y = J- x`
    pub fn apply_jm(&self, x: &[C64], y: &mut [C64]) {
        y.iter_mut().for_each(|v| *v = ZERO);
        for (b, &amp) in x.iter().enumerate() {
            if amp == ZERO {
                continue;
            }
            let mut bits = b;
            while bits != 0 {
                let low = bits & bits.wrapping_neg();
                y[b ^ low] += amp;
                bits ^= low;
            }
        }
    }

    /// `y = J+ x`
    pub fn apply_jp(&self, x: &[C64], y: &mut [C64]) {
        y.iter_mut().for_each(|v| *v = ZERO);
        let full = self.dim - 1;
        for (b, &amp) in x.iter().enumerate() {
            if amp == ZERO {
                continue;
            }
            let mut holes = !b & full;
            while holes != 0 {
                let low = holes & holes.wrapping_neg();
                y[b | low] += amp;
                holes ^= low;
            }
        }
    }

    /// `y = J+J- x`, using `scratch` for the intermediate.
    pub fn apply_jpjm(&self, x: &[C64], y: &mut [C64], scratch: &mut [C64]) {
        self.apply_jm(x, scratch);
        self.apply_jp(scratch, y);
    }

    /// Number of ground-state atoms in basis state `b`.
    #[inline]
    fn ground_count(&self, b: usize) -> usize {
        self.n_atoms - self.excitations[b]
    }

    /// Krylov data for evolving `psi` (assumed normalized) by up to `h`.
    pub fn segment(&self, psi: &[C64], h: f64) -> Segment {
        let x = self.params.gamma_c() * self.spectral_bound * h;
        let terms = series_terms(x);
        let mut powers: Vec<Vec<C64>> = Vec::with_capacity(terms + 1);
        powers.push(psi.to_vec());
        let mut scratch = vec![ZERO; self.dim];
        for k in 0..terms {
            let mut next = vec![ZERO; self.dim];
            self.apply_jpjm(&powers[k], &mut next, &mut scratch);
            powers.push(next);
        }

        // sector moments m[sector][n] = <v_a|v_{n-a}> restricted to the sector
        let sectors = self.n_atoms + 1;
        let max_moment = 2 * terms;
        let mut moments = vec![vec![0.0; max_moment + 1]; sectors];
        for n in 0..=max_moment {
            let a = n / 2;
            let b = n - a;
            let (va, vb) = (&powers[a], &powers[b]);
            for i in 0..self.dim {
                moments[self.excitations[i]][n] += (va[i].conj() * vb[i]).re;
            }
        }
        let repump: Vec<f64> =
            (0..sectors).map(|k| self.params.w() * (self.n_atoms - k) as f64).collect();

        Segment { gamma_c: self.params.gamma_c(), h, powers, moments, repump }
    }

    /// Normalized-state observables need the state itself; this evaluates
    /// `psi(s)` into `out` without normalizing.
    pub fn state_at(&self, seg: &Segment, s: f64, out: &mut [C64]) {
        let coeffs = seg.state_coefficients(s);
        out.iter_mut().for_each(|v| *v = ZERO);
        for (c, v) in coeffs.iter().zip(&seg.powers) {
            if *c == 0.0 {
                continue;
            }
            for (o, a) in out.iter_mut().zip(v) {
                *o += a * *c;
            }
        }
        for (b, o) in out.iter_mut().enumerate() {
            let g = self.ground_count(b);
            if g > 0 {
                *o *= (-0.5 * self.params.w() * g as f64 * s).exp();
            }
        }
    }

    /// Expected no-jump decay rate `<psi|K|psi>` for a normalized state.
    pub fn decay_rate(&self, psi: &[C64]) -> f64 {
        let mut scratch = vec![ZERO; self.dim];
        self.apply_jm(psi, &mut scratch);
        let collective: f64 = hilbert::norm_sq(&scratch);
        let repump: f64 = psi
            .iter()
            .enumerate()
            .map(|(b, a)| a.norm_sqr() * self.ground_count(b) as f64)
            .sum();
        self.params.gamma_c() * collective + self.params.w() * repump
    }
}

/// Smallest truncation order whose remainders are negligible for both the
/// state series (argument `x/2`) and the norm series (argument `x`).
fn series_terms(x: f64) -> usize {
    let mut k = 1usize;
    loop {
        let state_term = term(x / 2.0, k + 1);
        let norm_term = term(x, 2 * k + 1);
        if state_term < SERIES_TOL && norm_term < SERIES_TOL {
            return k;
        }
        k += 1;
    }
}

fn term(x: f64, k: usize) -> f64 {
    (1..=k).fold(1.0, |acc, i| acc * x / i as f64)
}

/// Krylov data for one step of no-jump evolution.
#[derive(Clone, Debug)]
pub struct Segment {
    gamma_c: f64,
    h: f64,
    powers: Vec<Vec<C64>>,
    moments: Vec<Vec<f64>>,
    repump: Vec<f64>,
}

impl Segment {
    pub fn step(&self) -> f64 {
        self.h
    }

    fn state_coefficients(&self, s: f64) -> Vec<f64> {
        let x = -0.5 * self.gamma_c * s;
        let mut c = 1.0;
        let mut out = Vec::with_capacity(self.powers.len());
        for k in 0..self.powers.len() {
            if k > 0 {
                c *= x / k as f64;
            }
            out.push(c);
        }
        out
    }

    /// `||psi(s)||^2` relative to the normalized start of the segment.
    pub fn norm_sq(&self, s: f64) -> f64 {
        self.norm_and_derivative(s).0
    }

    /// `||psi(s)||^2` and its derivative in `s`.
    pub fn norm_and_derivative(&self, s: f64) -> (f64, f64) {
        let x = -self.gamma_c * s;
        let mut value = 0.0;
        let mut deriv = 0.0;
        for (m, &rate) in self.moments.iter().zip(&self.repump) {
            if m[0] == 0.0 {
                continue;
            }
            // series f(s) = sum_n m_n (-gamma s)^n / n!, f'(s) = -gamma sum_n m_{n+1} (-gamma s)^n / n!
            let mut c = 1.0;
            let mut f = 0.0;
            let mut fp = 0.0;
            for n in 0..m.len() {
                if n > 0 {
                    c *= x / n as f64;
                }
                f += c * m[n];
                if n + 1 < m.len() {
                    fp += c * m[n + 1];
                }
            }
            fp *= -self.gamma_c;
            let damp = (-rate * s).exp();
            value += damp * f;
            deriv += damp * (fp - rate * f);
        }
        (value, deriv)
    }

    /// Time `s` in `(0, h]` where the squared norm falls to `target`.
    /// Requires `norm_sq(h) <= target < 1`.
    pub fn crossing(&self, target: f64) -> Result<f64> {
        let (mut lo, mut hi) = (0.0, self.h);
        let f = |s: f64| -> (f64, f64) {
            let (n, dn) = self.norm_and_derivative(s);
            (n - target, dn)
        };
        if f(hi).0 > 0.0 {
            return Err(Error::Integration { time: self.h, reason: "jump threshold not bracketed".into() });
        }
        // linear guess from the decay at the start
        let (f0, d0) = f(0.0);
        let mut s = if d0 < 0.0 { (-f0 / d0).clamp(0.0, hi) } else { 0.5 * hi };
        for _ in 0..200 {
            let (value, deriv) = f(s);
            if !value.is_finite() {
                return Err(Error::Integration { time: s, reason: "non-finite norm in jump search".into() });
            }
            if value > 0.0 {
                lo = s;
            } else {
                hi = s;
            }
            let newton = if deriv < 0.0 { s - value / deriv } else { f64::NAN };
            let next = if newton.is_finite() && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
            if (next - s).abs() <= 1e-13 * self.h || hi - lo <= 1e-14 * self.h {
                return Ok(next);
            }
            s = next;
        }
        Ok(0.5 * (lo + hi))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{build_collective, build_single_atom, CollectiveKind, SingleAtomKind, SparseOperator, StateVector};
    use nalgebra::DMatrix;

    fn dense_generator(params: &ModelParams) -> DMatrix<C64> {
        let n = params.n();
        let jpjm = build_collective(CollectiveKind::JpJm, n);
        let mut k = jpjm.to_dense() * C64::new(params.gamma_c(), 0.0);
        for j in 0..n {
            let sm = build_single_atom(SingleAtomKind::SigmaMinus, j, n).unwrap();
            let sp = build_single_atom(SingleAtomKind::SigmaPlus, j, n).unwrap();
            k += sm.matmul(&sp).to_dense() * C64::new(params.w(), 0.0);
        }
        k
    }

    /// exp(-K s / 2) psi from a dense Hermitian eigendecomposition.
    fn reference_evolution(params: &ModelParams, psi: &[C64], s: f64) -> Vec<C64> {
        let k = dense_generator(params).map(|z| z.re);
        let eig = k.symmetric_eigen();
        let v = &eig.eigenvectors;
        let psi_re: Vec<f64> = psi.iter().map(|z| z.re).collect();
        let coeffs = v.transpose() * nalgebra::DVector::from_vec(psi_re);
        let damped = nalgebra::DVector::from_iterator(
            coeffs.len(),
            coeffs.iter().zip(eig.eigenvalues.iter()).map(|(c, l)| c * (-0.5 * l * s).exp()),
        );
        (v * damped).iter().map(|&x| C64::new(x, 0.0)).collect()
    }

    fn random_real_state(n: usize, salt: u64) -> Vec<C64> {
        let d = hilbert::dim(n);
        let mut state: Vec<C64> = (0..d)
            .map(|i| {
                let x = ((i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ salt) % 1000;
                C64::new(x as f64 / 500.0 - 1.0, 0.0)
            })
            .collect();
        let norm = hilbert::norm_sq(&state).sqrt();
        state.iter_mut().for_each(|a| *a /= norm);
        state
    }

    #[test]
    fn bit_kernels_match_sparse_operators() {
        let params = ModelParams::new(5, 1.0, 1.0).unwrap();
        let gen = NoJumpGenerator::new(params);
        let psi = random_real_state(5, 7);
        let mut y = vec![ZERO; 32];
        let mut scratch = vec![ZERO; 32];
        gen.apply_jpjm(&psi, &mut y, &mut scratch);
        let reference: SparseOperator = build_collective(CollectiveKind::JpJm, 5);
        let expected = reference.apply(&psi);
        for (a, b) in y.iter().zip(&expected) {
            assert!((a - b).norm() < 1e-12);
        }
        gen.apply_jp(&psi, &mut y);
        let expected = build_collective(CollectiveKind::JPlus, 5).apply(&psi);
        for (a, b) in y.iter().zip(&expected) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn segment_matches_dense_exponential() {
        for &(n, w) in &[(1usize, 0.0), (2, 1.0), (3, 0.3), (4, 7.0)] {
            let params = ModelParams::new(n, 1.0, w).unwrap();
            let gen = NoJumpGenerator::new(params);
            let psi = random_real_state(n, n as u64);
            let h = gen.max_step();
            let seg = gen.segment(&psi, h);
            let mut out = vec![ZERO; gen.dim()];
            for frac in [0.0, 0.1, 0.5, 1.0] {
                let s = frac * h;
                gen.state_at(&seg, s, &mut out);
                let reference = reference_evolution(&params, &psi, s);
                for (a, b) in out.iter().zip(&reference) {
                    assert!((a - b).norm() < 1e-11, "N = {n}, s = {s}");
                }
                let norm = hilbert::norm_sq(&reference);
                assert!((seg.norm_sq(s) - norm).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn norm_is_non_increasing_and_derivative_is_decay_rate() {
        let params = ModelParams::new(4, 1.0, 2.0).unwrap();
        let gen = NoJumpGenerator::new(params);
        let psi = random_real_state(4, 3);
        let seg = gen.segment(&psi, gen.max_step());
        let mut last = seg.norm_sq(0.0);
        assert!((last - 1.0).abs() < 1e-14);
        for i in 1..=200 {
            let s = seg.step() * i as f64 / 200.0;
            let n = seg.norm_sq(s);
            assert!(n <= last + 1e-15);
            last = n;
        }
        let (_, d0) = seg.norm_and_derivative(0.0);
        assert!((d0 + gen.decay_rate(&psi)).abs() < 1e-12);
    }

    #[test]
    fn crossing_hits_target() {
        let params = ModelParams::new(3, 1.0, 0.5).unwrap();
        let gen = NoJumpGenerator::new(params);
        let psi = StateVector::excited(3).into_amplitudes();
        let seg = gen.segment(&psi, gen.max_step());
        let end = seg.norm_sq(seg.step());
        let target = 0.5 * (1.0 + end);
        let s = seg.crossing(target).unwrap();
        assert!(s > 0.0 && s < seg.step());
        assert!((seg.norm_sq(s) - target).abs() < 1e-12);
        assert!(seg.crossing(end * 0.5).is_err());
    }

    #[test]
    fn single_atom_decay_is_exponential() {
        // N = 1, w = 0: |e> decays as exp(-gamma_c s)
        let params = ModelParams::new(1, 1.0, 0.0).unwrap();
        let gen = NoJumpGenerator::new(params);
        let seg = gen.segment(StateVector::excited(1).amplitudes(), 1.5);
        for s in [0.0, 0.3, 1.0, 1.5] {
            assert!((seg.norm_sq(s) - (-s).exp()).abs() < 1e-14);
        }
    }
}
