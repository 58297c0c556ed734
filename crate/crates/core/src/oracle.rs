//! Exact small-`N` solution of the master equation.
//!
//! Density matrices are vectorized by stacking columns, so
//! `vec(A rho B) = (B^T kron A) vec(rho)` and the element `rho[r, c]` sits at
//! index `c * d + r`. This matches nalgebra's column-major storage.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{self, build_collective, build_single_atom, CollectiveKind, JmDecomposition, SingleAtomKind, SparseOperator};
use crate::ode::{self, OdeOptions};
use crate::params::ModelParams;

/// Default largest `N` for the Liouvillian (operator space of dimension `4^N`).
pub const ORACLE_CAP: usize = 5;

const HERMITIAN_TOL: f64 = 1e-10;
const TRACE_TOL: f64 = 1e-10;
/// Eigenvalues in `[-CLIP_FLOOR, 0)` are treated as rounding and set to zero.
const CLIP_FLOOR: f64 = 1e-8;
/// Relative pivot below which the trace-constrained system is singular.
const PIVOT_RATIO: f64 = 1e-12;
const RESIDUAL_TOL: f64 = 1e-9;

const ONE: C64 = C64 { re: 1.0, im: 0.0 };

/// Superoperator of the master equation acting on `vec(rho)`.
#[derive(Clone, Debug)]
pub struct Liouvillian {
    params: ModelParams,
    matrix: SparseOperator,
    norm: f64,
}

/// `A kron B` for sparse operators.
pub fn kron(a: &SparseOperator, b: &SparseOperator) -> SparseOperator {
    let db = b.dim();
    let b_entries: Vec<_> = b.triplets().collect();
    let mut entries = Vec::with_capacity(a.nnz() * b.nnz());
    for (ra, ca, va) in a.triplets() {
        for &(rb, cb, vb) in &b_entries {
            entries.push((ra * db + rb, ca * db + cb, va * vb));
        }
    }
    SparseOperator::from_triplets(a.dim() * db, entries)
}

/// `D[L] rho = L rho L^dag - (L^dag L rho + rho L^dag L) / 2` as a superoperator.
pub fn dissipator(op: &SparseOperator) -> SparseOperator {
    let d = op.dim();
    let id = SparseOperator::identity(d);
    let ldl = op.adjoint().matmul(op);
    let conj = op.adjoint().transpose();
    let half = C64::new(-0.5, 0.0);
    SparseOperator::linear_combination(&[
        (ONE, &kron(&conj, op)),
        (half, &kron(&id, &ldl)),
        (half, &kron(&ldl.transpose(), &id)),
    ])
}

pub fn build_liouvillian(params: &ModelParams) -> Result<Liouvillian> {
    build_liouvillian_with_cap(params, ORACLE_CAP)
}

pub fn build_liouvillian_with_cap(params: &ModelParams, cap: usize) -> Result<Liouvillian> {
    let n = params.n();
    if n > cap {
        return Err(Error::Capability { what: "exact oracle", n, cap });
    }
    let jm = build_collective(CollectiveKind::JMinus, n);
    let mut terms = vec![(C64::new(params.gamma_c(), 0.0), dissipator(&jm))];
    if params.w() > 0.0 {
        for j in 0..n {
            let sp = build_single_atom(SingleAtomKind::SigmaPlus, j, n)?;
            terms.push((C64::new(params.w(), 0.0), dissipator(&sp)));
        }
    }
    let refs: Vec<(C64, &SparseOperator)> = terms.iter().map(|(c, op)| (*c, op)).collect();
    let matrix = SparseOperator::linear_combination(&refs);
    let norm = matrix.triplets().map(|(_, _, v)| v.norm_sqr()).sum::<f64>().sqrt();
    Ok(Liouvillian { params: *params, matrix, norm })
}

impl Liouvillian {
    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    /// Dimension of the atomic Hilbert space, `2^N`.
    pub fn hilbert_dim(&self) -> usize {
        hilbert::dim(self.params.n())
    }

    pub fn matrix(&self) -> &SparseOperator {
        &self.matrix
    }

    /// Frobenius norm of the superoperator.
    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn apply_vec(&self, x: &[C64]) -> Vec<C64> {
        self.matrix.apply(x)
    }

    /// `d rho / dt` for a density matrix (or any operator).
    pub fn apply(&self, rho: &DMatrix<C64>) -> DMatrix<C64> {
        let d = self.hilbert_dim();
        DMatrix::from_column_slice(d, d, &self.matrix.apply(rho.as_slice()))
    }
}

/// Steady-state density matrix with its physical invariants checked.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    n_atoms: usize,
    matrix: DMatrix<C64>,
}

impl DensityMatrix {
    /// Wraps `matrix` after checking Hermiticity, unit trace and positivity.
    pub fn new(n_atoms: usize, matrix: DMatrix<C64>) -> Result<Self> {
        let d = hilbert::dim(n_atoms);
        if matrix.nrows() != d || matrix.ncols() != d {
            return Err(Error::Argument(format!("density matrix must be {d} x {d}")));
        }
        let rho = DensityMatrix { n_atoms, matrix };
        if let Some(problem) = rho.invariant_violation() {
            return Err(Error::Solver(problem));
        }
        Ok(rho)
    }

    /// `|psi><psi|` for a normalized state.
    pub fn pure(psi: &hilbert::StateVector) -> Result<Self> {
        let v = nalgebra::DVector::from_column_slice(psi.amplitudes());
        Self::new(psi.n_atoms(), &v * v.adjoint())
    }

    pub fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn trace(&self) -> C64 {
        self.matrix.trace()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let eig = SymmetricEigen::new(hermitian_part(&self.matrix));
        eig.eigenvalues.min()
    }

    fn invariant_violation(&self) -> Option<String> {
        let asym = (&self.matrix - self.matrix.adjoint()).camax();
        if asym > HERMITIAN_TOL {
            return Some(format!("density matrix is not Hermitian (deviation {asym:e})"));
        }
        let tr = self.trace();
        if (tr - ONE).norm() > TRACE_TOL {
            return Some(format!("density matrix trace is {tr}"));
        }
        let min = self.min_eigenvalue();
        if min < -CLIP_FLOOR {
            return Some(format!("density matrix has negative eigenvalue {min:e}"));
        }
        None
    }

    /// `Tr[O rho]`.
    pub fn expectation(&self, op: &SparseOperator) -> C64 {
        op.triplets().map(|(r, c, v)| v * self.matrix[(c, r)]).sum()
    }

    /// `(sz, spm, szz)` pair cumulants of atoms 0 and 1.
    pub fn pair_cumulants(&self) -> Result<(f64, f64, f64)> {
        let n = self.n_atoms;
        if n < 2 {
            return Err(Error::Argument("pair cumulants need at least two atoms".into()));
        }
        let sz0 = build_single_atom(SingleAtomKind::SigmaZ, 0, n)?;
        let sz1 = build_single_atom(SingleAtomKind::SigmaZ, 1, n)?;
        let sp0 = build_single_atom(SingleAtomKind::SigmaPlus, 0, n)?;
        let sm1 = build_single_atom(SingleAtomKind::SigmaMinus, 1, n)?;
        let sz = self.expectation(&sz0).re;
        let spm = self.expectation(&sp0.matmul(&sm1)).re;
        let zz = self.expectation(&sz0.matmul(&sz1)).re;
        Ok((sz, spm, zz - sz * sz))
    }
}

fn hermitian_part(m: &DMatrix<C64>) -> DMatrix<C64> {
    (m + m.adjoint()) * C64::new(0.5, 0.0)
}

/// Hermitizes, clips tiny negative eigenvalues to zero and renormalizes.
fn physicalize(n_atoms: usize, raw: DMatrix<C64>) -> Result<DensityMatrix> {
    let h = hermitian_part(&raw);
    let eig = SymmetricEigen::new(h.clone());
    let matrix = if eig.eigenvalues.iter().any(|&l| l < 0.0) {
        let clipped = eig.eigenvalues.map(|l| if (-CLIP_FLOOR..0.0).contains(&l) { 0.0 } else { l });
        let v = &eig.eigenvectors;
        let diag = DMatrix::from_diagonal(&clipped.map(|l| C64::new(l, 0.0)));
        let m = v * diag * v.adjoint();
        hermitian_part(&m)
    } else {
        h
    };
    let tr = matrix.trace();
    DensityMatrix::new(n_atoms, matrix / tr)
}

/// Diagnostics of the null-space solve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SolveReport {
    /// `||L rho|| / ||L||` in Frobenius norms.
    pub relative_residual: f64,
    /// Smallest over largest LU pivot magnitude.
    pub pivot_ratio: f64,
}

/// Unique stationary state of `L`.
///
/// Row 0 of `L` is the equation for `rho[0, 0]`; since the diagonal rows sum
/// to zero it is redundant and is replaced by the trace condition. The
/// resulting square system is solved by dense LU.
pub fn steady_state_dm(l: &Liouvillian) -> Result<DensityMatrix> {
    steady_state_with_report(l).map(|(rho, _)| rho)
}

pub fn steady_state_with_report(l: &Liouvillian) -> Result<(DensityMatrix, SolveReport)> {
    if l.params.w() <= 0.0 {
        return Err(Error::Degenerate("w = 0 leaves every dark state of J- stationary".into()));
    }
    let d = l.hilbert_dim();
    let big = d * d;
    // the generator is real for this model
    let mut a = DMatrix::<f64>::zeros(big, big);
    for (r, c, v) in l.matrix.triplets() {
        debug_assert!(v.im == 0.0);
        a[(r, c)] = v.re;
    }
    for k in 0..big {
        a[(0, k)] = 0.0;
    }
    for i in 0..d {
        a[(0, i * d + i)] = 1.0;
    }
    let lu = a.lu();
    let u = lu.u();
    let pivots = u.diagonal().map(f64::abs);
    let pivot_ratio = pivots.min() / pivots.max();
    if !(pivot_ratio > PIVOT_RATIO) {
        return Err(Error::Degenerate(format!("stationary subspace is not one-dimensional (pivot ratio {pivot_ratio:e})")));
    }
    let mut rhs = nalgebra::DVector::<f64>::zeros(big);
    rhs[0] = 1.0;
    let x = lu.solve(&rhs).ok_or_else(|| Error::Solver("trace-constrained system is singular".into()))?;
    let raw = DMatrix::from_iterator(d, d, x.iter().map(|&v| C64::new(v, 0.0)));
    let rho = physicalize(l.params.n(), raw)?;
    let residual = hilbert::norm_sq(&l.apply_vec(rho.matrix.as_slice())).sqrt();
    let relative_residual = residual / l.norm;
    if relative_residual > RESIDUAL_TOL {
        return Err(Error::Solver(format!("steady-state residual {relative_residual:e} exceeds {RESIDUAL_TOL:e}")));
    }
    Ok((rho, SolveReport { relative_residual, pivot_ratio }))
}

fn propagation_options() -> OdeOptions {
    OdeOptions { rtol: 1e-8, atol: 1e-10, ..Default::default() }
}

fn check_grid(tau_grid: &[f64]) -> Result<()> {
    if tau_grid.first().is_some_and(|&t| t < 0.0) || tau_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Argument("tau grid must be non-decreasing from 0".into()));
    }
    Ok(())
}

/// `exp(L tau) x` for every `tau` on the grid, by adaptive time stepping.
pub fn propagate(l: &Liouvillian, x: &DMatrix<C64>, tau_grid: &[f64]) -> Result<Vec<DMatrix<C64>>> {
    check_grid(tau_grid)?;
    let d = l.hilbert_dim();
    let y0 = x.as_slice().to_vec();
    let states = ode::integrate(
        |_, y: &Vec<C64>, dy: &mut Vec<C64>| l.matrix.apply_into(y, dy),
        0.0,
        y0,
        tau_grid,
        &propagation_options(),
    )?;
    Ok(states.into_iter().map(|v| DMatrix::from_vec(d, d, v)).collect())
}

/// `C(tau) = Tr[sigma+_0 exp(L tau)(sigma-_1 rho_ss)]`, the dipole
/// correlation between two distinct atoms.
pub fn regression_correlation(l: &Liouvillian, rho_ss: &DensityMatrix, tau_grid: &[f64]) -> Result<Vec<C64>> {
    let n = l.params.n();
    if n < 2 {
        return Err(Error::Argument("the two-atom correlation needs N >= 2".into()));
    }
    if rho_ss.n_atoms != n {
        return Err(Error::Argument("density matrix and Liouvillian disagree on N".into()));
    }
    let sm1 = build_single_atom(SingleAtomKind::SigmaMinus, 1, n)?.to_dense();
    let sp0 = build_single_atom(SingleAtomKind::SigmaPlus, 0, n)?;
    let deformed = sm1 * &rho_ss.matrix;
    let states = propagate(l, &deformed, tau_grid)?;
    Ok(states
        .iter()
        .map(|x| sp0.triplets().map(|(r, c, v)| v * x[(c, r)]).sum())
        .collect())
}

/// Least-squares slope of `-ln|C|` against `tau`, over points where `|C|`
/// exceeds `floor` times its largest value. `None` with fewer than two points.
pub fn fitted_decay_rate(tau: &[f64], c: &[C64], floor: f64) -> Option<f64> {
    let peak = c.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let pts: Vec<(f64, f64)> = tau
        .iter()
        .zip(c)
        .filter(|(_, z)| z.norm() > floor * peak && z.norm() > 0.0)
        .map(|(&t, z)| (t, z.norm().ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let (mt, my) = pts.iter().fold((0.0, 0.0), |(a, b), (t, y)| (a + t / n, b + y / n));
    let sxy: f64 = pts.iter().map(|(t, y)| (t - mt) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(t, _)| (t - mt) * (t - mt)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(-sxy / sxx)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationRow {
    pub j: String,
    pub m: String,
    pub p: f64,
}

/// Regression baseline written by [`oracle_fixture`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleFixture {
    pub params: ModelParams,
    pub observables: BTreeMap<String, f64>,
    pub populations: Vec<PopulationRow>,
    pub residual: f64,
}

/// Steady state plus the observables and `(J, M)` populations derived from it.
pub fn oracle_fixture(params: &ModelParams) -> Result<OracleFixture> {
    let l = build_liouvillian(params)?;
    let (rho, report) = steady_state_with_report(&l)?;
    let n = params.n();
    let mut observables = BTreeMap::new();
    let jpjm = rho.expectation(&build_collective(CollectiveKind::JpJm, n)).re;
    let jz = rho.expectation(&build_collective(CollectiveKind::Jz, n)).re;
    observables.insert("JpJm".to_string(), jpjm);
    observables.insert("Jz".to_string(), jz);
    observables.insert("sigma_z_0".to_string(), rho.expectation(&build_single_atom(SingleAtomKind::SigmaZ, 0, n)?).re);
    observables.insert("I".to_string(), params.gamma_c() * jpjm);
    observables.insert("N_e".to_string(), params.n_f64() / 2.0 + jz);
    if n >= 2 {
        let (_, spm, szz) = rho.pair_cumulants()?;
        observables.insert("spm".to_string(), spm);
        observables.insert("szz_c".to_string(), szz);
    }
    let decomp = hilbert::jm_decomposition(n)?;
    Ok(OracleFixture { params: *params, observables, populations: population_rows(&decomp, &rho), residual: report.relative_residual })
}

fn population_rows(decomp: &JmDecomposition, rho: &DensityMatrix) -> Vec<PopulationRow> {
    decomp
        .subspaces()
        .iter()
        .map(|s| PopulationRow { j: s.j.to_string(), m: s.m.to_string(), p: s.population_dm(&rho.matrix) })
        .collect()
}
