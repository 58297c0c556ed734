//! Product basis of `N` two-level atoms, sparse operators on it, and the
//! decomposition into simultaneous eigenspaces of `J^2` and `Jz`.
//!
//! Basis index `b` stores atom `j` in bit `j` (atom 0 is the least
//! significant bit); a set bit means the atom is excited.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest `N` for which [`jm_decomposition`] runs by default.
pub const DECOMPOSITION_CAP: usize = 14;

/// Tolerance for snapping numerical `J^2` eigenvalues onto `J(J+1)`.
const EIGEN_SNAP: f64 = 1e-6;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };

pub fn dim(n_atoms: usize) -> usize {
    1usize << n_atoms
}

/// Number of excited atoms in basis state `b`.
#[inline]
pub fn excitations(b: usize) -> usize {
    b.count_ones() as usize
}

/// Basis states with exactly `k` excitations, in increasing index order.
pub fn sector_indices(n_atoms: usize, k: usize) -> Vec<usize> {
    (0..dim(n_atoms)).filter(|&b| excitations(b) == k).collect()
}

/// A half-integer stored as twice its value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct HalfInt(pub i32);

impl HalfInt {
    pub fn from_twice(twice: i32) -> Self {
        HalfInt(twice)
    }

    pub fn twice(&self) -> i32 {
        self.0
    }

    pub fn value(&self) -> f64 {
        self.0 as f64 / 2.0
    }
}

impl fmt::Display for HalfInt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0 % 2 == 0 {
            write!(f, "{}", self.0 / 2)
        } else {
            write!(f, "{}/2", self.0)
        }
    }
}

/// Pure state over the `2^N` product basis.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    n_atoms: usize,
    amps: Vec<C64>,
}

impl StateVector {
    pub fn from_amplitudes(n_atoms: usize, amps: Vec<C64>) -> Result<Self> {
        if amps.len() != dim(n_atoms) {
            return Err(Error::Argument(format!(
                "state of length {} does not match 2^{n_atoms}",
                amps.len()
            )));
        }
        Ok(StateVector { n_atoms, amps })
    }

    pub fn basis(n_atoms: usize, index: usize) -> Self {
        let mut amps = vec![ZERO; dim(n_atoms)];
        amps[index] = ONE;
        StateVector { n_atoms, amps }
    }

    /// All atoms in `|g>`.
    pub fn ground(n_atoms: usize) -> Self {
        Self::basis(n_atoms, 0)
    }

    /// All atoms in `|e>`.
    pub fn excited(n_atoms: usize) -> Self {
        Self::basis(n_atoms, dim(n_atoms) - 1)
    }

    /// Normalized superposition `sum_k c_k |b_k>`.
    pub fn superposition(n_atoms: usize, terms: &[(usize, f64)]) -> Self {
        let mut amps = vec![ZERO; dim(n_atoms)];
        for &(b, c) in terms {
            amps[b] += C64::new(c, 0.0);
        }
        let mut psi = StateVector { n_atoms, amps };
        psi.normalize();
        psi
    }

    pub fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amps
    }

    pub fn amplitudes_mut(&mut self) -> &mut [C64] {
        &mut self.amps
    }

    pub fn into_amplitudes(self) -> Vec<C64> {
        self.amps
    }

    pub fn norm_sq(&self) -> f64 {
        norm_sq(&self.amps)
    }

    pub fn normalize(&mut self) {
        let n = self.norm_sq().sqrt();
        if n > 0.0 {
            let inv = 1.0 / n;
            self.amps.iter_mut().for_each(|a| *a *= inv);
        }
    }

    /// `<self|other>`
    pub fn inner(&self, other: &StateVector) -> C64 {
        inner(&self.amps, &other.amps)
    }

    /// `<psi|op|psi>` without normalizing.
    pub fn expectation(&self, op: &SparseOperator) -> C64 {
        inner(&self.amps, &op.apply(&self.amps))
    }
}

pub fn norm_sq(v: &[C64]) -> f64 {
    v.iter().map(|a| a.norm_sqr()).sum()
}

pub(crate) fn inner(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Square sparse complex matrix in compressed-row form.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseOperator {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<C64>,
    hermitian: bool,
}

impl SparseOperator {
    /// Builds from `(row, col, value)` entries; duplicates are summed and
    /// exact zeros dropped. The Hermitian flag is computed, not trusted.
    pub fn from_triplets(dim: usize, mut entries: Vec<(usize, usize, C64)>) -> Self {
        entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; dim + 1];
        let mut cols = Vec::with_capacity(entries.len());
        let mut vals: Vec<C64> = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        let mut rows = Vec::with_capacity(entries.len());
        for (r, c, v) in entries {
            assert!(r < dim && c < dim, "entry ({r}, {c}) outside dimension {dim}");
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
            } else {
                rows.push(r);
                cols.push(c);
                vals.push(v);
                last = Some((r, c));
            }
        }
        let mut keep_rows = Vec::with_capacity(rows.len());
        let mut keep_cols = Vec::with_capacity(rows.len());
        let mut keep_vals = Vec::with_capacity(rows.len());
        for ((r, c), v) in rows.into_iter().zip(cols).zip(vals) {
            if v != ZERO {
                keep_rows.push(r);
                keep_cols.push(c);
                keep_vals.push(v);
            }
        }
        for &r in &keep_rows {
            row_ptr[r + 1] += 1;
        }
        for i in 0..dim {
            row_ptr[i + 1] += row_ptr[i];
        }
        let mut op = SparseOperator { dim, row_ptr, cols: keep_cols, vals: keep_vals, hermitian: false };
        op.hermitian = op.check_hermitian(0.0);
        op
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_triplets(dim, (0..dim).map(|i| (i, i, ONE)).collect())
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let dim = values.len();
        Self::from_triplets(dim, values.iter().enumerate().map(|(i, &v)| (i, i, C64::new(v, 0.0))).collect())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Hermitian as stored (exact comparison at construction).
    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        (0..self.dim).flat_map(move |r| {
            (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |k| (r, self.cols[k], self.vals[k]))
        })
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        let range = self.row_ptr[row]..self.row_ptr[row + 1];
        match self.cols[range.clone()].binary_search(&col) {
            Ok(k) => self.vals[range.start + k],
            Err(_) => ZERO,
        }
    }

    pub fn apply(&self, x: &[C64]) -> Vec<C64> {
        let mut y = vec![ZERO; self.dim];
        self.apply_into(x, &mut y);
        y
    }

    pub fn apply_into(&self, x: &[C64], y: &mut [C64]) {
        debug_assert_eq!(x.len(), self.dim);
        debug_assert_eq!(y.len(), self.dim);
        for (r, out) in y.iter_mut().enumerate() {
            let mut acc = ZERO;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            *out = acc;
        }
    }

    pub fn adjoint(&self) -> Self {
        Self::from_triplets(self.dim, self.triplets().map(|(r, c, v)| (c, r, v.conj())).collect())
    }

    pub fn transpose(&self) -> Self {
        Self::from_triplets(self.dim, self.triplets().map(|(r, c, v)| (c, r, v)).collect())
    }

    pub fn scale(&self, factor: C64) -> Self {
        Self::from_triplets(self.dim, self.triplets().map(|(r, c, v)| (r, c, v * factor)).collect())
    }

    /// `sum_k c_k A_k`
    pub fn linear_combination(terms: &[(C64, &SparseOperator)]) -> Self {
        let dim = terms.first().map(|t| t.1.dim).unwrap_or(0);
        let mut entries = Vec::new();
        for (c, op) in terms {
            assert_eq!(op.dim, dim, "dimension mismatch in linear combination");
            entries.extend(op.triplets().map(|(r, col, v)| (r, col, v * c)));
        }
        Self::from_triplets(dim, entries)
    }

    /// Sparse product `self * rhs`.
    pub fn matmul(&self, rhs: &SparseOperator) -> Self {
        assert_eq!(self.dim, rhs.dim, "dimension mismatch in product");
        let mut entries = Vec::new();
        let mut acc = vec![ZERO; self.dim];
        let mut touched: Vec<usize> = Vec::new();
        let mut seen = vec![false; self.dim];
        for r in 0..self.dim {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let a = self.vals[k];
                let mid = self.cols[k];
                for l in rhs.row_ptr[mid]..rhs.row_ptr[mid + 1] {
                    let c = rhs.cols[l];
                    if !seen[c] {
                        seen[c] = true;
                        touched.push(c);
                    }
                    acc[c] += a * rhs.vals[l];
                }
            }
            for &c in &touched {
                entries.push((r, c, acc[c]));
                acc[c] = ZERO;
                seen[c] = false;
            }
            touched.clear();
        }
        Self::from_triplets(self.dim, entries)
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for (r, c, v) in self.triplets() {
            m[(r, c)] = v;
        }
        m
    }

    /// Largest entrywise deviation from Hermiticity is at most `tol`.
    pub fn check_hermitian(&self, tol: f64) -> bool {
        self.triplets().all(|(r, c, v)| (v - self.get(c, r).conj()).norm() <= tol)
    }

    /// Writes one `row col re im` line per stored entry.
    pub fn write_coo<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# dim {} nnz {}", self.dim, self.nnz())?;
        for (r, c, v) in self.triplets() {
            writeln!(out, "{r} {c} {} {}", v.re, v.im)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SingleAtomKind {
    SigmaMinus,
    SigmaPlus,
    SigmaZ,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CollectiveKind {
    JMinus,
    JPlus,
    Jz,
    JSquared,
    /// `J+ J-`
    JpJm,
}

fn check_atom(j: usize, n_atoms: usize) -> Result<()> {
    if j >= n_atoms {
        return Err(Error::Argument(format!("atom index {j} out of range for N = {n_atoms}")));
    }
    Ok(())
}

/// `sigma-`, `sigma+` or `sigma_z = |e><e| - |g><g|` acting on atom `j`.
pub fn build_single_atom(kind: SingleAtomKind, j: usize, n_atoms: usize) -> Result<SparseOperator> {
    check_atom(j, n_atoms)?;
    let d = dim(n_atoms);
    let bit = 1usize << j;
    let entries = match kind {
        SingleAtomKind::SigmaMinus => (0..d).filter(|b| b & bit != 0).map(|b| (b ^ bit, b, ONE)).collect(),
        SingleAtomKind::SigmaPlus => (0..d).filter(|b| b & bit == 0).map(|b| (b | bit, b, ONE)).collect(),
        SingleAtomKind::SigmaZ => (0..d)
            .map(|b| (b, b, C64::new(if b & bit != 0 { 1.0 } else { -1.0 }, 0.0)))
            .collect(),
    };
    Ok(SparseOperator::from_triplets(d, entries))
}

pub fn build_collective(kind: CollectiveKind, n_atoms: usize) -> SparseOperator {
    let d = dim(n_atoms);
    let half_n = n_atoms as f64 / 2.0;
    match kind {
        CollectiveKind::JMinus => {
            let mut entries = Vec::new();
            for b in 0..d {
                for j in 0..n_atoms {
                    if b & (1 << j) != 0 {
                        entries.push((b ^ (1 << j), b, ONE));
                    }
                }
            }
            SparseOperator::from_triplets(d, entries)
        }
        CollectiveKind::JPlus => build_collective(CollectiveKind::JMinus, n_atoms).adjoint(),
        CollectiveKind::Jz => {
            let diag: Vec<f64> = (0..d).map(|b| excitations(b) as f64 - half_n).collect();
            SparseOperator::diagonal(&diag)
        }
        CollectiveKind::JpJm => {
            let jm = build_collective(CollectiveKind::JMinus, n_atoms);
            jm.adjoint().matmul(&jm)
        }
        CollectiveKind::JSquared => {
            // J^2 = J+J- + Jz^2 - Jz
            let jpjm = build_collective(CollectiveKind::JpJm, n_atoms);
            let diag: Vec<f64> = (0..d)
                .map(|b| {
                    let m = excitations(b) as f64 - half_n;
                    m * m - m
                })
                .collect();
            SparseOperator::linear_combination(&[(ONE, &jpjm), (ONE, &SparseOperator::diagonal(&diag))])
        }
    }
}

pub fn binomial(n: usize, k: i64) -> u128 {
    if k < 0 || k as usize > n {
        return 0;
    }
    let k = (k as usize).min(n - k as usize);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// Number of degenerate copies of each `(J, M)` for `N` spins one-half:
/// `C(N, N/2 - J) - C(N, N/2 - J - 1)`. Zero when `J` is not allowed.
pub fn multiplicity(n_atoms: usize, j: HalfInt) -> u128 {
    let j2 = j.twice() as i64;
    let n = n_atoms as i64;
    if j2 < 0 || j2 > n || (n - j2) % 2 != 0 {
        return 0;
    }
    let k = (n - j2) / 2;
    binomial(n_atoms, k) - binomial(n_atoms, k - 1)
}

/// One `(J, M)` eigenspace with an orthonormal basis.
///
/// Basis vectors are real and live on the `Jz` sector with `M + N/2`
/// excitations; they are stored as columns over that sector's indices.
#[derive(Clone, Debug)]
pub struct JMSubspace {
    pub j: HalfInt,
    pub m: HalfInt,
    indices: Arc<Vec<usize>>,
    vectors: DMatrix<f64>,
}

impl JMSubspace {
    pub fn multiplicity(&self) -> usize {
        self.vectors.ncols()
    }

    /// Product-basis indices of the sector holding this subspace.
    pub fn sector(&self) -> &[usize] {
        &self.indices
    }

    /// Basis vectors as columns over [`Self::sector`].
    pub fn sector_vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn basis_vector(&self, xi: usize, n_atoms: usize) -> StateVector {
        let mut amps = vec![ZERO; dim(n_atoms)];
        for (local, &b) in self.indices.iter().enumerate() {
            amps[b] = C64::new(self.vectors[(local, xi)], 0.0);
        }
        StateVector { n_atoms, amps }
    }

    /// Overlaps `<J,M,xi|psi>` for every `xi`.
    pub fn overlaps(&self, psi: &[C64]) -> Vec<C64> {
        (0..self.multiplicity())
            .map(|xi| {
                self.indices
                    .iter()
                    .enumerate()
                    .map(|(local, &b)| psi[b] * self.vectors[(local, xi)])
                    .sum()
            })
            .collect()
    }

    /// `<psi|P|psi>` for the projector onto this subspace.
    pub fn population(&self, psi: &[C64]) -> f64 {
        self.overlaps(psi).iter().map(|c| c.norm_sqr()).sum()
    }

    /// `Tr[P rho]`.
    pub fn population_dm(&self, rho: &DMatrix<C64>) -> f64 {
        let mut total = 0.0;
        for xi in 0..self.multiplicity() {
            let mut acc = ZERO;
            for (a, &ba) in self.indices.iter().enumerate() {
                let va = self.vectors[(a, xi)];
                if va == 0.0 {
                    continue;
                }
                for (b, &bb) in self.indices.iter().enumerate() {
                    acc += rho[(ba, bb)] * (va * self.vectors[(b, xi)]);
                }
            }
            total += acc.re;
        }
        total
    }

    /// `P psi` as a full-length vector.
    pub fn project(&self, psi: &[C64]) -> Vec<C64> {
        let coeffs = self.overlaps(psi);
        let mut out = vec![ZERO; psi.len()];
        for (local, &b) in self.indices.iter().enumerate() {
            out[b] = coeffs.iter().enumerate().map(|(xi, c)| c * self.vectors[(local, xi)]).sum();
        }
        out
    }
}

/// Complete orthogonal decomposition of the product space into `(J, M)` blocks.
#[derive(Clone, Debug)]
pub struct JmDecomposition {
    n_atoms: usize,
    subspaces: Vec<JMSubspace>,
}

impl JmDecomposition {
    pub fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    /// Ordered by `J` descending, then `M` descending.
    pub fn subspaces(&self) -> &[JMSubspace] {
        &self.subspaces
    }

    pub fn find(&self, j: HalfInt, m: HalfInt) -> Option<&JMSubspace> {
        self.subspaces.iter().find(|s| s.j == j && s.m == m)
    }

    pub fn position(&self, j: HalfInt, m: HalfInt) -> Option<usize> {
        self.subspaces.iter().position(|s| s.j == j && s.m == m)
    }

    pub fn total_dimension(&self) -> usize {
        self.subspaces.iter().map(|s| s.multiplicity()).sum()
    }
}

pub fn jm_decomposition(n_atoms: usize) -> Result<JmDecomposition> {
    jm_decomposition_with_cap(n_atoms, DECOMPOSITION_CAP)
}

/// Diagonalizes `J^2` inside each `Jz` sector and groups eigenvectors by `J`.
pub fn jm_decomposition_with_cap(n_atoms: usize, cap: usize) -> Result<JmDecomposition> {
    if n_atoms < 1 {
        return Err(Error::validation("N", "atom number must be at least 1"));
    }
    if n_atoms > cap {
        return Err(Error::Capability { what: "(J, M) decomposition", n: n_atoms, cap });
    }
    let j2_op = build_collective(CollectiveKind::JSquared, n_atoms);
    let d = dim(n_atoms);
    let mut local_of = vec![0usize; d];
    let mut subspaces = Vec::new();

    for k in 0..=n_atoms {
        let indices = Arc::new(sector_indices(n_atoms, k));
        let m2 = 2 * k as i32 - n_atoms as i32;
        for (local, &b) in indices.iter().enumerate() {
            local_of[b] = local;
        }
        let size = indices.len();
        let mut block = DMatrix::<f64>::zeros(size, size);
        for (a, &b) in indices.iter().enumerate() {
            for idx in j2_op.row_ptr[b]..j2_op.row_ptr[b + 1] {
                block[(a, local_of[j2_op.cols[idx]])] = j2_op.vals[idx].re;
            }
        }
        let eig = SymmetricEigen::new(block);
        let mut groups: BTreeMap<i32, Vec<usize>> = BTreeMap::new();
        for (col, &lambda) in eig.eigenvalues.iter().enumerate() {
            let j = (-1.0 + (1.0 + 4.0 * lambda.max(0.0)).sqrt()) / 2.0;
            let j2 = (2.0 * j).round() as i32;
            let jv = j2 as f64 / 2.0;
            if (lambda - jv * (jv + 1.0)).abs() > EIGEN_SNAP || j2 < m2.abs() || (j2 - m2) % 2 != 0 {
                return Err(Error::Solver(format!(
                    "J^2 eigenvalue {lambda} in sector M = {} is not of the form J(J+1)",
                    HalfInt(m2)
                )));
            }
            groups.entry(j2).or_default().push(col);
        }
        for (j2, cols) in groups {
            let expected = multiplicity(n_atoms, HalfInt(j2));
            if cols.len() as u128 != expected {
                return Err(Error::Solver(format!(
                    "found {} states with J = {}, M = {}, expected {expected}",
                    cols.len(),
                    HalfInt(j2),
                    HalfInt(m2)
                )));
            }
            let vectors = eig.eigenvectors.select_columns(cols.iter());
            subspaces.push(JMSubspace { j: HalfInt(j2), m: HalfInt(m2), indices: indices.clone(), vectors });
        }
    }
    subspaces.sort_by(|a, b| b.j.cmp(&a.j).then(b.m.cmp(&a.m)));
    Ok(JmDecomposition { n_atoms, subspaces })
}

/// `P_{M,J} = sum_xi |J,M,xi><J,M,xi|` on the full product space.
pub fn projector(sub: &JMSubspace, n_atoms: usize) -> SparseOperator {
    let mut entries = Vec::new();
    let v = &sub.vectors;
    for (a, &ba) in sub.indices.iter().enumerate() {
        for (b, &bb) in sub.indices.iter().enumerate() {
            let value: f64 = (0..v.ncols()).map(|xi| v[(a, xi)] * v[(b, xi)]).sum();
            if value.abs() > 1e-15 {
                entries.push((ba, bb, C64::new(value, 0.0)));
            }
        }
    }
    SparseOperator::from_triplets(dim(n_atoms), entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    #[test]
    fn single_atom_lowering() {
        let sm = build_single_atom(SingleAtomKind::SigmaMinus, 0, 1).unwrap();
        let e = StateVector::excited(1);
        let g = StateVector::ground(1);
        assert_eq!(sm.apply(e.amplitudes()), g.amplitudes().to_vec());
        assert_eq!(sm.apply(g.amplitudes()), vec![ZERO, ZERO]);
    }

    #[test]
    fn sigma_z_and_exclusion() {
        // |g e>: atom 0 ground, atom 1 excited -> index 0b10
        let sz0 = build_single_atom(SingleAtomKind::SigmaZ, 0, 2).unwrap();
        let ge = StateVector::basis(2, 0b10);
        let out = sz0.apply(ge.amplitudes());
        assert_eq!(out[0b10], c(-1.0));
        assert_eq!(out.iter().filter(|a| **a != ZERO).count(), 1);

        let sp1 = build_single_atom(SingleAtomKind::SigmaPlus, 1, 2).unwrap();
        let ee = StateVector::excited(2);
        assert!(sp1.apply(ee.amplitudes()).iter().all(|a| *a == ZERO));
        assert!(build_single_atom(SingleAtomKind::SigmaPlus, 2, 2).is_err());
    }

    #[test]
    fn ladder_operators_are_adjoint() {
        for n in 1..=4 {
            for j in 0..n {
                let sm = build_single_atom(SingleAtomKind::SigmaMinus, j, n).unwrap();
                let sp = build_single_atom(SingleAtomKind::SigmaPlus, j, n).unwrap();
                assert_eq!(sm.adjoint(), sp);
            }
            let jm = build_collective(CollectiveKind::JMinus, n);
            assert_eq!(jm.adjoint(), build_collective(CollectiveKind::JPlus, n));
            assert!(build_collective(CollectiveKind::JSquared, n).is_hermitian());
            assert!(build_collective(CollectiveKind::JpJm, n).is_hermitian());
        }
    }

    #[test]
    fn collective_lowering_two_atoms() {
        let jm = build_collective(CollectiveKind::JMinus, 2);
        let out = jm.apply(StateVector::excited(2).amplitudes());
        assert_eq!(out, vec![ZERO, ONE, ONE, ZERO]);
        assert!((norm_sq(&out) - 2.0).abs() < 1e-15);
        let jpjm = build_collective(CollectiveKind::JpJm, 2);
        assert_eq!(StateVector::excited(2).expectation(&jpjm), c(2.0));
    }

    #[test]
    fn trace_of_j_squared_four_atoms() {
        let j2 = build_collective(CollectiveKind::JSquared, 4);
        let trace: f64 = (0..16).map(|i| j2.get(i, i).re).sum();
        let from_multiplicities: f64 = [(4, 1), (2, 3), (0, 2)]
            .iter()
            .map(|&(j2, d)| {
                let j = j2 as f64 / 2.0;
                d as f64 * (j2 + 1) as f64 * j * (j + 1.0)
            })
            .sum();
        assert_eq!(from_multiplicities, 48.0);
        assert!((trace - 48.0).abs() < 1e-12);
    }

    #[test]
    fn distinct_atoms_commute() {
        let n = 3;
        let kinds = [SingleAtomKind::SigmaMinus, SingleAtomKind::SigmaPlus, SingleAtomKind::SigmaZ];
        for &ka in &kinds {
            for &kb in &kinds {
                for a in 0..n {
                    for b in 0..n {
                        if a == b {
                            continue;
                        }
                        let x = build_single_atom(ka, a, n).unwrap();
                        let y = build_single_atom(kb, b, n).unwrap();
                        assert_eq!(x.matmul(&y), y.matmul(&x));
                    }
                }
            }
        }
    }

    #[test]
    fn small_decompositions() {
        let d2 = jm_decomposition(2).unwrap();
        let shape: Vec<_> = d2.subspaces().iter().map(|s| (s.j.twice(), s.m.twice(), s.multiplicity())).collect();
        assert_eq!(shape, vec![(2, 2, 1), (2, 0, 1), (2, -2, 1), (0, 0, 1)]);

        let d1 = jm_decomposition(1).unwrap();
        assert_eq!(d1.subspaces().len(), 2);
        assert!(d1.subspaces().iter().all(|s| s.j == HalfInt(1) && s.multiplicity() == 1));

        let d4 = jm_decomposition(4).unwrap();
        for (j2, mult) in [(4, 1), (2, 3), (0, 2)] {
            let subs: Vec<_> = d4.subspaces().iter().filter(|s| s.j.twice() == j2).collect();
            assert_eq!(subs.len(), j2 as usize + 1);
            assert!(subs.iter().all(|s| s.multiplicity() == mult));
        }
        assert_eq!(d4.total_dimension(), 16);
    }

    #[test]
    fn decomposition_cap() {
        let err = jm_decomposition_with_cap(6, 5).unwrap_err();
        assert!(matches!(err, Error::Capability { cap: 5, .. }));
        assert!(jm_decomposition(DECOMPOSITION_CAP + 1).is_err());
    }

    #[test]
    fn singlet_projector() {
        let d2 = jm_decomposition(2).unwrap();
        let singlet = d2.find(HalfInt(0), HalfInt(0)).unwrap();
        let p = projector(singlet, 2);
        let s = 0.5;
        // (|ge> - |eg>)/sqrt(2) with |ge> = 0b10, |eg> = 0b01
        for (r, col, v) in [(1, 1, s), (2, 2, s), (1, 2, -s), (2, 1, -s)] {
            assert!((p.get(r, col).re - v).abs() < 1e-12);
        }
        assert_eq!(p.nnz(), 4);
    }

    #[test]
    fn projectors_complete_and_idempotent() {
        let n = 4;
        let d4 = jm_decomposition(n).unwrap();
        let mut sum = DMatrix::<C64>::zeros(16, 16);
        for sub in d4.subspaces() {
            let p = projector(sub, n).to_dense();
            let p2 = &p * &p;
            assert!((&p2 - &p).camax() < 1e-10);
            let trace: f64 = (0..16).map(|i| p[(i, i)].re).sum();
            assert!((trace - sub.multiplicity() as f64).abs() < 1e-10);
            sum += p;
        }
        assert!((sum - DMatrix::<C64>::identity(16, 16)).camax() < 1e-10);
    }

    #[test]
    fn basis_vectors_are_joint_eigenvectors() {
        for n in 1..=6 {
            let dec = jm_decomposition(n).unwrap();
            let j2 = build_collective(CollectiveKind::JSquared, n);
            let jz = build_collective(CollectiveKind::Jz, n);
            let mut all = Vec::new();
            for sub in dec.subspaces() {
                let (j, m) = (sub.j.value(), sub.m.value());
                for xi in 0..sub.multiplicity() {
                    let v = sub.basis_vector(xi, n);
                    let a = j2.apply(v.amplitudes());
                    let b = jz.apply(v.amplitudes());
                    for i in 0..dim(n) {
                        assert!((a[i] - v.amplitudes()[i] * (j * (j + 1.0))).norm() < 1e-8);
                        assert!((b[i] - v.amplitudes()[i] * m).norm() < 1e-8);
                    }
                    all.push(v);
                }
            }
            assert_eq!(all.len(), dim(n));
            for (i, a) in all.iter().enumerate() {
                for (k, b) in all.iter().enumerate() {
                    let expect = if i == k { 1.0 } else { 0.0 };
                    assert!((a.inner(b) - c(expect)).norm() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn multiplicity_formula_matches_diagonalization() {
        // count J^2 eigenvalues of the full dense matrix, independent of the sector code
        for n in 1..=8usize {
            let j2 = build_collective(CollectiveKind::JSquared, n).to_dense().map(|z| z.re);
            let eig = SymmetricEigen::new(j2);
            let mut counts: BTreeMap<i32, u128> = BTreeMap::new();
            for &lambda in eig.eigenvalues.iter() {
                let j2 = (-1.0 + (1.0 + 4.0 * lambda.max(0.0)).sqrt()).round() as i32;
                *counts.entry(j2).or_default() += 1;
            }
            for (j2, count) in counts {
                assert_eq!(count, (j2 as u128 + 1) * multiplicity(n, HalfInt(j2)), "N = {n}, 2J = {j2}");
            }
            let total: u128 = (0..=n as i32).map(|j2| (j2 as u128 + 1) * multiplicity(n, HalfInt(j2))).sum();
            assert_eq!(total, dim(n) as u128);
        }
    }

    #[test]
    fn coo_dump() {
        let mut buf = Vec::new();
        build_single_atom(SingleAtomKind::SigmaMinus, 0, 1).unwrap().write_coo(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "# dim 2 nnz 1\n0 1 1 0\n");
    }

    fn random_state(n: usize, seed: &[f64]) -> Vec<C64> {
        let d = dim(n);
        let mut v: Vec<C64> = (0..d).map(|i| C64::new(seed[(2 * i) % seed.len()], seed[(2 * i + 1) % seed.len()])).collect();
        let norm = norm_sq(&v).sqrt();
        v.iter_mut().for_each(|a| *a /= norm);
        v
    }

    proptest! {
        #[test]
        fn jpjm_operator_identity(n in 1usize..6, seed in prop::collection::vec(-1.0f64..1.0, 64)) {
            prop_assume!(seed.iter().any(|x| x.abs() > 1e-3));
            let psi = random_state(n, &seed);
            let ev = |k| inner(&psi, &build_collective(k, n).apply(&psi));
            let jz = build_collective(CollectiveKind::Jz, n);
            let jz2 = jz.matmul(&jz);
            let lhs = ev(CollectiveKind::JpJm);
            let rhs = ev(CollectiveKind::JSquared) - inner(&psi, &jz2.apply(&psi)) + ev(CollectiveKind::Jz);
            prop_assert!((lhs - rhs).norm() < 1e-8);
        }
    }
}
