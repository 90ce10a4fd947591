//! Truncated Fock-space linear algebra.
//!
//! Single-mode operators live on `d = n_max + 1` levels. Two-mode operators use
//! the composite index `m = d * r + s` for `|r>_A |s>_B`. Quadratures follow
//! `x = (a + a†)/√2`, so the vacuum variance is 1/2 everywhere in the crate.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Quadrature variance of the vacuum, `x = (a + a†)/√2`.
pub const VACUUM_VARIANCE: f64 = 0.5;
/// Eigenvalues below this are treated as exact zeros in entropy sums.
pub const EIGENVALUE_FLOOR: f64 = 1e-12;
/// Most negative eigenvalue still accepted as positive semidefinite.
pub const PSD_TOLERANCE: f64 = 1e-8;
pub const HERMITIAN_TOLERANCE: f64 = 1e-10;
pub const TRACE_TOLERANCE: f64 = 1e-10;

/// Maximum retained photon number per mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct Cutoff(usize);

impl Cutoff {
    pub fn new(n_max: usize) -> Result<Self> {
        if n_max < 1 {
            return Err(Error::InvalidCutoff(n_max));
        }
        Ok(Self(n_max))
    }

    pub fn n_max(self) -> usize {
        self.0
    }

    /// Single-mode dimension.
    pub fn dim(self) -> usize {
        self.0 + 1
    }

    /// Two-mode dimension `d²`.
    pub fn joint_dim(self) -> usize {
        self.dim() * self.dim()
    }

    /// Composite index of `|r>_A |s>_B`.
    pub fn index(self, r: usize, s: usize) -> usize {
        self.dim() * r + s
    }

    fn ensure_same(self, other: Cutoff) -> Result<()> {
        if self != other {
            return Err(Error::CutoffMismatch { left: self.0, right: other.0 });
        }
        Ok(())
    }
}

impl Default for Cutoff {
    fn default() -> Self {
        Self(10)
    }
}

impl TryFrom<usize> for Cutoff {
    type Error = Error;
    fn try_from(n: usize) -> Result<Self> {
        Cutoff::new(n)
    }
}

impl From<Cutoff> for usize {
    fn from(c: Cutoff) -> usize {
        c.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    A,
    B,
}

impl Mode {
    pub fn other(self) -> Mode {
        match self {
            Mode::A => Mode::B,
            Mode::B => Mode::A,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SingleModeOperator {
    cutoff: Cutoff,
    matrix: CMatrix,
}

impl SingleModeOperator {
    pub fn new(cutoff: Cutoff, matrix: CMatrix) -> Result<Self> {
        let d = cutoff.dim();
        if matrix.nrows() != d || matrix.ncols() != d {
            return Err(Error::DimensionMismatch { expected: d, actual: matrix.nrows() });
        }
        Ok(Self { cutoff, matrix })
    }

    pub fn identity(cutoff: Cutoff) -> Self {
        Self { cutoff, matrix: CMatrix::identity(cutoff.dim(), cutoff.dim()) }
    }

    pub fn cutoff(&self) -> Cutoff {
        self.cutoff
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn adjoint(&self) -> Self {
        Self { cutoff: self.cutoff, matrix: self.matrix.adjoint() }
    }

    pub fn compose(&self, other: &Self) -> Result<Self> {
        self.cutoff.ensure_same(other.cutoff)?;
        Ok(Self { cutoff: self.cutoff, matrix: &self.matrix * &other.matrix })
    }

    pub fn pow(&self, k: u32) -> Self {
        let mut out = Self::identity(self.cutoff);
        for _ in 0..k {
            out.matrix = &out.matrix * &self.matrix;
        }
        out
    }
}

/// Truncated annihilation operator, `<n-1|a|n> = √n`.
pub fn annihilation(cutoff: Cutoff) -> SingleModeOperator {
    let d = cutoff.dim();
    let mut m = CMatrix::zeros(d, d);
    for n in 1..d {
        m[(n - 1, n)] = C64::new((n as f64).sqrt(), 0.0);
    }
    SingleModeOperator { cutoff, matrix: m }
}

pub fn creation(cutoff: Cutoff) -> SingleModeOperator {
    annihilation(cutoff).adjoint()
}

pub fn number(cutoff: Cutoff) -> SingleModeOperator {
    let d = cutoff.dim();
    let m = CMatrix::from_diagonal(&CVector::from_iterator(d, (0..d).map(|n| C64::new(n as f64, 0.0))));
    SingleModeOperator { cutoff, matrix: m }
}

/// Kronecker product `opA ⊗ opB` in the `d·r + s` convention.
pub fn tensor(op_a: &SingleModeOperator, op_b: &SingleModeOperator) -> Result<CMatrix> {
    op_a.cutoff.ensure_same(op_b.cutoff)?;
    Ok(op_a.matrix.kronecker(&op_b.matrix))
}

/// A validated two-mode density matrix.
#[derive(Clone, Debug)]
pub struct TwoModeState {
    cutoff: Cutoff,
    rho: CMatrix,
    clipped: bool,
}

impl TwoModeState {
    /// Strict constructor: rejects anything that is not Hermitian, unit trace
    /// and PSD within tolerance.
    pub fn new(cutoff: Cutoff, rho: CMatrix) -> Result<Self> {
        check_density(&rho, cutoff.joint_dim())?;
        Ok(Self { cutoff, rho, clipped: false })
    }

    /// Builds a state from an unnormalized positive operator.
    ///
    /// The operator is Hermitized and divided by its trace. Negative
    /// eigenvalues below `-PSD_TOLERANCE` are zeroed and the result is
    /// flagged as clipped. Returns the state and the raw trace.
    pub fn from_operator(cutoff: Cutoff, op: CMatrix) -> Result<(Self, f64)> {
        let dim = cutoff.joint_dim();
        if op.nrows() != dim || op.ncols() != dim {
            return Err(Error::DimensionMismatch { expected: dim, actual: op.nrows() });
        }
        let herm = hermitize(&op);
        let tr = herm.trace().re;
        if !(tr > 0.0) || !tr.is_finite() {
            return Err(Error::ZeroWeight);
        }
        let rho = herm / C64::new(tr, 0.0);
        let (rho, clipped) = clip_to_density(rho);
        Ok((Self { cutoff, rho, clipped }, tr))
    }

    pub fn pure(cutoff: Cutoff, psi: &CVector) -> Result<Self> {
        let norm = psi.norm_squared();
        if !(norm > 0.0) {
            return Err(Error::ZeroWeight);
        }
        let rho = (psi * psi.adjoint()) / C64::new(norm, 0.0);
        Self::from_operator(cutoff, rho).map(|(s, _)| s)
    }

    pub fn product(cutoff: Cutoff, rho_a: &CMatrix, rho_b: &CMatrix) -> Result<Self> {
        check_density(rho_a, cutoff.dim())?;
        check_density(rho_b, cutoff.dim())?;
        Self::new(cutoff, rho_a.kronecker(rho_b))
    }

    /// `|0>|0>`.
    pub fn vacuum(cutoff: Cutoff) -> Self {
        let mut rho = CMatrix::zeros(cutoff.joint_dim(), cutoff.joint_dim());
        rho[(0, 0)] = C64::new(1.0, 0.0);
        Self { cutoff, rho, clipped: false }
    }

    pub fn maximally_mixed(cutoff: Cutoff) -> Self {
        let dim = cutoff.joint_dim();
        let rho = CMatrix::identity(dim, dim) / C64::new(dim as f64, 0.0);
        Self { cutoff, rho, clipped: false }
    }

    pub fn cutoff(&self) -> Cutoff {
        self.cutoff
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.rho
    }

    pub fn into_matrix(self) -> CMatrix {
        self.rho
    }

    /// True when negative eigenvalues had to be removed at construction.
    pub fn was_clipped(&self) -> bool {
        self.clipped
    }

    pub fn element(&self, r: usize, s: usize, r2: usize, s2: usize) -> C64 {
        self.rho[(self.cutoff.index(r, s), self.cutoff.index(r2, s2))]
    }

    /// Reduced density matrix of `keep`.
    pub fn partial_trace(&self, keep: Mode) -> CMatrix {
        let d = self.cutoff.dim();
        let mut out = CMatrix::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                let mut acc = C64::new(0.0, 0.0);
                for t in 0..d {
                    acc += match keep {
                        Mode::A => self.rho[(d * i + t, d * j + t)],
                        Mode::B => self.rho[(d * t + i, d * t + j)],
                    };
                }
                out[(i, j)] = acc;
            }
        }
        out
    }

    /// Transposes the indices of `mode` only.
    pub fn partial_transpose(&self, mode: Mode) -> CMatrix {
        partial_transpose(&self.rho, self.cutoff, mode)
    }

    /// Applies `(K ⊗ I) ρ (K ⊗ I)†` (or `I ⊗ K` for mode B) without
    /// normalizing.
    pub fn conjugate_on_mode(&self, op: &CMatrix, mode: Mode) -> CMatrix {
        conjugate_on_mode(&self.rho, self.cutoff, op, mode)
    }

    pub fn to_file(&self) -> StateFile {
        let dim = self.cutoff.joint_dim();
        let mut re = Vec::with_capacity(dim * dim);
        let mut im = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                re.push(self.rho[(i, j)].re);
                im.push(self.rho[(i, j)].im);
            }
        }
        StateFile { cutoff: self.cutoff.n_max(), re, im }
    }

    pub fn from_file(file: &StateFile) -> Result<Self> {
        let cutoff = Cutoff::new(file.cutoff)?;
        let dim = cutoff.joint_dim();
        if file.re.len() != dim * dim || file.im.len() != dim * dim {
            return Err(Error::DimensionMismatch { expected: dim * dim, actual: file.re.len() });
        }
        let rho = CMatrix::from_fn(dim, dim, |i, j| C64::new(file.re[dim * i + j], file.im[dim * i + j]));
        Self::new(cutoff, rho)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_file())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: StateFile = serde_json::from_str(text)?;
        Self::from_file(&file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// On-disk density matrix: row-major real and imaginary parts.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StateFile {
    pub cutoff: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

pub fn partial_transpose(rho: &CMatrix, cutoff: Cutoff, mode: Mode) -> CMatrix {
    let d = cutoff.dim();
    let dim = cutoff.joint_dim();
    CMatrix::from_fn(dim, dim, |i, j| {
        let (r, s) = (i / d, i % d);
        let (r2, s2) = (j / d, j % d);
        match mode {
            Mode::A => rho[(d * r2 + s, d * r + s2)],
            Mode::B => rho[(d * r + s2, d * r2 + s)],
        }
    })
}

/// `(K ⊗ I) ρ (K ⊗ I)†` in O(d⁵), skipping zero entries of `op`.
pub fn conjugate_on_mode(rho: &CMatrix, cutoff: Cutoff, op: &CMatrix, mode: Mode) -> CMatrix {
    let d = cutoff.dim();
    let dim = cutoff.joint_dim();
    let nz: Vec<(usize, usize, C64)> = (0..d)
        .flat_map(|p| (0..d).map(move |q| (p, q)))
        .filter_map(|(p, q)| {
            let v = op[(p, q)];
            (v.norm_sqr() > 0.0).then_some((p, q, v))
        })
        .collect();
    // left multiply
    let mut left = CMatrix::zeros(dim, dim);
    for &(p, q, v) in &nz {
        for spectator in 0..d {
            let (dst, src) = match mode {
                Mode::A => (d * p + spectator, d * q + spectator),
                Mode::B => (d * spectator + p, d * spectator + q),
            };
            for c in 0..dim {
                left[(dst, c)] += v * rho[(src, c)];
            }
        }
    }
    // right multiply by the adjoint
    let mut out = CMatrix::zeros(dim, dim);
    for &(p, q, v) in &nz {
        let vc = v.conj();
        for spectator in 0..d {
            let (dst, src) = match mode {
                Mode::A => (d * p + spectator, d * q + spectator),
                Mode::B => (d * spectator + p, d * spectator + q),
            };
            for r in 0..dim {
                out[(r, dst)] += left[(r, src)] * vc;
            }
        }
    }
    out
}

/// Contracts `mode` of a two-mode operator with the vector `v`:
/// `(<v| ⊗ I) op (|v> ⊗ I)` for mode A, leaving an operator on the other mode.
pub fn project_mode(op: &CMatrix, cutoff: Cutoff, mode: Mode, v: &CVector) -> CMatrix {
    let d = cutoff.dim();
    let mut out = CMatrix::zeros(d, d);
    for i in 0..d {
        let vi = v[i].conj();
        if vi.norm_sqr() == 0.0 {
            continue;
        }
        for j in 0..d {
            let w = vi * v[j];
            if w.norm_sqr() == 0.0 {
                continue;
            }
            for s in 0..d {
                for s2 in 0..d {
                    let (row, col) = match mode {
                        Mode::A => (d * i + s, d * j + s2),
                        Mode::B => (d * s + i, d * s2 + j),
                    };
                    out[(s, s2)] += w * op[(row, col)];
                }
            }
        }
    }
    out
}

pub fn hermitize(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()) * C64::new(0.5, 0.0)
}

pub fn max_hermitian_deviation(m: &CMatrix) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in i..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

fn to_faer(m: &CMatrix) -> faer::Mat<faer::c64> {
    faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| {
        let z = m[(i, j)];
        faer::c64::new(z.re, z.im)
    })
}

/// Eigenvalues (ascending) and eigenvectors (columns) of a Hermitian matrix.
/// Only the lower triangle is read.
pub fn hermitian_eigen(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let n = m.nrows();
    let mut a = to_faer(m);
    // the divide-and-conquer path occasionally fails on exactly low-rank
    // inputs; an identity shift leaves the eigenvectors unchanged
    let scale = (0..n).map(|i| m[(i, i)].norm()).fold(1.0f64, f64::max);
    let mut shift = 0.0;
    let eig = loop {
        match a.self_adjoint_eigen(faer::Side::Lower) {
            Ok(eig) => break eig,
            Err(_) if shift < 64.0 * scale => {
                let step = if shift == 0.0 { scale } else { shift };
                for i in 0..n {
                    a[(i, i)] += faer::c64::new(step, 0.0);
                }
                shift += step;
            }
            Err(e) => panic!("Hermitian eigendecomposition did not converge: {e:?}"),
        }
    };
    let s = eig.S();
    let u = eig.U();
    let vals: Vec<f64> = (0..n).map(|i| s[i].re - shift).collect();
    let vecs = CMatrix::from_fn(n, n, |i, j| {
        let z = u[(i, j)];
        C64::new(z.re, z.im)
    });
    (vals, vecs)
}

/// Eigenvalues (ascending) of a Hermitian matrix.
pub fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    let mut ev = match to_faer(m).self_adjoint_eigenvalues(faer::Side::Lower) {
        Ok(ev) => ev,
        Err(_) => hermitian_eigen(m).0,
    };
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

/// Applies a real function to the spectrum of a Hermitian matrix.
pub fn hermitian_function(m: &CMatrix, f: impl Fn(f64) -> f64) -> CMatrix {
    let (vals, vecs) = hermitian_eigen(m);
    let vals = CVector::from_iterator(vals.len(), vals.iter().map(|&l| C64::new(f(l), 0.0)));
    &vecs * CMatrix::from_diagonal(&vals) * vecs.adjoint()
}

/// Validates Hermiticity, unit trace and positivity of a density matrix.
pub fn check_density(rho: &CMatrix, dim: usize) -> Result<()> {
    if rho.nrows() != dim || rho.ncols() != dim {
        return Err(Error::DimensionMismatch { expected: dim, actual: rho.nrows() });
    }
    let dev = max_hermitian_deviation(rho);
    if dev > HERMITIAN_TOLERANCE {
        return Err(Error::NotHermitian(dev));
    }
    let tr = rho.trace();
    if (tr.re - 1.0).abs() > TRACE_TOLERANCE || tr.im.abs() > TRACE_TOLERANCE {
        return Err(Error::NotUnitTrace(tr.re));
    }
    let min = hermitian_eigenvalues(rho)[0];
    if min < -PSD_TOLERANCE {
        return Err(Error::NotPositive(min));
    }
    Ok(())
}

/// Zeroes eigenvalues below `-PSD_TOLERANCE` and renormalizes.
///
/// The flag is true only when clipping actually changed the matrix.
pub fn clip_to_density(rho: CMatrix) -> (CMatrix, bool) {
    let (eigenvalues, eigenvectors) = hermitian_eigen(&hermitize(&rho));
    let min = eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min >= -PSD_TOLERANCE {
        return (rho, false);
    }
    let clipped: Vec<f64> = eigenvalues.iter().map(|&l| l.max(0.0)).collect();
    let total: f64 = clipped.iter().sum();
    let vals = CVector::from_iterator(clipped.len(), clipped.iter().map(|&l| C64::new(l / total, 0.0)));
    let out = &eigenvectors * CMatrix::from_diagonal(&vals) * eigenvectors.adjoint();
    (hermitize(&out), true)
}

/// Von Neumann entropy in bits.
pub fn von_neumann_entropy(rho: &CMatrix) -> Result<f64> {
    let ev = hermitian_eigenvalues(rho);
    if let Some(&min) = ev.first() {
        if min < -PSD_TOLERANCE {
            return Err(Error::NotPositive(min));
        }
    }
    Ok(entropy_of_spectrum(&ev))
}

pub(crate) fn entropy_of_spectrum(ev: &[f64]) -> f64 {
    ev.iter().filter(|&&l| l > EIGENVALUE_FLOOR).map(|&l| -l * l.log2()).sum()
}

/// Sum of singular values.
pub fn trace_norm(m: &CMatrix) -> f64 {
    to_faer(m).singular_values().expect("singular values of a finite matrix").iter().sum()
}

/// Uhlmann fidelity `(Tr √(√ρ σ √ρ))²`.
pub fn fidelity(rho: &CMatrix, rho_ref: &CMatrix) -> Result<f64> {
    if rho.shape() != rho_ref.shape() {
        return Err(Error::DimensionMismatch { expected: rho.nrows(), actual: rho_ref.nrows() });
    }
    let sqrt_rho = hermitian_function(rho, |l| l.max(0.0).sqrt());
    let inner = hermitize(&(&sqrt_rho * rho_ref * &sqrt_rho));
    let root: f64 = hermitian_eigenvalues(&inner).iter().map(|&l| l.max(0.0).sqrt()).sum();
    Ok((root * root).clamp(0.0, 1.0))
}

/// `Tr ρ²`.
pub fn purity(rho: &CMatrix) -> f64 {
    rho.iter().map(|z| z.norm_sqr()).sum()
}

/// Mean photon number of a single-mode density matrix.
pub fn mean_photon_number(rho: &CMatrix) -> f64 {
    (0..rho.nrows()).map(|n| n as f64 * rho[(n, n)].re).sum()
}

/// Entropy in bits of a Gaussian mode with symplectic eigenvalue `nu`
/// (vacuum `nu = 1/2`).
pub fn gaussian_entropy(nu: f64) -> f64 {
    let plus = nu + 0.5;
    let minus = nu - 0.5;
    let mut s = plus * plus.log2();
    if minus > 1e-15 {
        s -= minus * minus.log2();
    }
    s.max(0.0)
}

pub(crate) fn real_diag(rho: &CMatrix) -> Vec<f64> {
    (0..rho.nrows()).map(|i| rho[(i, i)].re).collect()
}
