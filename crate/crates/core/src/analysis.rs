//! State characterization: logarithmic negativity, quadrature kurtosis,
//! Wigner functions, joint photon-number distributions and covariance
//! matrices.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{DMatrix, Matrix4, Vector4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{annihilation, gaussian_entropy, hermitian_eigenvalues, real_diag, trace_norm, CMatrix, Mode, SingleModeOperator, TwoModeState, C64};
use crate::grid::QuadratureGrid;
use crate::measurement::hermite_functions;

/// `log₂ ‖ρ^Γ‖₁`. Not floored at zero.
pub fn log_negativity(state: &TwoModeState) -> f64 {
    trace_norm(&state.partial_transpose(Mode::B)).log2()
}

/// Homodyne marginal `<x_θ|ρ_mode|x_θ>` on the grid nodes.
pub fn quadrature_marginal(state: &TwoModeState, mode: Mode, theta: f64, grid: &QuadratureGrid) -> Vec<f64> {
    let cutoff = state.cutoff();
    let rho = state.partial_trace(mode);
    let d = cutoff.dim();
    grid.nodes()
        .into_iter()
        .map(|x| {
            let psi = hermite_functions(x, cutoff);
            let v: Vec<C64> = (0..d).map(|n| C64::from_polar(psi[n], -(n as f64) * theta)).collect();
            let mut acc = C64::new(0.0, 0.0);
            for i in 0..d {
                for j in 0..d {
                    acc += v[i].conj() * rho[(i, j)] * v[j];
                }
            }
            acc.re.max(0.0)
        })
        .collect()
}

/// Fourth standardized moment of the homodyne marginal of `mode` at `theta`.
///
/// Fails with [`Error::GridCoverage`] unless the grid spans the mean ± 6σ.
pub fn kurtosis(state: &TwoModeState, mode: Mode, theta: f64, grid: &QuadratureGrid) -> Result<f64> {
    let p = quadrature_marginal(state, mode, theta, grid);
    let xs = grid.nodes();
    let h = grid.step();
    let mass: f64 = p.iter().sum::<f64>() * h;
    let moment = |k: i32, c: f64| xs.iter().zip(&p).map(|(x, w)| (x - c).powi(k) * w).sum::<f64>() * h / mass;
    let mean = moment(1, 0.0);
    let var = moment(2, mean);
    let sigma = var.sqrt();
    if mean - 6.0 * sigma < grid.lo() || mean + 6.0 * sigma > grid.hi() {
        return Err(Error::GridCoverage(format!(
            "marginal mean {mean:.3}, sigma {sigma:.3} needs [{:.3}, {:.3}], grid is [{}, {}]",
            mean - 6.0 * sigma,
            mean + 6.0 * sigma,
            grid.lo(),
            grid.hi()
        )));
    }
    Ok(moment(4, mean) / (var * var))
}

/// Wigner function of one mode sampled on an `(x, p)` grid, per `dx dp`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WignerGrid {
    pub x: QuadratureGrid,
    pub p: QuadratureGrid,
    /// Row-major: `values[i * p.len() + j] = W(x_i, p_j)`.
    pub values: Vec<f64>,
}

impl WignerGrid {
    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.p.len() + j]
    }

    pub fn at(&self, x: f64, p: f64) -> f64 {
        self.value(self.x.nearest(x).0, self.p.nearest(p).0)
    }

    pub fn riemann_sum(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.x.step() * self.p.step()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// CSV matrix: header row holds the `p` axis, first column the `x` axis.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["x\\p".to_string()];
        header.extend(self.p.nodes().iter().map(|p| format!("{p:.6}")));
        w.write_record(&header)?;
        for (i, x) in self.x.nodes().iter().enumerate() {
            let mut row = vec![format!("{x:.6}")];
            row.extend((0..self.p.len()).map(|j| format!("{:.10e}", self.value(i, j))));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

impl Default for WignerGrid {
    fn default() -> Self {
        let axis = QuadratureGrid::new(-4.0, 4.0, 0.08).unwrap();
        Self { x: axis, p: axis, values: Vec::new() }
    }
}

/// Generalized Laguerre polynomials `L_n^{(a)}(x)` for `n = 0..len`.
fn laguerre(a: usize, x: f64, len: usize) -> Vec<f64> {
    let a = a as f64;
    let mut out = vec![0.0; len];
    if len == 0 {
        return out;
    }
    out[0] = 1.0;
    if len > 1 {
        out[1] = 1.0 + a - x;
    }
    for k in 1..len.saturating_sub(1) {
        let kf = k as f64;
        out[k + 1] = ((2.0 * kf + 1.0 + a - x) * out[k] - (kf + a) * out[k - 1]) / (kf + 1.0);
    }
    out
}

/// Exact Fock matrix elements `<m|D(β)|n>` for `m, n < d`.
pub fn displacement_matrix(beta: C64, d: usize) -> CMatrix {
    let r2 = beta.norm_sqr();
    let env = (-0.5 * r2).exp();
    let log_fact: Vec<f64> = (0..d).scan(0.0, |acc, n| {
        if n > 0 {
            *acc += (n as f64).ln();
        }
        Some(*acc)
    })
    .collect();
    let mut out = CMatrix::zeros(d, d);
    for delta in 0..d {
        let lag = laguerre(delta, r2, d - delta);
        let bp = beta.powu(delta as u32);
        let bm = (-beta.conj()).powu(delta as u32);
        for n in 0..d - delta {
            let m = n + delta;
            let scale = env * (0.5 * (log_fact[n] - log_fact[m])).exp() * lag[n];
            out[(m, n)] = bp * scale;
            if delta > 0 {
                out[(n, m)] = bm * scale;
            }
        }
    }
    out
}

/// `W(x, p) = (1/π) Tr[ρ D(α) Π D†(α)]`, `α = (x + ip)/√2`, evaluated as
/// `Tr[ρ D(2α) Π]`.
pub fn wigner(state: &TwoModeState, mode: Mode, x: &QuadratureGrid, p: &QuadratureGrid) -> WignerGrid {
    let rho = state.partial_trace(mode);
    let d = rho.nrows();
    let xs = x.nodes();
    let ps = p.nodes();
    let values: Vec<f64> = xs
        .par_iter()
        .flat_map_iter(|&xv| {
            let rho = &rho;
            ps.iter().map(move |&pv| {
                let beta = C64::new(xv, pv) * 2f64.sqrt();
                let dm = displacement_matrix(beta, d);
                let mut acc = C64::new(0.0, 0.0);
                for n in 0..d {
                    let parity = if n % 2 == 0 { 1.0 } else { -1.0 };
                    for m in 0..d {
                        acc += rho[(n, m)] * dm[(m, n)] * parity;
                    }
                }
                acc.re / PI
            })
        })
        .collect();
    WignerGrid { x: *x, p: *p, values }
}

/// `P(m, n) = <m,n|ρ|m,n>`, rows indexed by the photon number of mode A.
pub fn photon_number_joint(state: &TwoModeState) -> DMatrix<f64> {
    let d = state.cutoff().dim();
    let diag = real_diag(state.matrix());
    DMatrix::from_fn(d, d, |m, n| diag[d * m + n])
}

/// Quadrature covariance over `(x_A, p_A, x_B, p_B)` with symmetrized
/// ordering; vacuum is `I/2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovarianceMatrix {
    pub matrix: Matrix4<f64>,
    pub means: Vector4<f64>,
}

impl CovarianceMatrix {
    pub fn new(matrix: Matrix4<f64>, means: Vector4<f64>) -> Result<Self> {
        let asym = (matrix - matrix.transpose()).abs().max();
        if asym > 1e-10 {
            return Err(Error::InvalidParameter(format!("covariance matrix not symmetric ({asym:.3e})")));
        }
        let cov = Self { matrix, means };
        let min = cov.uncertainty_min_eigenvalue();
        if min < -1e-8 {
            return Err(Error::InvalidParameter(format!("covariance violates the uncertainty principle (eigenvalue {min:.3e})")));
        }
        Ok(cov)
    }

    pub fn vacuum() -> Self {
        Self { matrix: Matrix4::identity() * 0.5, means: Vector4::zeros() }
    }

    /// Smallest eigenvalue of `Σ + (i/2) Ω`.
    pub fn uncertainty_min_eigenvalue(&self) -> f64 {
        let omega = |i: usize, j: usize| match (i, j) {
            (0, 1) | (2, 3) => 1.0,
            (1, 0) | (3, 2) => -1.0,
            _ => 0.0,
        };
        let m = CMatrix::from_fn(4, 4, |i, j| C64::new(self.matrix[(i, j)], 0.5 * omega(i, j)));
        hermitian_eigenvalues(&m)[0]
    }

    fn block(&self, r: usize, c: usize) -> nalgebra::Matrix2<f64> {
        self.matrix.fixed_view::<2, 2>(2 * r, 2 * c).into_owned()
    }

    pub fn mode_block(&self, mode: Mode) -> nalgebra::Matrix2<f64> {
        match mode {
            Mode::A => self.block(0, 0),
            Mode::B => self.block(1, 1),
        }
    }

    pub fn cross_block(&self) -> nalgebra::Matrix2<f64> {
        self.block(0, 1)
    }

    /// Symplectic eigenvalues `ν₋ ≤ ν₊` from the invariants `Δ` and `det Σ`.
    pub fn symplectic_eigenvalues(&self) -> (f64, f64) {
        let delta = self.block(0, 0).determinant() + self.block(1, 1).determinant() + 2.0 * self.block(0, 1).determinant();
        let det = self.matrix.determinant();
        let disc = (delta * delta - 4.0 * det).max(0.0).sqrt();
        let minus = ((delta - disc) / 2.0).max(0.0).sqrt();
        let plus = ((delta + disc) / 2.0).max(0.0).sqrt();
        (minus, plus)
    }

    /// Von Neumann entropy (bits) of the Gaussian state with this covariance.
    pub fn gaussian_entropy(&self) -> f64 {
        let (a, b) = self.symplectic_eigenvalues();
        gaussian_entropy(a) + gaussian_entropy(b)
    }

    /// Covariance with mode A's quadratures rotated to `θ_A` and B's to `θ_B`,
    /// so that index 0 (2) is `x_{θ_A}` (`x_{θ_B}`).
    pub fn rotated(&self, theta_a: f64, theta_b: f64) -> Self {
        let mut r = Matrix4::zeros();
        for (k, th) in [(0, theta_a), (2, theta_b)] {
            let (s, c) = th.sin_cos();
            r[(k, k)] = c;
            r[(k, k + 1)] = s;
            r[(k + 1, k)] = -s;
            r[(k + 1, k + 1)] = c;
        }
        Self { matrix: r * self.matrix * r.transpose(), means: r * self.means }
    }
}

fn expectation(state: &TwoModeState, op_a: &CMatrix, op_b: &CMatrix) -> C64 {
    let rho = state.matrix();
    let d = state.cutoff().dim();
    let mut acc = C64::new(0.0, 0.0);
    for (r, r2, va) in nonzero(op_a) {
        for (s, s2, vb) in nonzero(op_b) {
            // Tr(ρ (A⊗B)) = Σ ρ[(r2,s2),(r,s)] A[r,r2] B[s,s2]
            acc += rho[(d * r2 + s2, d * r + s)] * va * vb;
        }
    }
    acc
}

fn nonzero(m: &CMatrix) -> Vec<(usize, usize, C64)> {
    let mut out = Vec::new();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if m[(i, j)] != C64::new(0.0, 0.0) {
                out.push((i, j, m[(i, j)]));
            }
        }
    }
    out
}

/// Exact first and second quadrature moments from normally ordered
/// expectations, which the Fock truncation represents without error.
pub fn covariance(state: &TwoModeState) -> CovarianceMatrix {
    let cutoff = state.cutoff();
    let a = annihilation(cutoff);
    let ad = a.adjoint();
    let id = SingleModeOperator::identity(cutoff);
    let on = |mode: Mode, op: &SingleModeOperator| match mode {
        Mode::A => (op.matrix().clone(), id.matrix().clone()),
        Mode::B => (id.matrix().clone(), op.matrix().clone()),
    };
    let modes = [Mode::A, Mode::B];
    let mean_a: Vec<C64> = modes
        .iter()
        .map(|&m| {
            let (oa, ob) = on(m, &a);
            expectation(state, &oa, &ob)
        })
        .collect();
    // <a_i a_j> and <a_i† a_j>
    let pair = |mi: Mode, opi: &SingleModeOperator, mj: Mode, opj: &SingleModeOperator| -> C64 {
        if mi == mj {
            let prod = opi.compose(opj).expect("same cutoff");
            let (oa, ob) = on(mi, &prod);
            expectation(state, &oa, &ob)
        } else {
            let (oa, ob) = match mi {
                Mode::A => (opi.matrix().clone(), opj.matrix().clone()),
                Mode::B => (opj.matrix().clone(), opi.matrix().clone()),
            };
            expectation(state, &oa, &ob)
        }
    };
    let mut aa = [[C64::new(0.0, 0.0); 2]; 2];
    let mut ada = [[C64::new(0.0, 0.0); 2]; 2];
    for (i, &mi) in modes.iter().enumerate() {
        for (j, &mj) in modes.iter().enumerate() {
            aa[i][j] = pair(mi, &a, mj, &a);
            ada[i][j] = pair(mi, &ad, mj, &a);
        }
    }
    // R_k = c_k a_m + c_k* a_m†
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let coeff = [C64::new(s, 0.0), C64::new(0.0, -s)];
    let quad = |k: usize| (k / 2, coeff[k % 2]);
    let mut means = Vector4::zeros();
    for k in 0..4 {
        let (m, c) = quad(k);
        means[k] = 2.0 * (c * mean_a[m]).re;
    }
    let mut matrix = Matrix4::zeros();
    for k in 0..4 {
        for l in 0..4 {
            let (mi, ci) = quad(k);
            let (mj, cj) = quad(l);
            let delta = if mi == mj { 0.5 } else { 0.0 };
            let sym = ci * cj * aa[mi][mj]
                + ci.conj() * cj.conj() * aa[mi][mj].conj()
                + ci * cj.conj() * (ada[mj][mi] + delta)
                + ci.conj() * cj * (ada[mi][mj] + delta);
            matrix[(k, l)] = sym.re - means[k] * means[l];
        }
    }
    let matrix = (matrix + matrix.transpose()) * 0.5;
    CovarianceMatrix { matrix, means }
}

/// Photon-number table as CSV: header carries the mode-B photon numbers.
pub fn write_photon_table_csv<W: Write>(table: &DMatrix<f64>, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["m\\n".to_string()];
    header.extend((0..table.ncols()).map(|n| n.to_string()));
    w.write_record(&header)?;
    for m in 0..table.nrows() {
        let mut row = vec![m.to_string()];
        row.extend((0..table.ncols()).map(|n| format!("{:.10e}", table[(m, n)])));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
