//! Secret-key rates: numerical mutual information and Holevo bound for
//! homodyne-homodyne reverse reconciliation, the Gaussian comparator built
//! from the covariance matrix, and the PLOB bound.

use nalgebra::{DMatrix, Matrix2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{covariance, CovarianceMatrix};
use crate::error::{Error, Result};
use crate::fock::{gaussian_entropy, hermitian_eigenvalues, hermitize, project_mode, von_neumann_entropy, Cutoff, Mode, TwoModeState, C64, EIGENVALUE_FLOOR, PSD_TOLERANCE};
use crate::grid::{pairwise_sum, QuadratureGrid};
use crate::measurement::{filter_success_probability, hermite_functions, husimi_variance, FilterParams, SamplingGrids};
use crate::states::{add_photons, loss_channel, make_tmsv, ChannelParams, TmsvParams};

/// Conditional states below this probability density are skipped.
pub const CONDITIONAL_FLOOR: f64 = 1e-14;
/// Largest probability mass the quadrature grid may miss.
pub const EDGE_MASS_LIMIT: f64 = 1e-4;

/// Homodyne vectors `<n|x_θ>` for every node, row-major `(node, n)`.
fn homodyne_table(grid: &QuadratureGrid, theta: f64, cutoff: Cutoff) -> Vec<Vec<C64>> {
    grid.nodes()
        .into_iter()
        .map(|x| {
            hermite_functions(x, cutoff)
                .into_iter()
                .enumerate()
                .map(|(n, p)| C64::from_polar(p, -(n as f64) * theta))
                .collect()
        })
        .collect()
}

/// Joint homodyne density `P(x, y)` on a product grid, rows `x` (mode A),
/// columns `y` (mode B).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointTable {
    pub x: QuadratureGrid,
    pub y: QuadratureGrid,
    pub density: DMatrix<f64>,
}

impl JointTable {
    pub fn new(x: QuadratureGrid, y: QuadratureGrid, density: DMatrix<f64>) -> Result<Self> {
        if density.nrows() != x.len() || density.ncols() != y.len() {
            return Err(Error::DimensionMismatch { expected: x.len() * y.len(), actual: density.len() });
        }
        Ok(Self { x, y, density })
    }

    pub fn from_fn(x: QuadratureGrid, y: QuadratureGrid, f: impl Fn(f64, f64) -> f64) -> Self {
        let density = DMatrix::from_fn(x.len(), y.len(), |i, j| f(x.node(i), y.node(j)));
        Self { x, y, density }
    }

    pub fn cell(&self) -> f64 {
        self.x.step() * self.y.step()
    }

    pub fn mass(&self) -> f64 {
        self.density.sum() * self.cell()
    }

    pub fn marginal_x(&self) -> Vec<f64> {
        self.density.row_iter().map(|r| r.sum() * self.y.step()).collect()
    }

    pub fn marginal_y(&self) -> Vec<f64> {
        self.density.column_iter().map(|c| c.sum() * self.x.step()).collect()
    }

    pub fn transpose(&self) -> Self {
        Self { x: self.y, y: self.x, density: self.density.transpose() }
    }
}

/// `P(x, y) = <x_{θ_A}, y_{θ_B}|ρ|x_{θ_A}, y_{θ_B}>` on `grid × grid`.
pub fn joint_quadrature_distribution(state: &TwoModeState, theta_a: f64, theta_b: f64, grid: &QuadratureGrid) -> Result<JointTable> {
    let cutoff = state.cutoff();
    let d = cutoff.dim();
    let hx = homodyne_table(grid, theta_a, cutoff);
    let hy = homodyne_table(grid, theta_b, cutoff);
    let rho = state.matrix();
    let columns: Vec<Vec<f64>> = hy
        .par_iter()
        .map(|h| {
            let n_a = project_mode(rho, cutoff, Mode::B, &crate::fock::CVector::from_column_slice(h));
            hx.iter()
                .map(|v| {
                    let mut acc = C64::new(0.0, 0.0);
                    for i in 0..d {
                        let mut row = C64::new(0.0, 0.0);
                        for j in 0..d {
                            row += n_a[(i, j)] * v[j];
                        }
                        acc += v[i].conj() * row;
                    }
                    acc.re.max(0.0)
                })
                .collect()
        })
        .collect();
    let n = grid.len();
    let density = DMatrix::from_fn(n, n, |i, j| columns[j][i]);
    let table = JointTable { x: *grid, y: *grid, density };
    let mass = table.mass();
    if (mass - 1.0).abs() > 1e-3 {
        return Err(Error::GridCoverage(format!("joint quadrature table holds mass {mass:.6}")));
    }
    Ok(table)
}

/// `∫ P log₂(P / P_A P_B)` by Riemann sum.
pub fn mutual_information(table: &JointTable) -> f64 {
    let px = table.marginal_x();
    let py = table.marginal_y();
    let terms: Vec<f64> = (0..table.x.len())
        .flat_map(|i| {
            let px = &px;
            let py = &py;
            (0..table.y.len()).filter_map(move |j| {
                let p = table.density[(i, j)];
                (p > 0.0 && px[i] > 0.0 && py[j] > 0.0).then(|| p * (p / (px[i] * py[j])).log2())
            })
        })
        .collect();
    (pairwise_sum(&terms) * table.cell()).max(0.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolevoBound {
    /// `χ_E` in bits.
    pub chi: f64,
    /// `S(ρ_AB)`.
    pub joint_entropy: f64,
    /// `Σ Δy P(y) S(σ_y)`.
    pub conditional_entropy: f64,
    /// Probability mass outside the grid or under [`CONDITIONAL_FLOOR`].
    pub lost_mass: f64,
}

fn clipped_spectrum_entropy(ev: &mut [f64]) -> f64 {
    let min = ev.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -PSD_TOLERANCE {
        let total: f64 = ev.iter().map(|l| l.max(0.0)).sum();
        for l in ev.iter_mut() {
            *l = l.max(0.0) / total;
        }
    }
    ev.iter().filter(|&&l| l > EIGENVALUE_FLOOR).map(|&l| -l * l.log2()).sum()
}

/// Eve's Holevo information on the homodyne outcome of `measured` at angle
/// `theta`: `S(ρ_AB) - Σ Δy P(y) S(σ_y)`, with `σ_y` the conditional state of
/// the other mode.
pub fn holevo_bound(state: &TwoModeState, measured: Mode, theta: f64, grid: &QuadratureGrid) -> Result<HolevoBound> {
    let cutoff = state.cutoff();
    let joint_entropy = von_neumann_entropy(state.matrix())?;
    let hy = homodyne_table(grid, theta, cutoff);
    let rho = state.matrix();
    let parts: Vec<(f64, f64)> = hy
        .par_iter()
        .map(|h| {
            let n = project_mode(rho, cutoff, measured, &crate::fock::CVector::from_column_slice(h));
            let p = n.trace().re;
            if p < CONDITIONAL_FLOOR {
                return (0.0, 0.0);
            }
            let sigma = hermitize(&(n / C64::new(p, 0.0)));
            let mut ev = hermitian_eigenvalues(&sigma);
            (p, p * clipped_spectrum_entropy(&mut ev))
        })
        .collect();
    let h = grid.step();
    let mass = pairwise_sum(&parts.iter().map(|p| p.0).collect::<Vec<_>>()) * h;
    let conditional_entropy = pairwise_sum(&parts.iter().map(|p| p.1).collect::<Vec<_>>()) * h;
    let lost_mass = 1.0 - mass;
    if lost_mass.abs() > EDGE_MASS_LIMIT {
        log::warn!("Holevo grid misses {lost_mass:.3e} of the homodyne mass");
    }
    Ok(HolevoBound { chi: joint_entropy - conditional_entropy, joint_entropy, conditional_entropy, lost_mass })
}

/// Which party's outcomes the key is distilled from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reconciliation {
    /// Keys follow Bob's (mode B) outcomes.
    #[default]
    Reverse,
    /// Keys follow Alice's outcomes. Experimental: not robust beyond 3 dB.
    Forward,
}

impl Reconciliation {
    pub fn measured_mode(self) -> Mode {
        match self {
            Reconciliation::Reverse => Mode::B,
            Reconciliation::Forward => Mode::A,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianRates {
    pub i_ab: f64,
    pub chi_e: f64,
    pub keyrate: f64,
}

/// Homodyne (`x` on both modes) rates of the Gaussian state with covariance
/// `cov`.
///
/// `I_AB = ½ log₂(V_A V_B / (V_A V_B - C²))`. Eve holds the purification, so
/// `χ_E = g(ν₁) + g(ν₂) - g(ν_c)`, where `ν_c = √det γ_c` and `γ_c` is the
/// covariance of the unmeasured mode after the `x` homodyne on the measured
/// one: `γ_A - σ diag(1/V_B, 0) σᵀ` for reverse reconciliation.
pub fn gaussian_keyrate(cov: &CovarianceMatrix, direction: Reconciliation) -> Result<GaussianRates> {
    let min = cov.uncertainty_min_eigenvalue();
    if min < -1e-8 {
        return Err(Error::InvalidParameter(format!("unphysical covariance (uncertainty eigenvalue {min:.3e})")));
    }
    let va = cov.matrix[(0, 0)];
    let vb = cov.matrix[(2, 2)];
    let c = cov.matrix[(0, 2)];
    let i_ab = 0.5 * (va * vb / (va * vb - c * c)).log2();
    let sigma = cov.cross_block();
    let conditional = match direction {
        Reconciliation::Reverse => cov.mode_block(Mode::A) - sigma * Matrix2::new(1.0 / vb, 0.0, 0.0, 0.0) * sigma.transpose(),
        Reconciliation::Forward => cov.mode_block(Mode::B) - sigma.transpose() * Matrix2::new(1.0 / va, 0.0, 0.0, 0.0) * sigma,
    };
    let nu_c = conditional.determinant().max(0.25).sqrt();
    let chi_e = cov.gaussian_entropy() - gaussian_entropy(nu_c);
    Ok(GaussianRates { i_ab, chi_e, keyrate: i_ab - chi_e })
}

/// Repeaterless capacity `-log₂(1 - T)`; infinite at `T = 1`.
pub fn plob_bound(transmissivity: f64) -> f64 {
    if transmissivity >= 1.0 {
        f64::INFINITY
    } else {
        -(1.0 - transmissivity.max(0.0)).log2()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SecurityReport {
    pub i_ab: f64,
    pub chi_e: f64,
    /// Per postselected use; `i_ab - chi_e`.
    pub keyrate: f64,
    pub gaussian_i_ab: f64,
    pub gaussian_chi_e: f64,
    pub gaussian_keyrate: f64,
    pub success_probability: f64,
    /// Infinite at `T = 1`; stored as `null` in JSON.
    #[serde(with = "infinite_as_null")]
    pub plob_bound: f64,
}

mod infinite_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_none()
        } else {
            s.serialize_some(v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

impl SecurityReport {
    /// Rates per channel use, i.e. multiplied by the success probability.
    pub fn with_overhead(&self) -> Self {
        let p = self.success_probability;
        Self {
            i_ab: self.i_ab * p,
            chi_e: self.chi_e * p,
            keyrate: self.keyrate * p,
            gaussian_i_ab: self.gaussian_i_ab * p,
            gaussian_chi_e: self.gaussian_chi_e * p,
            gaussian_keyrate: self.gaussian_keyrate * p,
            ..*self
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SecurityOptions {
    pub grid: QuadratureGrid,
    pub theta_a: f64,
    pub theta_b: f64,
    pub reconciliation: Reconciliation,
}

impl Default for SecurityOptions {
    fn default() -> Self {
        Self {
            grid: QuadratureGrid::new(-10.0, 10.0, 0.05).unwrap(),
            theta_a: 0.0,
            theta_b: 0.0,
            reconciliation: Reconciliation::Reverse,
        }
    }
}

/// Non-Gaussian and Gaussian-comparator rates for `state`.
pub fn security_report(state: &TwoModeState, transmissivity: f64, success_probability: f64, options: &SecurityOptions) -> Result<SecurityReport> {
    let table = joint_quadrature_distribution(state, options.theta_a, options.theta_b, &options.grid)?;
    security_report_with_table(state, &table, transmissivity, success_probability, options)
}

/// As [`security_report`], reusing a joint table computed at the option angles.
pub fn security_report_with_table(
    state: &TwoModeState,
    table: &JointTable,
    transmissivity: f64,
    success_probability: f64,
    options: &SecurityOptions,
) -> Result<SecurityReport> {
    let i_ab = mutual_information(table);
    let measured = options.reconciliation.measured_mode();
    let theta = match measured {
        Mode::A => options.theta_a,
        Mode::B => options.theta_b,
    };
    let chi_e = holevo_bound(state, measured, theta, &options.grid)?.chi;
    let cov = covariance(state).rotated(options.theta_a, options.theta_b);
    let g = gaussian_keyrate(&cov, options.reconciliation)?;
    Ok(SecurityReport {
        i_ab,
        chi_e,
        keyrate: i_ab - chi_e,
        gaussian_i_ab: g.i_ab,
        gaussian_chi_e: g.chi_e,
        gaussian_keyrate: g.keyrate,
        success_probability,
        plob_bound: plob_bound(transmissivity),
    })
}

/// Where photons are added relative to the lossy channel on mode B.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdditionPlacement {
    /// Added to mode A, which never crosses the channel.
    #[default]
    OtherMode,
    /// Added to mode B after the channel.
    SameModeAfterLoss,
    /// Added to mode B before the channel.
    SameModeBeforeLoss,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepOptions {
    pub cutoff: Cutoff,
    pub placement: AdditionPlacement,
    pub alpha_c_sq: f64,
    pub security: SecurityOptions,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            cutoff: Cutoff::default(),
            placement: AdditionPlacement::OtherMode,
            alpha_c_sq: FilterParams::DEFAULT_ALPHA_C_SQ,
            security: SecurityOptions::default(),
        }
    }
}

/// State of one sweep cell.
#[derive(Clone, Debug)]
pub struct CellState {
    pub state: TwoModeState,
    /// Heterodyne postselection success probability.
    pub success_probability: f64,
    /// Husimi variance of the postselected mode before addition.
    pub husimi_variance: f64,
    /// State before photon addition, with the channel applied when the
    /// addition comes after it.
    pub pre_addition: TwoModeState,
}

/// TMSV with `k` photons added and mode B sent through a pure-loss channel.
pub fn prepare_cell_state(lambda: f64, k: usize, transmissivity: f64, options: &SweepOptions) -> Result<CellState> {
    let tmsv = make_tmsv(TmsvParams::new(lambda)?, options.cutoff)?;
    let channel = ChannelParams::pure_loss(transmissivity)?;
    let filter = FilterParams::new(k, options.alpha_c_sq)?;
    let grid = SamplingGrids::default().alpha;
    let cell = |pre: TwoModeState, mode: Mode, state: TwoModeState| {
        let rho = pre.partial_trace(mode);
        let success_probability = if k == 0 { 1.0 } else { filter_success_probability(&rho, options.cutoff, &filter, &grid) };
        CellState { state, success_probability, husimi_variance: husimi_variance(&rho), pre_addition: pre }
    };
    Ok(match options.placement {
        AdditionPlacement::OtherMode => {
            let lossy = loss_channel(&tmsv, Mode::B, channel)?;
            let added = add_photons(&lossy, Mode::A, k)?.0;
            cell(lossy, Mode::A, added)
        }
        AdditionPlacement::SameModeAfterLoss => {
            let lossy = loss_channel(&tmsv, Mode::B, channel)?;
            let added = add_photons(&lossy, Mode::B, k)?.0;
            cell(lossy, Mode::B, added)
        }
        AdditionPlacement::SameModeBeforeLoss => {
            let added = loss_channel(&add_photons(&tmsv, Mode::B, k)?.0, Mode::B, channel)?;
            cell(tmsv, Mode::B, added)
        }
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub k: usize,
    pub transmissivity: f64,
    pub report: std::result::Result<SecurityReport, String>,
}

/// Security reports for every `(k, T)`; failing cells carry their error.
pub fn rate_loss_sweep(lambda: f64, k_values: &[usize], transmissivities: &[f64], options: &SweepOptions) -> Vec<SweepCell> {
    let cells: Vec<(usize, f64)> = k_values.iter().flat_map(|&k| transmissivities.iter().map(move |&t| (k, t))).collect();
    cells
        .par_iter()
        .map(|&(k, t)| {
            let report = prepare_cell_state(lambda, k, t, options)
                .and_then(|c| security_report(&c.state, t, c.success_probability, &options.security))
                .map_err(|e| e.to_string());
            SweepCell { k, transmissivity: t, report }
        })
        .collect()
}
