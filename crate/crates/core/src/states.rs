//! Two-mode squeezed vacuum construction, photon addition/subtraction, and
//! loss channels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{annihilation, conjugate_on_mode, creation, CMatrix, Cutoff, Mode, TwoModeState, CVector, C64};

/// Minimum probability mass the truncated Fock space must retain.
pub const TRUNCATION_ADEQUACY: f64 = 0.999;
/// Largest fraction of the `(a†)^k` weight that may be pushed past `n_max`.
pub const ADDITION_OVERFLOW_TOLERANCE: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TmsvParams {
    lambda: f64,
}

impl TmsvParams {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&lambda) {
            return Err(Error::InvalidParameter(format!("lambda must lie in [0, 1), got {lambda}")));
        }
        Ok(Self { lambda })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Probability retained by truncating the Schmidt sum at `n_max`.
    pub fn retained_probability(&self, cutoff: Cutoff) -> f64 {
        1.0 - (self.lambda * self.lambda).powi(cutoff.dim() as i32)
    }

    /// Mean photon number per mode of the untruncated state.
    pub fn mean_photons(&self) -> f64 {
        let l2 = self.lambda * self.lambda;
        l2 / (1.0 - l2)
    }
}

/// Pure TMSV `√(1-λ²) Σ λⁿ |n>|n>`, renormalized after truncation.
pub fn make_tmsv(params: TmsvParams, cutoff: Cutoff) -> Result<TwoModeState> {
    let retained = params.retained_probability(cutoff);
    if retained < TRUNCATION_ADEQUACY {
        return Err(Error::TruncationInadequate { retained, required: TRUNCATION_ADEQUACY });
    }
    let mut psi = CVector::zeros(cutoff.joint_dim());
    let norm = (1.0 - params.lambda * params.lambda).sqrt();
    for n in 0..cutoff.dim() {
        psi[cutoff.index(n, n)] = C64::new(norm * params.lambda.powi(n as i32), 0.0);
    }
    TwoModeState::pure(cutoff, &psi)
}

fn rising_factorial(n: usize, k: usize) -> f64 {
    (1..=k).map(|i| (n + i) as f64).product()
}

fn mode_populations(state: &TwoModeState, mode: Mode) -> Vec<f64> {
    crate::fock::real_diag(&state.partial_trace(mode))
}

/// Normalized `(a†)^k ρ a^k` on `mode`, together with its raw trace.
pub fn add_photons(state: &TwoModeState, mode: Mode, k: usize) -> Result<(TwoModeState, f64)> {
    if k == 0 {
        let w = state.matrix().trace().re;
        return Ok((state.clone(), w));
    }
    let cutoff = state.cutoff();
    let n_max = cutoff.n_max();
    // `a^k (a†)^k` is diagonal with entries (n+1)...(n+k); compare the weight
    // that stays inside the truncation with the untruncated one.
    let pops = mode_populations(state, mode);
    let full: f64 = pops.iter().enumerate().map(|(n, p)| p * rising_factorial(n, k)).sum();
    let kept: f64 = pops.iter().enumerate().filter(|(n, _)| n + k <= n_max).map(|(n, p)| p * rising_factorial(n, k)).sum();
    let lost = if full > 0.0 { 1.0 - kept / full } else { 1.0 };
    if k > n_max || lost > ADDITION_OVERFLOW_TOLERANCE {
        return Err(Error::TruncationOverflow { lost });
    }
    let op = creation(cutoff).pow(k as u32).into_matrix();
    let out = conjugate_on_mode(state.matrix(), cutoff, &op, mode);
    TwoModeState::from_operator(cutoff, out)
}

/// Normalized `a^k ρ (a†)^k` on `mode`, together with its raw trace.
pub fn subtract_photons(state: &TwoModeState, mode: Mode, k: usize) -> Result<(TwoModeState, f64)> {
    if k == 0 {
        let w = state.matrix().trace().re;
        return Ok((state.clone(), w));
    }
    let cutoff = state.cutoff();
    let op = annihilation(cutoff).pow(k as u32).into_matrix();
    let out = conjugate_on_mode(state.matrix(), cutoff, &op, mode);
    if out.trace().re <= 1e-300 {
        return Err(Error::ZeroWeight);
    }
    TwoModeState::from_operator(cutoff, out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    transmissivity: f64,
    thermal_mean_photons: f64,
}

impl ChannelParams {
    pub fn new(transmissivity: f64, thermal_mean_photons: f64) -> Result<Self> {
        if !(transmissivity > 0.0 && transmissivity <= 1.0) {
            return Err(Error::InvalidParameter(format!("transmissivity must lie in (0, 1], got {transmissivity}")));
        }
        if !(thermal_mean_photons >= 0.0) {
            return Err(Error::InvalidParameter(format!("thermal mean photons must be >= 0, got {thermal_mean_photons}")));
        }
        Ok(Self { transmissivity, thermal_mean_photons })
    }

    pub fn pure_loss(transmissivity: f64) -> Result<Self> {
        Self::new(transmissivity, 0.0)
    }

    /// Loss given in dB, `T = 10^(-dB/10)`.
    pub fn from_loss_db(db: f64) -> Result<Self> {
        if !(db >= 0.0) {
            return Err(Error::InvalidParameter(format!("loss must be >= 0 dB, got {db}")));
        }
        Self::pure_loss(10f64.powf(-db / 10.0))
    }

    pub fn transmissivity(&self) -> f64 {
        self.transmissivity
    }

    pub fn thermal_mean_photons(&self) -> f64 {
        self.thermal_mean_photons
    }

    pub fn loss_db(&self) -> f64 {
        -10.0 * self.transmissivity.log10()
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

/// Pure-loss Kraus operators `K_l = Σ_n √(C(n,l) T^(n-l) (1-T)^l) |n-l><n|`.
pub fn loss_kraus_operators(cutoff: Cutoff, transmissivity: f64) -> Vec<CMatrix> {
    let d = cutoff.dim();
    let r = 1.0 - transmissivity;
    (0..d)
        .map(|l| {
            let mut k = CMatrix::zeros(d, d);
            for n in l..d {
                let amp = binomial(n, l) * transmissivity.powi((n - l) as i32) * r.powi(l as i32);
                k[(n - l, n)] = C64::new(amp.sqrt(), 0.0);
            }
            k
        })
        .filter(|k| k.iter().any(|z| z.norm_sqr() > 0.0))
        .collect()
}

/// Truncated thermal populations with mean `nbar`, renormalized.
fn thermal_populations(cutoff: Cutoff, nbar: f64) -> Result<Vec<f64>> {
    let q = nbar / (1.0 + nbar);
    let raw: Vec<f64> = (0..cutoff.dim()).map(|n| (1.0 - q) * q.powi(n as i32)).collect();
    let retained: f64 = raw.iter().sum();
    if retained < TRUNCATION_ADEQUACY {
        return Err(Error::TruncationInadequate { retained, required: TRUNCATION_ADEQUACY });
    }
    Ok(raw.into_iter().map(|p| p / retained).collect())
}

/// Kraus operators of a beamsplitter of transmissivity `T` mixing the mode
/// with a thermal ancilla of mean `nbar`, with the ancilla traced out.
///
/// Operator `(j, q)` maps `|m>` to the component of `U|m, j>` with `q`
/// photons left in the ancilla, weighted by `√τ_j`.
pub fn thermal_loss_kraus_operators(cutoff: Cutoff, transmissivity: f64, nbar: f64) -> Result<Vec<CMatrix>> {
    let d = cutoff.dim();
    let tau = thermal_populations(cutoff, nbar)?;
    let st = transmissivity.sqrt();
    let sr = (1.0 - transmissivity).sqrt();
    let mut out = Vec::new();
    for (j, &tj) in tau.iter().enumerate() {
        if tj == 0.0 {
            continue;
        }
        for q in 0..(2 * d - 1) {
            let mut k = CMatrix::zeros(d, d);
            let mut any = false;
            for m in 0..d {
                let total = m + j;
                if q > total {
                    continue;
                }
                let p = total - q;
                if p >= d {
                    continue;
                }
                // (√T a† + √R b†)^m (−√R a† + √T b†)^j |0,0> / √(m! j!)
                let mut coeff = 0.0;
                for u in 0..=m.min(p) {
                    let v = p - u;
                    if v > j {
                        continue;
                    }
                    let sign = if v % 2 == 0 { 1.0 } else { -1.0 };
                    coeff += binomial(m, u)
                        * binomial(j, v)
                        * st.powi(u as i32)
                        * sr.powi((m - u) as i32)
                        * sign
                        * sr.powi(v as i32)
                        * st.powi((j - v) as i32);
                }
                coeff *= (factorial(p) * factorial(q) / (factorial(m) * factorial(j))).sqrt();
                if coeff != 0.0 {
                    k[(p, m)] = C64::new(tj.sqrt() * coeff, 0.0);
                    any = true;
                }
            }
            if any {
                out.push(k);
            }
        }
    }
    Ok(out)
}

fn apply_kraus(state: &TwoModeState, mode: Mode, kraus: &[CMatrix]) -> Result<TwoModeState> {
    let cutoff = state.cutoff();
    let dim = cutoff.joint_dim();
    let mut acc = CMatrix::zeros(dim, dim);
    for k in kraus {
        acc += conjugate_on_mode(state.matrix(), cutoff, k, mode);
    }
    TwoModeState::from_operator(cutoff, acc).map(|(s, _)| s)
}

/// Attenuates `mode` with transmissivity `T`, optionally mixing in thermal
/// noise through the ancilla port.
pub fn loss_channel(state: &TwoModeState, mode: Mode, params: ChannelParams) -> Result<TwoModeState> {
    if params.transmissivity == 1.0 && params.thermal_mean_photons == 0.0 {
        return Ok(state.clone());
    }
    let kraus = if params.thermal_mean_photons == 0.0 {
        loss_kraus_operators(state.cutoff(), params.transmissivity)
    } else {
        thermal_loss_kraus_operators(state.cutoff(), params.transmissivity, params.thermal_mean_photons)?
    };
    apply_kraus(state, mode, &kraus)
}

/// Source imperfections of the simulated experiment: symmetric loss on both
/// modes followed by Gaussian phase diffusion on mode A.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImpurityParams {
    pub transmissivity: f64,
    /// Standard deviation of the random phase, radians.
    pub phase_std: f64,
    pub phase_points: usize,
}

impl ImpurityParams {
    pub fn none() -> Self {
        Self { transmissivity: 1.0, phase_std: 0.0, phase_points: 1 }
    }

    /// Calibrated so that `noisy_tmsv(CALIBRATED_LAMBDA, default)` has purity
    /// close to 0.71, falling to about 0.57, 0.47 and 0.39 after adding one,
    /// two and three photons to mode A.
    pub fn calibrated() -> Self {
        Self { transmissivity: 0.8, phase_std: 0.7, phase_points: 41 }
    }

    fn validate(&self) -> Result<()> {
        if !(self.transmissivity > 0.0 && self.transmissivity <= 1.0) {
            return Err(Error::InvalidParameter(format!("impurity transmissivity {} outside (0, 1]", self.transmissivity)));
        }
        if !(self.phase_std >= 0.0) {
            return Err(Error::InvalidParameter("phase_std must be >= 0".into()));
        }
        if self.phase_std > 0.0 && self.phase_points < 3 {
            return Err(Error::InvalidParameter("phase diffusion needs at least 3 phase points".into()));
        }
        Ok(())
    }
}

impl Default for ImpurityParams {
    fn default() -> Self {
        Self::calibrated()
    }
}

/// Squeezing parameter used with [`ImpurityParams::calibrated`].
pub const CALIBRATED_LAMBDA: f64 = 0.5;

/// Weights `w(Δ) = Σ_i w_i e^{iΔφ_i}` of the phase-diffusion average for
/// photon-number differences `Δ = 0..d`.
fn dephasing_factors(impurity: &ImpurityParams, d: usize) -> Vec<C64> {
    let m = impurity.phase_points;
    let span = 4.0 * impurity.phase_std;
    let phases: Vec<f64> = (0..m).map(|i| -span + 2.0 * span * i as f64 / (m - 1) as f64).collect();
    let raw: Vec<f64> = phases.iter().map(|p| (-p * p / (2.0 * impurity.phase_std.powi(2))).exp()).collect();
    let total: f64 = raw.iter().sum();
    (0..d)
        .map(|delta| {
            phases.iter().zip(&raw).map(|(p, w)| C64::from_polar(w / total, delta as f64 * p)).sum()
        })
        .collect()
}

/// Averages `U(φ) ρ U(φ)†`, `U = e^{iφ n_A}`, over a Gaussian phase grid.
pub fn phase_diffuse(state: &TwoModeState, impurity: &ImpurityParams) -> Result<TwoModeState> {
    if impurity.phase_std == 0.0 {
        return Ok(state.clone());
    }
    let cutoff = state.cutoff();
    let d = cutoff.dim();
    let factors = dephasing_factors(impurity, d);
    let rho = state.matrix();
    let out = CMatrix::from_fn(cutoff.joint_dim(), cutoff.joint_dim(), |i, j| {
        let (r, r2) = (i / d, j / d);
        let f = if r >= r2 { factors[r - r2] } else { factors[r2 - r].conj() };
        rho[(i, j)] * f
    });
    TwoModeState::from_operator(cutoff, out).map(|(s, _)| s)
}

/// Surrogate for an imperfect TMSV source.
pub fn noisy_tmsv(params: TmsvParams, impurity: ImpurityParams, cutoff: Cutoff) -> Result<TwoModeState> {
    impurity.validate()?;
    let mut state = make_tmsv(params, cutoff)?;
    if impurity.transmissivity < 1.0 {
        let ch = ChannelParams::pure_loss(impurity.transmissivity)?;
        state = loss_channel(&state, Mode::A, ch)?;
        state = loss_channel(&state, Mode::B, ch)?;
    }
    phase_diffuse(&state, &impurity)
}
