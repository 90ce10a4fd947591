//! Heterodyne (mode A) and homodyne (mode B) detection: POVM vectors, joint
//! densities, synthetic record generation and the photon-addition
//! postselection filter.

use std::f64::consts::{FRAC_PI_2, PI};
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{hermitian_eigen, project_mode, CMatrix, CVector, Cutoff, Mode, TwoModeState, C64};
use crate::grid::QuadratureGrid;

/// Records are generated in chunks, each with its own RNG stream.
pub const SAMPLING_CHUNK: usize = 1 << 16;
const POSTSELECT_STREAM_OFFSET: u64 = 1 << 40;

/// Hermite-Gaussian wavefunctions `ψ_n(x)`, `n = 0..=n_max`, for
/// `x = (a + a†)/√2`.
pub fn hermite_functions(x: f64, cutoff: Cutoff) -> Vec<f64> {
    let d = cutoff.dim();
    let mut psi = vec![0.0; d];
    psi[0] = PI.powf(-0.25) * (-0.5 * x * x).exp();
    if d > 1 {
        psi[1] = 2f64.sqrt() * x * psi[0];
    }
    for n in 1..d - 1 {
        let nf = n as f64;
        psi[n + 1] = (2.0 / (nf + 1.0)).sqrt() * x * psi[n] - (nf / (nf + 1.0)).sqrt() * psi[n - 1];
    }
    psi
}

/// `<n|x_θ> = e^{-inθ} ψ_n(x)`.
pub fn homodyne_vector(x: f64, theta: f64, cutoff: Cutoff) -> CVector {
    let psi = hermite_functions(x, cutoff);
    CVector::from_iterator(psi.len(), psi.iter().enumerate().map(|(n, &p)| C64::from_polar(p, -(n as f64) * theta)))
}

/// `<n|α> = e^{-|α|²/2} αⁿ / √n!`.
pub fn coherent_vector(alpha: C64, cutoff: Cutoff) -> CVector {
    let d = cutoff.dim();
    let mut v = CVector::zeros(d);
    v[0] = C64::new((-0.5 * alpha.norm_sqr()).exp(), 0.0);
    for n in 1..d {
        v[n] = v[n - 1] * alpha / (n as f64).sqrt();
    }
    v
}

#[derive(Clone, Debug)]
pub struct HomodyneProjector {
    pub x: f64,
    pub theta: f64,
    pub vector: CVector,
}

impl HomodyneProjector {
    pub fn new(x: f64, theta: f64, cutoff: Cutoff) -> Self {
        Self { x, theta, vector: homodyne_vector(x, theta, cutoff) }
    }

    pub fn projector(&self) -> CMatrix {
        &self.vector * self.vector.adjoint()
    }
}

/// Heterodyne outcome; the POVM element is `|α><α| / π`.
#[derive(Clone, Debug)]
pub struct HeterodyneOutcome {
    pub alpha: C64,
    pub vector: CVector,
}

impl HeterodyneOutcome {
    pub fn new(alpha: C64, cutoff: Cutoff) -> Self {
        Self { alpha, vector: coherent_vector(alpha, cutoff) }
    }

    pub fn povm_element(&self) -> CMatrix {
        (&self.vector * self.vector.adjoint()) / C64::new(PI, 0.0)
    }
}

/// One joint detection event: heterodyne `alpha` on mode A, homodyne `x` at
/// angle `theta` on mode B.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub alpha: C64,
    pub x: f64,
    pub theta: f64,
}

impl MeasurementRecord {
    pub fn new(alpha: C64, x: f64, theta: f64) -> Result<Self> {
        if theta != 0.0 && theta != FRAC_PI_2 {
            return Err(Error::InvalidParameter(format!("homodyne angle must be 0 or π/2, got {theta}")));
        }
        Ok(Self { alpha, x, theta })
    }
}

/// Joint probability density of `(α, x)` at angle `θ` (per `d²α dx`).
pub fn joint_density(state: &TwoModeState, alpha: C64, x: f64, theta: f64) -> f64 {
    let cutoff = state.cutoff();
    let v = coherent_vector(alpha, cutoff).kronecker(&homodyne_vector(x, theta, cutoff));
    let p = (v.adjoint() * state.matrix() * &v)[(0, 0)].re;
    p.max(0.0) / PI
}

/// Heterodyne and homodyne sampling grids.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingGrids {
    /// Used for both `Re α` and `Im α`.
    pub alpha: QuadratureGrid,
    pub x: QuadratureGrid,
}

impl Default for SamplingGrids {
    fn default() -> Self {
        Self {
            alpha: QuadratureGrid::new(-6.0, 6.0, 0.05).unwrap(),
            x: QuadratureGrid::new(-8.0, 8.0, 0.01).unwrap(),
        }
    }
}

/// Husimi function `<α|ρ|α>/π` of a single-mode density matrix on the 2-D
/// grid, row-major in `(Re α, Im α)`.
pub fn husimi_grid(rho_mode: &CMatrix, cutoff: Cutoff, grid: &QuadratureGrid) -> Vec<f64> {
    let n = grid.len();
    let nodes = grid.nodes();
    (0..n * n)
        .into_par_iter()
        .map(|idx| {
            let alpha = C64::new(nodes[idx / n], nodes[idx % n]);
            let v = coherent_vector(alpha, cutoff);
            ((v.adjoint() * rho_mode * &v)[(0, 0)].re / PI).max(0.0)
        })
        .collect()
}

pub(crate) fn cumulative(weights: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    weights
        .iter()
        .map(|w| {
            acc += w;
            acc
        })
        .collect()
}

pub(crate) fn inverse_cdf(cdf: &[f64], u: f64) -> usize {
    let target = u * cdf[cdf.len() - 1];
    cdf.partition_point(|&c| c <= target).min(cdf.len() - 1)
}

/// Homodyne density of mode B conditioned on heterodyne vector `a` on mode A,
/// on the nodes of `x_grid`.
///
/// `psi_table` holds `ψ_n(x_i)` row-major. The conditional operator is
/// diagonalized first so the cost scales with its rank.
fn conditional_homodyne_density(
    rho: &CMatrix,
    cutoff: Cutoff,
    a: &CVector,
    theta: f64,
    psi_table: &[f64],
    n_x: usize,
) -> Vec<f64> {
    let d = cutoff.dim();
    let m = project_mode(rho, cutoff, Mode::A, a);
    let (eigenvalues, eigenvectors) = hermitian_eigen(&m);
    let top = eigenvalues.iter().copied().fold(0.0f64, f64::max);
    let mut comps: Vec<(f64, Vec<C64>)> = Vec::new();
    for (k, &mu) in eigenvalues.iter().enumerate() {
        if mu <= 1e-14 * top || mu <= 0.0 {
            continue;
        }
        // amplitude <x_θ|v> = Σ_s ψ_s(x) e^{isθ} v_s
        let w: Vec<C64> = (0..d).map(|s| C64::from_polar(1.0, s as f64 * theta) * eigenvectors[(s, k)]).collect();
        comps.push((mu, w));
    }
    (0..n_x)
        .map(|i| {
            let row = &psi_table[i * d..(i + 1) * d];
            comps
                .iter()
                .map(|(mu, w)| {
                    let amp: C64 = row.iter().zip(w).map(|(p, z)| z * *p).sum();
                    mu * amp.norm_sqr()
                })
                .sum()
        })
        .collect()
}

/// Draws `n` records: `α` from the mode-A Husimi function on the 2-D grid,
/// `θ` uniformly from `{0, π/2}`, then `x` from the conditional homodyne
/// density of mode B. Outcomes are grid nodes. Deterministic in `seed`.
pub fn sample_records(state: &TwoModeState, n: usize, seed: u64) -> Result<Vec<MeasurementRecord>> {
    sample_records_with(state, n, seed, &SamplingGrids::default())
}

pub fn sample_records_with(state: &TwoModeState, n: usize, seed: u64, grids: &SamplingGrids) -> Result<Vec<MeasurementRecord>> {
    let cutoff = state.cutoff();
    let rho_a = state.partial_trace(Mode::A);
    let q = husimi_grid(&rho_a, cutoff, &grids.alpha);
    let h2 = grids.alpha.step().powi(2);
    let mass: f64 = q.iter().sum::<f64>() * h2;
    if mass < 1.0 - 1e-4 {
        log::warn!("heterodyne grid holds only {mass:.6} of the Husimi mass");
    }
    let cdf = cumulative(&q);

    // stage 1: heterodyne cell, angle and a uniform for the homodyne draw
    let chunks = n.div_ceil(SAMPLING_CHUNK);
    let draws: Vec<(u32, bool, f64)> = (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let len = SAMPLING_CHUNK.min(n - c * SAMPLING_CHUNK);
            (0..len)
                .map(|_| {
                    let cell = inverse_cdf(&cdf, rng.gen::<f64>()) as u32;
                    let phase = rng.gen::<bool>();
                    let u = rng.gen::<f64>();
                    (cell, phase, u)
                })
                .collect::<Vec<_>>()
        })
        .collect();

    // stage 2: group by (cell, angle) and invert the conditional CDF
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (draws[i].0, draws[i].1));
    let mut groups: Vec<&[usize]> = Vec::new();
    let mut start = 0;
    for i in 1..=order.len() {
        if i == order.len() || (draws[order[i]].0, draws[order[i]].1) != (draws[order[start]].0, draws[order[start]].1) {
            groups.push(&order[start..i]);
            start = i;
        }
    }
    let x_nodes = grids.x.nodes();
    let psi_table: Vec<f64> = x_nodes.iter().flat_map(|&x| hermite_functions(x, cutoff)).collect();
    let n_alpha = grids.alpha.len();
    let rho = state.matrix();
    let resolved: Vec<Vec<(usize, MeasurementRecord)>> = groups
        .par_iter()
        .map(|members| {
            let (cell, phase, _) = draws[members[0]];
            let cell = cell as usize;
            let alpha = C64::new(grids.alpha.node(cell / n_alpha), grids.alpha.node(cell % n_alpha));
            let theta = if phase { FRAC_PI_2 } else { 0.0 };
            let a = coherent_vector(alpha, cutoff);
            let dens = conditional_homodyne_density(rho, cutoff, &a, theta, &psi_table, x_nodes.len());
            let cdf = cumulative(&dens);
            members
                .iter()
                .map(|&i| {
                    let x = if cdf[cdf.len() - 1] > 0.0 { x_nodes[inverse_cdf(&cdf, draws[i].2)] } else { 0.0 };
                    (i, MeasurementRecord { alpha, x, theta })
                })
                .collect()
        })
        .collect();
    let mut out = vec![MeasurementRecord { alpha: C64::new(0.0, 0.0), x: 0.0, theta: 0.0 }; n];
    for group in resolved {
        for (i, rec) in group {
            out[i] = rec;
        }
    }
    Ok(out)
}

/// Photon-addition postselection filter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterParams {
    pub k: usize,
    /// `|α_c|²`, with `α` the coherent amplitude (vacuum Husimi variance
    /// 1/2 per axis).
    pub alpha_c_sq: f64,
}

impl FilterParams {
    /// `|α_c|² = 6` in heterodyne units whose vacuum variance is 1/4 per
    /// axis, i.e. 12 in coherent-amplitude units.
    pub const DEFAULT_ALPHA_C_SQ: f64 = 12.0;

    pub fn new(k: usize, alpha_c_sq: f64) -> Result<Self> {
        if !(alpha_c_sq > 0.0) {
            return Err(Error::InvalidParameter(format!("alpha_c_sq must be > 0, got {alpha_c_sq}")));
        }
        Ok(Self { k, alpha_c_sq })
    }

    pub fn with_k(k: usize) -> Self {
        Self { k, alpha_c_sq: Self::DEFAULT_ALPHA_C_SQ }
    }
}

/// `|α|^{2k} / |α_c|^{2k}` inside the cutoff radius, 1 outside.
pub fn acceptance_probability(alpha: C64, filter: &FilterParams) -> f64 {
    if filter.k == 0 {
        return 1.0;
    }
    let r2 = alpha.norm_sqr();
    if r2 > filter.alpha_c_sq {
        1.0
    } else {
        (r2 / filter.alpha_c_sq).powi(filter.k as i32)
    }
}

#[derive(Clone, Debug)]
pub struct Postselection {
    pub kept: Vec<MeasurementRecord>,
    /// Fraction of input records kept.
    pub success: f64,
}

/// Keeps each record independently with its acceptance probability.
///
/// Uses RNG streams disjoint from [`sample_records`]. An empty result is
/// returned (and logged), not treated as an error.
pub fn postselect(records: &[MeasurementRecord], filter: &FilterParams, seed: u64) -> Result<Postselection> {
    if records.is_empty() {
        return Err(Error::EmptyRecords);
    }
    let kept: Vec<MeasurementRecord> = records
        .par_chunks(SAMPLING_CHUNK)
        .enumerate()
        .flat_map_iter(|(c, chunk)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(POSTSELECT_STREAM_OFFSET + c as u64);
            chunk
                .iter()
                .filter(|r| rng.gen::<f64>() < acceptance_probability(r.alpha, filter))
                .copied()
                .collect::<Vec<_>>()
        })
        .collect();
    if kept.is_empty() {
        log::warn!("postselection kept no records (k = {})", filter.k);
    }
    let success = kept.len() as f64 / records.len() as f64;
    Ok(Postselection { kept, success })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SuccessPrediction {
    pub probability: f64,
    /// Gaussian heterodyne mass beyond `|α_c|`.
    pub tail_mass: f64,
}

impl SuccessPrediction {
    pub const TAIL_LIMIT: f64 = 1e-3;

    /// False when the negligible-tail assumption behind the closed form fails.
    pub fn formula_valid(&self) -> bool {
        self.tail_mass <= Self::TAIL_LIMIT
    }
}

/// `P_k = 2^k k! σ^{2k} / |α_c|^{2k}` for a Gaussian heterodyne marginal with
/// per-axis variance `σ²`.
pub fn predict_success(sigma_sq: f64, filter: &FilterParams) -> SuccessPrediction {
    let k = filter.k as i32;
    let fact: f64 = (1..=filter.k).map(|i| i as f64).product();
    let probability = 2f64.powi(k) * fact * sigma_sq.powi(k) / filter.alpha_c_sq.powi(k);
    let tail_mass = (-filter.alpha_c_sq / (2.0 * sigma_sq)).exp();
    let pred = SuccessPrediction { probability, tail_mass };
    if filter.k > 0 && !pred.formula_valid() {
        log::warn!("heterodyne tail mass {tail_mass:.2e} beyond the filter cutoff; closed-form success probability is biased");
    }
    pred
}

/// Per-axis variance of the Husimi function of a single-mode state,
/// `(<a a†> - |<a>|²) / 2`.
pub fn husimi_variance(rho_mode: &CMatrix) -> f64 {
    let d = rho_mode.nrows();
    let n_plus_one: f64 = (0..d).map(|n| (n as f64 + 1.0) * rho_mode[(n, n)].re).sum();
    let mean_a: C64 = (1..d).map(|n| (n as f64).sqrt() * rho_mode[(n, n - 1)]).sum();
    (n_plus_one - mean_a.norm_sqr()) / 2.0
}

/// Exact filter acceptance `∫ Q(α) f(α) d²α` for a single-mode state.
pub fn filter_success_probability(rho_mode: &CMatrix, cutoff: Cutoff, filter: &FilterParams, grid: &QuadratureGrid) -> f64 {
    let q = husimi_grid(rho_mode, cutoff, grid);
    let n = grid.len();
    let h2 = grid.step().powi(2);
    q.iter()
        .enumerate()
        .map(|(idx, &w)| w * acceptance_probability(C64::new(grid.node(idx / n), grid.node(idx % n)), filter))
        .sum::<f64>()
        * h2
}

/// Writes records as CSV with 17 significant digits.
pub fn write_records_csv<W: Write>(records: &[MeasurementRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["alpha_re", "alpha_im", "x", "theta"])?;
    for r in records {
        w.write_record([
            format!("{:.16e}", r.alpha.re),
            format!("{:.16e}", r.alpha.im),
            format!("{:.16e}", r.x),
            format!("{:.16e}", r.theta),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records_csv<R: Read>(reader: R) -> Result<Vec<MeasurementRecord>> {
    let mut rd = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for row in rd.records() {
        let row = row?;
        let field = |i: usize| -> Result<f64> {
            row.get(i)
                .ok_or_else(|| Error::InvalidParameter(format!("record row has {} fields", row.len())))?
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::InvalidParameter(format!("bad number in records file: {e}")))
        };
        let theta = field(3)?;
        let theta = if (theta - FRAC_PI_2).abs() < 1e-12 { FRAC_PI_2 } else { theta };
        out.push(MeasurementRecord::new(C64::new(field(0)?, field(1)?), field(2)?, theta)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::states::{add_photons, make_tmsv, TmsvParams};
    use approx::assert_abs_diff_eq;

    fn cut(n: usize) -> Cutoff {
        Cutoff::new(n).unwrap()
    }

    #[test]
    fn homodyne_projectors_resolve_identity() {
        let c = cut(6);
        let g = QuadratureGrid::new(-9.0, 9.0, 0.02).unwrap();
        for theta in [0.0, FRAC_PI_2, 0.7] {
            let mut acc = CMatrix::zeros(c.dim(), c.dim());
            for x in g.nodes() {
                acc += HomodyneProjector::new(x, theta, c).projector() * C64::new(g.step(), 0.0);
            }
            assert!((acc - CMatrix::identity(c.dim(), c.dim())).norm() < 1e-9);
        }
    }

    #[test]
    fn heterodyne_povm_resolves_identity() {
        let c = cut(4);
        let g = QuadratureGrid::new(-7.0, 7.0, 0.1).unwrap();
        let mut acc = CMatrix::zeros(c.dim(), c.dim());
        for re in g.nodes() {
            for im in g.nodes() {
                acc += HeterodyneOutcome::new(C64::new(re, im), c).povm_element() * C64::new(g.step().powi(2), 0.0);
            }
        }
        assert!((acc - CMatrix::identity(c.dim(), c.dim())).norm() < 1e-6);
    }

    #[test]
    fn vacuum_joint_density_closed_form() {
        // Husimi of vacuum at 0 is 1/π, homodyne marginal at 0 is 1/√π
        let vac = TwoModeState::vacuum(cut(5));
        assert_abs_diff_eq!(joint_density(&vac, C64::new(0.0, 0.0), 0.0, 0.0), 1.0 / (PI * PI.sqrt()), epsilon = 1e-14);
        let a = C64::new(0.3, -0.8);
        let x: f64 = 1.1;
        let closed = (-a.norm_sqr()).exp() / PI * (-x * x).exp() / PI.sqrt();
        assert_abs_diff_eq!(joint_density(&vac, a, x, FRAC_PI_2), closed, epsilon = 1e-14);
    }

    #[test]
    fn joint_density_positive_and_normalized() {
        let st = make_tmsv(TmsvParams::new(0.4).unwrap(), cut(8)).unwrap();
        let (st, _) = add_photons(&st, Mode::A, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let a = C64::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
            let x = rng.gen_range(-6.0..6.0);
            let th = rng.gen_range(0.0..PI);
            assert!(joint_density(&st, a, x, th) >= 0.0);
        }
        let ga = QuadratureGrid::new(-5.0, 5.0, 0.25).unwrap();
        let gx = QuadratureGrid::new(-6.0, 6.0, 0.25).unwrap();
        let mut total = 0.0;
        for re in ga.nodes() {
            for im in ga.nodes() {
                for x in gx.nodes() {
                    total += joint_density(&st, C64::new(re, im), x, 0.0);
                }
            }
        }
        total *= ga.step().powi(2) * gx.step();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-3);
    }

    #[test]
    fn tmsv_homodyne_marginal_variance() {
        let st = make_tmsv(TmsvParams::new(0.5).unwrap(), cut(10)).unwrap();
        let recs = sample_records(&st, 1_000_000, 11).unwrap();
        let xs: Vec<f64> = recs.iter().filter(|r| r.theta == 0.0).map(|r| r.x).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        // (2<n> + 1)/2 with <n> = 1/3
        let analytic = 5.0 / 6.0;
        assert!((var / analytic - 1.0).abs() < 0.01, "var {var}");
    }

    #[test]
    fn vacuum_husimi_second_moment() {
        let vac = TwoModeState::vacuum(cut(4));
        let recs = sample_records(&vac, 200_000, 5).unwrap();
        let m2 = recs.iter().map(|r| r.alpha.norm_sqr()).sum::<f64>() / recs.len() as f64;
        assert!((m2 - 1.0).abs() < 0.01, "<|α|²> = {m2}");
    }

    #[test]
    fn sampling_is_deterministic() {
        let st = make_tmsv(TmsvParams::new(0.3).unwrap(), cut(6)).unwrap();
        let a = sample_records(&st, 70_000, 42).unwrap();
        let b = sample_records(&st, 70_000, 42).unwrap();
        let c = sample_records(&st, 70_000, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn acceptance_examples() {
        let f0 = FilterParams::with_k(0);
        assert_eq!(acceptance_probability(C64::new(3.0, 1.0), &f0), 1.0);
        let f1 = FilterParams::new(1, 6.0).unwrap();
        assert_abs_diff_eq!(acceptance_probability(C64::new(3f64.sqrt(), 0.0), &f1), 0.5, epsilon = 1e-12);
        let f2 = FilterParams::new(2, 6.0).unwrap();
        assert_abs_diff_eq!(acceptance_probability(C64::new(0.0, 6f64.sqrt()), &f2), 1.0, epsilon = 1e-12);
        assert!(FilterParams::new(1, 0.0).is_err());
        let mut last = 0.0;
        for i in 0..100 {
            let p = acceptance_probability(C64::new(0.05 * i as f64, 0.0), &f2);
            assert!(p >= last && p <= 1.0);
            last = p;
        }
    }

    #[test]
    fn postselect_zero_photons_keeps_everything() {
        let st = make_tmsv(TmsvParams::new(0.3).unwrap(), cut(6)).unwrap();
        let recs = sample_records(&st, 5000, 1).unwrap();
        let out = postselect(&recs, &FilterParams::with_k(0), 9).unwrap();
        assert_eq!(out.kept.len(), recs.len());
        assert_eq!(out.success, 1.0);
        assert!(matches!(postselect(&[], &FilterParams::with_k(1), 1), Err(Error::EmptyRecords)));
    }

    #[test]
    fn predict_success_examples() {
        assert_abs_diff_eq!(predict_success(0.3, &FilterParams::with_k(0)).probability, 1.0);
        assert_abs_diff_eq!(predict_success(0.3, &FilterParams::new(1, 6.0).unwrap()).probability, 0.1, epsilon = 1e-12);
        // ratio P_{k+1}/P_k = 2(k+1)σ²/|α_c|²
        let f = |k| predict_success(0.3, &FilterParams::new(k, 6.0).unwrap()).probability;
        assert_abs_diff_eq!(f(2) / f(1), 0.2, epsilon = 1e-12);
        assert!(!predict_success(2.0, &FilterParams::new(1, 6.0).unwrap()).formula_valid());
    }

    #[test]
    fn predict_success_matches_numerical_integral() {
        // 2-D Riemann integral of the capped-free weight over a Gaussian
        let sigma_sq: f64 = 0.3;
        let g = QuadratureGrid::new(-6.0, 6.0, 0.01).unwrap();
        let f = FilterParams::new(1, 6.0).unwrap();
        let mut total = 0.0;
        for x in g.nodes() {
            for p in g.nodes() {
                let r2 = x * x + p * p;
                total += r2 / 6.0 * (-r2 / (2.0 * sigma_sq)).exp() / (2.0 * PI * sigma_sq);
            }
        }
        total *= g.step().powi(2);
        assert_abs_diff_eq!(predict_success(sigma_sq, &f).probability, total, epsilon = 1e-9);
    }

    #[test]
    fn husimi_variance_of_thermal_and_tmsv() {
        assert_abs_diff_eq!(husimi_variance(&TwoModeState::vacuum(cut(3)).partial_trace(Mode::A)), 0.5);
        let st = make_tmsv(TmsvParams::new(0.5).unwrap(), cut(20)).unwrap();
        assert_abs_diff_eq!(husimi_variance(&st.partial_trace(Mode::A)), (1.0 / 3.0 + 1.0) / 2.0, epsilon = 1e-9);
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let st = make_tmsv(TmsvParams::new(0.5).unwrap(), cut(6)).unwrap();
        let mut recs = sample_records(&st, 300, 8).unwrap();
        recs[0].alpha = C64::new(0.1 + 0.2, -1.0 / 3.0);
        recs[1].x = std::f64::consts::E * 1e-7;
        let mut buf = Vec::new();
        write_records_csv(&recs, &mut buf).unwrap();
        let back = read_records_csv(buf.as_slice()).unwrap();
        assert_eq!(back.len(), recs.len());
        for (a, b) in recs.iter().zip(&back) {
            assert_eq!(a.alpha.re.to_bits(), b.alpha.re.to_bits());
            assert_eq!(a.alpha.im.to_bits(), b.alpha.im.to_bits());
            assert_eq!(a.x.to_bits(), b.x.to_bits());
            assert_eq!(a.theta.to_bits(), b.theta.to_bits());
        }
    }

    #[test]
    fn postselected_heterodyne_marginal_chi_squared() {
        let c = cut(10);
        let st = make_tmsv(TmsvParams::new(0.5).unwrap(), c).unwrap();
        let grids = SamplingGrids::default();
        let recs = sample_records(&st, 400_000, 21).unwrap();
        let filter = FilterParams::new(1, 12.0).unwrap();
        let kept = postselect(&recs, &filter, 22).unwrap().kept;
        assert!(kept.len() > 30_000);

        // expected radial-bin masses from the weighted Husimi function on the same nodes
        let edges = [0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 2.5, 3.0, 4.0, 5.0, 7.0, f64::INFINITY];
        let bin = |r2: f64| edges.windows(2).position(|w| r2 >= w[0] && r2 < w[1]).unwrap();
        let q = husimi_grid(&st.partial_trace(Mode::A), c, &grids.alpha);
        let n = grids.alpha.len();
        let mut expected = vec![0.0; edges.len() - 1];
        for (idx, w) in q.iter().enumerate() {
            let a = C64::new(grids.alpha.node(idx / n), grids.alpha.node(idx % n));
            expected[bin(a.norm_sqr())] += w * acceptance_probability(a, &filter);
        }
        let total: f64 = expected.iter().sum();
        let mut observed = vec![0.0; expected.len()];
        for r in &kept {
            observed[bin(r.alpha.norm_sqr())] += 1.0;
        }
        let chi2: f64 = observed
            .iter()
            .zip(&expected)
            .map(|(o, e)| {
                let e = e / total * kept.len() as f64;
                (o - e).powi(2) / e
            })
            .sum();
        // 99.9% quantile of chi-squared with 11 degrees of freedom
        assert!(chi2 < 31.26, "chi2 = {chi2}");
    }

    #[test]
    fn empirical_success_within_three_sigma() {
        let c = cut(10);
        let st = make_tmsv(TmsvParams::new(0.5).unwrap(), c).unwrap();
        let recs = sample_records(&st, 200_000, 31).unwrap();
        let sigma_sq = husimi_variance(&st.partial_trace(Mode::A));
        for k in 1..=2 {
            let filter = FilterParams::new(k, 12.0).unwrap();
            let pred = predict_success(sigma_sq, &filter);
            assert!(pred.formula_valid());
            let got = postselect(&recs, &filter, 32).unwrap().success;
            let sd = (pred.probability * (1.0 - pred.probability) / recs.len() as f64).sqrt();
            assert!((got - pred.probability).abs() < 3.0 * sd + pred.tail_mass, "k={k}: {got} vs {}", pred.probability);
        }
    }

    #[test]
    fn tmsv_quadrature_correlations_mirror() {
        let c = cut(12);
        let st = make_tmsv(TmsvParams::new(0.5).unwrap(), c).unwrap();
        let density = |x: f64, y: f64, th: f64| {
            let v = homodyne_vector(x, th, c).kronecker(&homodyne_vector(y, th, c));
            (v.adjoint() * st.matrix() * &v)[(0, 0)].re
        };
        for (x, y) in [(0.3, 0.7), (-1.2, 0.4), (0.9, -0.9), (1.5, 1.1)] {
            assert_abs_diff_eq!(density(x, y, 0.0), density(x, -y, FRAC_PI_2), epsilon = 1e-12);
        }
        assert!(density(0.8, 0.8, 0.0) > density(0.8, -0.8, 0.0));
    }

    #[test]
    fn rejects_unmeasured_angles() {
        assert!(MeasurementRecord::new(C64::new(0.0, 0.0), 0.0, 0.3).is_err());
        let bad = "alpha_re,alpha_im,x,theta\n0,0,0,1.0\n";
        assert!(read_records_csv(bad.as_bytes()).is_err());
    }
}
