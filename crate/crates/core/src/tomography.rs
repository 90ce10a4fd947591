//! Maximum-likelihood reconstruction of two-mode states from joint
//! heterodyne/homodyne records by the RρR fixed-point iteration.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{fidelity, project_mode, CMatrix, CVector, Cutoff, Mode, TwoModeState, C64};
use crate::grid::pairwise_sum;
use crate::measurement::{coherent_vector, homodyne_vector, MeasurementRecord};

/// Records with likelihood below this are left out of the current iteration.
pub const PROBABILITY_FLOOR: f64 = 1e-14;
/// Smallest dilution tried before the iteration gives up.
pub const MIN_DILUTION: f64 = 1e-6;
const GROUP_CHUNK: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MleConfig {
    pub max_iterations: usize,
    /// Stop once `1 - F(ρ_t, ρ_{t+1})` falls below this.
    pub convergence_epsilon: f64,
    /// Initial step `μ` of `R_μ = (1-μ) I + μ R/N`; 1 is plain RρR.
    pub dilution: f64,
}

impl Default for MleConfig {
    fn default() -> Self {
        Self { max_iterations: 500, convergence_epsilon: 1e-6, dilution: 1.0 }
    }
}

impl MleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::InvalidParameter("max_iterations must be >= 1".into()));
        }
        if !(self.convergence_epsilon > 0.0) {
            return Err(Error::InvalidParameter("convergence_epsilon must be > 0".into()));
        }
        if !(self.dilution > 0.0 && self.dilution <= 1.0) {
            return Err(Error::InvalidParameter(format!("dilution must lie in (0, 1], got {}", self.dilution)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MleDiagnostics {
    pub records: usize,
    pub amplitude_quadrature_records: usize,
    pub phase_quadrature_records: usize,
    pub iterations: usize,
    /// Log-likelihood of every accepted iterate, starting with the initial state.
    pub log_likelihood: Vec<f64>,
    pub final_log_likelihood: f64,
    /// Records under the probability floor at the returned iterate.
    pub excluded_records: usize,
    pub converged: bool,
    /// Dilution fell below [`MIN_DILUTION`] without raising the likelihood.
    pub aborted: bool,
    pub final_dilution: f64,
    pub final_infidelity_step: f64,
    pub wall_time_s: f64,
}

impl MleDiagnostics {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// `R = Σ_j π_j / Tr(π_j ρ)` built record by record from the full two-mode
/// projectors. Returns `R` and the number of records skipped under
/// [`PROBABILITY_FLOOR`].
///
/// Reference implementation; [`reconstruct`] uses a grouped equivalent.
pub fn r_operator(records: &[MeasurementRecord], rho: &TwoModeState) -> Result<(CMatrix, usize)> {
    if records.is_empty() {
        return Err(Error::EmptyRecords);
    }
    let cutoff = rho.cutoff();
    let vectors: Vec<CVector> = records
        .iter()
        .map(|r| coherent_vector(r.alpha, cutoff).kronecker(&homodyne_vector(r.x, r.theta, cutoff)))
        .collect();
    Ok(r_operator_from_vectors(&vectors, rho.matrix()))
}

/// `Σ_j |v_j><v_j| / <v_j|ρ|v_j>` for rank-one effects.
pub fn r_operator_from_vectors(vectors: &[CVector], rho: &CMatrix) -> (CMatrix, usize) {
    let dim = rho.nrows();
    let mut r = CMatrix::zeros(dim, dim);
    let mut excluded = 0;
    for v in vectors {
        let p = (v.adjoint() * rho * v)[(0, 0)].re;
        if p < PROBABILITY_FLOOR {
            excluded += 1;
            continue;
        }
        r += (v * v.adjoint()) / C64::new(p, 0.0);
    }
    (r, excluded)
}

struct HomodyneGroup {
    vector: CVector,
    /// `(heterodyne index, multiplicity)`.
    pairs: Vec<(u32, f64)>,
}

/// Records grouped by distinct homodyne outcome and distinct heterodyne
/// outcome, in a canonical order independent of the input order.
struct GroupedRecords {
    alpha_vectors: Vec<CVector>,
    groups: Vec<HomodyneGroup>,
}

fn group_records(records: &[MeasurementRecord], cutoff: Cutoff) -> GroupedRecords {
    let key = |z: f64| z.to_bits();
    let mut alpha_index: BTreeMap<(u64, u64), u32> = BTreeMap::new();
    for r in records {
        alpha_index.entry((key(r.alpha.re), key(r.alpha.im))).or_insert(0);
    }
    for (i, v) in alpha_index.values_mut().enumerate() {
        *v = i as u32;
    }
    let alpha_vectors: Vec<CVector> = alpha_index
        .keys()
        .map(|&(re, im)| coherent_vector(C64::new(f64::from_bits(re), f64::from_bits(im)), cutoff))
        .collect();

    let mut counts: BTreeMap<(u64, u64), BTreeMap<u32, f64>> = BTreeMap::new();
    for r in records {
        let a = alpha_index[&(key(r.alpha.re), key(r.alpha.im))];
        *counts.entry((key(r.theta), key(r.x))).or_default().entry(a).or_insert(0.0) += 1.0;
    }
    let groups = counts
        .into_iter()
        .map(|((theta, x), pairs)| HomodyneGroup {
            vector: homodyne_vector(f64::from_bits(x), f64::from_bits(theta), cutoff),
            pairs: pairs.into_iter().collect(),
        })
        .collect();
    GroupedRecords { alpha_vectors, groups }
}

struct Evaluation {
    r: CMatrix,
    log_likelihood: f64,
    excluded: usize,
    included: f64,
}

fn tree_sum(mut parts: Vec<CMatrix>) -> CMatrix {
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(a) = it.next() {
            next.push(match it.next() {
                Some(b) => a + b,
                None => a,
            });
        }
        parts = next;
    }
    parts.pop().expect("at least one partial sum")
}

fn evaluate(data: &GroupedRecords, rho: &CMatrix, cutoff: Cutoff) -> Evaluation {
    let d = cutoff.dim();
    let dim = cutoff.joint_dim();
    let partial: Vec<(CMatrix, Vec<f64>, usize, f64)> = data
        .groups
        .par_chunks(GROUP_CHUNK)
        .map(|chunk| {
            let mut r = CMatrix::zeros(dim, dim);
            let mut terms = Vec::new();
            let mut excluded = 0usize;
            let mut included = 0.0;
            for g in chunk {
                let n_a = project_mode(rho, cutoff, Mode::B, &g.vector);
                let mut acc = CMatrix::zeros(d, d);
                for &(ai, c) in &g.pairs {
                    let a = &data.alpha_vectors[ai as usize];
                    let na = &n_a * a;
                    let p = a.dotc(&na).re;
                    if p < PROBABILITY_FLOOR {
                        excluded += c as usize;
                        continue;
                    }
                    terms.push(c * p.ln());
                    included += c;
                    let w = c / p;
                    for j in 0..d {
                        let aj = a[j].conj() * w;
                        for i in 0..d {
                            acc[(i, j)] += a[i] * aj;
                        }
                    }
                }
                let h = &g.vector;
                for r1 in 0..d {
                    for r2 in 0..d {
                        let z = acc[(r1, r2)];
                        if z == C64::new(0.0, 0.0) {
                            continue;
                        }
                        for s1 in 0..d {
                            let zh = z * h[s1];
                            for s2 in 0..d {
                                r[(d * r1 + s1, d * r2 + s2)] += zh * h[s2].conj();
                            }
                        }
                    }
                }
            }
            (r, terms, excluded, included)
        })
        .collect();
    let mut terms = Vec::new();
    let mut excluded = 0;
    let mut included = 0.0;
    let mut parts = Vec::with_capacity(partial.len());
    for (r, t, e, n) in partial {
        parts.push(r);
        terms.extend(t);
        excluded += e;
        included += n;
    }
    Evaluation { r: tree_sum(parts), log_likelihood: pairwise_sum(&terms), excluded, included }
}

fn step(rho: &CMatrix, eval: &Evaluation, mu: f64, cutoff: Cutoff) -> Result<TwoModeState> {
    let dim = cutoff.joint_dim();
    let r = if eval.included > 0.0 { &eval.r / C64::new(eval.included, 0.0) } else { eval.r.clone() };
    let r_mu = CMatrix::identity(dim, dim) * C64::new(1.0 - mu, 0.0) + r * C64::new(mu, 0.0);
    let next = &r_mu * rho * &r_mu;
    TwoModeState::from_operator(cutoff, next).map(|(s, _)| s)
}

/// Iterates `ρ ← N(R_μ ρ R_μ)` from the maximally mixed state.
///
/// If an update would lower the log-likelihood beyond a relative slack of
/// 1e-9, it is discarded and `μ` is halved. Non-convergence is reported in
/// the diagnostics; the last accepted iterate is returned.
pub fn reconstruct(records: &[MeasurementRecord], cutoff: Cutoff, config: &MleConfig) -> Result<(TwoModeState, MleDiagnostics)> {
    config.validate()?;
    if records.is_empty() {
        return Err(Error::EmptyRecords);
    }
    let start = Instant::now();
    let amplitude = records.iter().filter(|r| r.theta == 0.0).count();
    let phase = records.iter().filter(|r| r.theta == FRAC_PI_2).count();
    if amplitude < 100_000 || phase < 100_000 {
        log::info!("reconstructing from {amplitude} amplitude and {phase} phase quadrature records");
    }
    let data = group_records(records, cutoff);

    let mut state = TwoModeState::maximally_mixed(cutoff);
    let mut eval = evaluate(&data, state.matrix(), cutoff);
    let mut lls = vec![eval.log_likelihood];
    let mut mu = config.dilution;
    let mut iterations = 0;
    let mut converged = false;
    let mut aborted = false;
    let mut last_step = f64::INFINITY;
    while iterations < config.max_iterations {
        iterations += 1;
        let candidate = step(state.matrix(), &eval, mu, cutoff)?;
        let next = evaluate(&data, candidate.matrix(), cutoff);
        let slack = 1e-9 * eval.log_likelihood.abs().max(1.0);
        if next.log_likelihood < eval.log_likelihood - slack {
            mu *= 0.5;
            log::debug!("likelihood decreased at iteration {iterations}; dilution now {mu:e}");
            if mu < MIN_DILUTION {
                aborted = true;
                break;
            }
            continue;
        }
        last_step = 1.0 - fidelity(state.matrix(), candidate.matrix())?;
        state = candidate;
        eval = next;
        lls.push(eval.log_likelihood);
        if last_step < config.convergence_epsilon {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("maximum-likelihood iteration stopped after {iterations} iterations without converging (last step {last_step:.3e})");
    }
    let diagnostics = MleDiagnostics {
        records: records.len(),
        amplitude_quadrature_records: amplitude,
        phase_quadrature_records: phase,
        iterations,
        final_log_likelihood: eval.log_likelihood,
        log_likelihood: lls,
        excluded_records: eval.excluded,
        converged,
        aborted,
        final_dilution: mu,
        final_infidelity_step: last_step,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    Ok((state, diagnostics))
}
