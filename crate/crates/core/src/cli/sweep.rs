//! Sweep execution, checkpoints and artifacts.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Pipeline, SweepConfig};
use crate::analysis::{kurtosis, log_negativity, wigner};
use crate::error::{Error, Result};
use crate::fock::{check_density, fidelity, purity, Mode, TwoModeState};
use crate::grid::QuadratureGrid;
use crate::measurement::{postselect, predict_success, sample_records_with, FilterParams};
use crate::protocol::{table_bit_error_rate, BerEstimate};
use crate::security::{joint_quadrature_distribution, prepare_cell_state, security_report_with_table, JointTable, SecurityReport};
use crate::tomography::reconstruct;

pub const CELLS_DIR: &str = "cells";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const CELLS_JSON: &str = "cells.json";
pub const MANIFEST_JSON: &str = "manifest.json";

/// Joint-table snapshots keep every `SNAPSHOT_STRIDE`-th node.
pub const SNAPSHOT_STRIDE: usize = 4;

pub const CSV_COLUMNS: [&str; 13] = [
    "k",
    "T",
    "loss_dB",
    "I_AB",
    "chi_E",
    "keyrate",
    "gaussian_I_AB",
    "gaussian_chi_E",
    "gaussian_keyrate",
    "success_prob",
    "plob",
    "ber",
    "ber_stderr",
];

/// Down-sampled joint quadrature table, row-major `(x, y)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointSnapshot {
    pub grid: QuadratureGrid,
    pub values: Vec<f64>,
}

impl JointSnapshot {
    fn from_table(table: &JointTable) -> Result<Self> {
        let g = table.x;
        let idx: Vec<usize> = (0..g.len()).step_by(SNAPSHOT_STRIDE).collect();
        let hi = g.node(*idx.last().expect("grid is non-empty"));
        let grid = QuadratureGrid::new(g.lo(), hi, g.step() * SNAPSHOT_STRIDE as f64)?;
        let values = idx.iter().flat_map(|&i| idx.iter().map(move |&j| table.density[(i, j)])).collect();
        Ok(Self { grid, values })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub report: SecurityReport,
    pub ber: BerEstimate,
    pub log_negativity: f64,
    pub purity: f64,
    pub kurtosis_a: f64,
    pub kurtosis_b: f64,
    /// `W(0, 0)` of mode A.
    pub wigner_origin_a: f64,
    pub husimi_variance: f64,
    pub predicted_success: f64,
    /// Fidelity of the reconstructed state with the exact one.
    pub reconstruction_fidelity: Option<f64>,
    /// Only for the lowest-loss cell of each `k`.
    pub joint: Option<JointSnapshot>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub k: usize,
    pub t_index: usize,
    pub transmissivity: f64,
    pub loss_db: f64,
    pub config_hash: String,
    pub metrics: Option<CellMetrics>,
    pub error: Option<String>,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestCell {
    pub k: usize,
    pub transmissivity: f64,
    pub ok: bool,
    pub reused: bool,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config_hash: String,
    pub config: SweepConfig,
    pub transmissivities: Vec<f64>,
    pub cells: Vec<ManifestCell>,
    pub total_wall_time_s: f64,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    /// Recompute cells that already have a checkpoint.
    pub force: bool,
    /// Worker threads; 0 uses rayon's default.
    pub workers: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSummary {
    pub out_dir: PathBuf,
    pub cells: usize,
    pub failed: usize,
    pub reused: usize,
}

impl SweepSummary {
    pub fn all_failed(&self) -> bool {
        self.cells > 0 && self.failed == self.cells
    }
}

pub fn loss_db(transmissivity: f64) -> f64 {
    if transmissivity >= 1.0 {
        0.0
    } else {
        -10.0 * transmissivity.log10()
    }
}

/// Writes through a temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn cell_path(dir: &Path, k: usize, t_index: usize) -> PathBuf {
    dir.join(CELLS_DIR).join(format!("k{k}_t{t_index}.json"))
}

fn cell_seed(base: u64, k: usize, t_index: usize) -> u64 {
    base.wrapping_add(1000 * k as u64 + t_index as u64)
}

fn analyzed_state(config: &SweepConfig, k: usize, t_index: usize, transmissivity: f64) -> Result<(TwoModeState, f64, f64, Option<f64>)> {
    let options = config.sweep_options()?;
    let cell = prepare_cell_state(config.lambda, k, transmissivity, &options)?;
    match config.pipeline {
        Pipeline::ExactOperator => Ok((cell.state, cell.success_probability, cell.husimi_variance, None)),
        Pipeline::PostselectTomography => {
            let grids = config.sampling_grids()?;
            let records = sample_records_with(&cell.pre_addition, config.tomography.n_samples, config.seeds.sampling.wrapping_add(t_index as u64), &grids)?;
            let filter = FilterParams::new(k, config.alpha_c_sq)?;
            let selected = postselect(&records, &filter, cell_seed(config.seeds.postselect, k, t_index))?;
            let (rec, diag) = reconstruct(&selected.kept, options.cutoff, &config.tomography.mle)?;
            if diag.aborted {
                return Err(Error::Reconstruction(format!("k={k}, T={transmissivity}: step size collapsed")));
            }
            let f = fidelity(rec.matrix(), cell.state.matrix())?;
            Ok((rec, selected.success, cell.husimi_variance, Some(f)))
        }
    }
}

fn compute_cell(config: &SweepConfig, k: usize, t_index: usize, transmissivity: f64, snapshot: bool) -> Result<CellMetrics> {
    let options = config.sweep_options()?;
    let (state, success, husimi_variance, reconstruction_fidelity) = analyzed_state(config, k, t_index, transmissivity)?;
    check_density(state.matrix(), state.cutoff().joint_dim())?;
    let sec = &options.security;
    let table = joint_quadrature_distribution(&state, sec.theta_a, sec.theta_b, &sec.grid)?;
    let mut report = security_report_with_table(&state, &table, transmissivity, success, sec)?;
    if config.include_overhead {
        report = report.with_overhead();
    }
    let ber_config = config.ber_config(cell_seed(config.seeds.ber, k, t_index))?;
    let ber = if config.ber.theta == sec.theta_a && sec.theta_a == sec.theta_b {
        table_bit_error_rate(&table, &ber_config)?
    } else {
        let t = joint_quadrature_distribution(&state, config.ber.theta, config.ber.theta, &sec.grid)?;
        table_bit_error_rate(&t, &ber_config)?
    };
    let origin = QuadratureGrid::new(-0.5, 0.5, 0.5)?;
    let w = wigner(&state, Mode::A, &origin, &origin);
    let filter = FilterParams::new(k, config.alpha_c_sq)?;
    Ok(CellMetrics {
        report,
        ber,
        log_negativity: log_negativity(&state),
        purity: purity(state.matrix()),
        kurtosis_a: kurtosis(&state, Mode::A, 0.0, &sec.grid)?,
        kurtosis_b: kurtosis(&state, Mode::B, 0.0, &sec.grid)?,
        wigner_origin_a: w.at(0.0, 0.0),
        husimi_variance,
        predicted_success: predict_success(husimi_variance, &filter).probability,
        reconstruction_fidelity,
        joint: if snapshot { Some(JointSnapshot::from_table(&table)?) } else { None },
    })
}

fn run_cell(config: &SweepConfig, hash: &str, k: usize, t_index: usize, transmissivity: f64, snapshot: bool) -> CellResult {
    let start = Instant::now();
    let outcome = compute_cell(config, k, t_index, transmissivity, snapshot);
    if let Err(e) = &outcome {
        log::warn!("cell k={k} T={transmissivity}: {e}");
    } else {
        log::info!("cell k={k} T={transmissivity} done in {:.1}s", start.elapsed().as_secs_f64());
    }
    let (metrics, error) = match outcome {
        Ok(m) => (Some(m), None),
        Err(e) => (None, Some(e.to_string())),
    };
    CellResult {
        k,
        t_index,
        transmissivity,
        loss_db: loss_db(transmissivity),
        config_hash: hash.to_string(),
        metrics,
        error,
        wall_time_s: start.elapsed().as_secs_f64(),
    }
}

fn load_checkpoint(path: &Path, hash: &str) -> Option<CellResult> {
    let text = fs::read_to_string(path).ok()?;
    let cell: CellResult = serde_json::from_str(&text).ok()?;
    (cell.config_hash == hash).then_some(cell)
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

/// `sweep.csv` contents; failed cells keep their coordinates and leave the
/// numbers empty.
pub fn sweep_csv(cells: &[CellResult]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_COLUMNS)?;
    for c in cells {
        let mut row = vec![c.k.to_string(), fmt(c.transmissivity), fmt(c.loss_db)];
        match &c.metrics {
            Some(m) => {
                let r = &m.report;
                for v in [r.i_ab, r.chi_e, r.keyrate, r.gaussian_i_ab, r.gaussian_chi_e, r.gaussian_keyrate, r.success_probability, r.plob_bound, m.ber.ber, m.ber.stderr] {
                    row.push(fmt(v));
                }
            }
            None => row.extend(std::iter::repeat(String::new()).take(CSV_COLUMNS.len() - 3)),
        }
        w.write_record(&row)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Runs every `(k, T)` cell and writes `sweep.csv`, `cells.json` and
/// `manifest.json` under `out_dir`.
pub fn run_sweep(config: &SweepConfig, out_dir: &Path, options: RunOptions) -> Result<SweepSummary> {
    config.validate()?;
    let hash = config.hash();
    fs::create_dir_all(out_dir.join(CELLS_DIR))?;
    let ts = config.transmissivities();
    let t_max = ts.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let jobs: Vec<(usize, usize, f64)> = config.k_values.iter().flat_map(|&k| ts.iter().enumerate().map(move |(i, &t)| (k, i, t))).collect();
    let start = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(options.workers).build().map_err(|e| Error::Config(e.to_string()))?;
    let results: Vec<Result<(CellResult, bool)>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(k, i, t)| {
                let path = cell_path(out_dir, k, i);
                if !options.force {
                    if let Some(cell) = load_checkpoint(&path, &hash) {
                        return Ok((cell, true));
                    }
                }
                let cell = run_cell(config, &hash, k, i, t, t == t_max);
                write_atomic(&path, serde_json::to_string_pretty(&cell)?.as_bytes())?;
                Ok((cell, false))
            })
            .collect()
    });
    let mut cells = Vec::with_capacity(results.len());
    let mut reused_flags = Vec::with_capacity(results.len());
    for r in results {
        let (cell, was_reused) = r?;
        reused_flags.push(was_reused);
        cells.push(cell);
    }
    let reused = reused_flags.iter().filter(|&&r| r).count();
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: hash,
        config: config.clone(),
        transmissivities: ts,
        cells: cells
            .iter()
            .zip(&reused_flags)
            .map(|(c, &reused)| ManifestCell { k: c.k, transmissivity: c.transmissivity, ok: c.metrics.is_some(), reused, wall_time_s: c.wall_time_s })
            .collect(),
        total_wall_time_s: start.elapsed().as_secs_f64(),
    };
    write_atomic(&out_dir.join(SWEEP_CSV), &sweep_csv(&cells)?)?;
    write_atomic(&out_dir.join(CELLS_JSON), serde_json::to_string_pretty(&cells)?.as_bytes())?;
    write_atomic(&out_dir.join(MANIFEST_JSON), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    let failed = cells.iter().filter(|c| c.metrics.is_none()).count();
    Ok(SweepSummary { out_dir: out_dir.to_path_buf(), cells: cells.len(), failed, reused })
}

pub fn load_cells(dir: &Path) -> Result<Vec<CellResult>> {
    let path = dir.join(CELLS_JSON);
    let text = fs::read_to_string(&path).map_err(|_| Error::MissingInputs(vec![path.display().to_string()]))?;
    Ok(serde_json::from_str(&text)?)
}
