//! Command-line front end: configuration, sweeps, single-state tools and
//! figure-data emission.

pub mod config;
pub mod figures;
pub mod sweep;

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

pub use config::{Pipeline, SweepConfig};
pub use figures::{emit_figures, FigureReport};
pub use sweep::{run_sweep, RunOptions, SweepSummary};

use crate::analysis::{covariance, kurtosis, log_negativity, photon_number_joint, wigner, write_photon_table_csv, CovarianceMatrix};
use crate::error::{Error, Result};
use crate::fock::{mean_photon_number, purity, von_neumann_entropy, Mode, TwoModeState};
use crate::measurement::{postselect, read_records_csv, sample_records_with, write_records_csv, FilterParams};
use crate::security::prepare_cell_state;
use crate::tomography::reconstruct;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_ALL_CELLS_FAILED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "cvqkd", version, about = "Photon-added TMSV simulation and CV-QKD key rates")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the (k, loss) sweep and write sweep.csv, cells.json and manifest.json.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Recompute cells that already have checkpoints.
        #[arg(long)]
        force: bool,
        /// Multiply rates by the postselection success probability.
        #[arg(long)]
        include_overhead: bool,
        /// Base seed; overrides the [seeds] block.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 0)]
        workers: usize,
    },
    /// Simulate heterodyne/homodyne records of one (k, loss) point, postselected.
    Sample {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        k: usize,
        #[arg(long, default_value_t = 0.0)]
        loss_percent: f64,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Maximum-likelihood reconstruction from a records CSV.
    Reconstruct {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Entanglement, non-Gaussianity and Wigner data for a state JSON.
    Analyze {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-figure CSV bundles from a sweep directory.
    Figures {
        #[arg(long)]
        out: PathBuf,
    },
    /// Parse and validate a configuration file, then print its hash.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
}

fn load_config(path: Option<&Path>) -> Result<SweepConfig> {
    let config = match path {
        Some(p) => SweepConfig::load(p)?,
        None => SweepConfig::default(),
    };
    config.validate()?;
    Ok(config)
}

#[derive(Serialize)]
struct AnalysisSummary {
    purity: f64,
    entropy: f64,
    log_negativity: f64,
    mean_photons_a: f64,
    mean_photons_b: f64,
    kurtosis_a: f64,
    kurtosis_b: f64,
    covariance: CovarianceMatrix,
    symplectic_eigenvalues: (f64, f64),
}

fn analyze(config: &SweepConfig, state: &TwoModeState, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    let grid = config.quadrature_grid()?;
    let cov = covariance(state);
    let summary = AnalysisSummary {
        purity: purity(state.matrix()),
        entropy: von_neumann_entropy(state.matrix())?,
        log_negativity: log_negativity(state),
        mean_photons_a: mean_photon_number(&state.partial_trace(Mode::A)),
        mean_photons_b: mean_photon_number(&state.partial_trace(Mode::B)),
        kurtosis_a: kurtosis(state, Mode::A, 0.0, &grid)?,
        kurtosis_b: kurtosis(state, Mode::B, 0.0, &grid)?,
        symplectic_eigenvalues: cov.symplectic_eigenvalues(),
        covariance: cov,
    };
    sweep::write_atomic(&out.join("analysis.json"), serde_json::to_string_pretty(&summary)?.as_bytes())?;
    let w = config.grids.wigner.build()?;
    for (mode, name) in [(Mode::A, "wigner_a.csv"), (Mode::B, "wigner_b.csv")] {
        wigner(state, mode, &w, &w).write_csv(BufWriter::new(File::create(out.join(name))?))?;
    }
    write_photon_table_csv(&photon_number_joint(state), BufWriter::new(File::create(out.join("photon_numbers.csv"))?))?;
    Ok(())
}

/// Executes one command; the return value is the process exit code.
pub fn execute(command: Command) -> Result<i32> {
    match command {
        Command::Sweep { config, out, force, include_overhead, seed, workers } => {
            let mut cfg = load_config(config.as_deref())?;
            cfg.include_overhead |= include_overhead;
            if let Some(s) = seed {
                cfg.seeds = config::SeedConfig::from_base(s);
            }
            let summary = run_sweep(&cfg, &out, RunOptions { force, workers })?;
            println!(
                "{} cells, {} failed, {} reused from checkpoints -> {}",
                summary.cells,
                summary.failed,
                summary.reused,
                summary.out_dir.display()
            );
            Ok(if summary.all_failed() { EXIT_ALL_CELLS_FAILED } else { EXIT_OK })
        }
        Command::Sample { config, out, k, loss_percent, seed } => {
            let cfg = load_config(config.as_deref())?;
            if !(0.0..100.0).contains(&loss_percent) {
                return Err(Error::Config(format!("loss_percent must lie in [0, 100), got {loss_percent}")));
            }
            let seeds = seed.map(config::SeedConfig::from_base).unwrap_or(cfg.seeds);
            let cell = prepare_cell_state(cfg.lambda, k, 1.0 - loss_percent / 100.0, &cfg.sweep_options()?)?;
            let records = sample_records_with(&cell.pre_addition, cfg.tomography.n_samples, seeds.sampling, &cfg.sampling_grids()?)?;
            let selected = postselect(&records, &FilterParams::new(k, cfg.alpha_c_sq)?, seeds.postselect)?;
            fs::create_dir_all(&out)?;
            write_records_csv(&selected.kept, BufWriter::new(File::create(out.join("records.csv"))?))?;
            cell.state.save(&out.join("exact_state.json"))?;
            println!("kept {} of {} records (success {:.4e})", selected.kept.len(), records.len(), selected.success);
            Ok(EXIT_OK)
        }
        Command::Reconstruct { config, records, out } => {
            let cfg = load_config(config.as_deref())?;
            let recs = read_records_csv(BufReader::new(File::open(&records)?))?;
            let (state, diag) = reconstruct(&recs, cfg.cutoff()?, &cfg.tomography.mle)?;
            fs::create_dir_all(&out)?;
            state.save(&out.join("state.json"))?;
            diag.save(&out.join("diagnostics.json"))?;
            println!("{} iterations, converged: {}", diag.iterations, diag.converged);
            Ok(EXIT_OK)
        }
        Command::Analyze { config, state, out } => {
            let cfg = load_config(config.as_deref())?;
            analyze(&cfg, &TwoModeState::load(&state)?, &out)?;
            Ok(EXIT_OK)
        }
        Command::Figures { out } => {
            let report = emit_figures(&out)?;
            for p in &report.written {
                println!("wrote {}", p.display());
            }
            for m in &report.missing {
                eprintln!("skipped {m}");
            }
            Ok(EXIT_OK)
        }
        Command::ValidateConfig { config } => {
            let cfg = load_config(Some(&config))?;
            println!("ok {}", cfg.hash());
            Ok(EXIT_OK)
        }
    }
}

/// Parses `args` and runs the command, mapping errors to exit codes.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::fidelity;
    use std::collections::BTreeMap;

    const SMALL: &str = r#"
lambda = 0.3
k_values = [0, 1]
loss_percent = [0.0, 50.0]
cutoff = 5

[grids.quadrature]
lo = -8.0
hi = 8.0
step = 0.05

[ber]
n_samples = 20000
"#;

    fn cli(args: &[&str]) -> i32 {
        run(std::iter::once("cvqkd").chain(args.iter().copied()))
    }

    fn write_config(dir: &Path, text: &str) -> String {
        let p = dir.join("config.toml");
        fs::write(&p, text).unwrap();
        p.to_str().unwrap().to_string()
    }

    fn csv_rows(path: &Path) -> Vec<BTreeMap<String, String>> {
        let mut r = csv::Reader::from_path(path).unwrap();
        let header: Vec<String> = r.headers().unwrap().iter().map(String::from).collect();
        r.records().map(|rec| header.iter().cloned().zip(rec.unwrap().iter().map(String::from)).collect()).collect()
    }

    #[test]
    fn sweep_is_deterministic_and_checkpointed() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_config(dir.path(), SMALL);
        let out = dir.path().join("run");
        let out_s = out.to_str().unwrap();
        assert_eq!(cli(&["sweep", "--config", &cfg, "--out", out_s]), EXIT_OK);
        let first = fs::read(out.join(sweep::SWEEP_CSV)).unwrap();
        let rows = csv_rows(&out.join(sweep::SWEEP_CSV));
        assert_eq!(rows.len(), 4);
        assert!(rows.iter().all(|r| !r["keyrate"].is_empty()));

        let cfg_val = SweepConfig::load(Path::new(&cfg)).unwrap();
        let again = run_sweep(&cfg_val, &out, RunOptions::default()).unwrap();
        assert_eq!(again.reused, 4);
        assert_eq!(fs::read(out.join(sweep::SWEEP_CSV)).unwrap(), first);
        let forced = run_sweep(&cfg_val, &out, RunOptions { force: true, workers: 1 }).unwrap();
        assert_eq!(forced.reused, 0);
        assert_eq!(fs::read(out.join(sweep::SWEEP_CSV)).unwrap(), first);

        let fresh = dir.path().join("fresh");
        run_sweep(&cfg_val, &fresh, RunOptions { force: false, workers: 2 }).unwrap();
        assert_eq!(fs::read(fresh.join(sweep::SWEEP_CSV)).unwrap(), first);

        // a different seed changes the checkpoint hash, so nothing is reused
        assert_eq!(cli(&["sweep", "--config", &cfg, "--out", out_s, "--seed", "9"]), EXIT_OK);
        let manifest: sweep::Manifest = serde_json::from_str(&fs::read_to_string(out.join(sweep::MANIFEST_JSON)).unwrap()).unwrap();
        assert!(manifest.cells.iter().all(|c| !c.reused && c.ok));
        assert_eq!(manifest.config.seeds, config::SeedConfig::from_base(9));
    }

    #[test]
    fn default_sweep_fills_every_row() {
        let dir = tempfile::tempdir().unwrap();
        let summary = run_sweep(&SweepConfig::default(), dir.path(), RunOptions::default()).unwrap();
        assert_eq!((summary.cells, summary.failed), (32, 0));
        let rows = csv_rows(&dir.path().join(sweep::SWEEP_CSV));
        assert_eq!(rows.len(), 32);
        let header = csv::Reader::from_path(dir.path().join(sweep::SWEEP_CSV)).unwrap().headers().unwrap().clone();
        assert_eq!(header.iter().collect::<Vec<_>>(), sweep::CSV_COLUMNS.to_vec());
    }

    #[test]
    fn figures_from_a_sweep() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_config(dir.path(), SMALL);
        let out = dir.path().join("run");
        assert_eq!(cli(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap()]), EXIT_OK);
        assert_eq!(cli(&["figures", "--out", out.to_str().unwrap()]), EXIT_OK);
        let figs = out.join(figures::FIGURES_DIR);
        for name in ["fig2b_success", "fig3_log_negativity", "fig4_kurtosis", "fig5_joint_k0", "fig5_joint_k1", "fig6_information", "fig7_rate_loss", "fig8_ber"] {
            assert!(figs.join(format!("{name}.csv")).exists(), "{name}");
        }
        let rate_loss = csv_rows(&figs.join("fig7_rate_loss.csv"));
        let mut series: BTreeMap<String, usize> = BTreeMap::new();
        for r in &rate_loss {
            *series.entry(r["k"].clone()).or_default() += 1;
        }
        assert_eq!(series.into_iter().collect::<Vec<_>>(), vec![("0".to_string(), 2), ("1".to_string(), 2)]);
        for r in csv_rows(&figs.join("fig2b_success.csv")) {
            let (a, b): (f64, f64) = (r["success_prob"].parse().unwrap(), r["predicted_success"].parse().unwrap());
            assert!((a - b).abs() <= 1e-3 * b.max(1e-3), "{a} vs {b}");
        }
    }

    #[test]
    fn empty_sweep_writes_no_figures() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(cli(&["figures", "--out", dir.path().to_str().unwrap()]), EXIT_FAILURE);
        fs::write(dir.path().join(sweep::CELLS_JSON), "[]").unwrap();
        assert!(matches!(emit_figures(dir.path()), Err(Error::MissingInputs(_))));
        assert!(!dir.path().join(figures::FIGURES_DIR).exists());
    }

    #[test]
    fn all_cells_failing_exits_with_three() {
        let dir = tempfile::tempdir().unwrap();
        // λ = 0.5 needs more than four Fock levels
        let cfg = write_config(dir.path(), "lambda = 0.5\ncutoff = 3\nk_values = [0]\nloss_percent = [0.0, 50.0]\n");
        let out = dir.path().join("run");
        assert_eq!(cli(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap()]), EXIT_ALL_CELLS_FAILED);
        let rows = csv_rows(&out.join(sweep::SWEEP_CSV));
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r["keyrate"].is_empty()));
        let cells = sweep::load_cells(&out).unwrap();
        assert!(cells.iter().all(|c| c.error.as_deref().is_some_and(|e| e.contains("truncation"))));
    }

    #[test]
    fn config_errors_exit_with_two() {
        let dir = tempfile::tempdir().unwrap();
        for text in ["lambda = 1.5", "unknown_key = 1", "lambda = \"half\"", "k_values = []"] {
            let cfg = write_config(dir.path(), text);
            assert_eq!(cli(&["validate-config", "--config", &cfg]), EXIT_CONFIG, "{text}");
            assert_eq!(cli(&["sweep", "--config", &cfg, "--out", dir.path().join("x").to_str().unwrap()]), EXIT_CONFIG);
        }
        assert!(!dir.path().join("x").exists());
        assert_eq!(cli(&["validate-config", "--config", dir.path().join("missing.toml").to_str().unwrap()]), EXIT_CONFIG);
        assert_eq!(cli(&["sweep"]), EXIT_CONFIG);
        let cfg = write_config(dir.path(), SMALL);
        assert_eq!(cli(&["validate-config", "--config", &cfg]), EXIT_OK);
    }

    #[test]
    fn sample_reconstruct_analyze_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_config(dir.path(), "lambda = 0.3\ncutoff = 4\n[tomography]\nn_samples = 50000\n");
        let d = |s: &str| dir.path().join(s).to_str().unwrap().to_string();
        assert_eq!(cli(&["sample", "--config", &cfg, "--out", &d("s"), "--k", "1", "--loss-percent", "0"]), EXIT_OK);
        assert_eq!(cli(&["reconstruct", "--config", &cfg, "--records", &d("s/records.csv"), "--out", &d("r")]), EXIT_OK);
        let exact = TwoModeState::load(&dir.path().join("s/exact_state.json")).unwrap();
        let rec = TwoModeState::load(&dir.path().join("r/state.json")).unwrap();
        assert!(fidelity(rec.matrix(), exact.matrix()).unwrap() > 0.9);
        assert_eq!(cli(&["analyze", "--config", &cfg, "--state", &d("r/state.json"), "--out", &d("a")]), EXIT_OK);
        for f in ["analysis.json", "wigner_a.csv", "wigner_b.csv", "photon_numbers.csv"] {
            assert!(dir.path().join("a").join(f).exists(), "{f}");
        }
        let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("a/analysis.json")).unwrap()).unwrap();
        assert!(summary["log_negativity"].as_f64().unwrap() > 0.0);
        assert_eq!(cli(&["sample", "--config", &cfg, "--out", &d("bad"), "--loss-percent", "100"]), EXIT_CONFIG);
    }

    #[test]
    fn postselect_tomography_tracks_exact_operator() {
        let base = SweepConfig {
            lambda: 0.3,
            k_values: vec![1],
            loss_percent: Some(vec![0.0]),
            cutoff: 6,
            tomography: config::TomographyConfig { n_samples: 400_000, ..Default::default() },
            ber: config::BerSettings { n_samples: 10_000, ..Default::default() },
            ..SweepConfig::default()
        };
        let tomo = SweepConfig { pipeline: Pipeline::PostselectTomography, ..base.clone() };
        let dir = tempfile::tempdir().unwrap();
        let metrics = |cfg: &SweepConfig, name: &str| {
            run_sweep(cfg, &dir.path().join(name), RunOptions::default()).unwrap();
            sweep::load_cells(&dir.path().join(name)).unwrap()[0].metrics.clone().unwrap()
        };
        let (a, b) = (metrics(&base, "exact"), metrics(&tomo, "tomo"));
        assert!(b.reconstruction_fidelity.unwrap() > 0.93, "{:?}", b.reconstruction_fidelity);
        let (pa, pb) = (a.report.success_probability, b.report.success_probability);
        assert!((pa - pb).abs() < 4.0 * (pa * (1.0 - pa) / 400_000.0).sqrt(), "{pa} vs {pb}");
        // the exact state is pure, so reconstruction noise can only feed Eve
        assert!(a.report.chi_e.abs() < 1e-9);
        assert!(b.report.keyrate > 0.0 && b.report.keyrate < a.report.keyrate, "{} vs {}", b.report.keyrate, a.report.keyrate);
        assert!((a.log_negativity - b.log_negativity).abs() < 0.15);
    }
}
