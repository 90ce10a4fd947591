//! Per-figure CSV bundles derived from a completed sweep.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::sweep::{load_cells, write_atomic, CellMetrics, CellResult};
use crate::error::{Error, Result};

pub const FIGURES_DIR: &str = "figures";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FigureReport {
    pub written: Vec<PathBuf>,
    /// One entry per bundle that was skipped, naming what it lacked.
    pub missing: Vec<String>,
}

struct Bundle {
    name: String,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Bundle {
    fn new(name: &str, header: &[&str]) -> Self {
        Self { name: name.to_string(), header: header.iter().map(|h| h.to_string()).collect(), rows: Vec::new() }
    }

    fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }
}

fn f(v: f64) -> String {
    format!("{v}")
}

fn ok_metrics<'a>(cells: &[&'a CellResult], what: &str) -> std::result::Result<Vec<(&'a CellResult, &'a CellMetrics)>, String> {
    let mut out = Vec::new();
    let mut missing = Vec::new();
    for c in cells {
        match &c.metrics {
            Some(m) => out.push((*c, m)),
            None => missing.push(format!("k={} T={}", c.k, c.transmissivity)),
        }
    }
    if missing.is_empty() {
        Ok(out)
    } else {
        Err(format!("{what}: failed cells {}", missing.join(", ")))
    }
}

/// Cells at the highest transmissivity, one per `k`.
fn lossless<'a>(cells: &'a [CellResult]) -> Vec<&'a CellResult> {
    let t_max = cells.iter().map(|c| c.transmissivity).fold(f64::NEG_INFINITY, f64::max);
    let mut by_k: BTreeMap<usize, &CellResult> = BTreeMap::new();
    for c in cells.iter().filter(|c| c.transmissivity == t_max) {
        by_k.entry(c.k).or_insert(c);
    }
    by_k.into_values().collect()
}

fn sorted(cells: &[CellResult]) -> Vec<&CellResult> {
    let mut v: Vec<&CellResult> = cells.iter().collect();
    v.sort_by(|a, b| (a.k, a.t_index).cmp(&(b.k, b.t_index)));
    v
}

fn build(cells: &[CellResult]) -> (Vec<Bundle>, Vec<String>) {
    let mut bundles = Vec::new();
    let mut missing = Vec::new();
    let all = sorted(cells);
    let top = lossless(cells);

    match ok_metrics(&top, "fig2b_success") {
        Ok(rows) => {
            let mut b = Bundle::new("fig2b_success", &["k", "success_prob", "predicted_success", "husimi_variance"]);
            for (c, m) in rows {
                b.rows.push(vec![c.k.to_string(), f(m.report.success_probability), f(m.predicted_success), f(m.husimi_variance)]);
            }
            bundles.push(b);
        }
        Err(e) => missing.push(e),
    }
    match ok_metrics(&all, "fig3_log_negativity") {
        Ok(rows) => {
            let mut b = Bundle::new("fig3_log_negativity", &["k", "T", "loss_dB", "log_negativity", "purity"]);
            for (c, m) in rows {
                b.rows.push(vec![c.k.to_string(), f(c.transmissivity), f(c.loss_db), f(m.log_negativity), f(m.purity)]);
            }
            bundles.push(b);
        }
        Err(e) => missing.push(e),
    }
    match ok_metrics(&top, "fig4_kurtosis") {
        Ok(rows) => {
            let mut b = Bundle::new("fig4_kurtosis", &["k", "kurtosis_A", "kurtosis_B", "wigner_origin_A"]);
            for (c, m) in rows {
                b.rows.push(vec![c.k.to_string(), f(m.kurtosis_a), f(m.kurtosis_b), f(m.wigner_origin_a)]);
            }
            bundles.push(b);
        }
        Err(e) => missing.push(e),
    }
    match ok_metrics(&top, "fig5_joint") {
        Ok(rows) => {
            for (c, m) in rows {
                let Some(j) = &m.joint else {
                    missing.push(format!("fig5_joint_k{}: no joint table snapshot", c.k));
                    continue;
                };
                let n = j.grid.len();
                let mut header = vec!["x\\y".to_string()];
                header.extend(j.grid.nodes().into_iter().map(f));
                let mut b = Bundle { name: format!("fig5_joint_k{}", c.k), header, rows: Vec::new() };
                for i in 0..n {
                    let mut row = vec![f(j.grid.node(i))];
                    row.extend(j.values[i * n..(i + 1) * n].iter().map(|&v| f(v)));
                    b.rows.push(row);
                }
                bundles.push(b);
            }
        }
        Err(e) => missing.push(e),
    }
    match ok_metrics(&top, "fig6_information") {
        Ok(rows) => {
            let mut b = Bundle::new("fig6_information", &["k", "I_AB", "chi_E", "keyrate", "gaussian_I_AB", "gaussian_chi_E", "gaussian_keyrate"]);
            for (c, m) in rows {
                let r = &m.report;
                b.rows.push(vec![c.k.to_string(), f(r.i_ab), f(r.chi_e), f(r.keyrate), f(r.gaussian_i_ab), f(r.gaussian_chi_e), f(r.gaussian_keyrate)]);
            }
            bundles.push(b);
        }
        Err(e) => missing.push(e),
    }
    match ok_metrics(&all, "fig7_rate_loss") {
        Ok(rows) => {
            let mut b = Bundle::new("fig7_rate_loss", &["k", "T", "loss_dB", "keyrate", "gaussian_keyrate", "success_prob", "plob"]);
            for (c, m) in rows {
                let r = &m.report;
                b.rows.push(vec![c.k.to_string(), f(c.transmissivity), f(c.loss_db), f(r.keyrate), f(r.gaussian_keyrate), f(r.success_probability), f(r.plob_bound)]);
            }
            bundles.push(b);
        }
        Err(e) => missing.push(e),
    }
    match ok_metrics(&all, "fig8_ber") {
        Ok(rows) => {
            let mut b = Bundle::new("fig8_ber", &["k", "T", "loss_dB", "ber", "ber_stderr"]);
            for (c, m) in rows {
                b.rows.push(vec![c.k.to_string(), f(c.transmissivity), f(c.loss_db), f(m.ber.ber), f(m.ber.stderr)]);
            }
            bundles.push(b);
        }
        Err(e) => missing.push(e),
    }
    (bundles, missing)
}

/// Writes every bundle whose inputs are complete into `artifact_dir/figures`.
/// An absent or empty sweep is an error and writes nothing.
pub fn emit_figures(artifact_dir: &Path) -> Result<FigureReport> {
    let cells = load_cells(artifact_dir)?;
    if cells.is_empty() {
        return Err(Error::MissingInputs(vec![format!("{}: sweep has no cells", artifact_dir.display())]));
    }
    let (bundles, missing) = build(&cells);
    for m in &missing {
        log::warn!("skipping figure bundle {m}");
    }
    let encoded: Vec<(String, Vec<u8>)> = bundles.iter().map(|b| Ok((b.name.clone(), b.to_bytes()?))).collect::<Result<_>>()?;
    let dir = artifact_dir.join(FIGURES_DIR);
    fs::create_dir_all(&dir)?;
    let mut written = Vec::new();
    for (name, bytes) in encoded {
        let path = dir.join(format!("{name}.csv"));
        write_atomic(&path, &bytes)?;
        written.push(path);
    }
    Ok(FigureReport { written, missing })
}
