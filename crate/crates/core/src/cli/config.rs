//! Sweep configuration file (TOML).

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fock::Cutoff;
use crate::grid::{QuadratureGrid, QuadratureGridSpec};
use crate::measurement::{FilterParams, SamplingGrids};
use crate::protocol::{BerConfig, MIN_BER_SAMPLES};
use crate::security::{AdditionPlacement, Reconciliation, SecurityOptions, SweepOptions};
use crate::states::TmsvParams;
use crate::tomography::MleConfig;

/// Loss levels in percent used when the file gives none.
pub const DEFAULT_LOSS_PERCENT: [f64; 8] = [0.0, 25.0, 50.0, 75.0, 90.0, 95.0, 98.0, 99.0];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    /// Exact operators: state construction, then analysis and key rates.
    #[default]
    ExactOperator,
    /// Synthetic experiment: sample, postselect, reconstruct, then analyze.
    PostselectTomography,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Homodyne grid for joint tables, Holevo bound and BER.
    pub quadrature: QuadratureGridSpec,
    /// Wigner grid, used for both axes.
    pub wigner: QuadratureGridSpec,
    /// Heterodyne sampling grid, used for both `Re α` and `Im α`.
    pub heterodyne: QuadratureGridSpec,
    /// Homodyne sampling grid.
    pub homodyne: QuadratureGridSpec,
}

impl Default for GridConfig {
    fn default() -> Self {
        let sampling = SamplingGrids::default();
        Self {
            quadrature: QuadratureGridSpec { lo: -15.0, hi: 15.0, step: 0.05 },
            wigner: QuadratureGridSpec { lo: -4.0, hi: 4.0, step: 0.08 },
            heterodyne: sampling.alpha.into(),
            homodyne: sampling.x.into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedConfig {
    pub sampling: u64,
    pub postselect: u64,
    pub ber: u64,
}

impl Default for SeedConfig {
    fn default() -> Self {
        Self { sampling: 1, postselect: 2, ber: 3 }
    }
}

impl SeedConfig {
    pub fn from_base(seed: u64) -> Self {
        Self { sampling: seed, postselect: seed.wrapping_add(1), ber: seed.wrapping_add(2) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TomographyConfig {
    /// Pre-selection records per cell.
    pub n_samples: usize,
    pub mle: MleConfig,
}

impl Default for TomographyConfig {
    fn default() -> Self {
        Self { n_samples: 1_000_000, mle: MleConfig::default() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BerSettings {
    pub n_samples: usize,
    /// Quadrature angle on both modes.
    pub theta: f64,
}

impl Default for BerSettings {
    fn default() -> Self {
        Self { n_samples: 1_000_000, theta: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// TMSV parameter.
    pub lambda: f64,
    pub k_values: Vec<usize>,
    /// Channel loss in percent. Mutually exclusive with `loss_values_db`.
    pub loss_percent: Option<Vec<f64>>,
    pub loss_values_db: Option<Vec<f64>>,
    /// Fock cutoff `n_max`.
    pub cutoff: usize,
    /// `|α_c|²` of the postselection filter.
    pub alpha_c_sq: f64,
    pub placement: AdditionPlacement,
    pub reconciliation: Reconciliation,
    pub pipeline: Pipeline,
    /// Multiply rates by the success probability.
    pub include_overhead: bool,
    pub grids: GridConfig,
    pub seeds: SeedConfig,
    pub tomography: TomographyConfig,
    pub ber: BerSettings,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            lambda: 0.45,
            k_values: vec![0, 1, 2, 3],
            loss_percent: None,
            loss_values_db: None,
            cutoff: 10,
            alpha_c_sq: FilterParams::DEFAULT_ALPHA_C_SQ,
            placement: AdditionPlacement::OtherMode,
            reconciliation: Reconciliation::Reverse,
            pipeline: Pipeline::ExactOperator,
            include_overhead: false,
            grids: GridConfig::default(),
            seeds: SeedConfig::default(),
            tomography: TomographyConfig::default(),
            ber: BerSettings::default(),
        }
    }
}

fn percent_to_transmissivity(p: f64) -> f64 {
    (100.0 - p) / 100.0
}

impl SweepConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Channel transmissivities in configuration order.
    pub fn transmissivities(&self) -> Vec<f64> {
        match (&self.loss_percent, &self.loss_values_db) {
            (_, Some(db)) => db.iter().map(|d| 10f64.powf(-d / 10.0)).collect(),
            (Some(p), None) => p.iter().map(|&p| percent_to_transmissivity(p)).collect(),
            (None, None) => DEFAULT_LOSS_PERCENT.iter().map(|&p| percent_to_transmissivity(p)).collect(),
        }
    }

    pub fn cutoff(&self) -> Result<Cutoff> {
        Cutoff::new(self.cutoff)
    }

    pub fn quadrature_grid(&self) -> Result<QuadratureGrid> {
        self.grids.quadrature.build()
    }

    pub fn sampling_grids(&self) -> Result<SamplingGrids> {
        Ok(SamplingGrids { alpha: self.grids.heterodyne.build()?, x: self.grids.homodyne.build()? })
    }

    pub fn sweep_options(&self) -> Result<SweepOptions> {
        Ok(SweepOptions {
            cutoff: self.cutoff()?,
            placement: self.placement,
            alpha_c_sq: self.alpha_c_sq,
            security: SecurityOptions {
                grid: self.quadrature_grid()?,
                theta_a: 0.0,
                theta_b: 0.0,
                reconciliation: self.reconciliation,
            },
        })
    }

    pub fn ber_config(&self, seed: u64) -> Result<BerConfig> {
        Ok(BerConfig { n_samples: self.ber.n_samples, rng_seed: seed, grid: self.quadrature_grid()? })
    }

    /// Checks every field; all failures surface as [`Error::Config`].
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        let to_config = |e: Error| match e {
            Error::Config(m) => Error::Config(m),
            other => Error::Config(other.to_string()),
        };
        TmsvParams::new(self.lambda).map_err(to_config)?;
        if self.k_values.is_empty() {
            return fail("k_values is empty".into());
        }
        if self.loss_percent.is_some() && self.loss_values_db.is_some() {
            return fail("give either loss_percent or loss_values_db, not both".into());
        }
        if let Some(p) = &self.loss_percent {
            if p.is_empty() || p.iter().any(|&p| !(0.0..100.0).contains(&p)) {
                return fail(format!("loss_percent must be a non-empty list in [0, 100), got {p:?}"));
            }
        }
        if let Some(db) = &self.loss_values_db {
            if db.is_empty() || db.iter().any(|&d| !(d >= 0.0 && d.is_finite())) {
                return fail(format!("loss_values_db must be a non-empty list of finite values >= 0, got {db:?}"));
            }
        }
        self.cutoff().map_err(to_config)?;
        FilterParams::new(0, self.alpha_c_sq).map_err(to_config)?;
        self.quadrature_grid().map_err(to_config)?;
        self.grids.wigner.build().map_err(to_config)?;
        self.sampling_grids().map_err(to_config)?;
        self.tomography.mle.validate().map_err(to_config)?;
        if self.tomography.n_samples == 0 {
            return fail("tomography.n_samples must be > 0".into());
        }
        if self.ber.n_samples < MIN_BER_SAMPLES {
            return fail(format!("ber.n_samples must be >= {MIN_BER_SAMPLES}, got {}", self.ber.n_samples));
        }
        if self.pipeline == Pipeline::PostselectTomography && self.placement != AdditionPlacement::OtherMode {
            return fail("postselect_tomography requires placement = \"other_mode\"".into());
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form and the crate version.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(env!("CARGO_PKG_VERSION").as_bytes());
        h.update(serde_json::to_vec(self).expect("config serializes"));
        hex::encode(h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_round_trip() {
        let c = SweepConfig::default();
        c.validate().unwrap();
        assert_eq!(c.transmissivities().len(), 8);
        assert_eq!(c.transmissivities()[7], 0.01);
        let back = SweepConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_eq!(SweepConfig::from_toml("").unwrap(), c);
    }

    #[test]
    fn rejects_bad_files() {
        assert!(SweepConfig::from_toml("lamda = 0.3").is_err());
        for text in ["lambda = 1.2", "k_values = []", "cutoff = 0", "loss_percent = [100.0]", "loss_percent = [10.0]\nloss_values_db = [1.0]", "ber.n_samples = 10", "alpha_c_sq = -1.0"] {
            let c = SweepConfig::from_toml(text).unwrap();
            assert!(matches!(c.validate(), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn hash_tracks_numbers() {
        let a = SweepConfig::default();
        let b = SweepConfig { lambda: 0.3, ..a.clone() };
        assert_ne!(a.hash(), b.hash());
        let db = SweepConfig::from_toml("loss_values_db = [3.0103]").unwrap();
        assert!((db.transmissivities()[0] - 0.5).abs() < 1e-4);
    }
}
