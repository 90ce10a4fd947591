//! Sign encoding of homodyne outcomes, MAP decoding and Monte Carlo bit error
//! rates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::TwoModeState;
use crate::grid::QuadratureGrid;
use crate::measurement::{cumulative, inverse_cdf, SAMPLING_CHUNK};
use crate::security::{joint_quadrature_distribution, JointTable};

pub const MIN_BER_SAMPLES: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BerConfig {
    pub n_samples: usize,
    pub rng_seed: u64,
    pub grid: QuadratureGrid,
}

impl Default for BerConfig {
    fn default() -> Self {
        Self { n_samples: 1_000_000, rng_seed: 0, grid: QuadratureGrid::new(-10.0, 10.0, 0.05).unwrap() }
    }
}

impl BerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples < MIN_BER_SAMPLES {
            return Err(Error::InvalidParameter(format!("n_samples must be >= {MIN_BER_SAMPLES}, got {}", self.n_samples)));
        }
        Ok(())
    }
}

/// Alice's bit for outcome `x`.
pub fn sign_bit(x: f64) -> u8 {
    u8::from(x > 0.0)
}

/// Fraction of the cell around node `i` of `grid` that lies above zero.
fn positive_fraction(grid: &QuadratureGrid, i: usize) -> f64 {
    ((grid.node(i) / grid.step()) + 0.5).clamp(0.0, 1.0)
}

/// MAP decisions for every column of a joint table. Outcomes are spread
/// uniformly over their grid cell, so the cell straddling zero counts
/// towards both bits.
#[derive(Clone, Debug, PartialEq)]
pub struct MapDecoder {
    grid: QuadratureGrid,
    bits: Vec<u8>,
}

impl MapDecoder {
    pub fn new(table: &JointTable) -> Self {
        let bits = (0..table.y.len())
            .map(|j| {
                let (mut pos, mut neg) = (0.0, 0.0);
                for i in 0..table.x.len() {
                    let f = positive_fraction(&table.x, i);
                    pos += f * table.density[(i, j)];
                    neg += (1.0 - f) * table.density[(i, j)];
                }
                u8::from(pos > neg)
            })
            .collect();
        Self { grid: table.y, bits }
    }

    pub fn decode(&self, y: f64) -> u8 {
        let (j, inside) = self.grid.nearest(y);
        if !inside {
            log::warn!("y = {y} lies outside the decoding grid; using the edge column");
        }
        self.bits[j]
    }

    fn decode_column(&self, j: usize) -> u8 {
        self.bits[j]
    }
}

/// 1 if `P(X > 0 | Y = y) > P(X ≤ 0 | Y = y)`, else 0.
pub fn map_decode(y: f64, table: &JointTable) -> u8 {
    MapDecoder::new(table).decode(y)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BerEstimate {
    pub ber: f64,
    pub stderr: f64,
    pub errors: u64,
    pub samples: usize,
}

/// Error probability of the MAP decoder summed over the table.
pub fn exact_bit_error_rate(table: &JointTable) -> f64 {
    let decoder = MapDecoder::new(table);
    let mut wrong = 0.0;
    for j in 0..table.y.len() {
        let bit = decoder.decode_column(j);
        for i in 0..table.x.len() {
            let f = positive_fraction(&table.x, i);
            wrong += table.density[(i, j)] * if bit == 1 { 1.0 - f } else { f };
        }
    }
    wrong / table.density.sum()
}

/// Monte Carlo BER over `(x, y)` pairs drawn from the table; `x` is uniform
/// within its cell.
pub fn table_bit_error_rate(table: &JointTable, config: &BerConfig) -> Result<BerEstimate> {
    config.validate()?;
    let decoder = MapDecoder::new(table);
    let ny = table.y.len();
    // row-major over (i, j)
    let weights: Vec<f64> = (0..table.x.len()).flat_map(|i| (0..ny).map(move |j| table.density[(i, j)])).collect();
    let cdf = cumulative(&weights);
    let h = table.x.step();
    let n = config.n_samples;
    let chunks = n.div_ceil(SAMPLING_CHUNK);
    let errors: u64 = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
            rng.set_stream(c as u64);
            let len = SAMPLING_CHUNK.min(n - c * SAMPLING_CHUNK);
            (0..len)
                .filter(|_| {
                    let cell = inverse_cdf(&cdf, rng.gen::<f64>());
                    let x = table.x.node(cell / ny) + (rng.gen::<f64>() - 0.5) * h;
                    sign_bit(x) != decoder.decode_column(cell % ny)
                })
                .count() as u64
        })
        .sum();
    let ber = errors as f64 / n as f64;
    Ok(BerEstimate { ber, stderr: (ber * (1.0 - ber) / n as f64).sqrt(), errors, samples: n })
}

/// Monte Carlo BER of sign encoding with quadrature angle `theta` on both
/// modes and MAP decoding by Bob.
pub fn bit_error_rate(state: &TwoModeState, theta: f64, config: &BerConfig) -> Result<BerEstimate> {
    config.validate()?;
    let table = joint_quadrature_distribution(state, theta, theta, &config.grid)?;
    table_bit_error_rate(&table, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{Cutoff, Mode};
    use crate::states::{add_photons, loss_channel, make_tmsv, ChannelParams, TmsvParams};
    use std::f64::consts::PI;

    fn grid() -> QuadratureGrid {
        QuadratureGrid::new(-6.0, 6.0, 0.05).unwrap()
    }

    fn gaussian(corr: f64) -> JointTable {
        JointTable::from_fn(grid(), grid(), move |x, y| {
            let det = 1.0 - corr * corr;
            (-(x * x - 2.0 * corr * x * y + y * y) / (2.0 * det)).exp() / (2.0 * PI * det.sqrt())
        })
    }

    fn config(n: usize) -> BerConfig {
        BerConfig { n_samples: n, rng_seed: 5, grid: grid() }
    }

    #[test]
    fn decode_examples() {
        let t = gaussian(0.8);
        assert_eq!(map_decode(2.0, &t), 1);
        assert_eq!(map_decode(-2.0, &t), 0);
        assert_eq!(map_decode(0.0, &t), 0);
        assert_eq!(map_decode(50.0, &t), 1);
        assert_eq!(map_decode(-0.4, &gaussian(-0.8)), 1);
    }

    #[test]
    fn degenerate_and_independent_tables() {
        // cell edges on zero, so no cell straddles the sign boundary
        let g = QuadratureGrid::new(-6.025, 6.025, 0.05).unwrap();
        let diag = JointTable::from_fn(g, g, |x, y| if (x - y).abs() < 1e-9 { (-x * x).exp() } else { 0.0 });
        let r = table_bit_error_rate(&diag, &config(100_000)).unwrap();
        assert_eq!(r.errors, 0);
        assert_eq!(exact_bit_error_rate(&diag), 0.0);
        let vac = TwoModeState::vacuum(Cutoff::new(4).unwrap());
        let r = bit_error_rate(&vac, 0.0, &config(100_000)).unwrap();
        assert!((r.ber - 0.5).abs() < 3.0 * r.stderr, "{r:?}");
    }

    #[test]
    fn monte_carlo_matches_exact_and_is_deterministic() {
        let t = gaussian(0.6);
        let a = table_bit_error_rate(&t, &config(200_000)).unwrap();
        let b = table_bit_error_rate(&t, &config(200_000)).unwrap();
        assert_eq!(a, b);
        let exact = exact_bit_error_rate(&t);
        // analytic sign-agreement error: arccos(ρ)/π
        assert!((exact - 0.6f64.acos() / PI).abs() < 5e-3, "{exact}");
        assert!((a.ber - exact).abs() < 4.0 * a.stderr);
        assert!(config(9_999).validate().is_err());
    }

    #[test]
    fn map_beats_every_threshold_decoder() {
        let c = Cutoff::new(10).unwrap();
        let st = make_tmsv(TmsvParams::new(0.5).unwrap(), c).unwrap();
        let st = loss_channel(&st, Mode::B, ChannelParams::pure_loss(0.5).unwrap()).unwrap();
        let st = add_photons(&st, Mode::A, 1).unwrap().0;
        let t = joint_quadrature_distribution(&st, 0.0, 0.0, &grid()).unwrap();
        let decoder = MapDecoder::new(&t);
        let ny = t.y.len();
        let density = &t.density;
        let weights: Vec<f64> = (0..t.x.len()).flat_map(|i| (0..ny).map(move |j| density[(i, j)])).collect();
        let cdf = cumulative(&weights);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = t.x.step();
        let pairs: Vec<(u8, usize)> = (0..100_000)
            .map(|_| {
                let cell = inverse_cdf(&cdf, rng.gen::<f64>());
                (sign_bit(t.x.node(cell / ny) + (rng.gen::<f64>() - 0.5) * h), cell % ny)
            })
            .collect();
        let map_errors = pairs.iter().filter(|(b, j)| *b != decoder.decode_column(*j)).count();
        let mut best = usize::MAX;
        for cut in 0..=ny {
            for flip in [false, true] {
                let e = pairs.iter().filter(|(b, j)| *b != u8::from((*j >= cut) != flip)).count();
                best = best.min(e);
            }
        }
        let slack = 3.0 * (best as f64).sqrt();
        assert!(map_errors as f64 <= best as f64 + slack, "{map_errors} vs {best}");
    }
}
