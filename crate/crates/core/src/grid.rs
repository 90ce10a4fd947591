//! Uniform 1-D grids used for every Riemann sum in the crate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "QuadratureGridSpec", into = "QuadratureGridSpec")]
pub struct QuadratureGrid {
    lo: f64,
    hi: f64,
    step: f64,
    len: usize,
}

impl QuadratureGrid {
    /// Nodes `lo, lo + step, ..., hi`; `(hi - lo) / step` must be integral.
    pub fn new(lo: f64, hi: f64, step: f64) -> Result<Self> {
        if !(step > 0.0) || !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidParameter(format!("bad grid [{lo}, {hi}] step {step}")));
        }
        let intervals = (hi - lo) / step;
        let rounded = intervals.round();
        if (intervals - rounded).abs() > 1e-6 {
            return Err(Error::InvalidParameter(format!("grid span {} is not a multiple of step {step}", hi - lo)));
        }
        Ok(Self { lo, hi, step, len: rounded as usize + 1 })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn node(&self, i: usize) -> f64 {
        self.lo + self.step * i as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.len).map(|i| self.node(i)).collect()
    }

    /// Index of the node nearest to `x`, clamped to the grid; the flag is
    /// false when `x` lies outside `[lo, hi]`.
    pub fn nearest(&self, x: f64) -> (usize, bool) {
        let inside = x >= self.lo - 0.5 * self.step && x <= self.hi + 0.5 * self.step;
        let i = ((x - self.lo) / self.step).round();
        let i = i.clamp(0.0, (self.len - 1) as f64) as usize;
        (i, inside)
    }

    /// Same span at half the step.
    pub fn halved(&self) -> Self {
        Self::new(self.lo, self.hi, self.step / 2.0).expect("halving keeps the grid valid")
    }
}

/// Unvalidated grid description as it appears in configuration files.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureGridSpec {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl QuadratureGridSpec {
    pub fn build(&self) -> Result<QuadratureGrid> {
        QuadratureGrid::new(self.lo, self.hi, self.step)
    }
}

impl TryFrom<QuadratureGridSpec> for QuadratureGrid {
    type Error = Error;
    fn try_from(s: QuadratureGridSpec) -> Result<Self> {
        s.build()
    }
}

impl From<QuadratureGrid> for QuadratureGridSpec {
    fn from(g: QuadratureGrid) -> Self {
        Self { lo: g.lo, hi: g.hi, step: g.step }
    }
}

/// Fixed-order pairwise summation.
pub(crate) fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        n if n <= 16 => values.iter().sum(),
        n => pairwise_sum(&values[..n / 2]) + pairwise_sum(&values[n / 2..]),
    }
}
