//! Photon-added two-mode squeezed vacuum: state construction, channels,
//! heterodyne/homodyne measurement simulation, postselection, maximum-likelihood
//! tomography, entanglement and non-Gaussianity analysis, and secret-key rates
//! with and without the Gaussian extremity assumption.

pub mod analysis;
pub mod cli;
pub mod error;
pub mod fock;
pub mod grid;
pub mod measurement;
pub mod protocol;
pub mod security;
pub mod states;
pub mod tomography;

pub use error::{Error, Result};
pub use fock::{Cutoff, Mode, TwoModeState};
