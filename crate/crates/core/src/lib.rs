//! Simulation and analysis of the excitation time atoms spend in the excited
//! state due to photons that are transmitted through an absorbing two-level
//! medium.
//!
//! The crate is organized bottom-up:
//!
//! * [`medium`]: Lorentzian line, linear spectral propagation, pulse spectra.
//! * [`bloch`]: weak-excitation amplitude dynamics, pulse area, flow and fate
//!   attribution.
//! * [`dwell`]: dwell-time breakdowns for the egalitarian and
//!   minimum-coherent-emission models, OD sweeps.
//! * [`shots`]: synthetic shot-level experiment generator and campaigns.
//! * [`estimator`]: click binning, template fits, proportional-noise
//!   calibration and detuning combination.
//! * [`config`], [`format`], [`table`]: run configuration, the binary shot
//!   record format and CSV emission.
//!
//! Data-parallel inner loops (slices, OD sweeps, shot campaigns, binning
//! reductions) go through [`par`], which uses rayon when the `parallel`
//! feature is enabled and runs sequentially otherwise. Results are identical
//! either way.

// NaN-rejecting range checks are written as negated comparisons.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod bloch;
pub mod config;
pub mod dwell;
pub mod error;
pub mod estimator;
pub mod format;
pub mod medium;
pub mod par;
pub mod quad;
pub mod shots;
pub mod stats;
pub mod table;

pub use error::{Error, Result};
