//! Linewidth reconstruction for undersampled photoluminescence-excitation
//! (PLE) scans.
//!
//! The pipeline: synthesize or ingest binned scans ([`synth`], [`cli::io`]),
//! fit each with a Voigt profile ([`fitting`]), summarize the single-scan
//! FWHMs with classical estimators ([`estimators`]) or with the Monte Carlo
//! χ² reconstruction ([`mcm`]), and study estimator quality over parameter
//! sweeps ([`study`]).

pub mod cli;
pub mod error;
pub mod estimators;
pub mod fitting;
pub mod lineshape;
pub mod mcm;
pub mod rng;
pub mod study;
pub mod synth;

pub use error::{Error, Result};
