//! Multi-source direction-of-arrival estimation toolkit.
//!
//! The crate is organized the way the signal flows:
//!
//! * [`dsp`]: STFT, phase and IPD features, log-Mel features, WAV I/O.
//! * [`sim`]: image-method rooms, labeled reverberant mixtures, oracle masks.
//! * [`subspace`]: MUSIC, MUSIC-NAM and TOPS spatial spectra.
//! * [`neural`]: a small reverse-mode autodiff engine, the four
//!   localization networks, their losses, training and inference.
//! * [`frontend`]: steering vectors, angle features and MVDR separation.
//! * [`eval`]: cyclic MAE, angular-distance bins, SI-SDR, report tables.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dsp;
pub mod error;
pub mod eval;
pub mod frontend;
pub mod grid;
pub mod io;
pub mod neural;
pub mod sim;
pub mod subspace;

#[cfg(feature = "cli")]
pub mod cli;

pub use error::{Error, Result};
pub use grid::AngularGrid;
