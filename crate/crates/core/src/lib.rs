//! Post-processing chain for a vacuum-noise quantum random number generator:
//! simulation, spectral side information, min-entropy bounds, ADC
//! calibration, detector equalization and Toeplitz extraction.

// `!(x > 0.0)` style guards are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acceptance;
pub mod adccal;
pub mod dsp;
pub mod entropy;
pub mod equalizer;
pub mod error;
pub mod extract;
pub mod io;
pub mod pipeline;
pub mod sim;
pub mod spectral;
pub mod stattest;

pub use error::{Error, ErrorClass, Result};
