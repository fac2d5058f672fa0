//! Online detection of a single change in a segmented linear signal.
//!
//! The detector estimates the pre-change line from a block of historical
//! observations and then monitors two windowed CUSUM statistics of the
//! residuals: an unweighted mean that reacts to jumps in level and a
//! linearly weighted mean that reacts to kinks (changes in slope). Both
//! statistics are maintained with three rolling bins, so every incoming
//! observation costs constant time and the state has constant size.
//!
//! Modules:
//!
//! - [`signal_model`]: segmented linear signals and synthetic data.
//! - [`prechange`]: least-squares fit of the pre-change line.
//! - [`detector`]: the streaming detector and its snapshot format.
//! - [`calibration`]: Monte Carlo threshold tuning.
//! - [`experiments`]: false-alarm, run-length and delay estimation.

pub mod calibration;
pub mod detector;
mod error;
pub mod experiments;
pub mod prechange;
pub mod signal_model;

pub use error::{FlocError, Result};
