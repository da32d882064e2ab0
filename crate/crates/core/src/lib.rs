//! Split-point inference for decision-tree stumps and two-phase polynomial
//! working models.
//!
//! The split point of the best single-split approximation to a smooth
//! regression curve is estimated at rate `n^{1/3}` with a nonnormal limit.
//! This crate fits the working models by exact least squares, simulates the
//! limit processes that calibrate the confidence procedures, and builds
//! Wald, RSS-inversion, pivot and subsampling confidence sets.
//!
//! ```
//! use splitset::stump::{fit_stump, Sample};
//!
//! let sample = Sample::new(vec![1.0, 2.0, 3.0, 4.0], vec![0.0, 0.0, 1.0, 1.0]).unwrap();
//! let fit = fit_stump(&sample, 1).unwrap();
//! assert_eq!(fit.d_hat, 2.0);
//! ```

pub mod cli_io;
pub mod confidence;
pub mod error;
pub mod glm;
pub mod limit_process;
pub mod nuisance;
pub mod parametric;
pub mod rng;
pub mod sim;
pub mod stats;
pub mod stump;

pub use error::{Error, Result};
