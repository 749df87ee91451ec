//! Quantitative MRI parameter mapping: Bloch simulation, Fourier encoding,
//! dictionary baselines and a projected Levenberg-Marquardt solver.

pub mod baselines;
pub mod bloch;
pub mod dictionary;
pub mod encoding;
pub mod error;
pub mod metrics;
pub mod phantom;
pub mod solver;

pub use error::{QmriError, Result};
