//! Numerical toolkit for von Neumann measurements, weak values, average
//! operators over large ensembles, and two-time decoherence with a
//! collapsing macroscopic environment.
//!
//! Units: ħ = 1 throughout. Spin operators carry their explicit factor of
//! one half, so `S_x = σ_x / 2`.
//!
//! Composite systems use row-major amplitude ordering: in `a ⊗ b` the index
//! of `a` varies slowest.

pub mod cli;
pub mod ensemble;
pub mod error;
pub mod hilbert;
pub mod measurement;
pub mod pointer;
pub mod rng;
pub mod twotime;

pub use error::{Error, Result};
pub use hilbert::{DensityMatrix, HermitianOperator, Spectrum, StateVector, C64};
pub use rng::{SeedStream, SeededRng};
