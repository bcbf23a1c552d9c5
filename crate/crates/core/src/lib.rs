//! Non-negative matrix factorization by concurrent multiplicative weight
//! updates on a scaled simplex.
//!
//! * [`matrix`]: dense row-major matrices and CSV I/O.
//! * [`objective`]: `||V - WH||_F^2`, its gradient and Hessian products.
//! * [`mwu`]: the solver.
//! * [`stationarity`]: first- and second-order checks for NMF and the
//!   mass-constrained problem, plus the mass-preserving rescaler.
//! * [`baselines`]: Lee–Seung updates, alternating and concurrent.
//! * [`harness`]: instance generation, benchmarks and reports.

pub mod baselines;
pub mod error;
pub mod harness;
mod linalg;
pub mod matrix;
pub mod mwu;
pub mod objective;
pub mod stationarity;

pub use error::{NmfError, Result};
pub use matrix::DenseMatrix;
pub use mwu::{solve, MwuConfig, RunTrace, SimplexState, StepSize, Termination};
pub use objective::FactorPair;
pub use stationarity::{Classification, StationarityReport, Tolerances};
