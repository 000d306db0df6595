//! Simulation and verification laboratory for central limit behavior of
//! positively associated stationary random fields on `Z^d`.
//!
//! The crate is organized around one pipeline: covariance models and their
//! summed functionals ([`covariance`]), slow-variation checks and blocking
//! schedules built from them ([`slowvar`], [`blocking`]), exact-covariance
//! field synthesis ([`fields`]), and Monte Carlo normality diagnostics for
//! normalized box sums ([`cltlab`]).

// `!(x > 0)` validations must reject NaN along with the out-of-range values;
// the positive comparison would let NaN through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Axis loops index several parallel slices by the same `k`; zip chains over
// three or more slices read worse than the index.
#![allow(clippy::needless_range_loop)]

pub mod blocking;
pub mod cltlab;
pub mod covariance;
pub mod fields;
pub mod lattice;
pub mod scalar;
pub mod slowvar;

pub use blocking::{BlockingError, BlockingPlan, BlockingSchedule};
pub use cltlab::{CltError, CltReport, NormalizationSpec, Verdict};
pub use fields::{FieldError, FieldSampler, Realization};
pub use covariance::{CovarianceError, CovarianceModel, CovarianceSummary, Susceptibility};
pub use lattice::{IndexBox, LatticeError, MultiIndex};
pub use scalar::{CompensatedSum, Scalar};
pub use slowvar::{SlowVarError, SlowVaryFn};

/// Convenience alias: double-precision covariance model.
pub type CovarianceModel64 = CovarianceModel<f64>;
