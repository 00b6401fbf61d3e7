//! Linear regression that fuses a target sample with continuous outcomes and
//! an external sample observing only a dichotomized outcome `z = I(y ≤ c)`.
//!
//! Three estimators are provided:
//!
//! * [`estimators::wls_fit`]: target-only weighted least squares benchmark;
//! * [`estimators::eff_fit`]: root of the locally efficient score built from a
//!   posited (possibly wrong) error density and an estimated propensity;
//! * [`estimators::combine`]: the benchmark plus a weighted contrast
//!   `W(β_eff - β_ls)` whose variance never exceeds the benchmark's.
//!
//! Inference uses a multiplier bootstrap with Exp(1) weights ([`bootstrap`]).
//! [`sim_engine`] reproduces the two simulation designs and [`io`] holds the
//! CSV / preprocessing / command layer used by the `fusedreg` binary.

pub mod bootstrap;
pub mod data;
pub mod error;
pub mod error_models;
pub mod estimators;
pub mod io;
pub mod linalg;
pub mod propensity;
pub mod rng;
pub mod sim_engine;

pub use data::{FusedDataset, Observation, Outcome};
pub use error::{Error, Result};
pub use error_models::ErrorModel;
pub use estimators::{Estimator, FitReport, ScoreContext};
pub use propensity::{PropensityModel, PropensityStrategy};
