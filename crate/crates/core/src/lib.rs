//! Equivariant estimation for replicated fixed-X normal linear models.
//!
//! The model has `p` populations; population `i` is observed `n_i` times with
//! mean `(Xp beta)_i` and variance `sigma_i^2`. The affine group
//! `y -> c*y + a` (per population, `c > 0`) acts on responses, parameters
//! and decisions. The crate provides the group, the invariant losses, the
//! least-squares and equivariant estimators, analytic risk values and a
//! deterministic parallel Monte Carlo risk engine.

// Negated comparisons are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod estimators;
pub mod groups;
pub mod losses;
pub mod model;
pub mod report;
pub mod risk;
pub mod rng;
pub mod special;
pub mod verify;

pub use error::{Error, Result};
pub use estimators::{CovWeights, Estimator, OmegaSpec, Target};
pub use groups::{MaximalInvariant, SampleTransform};
pub use losses::LossKind;
pub use model::{Design, ModelDoc, ParameterPoint, ResponseVector};
pub use risk::RiskEstimate;
