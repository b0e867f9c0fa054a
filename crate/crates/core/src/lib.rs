//! A desk-scale preference-optimization laboratory.
//!
//! The crate trains a small fixed-window character model with exact
//! gradients, optimizes it against preference triples with the log-ratio
//! form of the DPO loss, and orchestrates stepwise runs in which the
//! reference model rotates through the data chunks. Everything is
//! deterministic given its seeds, and every training quantity can be checked
//! against an independent oracle (finite differences, brute-force softmax
//! enumeration, high-precision softplus values).
//!
//! The numeric core ([`policy`], [`dpo`], [`optim`]) is generic over the
//! [`scalar::Scalar`] type; the training pipeline and the snapshot format run
//! in `f64` via the [`Policy`] alias below.

pub mod config;
pub mod data;
pub mod diagnostics;
pub mod dpo;
pub mod error;
pub mod optim;
pub mod policy;
pub mod runner;
pub mod scalar;
pub mod snapshot;
pub mod trainer;
pub mod vocab;

pub use error::{Error, Result};

/// The pipeline's model type: double precision, enough headroom for
/// finite-difference checks and exact-constant assertions.
pub type Policy = policy::PolicyModel<f64>;

/// Single-precision variant of the same model.
pub type Policy32 = policy::PolicyModel<f32>;
