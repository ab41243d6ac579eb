//! Linear modular autoencoders.
//!
//! An ensemble of small linear autoencoders is trained on a trade-off between
//! each module's reconstruction error and the diversity of the modules'
//! reconstructions. The crate provides the objective, a closed-form
//! backfitting solver, a gradient-descent baseline, downstream ensemble
//! classification, distance-correlation diagnostics and a CLI (`mae`).

pub mod backfit;
pub mod cli;
pub mod dataset;
pub mod diagnostics;
pub mod divergence;
pub mod error;
pub mod eval;
pub mod gradient;
pub mod linalg;
pub mod loss;
pub mod rng;
pub mod softmax;
pub mod types;

pub use error::{MaeError, Result};
pub use types::{AEModule, DataMatrix, ModularAE, TrainConfig, TrainReport};
