//! Minimal numerical substrate: dense `f64` tensors, a reverse-mode tape over
//! a small set of primitive operations, an Adam optimizer, and a seeded
//! Gaussian sampler.
//!
//! Everything is 64-bit and deterministic: identical inputs and seeds produce
//! identical results, which is what makes training runs and generation
//! bit-reproducible.

mod adam;
mod rng;
mod tape;
mod tensor;

#[cfg(test)]
mod tests;

pub use adam::{AdamConfig, AdamState};
pub use rng::{child_seed, gaussian_sample, seeded_rng, SeedRng};
pub use tape::{Gradients, Tape, TapeMark, ValueId};
pub use tensor::Tensor;

use thiserror::Error;

/// Errors raised by the numeric substrate.
#[derive(Debug, Error)]
pub enum SubstrateError {
    /// A forward pass or gradient produced NaN or infinity.
    #[error("numeric fault in `{op}`: non-finite value")]
    NumericFault { op: &'static str },
    /// Operand shapes are inconsistent with the operation.
    #[error("shape mismatch in `{op}`: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    /// An argument violates the operation's domain.
    #[error("invalid argument to `{op}`: {detail}")]
    InvalidArgument { op: &'static str, detail: String },
}

impl SubstrateError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        SubstrateError::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(op: &'static str, detail: impl Into<String>) -> Self {
        SubstrateError::InvalidArgument {
            op,
            detail: detail.into(),
        }
    }
}
