//! Desk-scale toolkit for long-horizon skeletal motion synthesis.
//!
//! The pipeline runs end to end on synthetic oscillatory skeleton data:
//!
//! * [`motion`] — motion data model: 6D rotation codec, world-frame
//!   canonicalization, the PMF/1 text format, and a synthetic data source.
//! * [`autodiff`] — dense `f64` tensors, a reverse-mode tape, Adam, and a
//!   seeded Gaussian sampler.
//! * [`model`] — GRU/LSTM cells, the cross-conditional two-stream variational
//!   RNN, a stacked-GRU baseline, and PMCKPT/1 checkpoints.
//! * [`objective`] — reconstruction, per-step KL, the Charbonnier-wrapped
//!   stream KL, and the weighted total loss.
//! * [`train`] — teacher-forced window training with truncated
//!   backpropagation through time.
//! * [`rollout`] — auto-regressive generation from seed frames.
//! * [`eval`] — power-spectrum metrics, diversity, and representation-power
//!   scores.
//! * [`config`] — the flat key=value run configuration shared by the CLI and
//!   checkpoints.

pub mod autodiff;
pub mod config;
pub mod eval;
pub mod model;
pub mod motion;
pub mod objective;
pub mod rollout;
pub mod testkit;
pub mod train;
