//! Cross-modal threat event correlation and confidence-weighted attention fusion.
//!
//! Security tools emit independent event streams (network flows, email
//! telemetry, host logs) with no ground-truth mapping between related events.
//! This crate mints confidence-weighted cross-modal training pairs from such
//! non-aligned streams via a temporal correlation protocol, trains a small
//! attention fusion classifier whose cross-attention and routing adapt to the
//! correlation confidence, and reports operational security metrics (FPR,
//! TPR at fixed FPR, alert-volume projections).
//!
//! Pipeline stages, each its own module:
//!
//! - [`events`] — stream ingestion, normalization, mutual-information feature
//!   selection
//! - [`correlation`] — temporal windowing, confidence weights, fold-safe pair
//!   minting with injected uncorrelated negatives
//! - [`numerics`] — dense 2-D tensors with reverse-mode differentiation and
//!   finite-difference gradient checking
//! - [`encoders`] — per-modality embedding encoders (1-D conv, pooled
//!   feedforward, recurrent)
//! - [`fusion`] — confidence-weighted cross-attention, availability-aware
//!   controller, classifier head
//! - [`training`] — composite loss, confidence-weighted sampling, early
//!   stopping, ablation switches
//! - [`evaluation`] — confusion metrics, ROC operating points, alert
//!   projections, Wilcoxon signed-rank test
//! - [`synth`] — scenario generator with planted attack chains and known
//!   ground-truth correlations

pub mod config;
pub mod correlation;
pub mod encoders;
pub mod error;
pub mod evaluation;
pub mod events;
pub mod fusion;
pub mod manifest;
pub mod numerics;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
