//! Uncertainty-aware transformer inference lab.
//!
//! A small self-contained stack for studying Monte Carlo dropout on a toy
//! transformer encoder: deterministic linear algebra with counter-based
//! RNG, an encoder whose attention logits can be damped by token-level
//! uncertainty, MC inference, layer-wise variance attribution, calibration
//! and selective-prediction metrics, plus a synthetic benchmark harness.

pub mod bench;
pub mod calibration;
pub mod diagnostics;
pub mod encoder;
pub mod selective;
pub mod error;
pub mod linalg;
pub mod mcinfer;
pub mod train;

pub use error::{Error, Result};
