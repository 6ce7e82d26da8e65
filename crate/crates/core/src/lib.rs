//! Dual-stage reweighted mixture-of-experts for imbalanced binary
//! classification.
//!
//! Stage one fuses a frozen linear feature expert with a low-rank adapted
//! copy through a sigmoid gate. Stage two trains three linear heads on the
//! joint features with imbalance-aware objectives (class-reweighted
//! cross-entropy, a pairwise AUC surrogate, and logit-adjusted cross-entropy
//! under sharpness-aware minimization), then fuses their logits with simplex
//! weights.
//!
//! Label `1` marks a mistake (the rare, positive class) and `0` a correct
//! action. Everything here is `no_std` with `alloc`; file formats, the CLI and
//! checkpoints live in the companion `drmoe-cli` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod data;
mod error;
pub mod experts;
pub mod heads;
pub mod math;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod train;

pub use error::{Error, Result};
