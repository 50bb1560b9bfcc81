//! Speech/text representation alignment for a toy decoder-only speech-text
//! model.
//!
//! The crate quantifies the discrepancy between speech-derived and
//! text-derived hidden states with optimal transport ([`ot`]), picks the
//! layers worth aligning by speech-to-text retrieval ([`retrieval`]), and
//! trains the model with a combined cross-entropy and per-layer Wasserstein
//! objective ([`training`]).

pub mod error;
pub mod numerics;
pub mod ot;
pub mod data;
pub mod model;
pub mod retrieval;
pub mod training;
pub mod diagnostics;

pub use error::{Error, Result};
