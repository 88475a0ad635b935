//! Confidence distillation for clip-based video classification.
//!
//! A small student network learns, from a frozen teacher, both class scores
//! and how likely the teacher is to classify a clip correctly. Those scores
//! pick which clips the teacher sees and which the student handles itself.

pub mod bench;
pub mod cdar;
pub mod distill;
pub mod error;
mod fsutil;
pub mod inference;
pub mod nets;
pub mod sampling;
pub mod seed;
pub mod trainer;
pub mod videodata;

pub use error::{Error, Result};
