//! Gramian-based state-feedback stabilization of linear time-varying systems
//! on time scales: arbitrary closed subsets of the real line mixing discrete
//! and continuous time.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod export;
pub mod hilger;
pub mod linalg;
pub mod plant;
pub mod stabilizer;
pub mod timescale;
pub mod transition;
pub mod verify;

pub use error::{Error, Result};
