//! Neuromodulated meta-learning: bi-level training of network weights and a
//! learnable structure mask over hidden units.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod io;
pub mod meta;
pub mod metrics;
pub mod nn;
pub mod par;
pub mod plot;
pub mod selection;
pub mod structure;
pub mod taskgen;
pub mod tensor;

pub use error::{Error, Result};
