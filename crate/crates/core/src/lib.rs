//! Structured prediction over discourse factor graphs: exact and randomized
//! constrained MAP inference, structured hinge training and an experiment
//! harness for argument mining and debate stance.

pub mod cli;
pub mod constraints;
pub mod error;
pub mod exact;
pub mod graph;
pub mod harness;
pub mod inference;
pub mod io;
pub mod learning;
pub mod metrics;
pub mod randomized;
pub mod scorer;
pub mod synth;

pub use error::{Error, Result};
