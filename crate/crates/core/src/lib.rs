//! Central-spin simulation of a polar molecule dressed by Rydberg atoms.

pub mod angular;
pub mod cli;
pub mod error;
pub mod geometry;
pub mod linalg;
pub mod molecule;
pub mod scenarios;
pub mod spinmodel;
pub mod units;

pub use error::{Error, Result};
