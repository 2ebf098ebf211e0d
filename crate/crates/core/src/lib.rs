//! Screening simulator for technology-assisted review.
//!
//! A committee of active learners screens a document collection. The overlap
//! between what each member has found is treated as capture-recapture data,
//! and population-size estimators built on it decide when to stop. Baseline
//! stopping rules are evaluated on the same traces.

pub mod autotar;
pub mod corpus;
pub mod criteria;
pub mod ensemble;
pub mod error;
pub mod estimators;
pub mod features;
pub mod glm;
pub mod harness;
pub mod learners;
pub mod rng;
pub mod tree;

pub use error::{Error, Result};
