//! Universal domain adaptation by selective pseudo-labelling.
//!
//! A feature extractor, a label classifier and an adversarial domain
//! classifier are trained together. Target samples are scored by
//! `w(x) = d(x) + max ȳ(x)`; high scorers receive pseudo-labels and join
//! the batch-diversity term, and at deployment low scorers are rejected
//! as the unknown class τ.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod losses;
pub mod model;
pub mod scoring;
pub mod trainer;

pub use error::{Error, Result};
