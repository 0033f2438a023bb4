//! Dataset Concealment (DSC) evaluation for quality estimators trained on
//! several datasets with mutually inconsistent labels.
//!
//! The crate trains Individual, Global and Concealed variants of a small
//! estimator (optionally with a per-dataset score aligner), aggregates the
//! replicated test correlations with the Fisher z transform, and reports
//! versatility and concealment gaps with significance flags. Synthetic
//! corpora with a known corpus effect are provided for validation.

pub mod aligner;
pub mod corpus;
pub mod experiment;
pub mod model;
pub mod protocol;
pub mod report;
pub mod seed;
pub mod stats;
pub mod synthgen;
