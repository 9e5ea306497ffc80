//! Rubric-based grading of handwritten exam answers with sampled model
//! judgements, confidence routing and agreement statistics.

pub mod backend;
pub mod engine;
pub mod extract;
pub mod metrics;
pub mod model;
pub mod prompt;
pub mod pipeline;
pub mod store;
