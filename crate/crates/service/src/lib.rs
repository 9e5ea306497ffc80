//! Command line and review API for the grading pipeline.

pub mod api;
pub mod cli;
