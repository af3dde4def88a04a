//! Command-line and HTTP front ends over the `ebc-core` pipeline.

pub mod cli;
pub mod http;
pub mod pipeline;
