//! HTTP service and command-line front end for `grounded_rag`.

pub mod api;
pub mod cli;
