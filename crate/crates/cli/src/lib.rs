//! Command-line front end and HTTP session service for `dmalign-core`.

pub mod cli;
pub mod server;
