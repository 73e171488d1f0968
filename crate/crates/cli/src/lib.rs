//! Command-line front end and HTTP service for graphmem indexes.

pub mod app;
pub mod cli;
pub mod service;
