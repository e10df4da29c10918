//! File formats, configuration schema, and plot emission.

pub mod config;
pub mod formats;
pub mod plot;
