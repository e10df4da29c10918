//! Agent-based simulator and analysis toolkit for popularity feedback in
//! evolving image markets.
//!
//! Synthetic agents iteratively pick an image out of a sliding market window,
//! edit between 1 and 24 pixels, and publish the result back into the chain.
//! Paired chains run with and without popularity information, and the metrics
//! layer quantifies how that feedback alters diversity, exploration speed,
//! inequality, and fitness trajectories.

pub mod chain;
pub mod creation;
pub mod error;
pub mod experiment;
pub mod fitness;
pub mod inference;
pub mod io;
pub mod metrics;
pub mod policies;
pub mod rng;

pub use chain::{Chain, ChainNode, Condition, Image, MarketEntry, MarketView, PixelGrid};
pub use error::{Error, Result};
