//! Span-level bidirectional triplet extraction for aspect-based sentiment analysis.

pub mod config;
pub mod data;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod inference;
pub mod lattice;
pub mod model;
pub mod params;
pub mod records;
pub mod separation;
pub mod tape;
pub mod train;

pub use error::{Error, Result};
