//! Person re-identification from overhead-free point clouds.

pub mod encoder;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod imprints;
pub mod inference;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod synthdata;
pub mod tracking;
pub mod training;

pub use error::{Error, Result};
