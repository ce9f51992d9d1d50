pub mod dosimetry;
pub mod error;
pub mod fusion;
pub mod geometry;
pub mod pipeline;
pub mod registration;
pub mod stats;

pub use error::{Error, Result};
