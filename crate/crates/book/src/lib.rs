//! Compiles and runs the guide's listings as doc-tests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/geometry.md")]
pub mod geometry {}
#[doc = include_str!("../../../book/src/registration.md")]
pub mod registration {}
#[doc = include_str!("../../../book/src/fusion.md")]
pub mod fusion {}
#[doc = include_str!("../../../book/src/dosimetry.md")]
pub mod dosimetry {}
#[doc = include_str!("../../../book/src/stats.md")]
pub mod stats {}
#[doc = include_str!("../../../book/src/pipeline.md")]
pub mod pipeline {}
