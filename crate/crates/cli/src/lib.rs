//! File formats, synthetic scenes and the command-line surface of viewsplat.

pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod image;
pub mod manifest;
pub mod ply;
pub mod synth;

pub use error::{Error, Result};
