//! Feed-forward reconstruction of 3D Gaussian splats from posed images.
//!
//! The crate is `no_std` with `alloc`. File formats and the command line live
//! in the companion `viewsplat` crate.
#![no_std]

extern crate alloc;
#[cfg(any(test, feature = "parallel"))]
extern crate std;

pub mod autodiff;
pub mod camera;
pub mod config;
pub mod cost;
pub mod error;
pub mod gaussian;
pub mod model;
pub mod params;
pub mod render;
pub mod scalar;
pub mod tensor;
pub mod tokenizer;
pub mod train;
pub mod update;
pub mod verify;

pub use autodiff::{Tape, Var};
pub use error::{Error, Result};
pub use scalar::Real;
pub use tensor::Tensor;
