//! HOG-guided all-in-one image restoration.
//!
//! A self-contained restoration stack: a reverse-mode tensor core, learnable
//! histogram-of-oriented-gradients feature machinery, sorted dual-branch
//! transposed attention blocks, a U-shaped encoder–decoder model, a composite
//! loss with training loop, synthetic degradation generators, and full
//! reference metrics. See the `examples/` directory for one runnable entry
//! point per capability; the `hogformer` binary exposes the same workflows as
//! subcommands.

pub mod data;
pub mod error;
pub mod blocks;
pub mod hog;
pub mod model;
pub mod params;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Scalar, Tensor};
