//! Light-field layout algebra, subspace-restricted convolutions on macro-pixel
//! images, and the spatial SR, angular SR and disparity networks built on
//! them.

pub mod bench;
pub mod engine;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod kernels;
pub mod lightfield;
pub mod metrics;
pub mod nets;
pub mod refocus;
pub mod tensor;

pub use error::{Error, Result};
pub use lightfield::LightField;
pub use tensor::{Element, Tensor};
