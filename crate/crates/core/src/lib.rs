//! Selective self-attention: a small reverse-mode engine, temperature-scaled
//! attention layers, closed-form checks and the synthetic experiments built
//! on them.

pub mod attention;
pub mod autodiff;
pub mod checks;
pub mod error;
pub mod gradcheck;
pub mod linalg;
pub mod rng;
pub mod tasks;
pub mod tensor;
pub mod theory;
pub mod training;

pub use error::{Error, Result};
pub use tensor::Matrix;
