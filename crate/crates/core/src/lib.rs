//! Tools for testing whether a vector representation of face images is
//! linearly encodable in a low-dimensional shape-appearance parameter space.

pub mod axismodel;
pub mod classify;
pub mod encoding;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod paramspace;
pub mod pipeline;
pub mod rng;
pub mod synth;
pub mod verify;

pub use error::{Error, ErrorClass, Result};
