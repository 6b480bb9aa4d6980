//! Numeric kernels: deterministic RNG, diagonal Gaussians, feedforward nets
//! with explicit backprop, an Adam-style optimizer, and finite-difference
//! gradient checking. Everything is f64 and pure: identical inputs (including
//! RNG state) produce bit-identical outputs.

mod adam;
mod gaussian;
mod gradcheck;
mod net;
mod ops;
mod rng;

pub use adam::Adam;
pub use gaussian::DiagGaussian;
pub use gradcheck::{central_difference, max_relative_error, relative_error};
pub use net::{Activation, FeedforwardNet, ForwardTrace, Layer};
pub use ops::{argmax, log_softmax, sample_index, softmax};
pub use rng::Rng;
