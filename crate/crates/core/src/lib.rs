//! Asymmetric receptive-field autoencoder (ARFA) for spatiotemporal
//! prediction: a large-kernel encoder, a small-kernel decoder, and the
//! tensor, autodiff, data, metric and training machinery around them.

pub mod autograd;
pub mod error;
pub mod checkpoint;
pub mod data;
pub mod gradcheck;
pub mod io;
pub mod kv;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod train;

pub use autograd::{Gradients, Tape, Var};
pub use error::{Error, Result};
pub use rng::Prng;
pub use tensor::{Scalar, Tensor};
