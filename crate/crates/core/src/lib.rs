#![no_std]
extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod activation;
pub mod autograd;
pub mod cnn;
pub mod datasets;
pub mod error;
pub mod ffnn;
pub mod linalg;
pub mod loss;
pub mod matrix;
pub mod optim;
pub mod rng;
pub mod rnn;
pub mod verification;

pub use activation::Activation;
pub use autograd::{Gradients, Tape, Var};
pub use error::{Error, Result};
pub use loss::Head;
pub use matrix::Matrix;
pub use optim::{OptimizerKind, OptimizerState};
pub use rng::Rng64;
