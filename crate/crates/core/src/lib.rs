//! Spatio-temporal storm-surge emulation: a convolutional recurrent network
//! (dense projection, convolutional encoder, ConvLSTM, pixel-shuffle decoder
//! with a forward-Euler residual) trained from scratch on a reverse-mode tape,
//! plus a PCA + Gaussian-process baseline and a synthetic storm generator.

pub mod checks;
pub mod docio;
pub mod error;
pub mod eval;
pub mod gp;
pub mod layers;
pub mod model;
pub mod pipeline;
pub mod storm_data;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use model::{ArchitectureConfig, Crnn, ModelParams};
pub use tensor::{Tape, Tensor, Var};
