//! Dense matrices, reverse-mode gradients, parameter storage and AdamW.

mod graph;
mod matrix;
mod optim;
mod params;
mod scalar;

pub use graph::{Gradients, Graph, Var};
pub use matrix::Matrix;
pub use optim::{AdamW, AdamWConfig, OptimizerState, Schedule};
pub use params::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Parameter,
    ParameterStore,
};
pub(crate) use params::ByteCursor;
pub use scalar::Scalar;
