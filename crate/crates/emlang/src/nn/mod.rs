//! Minimal neural-network toolkit: matrices, a reverse-mode tape, layers,
//! and the Adam optimiser.

mod adam;
mod layers;
mod matrix;
mod tape;

pub use adam::{Adam, AdamConfig};
pub use layers::{
    BoundEncoder, BoundLinear, BoundLstmCell, Encoder, HasParams, Linear, LstmCell,
};
pub use matrix::{argmax, Matrix};
pub use tape::{log_softmax_at, sigmoid, softmax_in_place, Tape, Var};

pub(crate) use layers::init_weight;
