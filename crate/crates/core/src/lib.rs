//! Sequence-learning laboratory around the GateL0RD recurrent cell:
//! sparsely gated latent dynamics with an L0 penalty on state changes,
//! baseline RNNs (GRU, LSTM, Elman), three partially observable toy
//! environments, the full training recipe, an iCEM model-predictive-control
//! planner, and gate/latent analysis tooling.

pub mod error;
pub mod rng;
pub mod tensor;
pub mod tape;
pub mod optim;
pub mod mlp;
pub mod cells;
pub mod model;
pub mod train;
pub mod envs;
pub mod analysis;
pub mod planner;
pub mod run;

pub use error::{Error, Result};
pub use rng::RngStream;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
