//! Dense matrices with reverse-mode gradients, parameter storage, the
//! optimizer, finite-difference checking and the checkpoint container.

pub mod checkpoint;
mod error;
mod gradcheck;
mod graph;
mod optim;
mod params;

pub use checkpoint::{Checkpoint, CheckpointError, CheckpointHeader, NamedTensor};
pub use error::{NumericError, Result};
pub use gradcheck::{grad_check, GradCheckReport, ParamCheck};
pub use graph::{log_sum_exp, sigmoid, softmax, Graph, Var};
pub use optim::{Adam, AdamConfig};
pub use params::{glorot_uniform, uniform, Gradients, Param, ParamId, ParamStore};
