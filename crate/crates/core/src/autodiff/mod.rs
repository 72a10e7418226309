//! Dense tensors, a dynamic reverse-mode tape and the optimizers used to
//! train every model in the crate.

mod gradcheck;
mod optim;
mod tape;
mod tensor;

pub use gradcheck::{numeric_gradient, relative_error};
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind};
pub use tape::{Axis, Gradients, Tape, Var};
pub use tensor::{argmax, matmul, Tensor};
