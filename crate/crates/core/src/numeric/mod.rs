//! Dense tensors, reverse-mode differentiation and parameter checkpoints.

pub mod aft;
pub mod checkpoint;
pub mod gradcheck;
pub mod kernels;
pub mod tape;
pub mod tensor;

pub use gradcheck::grad_check;
pub use tape::{Tape, Var};
pub use tensor::{ParameterStore, Tensor};
