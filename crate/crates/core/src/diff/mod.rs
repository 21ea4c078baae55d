//! Reverse-mode differentiation over dense double-precision tensors.
//!
//! Only the primitives the rationale model and its losses need are provided.
//! Binary elementwise ops accept a right operand that is either a single
//! element or a trailing sub-shape of the left operand.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::grad_check;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
