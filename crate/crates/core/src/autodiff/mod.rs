//! Minimal reverse-mode differentiation: exactly the primitives the envelope
//! networks need, plus the optimizer.

pub mod adam;
pub mod conv;
pub mod gradcheck;
pub mod tape;
pub mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use conv::{Alignment, ConvSpec, Padding};
pub use tape::{ActivationKind, Gradients, Tape, Var};
pub use tensor::Tensor;
