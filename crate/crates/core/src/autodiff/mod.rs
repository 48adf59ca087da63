//! Small reverse-mode automatic differentiation over dense matrices.
//!
//! The tape is generic over its scalar type. With `f64` it produces ordinary
//! gradients; with [`Dual`] seeded by a tangent `v` on the parameters the
//! tangent part of the gradient is the Hessian-vector product `H v`, which
//! is what exact second-order meta-gradients need.

mod scalar;
mod tape;
mod tensor;

pub use scalar::{Dual, Real};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
