//! Reverse-mode automatic differentiation over dense row-major tensors.
//!
//! A [`Tape`] records every operation applied during a forward pass and
//! replays the recorded backward rules in reverse order. The tape is rebuilt
//! for every evaluation; a tape can be differentiated exactly once.

mod adam;
mod gradcheck;
mod ops;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use ops::OpKind;
pub use tape::{CustomOp, Gradients, Tape, Var};
pub use tensor::Tensor;

pub(crate) use ops::sigmoid;
