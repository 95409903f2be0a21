//! Dense arrays, a reverse-mode tape, parameters and optimizer.

mod array;
pub mod checkpoint;
mod gradcheck;
mod store;
mod tape;

pub use array::DenseArray;
pub use gradcheck::{grad_check, GradCheckReport, FD_STEP, REL_FLOOR};
pub use store::{AdamW, ParamEntry, ParameterStore};
pub use tape::{gelu_scalar, GatherPlan, Gradients, Tape, Var, GELU_A, GELU_C, NORM_EPS};

/// `x W + b` applied at every pixel of an `[H, W, Cin]` array.
pub fn conv1x1(tape: &mut Tape, x: Var, w: Var, b: Var) -> crate::Result<Var> {
    if tape.value(x).shape().len() != 3 {
        return Err(crate::Error::Dimension(format!(
            "conv1x1 expects [H, W, C], got {:?}",
            tape.value(x).shape()
        )));
    }
    tape.linear(x, w, Some(b))
}
