//! Reverse-mode automatic differentiation over a recorded tape.

mod gradcheck;
mod tape;

pub use gradcheck::{grad_check, GradCheck, GradCheckReport};
pub use tape::{CustomAdjoint, Gradients, NodeId, Tape};
