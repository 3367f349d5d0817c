//! Reverse-mode differentiation, small MLPs and first-order optimizers.

pub mod mlp;
pub mod optim;
pub mod tape;

pub use mlp::{rows_to_array, Activation, BoundMlp, Dense, Mlp, Param};
pub use optim::{Optimizer, OptimizerKind};
pub use tape::{Tape, Var};
