pub mod autodiff;
pub mod error;

pub use error::{Error, Result};
pub mod domain;
pub mod env;
pub mod learning;
pub mod baselines;
pub mod human;
pub mod session;
pub mod harness;
