//! Dense differentiable kernel: arrays, primitive ops, optimizer, RNG streams
//! and a finite-difference checker.

pub mod adam;
pub mod gradcheck;
pub mod matrix;
pub mod ops;
pub mod params;
pub mod rng;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use matrix::Matrix;
pub use params::{Param, ParamId, ParameterStore};
pub use rng::{Rng, RngState};
