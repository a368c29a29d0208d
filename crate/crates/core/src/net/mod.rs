//! Dense linear algebra and multilayer perceptrons.
//!
//! Everything here is `f64` and row-major. The networks are small (a few
//! thousand parameters), so plain loops are fast enough and keep the gradient
//! code easy to audit against finite differences.

mod adam;
mod linalg;
mod matrix;
mod mlp;

pub use adam::{Adam, AdamState};
pub use linalg::{solve_linear, PIVOT_TOLERANCE};
pub use matrix::Matrix;
pub use mlp::{
    Activation, BatchCache, ForwardCache, GradBundle, MlpParams, OutputActivation,
};
