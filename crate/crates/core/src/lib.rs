pub mod adjoint;
pub mod classical;
pub mod cli;
pub mod error;
pub mod field;
pub mod metrics;
pub mod patf;
pub mod phantom;
pub mod selftest;
pub mod sim;
pub mod srnet;

pub use error::{Error, Result};
pub use field::{GridSpec, Medium, ScalarField2D};
