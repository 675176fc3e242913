pub mod error;
pub mod numkernel;
pub mod pencil;
pub mod propagate;
pub mod bvp;
pub mod contour;
pub mod extract;
pub mod evans;
pub mod schrodinger;
pub mod fhn;

pub use error::{Error, Result};
pub use numkernel::Real;

/// Complex double.
pub type C64 = num_complex::Complex64;
/// Dense complex double matrix.
pub type CMat = numkernel::Mat<f64>;
/// Dense complex single-precision matrix.
pub type CMat32 = numkernel::Mat<f32>;
