//! Dense and banded complex linear algebra, generic over the real scalar.
//!
//! Everything here is written against [`Real`] so the kernels run in `f32`
//! or `f64`; the rest of the crate uses the `f64` aliases from the root.

mod banded;
mod eig;
mod expm;
mod lu;
mod mat;
mod qr;
mod svd;

pub use banded::{BlockBidiagonal, BlockBidiagonalLu};
pub use eig::{eig, hessenberg, reorder_schur, schur, Eigen, Schur};
pub use expm::expm;
pub use lu::{adjugate, det, det_cofactor, Lu};
pub use mat::Mat;
pub use qr::qr;
pub use svd::{svd, Svd};

use num_complex::Complex;
use num_traits::{Float, FromPrimitive, NumAssign};
use std::fmt::{Debug, Display};

/// Real scalar usable by the kernels.
pub trait Real:
    Float + FromPrimitive + NumAssign + Debug + Display + Default + Send + Sync + 'static
{
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal fits in scalar type")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Complex number over a [`Real`].
pub type Cx<T> = Complex<T>;

pub(crate) fn cabs<T: Real>(z: Cx<T>) -> T {
    z.re.hypot(z.im)
}

pub(crate) fn cfinite<T: Real>(z: Cx<T>) -> bool {
    z.re.is_finite() && z.im.is_finite()
}

/// Givens rotation `[c s; -conj(s) c]` mapping `(f, g)` to `(r, 0)`.
pub(crate) fn givens<T: Real>(f: Cx<T>, g: Cx<T>) -> (T, Cx<T>, Cx<T>) {
    let zero = Cx::new(T::zero(), T::zero());
    if g == zero {
        return (T::one(), zero, f);
    }
    let nf = cabs(f);
    let ng = cabs(g);
    if nf == T::zero() {
        return (T::zero(), g.conj() / ng, Cx::new(ng, T::zero()));
    }
    let norm = nf.hypot(ng);
    let alpha = f / nf;
    let c = nf / norm;
    let s = alpha * g.conj() / norm;
    (c, s, alpha * norm)
}

#[cfg(test)]
mod tests;
