use super::{cabs, Cx, Mat, Real};

/// Thin QR by modified Gram-Schmidt with one reorthogonalization pass.
///
/// `R` has real positive diagonal. Returns `None` if a column is numerically
/// dependent on its predecessors.
pub fn qr<T: Real>(a: &Mat<T>) -> Option<(Mat<T>, Mat<T>)> {
    let (n, k) = a.shape();
    let zero = Cx::new(T::zero(), T::zero());
    let mut q = a.clone();
    let mut r = Mat::zeros(k, k);
    let scale = a.norm_max();
    for j in 0..k {
        for _pass in 0..2 {
            for i in 0..j {
                let mut s = zero;
                for row in 0..n {
                    s += q[(row, i)].conj() * q[(row, j)];
                }
                for row in 0..n {
                    let qi = q[(row, i)];
                    q[(row, j)] -= s * qi;
                }
                r[(i, j)] += s;
            }
        }
        let nrm = (0..n).map(|row| cabs(q[(row, j)]).powi(2)).fold(T::zero(), |a, b| a + b).sqrt();
        if !(nrm > T::epsilon() * scale * T::lit(n as f64)) {
            return None;
        }
        for row in 0..n {
            q[(row, j)] = q[(row, j)] / nrm;
        }
        r[(j, j)] = Cx::new(nrm, T::zero());
    }
    Some((q, r))
}
