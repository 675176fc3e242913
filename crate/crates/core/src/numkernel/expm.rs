use super::{Cx, Mat, Real};

/// Matrix exponential by scaling and squaring of a truncated Taylor series.
pub fn expm<T: Real>(a: &Mat<T>) -> Mat<T> {
    let n = a.rows();
    let norm = (0..n)
        .map(|j| (0..n).map(|i| a[(i, j)].norm()).fold(T::zero(), |x, y| x + y))
        .fold(T::zero(), |x, y| x.max(y));
    let mut s = 0i32;
    let half = T::lit(0.5);
    let mut scaled = norm;
    while scaled > half {
        scaled = scaled * half;
        s += 1;
    }
    let b = a.scale(Cx::new(T::lit(0.5).powi(s), T::zero()));
    let mut term = Mat::identity(n);
    let mut sum = Mat::identity(n);
    for k in 1..=18 {
        term = term.matmul(&b).scale(Cx::new(T::one() / T::lit(k as f64), T::zero()));
        sum = &sum + &term;
        if term.norm_max() <= T::epsilon() * T::lit(1e-2) * sum.norm_max() {
            break;
        }
    }
    for _ in 0..s {
        sum = sum.matmul(&sum);
    }
    sum
}
