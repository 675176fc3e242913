use super::{cabs, givens, Cx, Mat, Real};
use crate::error::{Error, Result};

/// Complex Schur form `A = Z T Z^H`, `T` upper triangular, `Z` unitary.
#[derive(Clone, Debug)]
pub struct Schur<T> {
    pub t: Mat<T>,
    pub z: Mat<T>,
}

impl<T: Real> Schur<T> {
    pub fn eigenvalues(&self) -> Vec<Cx<T>> {
        (0..self.t.rows()).map(|i| self.t[(i, i)]).collect()
    }
}

/// Eigenvalues with unit-norm right eigenvectors (columns).
#[derive(Clone, Debug)]
pub struct Eigen<T> {
    pub values: Vec<Cx<T>>,
    pub vectors: Mat<T>,
}

/// Householder reduction to upper Hessenberg form; returns `(H, Q)` with `A = Q H Q^H`.
pub fn hessenberg<T: Real>(a: &Mat<T>) -> (Mat<T>, Mat<T>) {
    let n = a.rows();
    let mut h = a.clone();
    let mut q = Mat::identity(n);
    let zero = Cx::new(T::zero(), T::zero());
    for k in 0..n.saturating_sub(2) {
        let mut v: Vec<Cx<T>> = (k + 1..n).map(|i| h[(i, k)]).collect();
        let xnorm = v.iter().fold(T::zero(), |s, z| s + z.norm_sqr()).sqrt();
        if xnorm == T::zero() {
            continue;
        }
        let x0 = v[0];
        let phase = if cabs(x0) == T::zero() {
            Cx::new(T::one(), T::zero())
        } else {
            x0 / cabs(x0)
        };
        v[0] += phase * xnorm;
        let vnorm = v.iter().fold(T::zero(), |s, z| s + z.norm_sqr()).sqrt();
        if vnorm == T::zero() {
            continue;
        }
        for z in v.iter_mut() {
            *z = *z / vnorm;
        }
        let two = T::lit(2.0);
        // H <- (I - 2vv^H) H
        for j in 0..n {
            let mut dot = zero;
            for (r, &vi) in v.iter().enumerate() {
                dot += vi.conj() * h[(k + 1 + r, j)];
            }
            for (r, &vi) in v.iter().enumerate() {
                h[(k + 1 + r, j)] -= vi * dot * two;
            }
        }
        // H <- H (I - 2vv^H), Q <- Q (I - 2vv^H)
        for m in [&mut h, &mut q] {
            for i in 0..n {
                let mut dot = zero;
                for (r, &vi) in v.iter().enumerate() {
                    dot += m[(i, k + 1 + r)] * vi;
                }
                for (r, &vi) in v.iter().enumerate() {
                    m[(i, k + 1 + r)] -= dot * vi.conj() * two;
                }
            }
        }
        for i in k + 2..n {
            h[(i, k)] = zero;
        }
    }
    (h, q)
}

/// Complex Schur decomposition by shifted QR on the Hessenberg form.
pub fn schur<T: Real>(a: &Mat<T>) -> Result<Schur<T>> {
    if !a.is_square() {
        return Err(Error::Dimension(format!("schur of {:?}", a.shape())));
    }
    if !a.is_finite() {
        return Err(Error::NonFinite("schur input"));
    }
    let n = a.rows();
    let (mut h, mut z) = hessenberg(a);
    if n <= 1 {
        return Ok(Schur { t: h, z });
    }
    let eps = T::epsilon();
    let zero = Cx::new(T::zero(), T::zero());
    let anorm = h.norm_max().max(T::min_positive_value());
    let mut hi = n - 1;
    let mut iter = 0usize;
    let max_iter = 60 * n;
    let mut total = 0usize;
    while hi > 0 {
        let mut l = hi;
        while l > 0 {
            let s = cabs(h[(l - 1, l - 1)]) + cabs(h[(l, l)]);
            let s = if s == T::zero() { anorm } else { s };
            if cabs(h[(l, l - 1)]) <= eps * s {
                h[(l, l - 1)] = zero;
                break;
            }
            l -= 1;
        }
        if l == hi {
            hi -= 1;
            iter = 0;
            continue;
        }
        iter += 1;
        total += 1;
        if total > max_iter {
            return Err(Error::NoConvergence {
                what: "schur QR",
                iterations: total,
                residual: cabs(h[(hi, hi - 1)]).to_f64().unwrap_or(f64::NAN),
            });
        }
        let mu = if iter % 11 == 0 {
            h[(hi, hi)] + Cx::new(cabs(h[(hi, hi - 1)]) * T::lit(0.75), T::zero())
        } else {
            wilkinson(
                h[(hi - 1, hi - 1)],
                h[(hi - 1, hi)],
                h[(hi, hi - 1)],
                h[(hi, hi)],
            )
        };
        let mut x = h[(l, l)] - mu;
        let mut y = h[(l + 1, l)];
        for k in l..hi {
            if k > l {
                x = h[(k, k - 1)];
                y = h[(k + 1, k - 1)];
            }
            let (c, s, _) = givens(x, y);
            let c0 = if k > l { k - 1 } else { l };
            for j in c0..n {
                let a1 = h[(k, j)];
                let a2 = h[(k + 1, j)];
                h[(k, j)] = a1 * c + s * a2;
                h[(k + 1, j)] = a2 * c - s.conj() * a1;
            }
            if k > l {
                h[(k + 1, k - 1)] = zero;
            }
            let r1 = (k + 2).min(hi);
            for i in 0..=r1 {
                let a1 = h[(i, k)];
                let a2 = h[(i, k + 1)];
                h[(i, k)] = a1 * c + a2 * s.conj();
                h[(i, k + 1)] = a2 * c - a1 * s;
            }
            for i in 0..n {
                let a1 = z[(i, k)];
                let a2 = z[(i, k + 1)];
                z[(i, k)] = a1 * c + a2 * s.conj();
                z[(i, k + 1)] = a2 * c - a1 * s;
            }
        }
    }
    for j in 0..n {
        for i in j + 1..n {
            h[(i, j)] = zero;
        }
    }
    Ok(Schur { t: h, z })
}

fn wilkinson<T: Real>(a: Cx<T>, b: Cx<T>, c: Cx<T>, d: Cx<T>) -> Cx<T> {
    let half = T::lit(0.5);
    let m = (a - d) * half;
    let disc = (m * m + b * c).sqrt();
    let mu1 = d + m + disc;
    let mu2 = d + m - disc;
    if cabs(mu1 - d) < cabs(mu2 - d) {
        mu1
    } else {
        mu2
    }
}

/// Reorders a Schur form so that eigenvalues with `select` true come first.
/// Relative order within each group is preserved.
pub fn reorder_schur<T: Real>(s: &mut Schur<T>, select: impl Fn(Cx<T>) -> bool) {
    let n = s.t.rows();
    let mut target = 0;
    for j in 0..n {
        if select(s.t[(j, j)]) {
            let mut k = j;
            while k > target {
                swap_adjacent(s, k - 1);
                k -= 1;
            }
            target += 1;
        }
    }
}

fn swap_adjacent<T: Real>(s: &mut Schur<T>, k: usize) {
    let n = s.t.rows();
    let t11 = s.t[(k, k)];
    let t22 = s.t[(k + 1, k + 1)];
    let (c, sn, _) = givens(s.t[(k, k + 1)], t22 - t11);
    for j in k + 2..n {
        let x = s.t[(k, j)];
        let y = s.t[(k + 1, j)];
        s.t[(k, j)] = x * c + sn * y;
        s.t[(k + 1, j)] = y * c - sn.conj() * x;
    }
    for i in 0..k {
        let x = s.t[(i, k)];
        let y = s.t[(i, k + 1)];
        s.t[(i, k)] = x * c + sn.conj() * y;
        s.t[(i, k + 1)] = y * c - sn * x;
    }
    s.t[(k, k)] = t22;
    s.t[(k + 1, k + 1)] = t11;
    for i in 0..n {
        let x = s.z[(i, k)];
        let y = s.z[(i, k + 1)];
        s.z[(i, k)] = x * c + sn.conj() * y;
        s.z[(i, k + 1)] = y * c - sn * x;
    }
}

/// Eigenvalues and unit right eigenvectors of a square matrix.
pub fn eig<T: Real>(a: &Mat<T>) -> Result<Eigen<T>> {
    let s = schur(a)?;
    let n = a.rows();
    let t = &s.t;
    let zero = Cx::new(T::zero(), T::zero());
    let tnorm = t.norm_max();
    let smin = (T::epsilon() * tnorm).max(T::min_positive_value() * T::lit(1e10));
    let mut x = Mat::zeros(n, n);
    for k in 0..n {
        let lam = t[(k, k)];
        let mut v = vec![zero; n];
        v[k] = Cx::new(T::one(), T::zero());
        for j in (0..k).rev() {
            let mut acc = zero;
            for i in j + 1..=k {
                acc += t[(j, i)] * v[i];
            }
            let mut den = t[(j, j)] - lam;
            if cabs(den) < smin {
                den = Cx::new(smin, T::zero());
            }
            v[j] = -acc / den;
            let big = v.iter().fold(T::zero(), |m, &z| m.max(cabs(z)));
            if big > T::lit(1e100) {
                for z in v.iter_mut() {
                    *z = *z / big;
                }
            }
        }
        let w = s.z.matvec(&v);
        let nrm = w.iter().fold(T::zero(), |a, z| a + z.norm_sqr()).sqrt();
        let w: Vec<Cx<T>> = w.iter().map(|&z| z / nrm).collect();
        x.set_col(k, &w);
    }
    Ok(Eigen {
        values: s.eigenvalues(),
        vectors: x,
    })
}
