use super::{cabs, Cx, Mat, Real};
use crate::error::{Error, Result};

/// Thin SVD `A = U diag(sigma) V^H` with `sigma` sorted descending.
///
/// `U` is `m x r`, `V` is `n x r` with `r = min(m, n)`.
#[derive(Clone, Debug)]
pub struct Svd<T> {
    pub u: Mat<T>,
    pub sigma: Vec<T>,
    pub v: Mat<T>,
}

impl<T: Real> Svd<T> {
    /// Number of singular values with `sigma_j >= theta * sigma_1`.
    pub fn rank(&self, theta: T) -> usize {
        match self.sigma.first() {
            Some(&s1) if s1 > T::zero() => self.sigma.iter().filter(|&&s| s >= theta * s1).count(),
            _ => 0,
        }
    }

    pub fn reconstruct(&self) -> Mat<T> {
        let mut us = self.u.clone();
        for j in 0..self.sigma.len() {
            for i in 0..us.rows() {
                us[(i, j)] = us[(i, j)] * self.sigma[j];
            }
        }
        us.matmul(&self.v.adjoint())
    }
}

/// One-sided Jacobi SVD.
pub fn svd<T: Real>(a: &Mat<T>) -> Result<Svd<T>> {
    if !a.is_finite() {
        return Err(Error::NonFinite("svd input"));
    }
    if a.rows() < a.cols() {
        let s = svd_tall(&a.adjoint());
        return Ok(Svd {
            u: s.v,
            sigma: s.sigma,
            v: s.u,
        });
    }
    Ok(svd_tall(a))
}

fn svd_tall<T: Real>(a: &Mat<T>) -> Svd<T> {
    let (m, n) = a.shape();
    let zero = Cx::new(T::zero(), T::zero());
    let mut cols: Vec<Vec<Cx<T>>> = (0..n).map(|j| a.col(j)).collect();
    let mut vcols: Vec<Vec<Cx<T>>> = (0..n)
        .map(|j| {
            let mut e = vec![zero; n];
            e[j] = Cx::new(T::one(), T::zero());
            e
        })
        .collect();
    let eps = T::epsilon();
    let tiny = T::min_positive_value();

    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let (alpha, beta, gamma) = {
                    let (cp, cq) = (&cols[p], &cols[q]);
                    let mut al = T::zero();
                    let mut be = T::zero();
                    let mut ga = zero;
                    for i in 0..m {
                        al += cp[i].norm_sqr();
                        be += cq[i].norm_sqr();
                        ga += cp[i].conj() * cq[i];
                    }
                    (al, be, ga)
                };
                let g = cabs(gamma);
                if g <= tiny || g <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (g + g);
                let t = if zeta == T::zero() {
                    T::one()
                } else {
                    zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt())
                };
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                let ph = gamma.conj() / g;
                rotate(&mut cols, p, q, c, s, ph);
                rotate(&mut vcols, p, q, c, s, ph);
            }
        }
        if !rotated {
            break;
        }
    }

    let mut sig: Vec<(T, usize)> = cols
        .iter()
        .enumerate()
        .map(|(j, c)| (c.iter().fold(T::zero(), |a, z| a + z.norm_sqr()).sqrt(), j))
        .collect();
    sig.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap_or(std::cmp::Ordering::Equal));

    let smax = sig.first().map_or(T::zero(), |s| s.0);
    let cutoff = smax * eps * T::from_usize(m.max(n)).unwrap();
    let mut u = Mat::zeros(m, n);
    let mut v = Mat::zeros(n, n);
    let mut sigma = Vec::with_capacity(n);
    let mut deficient = Vec::new();
    for (k, &(s, j)) in sig.iter().enumerate() {
        sigma.push(s);
        v.set_col(k, &vcols[j]);
        if s > cutoff && s > T::zero() {
            let col: Vec<Cx<T>> = cols[j].iter().map(|&z| z / s).collect();
            u.set_col(k, &col);
        } else {
            deficient.push(k);
        }
    }
    complete_orthonormal(&mut u, &deficient);
    Svd { u, sigma, v }
}

fn rotate<T: Real>(cols: &mut [Vec<Cx<T>>], p: usize, q: usize, c: T, s: T, ph: Cx<T>) {
    let (lo, hi) = cols.split_at_mut(q);
    let cp = &mut lo[p];
    let cq = &mut hi[0];
    for i in 0..cp.len() {
        let x = cp[i];
        let y = cq[i] * ph;
        cp[i] = x * c - y * s;
        cq[i] = x * s + y * c;
    }
}

/// Fills the listed columns of `u` with unit vectors orthogonal to the rest.
fn complete_orthonormal<T: Real>(u: &mut Mat<T>, missing: &[usize]) {
    let m = u.rows();
    let zero = Cx::new(T::zero(), T::zero());
    let mut filled: Vec<usize> = (0..u.cols()).filter(|j| !missing.contains(j)).collect();
    let mut e = 0;
    for &k in missing {
        loop {
            if e >= m {
                return;
            }
            let mut cand = vec![zero; m];
            cand[e] = Cx::new(T::one(), T::zero());
            e += 1;
            for _ in 0..2 {
                for &j in &filled {
                    let dot = (0..m).fold(zero, |a, i| a + u[(i, j)].conj() * cand[i]);
                    for (i, c) in cand.iter_mut().enumerate() {
                        *c -= u[(i, j)] * dot;
                    }
                }
            }
            let nrm = cand.iter().fold(T::zero(), |a, z| a + z.norm_sqr()).sqrt();
            if nrm > T::lit(0.5) {
                let col: Vec<Cx<T>> = cand.iter().map(|&z| z / nrm).collect();
                u.set_col(k, &col);
                filled.push(k);
                break;
            }
        }
    }
}
