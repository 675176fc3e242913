use super::{cabs, Cx, Mat, Real};
use crate::error::{Error, Result};

/// Two-point boundary system
///
/// ```text
/// [ L  0  ...  0  R ] [y_0]   [b_bc]
/// [ A0 B0          ] [y_1]   [b_0 ]
/// [    A1 B1       ] [...] = [b_1 ]
/// [        ...     ] [y_n]   [... ]
/// ```
///
/// with `d x d` blocks. Row order is boundary rows first, then the `n`
/// interval rows; unknowns are the nodal values `y_0..y_n` stacked.
#[derive(Clone, Debug)]
pub struct BlockBidiagonal<T> {
    d: usize,
    left: Mat<T>,
    right: Mat<T>,
    lower: Vec<Mat<T>>,
    upper: Vec<Mat<T>>,
}

impl<T: Real> BlockBidiagonal<T> {
    pub fn new(left: Mat<T>, right: Mat<T>, lower: Vec<Mat<T>>, upper: Vec<Mat<T>>) -> Result<Self> {
        let d = left.rows();
        let ok = left.shape() == (d, d)
            && right.shape() == (d, d)
            && lower.len() == upper.len()
            && !lower.is_empty()
            && lower.iter().chain(&upper).all(|b| b.shape() == (d, d));
        if !ok || d == 0 {
            return Err(Error::Dimension("block bidiagonal blocks".into()));
        }
        Ok(BlockBidiagonal {
            d,
            left,
            right,
            lower,
            upper,
        })
    }

    pub fn block_size(&self) -> usize {
        self.d
    }

    pub fn intervals(&self) -> usize {
        self.lower.len()
    }

    pub fn unknowns(&self) -> usize {
        (self.intervals() + 1) * self.d
    }

    /// Matrix-vector product in equation order.
    pub fn apply(&self, y: &[Cx<T>]) -> Vec<Cx<T>> {
        let d = self.d;
        let n = self.intervals();
        assert_eq!(y.len(), (n + 1) * d);
        let mut out = Vec::with_capacity(y.len());
        let a = self.left.matvec(&y[..d]);
        let b = self.right.matvec(&y[n * d..]);
        out.extend(a.iter().zip(&b).map(|(&p, &q)| p + q));
        for i in 0..n {
            let a = self.lower[i].matvec(&y[i * d..(i + 1) * d]);
            let b = self.upper[i].matvec(&y[(i + 1) * d..(i + 2) * d]);
            out.extend(a.iter().zip(&b).map(|(&p, &q)| p + q));
        }
        out
    }

    /// Banded LU with partial pivoting; the last block column is kept dense.
    pub fn factor(&self) -> Result<BlockBidiagonalLu<T>> {
        let d = self.d;
        let n = self.intervals();
        let nn = (n + 1) * d;
        let p = 2 * d - 1;
        let q = d - 1;
        let w = 2 * p + q + 1;
        let tail0 = nn - d;
        let zero = Cx::new(T::zero(), T::zero());
        let mut lu = BlockBidiagonalLu {
            d,
            nn,
            p,
            q,
            w,
            band: vec![zero; nn * w],
            tail: vec![zero; nn * d],
            mult: vec![zero; nn * p],
            piv: vec![0; nn],
        };
        let mut scale = T::zero();
        {
            let mut put = |r: usize, c: usize, v: Cx<T>| {
                scale = scale.max(cabs(v));
                if c >= tail0 {
                    lu.tail[r * d + (c - tail0)] = v;
                } else {
                    lu.band[r * w + (c + p - r)] = v;
                }
            };
            for a in 0..d {
                for b in 0..d {
                    put(a, b, self.left[(a, b)]);
                    put(a, n * d + b, self.right[(a, b)]);
                }
            }
            for i in 0..n {
                for a in 0..d {
                    let r = d + i * d + a;
                    for b in 0..d {
                        put(r, i * d + b, self.lower[i][(a, b)]);
                        put(r, (i + 1) * d + b, self.upper[i][(a, b)]);
                    }
                }
            }
        }
        if !scale.is_finite() {
            return Err(Error::NonFinite("block system"));
        }
        let tol = T::epsilon() * scale;
        for j in 0..nn {
            let rmax = (j + p).min(nn - 1);
            let cmax = (j + p + q).min(tail0.saturating_sub(1));
            let band_cols = j < tail0;
            let mut s = j;
            let mut best = cabs(lu.get(j, j));
            for r in j + 1..=rmax {
                let v = cabs(lu.get(r, j));
                if v > best {
                    best = v;
                    s = r;
                }
            }
            lu.piv[j] = s;
            if s != j {
                if band_cols {
                    for c in j..=cmax {
                        let ij = lu.bidx(j, c);
                        let is = lu.bidx(s, c);
                        lu.band.swap(ij, is);
                    }
                }
                for t in 0..d {
                    lu.tail.swap(j * d + t, s * d + t);
                }
            }
            let pivot = lu.get(j, j);
            if best <= tol || best == T::zero() {
                return Err(Error::Singular(format!("zero pivot at row {j}")));
            }
            for r in j + 1..=rmax {
                let m = lu.get(r, j) / pivot;
                lu.mult[j * p + (r - j - 1)] = m;
                if m.re == T::zero() && m.im == T::zero() {
                    continue;
                }
                if band_cols {
                    for c in j + 1..=cmax {
                        let u = lu.band[lu.bidx(j, c)];
                        let k = lu.bidx(r, c);
                        lu.band[k] -= m * u;
                    }
                }
                for t in 0..d {
                    let u = lu.tail[j * d + t];
                    lu.tail[r * d + t] -= m * u;
                }
                lu.set(r, j, zero);
            }
        }
        Ok(lu)
    }
}

/// Factorization produced by [`BlockBidiagonal::factor`]; reusable across right-hand sides.
#[derive(Clone, Debug)]
pub struct BlockBidiagonalLu<T> {
    d: usize,
    nn: usize,
    p: usize,
    q: usize,
    w: usize,
    band: Vec<Cx<T>>,
    tail: Vec<Cx<T>>,
    mult: Vec<Cx<T>>,
    piv: Vec<usize>,
}

impl<T: Real> BlockBidiagonalLu<T> {
    #[inline]
    fn bidx(&self, r: usize, c: usize) -> usize {
        debug_assert!(c + self.p >= r && c + self.p - r < self.w);
        r * self.w + (c + self.p - r)
    }

    #[inline]
    fn get(&self, r: usize, c: usize) -> Cx<T> {
        let t0 = self.nn - self.d;
        if c >= t0 {
            self.tail[r * self.d + (c - t0)]
        } else {
            self.band[self.bidx(r, c)]
        }
    }

    #[inline]
    fn set(&mut self, r: usize, c: usize, v: Cx<T>) {
        let t0 = self.nn - self.d;
        if c >= t0 {
            self.tail[r * self.d + (c - t0)] = v;
        } else {
            let k = self.bidx(r, c);
            self.band[k] = v;
        }
    }

    pub fn unknowns(&self) -> usize {
        self.nn
    }

    /// Solves in place; `b` is in equation order on entry and holds `y` on exit.
    pub fn solve_in_place(&self, b: &mut [Cx<T>]) {
        let nn = self.nn;
        let d = self.d;
        let p = self.p;
        assert_eq!(b.len(), nn);
        let tail0 = nn - d;
        for j in 0..nn {
            let s = self.piv[j];
            if s != j {
                b.swap(j, s);
            }
            let bj = b[j];
            let rmax = (j + p).min(nn - 1);
            for r in j + 1..=rmax {
                b[r] -= self.mult[j * p + (r - j - 1)] * bj;
            }
        }
        for j in (0..nn).rev() {
            let mut s = b[j];
            if j < tail0 {
                let cmax = (j + p + self.q).min(tail0 - 1);
                for c in j + 1..=cmax {
                    s -= self.band[self.bidx(j, c)] * b[c];
                }
            }
            let t_start = if j >= tail0 { j + 1 - tail0 } else { 0 };
            for t in t_start..d {
                s -= self.tail[j * d + t] * b[tail0 + t];
            }
            b[j] = s / self.get(j, j);
        }
    }

    pub fn solve(&self, b: &[Cx<T>]) -> Vec<Cx<T>> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}
