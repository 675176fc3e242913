use super::{cabs, Cx, Mat, Real};
use crate::error::{Error, Result};

/// LU factorization with partial pivoting, `P A = L U`.
#[derive(Clone, Debug)]
pub struct Lu<T> {
    lu: Mat<T>,
    perm: Vec<usize>,
    sign: T,
    singular: bool,
}

impl<T: Real> Lu<T> {
    pub fn new(a: &Mat<T>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::Dimension(format!("lu of {:?}", a.shape())));
        }
        if !a.is_finite() {
            return Err(Error::NonFinite("lu input"));
        }
        let n = a.rows();
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut sign = T::one();
        let scale = a.norm_max();
        let mut singular = false;
        for j in 0..n {
            let mut p = j;
            let mut best = cabs(lu[(j, j)]);
            for i in j + 1..n {
                let v = cabs(lu[(i, j)]);
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if p != j {
                for c in 0..n {
                    let tmp = lu[(j, c)];
                    lu[(j, c)] = lu[(p, c)];
                    lu[(p, c)] = tmp;
                }
                perm.swap(j, p);
                sign = -sign;
            }
            let piv = lu[(j, j)];
            if best <= T::epsilon() * scale * T::lit(0.01) || best == T::zero() {
                singular = true;
                continue;
            }
            for i in j + 1..n {
                let m = lu[(i, j)] / piv;
                lu[(i, j)] = m;
                if m.re == T::zero() && m.im == T::zero() {
                    continue;
                }
                for c in j + 1..n {
                    let u = lu[(j, c)];
                    lu[(i, c)] -= m * u;
                }
            }
        }
        Ok(Lu {
            lu,
            perm,
            sign,
            singular,
        })
    }

    pub fn is_singular(&self) -> bool {
        self.singular
    }

    pub fn dim(&self) -> usize {
        self.lu.rows()
    }

    pub fn det(&self) -> Cx<T> {
        let n = self.lu.rows();
        (0..n).fold(Cx::new(self.sign, T::zero()), |a, i| a * self.lu[(i, i)])
    }

    /// Smallest pivot modulus relative to the largest; a cheap conditioning hint.
    pub fn pivot_ratio(&self) -> T {
        let n = self.lu.rows();
        let mut lo = T::infinity();
        let mut hi = T::zero();
        for i in 0..n {
            let v = cabs(self.lu[(i, i)]);
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if hi == T::zero() {
            T::zero()
        } else {
            lo / hi
        }
    }

    pub fn solve_vec(&self, b: &[Cx<T>]) -> Result<Vec<Cx<T>>> {
        if self.singular {
            return Err(Error::Singular("dense LU solve".into()));
        }
        let n = self.lu.rows();
        assert_eq!(b.len(), n);
        let mut x: Vec<Cx<T>> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = x[i];
            for j in 0..i {
                s -= self.lu[(i, j)] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..n {
                s -= self.lu[(i, j)] * x[j];
            }
            x[i] = s / self.lu[(i, i)];
        }
        Ok(x)
    }

    pub fn solve(&self, b: &Mat<T>) -> Result<Mat<T>> {
        let mut out = Mat::zeros(b.rows(), b.cols());
        for j in 0..b.cols() {
            let x = self.solve_vec(&b.col(j))?;
            out.set_col(j, &x);
        }
        Ok(out)
    }

    pub fn inverse(&self) -> Result<Mat<T>> {
        self.solve(&Mat::identity(self.dim()))
    }
}

/// Determinant via LU.
pub fn det<T: Real>(a: &Mat<T>) -> Result<Cx<T>> {
    let lu = Lu::new(a)?;
    if lu.is_singular() {
        return Ok(Cx::new(T::zero(), T::zero()));
    }
    Ok(lu.det())
}

/// Determinant by cofactor expansion; exact in structure, meant for small `d`.
pub fn det_cofactor<T: Real>(a: &Mat<T>) -> Cx<T> {
    let n = a.rows();
    assert!(a.is_square());
    let rows: Vec<usize> = (0..n).collect();
    let cols: Vec<usize> = (0..n).collect();
    minor_det(a, &rows, &cols)
}

fn minor_det<T: Real>(a: &Mat<T>, rows: &[usize], cols: &[usize]) -> Cx<T> {
    match rows.len() {
        0 => Cx::new(T::one(), T::zero()),
        1 => a[(rows[0], cols[0])],
        2 => {
            a[(rows[0], cols[0])] * a[(rows[1], cols[1])]
                - a[(rows[0], cols[1])] * a[(rows[1], cols[0])]
        }
        _ => {
            let r0 = rows[0];
            let sub_rows = &rows[1..];
            let mut acc = Cx::new(T::zero(), T::zero());
            let mut sub_cols = Vec::with_capacity(cols.len() - 1);
            for (k, &c) in cols.iter().enumerate() {
                let x = a[(r0, c)];
                if x.re == T::zero() && x.im == T::zero() {
                    continue;
                }
                sub_cols.clear();
                sub_cols.extend(cols.iter().copied().filter(|&cc| cc != c));
                let m = minor_det(a, sub_rows, &sub_cols);
                if k % 2 == 0 {
                    acc += x * m;
                } else {
                    acc -= x * m;
                }
            }
            acc
        }
    }
}

/// Adjugate by cofactors, so `adj(A) A = A adj(A) = det(A) I` even when `A` is singular.
pub fn adjugate<T: Real>(a: &Mat<T>) -> Mat<T> {
    assert!(a.is_square());
    let n = a.rows();
    if n == 1 {
        return Mat::identity(1);
    }
    let mut adj = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            // adj[i][j] = (-1)^{i+j} det(A without row j, column i)
            let rows: Vec<usize> = (0..n).filter(|&r| r != j).collect();
            let cols: Vec<usize> = (0..n).filter(|&c| c != i).collect();
            let m = minor_det(a, &rows, &cols);
            adj[(i, j)] = if (i + j) % 2 == 0 { m } else { -m };
        }
    }
    adj
}
