//! Trapezoidal box-scheme discretization of `F(lambda) y = -y' + A(lambda, x) y` on a
//! truncated interval with boundary rows `R_- y_0 + R_+ y_n = 0`.

use crate::error::{Error, Result};
use crate::numkernel::{BlockBidiagonal, Lu};
use crate::pencil::{asymptotic_splitting, AsymptoticSplitting, OdePencil};
use crate::{CMat, C64};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::Write;
use std::sync::Arc;

/// Uniform grid `x_i = x_min + i h`, `i = 0..=n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub x_min: f64,
    pub x_max: f64,
    pub intervals: usize,
}

impl Grid {
    pub fn new(x_min: f64, x_max: f64, step: f64) -> Result<Self> {
        if !(x_min.is_finite() && x_max.is_finite() && step.is_finite()) {
            return Err(Error::NonFinite("grid"));
        }
        if x_max <= x_min || step <= 0.0 {
            return Err(Error::Config(format!(
                "grid needs x_min < x_max and step > 0 (got {x_min}, {x_max}, {step})"
            )));
        }
        let n = ((x_max - x_min) / step).round();
        if n < 1.0 || ((x_max - x_min) - n * step).abs() > 1e-9 * (x_max - x_min) {
            return Err(Error::Config(format!(
                "step {step} does not divide [{x_min}, {x_max}]"
            )));
        }
        Ok(Grid {
            x_min,
            x_max,
            intervals: n as usize,
        })
    }

    /// `[-length/2, length/2]`.
    pub fn symmetric(length: f64, step: f64) -> Result<Self> {
        Self::new(-0.5 * length, 0.5 * length, step)
    }

    pub fn step(&self) -> f64 {
        (self.x_max - self.x_min) / self.intervals as f64
    }

    pub fn len(&self) -> usize {
        self.intervals + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn node(&self, i: usize) -> f64 {
        if i == self.intervals {
            self.x_max
        } else {
            self.x_min + i as f64 * self.step()
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(|i| self.node(i))
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.x_min - 1e-12 && x <= self.x_max + 1e-12
    }

    /// Index of the node at `x`, if `x` is a node.
    pub fn index_of(&self, x: f64) -> Option<usize> {
        let h = self.step();
        let r = ((x - self.x_min) / h).round();
        if r < 0.0 || r > self.intervals as f64 {
            return None;
        }
        let i = r as usize;
        ((self.node(i) - x).abs() <= 1e-7 * h).then_some(i)
    }

    /// Trapezoid weights.
    pub fn weight(&self, i: usize) -> f64 {
        if i == 0 || i == self.intervals {
            0.5 * self.step()
        } else {
            self.step()
        }
    }
}

/// Nodal values of a `C^d`-valued function on a grid, node-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFunction {
    pub grid: Grid,
    pub dim: usize,
    pub values: Vec<C64>,
}

impl GridFunction {
    pub fn zeros(grid: Grid, dim: usize) -> Self {
        GridFunction {
            grid,
            dim,
            values: vec![C64::new(0.0, 0.0); grid.len() * dim],
        }
    }

    pub fn sample(grid: Grid, dim: usize, f: impl Fn(f64) -> Vec<C64>) -> Self {
        let mut values = Vec::with_capacity(grid.len() * dim);
        for x in grid.nodes() {
            let v = f(x);
            assert_eq!(v.len(), dim);
            values.extend(v);
        }
        GridFunction { grid, dim, values }
    }

    pub fn at(&self, i: usize) -> &[C64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn component(&self, c: usize) -> Vec<C64> {
        (0..self.grid.len()).map(|i| self.values[i * self.dim + c]).collect()
    }

    /// Discrete L2 norm with trapezoid weights.
    pub fn l2_norm(&self) -> f64 {
        (0..self.grid.len())
            .map(|i| self.grid.weight(i) * self.at(i).iter().map(|z| z.norm_sqr()).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, s: C64) {
        for z in &mut self.values {
            *z *= s;
        }
    }

    /// Writes `x, re_y1..re_yd, im_y1..im_yd`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let mut header = vec!["x".to_string()];
        header.extend((1..=self.dim).map(|k| format!("re_y{k}")));
        header.extend((1..=self.dim).map(|k| format!("im_y{k}")));
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.grid.len() {
            let row = self.at(i);
            let mut line = format!("{:.17e}", self.grid.node(i));
            for z in row {
                line.push_str(&format!(",{:.17e}", z.re));
            }
            for z in row {
                line.push_str(&format!(",{:.17e}", z.im));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

/// Boundary rows `R_- y(x_-) + R_+ y(x_+) = 0`.
#[derive(Clone, Debug)]
pub struct BoundaryMatrices {
    pub minus: CMat,
    pub plus: CMat,
}

impl BoundaryMatrices {
    /// `det(R_- V_-^s | R_+ V_+^u)`; nonzero means the rows control the growing modes.
    pub fn determinant_condition(&self, s: &AsymptoticSplitting) -> C64 {
        let a = self.minus.matmul(&s.stable_minus);
        let b = self.plus.matmul(&s.unstable_plus);
        crate::numkernel::det(&CMat::hstack(&[&a, &b])).unwrap_or(C64::new(f64::NAN, 0.0))
    }
}

pub type BoundaryFn = Arc<dyn Fn(C64) -> BoundaryMatrices + Send + Sync>;

#[derive(Clone)]
pub enum BoundaryConditionSpec {
    /// Rows annihilating the wrong asymptotic subspaces.
    Projection,
    /// `y(x_-) = y(x_+)`.
    Periodic,
    Custom(BoundaryFn),
}

impl fmt::Debug for BoundaryConditionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.kind())
    }
}

impl BoundaryConditionSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            BoundaryConditionSpec::Projection => "projection",
            BoundaryConditionSpec::Periodic => "periodic",
            BoundaryConditionSpec::Custom(_) => "custom",
        }
    }

    pub fn matrices(&self, pencil: &OdePencil, lambda: C64) -> Result<BoundaryMatrices> {
        match self {
            BoundaryConditionSpec::Projection => {
                projection_boundary(&asymptotic_splitting(pencil, lambda)?)
            }
            BoundaryConditionSpec::Periodic => {
                let d = pencil.dim();
                Ok(BoundaryMatrices {
                    minus: CMat::identity(d),
                    plus: CMat::identity(d).scale(C64::new(-1.0, 0.0)),
                })
            }
            BoundaryConditionSpec::Custom(f) => Ok(f(lambda)),
        }
    }
}

/// `R_- = [L_-^s; 0]`, `R_+ = [0; L_+^u]` where `(V^s | V^u)^{-1} = (L^s; L^u)`.
pub fn projection_boundary(s: &AsymptoticSplitting) -> Result<BoundaryMatrices> {
    let k = s.stable_minus.cols();
    let d = s.stable_minus.rows();
    let inv_minus = Lu::new(&CMat::hstack(&[&s.stable_minus, &s.unstable_minus]))?.inverse()?;
    let inv_plus = Lu::new(&CMat::hstack(&[&s.stable_plus, &s.unstable_plus]))?.inverse()?;
    let mut minus = CMat::zeros(d, d);
    minus.set_block(0, 0, &inv_minus.row_block(0, k));
    let mut plus = CMat::zeros(d, d);
    plus.set_block(k, 0, &inv_plus.row_block(k, d));
    Ok(BoundaryMatrices { minus, plus })
}

/// Factorized `F_N(lambda)` ready for repeated solves.
#[derive(Clone, Debug)]
pub struct DiscreteSystem {
    pub lambda: C64,
    pub grid: Grid,
    pub dim: usize,
    pub boundary: BoundaryMatrices,
    system: BlockBidiagonal<f64>,
    lu: crate::numkernel::BlockBidiagonalLu<f64>,
}

/// Assembles and factors the box scheme at `lambda`.
pub fn discretize(
    pencil: &OdePencil,
    lambda: C64,
    grid: &Grid,
    bc: &BoundaryConditionSpec,
) -> Result<DiscreteSystem> {
    if !(lambda.re.is_finite() && lambda.im.is_finite()) {
        return Err(Error::NonFinite("lambda"));
    }
    let boundary = bc.matrices(pencil, lambda)?;
    discretize_with(pencil, lambda, grid, boundary)
}

pub fn discretize_with(
    pencil: &OdePencil,
    lambda: C64,
    grid: &Grid,
    boundary: BoundaryMatrices,
) -> Result<DiscreteSystem> {
    let d = pencil.dim();
    let n = grid.intervals;
    let h = grid.step();
    let coeffs: Vec<CMat> = grid.nodes().map(|x| pencil.coefficient(lambda, x)).collect();
    if coeffs.iter().any(|a| !a.is_finite()) {
        return Err(Error::NonFinite("coefficient A(lambda, x)"));
    }
    let id_h = CMat::identity(d).scale(C64::new(1.0 / h, 0.0));
    let half = C64::new(0.5, 0.0);
    let mut lower = Vec::with_capacity(n);
    let mut upper = Vec::with_capacity(n);
    for i in 0..n {
        lower.push(&id_h + &coeffs[i].scale(half));
        upper.push(&coeffs[i + 1].scale(half) - &id_h);
    }
    let system = BlockBidiagonal::new(boundary.minus.clone(), boundary.plus.clone(), lower, upper)?;
    let lu = system.factor().map_err(|e| match e {
        Error::Singular(_) => Error::OnSpectrum { lambda },
        other => other,
    })?;
    Ok(DiscreteSystem {
        lambda,
        grid: *grid,
        dim: d,
        boundary,
        system,
        lu,
    })
}

impl DiscreteSystem {
    fn rhs_vector(&self, v: &GridFunction) -> Vec<C64> {
        let d = self.dim;
        let n = self.grid.intervals;
        let mut b = vec![C64::new(0.0, 0.0); (n + 1) * d];
        for i in 0..n {
            for a in 0..d {
                b[d + i * d + a] = 0.5 * (v.values[i * d + a] + v.values[(i + 1) * d + a]);
            }
        }
        b
    }

    fn check(&self, v: &GridFunction) -> Result<()> {
        if v.dim != self.dim || v.grid.len() != self.grid.len() {
            return Err(Error::Dimension(format!(
                "rhs has dim {} on {} nodes, system has dim {} on {} nodes",
                v.dim,
                v.grid.len(),
                self.dim,
                self.grid.len()
            )));
        }
        if v.values.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::NonFinite("right-hand side"));
        }
        Ok(())
    }

    /// `y = F_N(lambda)^{-1} v`.
    pub fn solve(&self, v: &GridFunction) -> Result<GridFunction> {
        self.check(v)?;
        let mut b = self.rhs_vector(v);
        self.lu.solve_in_place(&mut b);
        Ok(GridFunction {
            grid: self.grid,
            dim: self.dim,
            values: b,
        })
    }

    /// Applies the discrete operator; the result is in equation order (boundary rows first).
    pub fn apply(&self, y: &GridFunction) -> Vec<C64> {
        self.system.apply(&y.values)
    }

    /// Max-norm residual of `F_N y = v`, relative to `max |v|`.
    pub fn residual(&self, y: &GridFunction, v: &GridFunction) -> f64 {
        let r = self.apply(y);
        let b = self.rhs_vector(v);
        let err = r.iter().zip(&b).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        let scale = v.values.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1e-300);
        err / scale
    }
}

/// Solves `F_N(lambda) y_k = v_k` for every right-hand side.
pub fn solve_resolvent(system: &DiscreteSystem, rhs: &[GridFunction]) -> Result<Vec<GridFunction>> {
    rhs.iter().map(|v| system.solve(v)).collect()
}

/// One inverse-iteration step: `y = F_N(lambda)^{-1} v`, normalized to unit L2 norm.
pub fn inverse_iteration(
    pencil: &OdePencil,
    lambda: C64,
    grid: &Grid,
    bc: &BoundaryConditionSpec,
    probe: &GridFunction,
) -> Result<GridFunction> {
    let sys = discretize(pencil, lambda, grid, bc)?;
    let mut y = sys.solve(probe)?;
    let nrm = y.l2_norm();
    if nrm == 0.0 || !nrm.is_finite() {
        return Err(Error::NonFinite("inverse iteration"));
    }
    y.scale(C64::new(1.0 / nrm, 0.0));
    Ok(y)
}

/// `|F_N(lambda) y| / |y|` with `y` from one inverse-iteration step; an estimate of the
/// distance of `lambda` from the discrete spectrum.
pub fn residual_estimate(
    pencil: &OdePencil,
    lambda: C64,
    grid: &Grid,
    bc: &BoundaryConditionSpec,
    probe: &GridFunction,
) -> Result<f64> {
    let sys = match discretize(pencil, lambda, grid, bc) {
        Ok(s) => s,
        Err(Error::OnSpectrum { .. }) => return Ok(0.0),
        Err(e) => return Err(e),
    };
    let y = sys.solve(probe)?;
    let r = sys.apply(&y);
    let rn = r.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let yn = y.values.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    Ok(if yn > 0.0 { rn / yn } else { f64::INFINITY })
}

#[derive(Clone, Copy, Debug)]
pub struct NewtonOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            tolerance: 1e-12,
            max_iterations: 20,
        }
    }
}

/// Discrete eigenpair refined by Newton's method.
#[derive(Clone, Debug)]
pub struct RefinedEigenpair {
    pub lambda: C64,
    pub eigenfunction: GridFunction,
    pub residual: f64,
    pub iterations: usize,
}

/// Newton's method for `F_N(lambda) y = 0` with the normalization `<y0, y> = 1`.
///
/// The eigenvalue and the running normalization integral are carried as extra
/// constant/integrated components so the Jacobian stays block bidiagonal.
pub fn newton_eigenpair(
    pencil: &OdePencil,
    grid: &Grid,
    bc: &BoundaryConditionSpec,
    lambda0: C64,
    guess: &GridFunction,
    opts: NewtonOptions,
) -> Result<RefinedEigenpair> {
    let d = pencil.dim();
    let dd = d + 2;
    let n = grid.intervals;
    let h = grid.step();
    if guess.dim != d || guess.grid.len() != grid.len() {
        return Err(Error::Dimension("eigenfunction guess".into()));
    }
    let g0 = guess.l2_norm();
    if !(g0 > 0.0 && g0.is_finite()) {
        return Err(Error::NonFinite("eigenfunction guess"));
    }
    let ell: Vec<C64> = guess.values.iter().map(|z| z.conj() / (g0 * g0)).collect();
    let mut y = guess.values.clone();
    let mut lambda = lambda0;
    let mut theta: Vec<C64> = vec![C64::new(0.0, 0.0); n + 1];
    for i in 0..n {
        let s: C64 = (0..d)
            .map(|a| ell[i * d + a] * y[i * d + a] + ell[(i + 1) * d + a] * y[(i + 1) * d + a])
            .sum();
        theta[i + 1] = theta[i] + 0.5 * h * s;
    }
    let one = C64::new(1.0, 0.0);
    let zero = C64::new(0.0, 0.0);
    let mut residual = f64::INFINITY;
    for iter in 0..=opts.max_iterations {
        let bm = bc.matrices(pencil, lambda)?;
        let coeffs: Vec<CMat> = grid.nodes().map(|x| pencil.coefficient(lambda, x)).collect();
        let dcoeffs: Vec<CMat> = grid
            .nodes()
            .map(|x| pencil.coefficient_lambda_derivative(lambda, x))
            .collect();
        let yi = |i: usize| &y[i * d..(i + 1) * d];
        // residual in equation order
        let mut r = vec![zero; (n + 1) * dd];
        let bcm = bm.minus.matvec(yi(0));
        let bcp = bm.plus.matvec(yi(n));
        for a in 0..d {
            r[a] = bcm[a] + bcp[a];
        }
        r[d] = theta[0];
        r[d + 1] = theta[n] - one;
        for i in 0..n {
            let ay0 = coeffs[i].matvec(yi(i));
            let ay1 = coeffs[i + 1].matvec(yi(i + 1));
            let row = dd + i * dd;
            let mut s = zero;
            for a in 0..d {
                r[row + a] = yi(i + 1)[a] - yi(i)[a] - 0.5 * h * (ay1[a] + ay0[a]);
                s += ell[i * d + a] * yi(i)[a] + ell[(i + 1) * d + a] * yi(i + 1)[a];
            }
            r[row + d] = zero;
            r[row + d + 1] = theta[i + 1] - theta[i] - 0.5 * h * s;
        }
        residual = r.iter().map(|z| z.norm()).fold(0.0, f64::max);
        log::debug!("eigenpair newton iter {iter}: residual {residual:.3e}, lambda {lambda}");
        if residual < opts.tolerance {
            let mut ef = GridFunction {
                grid: *grid,
                dim: d,
                values: y,
            };
            let nrm = ef.l2_norm();
            ef.scale(C64::new(1.0 / nrm, 0.0));
            return Ok(RefinedEigenpair {
                lambda,
                eigenfunction: ef,
                residual,
                iterations: iter,
            });
        }
        if iter == opts.max_iterations {
            break;
        }
        let mut left = CMat::zeros(dd, dd);
        let mut right = CMat::zeros(dd, dd);
        left.set_block(0, 0, &bm.minus);
        right.set_block(0, 0, &bm.plus);
        left[(d, d + 1)] = one;
        right[(d + 1, d + 1)] = one;
        let mut lower = Vec::with_capacity(n);
        let mut upper = Vec::with_capacity(n);
        for i in 0..n {
            let mut lo = CMat::zeros(dd, dd);
            let mut up = CMat::zeros(dd, dd);
            let dy0 = dcoeffs[i].matvec(yi(i));
            let dy1 = dcoeffs[i + 1].matvec(yi(i + 1));
            for a in 0..d {
                for b in 0..d {
                    let id = if a == b { one } else { zero };
                    lo[(a, b)] = -id - 0.5 * h * coeffs[i][(a, b)];
                    up[(a, b)] = id - 0.5 * h * coeffs[i + 1][(a, b)];
                }
                lo[(a, d)] = -0.5 * h * dy0[a];
                up[(a, d)] = -0.5 * h * dy1[a];
                lo[(d + 1, a)] = -0.5 * h * ell[i * d + a];
                up[(d + 1, a)] = -0.5 * h * ell[(i + 1) * d + a];
            }
            lo[(d, d)] = -one;
            up[(d, d)] = one;
            lo[(d + 1, d + 1)] = -one;
            up[(d + 1, d + 1)] = one;
            lower.push(lo);
            upper.push(up);
        }
        let sys = BlockBidiagonal::new(left, right, lower, upper)?;
        let lu = sys.factor()?;
        for z in r.iter_mut() {
            *z = -*z;
        }
        lu.solve_in_place(&mut r);
        let mut dl = zero;
        for i in 0..=n {
            for a in 0..d {
                y[i * d + a] += r[i * dd + a];
            }
            dl += r[i * dd + d];
            theta[i] += r[i * dd + d + 1];
        }
        lambda += dl / (n + 1) as f64;
    }
    Err(Error::NoConvergence {
        what: "eigenpair Newton",
        iterations: opts.max_iterations,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(x: f64) -> C64 {
        C64::new(x, 0.0)
    }

    // -u'' + u - lambda u = f as y' = [[0,1],[1-lambda,0]] y - (0, f)
    fn helmholtz() -> OdePencil {
        OdePencil::constant_plus_perturbation(
            2,
            1,
            |lam| CMat::from_rows(&[vec![c(0.0), c(1.0)], vec![c(1.0) - lam, c(0.0)]]),
            |_| CMat::zeros(2, 2),
        )
    }

    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let n = n + n % 2;
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    // u(x) = (1/2mu) int exp(-mu |x - s|) f(s) ds
    fn green_oracle(mu: f64, x: f64) -> f64 {
        let f = |s: f64| (-s * s).exp();
        let left = simpson(|s| (-mu * (x - s)).exp() * f(s), -14.0, x, 40_000);
        let right = simpson(|s| (-mu * (s - x)).exp() * f(s), x, 14.0, 40_000);
        (left + right) / (2.0 * mu)
    }

    fn solve_gaussian(lambda: f64, step: f64, bc: &BoundaryConditionSpec) -> GridFunction {
        let p = helmholtz();
        let g = Grid::symmetric(30.0, step).unwrap();
        let sys = discretize(&p, c(lambda), &g, bc).unwrap();
        let v = GridFunction::sample(g, 2, |x| vec![c(0.0), c((-x * x).exp())]);
        let y = sys.solve(&v).unwrap();
        assert!(sys.residual(&y, &v) < 1e-12);
        y
    }

    #[test]
    fn grid_indexing() {
        let g = Grid::new(-2.0, 2.0, 0.01).unwrap();
        assert_eq!(g.intervals, 400);
        assert_eq!(g.index_of(-2.0), Some(0));
        assert_eq!(g.index_of(0.37), Some(237));
        assert_eq!(g.index_of(0.375), None);
        assert_eq!(g.index_of(2.5), None);
        assert!(Grid::new(0.0, 1.0, 0.3).is_err());
        assert!(Grid::new(1.0, 0.0, 0.1).is_err());
    }

    #[test]
    fn resolvent_matches_green_function() {
        let lambda = 0.19;
        let mu = (1.0f64 - lambda).sqrt();
        let y = solve_gaussian(lambda, 0.005, &BoundaryConditionSpec::Projection);
        for x in [-3.0, -0.5, 0.0, 1.25] {
            let i = y.grid.index_of(x).unwrap();
            let got = y.at(i)[0];
            let want = green_oracle(mu, x);
            assert!((got.re - want).abs() < 2e-5 * want.abs(), "x={x}: {got} vs {want}");
            assert!(got.im.abs() < 1e-14);
        }
    }

    #[test]
    fn second_order_convergence() {
        let lambda = -0.7;
        let mu = (1.0f64 - lambda).sqrt();
        let want = green_oracle(mu, 0.6);
        let err = |h: f64| {
            let y = solve_gaussian(lambda, h, &BoundaryConditionSpec::Projection);
            (y.at(y.grid.index_of(0.6).unwrap())[0].re - want).abs()
        };
        let (e1, e2) = (err(0.04), err(0.02));
        let order = (e1 / e2).log2();
        assert!((order - 2.0).abs() < 0.15, "order {order}");
    }

    #[test]
    fn projection_rows_are_basis_independent() {
        let p = helmholtz();
        let lam = C64::new(0.3, 0.4);
        let base = BoundaryConditionSpec::Projection.matrices(&p, lam).unwrap();
        let t = CMat::from_rows(&[vec![C64::new(2.0, 1.0), c(0.5)], vec![c(-1.0), C64::new(0.0, 3.0)]]);
        let mixed = BoundaryMatrices {
            minus: t.matmul(&base.minus),
            plus: t.matmul(&base.plus),
        };
        let g = Grid::symmetric(20.0, 0.02).unwrap();
        let v = GridFunction::sample(g, 2, |x| vec![c(0.0), c((-x * x).exp())]);
        let y1 = discretize(&p, lam, &g, &BoundaryConditionSpec::Projection)
            .unwrap()
            .solve(&v)
            .unwrap();
        let y2 = discretize_with(&p, lam, &g, mixed).unwrap().solve(&v).unwrap();
        let diff = y1.values.iter().zip(&y2.values).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(diff < 1e-12, "{diff}");
        let s = asymptotic_splitting(&p, lam).unwrap();
        assert!(base.determinant_condition(&s).norm() > 1e-3);
    }

    #[test]
    fn on_spectrum_node_is_flagged() {
        // periodic BCs on [-L/2, L/2] with A = [[0,1],[-1,0]] have a kernel (cos, sin) for L = 2 pi
        let p = OdePencil::constant_plus_perturbation(
            2,
            1,
            |lam| CMat::from_rows(&[vec![c(0.0), c(1.0)], vec![lam, c(0.0)]]),
            |_| CMat::zeros(2, 2),
        );
        let g = Grid::new(0.0, 2.0, 1.0).unwrap();
        let boundary = BoundaryMatrices {
            minus: CMat::identity(2),
            plus: CMat::identity(2).scale(c(-1.0)),
        };
        // lambda = 0: y' = (y2, 0) has constant solutions, so the periodic system is singular
        let err = discretize_with(&p, c(0.0), &g, boundary).unwrap_err();
        assert!(matches!(err, Error::OnSpectrum { .. }));
    }

    #[test]
    fn rejects_mismatched_rhs() {
        let p = helmholtz();
        let g = Grid::symmetric(4.0, 0.1).unwrap();
        let sys = discretize(&p, c(0.0), &g, &BoundaryConditionSpec::Periodic).unwrap();
        let bad = GridFunction::zeros(g, 3);
        assert!(sys.solve(&bad).is_err());
        let mut nan = GridFunction::zeros(g, 2);
        nan.values[3] = C64::new(f64::NAN, 0.0);
        assert!(matches!(sys.solve(&nan), Err(Error::NonFinite(_))));
    }

    #[test]
    fn csv_layout() {
        let g = Grid::new(0.0, 1.0, 0.5).unwrap();
        let f = GridFunction::sample(g, 2, |x| vec![C64::new(x, 1.0), c(2.0)]);
        let mut out = Vec::new();
        f.write_csv(&mut out).unwrap();
        let s = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "x,re_y1,re_y2,im_y1,im_y2");
        assert_eq!(lines.len(), 4);
        let fields: Vec<f64> = lines[2].split(',').map(|t| t.parse().unwrap()).collect();
        assert_eq!(fields, vec![0.5, 0.5, 2.0, 1.0, 0.0]);
    }

    #[test]
    fn newton_finds_bound_state() {
        // -u'' - 2 sech^2 u = lambda u has lambda = -1 with u = sech
        let p = OdePencil::new(
            2,
            1,
            |lam, x| {
                let v = -2.0 / x.cosh().powi(2);
                CMat::from_rows(&[vec![c(0.0), c(1.0)], vec![c(v) - lam, c(0.0)]])
            },
            |lam| CMat::from_rows(&[vec![c(0.0), c(1.0)], vec![-lam, c(0.0)]]),
            |lam| CMat::from_rows(&[vec![c(0.0), c(1.0)], vec![-lam, c(0.0)]]),
        );
        let g = Grid::symmetric(30.0, 0.02).unwrap();
        let bc = BoundaryConditionSpec::Projection;
        let guess = GridFunction::sample(g, 2, |x| vec![c(1.0 / (0.9 * x).cosh()), c(0.0)]);
        let r = newton_eigenpair(&p, &g, &bc, c(-0.9), &guess, NewtonOptions::default()).unwrap();
        assert!(r.residual < 1e-12);
        assert!((r.lambda + 1.0).norm() < 1e-4, "{}", r.lambda);
        // discrete eigenvalue is exactly singular for F_N
        let probe = GridFunction::sample(g, 2, |x| vec![c((-(x - 0.3).powi(2)).exp()), c(1.0 / (x + 1.0).cosh())]);
        let est = residual_estimate(&p, r.lambda, &g, &bc, &probe).unwrap();
        let far = residual_estimate(&p, c(-0.5), &g, &bc, &probe).unwrap();
        assert!(est < 1e-8 * far, "{est} vs {far}");
    }
}
