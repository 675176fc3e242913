//! Holomorphic operator pencils: finite matrix pencils and first-order ODE pencils
//! `F(lambda) y = -y' + A(lambda, x) y`.

use crate::error::{Error, Result};
use crate::numkernel::{reorder_schur, schur, Lu};
use crate::{CMat, C64};
use std::fmt;
use std::sync::Arc;

pub type MatrixFn = Arc<dyn Fn(C64) -> CMat + Send + Sync>;
pub type CoefficientFn = Arc<dyn Fn(C64, f64) -> CMat + Send + Sync>;

/// `lambda -> F(lambda)` on `C^n`.
#[derive(Clone)]
pub struct MatrixPencil {
    dim: usize,
    eval: MatrixFn,
}

impl fmt::Debug for MatrixPencil {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MatrixPencil").field("dim", &self.dim).finish()
    }
}

impl MatrixPencil {
    pub fn new(dim: usize, eval: impl Fn(C64) -> CMat + Send + Sync + 'static) -> Self {
        MatrixPencil {
            dim,
            eval: Arc::new(eval),
        }
    }

    /// `F(lambda) = sum_k lambda^k C_k`.
    pub fn polynomial(coefficients: Vec<CMat>) -> Result<Self> {
        let dim = coefficients
            .first()
            .ok_or_else(|| Error::Config("polynomial pencil needs coefficients".into()))?
            .rows();
        if coefficients.iter().any(|c| c.shape() != (dim, dim)) {
            return Err(Error::Dimension("polynomial pencil coefficients".into()));
        }
        Ok(Self::new(dim, move |lam| {
            let mut acc = CMat::zeros(dim, dim);
            for c in coefficients.iter().rev() {
                acc = &acc.scale(lam) + c;
            }
            acc
        }))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self, lambda: C64) -> CMat {
        (self.eval)(lambda)
    }

    pub fn evaluate(&self, lambda: C64) -> Result<EvaluatedOperator> {
        if !(lambda.re.is_finite() && lambda.im.is_finite()) {
            return Err(Error::NonFinite("lambda"));
        }
        let m = self.matrix(lambda);
        let lu = Lu::new(&m)?;
        if lu.is_singular() {
            return Err(Error::OnSpectrum { lambda });
        }
        Ok(EvaluatedOperator { lambda, lu })
    }
}

/// Factorized `F(lambda)` at one node.
#[derive(Clone, Debug)]
pub struct EvaluatedOperator {
    pub lambda: C64,
    lu: Lu<f64>,
}

impl EvaluatedOperator {
    pub fn solve(&self, v: &CMat) -> Result<CMat> {
        self.lu.solve(v)
    }
}

/// First-order ODE pencil on the line with hyperbolic asymptotic matrices `A_pm(lambda)`.
#[derive(Clone)]
pub struct OdePencil {
    dim: usize,
    stable_dim: usize,
    coefficient: CoefficientFn,
    minus: MatrixFn,
    plus: MatrixFn,
    lambda_derivative: Option<CoefficientFn>,
}

impl fmt::Debug for OdePencil {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OdePencil")
            .field("dim", &self.dim)
            .field("stable_dim", &self.stable_dim)
            .finish()
    }
}

impl OdePencil {
    /// `stable_dim` is `k = dim E^s(A_+) = dim E^s(A_-)` on the region of interest.
    pub fn new(
        dim: usize,
        stable_dim: usize,
        coefficient: impl Fn(C64, f64) -> CMat + Send + Sync + 'static,
        minus: impl Fn(C64) -> CMat + Send + Sync + 'static,
        plus: impl Fn(C64) -> CMat + Send + Sync + 'static,
    ) -> Self {
        OdePencil {
            dim,
            stable_dim,
            coefficient: Arc::new(coefficient),
            minus: Arc::new(minus),
            plus: Arc::new(plus),
            lambda_derivative: None,
        }
    }

    /// `A(lambda, x) = A_inf(lambda) + B(x)` with `B` decaying at both ends.
    pub fn constant_plus_perturbation(
        dim: usize,
        stable_dim: usize,
        a_inf: impl Fn(C64) -> CMat + Send + Sync + 'static,
        b: impl Fn(f64) -> CMat + Send + Sync + 'static,
    ) -> Self {
        let a_inf: MatrixFn = Arc::new(a_inf);
        let (a1, a2, a3) = (a_inf.clone(), a_inf.clone(), a_inf);
        Self::new(
            dim,
            stable_dim,
            move |lam, x| &a1(lam) + &b(x),
            move |lam| a2(lam),
            move |lam| a3(lam),
        )
    }

    /// Supplies `dA/dlambda`; otherwise a central difference is used.
    pub fn with_lambda_derivative(
        mut self,
        d: impl Fn(C64, f64) -> CMat + Send + Sync + 'static,
    ) -> Self {
        self.lambda_derivative = Some(Arc::new(d));
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn stable_dim(&self) -> usize {
        self.stable_dim
    }

    pub fn coefficient(&self, lambda: C64, x: f64) -> CMat {
        (self.coefficient)(lambda, x)
    }

    pub fn coefficient_fn(&self) -> CoefficientFn {
        self.coefficient.clone()
    }

    pub fn coefficient_lambda_derivative(&self, lambda: C64, x: f64) -> CMat {
        match &self.lambda_derivative {
            Some(d) => d(lambda, x),
            None => {
                let h = 1e-6 * (1.0 + lambda.norm());
                let hp = C64::new(h, 0.0);
                let diff = &self.coefficient(lambda + hp, x) - &self.coefficient(lambda - hp, x);
                diff.scale(C64::new(0.5 / h, 0.0))
            }
        }
    }

    pub fn asymptotic_minus(&self, lambda: C64) -> CMat {
        (self.minus)(lambda)
    }

    pub fn asymptotic_plus(&self, lambda: C64) -> CMat {
        (self.plus)(lambda)
    }

    /// Largest deviation `|A(lambda, x) - A_pm(lambda)|` at `x = -+ x_far`.
    pub fn asymptotic_mismatch(&self, lambda: C64, x_far: f64) -> f64 {
        let dm = (&self.coefficient(lambda, -x_far) - &self.asymptotic_minus(lambda)).norm_max();
        let dp = (&self.coefficient(lambda, x_far) - &self.asymptotic_plus(lambda)).norm_max();
        dm.max(dp)
    }
}

/// Orthonormal bases of the stable/unstable eigenspaces of `A_-` and `A_+`.
#[derive(Clone, Debug)]
pub struct AsymptoticSplitting {
    pub lambda: C64,
    pub stable_minus: CMat,
    pub unstable_minus: CMat,
    pub stable_plus: CMat,
    pub unstable_plus: CMat,
    pub eigenvalues_minus: Vec<C64>,
    pub eigenvalues_plus: Vec<C64>,
    /// `min |Re mu|` over both ends.
    pub gap: f64,
}

/// Default hyperbolicity tolerance on `|Re mu|`.
pub const TOL_HYP: f64 = 1e-8;

/// Stable and unstable invariant subspaces of a hyperbolic matrix, via reordered Schur forms.
pub fn invariant_subspaces(a: &CMat, tol_hyp: f64) -> Result<(CMat, CMat, Vec<C64>, f64)> {
    let base = schur(a)?;
    let evals = base.eigenvalues();
    let gap = evals.iter().map(|z| z.re.abs()).fold(f64::INFINITY, f64::min);
    let scale = 1.0f64.max(a.norm_max());
    if gap < tol_hyp * scale {
        return Err(Error::EssentialSpectrum {
            lambda: C64::new(f64::NAN, f64::NAN),
            gap,
        });
    }
    let k = evals.iter().filter(|z| z.re < 0.0).count();
    let d = a.rows();
    let mut s1 = base.clone();
    reorder_schur(&mut s1, |z| z.re < 0.0);
    let mut s2 = base;
    reorder_schur(&mut s2, |z| z.re > 0.0);
    Ok((s1.z.columns(0, k), s2.z.columns(0, d - k), evals, gap))
}

/// Splitting of `C^d` at both ends for a given `lambda`.
pub fn asymptotic_splitting(pencil: &OdePencil, lambda: C64) -> Result<AsymptoticSplitting> {
    asymptotic_splitting_tol(pencil, lambda, TOL_HYP)
}

pub fn asymptotic_splitting_tol(
    pencil: &OdePencil,
    lambda: C64,
    tol_hyp: f64,
) -> Result<AsymptoticSplitting> {
    let fix = |e: Error| match e {
        Error::EssentialSpectrum { gap, .. } => Error::EssentialSpectrum { lambda, gap },
        other => other,
    };
    let (sm, um, em, gm) = invariant_subspaces(&pencil.asymptotic_minus(lambda), tol_hyp).map_err(fix)?;
    let (sp, up, ep, gp) = invariant_subspaces(&pencil.asymptotic_plus(lambda), tol_hyp).map_err(fix)?;
    let k = pencil.stable_dim();
    for found in [sm.cols(), sp.cols()] {
        if found != k {
            return Err(Error::Splitting {
                lambda,
                expected: k,
                found,
            });
        }
    }
    Ok(AsymptoticSplitting {
        lambda,
        stable_minus: sm,
        unstable_minus: um,
        stable_plus: sp,
        unstable_plus: up,
        eigenvalues_minus: em,
        eigenvalues_plus: ep,
        gap: gm.min(gp),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    #[test]
    fn polynomial_pencil_solves() {
        // F(lambda) = lambda I - diag(1, 2)
        let p = MatrixPencil::polynomial(vec![
            CMat::diag(&[c(-1.0), c(-2.0)]),
            CMat::identity(2),
        ])
        .unwrap();
        let op = p.evaluate(c(3.0)).unwrap();
        let x = op.solve(&CMat::identity(2)).unwrap();
        assert!((x[(0, 0)] - c(0.5)).norm() < 1e-15);
        assert!((x[(1, 1)] - c(1.0)).norm() < 1e-15);
        assert!(matches!(p.evaluate(c(2.0)), Err(Error::OnSpectrum { .. })));
    }

    #[test]
    fn splitting_of_constant_system() {
        // y' = [[0,1],[1+lambda,0]] y: mu = +-sqrt(1+lambda)
        let p = OdePencil::constant_plus_perturbation(
            2,
            1,
            |lam| CMat::from_rows(&[vec![c(0.0), c(1.0)], vec![lam + 1.0, c(0.0)]]),
            |_| CMat::zeros(2, 2),
        );
        let s = asymptotic_splitting(&p, c(3.0)).unwrap();
        assert!((s.gap - 2.0).abs() < 1e-12);
        let a = p.asymptotic_plus(c(3.0));
        let v = &s.stable_plus;
        let av = a.matmul(v);
        // eigenvector of -2
        assert!((&av - &v.scale(c(-2.0))).norm_fro() < 1e-12);
        let u = &s.unstable_minus;
        assert!((&a.matmul(u) - &u.scale(c(2.0))).norm_fro() < 1e-12);
    }

    #[test]
    fn splitting_rejects_essential_spectrum() {
        let p = OdePencil::constant_plus_perturbation(
            2,
            1,
            |lam| CMat::from_rows(&[vec![c(0.0), c(1.0)], vec![lam, c(0.0)]]),
            |_| CMat::zeros(2, 2),
        );
        // lambda = -1: mu = +-i, on the essential spectrum
        let err = asymptotic_splitting(&p, c(-1.0)).unwrap_err();
        assert!(matches!(err, Error::EssentialSpectrum { .. }));
    }

    #[test]
    fn lambda_derivative_fallback() {
        let p = OdePencil::constant_plus_perturbation(
            2,
            1,
            |lam| CMat::from_rows(&[vec![c(0.0), c(1.0)], vec![lam * lam, c(0.0)]]),
            |_| CMat::zeros(2, 2),
        );
        let lam = C64::new(0.3, 0.7);
        let d = p.coefficient_lambda_derivative(lam, 0.0);
        assert!((d[(1, 0)] - lam * 2.0).norm() < 1e-8);
    }
}
