//! Eigenvalues, multiplicities and eigenfunctions from moment matrices.

use crate::bvp::{residual_estimate, BoundaryConditionSpec, Grid, GridFunction};
use crate::contour::{
    assemble_samples, moments_about, pair, CompiledFunctional, CompiledTestData, Contour, MomentSet, SampleSet,
    TestData,
};
use crate::error::{Error, Result};
use crate::numkernel::{eig, svd, Lu};
use crate::pencil::{MatrixPencil, OdePencil};
use crate::{CMat, C64};
use serde::Serialize;

/// `kappa` from `sigma_1 >= ... >= sigma_kappa >= theta sigma_1 > sigma_{kappa+1}`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankDecision {
    pub theta: f64,
    pub kappa: usize,
    pub singular_values: Vec<f64>,
    /// `sigma_kappa / sigma_{kappa+1}` when both exist.
    pub gap_ratio: Option<f64>,
}

pub fn rank_test(singular_values: &[f64], theta: f64) -> RankDecision {
    let s1 = singular_values.first().copied().unwrap_or(0.0);
    let kappa = if s1 > 0.0 {
        singular_values.iter().take_while(|&&s| s >= theta * s1).count()
    } else {
        0
    };
    decision(singular_values, theta, kappa)
}

fn decision(sv: &[f64], theta: f64, kappa: usize) -> RankDecision {
    let gap_ratio = (kappa >= 1 && kappa < sv.len()).then(|| sv[kappa - 1] / sv[kappa]);
    RankDecision {
        theta,
        kappa,
        singular_values: sv.to_vec(),
        gap_ratio,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RankRule {
    Threshold(f64),
    Fixed(usize),
}

impl Default for RankRule {
    fn default() -> Self {
        RankRule::Threshold(1e-8)
    }
}

/// Cluster of eigenvalues of the projected matrix, read as one eigenvalue of that algebraic multiplicity.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct JordanCluster {
    pub eigenvalue: [f64; 2],
    pub multiplicity: usize,
}

#[derive(Clone, Debug)]
pub struct SpectrumResult {
    pub eigenvalues: Vec<C64>,
    /// `G_l = V_0 S`, one column per eigenvalue.
    pub coefficients: CMat,
    /// Projected matrix `D = V_0^* D_1 W_0 Sigma_0^{-1}` in the (possibly shifted) moment variable.
    pub projected: CMat,
    pub rank: RankDecision,
    pub eigenfunctions: Vec<GridFunction>,
    pub residuals: Vec<f64>,
    pub inside: Vec<bool>,
    /// Present for the block-Hankel variant.
    pub jordan: Option<Vec<JordanCluster>>,
    pub warnings: Vec<String>,
}

impl SpectrumResult {
    pub fn kappa(&self) -> usize {
        self.rank.kappa
    }

    pub fn interior(&self) -> Vec<C64> {
        self.eigenvalues
            .iter()
            .zip(&self.inside)
            .filter(|p| *p.1)
            .map(|p| *p.0)
            .collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "eigenvalues": self.eigenvalues.iter().map(|&z| pair(z)).collect::<Vec<_>>(),
            "residuals": self.residuals,
            "inside": self.inside,
            "kappa": self.rank.kappa,
            "theta": self.rank.theta,
            "singular_values": self.rank.singular_values,
            "gap_ratio": self.rank.gap_ratio,
            "jordan": self.jordan,
            "warnings": self.warnings,
        })
    }
}

/// With a threshold rule, `floor` is the size of the samples that produced `b0`:
/// if `sigma_1 < theta * floor` the moments are quadrature noise and `kappa = 0`.
fn project(b0: &CMat, b1: &CMat, rule: RankRule, gl_rows: usize, floor: f64) -> Result<(SpectrumResult, CMat)> {
    if b0.shape() != b1.shape() {
        return Err(Error::Dimension("moment matrices differ in shape".into()));
    }
    let s = svd(b0)?;
    let rank = match rule {
        RankRule::Threshold(theta) if s.sigma.first().is_some_and(|&s1| s1 < theta * floor) => {
            decision(&s.sigma, theta, 0)
        }
        RankRule::Threshold(theta) => rank_test(&s.sigma, theta),
        RankRule::Fixed(k) => {
            if k > s.sigma.len() {
                return Err(Error::Config(format!(
                    "requested kappa = {k} exceeds min(m, l) = {}",
                    s.sigma.len()
                )));
            }
            decision(&s.sigma, f64::NAN, k)
        }
    };
    let k = rank.kappa;
    let mut warnings = Vec::new();
    if k == 0 {
        let empty = SpectrumResult {
            eigenvalues: vec![],
            coefficients: CMat::zeros(gl_rows, 0),
            projected: CMat::zeros(0, 0),
            rank,
            eigenfunctions: vec![],
            residuals: vec![],
            inside: vec![],
            jordan: None,
            warnings,
        };
        return Ok((empty, CMat::zeros(0, 0)));
    }
    let s1 = s.sigma[0];
    if s.sigma[k - 1] < 1e3 * f64::EPSILON * s1 {
        warnings.push(format!(
            "sigma_{k} = {:.3e} is below 1e3 eps sigma_1; projected matrix is ill-conditioned",
            s.sigma[k - 1]
        ));
    }
    let v0 = s.u.columns(0, k);
    let w0 = s.v.columns(0, k);
    let mut d = v0.adjoint().matmul(b1).matmul(&w0);
    for j in 0..k {
        let inv = 1.0 / s.sigma[j];
        for i in 0..k {
            d[(i, j)] *= inv;
        }
    }
    let e = eig(&d)?;
    let gl = v0.matmul(&e.vectors).row_block(0, gl_rows);
    let n = e.values.len();
    let result = SpectrumResult {
        eigenvalues: e.values,
        coefficients: gl,
        projected: d.clone(),
        rank,
        eigenfunctions: vec![],
        residuals: vec![f64::NAN; n],
        inside: vec![true; n],
        jordan: None,
        warnings,
    };
    Ok((result, d))
}

/// Single-moment-pair extraction from `D_0`, `D_1`.
pub fn eigs_simple(d0: &CMat, d1: &CMat, rule: RankRule) -> Result<SpectrumResult> {
    Ok(project(d0, d1, rule, d0.rows(), 0.0)?.0)
}

/// Block-Hankel extraction from `D_0..D_{2K-1}`; eigenvalues are mapped back from the
/// moment variable, and clusters closer than `cluster_tol` are reported as one
/// eigenvalue with multiplicity.
pub fn eigs_hankel(ms: &MomentSet, k: usize, rule: RankRule, cluster_tol: f64) -> Result<SpectrumResult> {
    if k == 0 || ms.moments.len() < 2 * k {
        return Err(Error::Config(format!(
            "block-Hankel with K = {k} needs {} moments, have {}",
            2 * k,
            ms.moments.len()
        )));
    }
    let (m, l) = ms.moments[0].shape();
    let (b0, b1) = if k == 1 {
        (ms.moments[0].clone(), ms.moments[1].clone())
    } else {
        let mut b0 = CMat::zeros(m * k, l * k);
        let mut b1 = CMat::zeros(m * k, l * k);
        for i in 0..k {
            for j in 0..k {
                b0.set_block(i * m, j * l, &ms.moments[i + j]);
                b1.set_block(i * m, j * l, &ms.moments[i + j + 1]);
            }
        }
        (b0, b1)
    };
    let (mut r, _) = project(&b0, &b1, rule, m, ms.noise_bound)?;
    for z in r.eigenvalues.iter_mut() {
        *z = ms.center + *z * ms.scale;
    }
    r.jordan = Some(cluster(&r.eigenvalues, cluster_tol));
    Ok(r)
}

fn cluster(values: &[C64], tol: f64) -> Vec<JordanCluster> {
    let n = values.len();
    let mut label: Vec<usize> = (0..n).collect();
    fn root(l: &mut [usize], mut i: usize) -> usize {
        while l[i] != i {
            l[i] = l[l[i]];
            i = l[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            if (values[i] - values[j]).norm() <= tol {
                let (a, b) = (root(&mut label, i), root(&mut label, j));
                label[a.max(b)] = a.min(b);
            }
        }
    }
    let mut groups: Vec<(usize, Vec<C64>)> = Vec::new();
    for i in 0..n {
        let r = root(&mut label, i);
        match groups.iter_mut().find(|g| g.0 == r) {
            Some(g) => g.1.push(values[i]),
            None => groups.push((r, vec![values[i]])),
        }
    }
    groups
        .into_iter()
        .map(|(_, vs)| JordanCluster {
            eigenvalue: pair(vs.iter().sum::<C64>() / vs.len() as f64),
            multiplicity: vs.len(),
        })
        .collect()
}

/// Functions `u_j` used to rebuild eigenfunctions from `G_l`.
#[derive(Clone, Debug)]
pub enum BasisFunction {
    /// Nodal hat: 1 at one flattened (node, component) index, 0 at all other nodes.
    Node { index: usize },
    Sampled(GridFunction),
}

#[derive(Clone, Debug)]
pub struct ReconstructionBasis {
    pub functions: Vec<BasisFunction>,
}

impl ReconstructionBasis {
    /// Hats at the nodes of point functionals; biorthogonal to them by construction.
    pub fn hats_for_points(test: &CompiledTestData) -> Result<Self> {
        let functions = test
            .functionals
            .iter()
            .map(|f| match f {
                CompiledFunctional::Node { index } => Ok(BasisFunction::Node { index: *index }),
                CompiledFunctional::Weights(_) => Err(Error::DegenerateBasis(
                    "nodal hats need point functionals".into(),
                )),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ReconstructionBasis { functions })
    }
}

/// `v_n = sum_j beta_jn u_j` with `<w_k, u_j> beta = G_l`, normalized to unit L2 norm and
/// rotated so the largest entry is real positive.
pub fn reconstruct_eigenfunctions(
    gl: &CMat,
    test: &CompiledTestData,
    basis: &ReconstructionBasis,
    dim: usize,
) -> Result<Vec<GridFunction>> {
    let m = test.functionals.len();
    if basis.functions.len() != m || gl.rows() != m {
        return Err(Error::Dimension(format!(
            "reconstruction: {} functionals, {} basis functions, G_l has {} rows",
            m,
            basis.functions.len(),
            gl.rows()
        )));
    }
    let grid = test.grid;
    let len = grid.len() * dim;
    let pairing = |f: &CompiledFunctional, u: &BasisFunction| -> C64 {
        match (f, u) {
            (CompiledFunctional::Node { index: a }, BasisFunction::Node { index: b }) => {
                if a == b {
                    C64::new(1.0, 0.0)
                } else {
                    C64::new(0.0, 0.0)
                }
            }
            (CompiledFunctional::Weights(w), BasisFunction::Node { index }) => w[*index],
            (f, BasisFunction::Sampled(g)) => f.apply(g),
        }
    };
    let gram = CMat::from_fn(m, m, |k, j| pairing(&test.functionals[k], &basis.functions[j]));
    let beta = if gram == CMat::identity(m) {
        gl.clone()
    } else {
        let lu = Lu::new(&gram)?;
        if lu.is_singular() || lu.pivot_ratio() < 1e-13 {
            return Err(Error::DegenerateBasis("singular Gram matrix <w_k, u_j>".into()));
        }
        lu.solve(gl)?
    };
    let mut out = Vec::with_capacity(gl.cols());
    for n in 0..gl.cols() {
        let mut values = vec![C64::new(0.0, 0.0); len];
        for (j, u) in basis.functions.iter().enumerate() {
            let b = beta[(j, n)];
            match u {
                BasisFunction::Node { index } => values[*index] += b,
                BasisFunction::Sampled(g) => {
                    for (v, &x) in values.iter_mut().zip(&g.values) {
                        *v += b * x;
                    }
                }
            }
        }
        let mut f = GridFunction { grid, dim, values };
        normalize(&mut f)?;
        out.push(f);
    }
    Ok(out)
}

/// Unit L2 norm, largest-modulus entry real positive.
pub fn normalize(f: &mut GridFunction) -> Result<()> {
    let nrm = f.l2_norm();
    if !(nrm > 0.0 && nrm.is_finite()) {
        return Err(Error::DegenerateBasis("eigenfunction vanishes".into()));
    }
    let big = f
        .values
        .iter()
        .copied()
        .max_by(|a, b| a.norm().partial_cmp(&b.norm()).unwrap_or(std::cmp::Ordering::Equal))
        .unwrap_or(C64::new(1.0, 0.0));
    let ph = big.conj() / big.norm();
    f.scale(ph / nrm);
    Ok(())
}

/// Angle between two vectors, insensitive to a complex scalar factor.
pub fn angle_between(a: &[C64], b: &[C64]) -> f64 {
    let bb: f64 = b.iter().map(|z| z.norm_sqr()).sum();
    let aa: f64 = a.iter().map(|z| z.norm_sqr()).sum();
    if aa == 0.0 || bb == 0.0 {
        return std::f64::consts::FRAC_PI_2;
    }
    let ba: C64 = b.iter().zip(a).map(|(x, y)| x.conj() * y).sum();
    let coef = ba / bb;
    let perp: f64 = a.iter().zip(b).map(|(x, y)| (x - coef * y).norm_sqr()).sum();
    let along = coef.norm() * bb.sqrt();
    perp.sqrt().atan2(along)
}

/// Flags inside/outside, computes residuals and sorts by distance from the contour center.
pub fn filter_and_diagnose(
    mut result: SpectrumResult,
    contour: &Contour,
    residual: impl Fn(C64) -> Result<f64>,
) -> Result<SpectrumResult> {
    let center = contour.center();
    let n = result.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let da = (result.eigenvalues[a] - center).norm();
        let db = (result.eigenvalues[b] - center).norm();
        da.partial_cmp(&db).unwrap_or(std::cmp::Ordering::Equal)
    });
    let eigenvalues: Vec<C64> = order.iter().map(|&i| result.eigenvalues[i]).collect();
    let coefficients = CMat::from_fn(result.coefficients.rows(), n, |r, j| result.coefficients[(r, order[j])]);
    if result.eigenfunctions.len() == n {
        let old = std::mem::take(&mut result.eigenfunctions);
        result.eigenfunctions = order.iter().map(|&i| old[i].clone()).collect();
    }
    let mut residuals = Vec::with_capacity(n);
    for &l in &eigenvalues {
        match residual(l) {
            Ok(r) => residuals.push(r),
            Err(e) if !contour.contains(l) => {
                result.warnings.push(format!("no residual at exterior eigenvalue {l}: {e}"));
                residuals.push(f64::NAN);
            }
            Err(e) => return Err(e),
        }
    }
    result.residuals = residuals;
    result.inside = eigenvalues.iter().map(|&l| contour.contains(l)).collect();
    result.eigenvalues = eigenvalues;
    result.coefficients = coefficients;
    Ok(result)
}

/// `|F(lambda) x| / |x|` with `x` from one inverse-iteration step on a fixed probe.
pub fn matrix_residual(pencil: &MatrixPencil, lambda: C64) -> Result<f64> {
    let n = pencil.dim();
    let probe = CMat::from_fn(n, 1, |i, _| C64::new(1.0 + 0.37 * i as f64, 0.11 * i as f64));
    let f = pencil.matrix(lambda);
    let lu = Lu::new(&f)?;
    if lu.is_singular() {
        return Ok(0.0);
    }
    let x = lu.solve(&probe)?;
    Ok(f.matmul(&x).norm_fro() / x.norm_fro())
}

/// Settings for [`contour_spectrum`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PipelineOptions {
    pub rule: RankRule,
    /// Block-Hankel depth `K`; 1 gives the single-moment method.
    pub blocks: usize,
    /// Clustering distance relative to the contour scale.
    pub cluster_tol: f64,
    pub reconstruct: bool,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            rule: RankRule::default(),
            blocks: 1,
            cluster_tol: 1e-6,
            reconstruct: true,
        }
    }
}

/// Fixed smooth probe used for residual estimates; generic with respect to any
/// particular eigenfunction.
pub fn generic_probe(grid: Grid, dim: usize) -> GridFunction {
    GridFunction::sample(grid, dim, |x| {
        let env = (-(x - 0.3).powi(2) / 8.0).exp();
        (0..dim)
            .map(|c| C64::new(1.0 + 0.37 * c as f64, 0.2 * x - 0.1 * c as f64) * env)
            .collect()
    })
}

/// Extraction, reconstruction and diagnostics for precomputed samples.
pub fn spectrum_from_samples(
    pencil: &OdePencil,
    grid: &Grid,
    bc: &BoundaryConditionSpec,
    test: &TestData,
    contour: &Contour,
    samples: &SampleSet,
    opts: &PipelineOptions,
) -> Result<SpectrumResult> {
    let ms = moments_about(samples, opts.blocks, contour.center(), contour.scale())?;
    let mut r = eigs_hankel(&ms, opts.blocks, opts.rule, opts.cluster_tol * contour.scale())?;
    if opts.blocks == 1 {
        r.jordan = None;
    }
    if opts.reconstruct && r.kappa() > 0 {
        let compiled = test.compile(grid)?;
        match ReconstructionBasis::hats_for_points(&compiled) {
            Ok(basis) => r.eigenfunctions = reconstruct_eigenfunctions(&r.coefficients, &compiled, &basis, pencil.dim())?,
            Err(_) => r
                .warnings
                .push("eigenfunctions not reconstructed: functionals are not point evaluations".into()),
        }
    }
    let probe = generic_probe(*grid, pencil.dim());
    filter_and_diagnose(r, contour, |l| residual_estimate(pencil, l, grid, bc, &probe))
}

/// Full contour pipeline on an ODE pencil: samples, moments, extraction, diagnostics.
pub fn contour_spectrum(
    pencil: &OdePencil,
    grid: &Grid,
    bc: &BoundaryConditionSpec,
    test: &TestData,
    contour: &Contour,
    opts: &PipelineOptions,
) -> Result<(SpectrumResult, SampleSet)> {
    let samples = assemble_samples(pencil, grid, bc, test, contour)?;
    let r = spectrum_from_samples(pencil, grid, bc, test, contour, &samples, opts)?;
    Ok((r, samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bvp::Grid;
    use crate::contour::{assemble_matrix_samples, moments, moments_about, Functional, TestData};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(x: f64) -> C64 {
        C64::new(x, 0.0)
    }

    fn random_mat(r: usize, k: usize, rng: &mut ChaCha8Rng) -> CMat {
        CMat::from_fn(r, k, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
    }

    fn hausdorff(a: &[C64], b: &[C64]) -> f64 {
        let d = |x: &[C64], y: &[C64]| {
            x.iter()
                .map(|p| y.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min))
                .fold(0.0, f64::max)
        };
        d(a, b).max(d(b, a))
    }

    #[test]
    fn rank_test_examples() {
        let table = [103.0, 89.0, 1.25, 0.276, 0.133, 0.079, 0.034, 0.0066, 0.0033, 0.00077];
        let r = rank_test(&table, 1e-8);
        assert_eq!(r.kappa, 10);
        assert_eq!(r.gap_ratio, None);
        let r2 = rank_test(&table, 0.05);
        assert_eq!(r2.kappa, 2);
        assert!((r2.gap_ratio.unwrap() - 71.2).abs() < 1e-12);
        assert_eq!(rank_test(&[1.0, 0.0, 0.0], 0.5).kappa, 1);
        assert_eq!(rank_test(&[1.0, 0.1, 0.01, 0.001], 0.05).kappa, 2);
        assert_eq!(rank_test(&[0.0, 0.0], 0.5).kappa, 0);
    }

    #[test]
    fn rank_one_projection() {
        let d0 = CMat::diag(&[c(1.0), c(0.0)]);
        let d1 = d0.scale(c(0.3));
        let r = eigs_simple(&d0, &d1, RankRule::Threshold(1e-8)).unwrap();
        assert_eq!(r.eigenvalues.len(), 1);
        assert!((r.eigenvalues[0] - 0.3).norm() < 1e-15);
        let empty = eigs_simple(&CMat::zeros(2, 2), &CMat::zeros(2, 2), RankRule::default()).unwrap();
        assert_eq!(empty.kappa(), 0);
    }

    #[test]
    fn synthetic_factors_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let gl = random_mat(6, 2, &mut rng);
        let gr = random_mat(6, 2, &mut rng);
        let lam = [c(0.5), C64::new(-0.2, 0.1)];
        let d0 = gl.matmul(&gr.transpose());
        let d1 = gl.matmul(&CMat::diag(&lam)).matmul(&gr.transpose());
        let r = eigs_simple(&d0, &d1, RankRule::Threshold(1e-8)).unwrap();
        assert_eq!(r.kappa(), 2);
        assert!(hausdorff(&r.eigenvalues, &lam) < 1e-12);
        // columns of G_l are eigenvector coefficients: parallel to the true factor columns
        for (n, &l) in r.eigenvalues.iter().enumerate() {
            let j = if (l - lam[0]).norm() < 1e-6 { 0 } else { 1 };
            assert!(angle_between(&r.coefficients.col(n), &gl.col(j)) < 1e-10);
        }
    }

    #[test]
    fn hankel_k1_is_simple() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let gl = random_mat(5, 3, &mut rng);
        let gr = random_mat(4, 3, &mut rng);
        let lam = CMat::diag(&[c(0.1), c(-0.4), C64::new(0.0, 0.3)]);
        let ms = MomentSet {
            moments: vec![gl.matmul(&gr.transpose()), gl.matmul(&lam).matmul(&gr.transpose())],
            center: c(0.0),
            scale: 1.0,
            noise_bound: 0.0,
        };
        let a = eigs_simple(&ms.moments[0], &ms.moments[1], RankRule::Threshold(1e-8)).unwrap();
        let b = eigs_hankel(&ms, 1, RankRule::Threshold(1e-8), 1e-6).unwrap();
        assert_eq!(a.eigenvalues, b.eigenvalues);
        assert_eq!(a.coefficients, b.coefficients);
    }

    fn probe_samples(p: &MatrixPencil, w: &CMat, v: &CMat) -> MomentSet {
        let g = Contour::circle(c(0.0), 1.0, 64).unwrap();
        moments(&assemble_matrix_samples(p, w, v, &g).unwrap(), 2).unwrap()
    }

    #[test]
    fn empty_contour_has_rank_zero() {
        // eigenvalues 3 and -4 lie outside the unit circle
        let a = CMat::diag(&[c(3.0), c(-4.0)]);
        let p = MatrixPencil::polynomial(vec![a.scale(c(-1.0)), CMat::identity(2)]).unwrap();
        let w = CMat::identity(2);
        let ms = probe_samples(&p, &w, &w);
        assert!(ms.moments[0].norm_fro() < 1e-14);
        let r = eigs_hankel(&ms, 1, RankRule::Threshold(1e-8), 1e-6).unwrap();
        assert_eq!(r.kappa(), 0);
        assert!(r.eigenvalues.is_empty());
    }

    #[test]
    fn nilpotent_pencil_needs_hankel() {
        // F = lambda I - N: resolvent lambda^{-1} I + lambda^{-2} N
        let n = CMat::from_rows(&[vec![c(0.0), c(1.0)], vec![c(0.0), c(0.0)]]);
        let p = MatrixPencil::polynomial(vec![n.scale(c(-1.0)), CMat::identity(2)]).unwrap();
        let w = CMat::column_vector(&[c(0.7), c(-1.3)]);
        let v = CMat::column_vector(&[c(0.4), c(2.1)]);
        let ms = probe_samples(&p, &w, &v);
        let simple = eigs_simple(&ms.moments[0], &ms.moments[1], RankRule::Threshold(1e-8)).unwrap();
        assert_eq!(simple.kappa(), 1, "single probe sees rank one only");
        let h = eigs_hankel(&ms, 2, RankRule::Threshold(1e-8), 1e-6).unwrap();
        assert_eq!(h.kappa(), 2);
        assert!(h.eigenvalues.iter().all(|z| z.norm() < 1e-6));
        let j = h.jordan.unwrap();
        assert_eq!(j.len(), 1);
        assert_eq!(j[0].multiplicity, 2);
    }

    #[test]
    fn shared_eigenvector_needs_hankel() {
        // 1x1 pencil (lambda - a)(lambda - b): both eigenvectors are e_1
        let (a, b) = (c(0.3), C64::new(-0.2, 0.4));
        let p = MatrixPencil::polynomial(vec![
            CMat::from_fn(1, 1, |_, _| a * b),
            CMat::from_fn(1, 1, |_, _| -(a + b)),
            CMat::identity(1),
        ])
        .unwrap();
        let e = CMat::identity(1);
        let ms = probe_samples(&p, &e, &e);
        let simple = eigs_simple(&ms.moments[0], &ms.moments[1], RankRule::Threshold(1e-8)).unwrap();
        assert!(simple.kappa() < 2);
        let h = eigs_hankel(&ms, 2, RankRule::Threshold(1e-8), 1e-6).unwrap();
        assert_eq!(h.kappa(), 2);
        assert!(hausdorff(&h.eigenvalues, &[a, b]) < 1e-10);
        assert!(h.jordan.unwrap().iter().all(|j| j.multiplicity == 1));
    }

    #[test]
    fn reconstruct_member_of_span() {
        let grid = Grid::new(-1.0, 1.0, 0.25).unwrap();
        let xs: Vec<f64> = (1..8).map(|j| -1.0 + 0.25 * j as f64).collect();
        let td = TestData::new(
            2,
            TestData::point_functionals(&xs, 1),
            vec![crate::contour::RightHandSide::Function(std::sync::Arc::new(|_| vec![c(0.0), c(0.0)]))],
        )
        .unwrap();
        let compiled = td.compile(&grid).unwrap();
        let basis = ReconstructionBasis::hats_for_points(&compiled).unwrap();
        let profile: Vec<C64> = xs.iter().map(|x| C64::new(1.0 - x * x, 0.5 * x)).collect();
        let gl = CMat::column_vector(&profile).scale(C64::new(0.0, -3.0));
        let v = reconstruct_eigenfunctions(&gl, &compiled, &basis, 2).unwrap();
        let got = v[0].component(1);
        let inner: Vec<C64> = got[1..8].to_vec();
        assert!(angle_between(&inner, &profile) < 1e-14);
        assert!((v[0].l2_norm() - 1.0).abs() < 1e-14);
        assert!(got[0].norm() == 0.0 && got[8].norm() == 0.0);
        let big = v[0].values.iter().max_by(|a, b| a.norm().partial_cmp(&b.norm()).unwrap()).unwrap();
        assert!(big.im == 0.0 && big.re > 0.0);

        let dens = TestData::new(
            2,
            vec![Functional::Density {
                f: std::sync::Arc::new(|_| vec![c(1.0), c(0.0)]),
                support: (-0.5, 0.5),
            }],
            td.rhs.clone(),
        )
        .unwrap();
        assert!(ReconstructionBasis::hats_for_points(&dens.compile(&grid).unwrap()).is_err());
    }

    #[test]
    fn filter_flags_exterior_pole() {
        // poles at 0 and 1.02 on the unit circle test: 1.02 is outside
        let gl = CMat::identity(2);
        let d0 = gl.clone();
        let d1 = CMat::diag(&[c(0.0), c(1.02)]);
        let r = eigs_simple(&d0, &d1, RankRule::Threshold(1e-8)).unwrap();
        let g = Contour::circle(c(0.0), 1.0, 32).unwrap();
        let f = filter_and_diagnose(r, &g, |l| Ok(l.norm())).unwrap();
        assert_eq!(f.eigenvalues.len(), 2);
        assert_eq!(f.inside, vec![true, false]);
        assert!(f.eigenvalues[0].norm() < 1e-15);
        assert_eq!(f.residuals.len(), 2);
    }

    #[test]
    fn angle_is_scale_invariant() {
        let a = vec![c(1.0), c(2.0), C64::new(0.0, 1.0)];
        let b: Vec<C64> = a.iter().map(|z| z * C64::new(-0.3, 2.0)).collect();
        assert!(angle_between(&a, &b) < 1e-15);
        let e1 = vec![c(1.0), c(0.0)];
        let e2 = vec![c(0.0), c(1.0)];
        assert!((angle_between(&e1, &e2) - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
    }

    fn spectral_radius_scale(a: &CMat, target: f64) -> CMat {
        let r = eig(a).unwrap().values.iter().map(|z| z.norm()).fold(0.0, f64::max);
        a.scale(c(target / r))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn quadratic_pencil_matches_companion(n in 2usize..=6, seed in 0u64..100_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // Q = (lambda - S1)(lambda - S2): spec(S1) inside |lambda| < 0.5, spec(S2) outside 3
            let s1 = spectral_radius_scale(&random_mat(n, n, &mut rng), 0.45);
            let x = random_mat(n, n, &mut rng);
            let big: Vec<C64> = (0..n).map(|_| C64::from_polar(rng.gen_range(3.0..5.0), rng.gen_range(0.0..6.28))).collect();
            let xinv = Lu::new(&x).unwrap().inverse().unwrap();
            let s2 = x.matmul(&CMat::diag(&big)).matmul(&xinv);
            let k = s1.matmul(&s2);
            let cc = (&s1 + &s2).scale(c(-1.0));
            let p = MatrixPencil::polynomial(vec![k.clone(), cc.clone(), CMat::identity(n)]).unwrap();
            let w = random_mat(n, n, &mut rng);
            let v = random_mat(n, n, &mut rng);
            let g = Contour::circle(c(0.0), 1.0, 64).unwrap();
            let ms = moments(&assemble_matrix_samples(&p, &w, &v, &g).unwrap(), 1).unwrap();
            let r = eigs_simple(&ms.moments[0], &ms.moments[1], RankRule::Threshold(1e-8)).unwrap();
            let mut comp = CMat::zeros(2 * n, 2 * n);
            comp.set_block(0, n, &CMat::identity(n));
            comp.set_block(n, 0, &k.scale(c(-1.0)));
            comp.set_block(n, n, &cc.scale(c(-1.0)));
            let inside: Vec<C64> = eig(&comp).unwrap().values.into_iter().filter(|z| z.norm() < 1.0).collect();
            prop_assert_eq!(r.kappa(), inside.len());
            prop_assert!(hausdorff(&r.eigenvalues, &inside) < 1e-8);
        }

        #[test]
        fn scaling_rhs_leaves_eigenvalues(seed in 0u64..100_000, re in -3.0f64..3.0, im in -3.0f64..3.0) {
            prop_assume!(re.abs() + im.abs() > 0.1);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gl = random_mat(5, 2, &mut rng);
            let gr = random_mat(4, 2, &mut rng);
            let lam = CMat::diag(&[c(0.25), C64::new(-0.1, 0.3)]);
            let d0 = gl.matmul(&gr.transpose());
            let d1 = gl.matmul(&lam).matmul(&gr.transpose());
            let s = C64::new(re, im);
            let a = eigs_simple(&d0, &d1, RankRule::Threshold(1e-8)).unwrap();
            let b = eigs_simple(&d0.scale(s), &d1.scale(s), RankRule::Threshold(1e-8)).unwrap();
            prop_assert!(hausdorff(&a.eigenvalues, &b.eigenvalues) < 1e-12);
            for (x, y) in a.rank.singular_values.iter().zip(&b.rank.singular_values) {
                prop_assert!((x * s.norm() - y).abs() < 1e-12 * (1.0 + y));
            }
        }

        #[test]
        fn perturbation_moves_eigenvalues_linearly(seed in 0u64..100_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let gl = random_mat(6, 2, &mut rng);
            let gr = random_mat(6, 2, &mut rng);
            let lam = [c(0.5), C64::new(-0.2, 0.1)];
            let d0 = gl.matmul(&gr.transpose());
            let d1 = gl.matmul(&CMat::diag(&lam)).matmul(&gr.transpose());
            let eps = 1e-6;
            let mut noise = |m: &CMat| {
                let e = random_mat(m.rows(), m.cols(), &mut rng);
                m + &e.scale(c(eps / e.norm_fro()))
            };
            let (p0, p1) = (noise(&d0), noise(&d1));
            let r = eigs_simple(&p0, &p1, RankRule::Fixed(2)).unwrap();
            let moved = hausdorff(&r.eigenvalues, &lam);
            prop_assert!(moved <= 1e3 * eps, "moved {}", moved);
        }
    }

    #[test]
    fn shifted_moments_give_same_eigenvalues() {
        let p = MatrixPencil::polynomial(vec![CMat::diag(&[c(-0.2), c(-0.5), c(-3.0)]), CMat::identity(3)]).unwrap();
        let g = Contour::circle(c(0.0), 1.0, 64).unwrap();
        let s = assemble_matrix_samples(&p, &CMat::identity(3), &CMat::identity(3), &g).unwrap();
        let a = eigs_hankel(&moments(&s, 1).unwrap(), 1, RankRule::Threshold(1e-8), 1e-6).unwrap();
        let b = eigs_hankel(&moments_about(&s, 1, c(0.1), 0.9).unwrap(), 1, RankRule::Threshold(1e-8), 1e-6).unwrap();
        assert!(hausdorff(&a.eigenvalues, &b.eigenvalues) < 1e-12);
        assert!(hausdorff(&a.eigenvalues, &[c(0.2), c(0.5)]) < 1e-12);
    }
}
