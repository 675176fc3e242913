//! Contours, trapezoid quadrature, probe data and moment matrices.

use crate::bvp::{discretize, BoundaryConditionSpec, Grid, GridFunction};
use crate::error::{Error, Result};
use crate::pencil::{MatrixPencil, OdePencil};
use crate::{CMat, C64};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

pub type CurveFn = Arc<dyn Fn(f64) -> C64 + Send + Sync>;

/// Closed contour with `nodes` trapezoid points.
#[derive(Clone)]
pub enum Contour {
    Circle {
        center: C64,
        radius: f64,
        nodes: usize,
    },
    /// `phi` on `[0, 2 pi)`, positively oriented.
    Parametric {
        phi: CurveFn,
        dphi: CurveFn,
        nodes: usize,
    },
}

impl fmt::Debug for Contour {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Contour::Circle {
                center,
                radius,
                nodes,
            } => write!(f, "Circle(center={center}, radius={radius}, M={nodes})"),
            Contour::Parametric { nodes, .. } => write!(f, "Parametric(M={nodes})"),
        }
    }
}

impl Contour {
    pub fn circle(center: C64, radius: f64, nodes: usize) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) || !(center.re.is_finite() && center.im.is_finite()) {
            return Err(Error::Config(format!("circle needs finite center and radius > 0 (radius {radius})")));
        }
        if nodes < 2 {
            return Err(Error::Config("contour needs at least 2 nodes".into()));
        }
        Ok(Contour::Circle {
            center,
            radius,
            nodes,
        })
    }

    pub fn parametric(
        phi: impl Fn(f64) -> C64 + Send + Sync + 'static,
        dphi: impl Fn(f64) -> C64 + Send + Sync + 'static,
        nodes: usize,
    ) -> Result<Self> {
        if nodes < 2 {
            return Err(Error::Config("contour needs at least 2 nodes".into()));
        }
        Ok(Contour::Parametric {
            phi: Arc::new(phi),
            dphi: Arc::new(dphi),
            nodes,
        })
    }

    pub fn node_count(&self) -> usize {
        match self {
            Contour::Circle { nodes, .. } | Contour::Parametric { nodes, .. } => *nodes,
        }
    }

    pub fn with_nodes(&self, m: usize) -> Result<Self> {
        if m < 2 {
            return Err(Error::Config("contour needs at least 2 nodes".into()));
        }
        Ok(match self {
            Contour::Circle { center, radius, .. } => Contour::Circle {
                center: *center,
                radius: *radius,
                nodes: m,
            },
            Contour::Parametric { phi, dphi, .. } => Contour::Parametric {
                phi: phi.clone(),
                dphi: dphi.clone(),
                nodes: m,
            },
        })
    }

    fn point(&self, t: f64) -> C64 {
        match self {
            Contour::Circle { center, radius, .. } => center + C64::from_polar(*radius, t),
            Contour::Parametric { phi, .. } => phi(t),
        }
    }

    /// `(lambda_j, w_j)` with `(1/2 pi i) oint f ~ sum_j w_j f(lambda_j)`.
    pub fn nodes(&self) -> Vec<(C64, C64)> {
        let m = self.node_count();
        (0..m)
            .map(|j| {
                let t = 2.0 * PI * j as f64 / m as f64;
                match self {
                    Contour::Circle { center, radius, .. } => {
                        let e = C64::from_polar(*radius, t);
                        (center + e, e / m as f64)
                    }
                    Contour::Parametric { phi, dphi, .. } => {
                        (phi(t), dphi(t) / (C64::new(0.0, 1.0) * m as f64))
                    }
                }
            })
            .collect()
    }

    /// Center used for sorting and shifted moments; the node centroid for parametric curves.
    pub fn center(&self) -> C64 {
        match self {
            Contour::Circle { center, .. } => *center,
            Contour::Parametric { .. } => {
                let pts = self.nodes();
                pts.iter().map(|p| p.0).sum::<C64>() / pts.len() as f64
            }
        }
    }

    /// Radius for a circle; max distance from the centroid otherwise.
    pub fn scale(&self) -> f64 {
        match self {
            Contour::Circle { radius, .. } => *radius,
            Contour::Parametric { .. } => {
                let c = self.center();
                self.nodes().iter().map(|p| (p.0 - c).norm()).fold(0.0, f64::max)
            }
        }
    }

    /// Point-in-contour test (winding of a refined polygon for parametric curves).
    pub fn contains(&self, z: C64) -> bool {
        match self {
            Contour::Circle { center, radius, .. } => (z - center).norm() < *radius,
            Contour::Parametric { .. } => {
                let k = 16 * self.node_count().max(64);
                let mut total = 0.0;
                let mut prev = self.point(0.0) - z;
                for j in 1..=k {
                    let cur = self.point(2.0 * PI * j as f64 / k as f64) - z;
                    total += (cur / prev).arg();
                    prev = cur;
                }
                (total / (2.0 * PI)).round() as i64 != 0
            }
        }
    }

    /// Distance from `z` to the node polygon.
    pub fn distance(&self, z: C64) -> f64 {
        match self {
            Contour::Circle { center, radius, .. } => ((z - center).norm() - radius).abs(),
            Contour::Parametric { .. } => {
                let k = 16 * self.node_count().max(64);
                (0..k)
                    .map(|j| (self.point(2.0 * PI * j as f64 / k as f64) - z).norm())
                    .fold(f64::INFINITY, f64::min)
            }
        }
    }
}

/// Linear functional on grid functions (bilinear pairing, no conjugation).
#[derive(Clone)]
pub enum Functional {
    Point { x: f64, component: usize },
    Density {
        f: Arc<dyn Fn(f64) -> Vec<C64> + Send + Sync>,
        support: (f64, f64),
    },
}

impl fmt::Debug for Functional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Functional::Point { x, component } => write!(f, "Point(x={x}, component={component})"),
            Functional::Density { support, .. } => write!(f, "Density(support={support:?})"),
        }
    }
}

/// Hat basis `phi_j(x) = max(0, 1 - |x - c_j| / half_width)`.
#[derive(Clone, Debug, PartialEq)]
pub struct HatBasis {
    pub centers: Vec<f64>,
    pub half_width: f64,
}

impl HatBasis {
    /// `count` hats with centers `a + (b - a) j / (count - 1)` and unit half-width.
    pub fn uniform(count: usize, a: f64, b: f64) -> Self {
        let centers = if count == 1 {
            vec![0.5 * (a + b)]
        } else {
            (0..count)
                .map(|j| a + (b - a) * j as f64 / (count - 1) as f64)
                .collect()
        };
        HatBasis {
            centers,
            half_width: 1.0,
        }
    }

    pub fn eval(&self, j: usize, x: f64) -> f64 {
        (1.0 - (x - self.centers[j]).abs() / self.half_width).max(0.0)
    }
}

/// `v(x) = sum_j coefficients[c][j] phi_j(x)` in component `c`.
#[derive(Clone, Debug, PartialEq)]
pub struct HatCombination {
    pub basis: HatBasis,
    pub coefficients: Vec<Vec<C64>>,
}

impl HatCombination {
    pub fn eval(&self, x: f64) -> Vec<C64> {
        let active: Vec<(usize, f64)> = (0..self.basis.centers.len())
            .filter_map(|j| {
                let v = self.basis.eval(j, x);
                (v > 0.0).then_some((j, v))
            })
            .collect();
        self.coefficients
            .iter()
            .map(|cs| {
                if cs.is_empty() {
                    C64::new(0.0, 0.0)
                } else {
                    active.iter().map(|&(j, v)| cs[j] * v).sum()
                }
            })
            .collect()
    }
}

#[derive(Clone)]
pub enum RightHandSide {
    Hats(HatCombination),
    Function(Arc<dyn Fn(f64) -> Vec<C64> + Send + Sync>),
}

impl fmt::Debug for RightHandSide {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RightHandSide::Hats(h) => write!(f, "Hats({} basis functions)", h.basis.centers.len()),
            RightHandSide::Function(_) => f.write_str("Function"),
        }
    }
}

impl RightHandSide {
    pub fn eval(&self, x: f64) -> Vec<C64> {
        match self {
            RightHandSide::Hats(h) => h.eval(x),
            RightHandSide::Function(f) => f(x),
        }
    }
}

/// Functionals `w_j` and right-hand sides `v_k`.
#[derive(Clone, Debug)]
pub struct TestData {
    pub dim: usize,
    pub functionals: Vec<Functional>,
    pub rhs: Vec<RightHandSide>,
}

impl TestData {
    pub fn new(dim: usize, functionals: Vec<Functional>, rhs: Vec<RightHandSide>) -> Result<Self> {
        if functionals.is_empty() || rhs.is_empty() {
            return Err(Error::Config("test data needs m >= 1 functionals and l >= 1 right-hand sides".into()));
        }
        for f in &functionals {
            if let Functional::Point { component, .. } = f {
                if *component >= dim {
                    return Err(Error::Config(format!("functional component {component} >= dim {dim}")));
                }
            }
        }
        Ok(TestData { dim, functionals, rhs })
    }

    pub fn point_functionals(xs: &[f64], component: usize) -> Vec<Functional> {
        xs.iter().map(|&x| Functional::Point { x, component }).collect()
    }

    /// `count` random combinations of a hat basis; component `c` gets standard normal
    /// coefficients times `scales[c]` (components with zero scale stay zero).
    pub fn random_hat_rhs(basis: &HatBasis, scales: &[C64], count: usize, seed: u64) -> Vec<RightHandSide> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let coefficients = scales
                    .iter()
                    .map(|&s| {
                        if s == C64::new(0.0, 0.0) {
                            Vec::new()
                        } else {
                            (0..basis.centers.len())
                                .map(|_| {
                                    let g: f64 = StandardNormal.sample(&mut rng);
                                    s * g
                                })
                                .collect()
                        }
                    })
                    .collect();
                RightHandSide::Hats(HatCombination {
                    basis: basis.clone(),
                    coefficients,
                })
            })
            .collect()
    }

    pub fn m(&self) -> usize {
        self.functionals.len()
    }

    pub fn ell(&self) -> usize {
        self.rhs.len()
    }

    /// Resolves functionals and samples right-hand sides on a grid.
    pub fn compile(&self, grid: &Grid) -> Result<CompiledTestData> {
        let inside = |x: f64| x > grid.x_min && x < grid.x_max;
        let mut fs = Vec::with_capacity(self.m());
        for f in &self.functionals {
            match f {
                Functional::Point { x, component } => {
                    if !inside(*x) {
                        return Err(Error::Config(format!(
                            "point functional at x = {x} is not strictly inside [{}, {}]",
                            grid.x_min, grid.x_max
                        )));
                    }
                    let i = grid.index_of(*x).ok_or_else(|| {
                        Error::Config(format!("point functional at x = {x} is not a grid node"))
                    })?;
                    fs.push(CompiledFunctional::Node {
                        index: i * self.dim + component,
                    });
                }
                Functional::Density { f, support } => {
                    if !(inside(support.0) && inside(support.1)) {
                        return Err(Error::Config(format!(
                            "density functional support {support:?} is not strictly inside [{}, {}]",
                            grid.x_min, grid.x_max
                        )));
                    }
                    let mut weights = Vec::with_capacity(grid.len() * self.dim);
                    for i in 0..grid.len() {
                        let x = grid.node(i);
                        let v = f(x);
                        if v.len() != self.dim {
                            return Err(Error::Dimension("density functional value".into()));
                        }
                        let w = grid.weight(i);
                        weights.extend(v.into_iter().map(|z| z * w));
                    }
                    fs.push(CompiledFunctional::Weights(weights));
                }
            }
        }
        let rhs = self
            .rhs
            .iter()
            .map(|r| GridFunction::sample(*grid, self.dim, |x| r.eval(x)))
            .collect::<Vec<_>>();
        for r in &rhs {
            if r.dim != self.dim {
                return Err(Error::Dimension("right-hand side".into()));
            }
        }
        Ok(CompiledTestData {
            grid: *grid,
            functionals: fs,
            rhs,
        })
    }
}

#[derive(Clone, Debug)]
pub enum CompiledFunctional {
    Node { index: usize },
    Weights(Vec<C64>),
}

impl CompiledFunctional {
    pub fn apply(&self, y: &GridFunction) -> C64 {
        match self {
            CompiledFunctional::Node { index } => y.values[*index],
            CompiledFunctional::Weights(w) => w.iter().zip(&y.values).map(|(a, b)| a * b).sum(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct CompiledTestData {
    pub grid: Grid,
    pub functionals: Vec<CompiledFunctional>,
    pub rhs: Vec<GridFunction>,
}

impl CompiledTestData {
    /// `E_jk = w_j(y_k)`.
    pub fn apply(&self, ys: &[GridFunction]) -> CMat {
        CMat::from_fn(self.functionals.len(), ys.len(), |j, k| self.functionals[j].apply(&ys[k]))
    }
}

/// `E(lambda_j)` at every contour node.
#[derive(Clone, Debug)]
pub struct SampleSet {
    pub nodes: Vec<C64>,
    pub weights: Vec<C64>,
    pub values: Vec<CMat>,
    /// Relative residual of the linear solves at each node (0 for dense solves).
    pub residuals: Vec<f64>,
}

impl SampleSet {
    pub fn new(nodes: Vec<C64>, weights: Vec<C64>, values: Vec<CMat>, residuals: Vec<f64>) -> Result<Self> {
        if nodes.len() != weights.len() || nodes.len() != values.len() || nodes.len() != residuals.len() {
            return Err(Error::Dimension("sample set lengths".into()));
        }
        if values.iter().any(|e| !e.is_finite()) {
            return Err(Error::NonFinite("E samples"));
        }
        Ok(SampleSet {
            nodes,
            weights,
            values,
            residuals,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.first().map_or((0, 0), |e| e.shape())
    }

    pub fn to_json(&self) -> serde_json::Value {
        let nodes: Vec<_> = (0..self.nodes.len())
            .map(|j| {
                serde_json::json!({
                    "lambda": pair(self.nodes[j]),
                    "weight": pair(self.weights[j]),
                    "residual": self.residuals[j],
                    "E": MatrixJson::from(&self.values[j]),
                })
            })
            .collect();
        serde_json::json!({ "nodes": nodes })
    }
}

pub(crate) fn pair(z: C64) -> [f64; 2] {
    [z.re, z.im]
}

/// Row-major matrix as `[re, im]` pairs.
#[derive(Clone, Debug, Serialize)]
pub struct MatrixJson {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<[f64; 2]>,
}

impl From<&CMat> for MatrixJson {
    fn from(m: &CMat) -> Self {
        MatrixJson {
            rows: m.rows(),
            cols: m.cols(),
            data: m.as_slice().iter().map(|&z| pair(z)).collect(),
        }
    }
}

/// `E(lambda_j)_jk = w_j(F_N(lambda_j)^{-1} v_k)` over all nodes, in parallel and in node order.
pub fn assemble_samples(
    pencil: &OdePencil,
    grid: &Grid,
    bc: &BoundaryConditionSpec,
    test: &TestData,
    contour: &Contour,
) -> Result<SampleSet> {
    if test.dim != pencil.dim() {
        return Err(Error::Dimension(format!(
            "test data dim {} vs pencil dim {}",
            test.dim,
            pencil.dim()
        )));
    }
    let compiled = test.compile(grid)?;
    let nodes = contour.nodes();
    let out: Vec<(CMat, f64)> = nodes
        .par_iter()
        .map(|&(lam, _)| {
            let sys = discretize(pencil, lam, grid, bc)?;
            let mut ys = Vec::with_capacity(compiled.rhs.len());
            let mut res: f64 = 0.0;
            for v in &compiled.rhs {
                let y = sys.solve(v)?;
                res = res.max(sys.residual(&y, v));
                ys.push(y);
            }
            Ok((compiled.apply(&ys), res))
        })
        .collect::<Result<Vec<_>>>()?;
    let (values, residuals): (Vec<_>, Vec<_>) = out.into_iter().unzip();
    SampleSet::new(
        nodes.iter().map(|p| p.0).collect(),
        nodes.iter().map(|p| p.1).collect(),
        values,
        residuals,
    )
}

/// `E(lambda_j) = W^T F(lambda_j)^{-1} V` for a finite pencil.
pub fn assemble_matrix_samples(
    pencil: &MatrixPencil,
    w: &CMat,
    v: &CMat,
    contour: &Contour,
) -> Result<SampleSet> {
    let n = pencil.dim();
    if w.rows() != n || v.rows() != n {
        return Err(Error::Dimension("probe matrices".into()));
    }
    let nodes = contour.nodes();
    let wt = w.transpose();
    let values = nodes
        .par_iter()
        .map(|&(lam, _)| {
            let op = pencil.evaluate(lam)?;
            Ok(wt.matmul(&op.solve(v)?))
        })
        .collect::<Result<Vec<_>>>()?;
    SampleSet::new(
        nodes.iter().map(|p| p.0).collect(),
        nodes.iter().map(|p| p.1).collect(),
        values,
        vec![0.0; nodes.len()],
    )
}

/// `D_0..D_{2K-1}`, possibly for the shifted variable `(lambda - center) / scale`.
#[derive(Clone, Debug)]
pub struct MomentSet {
    pub moments: Vec<CMat>,
    pub center: C64,
    pub scale: f64,
    /// Upper bound `max_nu sum_j |w_j| |z_j|^nu ||E(lambda_j)||_F` on every `||D_nu||`;
    /// zero when unknown.
    pub noise_bound: f64,
}

impl MomentSet {
    pub fn blocks(&self) -> usize {
        self.moments.len() / 2
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "center": pair(self.center),
            "scale": self.scale,
            "moments": self.moments.iter().map(MatrixJson::from).collect::<Vec<_>>(),
        })
    }
}

/// `D_nu = sum_j w_j lambda_j^nu E(lambda_j)`, `nu = 0..2K-1`.
pub fn moments(samples: &SampleSet, k: usize) -> Result<MomentSet> {
    moments_about(samples, k, C64::new(0.0, 0.0), 1.0)
}

/// Moments of `((lambda - center)/scale)^nu`; eigenvalues of the pencil built from them
/// map back by `center + scale * mu`.
pub fn moments_about(samples: &SampleSet, k: usize, center: C64, scale: f64) -> Result<MomentSet> {
    if k == 0 {
        return Err(Error::Config("moment block count K must be >= 1".into()));
    }
    if !(scale > 0.0) {
        return Err(Error::Config("moment scale must be positive".into()));
    }
    let (m, l) = samples.shape();
    let mut moments = vec![CMat::zeros(m, l); 2 * k];
    let mut bounds = vec![0.0; 2 * k];
    for (j, e) in samples.values.iter().enumerate() {
        let z = (samples.nodes[j] - center) / scale;
        let norm = e.norm_fro();
        let mut f = samples.weights[j];
        for (d, b) in moments.iter_mut().zip(bounds.iter_mut()) {
            for (a, &b) in d.as_mut_slice().iter_mut().zip(e.as_slice()) {
                *a += f * b;
            }
            *b += f.norm() * norm;
            f *= z;
        }
    }
    Ok(MomentSet {
        moments,
        center,
        scale,
        noise_bound: bounds.into_iter().fold(0.0, f64::max),
    })
}

/// Outcome of aligning a frame to its predecessor.
#[derive(Clone, Debug)]
pub struct Alignment {
    pub frame: CMat,
    /// `|<previous_i, aligned_i>|` per column, after normalization.
    pub overlaps: Vec<f64>,
}

/// Permutes and rephases columns of `current` to best match `previous`.
pub fn align_bases(previous: &CMat, current: &CMat) -> Result<Alignment> {
    let k = previous.cols();
    if current.shape() != previous.shape() {
        return Err(Error::Dimension("align_bases frame shapes".into()));
    }
    let norm_cols = |m: &CMat| -> Vec<f64> { (0..m.cols()).map(|j| m.col(j).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()).collect() };
    let np = norm_cols(previous);
    let nc = norm_cols(current);
    let o = previous.adjoint().matmul(current);
    let mut used_p = vec![false; k];
    let mut used_c = vec![false; k];
    let mut assign = vec![(0usize, C64::new(1.0, 0.0)); k];
    let mut overlaps = vec![0.0; k];
    for _ in 0..k {
        let mut best = (-1.0, 0, 0);
        for i in (0..k).filter(|&i| !used_p[i]) {
            for j in (0..k).filter(|&j| !used_c[j]) {
                let v = o[(i, j)].norm() / (np[i] * nc[j]).max(1e-300);
                if v > best.0 {
                    best = (v, i, j);
                }
            }
        }
        let (v, i, j) = best;
        used_p[i] = true;
        used_c[j] = true;
        let z = o[(i, j)];
        let ph = if z.norm() > 0.0 { z.conj() / z.norm() } else { C64::new(1.0, 0.0) };
        assign[i] = (j, ph);
        overlaps[i] = v;
    }
    let worst = overlaps.iter().cloned().fold(f64::INFINITY, f64::min);
    if worst < 0.5 {
        return Err(Error::Alignment { overlap: worst });
    }
    let mut frame = CMat::zeros(current.rows(), k);
    for (i, &(j, ph)) in assign.iter().enumerate() {
        let col: Vec<C64> = current.col(j).iter().map(|&z| z * ph).collect();
        frame.set_col(i, &col);
    }
    Ok(Alignment { frame, overlaps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(x: f64) -> C64 {
        C64::new(x, 0.0)
    }

    fn quad(contour: &Contour, f: impl Fn(C64) -> C64) -> C64 {
        contour.nodes().iter().map(|&(l, w)| w * f(l)).sum()
    }

    #[test]
    fn cauchy_formulas() {
        let g = Contour::circle(C64::new(0.5, -0.2), 1.0, 32).unwrap();
        let l0 = C64::new(0.3, 0.1);
        assert!((quad(&g, |l| 1.0 / (l - l0)) - 1.0).norm() < 1e-12);
        assert!((quad(&g, |l| l / (l - l0)) - l0).norm() < 1e-12);
        assert!(quad(&g, |_| c(1.0)).norm() < 1e-15);
    }

    #[test]
    fn parametric_ellipse() {
        let g = Contour::parametric(
            |t| C64::new(2.0 * t.cos(), 0.5 * t.sin()),
            |t| C64::new(-2.0 * t.sin(), 0.5 * t.cos()),
            256,
        )
        .unwrap();
        let l0 = C64::new(0.5, 0.1);
        assert!((quad(&g, |l| 1.0 / (l - l0)) - 1.0).norm() < 1e-10);
        assert!(g.contains(l0));
        assert!(!g.contains(C64::new(0.0, 0.6)));
        assert!(Contour::circle(c(0.0), 0.0, 8).is_err());
        assert!(Contour::circle(c(0.0), 1.0, 1).is_err());
    }

    fn rank_one_samples(l0: C64, m: usize) -> SampleSet {
        let g = Contour::circle(c(0.0), 1.0, m).unwrap();
        let v = CMat::column_vector(&[c(1.0), C64::new(0.0, 2.0)]);
        let w = CMat::column_vector(&[c(3.0), c(-1.0), c(0.5)]);
        let vw = v.matmul(&w.transpose());
        let nodes = g.nodes();
        SampleSet::new(
            nodes.iter().map(|p| p.0).collect(),
            nodes.iter().map(|p| p.1).collect(),
            nodes.iter().map(|p| vw.scale(1.0 / (p.0 - l0))).collect(),
            vec![0.0; m],
        )
        .unwrap()
    }

    #[test]
    fn rank_one_moments() {
        let l0 = C64::new(0.2, -0.1);
        let s = rank_one_samples(l0, 64);
        let d = moments(&s, 2).unwrap();
        assert_eq!(d.moments.len(), 4);
        let d0 = &d.moments[0];
        let vw = s.values[0].scale(s.nodes[0] - l0);
        assert!((d0 - &vw).norm_fro() < 1e-10);
        assert!((&d.moments[1] - &vw.scale(l0)).norm_fro() < 1e-10);
        // D2 D0^+ ... rank-one ratio identity
        let ratio = d.moments[2][(0, 0)] / d.moments[0][(0, 0)];
        assert!((ratio - l0 * l0).norm() < 1e-10);
        let shifted = moments_about(&s, 1, C64::new(0.1, 0.0), 0.5).unwrap();
        let r = shifted.moments[1][(0, 0)] / shifted.moments[0][(0, 0)];
        assert!((C64::new(0.1, 0.0) + 0.5 * r - l0).norm() < 1e-10);
    }

    #[test]
    fn constant_samples_have_zero_moments() {
        let g = Contour::circle(c(0.0), 1.0, 16).unwrap();
        let nodes = g.nodes();
        let e = CMat::from_real(1, 2, &[1.0, -2.0]);
        let s = SampleSet::new(
            nodes.iter().map(|p| p.0).collect(),
            nodes.iter().map(|p| p.1).collect(),
            vec![e; 16],
            vec![0.0; 16],
        )
        .unwrap();
        for d in moments(&s, 2).unwrap().moments {
            assert!(d.norm_max() < 1e-15);
        }
    }

    #[test]
    fn matrix_pencil_keldysh() {
        // F = lambda I - diag(1, 2); only lambda = 1 inside
        let p = MatrixPencil::polynomial(vec![CMat::diag(&[c(-1.0), c(-2.0)]), CMat::identity(2)]).unwrap();
        let g = Contour::circle(c(1.0), 0.5, 64).unwrap();
        let s = assemble_matrix_samples(&p, &CMat::identity(2), &CMat::identity(2), &g).unwrap();
        let d = moments(&s, 1).unwrap();
        let want = CMat::diag(&[c(1.0), c(0.0)]);
        assert!((&d.moments[0] - &want).norm_fro() < 1e-12);
        assert!((&d.moments[1] - &want).norm_fro() < 1e-12);
    }

    fn hyperbolic_pencil() -> OdePencil {
        OdePencil::constant_plus_perturbation(
            2,
            1,
            |lam| CMat::from_rows(&[vec![c(0.0), c(1.0)], vec![c(1.0) - lam, c(0.0)]]),
            |_| CMat::zeros(2, 2),
        )
    }

    fn small_test_data(seed: u64) -> TestData {
        let basis = HatBasis::uniform(9, -2.0, 2.0);
        TestData::new(
            2,
            TestData::point_functionals(&[-1.0, 0.0, 0.5], 0),
            TestData::random_hat_rhs(&basis, &[c(0.0), c(1.0)], 2, seed),
        )
        .unwrap()
    }

    #[test]
    fn empty_spectrum_gives_vanishing_moments() {
        // essential spectrum is [1, inf); the circle stays left of it
        let p = hyperbolic_pencil();
        let g = Grid::symmetric(16.0, 0.02).unwrap();
        let gamma = Contour::circle(c(-1.0), 1.0, 32).unwrap();
        let s = assemble_samples(&p, &g, &BoundaryConditionSpec::Projection, &small_test_data(3), &gamma).unwrap();
        let d = moments(&s, 1).unwrap();
        assert!(d.moments[0].norm_max() < 1e-8, "{}", d.moments[0].norm_max());
        assert!(s.residuals.iter().all(|&r| r < 1e-10));
    }

    #[test]
    fn assembly_is_linear_in_rhs() {
        let p = hyperbolic_pencil();
        let g = Grid::symmetric(12.0, 0.05).unwrap();
        let gamma = Contour::circle(c(-1.0), 0.5, 8).unwrap();
        let td = small_test_data(5);
        let both = RightHandSide::Function(Arc::new({
            let (a, b) = (td.rhs[0].clone(), td.rhs[1].clone());
            move |x| a.eval(x).iter().zip(b.eval(x)).map(|(p, q)| p + q).collect()
        }));
        let sum = TestData::new(2, td.functionals.clone(), vec![both]).unwrap();
        let bc = BoundaryConditionSpec::Projection;
        let s = assemble_samples(&p, &g, &bc, &td, &gamma).unwrap();
        let t = assemble_samples(&p, &g, &bc, &sum, &gamma).unwrap();
        for j in 0..8 {
            for r in 0..3 {
                let lhs = t.values[j][(r, 0)];
                let rhs = s.values[j][(r, 0)] + s.values[j][(r, 1)];
                assert!((lhs - rhs).norm() < 1e-12 * (1.0 + rhs.norm()));
            }
        }
    }

    #[test]
    fn functional_outside_grid_is_config_error() {
        let p = hyperbolic_pencil();
        let g = Grid::symmetric(1.0, 0.05).unwrap();
        let gamma = Contour::circle(c(-1.0), 0.5, 8).unwrap();
        let err = assemble_samples(&p, &g, &BoundaryConditionSpec::Projection, &small_test_data(1), &gamma).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let g = Grid::symmetric(4.0, 0.3).unwrap_or(Grid::new(-2.1, 2.1, 0.3).unwrap());
        let err = small_test_data(1).compile(&g).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn quadrature_converges_exponentially() {
        // poles at 0.3 (inside) and 1.6 (outside, distance 0.6 from the unit circle)
        let e = |l: C64| CMat::from_fn(1, 1, |_, _| 1.0 / (l - 0.3) + 2.0 / (l - 1.6));
        let d0 = |m: usize| {
            let g = Contour::circle(c(0.0), 1.0, m).unwrap();
            let nodes = g.nodes();
            let s = SampleSet::new(
                nodes.iter().map(|p| p.0).collect(),
                nodes.iter().map(|p| p.1).collect(),
                nodes.iter().map(|p| e(p.0)).collect(),
                vec![0.0; m],
            )
            .unwrap();
            moments(&s, 1).unwrap().moments[1][(0, 0)]
        };
        let mut m = 16;
        let mut prev = (d0(m) - d0(2 * m)).norm();
        while m < 64 {
            m *= 2;
            let next = (d0(m) - d0(2 * m)).norm();
            if prev < 1e-13 {
                break;
            }
            assert!(next * 10.0 <= prev, "M={m}: {prev} -> {next}");
            prev = next;
        }
    }

    #[test]
    fn align_removes_phase_and_permutation() {
        let a = CMat::from_rows(&[vec![c(1.0), c(0.0)], vec![c(0.0), c(1.0)], vec![c(0.0), c(0.0)]]);
        let same = align_bases(&a, &a).unwrap();
        assert_eq!(same.frame, a);
        let ph = C64::from_polar(1.0, 0.3);
        let rotated = CMat::from_rows(&[vec![c(0.0), ph], vec![ph.conj(), c(0.0)], vec![c(0.0), c(0.0)]]);
        let al = align_bases(&a, &rotated).unwrap();
        assert!((&al.frame - &a).norm_fro() < 1e-15);
        assert!(al.overlaps.iter().all(|&o| (o - 1.0).abs() < 1e-15));
        let far = CMat::from_rows(&[vec![c(0.0), c(0.0)], vec![c(0.0), c(0.0)], vec![c(1.0), c(1.0)]]);
        assert!(matches!(align_bases(&a, &far), Err(Error::Alignment { .. })));
    }

    #[test]
    fn random_rhs_is_seeded() {
        let basis = HatBasis::uniform(40, -5.0, 5.0);
        let a = TestData::random_hat_rhs(&basis, &[c(0.0), c(1.0), c(0.5)], 3, 7);
        let b = TestData::random_hat_rhs(&basis, &[c(0.0), c(1.0), c(0.5)], 3, 7);
        let d = TestData::random_hat_rhs(&basis, &[c(0.0), c(1.0), c(0.5)], 3, 8);
        let at = |r: &RightHandSide| r.eval(0.123);
        assert_eq!(at(&a[2]), at(&b[2]));
        assert_ne!(at(&a[2]), at(&d[2]));
        assert_eq!(at(&a[0])[0], c(0.0));
        // outside [-6, 6] the hats vanish
        assert!(a[1].eval(6.5).iter().all(|z| z.norm() == 0.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn cauchy_for_random_interior_pole(r in 0.0f64..0.8, t in 0.0f64..6.28, m in 32usize..80) {
            let g = Contour::circle(c(0.0), 1.0, m).unwrap();
            let l0 = C64::from_polar(r, t);
            let got = quad(&g, |l| 1.0 / (l - l0));
            // trapezoid error for an interior pole is r^M / (1 - r^M)
            let bound = 2.0 * r.powi(m as i32) / (1.0 - r.powi(m as i32)) + 1e-13;
            prop_assert!((got - 1.0).norm() <= bound);
        }

        #[test]
        fn moments_of_keldysh_sum(seed in 0u64..100_000, inner in 1usize..4, outer in 0usize..3) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut z = || C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            // E = sum_l a_l b_l^T / (lambda - lambda_l) + H, poles inside |lambda| < 0.5 or outside 2
            let poles: Vec<(C64, CMat)> = (0..inner + outer)
                .map(|i| {
                    let r = if i < inner { 0.5 * z().norm() / 2f64.sqrt() } else { 2.0 + z().norm() };
                    let pole = C64::from_polar(r, 3.0 * z().re);
                    let a = CMat::from_fn(4, 1, |_, _| z());
                    let b = CMat::from_fn(3, 1, |_, _| z());
                    (pole, a.matmul(&b.transpose()))
                })
                .collect();
            let h0 = CMat::from_fn(4, 3, |_, _| z());
            let h1 = CMat::from_fn(4, 3, |_, _| z());
            let g = Contour::circle(c(0.0), 1.0, 96).unwrap();
            let nodes = g.nodes();
            let values = nodes
                .iter()
                .map(|&(l, _)| {
                    let mut e = &h0 + &h1.scale(l * l);
                    for (p, gl) in &poles {
                        e = &e + &gl.scale(1.0 / (l - p));
                    }
                    e
                })
                .collect();
            let s = SampleSet::new(
                nodes.iter().map(|p| p.0).collect(),
                nodes.iter().map(|p| p.1).collect(),
                values,
                vec![0.0; nodes.len()],
            )
            .unwrap();
            let d = moments(&s, 2).unwrap();
            for (nu, dn) in d.moments.iter().enumerate() {
                let mut want = CMat::zeros(4, 3);
                for (p, gl) in poles.iter().take(inner) {
                    want = &want + &gl.scale(p.powu(nu as u32));
                }
                prop_assert!((dn - &want).norm_max() < 1e-10, "nu = {}", nu);
            }
        }
    }
}
