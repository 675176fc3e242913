//! Schrödinger operators `-u'' + V u` on the line as first-order pencils:
//! Jost solutions, Wronskian, residues and contour runs.

use crate::bvp::{BoundaryConditionSpec, Grid};
use crate::contour::{assemble_samples, Contour, TestData};
use crate::error::{Error, Result};
use crate::evans::{FrameInit, FrameOptions};
use crate::extract::{contour_spectrum, PipelineOptions, SpectrumResult};
use crate::numkernel::svd;
use crate::pencil::OdePencil;
use crate::propagate::{propagate_trajectory, Stepper};
use crate::{CMat, C64};
use rayon::prelude::*;
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

/// How fast `V` vanishes at infinity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Decay {
    /// `V = 0` for `|x| > bound`.
    CompactSupport(f64),
    /// `|V(x)| <= C exp(-rate |x|)`.
    Exponential(f64),
}

/// Real potential.
#[derive(Clone)]
pub enum Potential {
    Zero,
    /// `V = -depth sech^2 x`.
    PoschlTeller { depth: f64 },
    /// `V = -depth` on `|x| < half_width`, `-depth/2` at `|x| = half_width`.
    SquareWell { depth: f64, half_width: f64 },
    Custom {
        f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
        decay: Decay,
    },
}

impl fmt::Debug for Potential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Potential::Zero => write!(f, "Zero"),
            Potential::PoschlTeller { depth } => write!(f, "PoschlTeller({depth})"),
            Potential::SquareWell { depth, half_width } => write!(f, "SquareWell({depth}, {half_width})"),
            Potential::Custom { decay, .. } => write!(f, "Custom({decay:?})"),
        }
    }
}

impl Potential {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Potential::Zero => 0.0,
            Potential::PoschlTeller { depth } => -depth / x.cosh().powi(2),
            Potential::SquareWell { depth, half_width } => {
                let ax = x.abs();
                if ax < *half_width {
                    -depth
                } else if ax == *half_width {
                    -0.5 * depth
                } else {
                    0.0
                }
            }
            Potential::Custom { f, .. } => f(x),
        }
    }

    pub fn decay(&self) -> Decay {
        match self {
            Potential::Zero => Decay::CompactSupport(0.0),
            Potential::PoschlTeller { .. } => Decay::Exponential(2.0),
            Potential::SquareWell { half_width, .. } => Decay::CompactSupport(*half_width),
            Potential::Custom { decay, .. } => *decay,
        }
    }

    /// `y = (u, u')`, `y' = [[0, 1], [V - lambda, 0]] y`; a scalar right-hand side `f`
    /// enters as `(0, f)`.
    pub fn pencil(&self) -> OdePencil {
        let v = self.clone();
        OdePencil::constant_plus_perturbation(2, 1, asymptotic_matrix, move |x| {
            let z = C64::new(0.0, 0.0);
            CMat::from_rows(&[vec![z, z], vec![C64::new(v.eval(x), 0.0), z]])
        })
        .with_lambda_derivative(|_, _| {
            let z = C64::new(0.0, 0.0);
            CMat::from_rows(&[vec![z, z], vec![C64::new(-1.0, 0.0), z]])
        })
    }
}

fn asymptotic_matrix(lambda: C64) -> CMat {
    let z = C64::new(0.0, 0.0);
    CMat::from_rows(&[vec![z, C64::new(1.0, 0.0)], vec![-lambda, z]])
}

/// `sqrt(lambda)` with `Im > 0`; `lambda` on `[0, inf)` is rejected.
pub fn sqrt_branch(lambda: C64) -> Result<C64> {
    if lambda.im.abs() <= 1e-14 * lambda.norm().max(1.0) && lambda.re >= 0.0 {
        return Err(Error::EssentialSpectrum {
            lambda,
            gap: lambda.im.abs(),
        });
    }
    let s = lambda.sqrt();
    Ok(if s.im < 0.0 { -s } else { s })
}

/// Jost data as frame initial values: `y_+(x_+) = e^{i k x_+} (1, i k)`,
/// `y_-(x_-) = e^{-i k x_-} (1, -i k)` with `k = sqrt(lambda)`.
pub fn jost_frame_options(half_length: f64, step: f64) -> FrameOptions {
    FrameOptions::new(half_length, step).with_initial_data(|lambda, l| {
        let k = sqrt_branch(lambda)?;
        let ik = C64::new(0.0, 1.0) * k;
        Ok(FrameInit {
            plus: CMat::column_vector(&[C64::new(1.0, 0.0), ik]),
            plus_log: ik * l,
            minus: CMat::column_vector(&[C64::new(1.0, 0.0), -ik]),
            minus_log: ik * l,
        })
    })
}

/// Jost solutions sampled over `[x_-, x_+]`; `y_+ = exp(plus_log) * plus[i]`, same for `y_-`.
#[derive(Clone, Debug)]
pub struct JostPair {
    pub lambda: C64,
    pub sqrt_lambda: C64,
    pub x: Vec<f64>,
    pub plus: Vec<[C64; 2]>,
    pub plus_log: C64,
    pub minus: Vec<[C64; 2]>,
    pub minus_log: C64,
    /// `W(u_-, u_+) = u_- u_+' - u_-' u_+` at `x = 0`.
    pub wronskian: C64,
}

impl JostPair {
    pub fn index_of(&self, x: f64) -> Option<usize> {
        let h = (self.x[self.x.len() - 1] - self.x[0]) / (self.x.len() - 1) as f64;
        let i = ((x - self.x[0]) / h).round();
        if i < 0.0 || i as usize >= self.x.len() || (self.x[i as usize] - x).abs() > 1e-7 * h {
            return None;
        }
        Some(i as usize)
    }

    pub fn wronskian_at(&self, i: usize) -> C64 {
        let (m, p) = (self.minus[i], self.plus[i]);
        (m[0] * p[1] - m[1] * p[0]) * (self.plus_log + self.minus_log).exp()
    }

    /// Largest relative deviation of the Wronskian over nodes with `|x| <= radius`.
    pub fn wronskian_spread(&self, radius: f64) -> f64 {
        let w0 = self.wronskian;
        self.x
            .iter()
            .enumerate()
            .filter(|(_, &x)| x.abs() <= radius)
            .map(|(i, _)| (self.wronskian_at(i) - w0).norm() / w0.norm().max(1e-300))
            .fold(0.0, f64::max)
    }

    /// `u_+` at true scale.
    pub fn u_plus(&self) -> Vec<C64> {
        let s = self.plus_log.exp();
        self.plus.iter().map(|v| v[0] * s).collect()
    }

    pub fn u_minus(&self) -> Vec<C64> {
        let s = self.minus_log.exp();
        self.minus.iter().map(|v| v[0] * s).collect()
    }
}

/// Jost solutions by integrating the first-order system from the cutoffs across
/// the whole interval with asymptotic initial data.
pub fn jost(potential: &Potential, lambda: C64, cutoffs: (f64, f64), step: f64) -> Result<JostPair> {
    jost_with(potential, lambda, cutoffs, step, Stepper::default())
}

pub fn jost_with(
    potential: &Potential,
    lambda: C64,
    cutoffs: (f64, f64),
    step: f64,
    stepper: Stepper,
) -> Result<JostPair> {
    let (xm, xp) = cutoffs;
    if !(xm < 0.0 && xp > 0.0) {
        return Err(Error::Config(format!("cutoffs must straddle 0, got ({xm}, {xp})")));
    }
    let k = sqrt_branch(lambda)?;
    let ik = C64::new(0.0, 1.0) * k;
    let pencil = potential.pencil();
    let a = |x: f64| pencil.coefficient(lambda, x);
    let one = C64::new(1.0, 0.0);
    let tp = propagate_trajectory(&a, xp, xm, step, &[one, ik], stepper)?;
    let tm = propagate_trajectory(&a, xm, xp, step, &[one, -ik], stepper)?;
    let x = tm.x.clone();
    let plus: Vec<[C64; 2]> = tp.values.iter().rev().map(|v| [v[0], v[1]]).collect();
    let minus: Vec<[C64; 2]> = tm.values.iter().map(|v| [v[0], v[1]]).collect();
    let mut pair = JostPair {
        lambda,
        sqrt_lambda: k,
        x,
        plus,
        plus_log: ik * xp + tp.log_scale,
        minus,
        minus_log: -ik * xm + tm.log_scale,
        wronskian: C64::new(0.0, 0.0),
    };
    let i0 = pair
        .index_of(0.0)
        .ok_or_else(|| Error::Config("x = 0 must be a grid node".into()))?;
    pair.wronskian = pair.wronskian_at(i0);
    Ok(pair)
}

/// One Wronskian evaluation with its x-independence diagnostic.
#[derive(Clone, Debug)]
pub struct WronskianSample {
    pub lambda: C64,
    pub wronskian: C64,
    /// Relative spread of `W(x)` over `|x| <= 1`.
    pub spread: f64,
}

pub fn wronskian_trace(
    potential: &Potential,
    lambdas: &[C64],
    cutoffs: (f64, f64),
    step: f64,
) -> Result<Vec<WronskianSample>> {
    lambdas
        .par_iter()
        .map(|&l| {
            let j = jost(potential, l, cutoffs, step)?;
            Ok(WronskianSample {
                lambda: l,
                wronskian: j.wronskian,
                spread: j.wronskian_spread(1.0),
            })
        })
        .collect()
}

/// Winding number of a closed sampled curve of nonzero values.
pub fn winding_of(values: &[C64]) -> Result<i64> {
    if values.iter().any(|z| z.norm() == 0.0 || !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Winding("zero or non-finite sample".into()));
    }
    let mut total = 0.0;
    for j in 0..values.len() {
        let a = values[j];
        let b = values[(j + 1) % values.len()];
        let d = (b / a).arg();
        if d.abs() > 0.5 * PI {
            return Err(Error::Winding("argument increment exceeds pi/2; increase the node count".into()));
        }
        total += d;
    }
    Ok((total / (2.0 * PI)).round() as i64)
}

/// Residue of `1/W` at a simple zero and the Jost proportionality constant.
#[derive(Clone, Debug)]
pub struct ResidueData {
    pub eigenvalue: C64,
    /// `rho_n = (1 / 2 pi i) \oint d lambda / W`.
    pub residue: C64,
    /// `u_+(lambda_n, .) = c_n u_-(lambda_n, .)`.
    pub proportionality: C64,
    pub radius: f64,
}

/// Residue by trapezoid quadrature on a circle with 32 nodes; `c_n` by least
/// squares over `|x| <= min(|x_-|, x_+) / 4`.
pub fn residue(
    potential: &Potential,
    lambda_n: C64,
    radius: f64,
    cutoffs: (f64, f64),
    step: f64,
) -> Result<ResidueData> {
    let g = Contour::circle(lambda_n, radius, 32)?;
    let nodes = g.nodes();
    let lams: Vec<C64> = nodes.iter().map(|p| p.0).collect();
    let ws = wronskian_trace(potential, &lams, cutoffs, step)?;
    let mut rho = C64::new(0.0, 0.0);
    for ((_, w), s) in nodes.iter().zip(&ws) {
        if s.wronskian.norm() < 1e-12 {
            return Err(Error::Config(format!(
                "W vanishes on the residue circle at {}; choose another radius",
                s.lambda
            )));
        }
        rho += w / s.wronskian;
    }
    let j = jost(potential, lambda_n, cutoffs, step)?;
    let lim = 0.25 * cutoffs.0.abs().min(cutoffs.1);
    let (up, um) = (j.u_plus(), j.u_minus());
    let mut num = C64::new(0.0, 0.0);
    let mut den = 0.0;
    for (i, &x) in j.x.iter().enumerate() {
        if x.abs() <= lim {
            num += um[i].conj() * up[i];
            den += um[i].norm_sqr();
        }
    }
    Ok(ResidueData {
        eigenvalue: lambda_n,
        residue: rho,
        proportionality: num / den,
        radius,
    })
}

/// Comparison of the fitted pole coefficient of `E(lambda)` with the Jost prediction.
#[derive(Clone, Debug)]
pub struct SingularPartReport {
    pub eigenvalue: C64,
    pub residue: ResidueData,
    /// `lim (lambda - lambda_n) E(lambda)`, estimated by the mean over a circle.
    pub fitted: CMat,
    /// `rho_n (y_-^T w_j) (integral of y_+^perp . v_k)`.
    pub predicted: CMat,
    /// Sign `s` minimizing `|fitted - s predicted|`.
    pub sign: f64,
    pub mismatch: f64,
    /// Numerical rank of `fitted` at relative tolerance `1e-6`.
    pub rank: usize,
}

/// Fits the pole coefficient of `E(lambda)` at `lambda_n` from `nodes` samples on a
/// circle of radius `offset` and compares with the Jost formula.
pub fn singular_part_check(
    potential: &Potential,
    test: &TestData,
    lambda_n: C64,
    offset: f64,
    nodes: usize,
    cutoffs: (f64, f64),
    step: f64,
) -> Result<SingularPartReport> {
    let pencil = potential.pencil();
    let grid = Grid::new(cutoffs.0, cutoffs.1, step)?;
    let bc = BoundaryConditionSpec::Projection;
    let g = Contour::circle(lambda_n, offset, nodes)?;
    let s = assemble_samples(&pencil, &grid, &bc, test, &g)?;
    let (m, l) = s.shape();
    let mut fitted = CMat::zeros(m, l);
    for (lam, e) in s.nodes.iter().zip(&s.values) {
        fitted = &fitted + &e.scale((lam - lambda_n) / nodes as f64);
    }
    let res = residue(potential, lambda_n, offset, cutoffs, step)?;
    let j = jost(potential, lambda_n, cutoffs, step)?;
    if j.x.len() != grid.len() {
        return Err(Error::Dimension("Jost grid differs from the discretization grid".into()));
    }
    let compiled = test.compile(&grid)?;
    let (sm, sp) = (j.minus_log.exp(), j.plus_log.exp());
    let ym = crate::bvp::GridFunction::sample(grid, 2, |x| {
        let i = grid.index_of(x).expect("grid node");
        vec![j.minus[i][0] * sm, j.minus[i][1] * sm]
    });
    let left: Vec<C64> = compiled.functionals.iter().map(|f| f.apply(&ym)).collect();
    let right: Vec<C64> = compiled
        .rhs
        .iter()
        .map(|v| {
            (0..grid.len())
                .map(|i| {
                    let yp = [j.plus[i][0] * sp, j.plus[i][1] * sp];
                    let vi = v.at(i);
                    grid.weight(i) * (-yp[1] * vi[0] + yp[0] * vi[1])
                })
                .sum()
        })
        .collect();
    let predicted = CMat::from_fn(m, l, |a, b| res.residue * left[a] * right[b]);
    let pn = predicted.norm_fro();
    let e_plus = (&fitted - &predicted).norm_fro() / pn;
    let e_minus = (&fitted + &predicted).norm_fro() / pn;
    let (sign, mismatch) = if e_plus <= e_minus { (1.0, e_plus) } else { (-1.0, e_minus) };
    let sv = svd(&fitted)?;
    let rank = sv.sigma.iter().filter(|&&x| x > 1e-6 * sv.sigma[0]).count();
    Ok(SingularPartReport {
        eigenvalue: lambda_n,
        residue: res,
        fitted,
        predicted,
        sign,
        mismatch,
        rank,
    })
}

/// Contour pipeline on the first-order Schrödinger pencil.
pub fn spectrum_via_contour(
    potential: &Potential,
    contour: &Contour,
    grid: &Grid,
    bc: &BoundaryConditionSpec,
    test: &TestData,
    opts: &PipelineOptions,
) -> Result<SpectrumResult> {
    if contour.nodes().iter().any(|p| sqrt_branch(p.0).is_err()) {
        return Err(Error::EssentialSpectrum {
            lambda: contour.center(),
            gap: 0.0,
        });
    }
    Ok(contour_spectrum(&potential.pencil(), grid, bc, test, contour, opts)?.0)
}
