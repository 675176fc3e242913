//! FitzHugh-Nagumo traveling pulses and their point spectrum.
//!
//! Pulses solve the first-order traveling-wave system
//!
//! ```text
//! u' = p
//! p' = -c p - u + u^3/3 + v
//! v' = -Phi (u + a - b v) / c
//! ```
//!
//! and are linearized into a `d = 3` pencil with `z_1 = u`, `z_2 = u'`, `z_3 = v`.

use crate::bvp::{
    inverse_iteration, newton_eigenpair, BoundaryConditionSpec, Grid, GridFunction, NewtonOptions, RefinedEigenpair,
};
use crate::contour::{assemble_samples, Contour, HatBasis, SampleSet, TestData};
use crate::error::{Error, Result};
use crate::extract::{angle_between, generic_probe, spectrum_from_samples, PipelineOptions, RankRule, SpectrumResult};
use crate::numkernel::{eig, BlockBidiagonal, Lu};
use crate::pencil::OdePencil;
use crate::{CMat, C64};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

/// Speed guess for the slow (unstable) pulse.
pub const SLOW_SPEED_GUESS: f64 = -0.51;
/// Speed guess for the fast (stable) pulse.
pub const FAST_SPEED_GUESS: f64 = -0.81;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FhnParams {
    pub a: f64,
    pub b: f64,
    pub phi: f64,
}

impl Default for FhnParams {
    fn default() -> Self {
        FhnParams { a: 0.7, b: 0.8, phi: 0.08 }
    }
}

fn c(x: f64) -> C64 {
    C64::new(x, 0.0)
}

impl FhnParams {
    pub fn validate(&self) -> Result<()> {
        let finite = self.a.is_finite() && self.b.is_finite() && self.phi.is_finite();
        if !finite || !(self.phi > 0.0) || !(self.b > 0.0) {
            return Err(Error::Config(format!(
                "FitzHugh-Nagumo parameters need Phi > 0 and b > 0 (got a = {}, b = {}, Phi = {})",
                self.a, self.b, self.phi
            )));
        }
        Ok(())
    }

    /// Homogeneous rest state `(u*, v*)`: `u + a - b v = 0`, `v = u - u^3/3`.
    pub fn rest_state(&self) -> Result<(f64, f64)> {
        let g = |u: f64| self.b / 3.0 * u.powi(3) + (1.0 - self.b) * u + self.a;
        let dg = |u: f64| self.b * u * u + 1.0 - self.b;
        // bracket the real root of the cubic
        let mut lo = -1.0;
        let mut hi = 1.0;
        while g(lo) > 0.0 {
            lo *= 2.0;
            if lo < -1e6 {
                return Err(Error::Config("no rest state".into()));
            }
        }
        while g(hi) < 0.0 {
            hi *= 2.0;
            if hi > 1e6 {
                return Err(Error::Config("no rest state".into()));
            }
        }
        let mut u = 0.5 * (lo + hi);
        for _ in 0..200 {
            let d = dg(u);
            let next = if d.abs() > 1e-12 { u - g(u) / d } else { f64::NAN };
            u = if next > lo && next < hi { next } else { 0.5 * (lo + hi) };
            if g(u) > 0.0 {
                hi = u;
            } else {
                lo = u;
            }
            if g(u).abs() < 1e-15 || hi - lo < 1e-15 {
                break;
            }
        }
        Ok((u, u - u.powi(3) / 3.0))
    }

    pub fn field(&self, speed: f64, w: [f64; 3]) -> [f64; 3] {
        let [u, p, v] = w;
        [
            p,
            -speed * p - u + u.powi(3) / 3.0 + v,
            -self.phi * (u + self.a - self.b * v) / speed,
        ]
    }

    fn field_speed_derivative(&self, speed: f64, w: [f64; 3]) -> [f64; 3] {
        let [u, p, v] = w;
        [0.0, -p, self.phi * (u + self.a - self.b * v) / (speed * speed)]
    }

    /// `A(lambda, x)` of the linearization about a pulse with value `u` at `x`;
    /// at `lambda = 0` this is the Jacobian of the traveling-wave field.
    pub fn linear_matrix(&self, lambda: C64, speed: f64, u: f64) -> CMat {
        let mut a = CMat::zeros(3, 3);
        a[(0, 1)] = c(1.0);
        a[(1, 0)] = lambda - 1.0 + u * u;
        a[(1, 1)] = c(-speed);
        a[(1, 2)] = c(1.0);
        a[(2, 0)] = c(-self.phi / speed);
        a[(2, 2)] = (lambda + self.phi * self.b) / speed;
        a
    }
}

/// Real spectral projector onto the stable (or unstable) eigenspace.
fn spectral_projector(a: &CMat, stable: bool) -> Result<(CMat, usize)> {
    let e = eig(a)?;
    let inv = Lu::new(&e.vectors)?.inverse()?;
    let mask: Vec<C64> = e
        .values
        .iter()
        .map(|z| if (z.re < 0.0) == stable { c(1.0) } else { c(0.0) })
        .collect();
    let count = mask.iter().filter(|z| z.re > 0.0).count();
    let p = e.vectors.matmul(&CMat::diag(&mask)).matmul(&inv);
    Ok((p.map(|z| c(z.re)), count))
}

/// `k` orthonormal real rows spanning the row space of `p`, by greedy Gram-Schmidt.
fn row_basis(p: &CMat, k: usize) -> CMat {
    let d = p.cols();
    let mut rows: Vec<Vec<f64>> = (0..p.rows()).map(|i| p.row(i).iter().map(|z| z.re).collect()).collect();
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
    for _ in 0..k {
        let (best, _) = rows
            .iter()
            .enumerate()
            .map(|(i, r)| (i, r.iter().map(|x| x * x).sum::<f64>()))
            .fold((0, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        let nrm = rows[best].iter().map(|x| x * x).sum::<f64>().sqrt();
        let q: Vec<f64> = rows[best].iter().map(|x| x / nrm).collect();
        for r in rows.iter_mut() {
            let dot: f64 = r.iter().zip(&q).map(|(a, b)| a * b).sum();
            for (x, y) in r.iter_mut().zip(&q) {
                *x -= dot * y;
            }
        }
        basis.push(q);
    }
    CMat::from_fn(k, d, |i, j| c(basis[i][j]))
}

/// Sech ansatz for the pulse Newton iteration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseOptions {
    pub amplitude: f64,
    pub width: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl PulseOptions {
    pub fn slow() -> Self {
        PulseOptions {
            amplitude: 2.0,
            width: 1.0,
            tolerance: 1e-10,
            max_iterations: 12,
        }
    }

    pub fn fast() -> Self {
        PulseOptions {
            amplitude: 3.0,
            width: 2.0,
            ..Self::slow()
        }
    }
}

/// A converged traveling pulse on a grid.
#[derive(Clone, Debug)]
pub struct PulseSolution {
    pub params: FhnParams,
    pub grid: Grid,
    pub speed: f64,
    pub u: Vec<f64>,
    pub p: Vec<f64>,
    pub v: Vec<f64>,
    pub rest: (f64, f64),
    /// Max-norm residual of the discrete traveling-wave equations.
    pub residual: f64,
    pub iterations: usize,
    /// Max-norm residual after every iteration, starting with the initial guess.
    pub history: Vec<f64>,
}

impl PulseSolution {
    pub fn state(&self, i: usize) -> [f64; 3] {
        [self.u[i], self.p[i], self.v[i]]
    }

    /// `(u', u'', v')` at node `i`.
    pub fn derivative(&self, i: usize) -> [f64; 3] {
        self.params.field(self.speed, self.state(i))
    }

    /// Cubic Hermite interpolant using the traveling-wave field for slopes; the rest
    /// state outside the grid.
    pub fn state_at(&self, x: f64) -> [f64; 3] {
        let g = &self.grid;
        if x <= g.x_min || x >= g.x_max {
            let i = if x <= g.x_min { 0 } else { g.intervals };
            if (x - g.node(i)).abs() <= 1e-12 {
                return self.state(i);
            }
            return [self.rest.0, 0.0, self.rest.1];
        }
        let h = g.step();
        let i = (((x - g.x_min) / h).floor() as usize).min(g.intervals - 1);
        let t = (x - g.node(i)) / h;
        let (y0, y1) = (self.state(i), self.state(i + 1));
        let (d0, d1) = (self.derivative(i), self.derivative(i + 1));
        let h00 = (1.0 + 2.0 * t) * (1.0 - t) * (1.0 - t);
        let h10 = t * (1.0 - t) * (1.0 - t);
        let h01 = t * t * (3.0 - 2.0 * t);
        let h11 = t * t * (t - 1.0);
        std::array::from_fn(|k| h00 * y0[k] + h10 * h * d0[k] + h01 * y1[k] + h11 * h * d1[k])
    }

    /// `max |(u, v) - (u*, v*)|` at both endpoints.
    pub fn endpoint_deviation(&self) -> f64 {
        let n = self.grid.intervals;
        [0, n]
            .iter()
            .map(|&i| (self.u[i] - self.rest.0).abs().max((self.v[i] - self.rest.1).abs()))
            .fold(0.0, f64::max)
    }

    /// `(u', u'', v')`, the eigenfunction of the translational eigenvalue zero.
    pub fn translational_mode(&self) -> GridFunction {
        let mut values = Vec::with_capacity(3 * self.grid.len());
        for i in 0..self.grid.len() {
            values.extend(self.derivative(i).iter().map(|&x| c(x)));
        }
        GridFunction {
            grid: self.grid,
            dim: 3,
            values,
        }
    }

    /// Max-norm residual of the trapezoid discretization of the traveling-wave system.
    pub fn discrete_residual(&self) -> f64 {
        let h = self.grid.step();
        (0..self.grid.intervals)
            .map(|i| {
                let (f0, f1) = (self.derivative(i), self.derivative(i + 1));
                let (y0, y1) = (self.state(i), self.state(i + 1));
                (0..3)
                    .map(|k| ((y1[k] - y0[k]) / h - 0.5 * (f0[k] + f1[k])).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }

    /// Writes `x,u,p,v`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "x,u,p,v")?;
        for i in 0..self.grid.len() {
            writeln!(
                w,
                "{:.17e},{:.17e},{:.17e},{:.17e}",
                self.grid.node(i),
                self.u[i],
                self.p[i],
                self.v[i]
            )?;
        }
        Ok(())
    }
}

/// Newton's method for a pulse with unknown speed.
///
/// Unknowns per node are `(u, p, v, c, theta)`: the speed is carried as a constant
/// component and `theta' = u_0' (u - u_0)` accumulates the phase condition, so the
/// Jacobian stays block bidiagonal. Boundary rows put `w(x_-)` on the unstable and
/// `w(x_+)` on the stable subspace of the rest state, and `theta(x_-) = theta(x_+) = 0`.
pub fn compute_pulse(params: &FhnParams, speed_guess: f64, grid: &Grid, opts: &PulseOptions) -> Result<PulseSolution> {
    params.validate()?;
    if !(speed_guess.is_finite() && speed_guess != 0.0) {
        return Err(Error::Config(format!("speed guess must be finite and nonzero, got {speed_guess}")));
    }
    if !(opts.width > 0.0) || !opts.amplitude.is_finite() {
        return Err(Error::Config("pulse ansatz needs a positive width".into()));
    }
    let rest = params.rest_state()?;
    let n = grid.intervals;
    let h = grid.step();
    let xs: Vec<f64> = grid.nodes().collect();
    let sech = |x: f64| 1.0 / (x / opts.width).cosh();
    let mut u: Vec<f64> = xs.iter().map(|&x| rest.0 + opts.amplitude * sech(x)).collect();
    let mut p: Vec<f64> = xs
        .iter()
        .map(|&x| -opts.amplitude / opts.width * sech(x) * (x / opts.width).tanh())
        .collect();
    let mut v = vec![rest.1; n + 1];
    let u0 = u.clone();
    let du0 = p.clone();
    let mut theta = vec![0.0; n + 1];
    let mut speed = speed_guess;

    let projector = |s: f64, stable: bool| spectral_projector(&params.linear_matrix(c(0.0), s, rest.0), stable);
    let (ps0, k) = projector(speed, true)?;
    if k == 0 || k == 3 {
        return Err(Error::Config(format!("rest state is not a saddle at speed {speed}")));
    }
    let (pu0, _) = projector(speed, false)?;
    let left_rows = row_basis(&ps0, k);
    let right_rows = row_basis(&pu0, 3 - k);
    let boundary = |s: f64| -> Result<(CMat, CMat)> {
        Ok((left_rows.matmul(&projector(s, true)?.0), right_rows.matmul(&projector(s, false)?.0)))
    };

    const D: usize = 5;
    let zero = c(0.0);
    let one = c(1.0);
    let mut history = Vec::new();
    for iter in 0..=opts.max_iterations {
        let (bl, br) = boundary(speed)?;
        let state = |i: usize, u: &[f64], p: &[f64], v: &[f64]| [u[i], p[i], v[i]];
        let dev0: Vec<C64> = [u[0] - rest.0, p[0], v[0] - rest.1].iter().map(|&x| c(x)).collect();
        let devn: Vec<C64> = [u[n] - rest.0, p[n], v[n] - rest.1].iter().map(|&x| c(x)).collect();
        let mut r = vec![zero; (n + 1) * D];
        let rl = bl.matvec(&dev0);
        let rr = br.matvec(&devn);
        r[..k].copy_from_slice(&rl);
        r[k..3].copy_from_slice(&rr);
        r[3] = c(theta[0]);
        r[4] = c(theta[n]);
        let fields: Vec<[f64; 3]> = (0..=n).map(|i| params.field(speed, state(i, &u, &p, &v))).collect();
        let g = |i: usize| du0[i] * (u[i] - u0[i]);
        for i in 0..n {
            let row = D + i * D;
            let (y0, y1) = (state(i, &u, &p, &v), state(i + 1, &u, &p, &v));
            for a in 0..3 {
                r[row + a] = c((y1[a] - y0[a]) / h - 0.5 * (fields[i][a] + fields[i + 1][a]));
            }
            r[row + 4] = c((theta[i + 1] - theta[i]) / h - 0.5 * (g(i) + g(i + 1)));
        }
        let residual = r.iter().map(|z| z.norm()).fold(0.0, f64::max);
        history.push(residual);
        log::debug!("pulse newton iter {iter}: residual {residual:.3e}, speed {speed}");
        if !residual.is_finite() {
            return Err(Error::NonFinite("pulse Newton residual"));
        }
        if residual < opts.tolerance {
            return Ok(PulseSolution {
                params: *params,
                grid: *grid,
                speed,
                u,
                p,
                v,
                rest,
                residual,
                iterations: iter,
                history,
            });
        }
        if iter == opts.max_iterations {
            return Err(Error::NoConvergence {
                what: "pulse Newton",
                iterations: iter,
                residual,
            });
        }
        // boundary rows and their speed derivative
        let ds = 1e-6 * (1.0 + speed.abs());
        let (blp, brp) = boundary(speed + ds)?;
        let (blm, brm) = boundary(speed - ds)?;
        let dl = (&blp - &blm).scale(c(0.5 / ds)).matvec(&dev0);
        let dr = (&brp - &brm).scale(c(0.5 / ds)).matvec(&devn);
        let mut left = CMat::zeros(D, D);
        let mut right = CMat::zeros(D, D);
        left.set_block(0, 0, &bl);
        right.set_block(k, 0, &br);
        for a in 0..k {
            left[(a, 3)] = dl[a];
        }
        for a in 0..3 - k {
            right[(k + a, 3)] = dr[a];
        }
        left[(3, 4)] = one;
        right[(4, 4)] = one;
        let mut lower = Vec::with_capacity(n);
        let mut upper = Vec::with_capacity(n);
        let block = |i: usize, sign: f64| {
            let j = params.linear_matrix(c(0.0), speed, u[i]);
            let fc = params.field_speed_derivative(speed, state(i, &u, &p, &v));
            let mut m = CMat::zeros(D, D);
            for a in 0..3 {
                for b in 0..3 {
                    let id = if a == b { sign / h } else { 0.0 };
                    m[(a, b)] = c(id) - j[(a, b)] * 0.5;
                }
                m[(a, 3)] = c(-0.5 * fc[a]);
            }
            m[(3, 3)] = c(sign / h);
            m[(4, 0)] = c(-0.5 * du0[i]);
            m[(4, 4)] = c(sign / h);
            m
        };
        for i in 0..n {
            lower.push(block(i, -1.0));
            upper.push(block(i + 1, 1.0));
        }
        let lu = BlockBidiagonal::new(left, right, lower, upper)?.factor()?;
        for z in r.iter_mut() {
            *z = -*z;
        }
        lu.solve_in_place(&mut r);
        let mut dspeed = 0.0;
        for i in 0..=n {
            u[i] += r[i * D].re;
            p[i] += r[i * D + 1].re;
            v[i] += r[i * D + 2].re;
            dspeed += r[i * D + 3].re;
            theta[i] += r[i * D + 4].re;
        }
        speed += dspeed / (n + 1) as f64;
        if !(speed.is_finite() && speed != 0.0) {
            return Err(Error::NonFinite("pulse speed"));
        }
    }
    unreachable!()
}

/// The `d = 3` eigenvalue pencil of the pulse. Coefficients between grid nodes use the
/// Hermite interpolant of the pulse; the asymptotic matrices use the rest state.
pub fn linearized_pencil(pulse: &PulseSolution) -> Result<OdePencil> {
    let params = pulse.params;
    let speed = pulse.speed;
    let u_rest = pulse.rest.0;
    let (_, k) = spectral_projector(&params.linear_matrix(c(1.0), speed, u_rest), true)?;
    let shared = Arc::new(pulse.clone());
    let at_rest = move |l: C64| params.linear_matrix(l, speed, u_rest);
    let mut dl = CMat::zeros(3, 3);
    dl[(1, 0)] = c(1.0);
    dl[(2, 2)] = c(1.0 / speed);
    Ok(OdePencil::new(
        3,
        k,
        move |l, x| params.linear_matrix(l, speed, shared.state_at(x)[0]),
        at_rest,
        at_rest,
    )
    .with_lambda_derivative(move |_, _| dl.clone()))
}

/// Settings for one contour run on the pulse pencil.
#[derive(Clone, Debug)]
pub struct SpectrumConfig {
    pub center: C64,
    pub radius: f64,
    pub nodes: usize,
    /// Interval `[-length/2, length/2]`.
    pub length: f64,
    pub step: f64,
    pub bc: BoundaryConditionSpec,
    /// Point functionals on `u` at `first + j spacing`, `j = 0..functionals`.
    pub functionals: usize,
    pub functional_first: f64,
    pub functional_spacing: f64,
    pub rhs: usize,
    pub hats: usize,
    pub hat_interval: (f64, f64),
    pub seed: u64,
    pub rule: RankRule,
    pub blocks: usize,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        SpectrumConfig {
            center: c(1.0),
            radius: 1.05,
            nodes: 100,
            length: 100.0,
            step: 0.01,
            bc: BoundaryConditionSpec::Projection,
            functionals: 401,
            functional_first: -2.0,
            functional_spacing: 0.01,
            rhs: 10,
            hats: 40,
            hat_interval: (-5.0, 5.0),
            seed: 1,
            rule: RankRule::Threshold(1e-8),
            blocks: 1,
        }
    }
}

impl SpectrumConfig {
    pub fn grid(&self) -> Result<Grid> {
        Grid::symmetric(self.length, self.step)
    }

    pub fn contour(&self) -> Result<Contour> {
        Contour::circle(self.center, self.radius, self.nodes)
    }

    /// Point functionals on `u` and random hat right-hand sides `(0, f, g / c)`.
    pub fn test_data(&self, speed: f64) -> Result<TestData> {
        let xs: Vec<f64> = (0..self.functionals)
            .map(|j| self.functional_first + j as f64 * self.functional_spacing)
            .collect();
        let basis = HatBasis::uniform(self.hats, self.hat_interval.0, self.hat_interval.1);
        let rhs = TestData::random_hat_rhs(&basis, &[c(0.0), c(1.0), c(1.0 / speed)], self.rhs, self.seed);
        TestData::new(3, TestData::point_functionals(&xs, 0), rhs)
    }

    fn pipeline(&self) -> PipelineOptions {
        PipelineOptions {
            rule: self.rule,
            blocks: self.blocks,
            ..PipelineOptions::default()
        }
    }
}

/// Resolvent samples of the pulse pencil for a configuration.
pub fn spectrum_samples(pulse: &PulseSolution, cfg: &SpectrumConfig) -> Result<SampleSet> {
    let pencil = linearized_pencil(pulse)?;
    assemble_samples(&pencil, &cfg.grid()?, &cfg.bc, &cfg.test_data(pulse.speed)?, &cfg.contour()?)
}

/// Extraction from precomputed samples; `rule` overrides the configured rank rule.
pub fn spectrum_from(pulse: &PulseSolution, cfg: &SpectrumConfig, samples: &SampleSet, rule: RankRule) -> Result<SpectrumResult> {
    let pencil = linearized_pencil(pulse)?;
    let opts = PipelineOptions { rule, ..cfg.pipeline() };
    spectrum_from_samples(&pencil, &cfg.grid()?, &cfg.bc, &cfg.test_data(pulse.speed)?, &cfg.contour()?, samples, &opts)
}

pub fn spectrum(pulse: &PulseSolution, cfg: &SpectrumConfig) -> Result<(SpectrumResult, SampleSet)> {
    let samples = spectrum_samples(pulse, cfg)?;
    let r = spectrum_from(pulse, cfg, &samples, cfg.rule)?;
    Ok((r, samples))
}

/// Newton refinement of a discrete eigenpair with projection boundary rows, seeded by
/// one inverse-iteration step at `guess`.
pub fn reference_eigenpair(pulse: &PulseSolution, guess: C64, grid: &Grid) -> Result<RefinedEigenpair> {
    let pencil = linearized_pencil(pulse)?;
    let bc = BoundaryConditionSpec::Projection;
    let probe = generic_probe(*grid, 3);
    let start = match inverse_iteration(&pencil, guess, grid, &bc, &probe) {
        Err(Error::OnSpectrum { .. }) => inverse_iteration(&pencil, guess + 1e-9, grid, &bc, &probe)?,
        other => other?,
    };
    newton_eigenpair(&pencil, grid, &bc, guess, &start, NewtonOptions::default())
}

/// Reference eigenpair a sweep is measured against.
#[derive(Clone, Debug)]
pub struct Reference {
    pub eigenvalue: C64,
    pub eigenfunction: GridFunction,
}

impl From<RefinedEigenpair> for Reference {
    fn from(r: RefinedEigenpair) -> Self {
        Reference {
            eigenvalue: r.lambda,
            eigenfunction: r.eigenfunction,
        }
    }
}

impl Reference {
    /// Eigenvalue error and eigenfunction angle of the interior eigenvalue closest to the reference.
    pub fn compare(&self, r: &SpectrumResult) -> Result<(f64, f64)> {
        let (idx, err) = r
            .eigenvalues
            .iter()
            .enumerate()
            .filter(|(i, _)| r.inside[*i])
            .map(|(i, l)| (i, (l - self.eigenvalue).norm()))
            .fold(None, |acc: Option<(usize, f64)>, x| match acc {
                Some(a) if a.1 <= x.1 => Some(a),
                _ => Some(x),
            })
            .ok_or_else(|| Error::Config("no eigenvalue inside the contour".into()))?;
        let angle = match r.eigenfunctions.get(idx) {
            Some(f) => self.angle_to(f)?,
            None => f64::NAN,
        };
        Ok((err, angle))
    }

    /// Angle to `f` over the nodes `f` shares with the reference grid.
    pub fn angle_to(&self, f: &GridFunction) -> Result<f64> {
        let reference = &self.eigenfunction;
        let mut got = Vec::new();
        let mut want = Vec::new();
        for (i, x) in f.grid.nodes().enumerate() {
            if let Some(j) = reference.grid.index_of(x) {
                got.extend_from_slice(f.at(i));
                want.extend_from_slice(reference.at(j));
            }
        }
        if got.is_empty() {
            return Err(Error::Dimension("eigenfunction grids share no nodes".into()));
        }
        Ok(angle_between(&got, &want))
    }
}

/// Rows of a sweep plus the points that failed.
#[derive(Clone, Debug)]
pub struct SweepTable<R> {
    pub rows: Vec<R>,
    pub failures: Vec<String>,
}

impl<R> Default for SweepTable<R> {
    fn default() -> Self {
        SweepTable {
            rows: Vec::new(),
            failures: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IntervalRow {
    pub length: f64,
    pub bc_kind: String,
    pub err_eval: f64,
    pub angle_evec: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QuadratureRow {
    pub nodes: usize,
    pub err_eval: f64,
    pub angle_evec: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankRow {
    pub kappa: usize,
    pub re: f64,
    pub im: f64,
    pub inside: bool,
    pub residual: f64,
}

/// Eigenvalue error against interval length, one curve per boundary condition.
pub fn interval_sweep(
    pulse: &PulseSolution,
    base: &SpectrumConfig,
    reference: &Reference,
    lengths: &[f64],
    bcs: &[BoundaryConditionSpec],
) -> SweepTable<IntervalRow> {
    let points: Vec<(BoundaryConditionSpec, f64)> =
        bcs.iter().flat_map(|b| lengths.iter().map(move |&l| (b.clone(), l))).collect();
    let results: Vec<_> = points
        .par_iter()
        .map(|(bc, length)| {
            let cfg = SpectrumConfig {
                length: *length,
                bc: bc.clone(),
                ..base.clone()
            };
            let t = Instant::now();
            let out = spectrum(pulse, &cfg).and_then(|(r, _)| reference.compare(&r));
            (bc.kind(), *length, out, t.elapsed().as_secs_f64())
        })
        .collect();
    let mut table = SweepTable::default();
    for (kind, length, out, seconds) in results {
        let (err_eval, angle_evec) = out.unwrap_or_else(|e| {
            table.failures.push(format!("{kind} L = {length}: {e}"));
            (f64::NAN, f64::NAN)
        });
        table.rows.push(IntervalRow {
            length,
            bc_kind: kind.to_string(),
            err_eval,
            angle_evec,
            seconds,
        });
    }
    table
}

/// Eigenvalue error against the number of quadrature nodes.
pub fn quadrature_sweep(
    pulse: &PulseSolution,
    base: &SpectrumConfig,
    reference: &Reference,
    nodes: &[usize],
) -> SweepTable<QuadratureRow> {
    let results: Vec<_> = nodes
        .par_iter()
        .map(|&m| {
            let cfg = SpectrumConfig { nodes: m, ..base.clone() };
            (m, spectrum(pulse, &cfg).and_then(|(r, _)| reference.compare(&r)))
        })
        .collect();
    let mut table = SweepTable::default();
    for (m, out) in results {
        let (err_eval, angle_evec) = out.unwrap_or_else(|e| {
            table.failures.push(format!("M = {m}: {e}"));
            (f64::NAN, f64::NAN)
        });
        table.rows.push(QuadratureRow {
            nodes: m,
            err_eval,
            angle_evec,
        });
    }
    table
}

/// All eigenvalues for each prescribed rank, from one set of samples.
pub fn rank_sweep(pulse: &PulseSolution, base: &SpectrumConfig, kappas: &[usize]) -> Result<SweepTable<RankRow>> {
    let samples = spectrum_samples(pulse, base)?;
    let mut table = SweepTable::default();
    for &kappa in kappas {
        match spectrum_from(pulse, base, &samples, RankRule::Fixed(kappa)) {
            Ok(r) => {
                for (i, l) in r.eigenvalues.iter().enumerate() {
                    table.rows.push(RankRow {
                        kappa,
                        re: l.re,
                        im: l.im,
                        inside: r.inside[i],
                        residual: r.residuals[i],
                    });
                }
            }
            Err(e) => table.failures.push(format!("kappa = {kappa}: {e}")),
        }
    }
    Ok(table)
}

pub fn write_interval_csv<W: Write>(rows: &[IntervalRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "L,bc_kind,err_eval,angle_evec,seconds")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{:.17e},{:.17e},{:.3}",
            r.length, r.bc_kind, r.err_eval, r.angle_evec, r.seconds
        )?;
    }
    Ok(())
}

pub fn write_quadrature_csv<W: Write>(rows: &[QuadratureRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "M,err_eval,angle_evec")?;
    for r in rows {
        writeln!(w, "{},{:.17e},{:.17e}", r.nodes, r.err_eval, r.angle_evec)?;
    }
    Ok(())
}

pub fn write_rank_csv<W: Write>(rows: &[RankRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "kappa,re_eigenvalue,im_eigenvalue,inside,residual")?;
    for r in rows {
        writeln!(w, "{},{:.17e},{:.17e},{},{:.17e}", r.kappa, r.re, r.im, r.inside, r.residual)?;
    }
    Ok(())
}

/// Exponential decay rate of an error curve before it reaches its floor.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecayFit {
    /// Least-squares slope of `ln err` against the sweep variable.
    pub slope: f64,
    /// Leading points used in the fit.
    pub points: usize,
    /// Smallest error on the curve.
    pub floor: f64,
}

/// Fits the leading run of points on which each error is at most `factor` times the
/// previous one and stays above `floor_margin` times the smallest error of the curve.
/// Needs at least two points.
pub fn decay_fit(x: &[f64], err: &[f64], factor: f64, floor_margin: f64) -> Option<DecayFit> {
    if err.is_empty() || err.iter().any(|e| !e.is_finite() || *e <= 0.0) {
        return None;
    }
    let floor = err.iter().copied().fold(f64::INFINITY, f64::min);
    let mut end = 1;
    while end < err.len() && err[end] <= factor * err[end - 1] && err[end] > floor_margin * floor {
        end += 1;
    }
    if end < 2 {
        return None;
    }
    let xs = &x[..end];
    let ys: Vec<f64> = err[..end].iter().map(|e| e.ln()).collect();
    let mx = xs.iter().sum::<f64>() / end as f64;
    let my = ys.iter().sum::<f64>() / end as f64;
    let sxy: f64 = xs.iter().zip(&ys).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = xs.iter().map(|a| (a - mx) * (a - mx)).sum();
    Some(DecayFit {
        slope: sxy / sxx,
        points: end,
        floor,
    })
}
