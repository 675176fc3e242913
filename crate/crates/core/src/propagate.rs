//! Fixed-step integrators for linear systems `y' = A(x) y`.

use crate::error::{Error, Result};
use crate::numkernel::{expm, qr, Lu};
use crate::{CMat, C64};
use serde::{Deserialize, Serialize};

/// One-step scheme used to transport solutions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stepper {
    /// Fourth-order Magnus (exponential) integrator on two Gauss points; exact
    /// for constant coefficients, and jumps of `A` at grid nodes are never sampled.
    #[default]
    Magnus4,
    /// Classical Runge-Kutta. Interval endpoints are sampled just inside the
    /// interval so jumps of `A` at grid nodes are seen one-sided.
    Rk4,
    /// Implicit trapezoid rule; identical to one row of the box scheme.
    Trapezoid,
}

const NUDGE: f64 = 1e-10;
const RESCALE: f64 = 1e150;

/// Number of steps of size `step` covering `length`; the ratio must be an integer.
pub fn steps_for(length: f64, step: f64) -> Result<usize> {
    if !(step > 0.0) || !(length >= 0.0) || !length.is_finite() {
        return Err(Error::Config(format!("invalid length {length} / step {step}")));
    }
    let n = (length / step).round();
    if (n * step - length).abs() > 1e-7 * step {
        return Err(Error::Config(format!("step {step} does not divide length {length}")));
    }
    Ok(n as usize)
}

/// Advances `y` (columns are solutions) from `x` to `x + h`.
pub fn advance(a: &dyn Fn(f64) -> CMat, x: f64, h: f64, y: &CMat, stepper: Stepper) -> Result<CMat> {
    match stepper {
        Stepper::Magnus4 => {
            let r = 3f64.sqrt() / 6.0;
            let a1 = a(x + (0.5 - r) * h);
            let a2 = a(x + (0.5 + r) * h);
            let comm = &a2.matmul(&a1) - &a1.matmul(&a2);
            let omega = &(&a1 + &a2).scale(C64::new(0.5 * h, 0.0)) + &comm.scale(C64::new(3f64.sqrt() / 12.0 * h * h, 0.0));
            Ok(expm(&omega).matmul(y))
        }
        Stepper::Rk4 => {
            let e = NUDGE * h;
            let a0 = a(x + e);
            let am = a(x + 0.5 * h);
            let a1 = a(x + h - e);
            let hh = C64::new(0.5 * h, 0.0);
            let k1 = a0.matmul(y);
            let k2 = am.matmul(&(y + &k1.scale(hh)));
            let k3 = am.matmul(&(y + &k2.scale(hh)));
            let k4 = a1.matmul(&(y + &k3.scale(C64::new(h, 0.0))));
            let sum = &(&k1 + &k4) + &(&k2 + &k3).scale(C64::new(2.0, 0.0));
            Ok(y + &sum.scale(C64::new(h / 6.0, 0.0)))
        }
        Stepper::Trapezoid => {
            let d = y.rows();
            let hh = C64::new(0.5 * h, 0.0);
            let lhs = &CMat::identity(d) - &a(x + h).scale(hh);
            let rhs = (&CMat::identity(d) + &a(x).scale(hh)).matmul(y);
            let lu = Lu::new(&lhs)?;
            if lu.is_singular() {
                return Err(Error::Singular(format!("trapezoid step at x = {x}, reduce the step")));
            }
            lu.solve(&rhs)
        }
    }
}

/// A transported subspace `Y = exp(log_scale) * basis * coefficients` with
/// orthonormal `basis`.
#[derive(Clone, Debug)]
pub struct OrthoPropagation {
    pub basis: CMat,
    pub coefficients: CMat,
    pub log_scale: f64,
    /// `ln det coefficients`, accumulated from the triangular factors so it stays
    /// finite when the determinant itself underflows.
    pub coefficient_log_det: f64,
}

/// Transports the columns of `init` from `x0` to `x1`, re-orthonormalizing after every step.
pub fn propagate_subspace(
    a: &dyn Fn(f64) -> CMat,
    x0: f64,
    x1: f64,
    step: f64,
    init: &CMat,
    stepper: Stepper,
) -> Result<OrthoPropagation> {
    let n = steps_for((x1 - x0).abs(), step)?;
    let h = if n == 0 { 0.0 } else { (x1 - x0) / n as f64 };
    let (mut basis, mut coefficients) =
        qr(init).ok_or_else(|| Error::DegenerateBasis("initial frame is rank deficient".into()))?;
    let k = coefficients.cols();
    let diag_log = |r: &CMat| (0..k).map(|i| r[(i, i)].re.ln()).sum::<f64>();
    let mut coefficient_log_det = diag_log(&coefficients);
    let mut log_scale = 0.0;
    for i in 0..n {
        let x = x0 + i as f64 * h;
        let y = advance(a, x, h, &basis, stepper)?;
        if !y.is_finite() {
            return Err(Error::NonFinite("frame propagation, reduce the step"));
        }
        let (q, r) = qr(&y).ok_or_else(|| {
            Error::DegenerateBasis(format!("frame collapsed at x = {}", x + h))
        })?;
        basis = q;
        coefficient_log_det += diag_log(&r);
        coefficients = r.matmul(&coefficients);
        let m = coefficients.norm_max();
        if m > 0.0 && m.is_finite() {
            coefficients = coefficients.scale(C64::new(1.0 / m, 0.0));
            log_scale += m.ln();
            coefficient_log_det -= k as f64 * m.ln();
        }
    }
    Ok(OrthoPropagation {
        basis,
        coefficients,
        log_scale,
        coefficient_log_det,
    })
}

/// A single solution sampled at every step: true values are `exp(log_scale) * values[i]`.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub x: Vec<f64>,
    pub values: Vec<Vec<C64>>,
    pub log_scale: f64,
}

/// Transports one vector from `x0` to `x1`, keeping every step. Growth is not
/// removed; stored values are rescaled jointly only when they approach overflow.
pub fn propagate_trajectory(
    a: &dyn Fn(f64) -> CMat,
    x0: f64,
    x1: f64,
    step: f64,
    init: &[C64],
    stepper: Stepper,
) -> Result<Trajectory> {
    let n = steps_for((x1 - x0).abs(), step)?;
    let h = if n == 0 { 0.0 } else { (x1 - x0) / n as f64 };
    let mut y = CMat::column_vector(init);
    let mut xs = Vec::with_capacity(n + 1);
    let mut values = Vec::with_capacity(n + 1);
    let mut log_scale = 0.0;
    xs.push(x0);
    values.push(init.to_vec());
    for i in 0..n {
        let x = x0 + i as f64 * h;
        y = advance(a, x, h, &y, stepper)?;
        if !y.is_finite() {
            return Err(Error::NonFinite("trajectory propagation"));
        }
        if y.norm_max() > RESCALE {
            let s = C64::new(1.0 / RESCALE, 0.0);
            y = y.scale(s);
            for v in values.iter_mut() {
                for z in v.iter_mut() {
                    *z *= s;
                }
            }
            log_scale += RESCALE.ln();
        }
        xs.push(if i + 1 == n { x1 } else { x + h });
        values.push(y.col(0));
    }
    Ok(Trajectory {
        x: xs,
        values,
        log_scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(x: f64) -> C64 {
        C64::new(x, 0.0)
    }

    fn rotation(_: f64) -> CMat {
        CMat::from_rows(&[vec![c(0.0), c(1.0)], vec![c(-1.0), c(0.0)]])
    }

    #[test]
    fn orders_of_accuracy() {
        // y' = [[0,1],[-1,0]] y, exact solution (cos x, -sin x)
        let err = |h: f64, s: Stepper| {
            let t = propagate_trajectory(&rotation, 0.0, 1.0, h, &[c(1.0), c(0.0)], s).unwrap();
            let y = t.values.last().unwrap();
            (y[0] - 1f64.cos()).norm().max((y[1] + 1f64.sin()).norm())
        };
        let rk = err(0.1, Stepper::Rk4) / err(0.05, Stepper::Rk4);
        assert!(err(0.1, Stepper::Magnus4) < 1e-14);
        let tr = err(0.1, Stepper::Trapezoid) / err(0.05, Stepper::Trapezoid);
        assert!((rk.log2() - 4.0).abs() < 0.2, "rk4 order {}", rk.log2());
        assert!((tr.log2() - 2.0).abs() < 0.1, "trapezoid order {}", tr.log2());
    }

    #[test]
    fn magnus_order_with_variable_coefficients() {
        let a = |x: f64| CMat::from_rows(&[vec![c(0.0), c(1.0)], vec![c(-1.0 - x * x), c(0.0)]]);
        let end = |h: f64| propagate_trajectory(&a, 0.0, 2.0, h, &[c(1.0), c(0.0)], Stepper::Magnus4).unwrap().values.last().unwrap()[0];
        let reference = end(0.001);
        let ratio = (end(0.1) - reference).norm() / (end(0.05) - reference).norm();
        assert!((ratio.log2() - 4.0).abs() < 0.3, "order {}", ratio.log2());
    }

    #[test]
    fn rk4_sees_jump_one_sided() {
        // piecewise constant rate: -1 on x < 0.5, -3 on x >= 0.5; node at the jump
        let a = |x: f64| CMat::from_fn(1, 1, |_, _| c(if x < 0.5 { -1.0 } else { -3.0 }));
        let t = propagate_trajectory(&a, 0.0, 1.0, 0.05, &[c(1.0)], Stepper::Rk4).unwrap();
        let g = |z: f64| 1.0 + z + z * z / 2.0 + z.powi(3) / 6.0 + z.powi(4) / 24.0;
        let expect = g(-0.05).powi(10) * g(-0.15).powi(10);
        assert!((t.values[20][0].re - expect).abs() < 1e-14);
    }

    #[test]
    fn subspace_tracks_growth_in_log_scale() {
        let a = |_: f64| CMat::diag(&[c(5.0), c(-5.0)]);
        let init = CMat::from_rows(&[vec![c(1.0)], vec![c(1.0)]]);
        let p = propagate_subspace(&a, 0.0, 100.0, 0.01, &init, Stepper::Rk4).unwrap();
        assert!((p.basis[(0, 0)].norm() - 1.0).abs() < 1e-12);
        let logy = p.log_scale + p.coefficients[(0, 0)].norm().ln();
        // RK4 growth factor per step vs exp(5h)
        let g: f64 = 1.0 + 0.05 + 0.05f64.powi(2) / 2.0 + 0.05f64.powi(3) / 6.0 + 0.05f64.powi(4) / 24.0;
        assert!((logy - 10_000.0 * g.ln()).abs() < 1e-8);
        let det = p.coefficients[(0, 0)].norm().ln();
        assert!((p.coefficient_log_det - det).abs() < 1e-12);
        assert!(steps_for(1.0, 0.3).is_err());
    }

    #[test]
    fn trajectory_rescales_instead_of_overflowing() {
        let a = |_: f64| CMat::from_fn(1, 1, |_, _| c(10.0));
        let t = propagate_trajectory(&a, 0.0, 80.0, 0.01, &[c(1.0)], Stepper::Rk4).unwrap();
        assert!(t.log_scale > 0.0);
        let last = t.values.last().unwrap()[0].norm().ln() + t.log_scale;
        assert!((last - 800.0).abs() < 1e-3);
        assert_eq!(t.x.len(), 8001);
        assert_eq!(*t.x.last().unwrap(), 80.0);
    }
}
