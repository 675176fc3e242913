//! Evans function of an [`OdePencil`], its normalized variant, quasi-projectors,
//! the derivative at simple zeros and zero counting along a contour.
//!
//! Frames are transported with per-step re-orthonormalization, so a frame is
//! stored as `P = exp(p_log / k) * p * p_coefficients` with orthonormal `p`, and
//! likewise for `Q`; `p_log` is a log-determinant scale. `E(lambda) = det(P|Q)`
//! with the `+inf` block first.

use crate::contour::Contour;
use crate::error::{Error, Result};
use crate::numkernel::{adjugate, det, qr, svd, Lu};
use crate::pencil::{asymptotic_splitting, OdePencil};
use crate::propagate::{propagate_subspace, Stepper};
use crate::{CMat, C64};
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::sync::Arc;

/// Initial data at `x = +-L` for a given `(lambda, L)`.
pub type InitFn = Arc<dyn Fn(C64, f64) -> Result<FrameInit> + Send + Sync>;

/// Bases at the far ends: solutions decaying at `+inf` start from
/// `exp(plus_log) * plus` at `x = +L`, those decaying at `-inf` from
/// `exp(minus_log) * minus` at `x = -L`.
#[derive(Clone, Debug)]
pub struct FrameInit {
    pub plus: CMat,
    pub plus_log: C64,
    pub minus: CMat,
    pub minus_log: C64,
}

/// Integration settings for [`subspace_frame_with`].
#[derive(Clone)]
pub struct FrameOptions {
    pub half_length: f64,
    pub step: f64,
    pub stepper: Stepper,
    init: Option<InitFn>,
}

impl fmt::Debug for FrameOptions {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FrameOptions")
            .field("half_length", &self.half_length)
            .field("step", &self.step)
            .field("stepper", &self.stepper)
            .field("explicit_init", &self.init.is_some())
            .finish()
    }
}

impl FrameOptions {
    pub fn new(half_length: f64, step: f64) -> Self {
        FrameOptions {
            half_length,
            step,
            stepper: Stepper::default(),
            init: None,
        }
    }

    pub fn stepper(mut self, stepper: Stepper) -> Self {
        self.stepper = stepper;
        self
    }

    /// Replaces the asymptotic eigenbases by caller-supplied data. The data must
    /// depend holomorphically on `lambda`; no gauge fixing is applied to it.
    pub fn with_initial_data(
        mut self,
        f: impl Fn(C64, f64) -> Result<FrameInit> + Send + Sync + 'static,
    ) -> Self {
        self.init = Some(Arc::new(f));
        self
    }

    pub fn has_explicit_init(&self) -> bool {
        self.init.is_some()
    }
}

/// Eigenbases of `A_+` (stable) and `A_-` (unstable), scaled by
/// `exp(L * sum mu)` so that frames at `x = 0` have a limit as `L` grows.
pub fn asymptotic_init(pencil: &OdePencil, lambda: C64, half_length: f64) -> Result<FrameInit> {
    let s = asymptotic_splitting(pencil, lambda)?;
    let stable: C64 = s.eigenvalues_plus.iter().filter(|z| z.re < 0.0).sum();
    let unstable: C64 = s.eigenvalues_minus.iter().filter(|z| z.re > 0.0).sum();
    Ok(FrameInit {
        plus: s.stable_plus,
        plus_log: stable * half_length,
        minus: s.unstable_minus,
        minus_log: -unstable * half_length,
    })
}

/// Bases of the two decaying subspaces at `x = 0`.
#[derive(Clone, Debug)]
pub struct SubspaceFrame {
    pub lambda: C64,
    pub p: CMat,
    pub p_coefficients: CMat,
    pub p_log: C64,
    /// `ln det p_coefficients`, tracked so it survives underflow of the determinant.
    pub p_log_det: C64,
    pub q: CMat,
    pub q_coefficients: CMat,
    pub q_log: C64,
    pub q_log_det: C64,
    /// Far-end data the frame was started from, before any gauge change.
    pub initial_plus: CMat,
    pub initial_minus: CMat,
    /// Whether the initial data is holomorphic in `lambda` as supplied.
    pub holomorphic_init: bool,
    pub half_length: f64,
    pub step: f64,
}

impl SubspaceFrame {
    /// Frame from explicit bases `P` (d x k) and `Q` (d x (d-k)).
    pub fn from_bases(lambda: C64, p: &CMat, q: &CMat) -> Result<Self> {
        if p.rows() != q.rows() || p.cols() + q.cols() != p.rows() {
            return Err(Error::Dimension(format!("frame blocks {:?} and {:?}", p.shape(), q.shape())));
        }
        let (pp, pr) = qr(p).ok_or_else(|| Error::DegenerateBasis("P is rank deficient".into()))?;
        let (qq, qr_) = qr(q).ok_or_else(|| Error::DegenerateBasis("Q is rank deficient".into()))?;
        Ok(SubspaceFrame {
            lambda,
            p: pp,
            p_log_det: det(&pr)?.ln(),
            p_coefficients: pr,
            p_log: C64::new(0.0, 0.0),
            q: qq,
            q_log_det: det(&qr_)?.ln(),
            q_coefficients: qr_,
            q_log: C64::new(0.0, 0.0),
            initial_plus: p.clone(),
            initial_minus: q.clone(),
            holomorphic_init: true,
            half_length: 0.0,
            step: 0.0,
        })
    }

    pub fn dim(&self) -> usize {
        self.p.rows()
    }

    pub fn stable_dim(&self) -> usize {
        self.p.cols()
    }

    /// Right-multiplies the `P` and `Q` bases by `gp` and `gq`.
    pub fn gauge(&self, gp: &CMat, gq: &CMat) -> Self {
        let mut f = self.clone();
        f.p_coefficients = self.p_coefficients.matmul(gp);
        f.q_coefficients = self.q_coefficients.matmul(gq);
        f.p_log_det += det(gp).map(|z| z.ln()).unwrap_or(C64::new(f64::NAN, f64::NAN));
        f.q_log_det += det(gq).map(|z| z.ln()).unwrap_or(C64::new(f64::NAN, f64::NAN));
        f.holomorphic_init = true;
        f
    }

    /// `(p|q)`, the frame with orthonormal blocks.
    pub fn relative_matrix(&self) -> CMat {
        CMat::hstack(&[&self.p, &self.q])
    }

    /// `(P|Q)` at true scale; may overflow for long intervals.
    pub fn matrix(&self) -> CMat {
        let (k, m) = (self.stable_dim() as f64, (self.dim() - self.stable_dim()) as f64);
        let p = self.p.matmul(&self.p_coefficients).scale((self.p_log / k).exp());
        let q = self.q.matmul(&self.q_coefficients).scale((self.q_log / m).exp());
        CMat::hstack(&[&p, &q])
    }

    /// `det(p|q)`.
    pub fn relative_det(&self) -> C64 {
        det(&self.relative_matrix()).unwrap_or(C64::new(f64::NAN, f64::NAN))
    }

    /// `log det B` where `(P|Q) = (p|q) B`.
    pub fn log_scale(&self) -> C64 {
        self.p_log + self.q_log + self.p_log_det + self.q_log_det
    }

    /// `log E`; the real part is `-inf` at an exact zero.
    pub fn log_evans(&self) -> C64 {
        self.relative_det().ln() + self.log_scale()
    }

    pub fn evans(&self) -> C64 {
        self.relative_det() * self.log_scale().exp()
    }

    /// `E_0 = det(P_0|Q_0)` with `det(P_0^T P_0) = det(Q_0^T Q_0) = 1` (plain
    /// transpose). Defined up to sign; the principal square root is taken.
    pub fn normalized_evans(&self) -> Result<C64> {
        let dp = det(&self.p.transpose().matmul(&self.p))?;
        let dq = det(&self.q.transpose().matmul(&self.q))?;
        if dp.norm() < 1e-12 || dq.norm() < 1e-12 {
            return Err(Error::DegenerateBasis(format!(
                "det(P^T P) = {:.3e}, det(Q^T Q) = {:.3e}: normalization undefined near lambda = {}",
                dp.norm(),
                dq.norm(),
                self.lambda
            )));
        }
        Ok(self.relative_det() / (dp.sqrt() * dq.sqrt()))
    }

    /// Smallest singular value of `(p|q)`.
    pub fn min_singular_value(&self) -> f64 {
        svd(&self.relative_matrix())
            .map(|s| *s.sigma.last().unwrap_or(&0.0))
            .unwrap_or(f64::NAN)
    }

    /// Quasi-projectors relative to the orthonormal blocks.
    pub fn quasi_projectors(&self) -> QuasiProjectors {
        let k = self.stable_dim();
        let d = self.dim();
        let adj = adjugate(&self.relative_matrix());
        QuasiProjectors {
            yu: self.p.matmul(&adj.row_block(0, k)),
            yv: self.q.matmul(&adj.row_block(k, d)),
            evans_relative: self.relative_det(),
            log_scale: self.log_scale(),
        }
    }
}

/// `Y_U = p R^T`, `Y_V = q S^T` where `adj(p|q) = (R^T; S^T)`. Multiplying by
/// `exp(log_scale)` gives the quasi-projectors of `(P|Q)`.
#[derive(Clone, Debug)]
pub struct QuasiProjectors {
    pub yu: CMat,
    pub yv: CMat,
    pub evans_relative: C64,
    pub log_scale: C64,
}

impl QuasiProjectors {
    pub fn scaled(&self) -> (CMat, CMat) {
        let s = self.log_scale.exp();
        (self.yu.scale(s), self.yv.scale(s))
    }
}

pub fn evans(frame: &SubspaceFrame) -> C64 {
    frame.evans()
}

pub fn normalized_evans(frame: &SubspaceFrame) -> Result<C64> {
    frame.normalized_evans()
}

pub fn quasi_projectors(frame: &SubspaceFrame) -> QuasiProjectors {
    frame.quasi_projectors()
}

/// `E_0` along an ordered chain of frames with the sign continued from node to node.
pub fn normalized_evans_along(frames: &[SubspaceFrame]) -> Result<Vec<C64>> {
    let mut out: Vec<C64> = Vec::with_capacity(frames.len());
    for f in frames {
        let mut v = f.normalized_evans()?;
        if let Some(&prev) = out.last() {
            if (v + prev).norm() < (v - prev).norm() {
                v = -v;
            }
        }
        out.push(v);
    }
    Ok(out)
}

pub fn subspace_frame(pencil: &OdePencil, lambda: C64, half_length: f64, step: f64) -> Result<SubspaceFrame> {
    subspace_frame_with(pencil, lambda, &FrameOptions::new(half_length, step))
}

pub fn subspace_frame_with(pencil: &OdePencil, lambda: C64, opts: &FrameOptions) -> Result<SubspaceFrame> {
    let l = opts.half_length;
    if !(l > 0.0) {
        return Err(Error::Config("half_length must be positive".into()));
    }
    let init = match &opts.init {
        Some(f) => f(lambda, l)?,
        None => asymptotic_init(pencil, lambda, l)?,
    };
    let (d, k) = (pencil.dim(), pencil.stable_dim());
    if init.plus.shape() != (d, k) || init.minus.shape() != (d, d - k) {
        return Err(Error::Dimension(format!(
            "initial data {:?}/{:?} for d = {d}, k = {k}",
            init.plus.shape(),
            init.minus.shape()
        )));
    }
    let a = |x: f64| pencil.coefficient(lambda, x);
    let plus = propagate_subspace(&a, l, 0.0, opts.step, &init.plus, opts.stepper)?;
    let minus = propagate_subspace(&a, -l, 0.0, opts.step, &init.minus, opts.stepper)?;
    Ok(SubspaceFrame {
        lambda,
        p: plus.basis,
        p_coefficients: plus.coefficients,
        p_log: init.plus_log + k as f64 * plus.log_scale,
        p_log_det: C64::new(plus.coefficient_log_det, 0.0),
        q: minus.basis,
        q_coefficients: minus.coefficients,
        q_log: init.minus_log + (d - k) as f64 * minus.log_scale,
        q_log_det: C64::new(minus.coefficient_log_det, 0.0),
        initial_plus: init.plus,
        initial_minus: init.minus,
        holomorphic_init: opts.init.is_some(),
        half_length: l,
        step: opts.step,
    })
}

/// `(B^H V)^{-1}` and the smallest singular value of `B^H V`.
fn gauge_factor(b: &CMat, v: &CMat) -> Result<(CMat, f64)> {
    let o = b.adjoint().matmul(v);
    let smin = *svd(&o)?.sigma.last().unwrap_or(&0.0);
    let lu = Lu::new(&o)?;
    if lu.is_singular() {
        return Err(Error::Alignment { overlap: 0.0 });
    }
    Ok((lu.inverse()?, smin))
}

/// Re-expresses `frame` in the holomorphic gauge `V (V_ref^H V)^{-1}` defined by
/// the far-end data of `reference`. Frames with holomorphic data are returned as is.
pub fn reference_gauged(frame: &SubspaceFrame, reference: &SubspaceFrame) -> Result<SubspaceFrame> {
    if frame.holomorphic_init {
        return Ok(frame.clone());
    }
    let (gp, _) = gauge_factor(&reference.initial_plus, &frame.initial_plus)?;
    let (gq, _) = gauge_factor(&reference.initial_minus, &frame.initial_minus)?;
    Ok(frame.gauge(&gp, &gq))
}

fn frames_at(pencil: &OdePencil, lambdas: &[C64], opts: &FrameOptions) -> Result<Vec<SubspaceFrame>> {
    lambdas
        .par_iter()
        .map(|&l| subspace_frame_with(pencil, l, opts))
        .collect()
}

/// `E'(lambda_0)` from `v_0^T adj(Y) Y' v_0` given frames at `lambda_0` and
/// `lambda_0 -+ delta`, all in a common holomorphic gauge.
pub fn evans_derivative_from(
    at: &SubspaceFrame,
    minus: &SubspaceFrame,
    plus: &SubspaceFrame,
    delta: f64,
) -> Result<C64> {
    let k = at.stable_dim();
    let d = at.dim();
    let s = svd(&at.relative_matrix())?;
    let smax = s.sigma[0];
    let kernel = s.sigma.iter().filter(|&&x| x < 1e-4 * smax).count();
    if kernel != 1 {
        return Err(Error::NonSimpleZero { lambda: at.lambda });
    }
    let v_rel = s.v.col(d - 1);
    // kernel vector of the scaled frame: undo the block coefficients
    let vp = Lu::new(&at.p_coefficients)?.solve_vec(&v_rel[..k])?;
    let vq = Lu::new(&at.q_coefficients)?.solve_vec(&v_rel[k..])?;
    let mut v0: Vec<C64> = vp.into_iter().chain(vq).collect();
    let vtv: C64 = v0.iter().map(|z| z * z).sum();
    let vn: f64 = v0.iter().map(|z| z.norm_sqr()).sum();
    if vtv.norm() < 1e-8 * vn {
        return Err(Error::DegenerateBasis("kernel vector is isotropic, v^T v = 0".into()));
    }
    let sv = vtv.sqrt();
    for z in v0.iter_mut() {
        *z /= sv;
    }
    let scaled = |f: &SubspaceFrame| {
        let p = f.p.matmul(&f.p_coefficients).scale(((f.p_log - at.p_log) / k as f64).exp());
        let q = f.q.matmul(&f.q_coefficients).scale(((f.q_log - at.q_log) / (d - k) as f64).exp());
        CMat::hstack(&[&p, &q])
    };
    let y0 = scaled(at);
    let dy = (&scaled(plus) - &scaled(minus)).scale(C64::new(0.5 / delta, 0.0));
    let w = adjugate(&y0).matmul(&dy).matvec(&v0);
    let val: C64 = v0.iter().zip(&w).map(|(a, b)| a * b).sum();
    Ok(val * (at.p_log + at.q_log).exp())
}

/// `E'(lambda_0)` at a numerical simple zero; `delta` is the difference step
/// (typically `1e-5` times the contour scale).
pub fn evans_derivative(pencil: &OdePencil, lambda0: C64, opts: &FrameOptions, delta: f64) -> Result<C64> {
    let dl = C64::new(delta, 0.0);
    let fr = frames_at(pencil, &[lambda0, lambda0 - dl, lambda0 + dl], opts)?;
    let m = reference_gauged(&fr[1], &fr[0])?;
    let p = reference_gauged(&fr[2], &fr[0])?;
    let a = reference_gauged(&fr[0], &fr[0])?;
    evans_derivative_from(&a, &m, &p, delta)
}

/// Newton iteration on `E` from `guess`, differentiating by central differences.
pub fn refine_zero(pencil: &OdePencil, guess: C64, opts: &FrameOptions, delta: f64) -> Result<C64> {
    let mut lam = guess;
    let dl = C64::new(delta, 0.0);
    let mut last = f64::INFINITY;
    for _ in 0..30 {
        let fr = frames_at(pencil, &[lam, lam - dl, lam + dl], opts)?;
        let e0 = reference_gauged(&fr[0], &fr[0])?.evans();
        let em = reference_gauged(&fr[1], &fr[0])?.evans();
        let ep = reference_gauged(&fr[2], &fr[0])?.evans();
        let de = (ep - em) / (2.0 * delta);
        if de.norm() == 0.0 {
            return Err(Error::NonSimpleZero { lambda: lam });
        }
        let step = e0 / de;
        lam -= step;
        last = step.norm();
        if last < 1e-13 * lam.norm().max(1.0) {
            return Ok(lam);
        }
    }
    Err(Error::NoConvergence {
        what: "Evans zero refinement",
        iterations: 30,
        residual: last,
    })
}

/// One row of an Evans trace.
#[derive(Clone, Debug, Serialize)]
pub struct EvansSample {
    pub lambda: C64,
    pub evans: C64,
    pub normalized: C64,
    pub min_singular_value: f64,
}

/// How frames along a contour were brought into a common gauge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GaugeKind {
    /// Initial data already holomorphic.
    Holomorphic,
    /// One reference frame for all nodes.
    Reference,
    /// Each node gauged against its predecessor, with a closure correction.
    Chain,
}

/// Result of [`winding_number`].
#[derive(Clone, Debug, Serialize)]
pub struct Winding {
    pub winding: i64,
    /// Accumulated argument over `2 pi` before the closure correction.
    pub raw: f64,
    /// Largest change of the per-step argument increment, in turns.
    pub drift: f64,
    pub min_abs_normalized: f64,
    pub gauge: GaugeKind,
    pub trace: Vec<EvansSample>,
}

/// Overlap below which a single reference gauge is abandoned for chain gauging.
const REFERENCE_OVERLAP: f64 = 0.25;

fn gauged_loop(frames: &[SubspaceFrame]) -> Result<(Vec<SubspaceFrame>, SubspaceFrame, GaugeKind)> {
    let n = frames.len();
    if frames[0].holomorphic_init {
        return Ok((frames.to_vec(), frames[0].clone(), GaugeKind::Holomorphic));
    }
    let r = &frames[0];
    let mut worst: f64 = 1.0;
    for f in frames {
        let (_, sp) = gauge_factor(&r.initial_plus, &f.initial_plus)?;
        let (_, sq) = gauge_factor(&r.initial_minus, &f.initial_minus)?;
        worst = worst.min(sp).min(sq);
    }
    if worst >= REFERENCE_OVERLAP {
        let g: Result<Vec<_>> = frames.iter().map(|f| reference_gauged(f, r)).collect();
        let g = g?;
        let close = g[0].clone();
        return Ok((g, close, GaugeKind::Reference));
    }
    let mut out = Vec::with_capacity(n);
    let mut bp = r.initial_plus.clone();
    let mut bq = r.initial_minus.clone();
    out.push(r.gauge(&CMat::identity(bp.cols()), &CMat::identity(bq.cols())));
    for f in frames.iter().skip(1).chain(std::iter::once(r)) {
        let (gp, sp) = gauge_factor(&bp, &f.initial_plus)?;
        let (gq, sq) = gauge_factor(&bq, &f.initial_minus)?;
        let scale_p = bp.norm_fro() / (bp.cols() as f64).sqrt();
        let scale_q = bq.norm_fro() / (bq.cols() as f64).sqrt();
        if sp < 1e-3 * scale_p || sq < 1e-3 * scale_q {
            return Err(Error::Winding(format!(
                "consecutive frames nearly orthogonal near lambda = {}, increase the node count",
                f.lambda
            )));
        }
        bp = f.initial_plus.matmul(&gp);
        bq = f.initial_minus.matmul(&gq);
        out.push(f.gauge(&gp, &gq));
    }
    let close = out.pop().expect("closing frame");
    Ok((out, close, GaugeKind::Chain))
}

fn wrap(a: f64) -> f64 {
    let mut x = a % (2.0 * PI);
    if x > PI {
        x -= 2.0 * PI;
    } else if x <= -PI {
        x += 2.0 * PI;
    }
    x
}

/// Evans function along an ordered node list, gauge-continued; `E_0` carries a
/// continued sign.
pub fn evans_trace(pencil: &OdePencil, nodes: &[C64], opts: &FrameOptions) -> Result<Vec<EvansSample>> {
    if nodes.is_empty() {
        return Ok(Vec::new());
    }
    let frames = frames_at(pencil, nodes, opts)?;
    let (g, _, _) = gauged_loop(&frames)?;
    samples_of(&g)
}

fn samples_of(g: &[SubspaceFrame]) -> Result<Vec<EvansSample>> {
    let e0 = normalized_evans_along(g)?;
    Ok(g.iter()
        .zip(e0)
        .map(|(f, n)| EvansSample {
            lambda: f.lambda,
            evans: f.log_evans().exp(),
            normalized: n,
            min_singular_value: f.min_singular_value(),
        })
        .collect())
}

/// Number of zeros of `E` inside `contour` from the accumulated argument along its nodes.
pub fn winding_number(pencil: &OdePencil, contour: &Contour, opts: &FrameOptions) -> Result<Winding> {
    let nodes: Vec<C64> = contour.nodes().into_iter().map(|(l, _)| l).collect();
    let frames = frames_at(pencil, &nodes, opts)?;
    let (g, close, kind) = gauged_loop(&frames)?;
    let trace = samples_of(&g)?;
    let min_abs = trace.iter().map(|s| s.normalized.norm()).fold(f64::INFINITY, f64::min);
    if !(min_abs > 1e-8) {
        return Err(Error::Winding(format!(
            "Evans function nearly vanishes on the contour (min |E_0| = {min_abs:.3e}); move the contour or increase the node count"
        )));
    }
    let mut logs: Vec<C64> = g.iter().map(|f| f.log_evans()).collect();
    logs.push(close.log_evans());
    let inc: Vec<f64> = logs.windows(2).map(|w| wrap((w[1] - w[0]).im)).collect();
    let total: f64 = inc.iter().sum();
    let holonomy = wrap((logs[logs.len() - 1] - logs[0]).im);
    let n = inc.len();
    let drift = (0..n)
        .map(|j| (inc[j] - inc[(j + n - 1) % n]).abs())
        .fold(0.0, f64::max)
        / (2.0 * PI);
    let raw = total / (2.0 * PI);
    let corrected = (total - holonomy) / (2.0 * PI);
    let winding = corrected.round();
    if drift > 0.1 || (corrected - winding).abs() > 0.1 {
        return Err(Error::Winding(format!(
            "argument increments unresolved (drift {drift:.3} turns); increase the node count"
        )));
    }
    Ok(Winding {
        winding: winding as i64,
        raw,
        drift,
        min_abs_normalized: min_abs,
        gauge: kind,
        trace,
    })
}

/// CSV with columns `re_lambda, im_lambda, re_evans, im_evans, re_normalized,
/// im_normalized, min_singular_value`.
pub fn write_trace_csv<W: Write>(samples: &[EvansSample], mut w: W) -> std::io::Result<()> {
    writeln!(w, "re_lambda,im_lambda,re_evans,im_evans,re_normalized,im_normalized,min_singular_value")?;
    for s in samples {
        writeln!(
            w,
            "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
            s.lambda.re, s.lambda.im, s.evans.re, s.evans.im, s.normalized.re, s.normalized.im, s.min_singular_value
        )?;
    }
    Ok(())
}
