//! Subcommand implementations. Each returns its artifacts in memory; nothing is
//! written until the whole run has succeeded.

use crate::config::*;
use crate::error::CliError;
use crate::report::Report;
use contour_spectra::bvp::{BoundaryConditionSpec, Grid};
use contour_spectra::contour::{assemble_matrix_samples, moments_about, Contour, HatBasis, TestData};
use contour_spectra::evans::{winding_number, write_trace_csv, FrameOptions};
use contour_spectra::extract::{
    contour_spectrum, eigs_hankel, filter_and_diagnose, matrix_residual, PipelineOptions, RankRule, SpectrumResult,
};
use contour_spectra::fhn::{self, FhnParams, PulseOptions, PulseSolution, Reference, SpectrumConfig};
use contour_spectra::pencil::{asymptotic_splitting, MatrixPencil, OdePencil};
use contour_spectra::schrodinger::{jost_frame_options, spectrum_via_contour, Potential};
use contour_spectra::{CMat, C64};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde_json::json;
use std::io::Write;
use std::time::Instant;

/// Files of a finished run, in write order; the report comes last.
pub struct Artifacts {
    pub files: Vec<(String, Vec<u8>)>,
    pub report: Report,
}

fn csv(f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn matrix(spec: &MatrixSpec) -> CMat {
    CMat::from_fn(spec.len(), spec.len(), |i, j| spec[i][j].value())
}

fn rule(cfg: &RunConfig) -> RankRule {
    match cfg.extraction.kappa {
        Some(k) => RankRule::Fixed(k),
        None => RankRule::Threshold(cfg.extraction.theta),
    }
}

fn pipeline(cfg: &RunConfig) -> PipelineOptions {
    PipelineOptions {
        rule: rule(cfg),
        blocks: cfg.extraction.blocks,
        cluster_tol: cfg.extraction.cluster_tol,
        reconstruct: cfg.extraction.eigenfunctions,
    }
}

fn bc(kind: BcKind) -> BoundaryConditionSpec {
    match kind {
        BcKind::Projection => BoundaryConditionSpec::Projection,
        BcKind::Periodic => BoundaryConditionSpec::Periodic,
    }
}

fn contour(cfg: &RunConfig, nodes: usize) -> Result<Contour, CliError> {
    Ok(Contour::circle(cfg.contour.center.value(), cfg.contour.radius, nodes)?)
}

fn grid(cfg: &RunConfig) -> Result<Grid, CliError> {
    Ok(Grid::new(cfg.grid.x_min, cfg.grid.x_max, cfg.grid.step)?)
}

fn test_data(cfg: &RunConfig, dim: usize, default_scales: &[C64]) -> Result<TestData, CliError> {
    let t = &cfg.test_data;
    let xs: Vec<f64> = (0..t.functionals).map(|j| t.first + j as f64 * t.spacing).collect();
    let scales: Vec<C64> = match &t.rhs_scales {
        Some(s) => s.iter().map(|z| z.value()).collect(),
        None => default_scales.to_vec(),
    };
    let basis = HatBasis::uniform(t.hats, t.hat_interval[0], t.hat_interval[1]);
    let rhs = TestData::random_hat_rhs(&basis, &scales, t.rhs, t.seed);
    Ok(TestData::new(dim, TestData::point_functionals(&xs, t.component), rhs)?)
}

fn potential(s: &SchrodingerSection) -> Potential {
    match s.potential {
        PotentialKind::Zero => Potential::Zero,
        PotentialKind::PoschlTeller => Potential::PoschlTeller { depth: s.depth },
        PotentialKind::SquareWell => Potential::SquareWell {
            depth: s.depth,
            half_width: s.half_width,
        },
    }
}

fn custom_pencil(cfg: &RunConfig, s: &CustomOdeSection) -> Result<OdePencil, CliError> {
    let (a0, a1, b) = (matrix(&s.a0), matrix(&s.a1), matrix(&s.b));
    let d = a0.rows();
    let profile = s.profile;
    let a_inf = move |l: C64| &a0 + &a1.scale(l);
    let pert = move |x: f64| {
        let w = match profile {
            Profile::Sech2 => 1.0 / x.cosh().powi(2),
            Profile::Gaussian => (-x * x).exp(),
        };
        b.scale(C64::new(w, 0.0))
    };
    let k = match s.stable_dim {
        Some(k) => k,
        None => {
            // any k works for the splitting itself; it only reports the count at the center
            let probe = OdePencil::constant_plus_perturbation(d, 1, a_inf.clone(), pert.clone());
            asymptotic_splitting(&probe, cfg.contour.center.value())
                .map(|s| s.stable_plus.cols())
                .map_err(|e| CliError::Config(format!("custom_ode asymptotic matrix at the contour center: {e}")))?
        }
    };
    Ok(OdePencil::constant_plus_perturbation(d, k, a_inf, pert))
}

fn fhn_params(cfg: &RunConfig) -> (FhnParams, FhnSection) {
    let s = cfg.fhn.clone().unwrap_or_default();
    (FhnParams { a: s.a, b: s.b, phi: s.phi }, s)
}

fn pulse(cfg: &RunConfig) -> Result<PulseSolution, CliError> {
    let (params, s) = fhn_params(cfg);
    let (mut opts, guess) = match s.branch {
        Branch::Slow => (PulseOptions::slow(), fhn::SLOW_SPEED_GUESS),
        Branch::Fast => (PulseOptions::fast(), fhn::FAST_SPEED_GUESS),
    };
    if let Some(a) = s.amplitude {
        opts.amplitude = a;
    }
    if let Some(w) = s.width {
        opts.width = w;
    }
    Ok(fhn::compute_pulse(&params, s.speed_guess.unwrap_or(guess), &grid(cfg)?, &opts)?)
}

fn spectrum_config(cfg: &RunConfig) -> SpectrumConfig {
    let t = &cfg.test_data;
    SpectrumConfig {
        center: cfg.contour.center.value(),
        radius: cfg.contour.radius,
        nodes: cfg.contour.nodes,
        length: cfg.grid.x_max - cfg.grid.x_min,
        step: cfg.grid.step,
        bc: bc(cfg.bc.kind),
        functionals: t.functionals,
        functional_first: t.first,
        functional_spacing: t.spacing,
        rhs: t.rhs,
        hats: t.hats,
        hat_interval: (t.hat_interval[0], t.hat_interval[1]),
        seed: t.seed,
        rule: rule(cfg),
        blocks: cfg.extraction.blocks,
    }
}

fn pulse_json(p: &PulseSolution) -> serde_json::Value {
    json!({
        "speed": p.speed,
        "residual": p.residual,
        "discrete_residual": p.discrete_residual(),
        "iterations": p.iterations,
        "history": p.history,
        "endpoint_deviation": p.endpoint_deviation(),
        "rest_state": [p.rest.0, p.rest.1],
    })
}

fn probes(n: usize, count: Option<usize>, seed: u64) -> (CMat, CMat) {
    match count {
        None => (CMat::identity(n), CMat::identity(n)),
        Some(p) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut draw = || {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                C64::new(re, im)
            };
            let w = CMat::from_fn(n, p, |_, _| draw());
            let v = CMat::from_fn(n, p, |_, _| draw());
            (w, v)
        }
    }
}

fn spectrum_files(r: &SpectrumResult, with_functions: bool) -> Result<Vec<(String, Vec<u8>)>, CliError> {
    let mut files = vec![
        (
            "eigenvalues.csv".to_string(),
            csv(|w| {
                writeln!(w, "index,re,im,inside,residual")?;
                for (i, l) in r.eigenvalues.iter().enumerate() {
                    writeln!(w, "{i},{:.17e},{:.17e},{},{:.17e}", l.re, l.im, r.inside[i], r.residuals[i])?;
                }
                Ok(())
            })?,
        ),
        (
            "singular_values.csv".to_string(),
            csv(|w| {
                writeln!(w, "index,sigma")?;
                for (i, s) in r.rank.singular_values.iter().enumerate() {
                    writeln!(w, "{},{s:.17e}", i + 1)?;
                }
                Ok(())
            })?,
        ),
    ];
    if with_functions {
        for (i, f) in r.eigenfunctions.iter().enumerate() {
            files.push((format!("eigenfunction_{i}.csv"), csv(|w| f.write_csv(w))?));
        }
    }
    Ok(files)
}

pub fn solve(cfg: &RunConfig) -> Result<Artifacts, CliError> {
    let start = Instant::now();
    let mut report = Report::new("solve", cfg);
    let mut extra = serde_json::Map::new();
    let r = match cfg.problem {
        Problem::MatrixPencil => {
            let s = cfg.matrix_pencil.as_ref().expect("validated");
            let p = MatrixPencil::polynomial(s.coefficients.iter().map(matrix).collect())?;
            let (w, v) = probes(p.dim(), s.probes, cfg.test_data.seed);
            let g = contour(cfg, cfg.contour.nodes)?;
            let samples = assemble_matrix_samples(&p, &w, &v, &g)?;
            let blocks = cfg.extraction.blocks;
            let ms = moments_about(&samples, blocks, g.center(), g.scale())?;
            let mut r = eigs_hankel(&ms, blocks, rule(cfg), cfg.extraction.cluster_tol * g.scale())?;
            if blocks == 1 {
                r.jordan = None;
            }
            filter_and_diagnose(r, &g, |l| matrix_residual(&p, l))?
        }
        Problem::Schrodinger => {
            let s = cfg.schrodinger.as_ref().expect("validated");
            let td = test_data(cfg, 2, &[C64::new(0.0, 0.0), C64::new(1.0, 0.0)])?;
            let g = contour(cfg, cfg.contour.nodes)?;
            spectrum_via_contour(&potential(s), &g, &grid(cfg)?, &bc(cfg.bc.kind), &td, &pipeline(cfg))?
        }
        Problem::Fhn => {
            let t = Instant::now();
            let p = pulse(cfg)?;
            report.timing("pulse", t.elapsed().as_secs_f64());
            extra.insert("pulse".into(), pulse_json(&p));
            fhn::spectrum(&p, &spectrum_config(cfg))?.0
        }
        Problem::CustomOde => {
            let s = cfg.custom_ode.as_ref().expect("validated");
            let pencil = custom_pencil(cfg, s)?;
            let ones = vec![C64::new(1.0, 0.0); pencil.dim()];
            let td = test_data(cfg, pencil.dim(), &ones)?;
            let g = contour(cfg, cfg.contour.nodes)?;
            contour_spectrum(&pencil, &grid(cfg)?, &bc(cfg.bc.kind), &td, &g, &pipeline(cfg))?.0
        }
    };
    let files = spectrum_files(&r, cfg.extraction.eigenfunctions)?;
    let mut result = r.to_json();
    if let serde_json::Value::Object(m) = &mut result {
        m.extend(extra);
    }
    report.warnings.extend(r.warnings.iter().cloned());
    report.result = result;
    report.timing("total", start.elapsed().as_secs_f64());
    Ok(Artifacts { files, report })
}

pub fn evans(cfg: &RunConfig) -> Result<Artifacts, CliError> {
    let start = Instant::now();
    let mut report = Report::new("evans", cfg);
    let e = &cfg.evans;
    let (pencil, opts) = match cfg.problem {
        Problem::MatrixPencil => {
            return Err(CliError::Config("the Evans function needs an ODE problem".into()));
        }
        Problem::Schrodinger => {
            let s = cfg.schrodinger.as_ref().expect("validated");
            (potential(s).pencil(), jost_frame_options(e.half_length, e.step))
        }
        Problem::Fhn => {
            let p = pulse(cfg)?;
            (fhn::linearized_pencil(&p)?, FrameOptions::new(e.half_length, e.step))
        }
        Problem::CustomOde => {
            let s = cfg.custom_ode.as_ref().expect("validated");
            (custom_pencil(cfg, s)?, FrameOptions::new(e.half_length, e.step))
        }
    };
    let g = contour(cfg, e.nodes.unwrap_or(cfg.contour.nodes))?;
    let w = winding_number(&pencil, &g, &opts)?;
    let files = vec![("evans_trace.csv".to_string(), csv(|out| write_trace_csv(&w.trace, out))?)];
    report.result = json!({
        "winding": w.winding,
        "raw": w.raw,
        "drift": w.drift,
        "min_abs_normalized": w.min_abs_normalized,
        "gauge": w.gauge,
        "nodes": w.trace.len(),
    });
    report.timing("total", start.elapsed().as_secs_f64());
    Ok(Artifacts { files, report })
}

pub fn pulse_cmd(cfg: &RunConfig) -> Result<Artifacts, CliError> {
    if cfg.problem != Problem::Fhn {
        return Err(CliError::Config("the pulse command needs problem = \"fhn\"".into()));
    }
    let start = Instant::now();
    let mut report = Report::new("pulse", cfg);
    let p = pulse(cfg)?;
    let files = vec![("pulse.csv".to_string(), csv(|w| p.write_csv(w))?)];
    report.result = pulse_json(&p);
    report.timing("total", start.elapsed().as_secs_f64());
    Ok(Artifacts { files, report })
}

pub fn sweep(cfg: &RunConfig) -> Result<Artifacts, CliError> {
    let s = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::Config("the sweep command needs a [sweep] section".into()))?;
    let start = Instant::now();
    let mut report = Report::new("sweep", cfg);
    let p = pulse(cfg)?;
    let base = spectrum_config(cfg);
    let (name, bytes, failures, result) = match s.kind {
        SweepKind::Interval | SweepKind::Quadrature => {
            let t = Instant::now();
            let refp = fhn::reference_eigenpair(&p, s.reference_guess.value(), &grid(cfg)?)?;
            report.timing("reference", t.elapsed().as_secs_f64());
            let reference_json = json!({
                "eigenvalue": [refp.lambda.re, refp.lambda.im],
                "residual": refp.residual,
                "iterations": refp.iterations,
            });
            let reference = Reference::from(refp);
            if s.kind == SweepKind::Interval {
                let bcs: Vec<BoundaryConditionSpec> = s.bcs.iter().map(|&k| bc(k)).collect();
                let t = fhn::interval_sweep(&p, &base, &reference, &s.lengths, &bcs);
                let fits: Vec<_> = s
                    .bcs
                    .iter()
                    .map(|&k| {
                        let kind = bc(k).kind();
                        let rows: Vec<_> = t.rows.iter().filter(|r| r.bc_kind == kind).collect();
                        let x: Vec<f64> = rows.iter().map(|r| r.length).collect();
                        let e: Vec<f64> = rows.iter().map(|r| r.err_eval).collect();
                        json!({ "bc_kind": kind, "fit": fhn::decay_fit(&x, &e, 0.5, 10.0) })
                    })
                    .collect();
                let bytes = csv(|w| fhn::write_interval_csv(&t.rows, w))?;
                let result = json!({ "reference": reference_json, "rows": t.rows.len(), "decay": fits });
                ("interval_sweep.csv", bytes, t.failures, result)
            } else {
                let t = fhn::quadrature_sweep(&p, &base, &reference, &s.nodes);
                let bytes = csv(|w| fhn::write_quadrature_csv(&t.rows, w))?;
                let result = json!({ "reference": reference_json, "rows": t.rows.len() });
                ("quadrature_sweep.csv", bytes, t.failures, result)
            }
        }
        SweepKind::Rank => {
            let t = fhn::rank_sweep(&p, &base, &s.kappas)?;
            let bytes = csv(|w| fhn::write_rank_csv(&t.rows, w))?;
            let result = json!({ "rows": t.rows.len() });
            ("rank_sweep.csv", bytes, t.failures, result)
        }
    };
    report.warnings.extend(failures.iter().map(|f| format!("sweep point failed: {f}")));
    let mut result = result;
    result["failures"] = json!(failures.len());
    result["pulse"] = pulse_json(&p);
    report.result = result;
    report.timing("total", start.elapsed().as_secs_f64());
    Ok(Artifacts {
        files: vec![(name.to_string(), bytes)],
        report,
    })
}
