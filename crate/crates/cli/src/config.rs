//! Run configuration read from TOML.

use crate::error::CliError;
use contour_spectra::C64;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const BUNDLED: &[(&str, &str)] = &[
    ("fhn-default", include_str!("../configs/fhn-default.toml")),
    ("poschl-teller", include_str!("../configs/poschl-teller.toml")),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Problem {
    MatrixPencil,
    Schrodinger,
    Fhn,
    CustomOde,
}

impl Problem {
    pub fn name(self) -> &'static str {
        match self {
            Problem::MatrixPencil => "matrix-pencil",
            Problem::Schrodinger => "schrodinger",
            Problem::Fhn => "fhn",
            Problem::CustomOde => "custom-ode",
        }
    }
}

/// A real number or a `[re, im]` pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Real(f64),
    Complex([f64; 2]),
}

impl Scalar {
    pub fn value(self) -> C64 {
        match self {
            Scalar::Real(x) => C64::new(x, 0.0),
            Scalar::Complex([re, im]) => C64::new(re, im),
        }
    }
}

/// Rows of scalars.
pub type MatrixSpec = Vec<Vec<Scalar>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: Problem,
    #[serde(default)]
    pub contour: ContourSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub bc: BcSection,
    #[serde(default)]
    pub test_data: TestDataSection,
    #[serde(default)]
    pub extraction: ExtractionSection,
    #[serde(default)]
    pub evans: EvansSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fhn: Option<FhnSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schrodinger: Option<SchrodingerSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix_pencil: Option<MatrixPencilSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub custom_ode: Option<CustomOdeSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContourSection {
    pub center: Scalar,
    pub radius: f64,
    pub nodes: usize,
}

impl Default for ContourSection {
    fn default() -> Self {
        ContourSection {
            center: Scalar::Real(1.0),
            radius: 1.05,
            nodes: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub x_min: f64,
    pub x_max: f64,
    pub step: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection {
            x_min: -50.0,
            x_max: 50.0,
            step: 0.01,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BcKind {
    #[default]
    Projection,
    Periodic,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BcSection {
    pub kind: BcKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TestDataSection {
    /// Number of point functionals `m`.
    pub functionals: usize,
    pub first: f64,
    pub spacing: f64,
    pub component: usize,
    /// Number of right-hand sides `l`.
    pub rhs: usize,
    pub hats: usize,
    pub hat_interval: [f64; 2],
    /// Per-component factors of the random hat coefficients.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rhs_scales: Option<Vec<Scalar>>,
    pub seed: u64,
}

impl Default for TestDataSection {
    fn default() -> Self {
        TestDataSection {
            functionals: 401,
            first: -2.0,
            spacing: 0.01,
            component: 0,
            rhs: 10,
            hats: 40,
            hat_interval: [-5.0, 5.0],
            rhs_scales: None,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractionSection {
    pub theta: f64,
    /// Prescribed rank; overrides `theta`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa: Option<usize>,
    /// Block-Hankel depth `K`.
    pub blocks: usize,
    pub cluster_tol: f64,
    pub eigenfunctions: bool,
}

impl Default for ExtractionSection {
    fn default() -> Self {
        ExtractionSection {
            theta: 1e-8,
            kappa: None,
            blocks: 1,
            cluster_tol: 1e-6,
            eigenfunctions: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvansSection {
    pub half_length: f64,
    pub step: f64,
    /// Node count on the contour; defaults to the contour section.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nodes: Option<usize>,
}

impl Default for EvansSection {
    fn default() -> Self {
        EvansSection {
            half_length: 20.0,
            step: 0.01,
            nodes: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: "out".into() }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Branch {
    #[default]
    Slow,
    Fast,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FhnSection {
    pub a: f64,
    pub b: f64,
    pub phi: f64,
    pub branch: Branch,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub speed_guess: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub width: Option<f64>,
}

impl Default for FhnSection {
    fn default() -> Self {
        FhnSection {
            a: 0.7,
            b: 0.8,
            phi: 0.08,
            branch: Branch::Slow,
            speed_guess: None,
            amplitude: None,
            width: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PotentialKind {
    Zero,
    PoschlTeller,
    SquareWell,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchrodingerSection {
    pub potential: PotentialKind,
    #[serde(default = "default_depth")]
    pub depth: f64,
    #[serde(default = "default_half_width")]
    pub half_width: f64,
}

fn default_depth() -> f64 {
    2.0
}

fn default_half_width() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixPencilSection {
    /// `F(lambda) = sum_k lambda^k C_k`, lowest degree first.
    pub coefficients: Vec<MatrixSpec>,
    /// Random probe columns on each side; identity probes when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probes: Option<usize>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    #[default]
    Sech2,
    Gaussian,
}

/// `A(lambda, x) = a0 + lambda a1 + profile(x) b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomOdeSection {
    pub a0: MatrixSpec,
    pub a1: MatrixSpec,
    pub b: MatrixSpec,
    #[serde(default)]
    pub profile: Profile,
    /// Stable dimension; counted at the contour center when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stable_dim: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepKind {
    Interval,
    Quadrature,
    Rank,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub kind: SweepKind,
    #[serde(default = "default_lengths")]
    pub lengths: Vec<f64>,
    #[serde(default = "default_bcs")]
    pub bcs: Vec<BcKind>,
    #[serde(default = "default_sweep_nodes")]
    pub nodes: Vec<usize>,
    #[serde(default = "default_kappas")]
    pub kappas: Vec<usize>,
    /// Seed for the reference Newton solve of the tracked eigenvalue.
    #[serde(default = "default_reference_guess")]
    pub reference_guess: Scalar,
}

fn default_lengths() -> Vec<f64> {
    vec![5.0, 10.0, 15.0, 20.0, 25.0, 30.0]
}

fn default_bcs() -> Vec<BcKind> {
    vec![BcKind::Projection, BcKind::Periodic]
}

fn default_sweep_nodes() -> Vec<usize> {
    (1..=9).map(|k| 5 * k).collect()
}

fn default_kappas() -> Vec<usize> {
    (2..=10).collect()
}

fn default_reference_guess() -> Scalar {
    Scalar::Real(0.485)
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn positive(name: &str, x: f64) -> Result<(), CliError> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(bad(format!("{name} must be positive and finite, got {x}")))
    }
}

fn square(name: &str, m: &MatrixSpec) -> Result<usize, CliError> {
    let n = m.len();
    if n == 0 || m.iter().any(|row| row.len() != n) {
        return Err(bad(format!("{name} must be a non-empty square matrix")));
    }
    if m.iter().flatten().any(|z| !(z.value().re.is_finite() && z.value().im.is_finite())) {
        return Err(bad(format!("{name} has non-finite entries")));
    }
    Ok(n)
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| bad(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a file, or one of the bundled configurations by name.
    pub fn load(spec: &str) -> Result<Self, CliError> {
        let path = Path::new(spec);
        if !path.exists() {
            if let Some((_, text)) = BUNDLED.iter().find(|(name, _)| *name == spec) {
                return Self::parse(text);
            }
        }
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{spec}: {e}")))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let c = &self.contour;
        let center = c.center.value();
        if !(center.re.is_finite() && center.im.is_finite()) {
            return Err(bad("contour.center must be finite"));
        }
        positive("contour.radius", c.radius)?;
        if c.nodes < 4 {
            return Err(bad(format!("contour.nodes must be at least 4, got {}", c.nodes)));
        }
        let g = &self.grid;
        positive("grid.step", g.step)?;
        if !(g.x_min.is_finite() && g.x_max.is_finite() && g.x_min < g.x_max) {
            return Err(bad(format!("grid needs x_min < x_max, got [{}, {}]", g.x_min, g.x_max)));
        }
        let n = ((g.x_max - g.x_min) / g.step).round();
        if (n * g.step - (g.x_max - g.x_min)).abs() > 1e-9 * (g.x_max - g.x_min) {
            return Err(bad(format!("grid.step {} does not divide [{}, {}]", g.step, g.x_min, g.x_max)));
        }
        let t = &self.test_data;
        if t.functionals == 0 || t.rhs == 0 {
            return Err(bad("test_data needs at least one functional and one right-hand side"));
        }
        positive("test_data.spacing", t.spacing)?;
        if t.hats < 2 {
            return Err(bad("test_data.hats must be at least 2"));
        }
        if !(t.hat_interval[0] < t.hat_interval[1]) {
            return Err(bad("test_data.hat_interval must be ordered"));
        }
        let last = t.first + (t.functionals - 1) as f64 * t.spacing;
        let needs_grid = self.problem != Problem::MatrixPencil;
        if needs_grid && (t.first <= g.x_min || last >= g.x_max) {
            return Err(bad(format!(
                "functionals span [{}, {last}], which must lie strictly inside the grid",
                t.first
            )));
        }
        let e = &self.extraction;
        if !(e.theta > 0.0 && e.theta < 1.0) {
            return Err(bad(format!("extraction.theta must lie in (0, 1), got {}", e.theta)));
        }
        if e.kappa == Some(0) {
            return Err(bad("extraction.kappa must be at least 1"));
        }
        if e.blocks == 0 {
            return Err(bad("extraction.blocks must be at least 1"));
        }
        positive("extraction.cluster_tol", e.cluster_tol)?;
        positive("evans.half_length", self.evans.half_length)?;
        positive("evans.step", self.evans.step)?;
        if self.evans.nodes.is_some_and(|m| m < 4) {
            return Err(bad("evans.nodes must be at least 4"));
        }
        if self.output.dir.is_empty() {
            return Err(bad("output.dir must not be empty"));
        }
        self.validate_problem()?;
        if let Some(s) = &self.sweep {
            if self.problem != Problem::Fhn {
                return Err(bad("sweeps are defined for the fhn problem only"));
            }
            if s.lengths.is_empty() || s.bcs.is_empty() || s.nodes.is_empty() || s.kappas.is_empty() {
                return Err(bad("sweep lists must be non-empty"));
            }
            for &l in &s.lengths {
                positive("sweep.lengths", l)?;
            }
            if s.nodes.iter().any(|&m| m < 4) || s.kappas.contains(&0) {
                return Err(bad("sweep.nodes must be at least 4 and sweep.kappas at least 1"));
            }
        }
        Ok(())
    }

    fn validate_problem(&self) -> Result<(), CliError> {
        let present = [
            (Problem::Fhn, self.fhn.is_some()),
            (Problem::Schrodinger, self.schrodinger.is_some()),
            (Problem::MatrixPencil, self.matrix_pencil.is_some()),
            (Problem::CustomOde, self.custom_ode.is_some()),
        ];
        for (p, has) in present {
            if has && p != self.problem {
                return Err(bad(format!("section [{}] given for problem {}", p.name().replace('-', "_"), self.problem.name())));
            }
        }
        let dim = match self.problem {
            Problem::Fhn => {
                let f = self.fhn.clone().unwrap_or_default();
                if !(f.phi > 0.0 && f.b > 0.0 && f.a.is_finite()) {
                    return Err(bad("fhn needs phi > 0 and b > 0"));
                }
                if let Some(c) = f.speed_guess {
                    if !(c.is_finite() && c != 0.0) {
                        return Err(bad("fhn.speed_guess must be finite and nonzero"));
                    }
                }
                if f.width.is_some_and(|w| !(w > 0.0)) {
                    return Err(bad("fhn.width must be positive"));
                }
                if self.test_data.rhs_scales.is_some() {
                    return Err(bad("fhn right-hand side scales are fixed to (0, 1, 1/c)"));
                }
                if self.grid.x_min != -self.grid.x_max {
                    return Err(bad("fhn needs a symmetric grid"));
                }
                3
            }
            Problem::Schrodinger => {
                let s = self.schrodinger.as_ref().ok_or_else(|| bad("missing [schrodinger] section"))?;
                if !s.depth.is_finite() {
                    return Err(bad("schrodinger.depth must be finite"));
                }
                if s.potential == PotentialKind::SquareWell {
                    positive("schrodinger.half_width", s.half_width)?;
                }
                2
            }
            Problem::MatrixPencil => {
                let m = self.matrix_pencil.as_ref().ok_or_else(|| bad("missing [matrix_pencil] section"))?;
                if m.coefficients.is_empty() {
                    return Err(bad("matrix_pencil.coefficients must be non-empty"));
                }
                let n = square("matrix_pencil.coefficients[0]", &m.coefficients[0])?;
                for (k, c) in m.coefficients.iter().enumerate() {
                    if square(&format!("matrix_pencil.coefficients[{k}]"), c)? != n {
                        return Err(bad("matrix_pencil coefficients differ in size"));
                    }
                }
                if m.probes == Some(0) {
                    return Err(bad("matrix_pencil.probes must be at least 1"));
                }
                return Ok(());
            }
            Problem::CustomOde => {
                let c = self.custom_ode.as_ref().ok_or_else(|| bad("missing [custom_ode] section"))?;
                let n = square("custom_ode.a0", &c.a0)?;
                if square("custom_ode.a1", &c.a1)? != n || square("custom_ode.b", &c.b)? != n {
                    return Err(bad("custom_ode matrices differ in size"));
                }
                if n < 2 {
                    return Err(bad("custom_ode needs a system of dimension at least 2"));
                }
                if c.stable_dim.is_some_and(|k| k == 0 || k >= n) {
                    return Err(bad("custom_ode.stable_dim must lie in 1..dim"));
                }
                n
            }
        };
        if self.test_data.component >= dim {
            return Err(bad(format!("test_data.component must be below {dim}")));
        }
        if let Some(s) = &self.test_data.rhs_scales {
            if s.len() != dim {
                return Err(bad(format!("test_data.rhs_scales needs {dim} entries")));
            }
        }
        Ok(())
    }

    /// Applies command-line overrides.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.test_data.seed = s;
        }
        self
    }
}
