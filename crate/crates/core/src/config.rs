//! Run configuration for the batch front end.
//!
//! A run is described by one TOML document with a strict schema: unknown
//! keys are rejected, numeric fields are validated positive or finite where
//! the quantity demands it, and every section except `[model]` carries
//! defaults tuned for the built-in testbeds. Individual keys can be
//! overridden from the command line through dotted paths
//! (`section.key=value`), applied to the parsed document before schema
//! validation so overrides obey exactly the same rules as the file itself.
//!
//! The `[model]` section is a small factory: it selects one of the built-in
//! conservation laws or assembles a user-defined polynomial-flux model, and
//! resolves the shock endstates either from explicit state vectors, from
//! per-model defaults, or (for the gas model) from the jump conditions.

use crate::error::{Error, Result};
use crate::evans::EvansOpts;
use crate::evolution::EvolveOpts;
use crate::grid::{Field, Grid};
use crate::model::{
    classify_shock, Burgers, ConservationLaw, IsothermalGas, PolyTerm, PolynomialModel,
    QuadraticGradient, ShockEndstates,
};
use crate::profile::{Profile, ProfileOpts};
use crate::templates::{ConvolutionOpts, TemplateBundle};
use crate::tol;
use serde::{Deserialize, Serialize};

// ---------------------------------------------------------------------------
// Schema
// ---------------------------------------------------------------------------

/// Complete description of one batch run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub time: TimeConfig,
    #[serde(default)]
    pub templates: TemplateConfig,
    #[serde(default)]
    pub contour: ContourConfig,
    #[serde(default)]
    pub perturbation: PerturbationConfig,
    #[serde(default)]
    pub iteration: IterationConfig,
    #[serde(default)]
    pub report: ReportConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

/// Model selection. `kind` picks the family; the remaining keys are
/// per-family parameters, and setting one that the chosen family does not
/// use is a configuration error (the schema is strict across sections and
/// within them).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// One of `burgers`, `quadratic-gradient`, `isothermal-gas`,
    /// `polynomial`.
    pub kind: String,
    /// Left endstate. Defaults exist for the built-in families.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_minus: Option<Vec<f64>>,
    /// Right endstate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_plus: Option<Vec<f64>>,
    /// Gas only: dynamic viscosity (default 1).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    /// Gas only: left/right specific volumes; when given, the frame speed
    /// and the endstates are solved from the jump conditions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_minus: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_plus: Option<f64>,
    /// Gas only: sign of the wave speed branch (default +1).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speed_sign: Option<f64>,
    /// Frame speed for families that accept one explicitly (gas with
    /// explicit endstates, polynomial).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speed: Option<f64>,
    /// Polynomial only: display name (default `polynomial`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    /// Polynomial only: number of conserved quantities.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_dim: Option<usize>,
    /// Polynomial only: rank of the viscosity matrix (trailing block).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub viscous_rank: Option<usize>,
    /// Polynomial only: one entry per flux component.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flux: Option<Vec<FluxComponent>>,
    /// Polynomial only: constant viscosity matrix, row-major `n x n`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub viscosity: Option<Vec<f64>>,
}

/// One polynomial flux component: a sum of monomial terms.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluxComponent {
    pub terms: Vec<PolyTerm>,
}

/// Spatial discretization: a symmetric grid on `[-half_width, half_width]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub half_width: f64,
    pub dx: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            half_width: 20.0,
            dx: 0.05,
        }
    }
}

/// Time discretization, sampling cadence, and decay-fit window.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeConfig {
    pub dt: f64,
    pub t_max: f64,
    /// Number of steps between recorded samples.
    pub sample_stride: usize,
    /// Times at which full solution snapshots are stored.
    pub snapshot_times: Vec<f64>,
    /// Optional `[lo, hi]` window for the decay-slope fit (default: the
    /// second half of the run).
    pub decay_window: Option<Vec<f64>>,
}

impl Default for TimeConfig {
    fn default() -> Self {
        TimeConfig {
            dt: 0.01,
            t_max: 50.0,
            sample_stride: 25,
            snapshot_times: Vec::new(),
            decay_window: None,
        }
    }
}

/// Optional overrides of the fitted template constants. Unset fields keep
/// the values derived from the wave.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TemplateConfig {
    /// Width constant of the outgoing heat kernels.
    pub gaussian_width: Option<f64>,
    /// Width constant of the tail-envelope Gaussians.
    pub envelope_width: Option<f64>,
    /// Exponential weight rate of the tail envelope.
    pub weight_rate: Option<f64>,
    /// Drift rate of the kernel-gap majorant.
    pub drift_rate: Option<f64>,
}

impl TemplateConfig {
    /// Apply the overrides to a freshly built bundle.
    pub fn apply(&self, bundle: &mut TemplateBundle) {
        if let Some(v) = self.gaussian_width {
            bundle.gaussian_width = v;
        }
        if let Some(v) = self.envelope_width {
            bundle.envelope_width = v;
        }
        if let Some(v) = self.weight_rate {
            bundle.weight_rate = v;
        }
        if let Some(v) = self.drift_rate {
            bundle.drift_rate = v;
        }
    }
}

/// Stability-determinant contour geometry and transport resolution.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContourConfig {
    /// Radius of the half-disk enclosing the unstable half plane.
    pub radius: f64,
    /// Indentation radius around the origin.
    pub indent: f64,
    /// Orthonormalization station spacing.
    pub station: f64,
    /// Fixed transport step.
    pub rk_step: f64,
    /// Cap on committed contour samples.
    pub max_points: usize,
    /// Run the exterior-power cross-check.
    pub cross_check: bool,
}

impl Default for ContourConfig {
    fn default() -> Self {
        let d = EvansOpts::default();
        ContourConfig {
            radius: d.radius,
            indent: d.indent,
            station: d.station,
            rk_step: d.rk_step,
            max_points: d.max_points,
            cross_check: d.cross_check,
        }
    }
}

impl ContourConfig {
    pub fn to_opts(&self) -> EvansOpts {
        EvansOpts {
            radius: self.radius,
            indent: self.indent,
            station: self.station,
            rk_step: self.rk_step,
            tail_cutoff: tol::ENDSTATE_TAIL,
            max_points: self.max_points,
            cross_check: self.cross_check,
        }
    }
}

/// Initial perturbation: a named scalar shape times a component direction.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbationConfig {
    /// One of `none`, `gaussian`, `sech`, `dipole`, `wave-slope`.
    pub family: String,
    pub amplitude: f64,
    pub center: f64,
    pub width: f64,
    /// Component direction the scalar shape multiplies (default: first
    /// component only). `wave-slope` fixes its own direction and rejects
    /// this key.
    pub direction: Option<Vec<f64>>,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        PerturbationConfig {
            family: "gaussian".into(),
            amplitude: 1e-3,
            center: 0.0,
            width: 1.0,
            direction: None,
        }
    }
}

impl PerturbationConfig {
    /// Materialize the perturbation on a grid. The profile supplies the
    /// state dimension and, for `wave-slope`, the shape itself.
    pub fn build(&self, grid: Grid, profile: &Profile) -> Result<Field> {
        let n = profile.state_dim();
        if self.family == "wave-slope" {
            if self.direction.is_some() {
                return Err(Error::Config(
                    "perturbation family wave-slope determines its own direction; \
                     remove perturbation.direction"
                        .into(),
                ));
            }
            let amp = self.amplitude;
            return Ok(Field::from_fn(grid, n, |x, out| {
                profile.eval_slope_into(x, out);
                for v in out.iter_mut() {
                    *v *= amp;
                }
            }));
        }

        let dir = match &self.direction {
            Some(d) => {
                if d.len() != n {
                    return Err(Error::Config(format!(
                        "perturbation.direction has {} entries, the model carries {} components",
                        d.len(),
                        n
                    )));
                }
                if !d.iter().all(|v| v.is_finite()) || d.iter().all(|&v| v == 0.0) {
                    return Err(Error::Config(
                        "perturbation.direction must be finite and nonzero".into(),
                    ));
                }
                d.clone()
            }
            None => {
                let mut d = vec![0.0; n];
                d[0] = 1.0;
                d
            }
        };
        let amp = self.amplitude;
        let center = self.center;
        let width = self.width;
        let shape: Box<dyn Fn(f64) -> f64> = match self.family.as_str() {
            "none" => Box::new(|_| 0.0),
            "gaussian" => Box::new(move |x: f64| {
                let z = (x - center) / width;
                amp * (-z * z).exp()
            }),
            "sech" => Box::new(move |x: f64| {
                let z = (x - center) / width;
                amp / z.cosh()
            }),
            "dipole" => Box::new(move |x: f64| {
                let z = (x - center) / width;
                amp * z * (-z * z).exp()
            }),
            other => {
                return Err(Error::Config(format!(
                    "unknown perturbation family `{other}`; expected none, gaussian, sech, \
                     dipole, or wave-slope"
                )))
            }
        };
        Ok(Field::from_fn(grid, n, |x, out| {
            let s = shape(x);
            for (v, d) in out.iter_mut().zip(&dir) {
                *v = s * d;
            }
        }))
    }
}

/// Nonlinear-iteration controls.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IterationConfig {
    /// Number of iterates to run.
    pub count: usize,
    /// Largest admissible initial weighted energy.
    pub energy_guard: f64,
    /// Abort threshold on the running template-ratio guard.
    pub amplitude_guard: f64,
    /// Seed phase path: `zero` or `decaying` (an algebraically decaying
    /// curve of amplitude `seed_amplitude`).
    pub seed: String,
    pub seed_amplitude: f64,
}

impl Default for IterationConfig {
    fn default() -> Self {
        let d = EvolveOpts::default();
        IterationConfig {
            count: 4,
            energy_guard: d.energy_guard,
            amplitude_guard: d.amplitude_guard,
            seed: "zero".into(),
            seed_amplitude: 0.01,
        }
    }
}

/// Section toggles for the consolidated verification report.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportConfig {
    /// Include the stability-determinant verification (contour winding).
    pub stability: bool,
    /// Include a full time-domain simulation with decay and energy checks.
    pub simulation: bool,
    /// Include the nonlinear iteration and its contraction summary.
    pub iteration: bool,
    /// Sample pairs per convolution inequality.
    pub convolution_samples: usize,
    /// Largest evaluation time for the convolution samples.
    pub convolution_t_max: f64,
}

impl Default for ReportConfig {
    fn default() -> Self {
        let d = ConvolutionOpts::default();
        ReportConfig {
            stability: true,
            simulation: false,
            iteration: false,
            convolution_samples: d.samples,
            convolution_t_max: d.t_max,
        }
    }
}

impl ReportConfig {
    pub fn convolution_opts(&self) -> ConvolutionOpts {
        ConvolutionOpts {
            samples: self.convolution_samples,
            t_max: self.convolution_t_max,
            ..ConvolutionOpts::default()
        }
    }
}

/// Artifact destination.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Directory receiving CSV/JSON/SVG artifacts (command line `--out`
    /// takes precedence).
    pub directory: Option<String>,
}

// ---------------------------------------------------------------------------
// Parsing and overrides
// ---------------------------------------------------------------------------

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

impl RunConfig {
    /// Parse a TOML document against the strict schema and validate it.
    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_toml_with_overrides(text, &[])
    }

    /// Parse a TOML document, apply dotted-path overrides, then validate.
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(config_err)?;
        for spec in overrides {
            apply_override(&mut table, spec)?;
        }
        let cfg: RunConfig = toml::Value::Table(table).try_into().map_err(config_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read and parse a configuration file.
    pub fn load(path: &std::path::Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_with_overrides(&text, overrides)
    }

    /// Field-level validation beyond what the type system enforces.
    pub fn validate(&self) -> Result<()> {
        fn positive(name: &str, v: f64) -> Result<()> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive and finite, got {v}")))
            }
        }
        fn finite(name: &str, v: f64) -> Result<()> {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be finite, got {v}")))
            }
        }

        positive("grid.half_width", self.grid.half_width)?;
        positive("grid.dx", self.grid.dx)?;
        if self.grid.dx >= self.grid.half_width {
            return Err(Error::Config(format!(
                "grid.dx = {} must be smaller than grid.half_width = {}",
                self.grid.dx, self.grid.half_width
            )));
        }

        positive("time.dt", self.time.dt)?;
        finite("time.t_max", self.time.t_max)?;
        if self.time.t_max < 0.0 {
            return Err(Error::Config(format!(
                "time.t_max must be nonnegative, got {}",
                self.time.t_max
            )));
        }
        if self.time.sample_stride == 0 {
            return Err(Error::Config("time.sample_stride must be at least 1".into()));
        }
        for &t in &self.time.snapshot_times {
            finite("time.snapshot_times entry", t)?;
            if t < 0.0 {
                return Err(Error::Config(format!(
                    "time.snapshot_times entries must be nonnegative, got {t}"
                )));
            }
        }
        if let Some(w) = &self.time.decay_window {
            if w.len() != 2 || !(w[0] >= 0.0 && w[1] > w[0] && w[1].is_finite()) {
                return Err(Error::Config(
                    "time.decay_window must be [lo, hi] with 0 <= lo < hi".into(),
                ));
            }
        }

        for (name, v) in [
            ("templates.gaussian_width", self.templates.gaussian_width),
            ("templates.envelope_width", self.templates.envelope_width),
            ("templates.weight_rate", self.templates.weight_rate),
            ("templates.drift_rate", self.templates.drift_rate),
        ] {
            if let Some(v) = v {
                positive(name, v)?;
            }
        }

        positive("contour.radius", self.contour.radius)?;
        positive("contour.indent", self.contour.indent)?;
        if self.contour.indent >= self.contour.radius {
            return Err(Error::Config(format!(
                "contour.indent = {} must be smaller than contour.radius = {}",
                self.contour.indent, self.contour.radius
            )));
        }
        positive("contour.station", self.contour.station)?;
        positive("contour.rk_step", self.contour.rk_step)?;
        if self.contour.max_points < 100 {
            return Err(Error::Config(
                "contour.max_points must be at least 100".into(),
            ));
        }

        finite("perturbation.amplitude", self.perturbation.amplitude)?;
        finite("perturbation.center", self.perturbation.center)?;
        positive("perturbation.width", self.perturbation.width)?;

        if self.iteration.count == 0 || self.iteration.count > 64 {
            return Err(Error::Config(format!(
                "iteration.count must lie in 1..=64, got {}",
                self.iteration.count
            )));
        }
        positive("iteration.energy_guard", self.iteration.energy_guard)?;
        positive("iteration.amplitude_guard", self.iteration.amplitude_guard)?;
        finite("iteration.seed_amplitude", self.iteration.seed_amplitude)?;
        match self.iteration.seed.as_str() {
            "zero" | "decaying" => {}
            other => {
                return Err(Error::Config(format!(
                    "iteration.seed must be `zero` or `decaying`, got `{other}`"
                )))
            }
        }

        if self.report.convolution_samples < 2 {
            return Err(Error::Config(
                "report.convolution_samples must be at least 2".into(),
            ));
        }
        positive("report.convolution_t_max", self.report.convolution_t_max)?;

        Ok(())
    }

    /// Build the configured model and classify its shock.
    pub fn instantiate(&self) -> Result<(Box<dyn ConservationLaw>, ShockEndstates)> {
        let (model, um, up) = build_model(&self.model)?;
        let ends = classify_shock(model.as_ref(), &um, &up)?;
        Ok((model, ends))
    }

    pub fn profile_opts(&self) -> ProfileOpts {
        ProfileOpts {
            half_width: self.grid.half_width,
            dx: self.grid.dx,
        }
    }

    pub fn evolve_opts(&self) -> EvolveOpts {
        EvolveOpts {
            dt: self.time.dt,
            t_max: self.time.t_max,
            sample_stride: self.time.sample_stride,
            snapshot_times: self.time.snapshot_times.clone(),
            energy_guard: self.iteration.energy_guard,
            amplitude_guard: self.iteration.amplitude_guard,
        }
    }

    pub fn decay_window(&self) -> Option<(f64, f64)> {
        self.time.decay_window.as_ref().map(|w| (w[0], w[1]))
    }
}

/// Apply one `section.key=value` override to a parsed TOML table. The value
/// is parsed as a TOML literal when possible (numbers, booleans, arrays,
/// quoted strings) and treated as a bare string otherwise.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| {
        Error::Config(format!(
            "override `{spec}` must have the form section.key=value"
        ))
    })?;
    let segments: Vec<&str> = key.trim().split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(Error::Config(format!(
            "override key `{}` has an empty path segment",
            key.trim()
        )));
    }
    let value = parse_override_value(raw.trim());
    let mut current = table;
    for seg in &segments[..segments.len() - 1] {
        current = current
            .entry(seg.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| {
                Error::Config(format!(
                    "override key `{}` descends into a non-table value at `{seg}`",
                    key.trim()
                ))
            })?;
    }
    current.insert(segments[segments.len() - 1].to_string(), value);
    Ok(())
}

fn parse_override_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed table has the key it declared"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

// ---------------------------------------------------------------------------
// Model factory
// ---------------------------------------------------------------------------

/// Keys that were set but are not consumed by the chosen model family.
fn reject_unused(kind: &str, unused: &[(&str, bool)]) -> Result<()> {
    for (name, set) in unused {
        if *set {
            return Err(Error::Config(format!(
                "model.{name} is not a parameter of model kind `{kind}`"
            )));
        }
    }
    Ok(())
}

/// Build the configured conservation law together with its endstate pair.
pub fn build_model(mc: &ModelConfig) -> Result<(Box<dyn ConservationLaw>, Vec<f64>, Vec<f64>)> {
    let kind = mc.kind.as_str();
    match kind {
        "burgers" => {
            reject_unused(
                kind,
                &[
                    ("mu", mc.mu.is_some()),
                    ("v_minus", mc.v_minus.is_some()),
                    ("v_plus", mc.v_plus.is_some()),
                    ("speed_sign", mc.speed_sign.is_some()),
                    ("speed", mc.speed.is_some()),
                    ("label", mc.label.is_some()),
                    ("state_dim", mc.state_dim.is_some()),
                    ("viscous_rank", mc.viscous_rank.is_some()),
                    ("flux", mc.flux.is_some()),
                    ("viscosity", mc.viscosity.is_some()),
                ],
            )?;
            let um = endstate(mc.u_minus.as_deref(), &[1.0], 1, "u_minus")?;
            let up = endstate(mc.u_plus.as_deref(), &[-1.0], 1, "u_plus")?;
            Ok((Box::new(Burgers), um, up))
        }
        "quadratic-gradient" => {
            reject_unused(
                kind,
                &[
                    ("mu", mc.mu.is_some()),
                    ("v_minus", mc.v_minus.is_some()),
                    ("v_plus", mc.v_plus.is_some()),
                    ("speed_sign", mc.speed_sign.is_some()),
                    ("speed", mc.speed.is_some()),
                    ("label", mc.label.is_some()),
                    ("state_dim", mc.state_dim.is_some()),
                    ("viscous_rank", mc.viscous_rank.is_some()),
                    ("flux", mc.flux.is_some()),
                    ("viscosity", mc.viscosity.is_some()),
                ],
            )?;
            let um = endstate(mc.u_minus.as_deref(), &[1.0, 0.0], 2, "u_minus")?;
            let up = endstate(mc.u_plus.as_deref(), &[-1.0, 0.0], 2, "u_plus")?;
            Ok((Box::new(QuadraticGradient), um, up))
        }
        "isothermal-gas" => {
            reject_unused(
                kind,
                &[
                    ("label", mc.label.is_some()),
                    ("state_dim", mc.state_dim.is_some()),
                    ("viscous_rank", mc.viscous_rank.is_some()),
                    ("flux", mc.flux.is_some()),
                    ("viscosity", mc.viscosity.is_some()),
                ],
            )?;
            let mu = mc.mu.unwrap_or(1.0);
            let matched = mc.v_minus.is_some() || mc.v_plus.is_some();
            let explicit = mc.u_minus.is_some() || mc.u_plus.is_some();
            if matched && explicit {
                return Err(Error::Config(
                    "isothermal-gas accepts either specific volumes (v_minus, v_plus) or \
                     explicit endstates (u_minus, u_plus, speed), not both"
                        .into(),
                ));
            }
            if matched || !explicit {
                if mc.speed.is_some() {
                    return Err(Error::Config(
                        "isothermal-gas with matched endstates derives its own speed; \
                         remove model.speed"
                            .into(),
                    ));
                }
                let vm = mc.v_minus.unwrap_or(1.0);
                let vp = mc.v_plus.unwrap_or(2.0);
                let sign = mc.speed_sign.unwrap_or(1.0);
                let (speed, um, up) = IsothermalGas::matched_endstates(vm, vp, sign)?;
                Ok((Box::new(IsothermalGas::new(mu, speed)?), um, up))
            } else {
                if mc.speed_sign.is_some() {
                    return Err(Error::Config(
                        "model.speed_sign applies only to matched endstates; \
                         explicit endstates take model.speed"
                            .into(),
                    ));
                }
                let speed = mc.speed.ok_or_else(|| {
                    Error::Config(
                        "isothermal-gas with explicit endstates requires model.speed".into(),
                    )
                })?;
                let um = endstate(mc.u_minus.as_deref(), &[], 2, "u_minus")?;
                let up = endstate(mc.u_plus.as_deref(), &[], 2, "u_plus")?;
                Ok((Box::new(IsothermalGas::new(mu, speed)?), um, up))
            }
        }
        "polynomial" => {
            reject_unused(
                kind,
                &[
                    ("mu", mc.mu.is_some()),
                    ("v_minus", mc.v_minus.is_some()),
                    ("v_plus", mc.v_plus.is_some()),
                    ("speed_sign", mc.speed_sign.is_some()),
                ],
            )?;
            let n = mc
                .state_dim
                .ok_or_else(|| Error::Config("polynomial requires model.state_dim".into()))?;
            let r = mc
                .viscous_rank
                .ok_or_else(|| Error::Config("polynomial requires model.viscous_rank".into()))?;
            let flux = mc
                .flux
                .as_ref()
                .ok_or_else(|| Error::Config("polynomial requires model.flux".into()))?;
            let visc = mc
                .viscosity
                .as_ref()
                .ok_or_else(|| Error::Config("polynomial requires model.viscosity".into()))?;
            let label = mc.label.clone().unwrap_or_else(|| "polynomial".into());
            let speed = mc.speed.unwrap_or(0.0);
            if !speed.is_finite() {
                return Err(Error::Config(format!(
                    "model.speed must be finite, got {speed}"
                )));
            }
            let terms: Vec<Vec<PolyTerm>> = flux.iter().map(|c| c.terms.clone()).collect();
            let model = PolynomialModel::new(label, n, r, speed, terms, visc.clone())?;
            let um = endstate(mc.u_minus.as_deref(), &[], n, "u_minus")?;
            let up = endstate(mc.u_plus.as_deref(), &[], n, "u_plus")?;
            Ok((Box::new(model), um, up))
        }
        other => Err(Error::Config(format!(
            "unknown model kind `{other}`; expected burgers, quadratic-gradient, \
             isothermal-gas, or polynomial"
        ))),
    }
}

fn endstate(given: Option<&[f64]>, default: &[f64], n: usize, name: &str) -> Result<Vec<f64>> {
    let state = match given {
        Some(s) => s.to_vec(),
        None if !default.is_empty() => default.to_vec(),
        None => {
            return Err(Error::Config(format!(
                "model.{name} is required for this model kind"
            )))
        }
    };
    if state.len() != n {
        return Err(Error::Config(format!(
            "model.{name} has {} entries, the model carries {} components",
            state.len(),
            n
        )));
    }
    if !state.iter().all(|v| v.is_finite()) {
        return Err(Error::Config(format!("model.{name} must be finite")));
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ShockClass;
    use crate::profile::solve_profile;
    use approx::assert_relative_eq;

    fn burgers_profile() -> Profile {
        let model = Burgers;
        let ends = classify_shock(&model, &[1.0], &[-1.0]).unwrap();
        solve_profile(
            &model,
            &ends,
            &ProfileOpts {
                half_width: 12.0,
                dx: 0.05,
            },
        )
        .unwrap()
    }

    #[test]
    fn minimal_config_fills_defaults_and_instantiates() {
        let cfg = RunConfig::from_toml("[model]\nkind = \"burgers\"\n").unwrap();
        assert_eq!(cfg.grid.half_width, 20.0);
        assert_eq!(cfg.time.sample_stride, 25);
        assert!(cfg.report.stability);
        let (model, ends) = cfg.instantiate().unwrap();
        assert_eq!(model.state_dim(), 1);
        assert_eq!(ends.class, ShockClass::Lax);
        assert_eq!(ends.u_minus, vec![1.0]);
        assert_eq!(ends.u_plus, vec![-1.0]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad_field = "[model]\nkind = \"burgers\"\ntypo = 1\n";
        let err = RunConfig::from_toml(bad_field).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("typo"), "got: {err}");

        let bad_section = "[model]\nkind = \"burgers\"\n[misc]\nx = 1\n";
        let err = RunConfig::from_toml(bad_section).unwrap_err();
        assert!(err.to_string().contains("misc"), "got: {err}");
    }

    fn instantiate_err(cfg: &RunConfig) -> Error {
        match cfg.instantiate() {
            Ok(_) => panic!("instantiation unexpectedly succeeded"),
            Err(e) => e,
        }
    }

    #[test]
    fn keys_of_other_model_kinds_are_rejected() {
        let text = "[model]\nkind = \"burgers\"\nmu = 2.0\n";
        let err = instantiate_err(&RunConfig::from_toml(text).unwrap());
        assert!(err.to_string().contains("mu"), "got: {err}");
    }

    #[test]
    fn overrides_follow_dotted_paths() {
        let text = "[model]\nkind = \"burgers\"\n";
        let overrides = vec![
            "time.dt=0.005".to_string(),
            "model.kind=quadratic-gradient".to_string(),
            "output.directory=runs/qg".to_string(),
            "time.snapshot_times=[1.0, 2.0]".to_string(),
        ];
        let cfg = RunConfig::from_toml_with_overrides(text, &overrides).unwrap();
        assert_eq!(cfg.time.dt, 0.005);
        assert_eq!(cfg.model.kind, "quadratic-gradient");
        assert_eq!(cfg.output.directory.as_deref(), Some("runs/qg"));
        assert_eq!(cfg.time.snapshot_times, vec![1.0, 2.0]);

        let err =
            RunConfig::from_toml_with_overrides(text, &["time.dt".to_string()]).unwrap_err();
        assert!(err.to_string().contains("section.key=value"), "got: {err}");
    }

    #[test]
    fn overridden_values_obey_the_schema() {
        let text = "[model]\nkind = \"burgers\"\n";
        let err = RunConfig::from_toml_with_overrides(text, &["time.typo=1".to_string()])
            .unwrap_err();
        assert!(err.to_string().contains("typo"), "got: {err}");
    }

    #[test]
    fn matched_gas_endstates_solve_the_jump_conditions() {
        let text = "[model]\nkind = \"isothermal-gas\"\nv_minus = 1.0\nv_plus = 2.0\n";
        let cfg = RunConfig::from_toml(text).unwrap();
        let (model, ends) = cfg.instantiate().unwrap();
        assert_relative_eq!(model.frame_speed(), 0.5f64.sqrt(), max_relative = 1e-14);
        assert_relative_eq!(ends.u_plus[1], -0.5f64.sqrt(), max_relative = 1e-14);
        assert!(ends.rh_residual < tol::RANKINE_HUGONIOT);
        assert_eq!(ends.class, ShockClass::Lax);
    }

    #[test]
    fn polynomial_flux_reproduces_the_gradient_testbed() {
        let text = r#"
[model]
kind = "polynomial"
state_dim = 2
viscous_rank = 2
u_minus = [1.0, 0.0]
u_plus = [-1.0, 0.0]
viscosity = [1.0, 0.0, 0.0, 1.0]

[[model.flux]]
terms = [
    { coeff = 1.0, powers = [2, 0] },
    { coeff = -1.0, powers = [0, 2] },
]

[[model.flux]]
terms = [{ coeff = -2.0, powers = [1, 1] }]
"#;
        let cfg = RunConfig::from_toml(text).unwrap();
        let (model, ends) = cfg.instantiate().unwrap();
        assert_eq!(ends.class, ShockClass::Undercompressive);

        let reference = QuadraticGradient;
        let mut f = [0.0; 2];
        let mut g = [0.0; 2];
        for state in [[0.3, -0.7], [1.0, 0.5], [-0.2, 0.1]] {
            model.flux(&state, &mut f);
            reference.flux(&state, &mut g);
            assert_relative_eq!(f[0], g[0], max_relative = 1e-14);
            assert_relative_eq!(f[1], g[1], max_relative = 1e-14);
        }
    }

    #[test]
    fn validation_rejects_nonpositive_steps() {
        let base = "[model]\nkind = \"burgers\"\n";
        for (key, needle) in [
            ("time.dt=0.0", "time.dt"),
            ("grid.dx=-0.1", "grid.dx"),
            ("contour.indent=9.0", "contour.indent"),
            ("iteration.count=0", "iteration.count"),
            ("time.decay_window=[5.0, 2.0]", "decay_window"),
            ("perturbation.width=0.0", "perturbation.width"),
        ] {
            let err = RunConfig::from_toml_with_overrides(base, &[key.to_string()])
                .unwrap_err();
            assert!(
                err.to_string().contains(needle),
                "override {key}: got {err}"
            );
        }
    }

    #[test]
    fn perturbation_families_have_the_expected_shapes() {
        let profile = burgers_profile();
        let grid = Grid::symmetric(10.0, 0.1).unwrap();

        let mut pc = PerturbationConfig {
            family: "gaussian".into(),
            amplitude: 2e-3,
            center: 1.0,
            width: 0.5,
            direction: None,
        };
        let f = pc.build(grid, &profile).unwrap();
        let peak = f.get(grid.nearest(1.0), 0);
        assert_relative_eq!(peak, 2e-3, max_relative = 1e-12);

        pc.family = "dipole".into();
        pc.center = 0.0;
        let f = pc.build(grid, &profile).unwrap();
        let mass: f64 = (0..grid.len).map(|i| f.get(i, 0)).sum::<f64>() * grid.dx;
        assert!(mass.abs() < 1e-15, "odd shape carries mass {mass}");

        pc.family = "wave-slope".into();
        let f = pc.build(grid, &profile).unwrap();
        let i = grid.nearest(0.0);
        let mut slope = [0.0];
        profile.eval_slope_into(0.0, &mut slope);
        assert_relative_eq!(f.get(i, 0), 2e-3 * slope[0], max_relative = 1e-12);

        pc.family = "spiral".into();
        assert!(pc.build(grid, &profile).is_err());
    }

    #[test]
    fn perturbation_direction_spreads_components() {
        let model = QuadraticGradient;
        let ends = classify_shock(&model, &[1.0, 0.0], &[-1.0, 0.0]).unwrap();
        let profile = solve_profile(
            &model,
            &ends,
            &ProfileOpts {
                half_width: 12.0,
                dx: 0.05,
            },
        )
        .unwrap();
        let grid = Grid::symmetric(8.0, 0.1).unwrap();
        let pc = PerturbationConfig {
            family: "sech".into(),
            amplitude: 1e-2,
            center: 0.0,
            width: 1.0,
            direction: Some(vec![0.0, 1.0]),
        };
        let f = pc.build(grid, &profile).unwrap();
        let i = grid.nearest(0.0);
        assert_eq!(f.get(i, 0), 0.0);
        assert_relative_eq!(f.get(i, 1), 1e-2, max_relative = 1e-12);

        let bad = PerturbationConfig {
            direction: Some(vec![1.0]),
            ..pc.clone()
        };
        assert!(bad.build(grid, &profile).is_err());
    }

    #[test]
    fn template_overrides_apply_to_the_bundle() {
        let profile = burgers_profile();
        let mut bundle = TemplateBundle::new(&Burgers, &profile).unwrap();
        let tc = TemplateConfig {
            weight_rate: Some(0.123),
            drift_rate: None,
            gaussian_width: None,
            envelope_width: Some(9.0),
        };
        let drift_before = bundle.drift_rate;
        tc.apply(&mut bundle);
        assert_eq!(bundle.weight_rate, 0.123);
        assert_eq!(bundle.envelope_width, 9.0);
        assert_eq!(bundle.drift_rate, drift_before);
    }

    #[test]
    fn gas_endstate_modes_are_mutually_exclusive() {
        let both = "[model]\nkind = \"isothermal-gas\"\nv_minus = 1.0\nv_plus = 2.0\nu_minus = [1.0, 0.0]\n";
        let err = instantiate_err(&RunConfig::from_toml(both).unwrap());
        assert!(err.to_string().contains("not both"), "got: {err}");

        let explicit = "[model]\nkind = \"isothermal-gas\"\nspeed = 0.7071067811865476\n\
                        u_minus = [1.0, 0.0]\nu_plus = [2.0, -0.7071067811865476]\n";
        let cfg = RunConfig::from_toml(explicit).unwrap();
        let (model, ends) = cfg.instantiate().unwrap();
        assert_eq!(model.name(), "isothermal-gas");
        assert!(ends.rh_residual < 1e-10);
    }

    #[test]
    fn option_mappers_carry_the_configured_values() {
        let text = "[model]\nkind = \"burgers\"\n[time]\ndt = 0.02\nt_max = 10.0\n\
                    decay_window = [2.0, 8.0]\n[contour]\nradius = 3.0\n";
        let cfg = RunConfig::from_toml(text).unwrap();
        let eo = cfg.evolve_opts();
        assert_eq!(eo.dt, 0.02);
        assert_eq!(eo.t_max, 10.0);
        assert_eq!(cfg.decay_window(), Some((2.0, 8.0)));
        let co = cfg.contour.to_opts();
        assert_eq!(co.radius, 3.0);
        assert_eq!(co.indent, 1e-3);
        let po = cfg.profile_opts();
        assert_eq!(po.half_width, 20.0);
    }
}
