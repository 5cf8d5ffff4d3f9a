//! Run configuration: one JSON document with a `command` discriminator.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use stratwave::energy::AuditTolerances;
use stratwave::geometry::SurfaceCurve;
use stratwave::hessian::StabilityOptions;
use stratwave::laminar::{AnalyticStream, LaminarOptions, ManufactureOptions};
use stratwave::profiles::{LayerProfiles, ScalarProfile};
use stratwave::state::PerturbationClass;

pub const MAX_NX: usize = 1024;
pub const MAX_NS: usize = 1025;
pub const MAX_TRIALS: usize = 10_000;

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum RunConfig {
    Laminar(LaminarConfig),
    AuditGrad(AuditGradConfig),
    AuditHess(AuditHessConfig),
    Stability(StabilityConfig),
    Manufacture(ManufactureConfig),
    Residual(ResidualConfig),
}

impl RunConfig {
    pub fn name(&self) -> &'static str {
        match self {
            RunConfig::Laminar(_) => "laminar",
            RunConfig::AuditGrad(_) => "audit-grad",
            RunConfig::AuditHess(_) => "audit-hess",
            RunConfig::Stability(_) => "stability",
            RunConfig::Manufacture(_) => "manufacture",
            RunConfig::Residual(_) => "residual",
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub nx: usize,
    pub ns1: usize,
    pub ns2: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            nx: 32,
            ns1: 17,
            ns2: 17,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GravityChoice {
    /// `(rho1(p1), rho2(p2))`.
    #[default]
    Default,
    /// `(rho1(p1), rho2(0))`.
    Literal,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSpec {
    pub profiles: [LayerProfiles; 2],
    pub g: f64,
    pub d: f64,
    pub h_tilde: f64,
    pub h: f64,
    pub p1: f64,
    pub p2: f64,
    #[serde(default)]
    pub options: LaminarOptions,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManufactureSpec {
    pub psi: [AnalyticStream; 2],
    pub rho: [ScalarProfile; 2],
    pub g: f64,
    pub d: f64,
    pub h_tilde: f64,
    pub h: f64,
    #[serde(default)]
    pub options: ManufactureOptions,
}

/// Where the audited state comes from.
#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum StateSource {
    /// Solve a laminar flow and lift it; a non-flat `eta_tilde` warps it
    /// onto a curved domain.
    Laminar {
        flow: FlowSpec,
        #[serde(default)]
        grid: GridSpec,
        #[serde(default)]
        c: f64,
        #[serde(default)]
        p_atm: f64,
        #[serde(default)]
        eta_tilde: Option<SurfaceCurve>,
    },
    Manufactured {
        spec: ManufactureSpec,
        #[serde(default)]
        grid: GridSpec,
        #[serde(default)]
        c: f64,
        #[serde(default)]
        p_atm: f64,
    },
    /// A serialized state plus the profiles it was computed with.
    File {
        path: PathBuf,
        profiles: [LayerProfiles; 2],
    },
}

fn default_margin() -> f64 {
    0.05
}

fn default_trials() -> usize {
    20
}

fn default_eps() -> Vec<f64> {
    vec![1e-3, 5e-4, 2.5e-4]
}

fn default_fd_directions() -> usize {
    3
}

fn default_pairs() -> usize {
    50
}

fn default_hess_fd_pairs() -> usize {
    10
}

fn default_samples() -> usize {
    65
}

fn default_fixed() -> PerturbationClass {
    PerturbationClass::FixedSurfaces
}

fn default_interior() -> PerturbationClass {
    PerturbationClass::Interior
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaminarConfig {
    pub flow: FlowSpec,
    #[serde(default)]
    pub c: f64,
    #[serde(default)]
    pub p_atm: f64,
    /// Vertical nodes per layer in the profile table.
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Also lift onto this grid and write the state.
    #[serde(default)]
    pub grid: Option<GridSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditGradConfig {
    pub state: StateSource,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub tolerances: AuditTolerances,
    #[serde(default = "default_eps")]
    pub eps: Vec<f64>,
    #[serde(default = "default_fd_directions")]
    pub fd_directions: usize,
    #[serde(default = "default_interior")]
    pub fd_class: PerturbationClass,
    #[serde(default)]
    pub gravity_refs: GravityChoice,
    #[serde(default = "default_margin")]
    pub map_margin: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditHessConfig {
    pub state: StateSource,
    #[serde(default = "default_pairs")]
    pub pairs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_fixed")]
    pub symmetry_class: PerturbationClass,
    #[serde(default = "default_eps")]
    pub eps: Vec<f64>,
    #[serde(default = "default_hess_fd_pairs")]
    pub fd_pairs: usize,
    #[serde(default = "default_interior")]
    pub fd_class: PerturbationClass,
    #[serde(default)]
    pub gravity_refs: GravityChoice,
    #[serde(default = "default_margin")]
    pub map_margin: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilityConfig {
    pub state: StateSource,
    #[serde(default)]
    pub options: StabilityOptions,
    #[serde(default)]
    pub gravity_refs: GravityChoice,
    #[serde(default = "default_margin")]
    pub map_margin: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManufactureConfig {
    pub spec: ManufactureSpec,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub c: f64,
    #[serde(default)]
    pub p_atm: f64,
    /// Rows per layer in the beta table.
    #[serde(default = "default_samples")]
    pub samples: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResidualConfig {
    pub state: StateSource,
}

/// Problems found before any numerics run.
#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("config is for `{found}` but `{expected}` was requested")]
    CommandMismatch {
        expected: &'static str,
        found: &'static str,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

fn positive(name: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        invalid(format!("{name} must be positive and finite, got {v}"))
    }
}

fn finite(name: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() {
        Ok(())
    } else {
        invalid(format!("{name} must be finite"))
    }
}

fn count(name: &str, v: usize, lo: usize, hi: usize) -> Result<(), ConfigError> {
    if (lo..=hi).contains(&v) {
        Ok(())
    } else {
        invalid(format!("{name} = {v} outside [{lo}, {hi}]"))
    }
}

fn check_geometry(g: f64, d: f64, h_tilde: f64, h: f64) -> Result<(), ConfigError> {
    positive("g", g)?;
    positive("d", d)?;
    finite("h_tilde", h_tilde)?;
    finite("h", h)?;
    if !(-d < h_tilde && h_tilde < h) {
        return invalid(format!("need -d < h_tilde < h, got d = {d}, h_tilde = {h_tilde}, h = {h}"));
    }
    Ok(())
}

fn check_eps(eps: &[f64]) -> Result<(), ConfigError> {
    if eps.is_empty() {
        return invalid("eps list is empty");
    }
    for &e in eps {
        positive("eps", e)?;
    }
    Ok(())
}

impl GridSpec {
    fn validate(&self) -> Result<(), ConfigError> {
        count("grid.nx", self.nx, 8, MAX_NX)?;
        count("grid.ns1", self.ns1, 5, MAX_NS)?;
        count("grid.ns2", self.ns2, 5, MAX_NS)
    }
}

impl FlowSpec {
    fn validate(&self) -> Result<(), ConfigError> {
        check_geometry(self.g, self.d, self.h_tilde, self.h)?;
        finite("p1", self.p1)?;
        finite("p2", self.p2)?;
        count("options.degree", self.options.degree, 4, 512)?;
        positive("options.ode_tol", self.options.ode_tol)?;
        count("options.max_iter", self.options.max_iter, 1, 10_000)
    }
}

impl ManufactureSpec {
    fn validate(&self) -> Result<(), ConfigError> {
        check_geometry(self.g, self.d, self.h_tilde, self.h)?;
        count("options.knots", self.options.knots, 8, 1_000_000)?;
        positive("options.extension", self.options.extension)
    }
}

impl StateSource {
    fn validate(&self) -> Result<(), ConfigError> {
        match self {
            StateSource::Laminar {
                flow, grid, c, p_atm, ..
            } => {
                flow.validate()?;
                grid.validate()?;
                finite("c", *c)?;
                finite("p_atm", *p_atm)
            }
            StateSource::Manufactured {
                spec, grid, c, p_atm,
            } => {
                spec.validate()?;
                grid.validate()?;
                finite("c", *c)?;
                finite("p_atm", *p_atm)
            }
            StateSource::File { .. } => Ok(()),
        }
    }

    /// Resolves a relative state path against the config directory.
    pub fn resolve(&mut self, base: &Path) {
        if let StateSource::File { path, .. } = self {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg: RunConfig = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        match &mut cfg {
            RunConfig::AuditGrad(c) => c.state.resolve(base),
            RunConfig::AuditHess(c) => c.state.resolve(base),
            RunConfig::Stability(c) => c.state.resolve(base),
            RunConfig::Residual(c) => c.state.resolve(base),
            RunConfig::Laminar(_) | RunConfig::Manufacture(_) => {}
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        match self {
            RunConfig::Laminar(c) => {
                c.flow.validate()?;
                finite("c", c.c)?;
                finite("p_atm", c.p_atm)?;
                if let Some(g) = &c.grid {
                    g.validate()?;
                }
                count("samples", c.samples, 5, MAX_NS)
            }
            RunConfig::AuditGrad(c) => {
                c.state.validate()?;
                count("trials", c.trials, 1, MAX_TRIALS)?;
                positive("tolerances.tol_grad", c.tolerances.tol_grad)?;
                positive("tolerances.tol_res", c.tolerances.tol_res)?;
                count("tolerances.modes", c.tolerances.modes, 1, 64)?;
                check_eps(&c.eps)?;
                count("fd_directions", c.fd_directions, 1, MAX_TRIALS)?;
                positive("map_margin", c.map_margin)
            }
            RunConfig::AuditHess(c) => {
                c.state.validate()?;
                count("pairs", c.pairs, 1, MAX_TRIALS)?;
                check_eps(&c.eps)?;
                count("fd_pairs", c.fd_pairs, 1, MAX_TRIALS)?;
                positive("map_margin", c.map_margin)
            }
            RunConfig::Stability(c) => {
                c.state.validate()?;
                let o = &c.options;
                count("options.basis.vertical_modes", o.basis.vertical_modes, 1, 256)?;
                count("options.basis.fourier_modes", o.basis.fourier_modes, 0, 256)?;
                positive("options.tol_psd", o.tol_psd)?;
                positive("options.tol_res", o.tol_res)?;
                positive("map_margin", c.map_margin)
            }
            RunConfig::Manufacture(c) => {
                c.spec.validate()?;
                c.grid.validate()?;
                finite("c", c.c)?;
                finite("p_atm", c.p_atm)?;
                count("samples", c.samples, 2, 1_000_000)
            }
            RunConfig::Residual(c) => c.state.validate(),
        }
    }
}
