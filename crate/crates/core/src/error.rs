use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("argument {value} outside admissible range [{lo}, {hi}] of {what}")]
    Domain {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("map p -> g y rho'(p) - beta(-p) is not strictly monotone on the window (min |slope| = {min_abs_slope:e})")]
    NonMonotone { min_abs_slope: f64 },
    #[error("target {target} is outside the image [{lo}, {hi}] of the inversion window")]
    Bracket { target: f64, lo: f64, hi: f64 },
    #[error("layer {layer} collapses: minimum thickness {min_thickness} at x = {x}")]
    Collapse {
        layer: u8,
        min_thickness: f64,
        x: f64,
    },
    #[error("size error: {0}")]
    Size(String),
    #[error("boundary {boundary} does not belong to layer {layer}")]
    WrongBoundary { boundary: &'static str, layer: u8 },
    #[error("boundary trace {which} violates its Dirichlet value by {violation:e}")]
    TraceViolation { which: &'static str, violation: f64 },
    #[error("perturbation is not admissible: bottom constraint {bottom:e}, surface constraint {surface:e}")]
    NotAdmissible { bottom: f64, surface: f64 },
    #[error("Laplacian value {value} at y = {y} outside the validity window of the layer {layer} Bernoulli map")]
    Window { layer: u8, y: f64, value: f64 },
    #[error(
        "Newton iteration failed to converge (residual {residual:e} after {iterations} iterations)"
    )]
    NewtonDivergence { residual: f64, iterations: usize },
    #[error("stream function profile is not strictly monotone on layer {layer}")]
    NonMonotoneStream { layer: u8 },
    #[error("perturbation basis is rank deficient (Gram condition {condition:e})")]
    RankDeficient { condition: f64 },
    #[error("matrix dimension {n} exceeds the dense eigensolver cap {cap}")]
    DimensionCap { n: usize, cap: usize },
    #[error("invalid input: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
