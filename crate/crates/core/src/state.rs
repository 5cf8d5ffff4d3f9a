//! Discrete unknowns `(psi1, psi2, eta, eta_tilde)` with their constants,
//! and admissible perturbations.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    build_domain, build_grids_with, Boundary, Field, FlowDomain, LayerGrid, Measure, SurfaceCurve,
    XDerivative,
};

/// Default tolerance on the Dirichlet traces of a state.
pub const STATE_TRACE_TOL: f64 = 1e-10;

/// Admissibility tolerance relative to the perturbation norm.
pub const CONSTRAINT_REL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    pub g: f64,
    pub c: f64,
    pub d: f64,
    #[serde(rename = "P_atm")]
    pub p_atm: f64,
    #[serde(rename = "Q1")]
    pub q1: f64,
    #[serde(rename = "Q2")]
    pub q2: f64,
}

impl PhysicalParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.g, self.c, self.d, self.p_atm, self.q1, self.q2];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("physical parameters must be finite".into()));
        }
        if !(self.g > 0.0) || !(self.d > 0.0) {
            return Err(Error::Invalid("g and d must be positive".into()));
        }
        Ok(())
    }
}

/// Full discrete state on the two layer grids.
#[derive(Debug, Clone)]
pub struct FlowState {
    pub psi: [Field; 2],
    pub domain: FlowDomain,
    pub grids: [LayerGrid; 2],
    pub p1: f64,
    pub p2: f64,
    pub params: PhysicalParams,
    /// `psi_y` changes sign (or vanishes) somewhere on a layer.
    pub stagnant: bool,
}

fn max_dev(v: &[f64], target: f64) -> f64 {
    v.iter().map(|x| (x - target).abs()).fold(0.0, f64::max)
}

/// Sign information of `psi_y` on one layer.
pub(crate) fn psi_y_single_signed(grid: &LayerGrid, psi: &Field) -> (bool, f64) {
    let (_, fy) = grid.mapped_gradient(psi).expect("shape checked");
    let pos = fy.iter().all(|v| *v > 0.0);
    let neg = fy.iter().all(|v| *v < 0.0);
    let min_abs = fy.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
    (pos || neg, min_abs)
}

/// Validates fields and constants into a [`FlowState`].
pub fn assemble_state(
    psi1: Field,
    psi2: Field,
    domain: FlowDomain,
    grids: (LayerGrid, LayerGrid),
    p1: f64,
    p2: f64,
    params: PhysicalParams,
) -> Result<FlowState> {
    assemble_state_with_tol(psi1, psi2, domain, grids, p1, p2, params, STATE_TRACE_TOL)
}

#[allow(clippy::too_many_arguments)]
pub fn assemble_state_with_tol(
    psi1: Field,
    psi2: Field,
    domain: FlowDomain,
    grids: (LayerGrid, LayerGrid),
    p1: f64,
    p2: f64,
    params: PhysicalParams,
    tol: f64,
) -> Result<FlowState> {
    params.validate()?;
    if (params.d - domain.d).abs() > 1e-14 * domain.d {
        return Err(Error::Invalid(
            "params.d differs from the domain depth".into(),
        ));
    }
    let (g1, g2) = grids;
    for (g, f) in [(&g1, &psi1), (&g2, &psi2)] {
        if f.dim() != (g.nx, g.ns) {
            return Err(Error::Size(format!(
                "layer {} field {:?} vs grid ({}, {})",
                g.layer.id(),
                f.dim(),
                g.nx,
                g.ns
            )));
        }
    }
    let checks = [
        ("psi1 on S~", g1.trace(&psi1, Boundary::Interface)?, 0.0),
        ("psi2 on S~", g2.trace(&psi2, Boundary::Interface)?, 0.0),
        ("psi1 on B", g1.trace(&psi1, Boundary::Bottom)?, -p1),
        ("psi2 on S", g2.trace(&psi2, Boundary::Surface)?, -p2),
    ];
    for (which, trace, target) in checks {
        let dev = max_dev(&trace, target);
        if dev > tol * target.abs().max(1.0) {
            return Err(Error::TraceViolation {
                which,
                violation: dev,
            });
        }
    }
    let stagnant = !(psi_y_single_signed(&g1, &psi1).0 && psi_y_single_signed(&g2, &psi2).0);
    Ok(FlowState {
        psi: [psi1, psi2],
        domain,
        grids: [g1, g2],
        p1,
        p2,
        params,
        stagnant,
    })
}

impl FlowState {
    pub fn grid_dims(&self) -> (usize, usize, usize) {
        (self.grids[0].nx, self.grids[0].ns, self.grids[1].ns)
    }

    /// `state + eps * pert`: surfaces shifted, grids rebuilt with the same
    /// dimensions, fields kept at fixed `(x, sigma)` nodes. Dirichlet traces
    /// are not enforced on the result.
    pub fn displaced(&self, eps: f64, pert: &Perturbation) -> Result<FlowState> {
        let domain = self.domain.perturbed(eps, &pert.eta_tilde_p, &pert.eta_p)?;
        let (nx, ns1, ns2) = self.grid_dims();
        let (g1, g2) = build_grids_with(&domain, nx, ns1, ns2, self.grids[0].xderiv())?;
        let psi1 = &self.psi[0] + &(&pert.psi[0] * eps);
        let psi2 = &self.psi[1] + &(&pert.psi[1] * eps);
        Ok(FlowState {
            psi: [psi1, psi2],
            domain,
            grids: [g1, g2],
            p1: self.p1,
            p2: self.p2,
            params: self.params,
            stagnant: self.stagnant,
        })
    }

    /// Same geometry with replaced fields (no trace validation).
    pub fn with_fields(&self, psi1: Field, psi2: Field) -> FlowState {
        FlowState {
            psi: [psi1, psi2],
            ..self.clone()
        }
    }

    /// Range of each stream function over its layer.
    pub fn psi_ranges(&self) -> [(f64, f64); 2] {
        let r = |f: &Field| {
            f.iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
                    (a.min(v), b.max(v))
                })
        };
        [r(&self.psi[0]), r(&self.psi[1])]
    }

    /// `(min y, max y)` of each layer.
    pub fn y_ranges(&self) -> [(f64, f64); 2] {
        let r = |g: &LayerGrid| {
            g.y.iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
                    (a.min(v), b.max(v))
                })
        };
        [r(&self.grids[0]), r(&self.grids[1])]
    }
}

/// Perturbation `(psi1p, psi2p, eta_p, eta_tilde_p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub psi: [Field; 2],
    pub eta_p: SurfaceCurve,
    pub eta_tilde_p: SurfaceCurve,
}

impl Perturbation {
    pub fn zeros(state: &FlowState) -> Self {
        Self {
            psi: [state.grids[0].zeros(), state.grids[1].zeros()],
            eta_p: SurfaceCurve::default(),
            eta_tilde_p: SurfaceCurve::default(),
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            psi: [&self.psi[0] * s, &self.psi[1] * s],
            eta_p: self.eta_p.scaled(s),
            eta_tilde_p: self.eta_tilde_p.scaled(s),
        }
    }

    /// `self + s * other`.
    pub fn axpy(&self, s: f64, other: &Perturbation) -> Self {
        Self {
            psi: [
                &self.psi[0] + &(&other.psi[0] * s),
                &self.psi[1] + &(&other.psi[1] * s),
            ],
            eta_p: self.eta_p.axpy(s, &other.eta_p),
            eta_tilde_p: self.eta_tilde_p.axpy(s, &other.eta_tilde_p),
        }
    }

    pub fn surfaces_fixed(&self) -> bool {
        self.eta_p.is_zero() && self.eta_tilde_p.is_zero()
    }
}

/// `int_B psi1p_y dx`.
pub fn bottom_flux(grid1: &LayerGrid, psi1p: &Field) -> Result<f64> {
    let t = grid1.boundary_normal_derivative(psi1p, Boundary::Bottom)?;
    grid1.line_integral(&t, Boundary::Bottom, Measure::Dx)
}

/// `int_S d psi2p / d n2 dl`.
pub fn surface_flux(grid2: &LayerGrid, psi2p: &Field) -> Result<f64> {
    let t = grid2.boundary_normal_derivative(psi2p, Boundary::Surface)?;
    grid2.line_integral(&t, Boundary::Surface, Measure::Dl)
}

/// The two integrals defining the admissible space.
pub fn constraint_integrals(pert: &Perturbation, state: &FlowState) -> Result<(f64, f64)> {
    Ok((
        bottom_flux(&state.grids[0], &pert.psi[0])?,
        surface_flux(&state.grids[1], &pert.psi[1])?,
    ))
}

/// Errors unless both constraint integrals are within tolerance.
pub fn check_admissible(pert: &Perturbation, state: &FlowState) -> Result<()> {
    let (b, s) = constraint_integrals(pert, state)?;
    let tol = CONSTRAINT_REL_TOL * perturbation_norm(pert, state).max(1e-300) + 1e-14;
    if b.abs() > tol || s.abs() > tol {
        return Err(Error::NotAdmissible {
            bottom: b,
            surface: s,
        });
    }
    Ok(())
}

fn correction_fields(state: &FlowState) -> (Field, Field) {
    let d = state.domain.d;
    let eta = &state.domain.eta;
    let g1 = &state.grids[0];
    let g2 = &state.grids[1];
    (
        g1.field_from_xy(|_, y| y + d),
        g2.field_from_xy(|x, y| eta.value(x) - y),
    )
}

/// Removes the constraint components with the fixed corrections
/// `alpha (y + d)` in layer 1 and `alpha' (eta(x) - y)` in layer 2.
pub fn project_admissible(pert: &Perturbation, state: &FlowState) -> Perturbation {
    let (c1, c2) = correction_fields(state);
    let g1 = &state.grids[0];
    let g2 = &state.grids[1];
    let a1 = bottom_flux(g1, &pert.psi[0]).expect("shape") / bottom_flux(g1, &c1).expect("shape");
    let a2 = surface_flux(g2, &pert.psi[1]).expect("shape") / surface_flux(g2, &c2).expect("shape");
    let mut out = pert.clone();
    out.psi[0].scaled_add(-a1, &c1);
    out.psi[1].scaled_add(-a2, &c2);
    out
}

/// Which components a random trial direction may excite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationClass {
    /// Stream functions with free traces plus both surfaces.
    #[default]
    Full,
    /// Stream functions with free traces, surfaces unperturbed.
    FixedSurfaces,
    /// Stream functions vanishing on every boundary, surfaces unperturbed.
    ZeroTrace,
    /// Stream functions supported strictly inside `0.25 < sigma < 0.75`.
    Interior,
}

impl PerturbationClass {
    pub fn moves_surfaces(self) -> bool {
        self == PerturbationClass::Full
    }
}

/// Options of [`random_admissible_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomOptions {
    pub modes: usize,
    pub amplitude: f64,
    pub class: PerturbationClass,
    /// Number of vertical shape functions per layer.
    pub vertical: usize,
}

impl Default for RandomOptions {
    fn default() -> Self {
        Self {
            modes: 3,
            amplitude: 1.0,
            class: PerturbationClass::Full,
            vertical: 4,
        }
    }
}

/// Legendre polynomial `P_m(t)`.
/// Vertical profile `m >= 1` of the trial bases: `sin(m pi s)` when the
/// traces must vanish, Legendre `P_{m-1}(2s - 1)` otherwise.
pub fn vertical_basis_shape(zero_trace: bool, m: usize, s: f64) -> f64 {
    if zero_trace {
        (m as f64 * PI * s).sin()
    } else {
        legendre(m - 1, 2.0 * s - 1.0)
    }
}

pub(crate) fn legendre(m: usize, t: f64) -> f64 {
    let (mut p0, mut p1) = (1.0, t);
    if m == 0 {
        return 1.0;
    }
    for k in 2..=m {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * t * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    p1
}

/// Vertical shape function `m` of a perturbation class.
pub(crate) fn vertical_shape(class: PerturbationClass, m: usize, s: f64) -> f64 {
    match class {
        PerturbationClass::Full | PerturbationClass::FixedSurfaces => legendre(m, 2.0 * s - 1.0),
        PerturbationClass::ZeroTrace => 4.0 * s * (1.0 - s) * legendre(m, 2.0 * s - 1.0),
        PerturbationClass::Interior => {
            if s <= 0.25 || s >= 0.75 {
                0.0
            } else {
                let b = 16.0 * (s - 0.25) * (0.75 - s);
                b * b * b * legendre(m, 4.0 * s - 2.0)
            }
        }
    }
}

/// Random admissible perturbation with free traces and moving surfaces.
pub fn random_admissible(
    seed: u64,
    state: &FlowState,
    modes: usize,
    amplitude: f64,
) -> Result<Perturbation> {
    random_admissible_with(
        seed,
        state,
        RandomOptions {
            modes,
            amplitude,
            ..RandomOptions::default()
        },
    )
}

/// Random Fourier x vertical-polynomial fields, projected onto the
/// admissible space. The coefficient draw depends only on the seed and the
/// options, so the same continuous direction is produced on every grid.
pub fn random_admissible_with(
    seed: u64,
    state: &FlowState,
    opts: RandomOptions,
) -> Result<Perturbation> {
    if opts.modes == 0 || opts.vertical == 0 {
        return Err(Error::Invalid(
            "random perturbations need modes >= 1".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |scale: f64| -> f64 { opts.amplitude * scale * rng.random_range(-1.0..1.0) };
    let mut psi = Vec::with_capacity(2);
    for grid in &state.grids {
        let mut coeffs = Vec::new();
        for k in 0..=opts.modes {
            for m in 0..opts.vertical {
                let decay = 1.0 / ((1 + k + m) as f64).powi(2);
                coeffs.push((k, m, draw(decay), draw(decay)));
            }
        }
        let field = grid.field_from_xs(|x, s| {
            coeffs
                .iter()
                .map(|&(k, m, a, b)| {
                    let kx = k as f64 * x;
                    (a * kx.cos() + b * kx.sin()) * vertical_shape(opts.class, m, s)
                })
                .sum()
        });
        psi.push(field);
    }
    let mut surf = |mean_scale: f64| -> SurfaceCurve {
        let mean = draw(mean_scale);
        let cos = (1..=opts.modes)
            .map(|k| draw(0.5 / (k * k) as f64))
            .collect();
        let sin = (1..=opts.modes)
            .map(|k| draw(0.5 / (k * k) as f64))
            .collect();
        SurfaceCurve::new(mean, cos, sin)
    };
    // surfaces are always drawn so the stream of random numbers does not depend on the class
    let eta_p = surf(0.25);
    let eta_tilde_p = surf(0.25);
    let (eta_p, eta_tilde_p) = if opts.class.moves_surfaces() {
        (eta_p, eta_tilde_p)
    } else {
        (SurfaceCurve::default(), SurfaceCurve::default())
    };
    let psi2 = psi.pop().unwrap();
    let psi1 = psi.pop().unwrap();
    let raw = Perturbation {
        psi: [psi1, psi2],
        eta_p,
        eta_tilde_p,
    };
    Ok(project_admissible(&raw, state))
}

/// `int_0^{2pi} c(x)^2 dx` of a truncated Fourier series.
fn curve_l2_sq(c: &SurfaceCurve) -> f64 {
    2.0 * PI * c.mean * c.mean
        + PI * (c.cos.iter().map(|a| a * a).sum::<f64>() + c.sin.iter().map(|b| b * b).sum::<f64>())
}

/// H1-style norm used to normalize audit reports.
pub fn perturbation_norm(pert: &Perturbation, state: &FlowState) -> f64 {
    let mut acc = 0.0;
    for (grid, f) in state.grids.iter().zip(&pert.psi) {
        let (fx, fy) = grid.mapped_gradient(f).expect("shape");
        let integrand = &fx * &fx + &fy * &fy + f * f;
        acc += grid.area_unchecked(&integrand);
    }
    acc += curve_l2_sq(&pert.eta_p) + curve_l2_sq(&pert.eta_tilde_p);
    acc.sqrt()
}

/// H1-style inner product matching [`perturbation_norm`].
pub fn perturbation_inner(a: &Perturbation, b: &Perturbation, state: &FlowState) -> f64 {
    let mut acc = 0.0;
    for (grid, (fa, fb)) in state.grids.iter().zip(a.psi.iter().zip(&b.psi)) {
        let (ax, ay) = grid.mapped_gradient(fa).expect("shape");
        let (bx, by) = grid.mapped_gradient(fb).expect("shape");
        let integrand = &ax * &bx + &ay * &by + fa * fb;
        acc += grid.area_unchecked(&integrand);
    }
    let dot = |c: &SurfaceCurve, d: &SurfaceCurve| {
        let n = c.modes().max(d.modes());
        let get = |v: &[f64], k: usize| v.get(k).copied().unwrap_or(0.0);
        2.0 * PI * c.mean * d.mean
            + PI * (0..n)
                .map(|k| get(&c.cos, k) * get(&d.cos, k) + get(&c.sin, k) * get(&d.sin, k))
                .sum::<f64>()
    };
    acc + dot(&a.eta_p, &b.eta_p) + dot(&a.eta_tilde_p, &b.eta_tilde_p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Surfaces {
    pub eta_tilde: SurfaceCurve,
    pub eta: SurfaceCurve,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridDims {
    pub nx: usize,
    pub ns1: usize,
    pub ns2: usize,
    #[serde(default)]
    pub xderiv: XDerivative,
}

/// JSON document of a [`FlowState`]; fields are flattened row-major over `[x, sigma]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateDocument {
    pub params: PhysicalParams,
    pub p1: f64,
    pub p2: f64,
    pub surfaces: Surfaces,
    pub grid: GridDims,
    pub psi1: Vec<f64>,
    pub psi2: Vec<f64>,
}

impl StateDocument {
    pub fn from_state(state: &FlowState) -> Self {
        let (nx, ns1, ns2) = state.grid_dims();
        Self {
            params: state.params,
            p1: state.p1,
            p2: state.p2,
            surfaces: Surfaces {
                eta_tilde: state.domain.eta_tilde.clone(),
                eta: state.domain.eta.clone(),
            },
            grid: GridDims {
                nx,
                ns1,
                ns2,
                xderiv: state.grids[0].xderiv(),
            },
            psi1: state.psi[0].iter().copied().collect(),
            psi2: state.psi[1].iter().copied().collect(),
        }
    }

    pub fn into_state(self) -> Result<FlowState> {
        let domain = build_domain(self.params.d, self.surfaces.eta_tilde, self.surfaces.eta)?;
        let GridDims {
            nx,
            ns1,
            ns2,
            xderiv,
        } = self.grid;
        let grids = build_grids_with(&domain, nx, ns1, ns2, xderiv)?;
        let shape = |v: Vec<f64>, ns: usize| {
            Field::from_shape_vec((nx, ns), v).map_err(|e| Error::Size(e.to_string()))
        };
        let psi1 = shape(self.psi1, ns1)?;
        let psi2 = shape(self.psi2, ns2)?;
        assemble_state(psi1, psi2, domain, grids, self.p1, self.p2, self.params)
    }
}

/// Serialized perturbation; fields row-major over `[x, sigma]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationDocument {
    pub nx: usize,
    pub ns1: usize,
    pub ns2: usize,
    pub psi1p: Vec<f64>,
    pub psi2p: Vec<f64>,
    pub eta_p: SurfaceCurve,
    pub eta_tilde_p: SurfaceCurve,
}

impl PerturbationDocument {
    pub fn from_perturbation(p: &Perturbation) -> Self {
        let (nx, ns1) = p.psi[0].dim();
        Self {
            nx,
            ns1,
            ns2: p.psi[1].dim().1,
            psi1p: p.psi[0].iter().copied().collect(),
            psi2p: p.psi[1].iter().copied().collect(),
            eta_p: p.eta_p.clone(),
            eta_tilde_p: p.eta_tilde_p.clone(),
        }
    }

    pub fn into_perturbation(self) -> Result<Perturbation> {
        let nx = self.nx;
        let f = |v: Vec<f64>, ns: usize| {
            Field::from_shape_vec((nx, ns), v).map_err(|e| Error::Size(e.to_string()))
        };
        Ok(Perturbation {
            psi: [f(self.psi1p, self.ns1)?, f(self.psi2p, self.ns2)?],
            eta_p: self.eta_p,
            eta_tilde_p: self.eta_tilde_p,
        })
    }
}

/// FNV-1a hash of the serialized state, as 16 hex digits.
pub fn state_fingerprint(state: &FlowState) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in state_to_json(state).bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    format!("{h:016x}")
}

pub fn state_to_json(state: &FlowState) -> String {
    serde_json::to_string_pretty(&StateDocument::from_state(state)).expect("state serializes")
}

pub fn state_from_json(s: &str) -> Result<FlowState> {
    let doc: StateDocument = serde_json::from_str(s).map_err(|e| Error::Invalid(e.to_string()))?;
    doc.into_state()
}
