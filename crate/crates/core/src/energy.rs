//! The functional `H`, its first variation, the residual of the governing
//! system and the criticality audit.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Boundary, Field, LayerGrid, Measure};
use crate::profiles::{BernoulliEval, BernoulliMap, LayerProfiles};
use crate::state::{
    check_admissible, perturbation_norm, random_admissible, FlowState, Perturbation,
};

/// Constant densities multiplying `g (y + d)` in each layer of `H`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GravityRefs {
    pub rho1: f64,
    pub rho2: f64,
}

impl GravityRefs {
    /// `(rho1(p1), rho2(p2))`.
    pub fn defaults(maps: &[BernoulliMap; 2], p1: f64, p2: f64) -> Self {
        Self {
            rho1: maps[0].profiles().rho(p1),
            rho2: maps[1].profiles().rho(p2),
        }
    }

    /// `(rho1(p1), rho2(0))`, as printed in the functional itself.
    pub fn literal(maps: &[BernoulliMap; 2], p1: f64) -> Self {
        Self {
            rho1: maps[0].profiles().rho(p1),
            rho2: maps[1].profiles().rho(0.0),
        }
    }

    fn get(&self, layer: usize) -> f64 {
        if layer == 0 {
            self.rho1
        } else {
            self.rho2
        }
    }
}

/// Base-state quantities of one layer reused by every variation.
#[derive(Debug, Clone)]
pub struct LayerBase {
    pub gx: Field,
    pub gy: Field,
    pub lap: Field,
    pub f: Field,
    pub d1: Field,
    pub d2: Field,
    pub d22: Field,
}

fn eval_map_field(grid: &LayerGrid, lap: &Field, map: &BernoulliMap) -> Result<Vec<BernoulliEval>> {
    let ns = grid.ns;
    let cols: Vec<Vec<BernoulliEval>> = (0..grid.nx)
        .into_par_iter()
        .map(|j| {
            (0..ns)
                .map(|k| {
                    let (y, m) = (grid.y[[j, k]], lap[[j, k]]);
                    map.eval(y, m).map_err(|_| Error::Window {
                        layer: grid.layer.id(),
                        y,
                        value: m,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(cols.into_iter().flatten().collect())
}

impl LayerBase {
    pub fn new(grid: &LayerGrid, psi: &Field, map: &BernoulliMap) -> Result<Self> {
        let (gx, gy) = grid.mapped_gradient(psi)?;
        let lap = grid.mapped_laplacian(psi)?;
        let evals = eval_map_field(grid, &lap, map)?;
        let shape = (grid.nx, grid.ns);
        let pick = |f: fn(&BernoulliEval) -> f64| {
            Field::from_shape_vec(shape, evals.iter().map(f).collect()).expect("shape")
        };
        Ok(Self {
            f: pick(|e| e.f),
            d1: pick(|e| e.d1),
            d2: pick(|e| e.d2),
            d22: pick(|e| e.d22),
            gx,
            gy,
            lap,
        })
    }

    pub fn grad_sq(&self) -> Field {
        &self.gx * &self.gx + &self.gy * &self.gy
    }
}

/// Both layers of [`LayerBase`].
#[derive(Debug, Clone)]
pub struct BaseFields {
    pub layers: [LayerBase; 2],
}

impl BaseFields {
    pub fn new(state: &FlowState, maps: &[BernoulliMap; 2]) -> Result<Self> {
        Ok(Self {
            layers: [
                LayerBase::new(&state.grids[0], &state.psi[0], &maps[0])?,
                LayerBase::new(&state.grids[1], &state.psi[1], &maps[1])?,
            ],
        })
    }
}

fn h_from_base(state: &FlowState, base: &BaseFields, refs: GravityRefs) -> f64 {
    let p = &state.params;
    let q = [p.q1 + p.q2, p.q2];
    let mut total = 0.0;
    for (i, (grid, lb)) in state.grids.iter().zip(&base.layers).enumerate() {
        let grav = p.g * refs.get(i);
        let mut integrand = lb.grad_sq() * 0.5 - &lb.f;
        integrand.zip_mut_with(&grid.y, |v, &y| *v += grav * (y + p.d) - q[i]);
        total += grid.area_unchecked(&integrand);
    }
    total
}

/// Value of the functional `H`.
pub fn eval_h(state: &FlowState, maps: &[BernoulliMap; 2], refs: GravityRefs) -> Result<f64> {
    let base = BaseFields::new(state, maps)?;
    Ok(h_from_base(state, &base, refs))
}

/// Max and RMS of a residual.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Norms {
    pub l2: f64,
    pub max: f64,
}

fn field_norms(grid: &LayerGrid, r: &Field) -> Norms {
    let area = grid.area_unchecked(&Field::ones(r.dim()));
    Norms {
        l2: (grid.area_unchecked(&(r * r)) / area).sqrt(),
        max: r.iter().fold(0.0, |m, v| m.max(v.abs())),
    }
}

fn line_norms(r: &[f64]) -> Norms {
    Norms {
        l2: (r.iter().map(|v| v * v).sum::<f64>() / r.len() as f64).sqrt(),
        max: r.iter().fold(0.0, |m, v| m.max(v.abs())),
    }
}

/// Residual of the governing system on a state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResidualReport {
    #[serde(skip)]
    pub interior: [Field; 2],
    pub interior_norms: [Norms; 2],
    pub surface_bernoulli: Vec<f64>,
    pub surface_norms: Norms,
    pub interface_bernoulli: Vec<f64>,
    pub interface_norms: Norms,
    /// Max trace deviation on `B`, `S~` and `S`.
    pub dirichlet: [f64; 3],
}

impl ResidualReport {
    /// Largest max-norm over every part of the report.
    pub fn max_norm(&self) -> f64 {
        [
            self.interior_norms[0].max,
            self.interior_norms[1].max,
            self.surface_norms.max,
            self.interface_norms.max,
        ]
        .into_iter()
        .chain(self.dirichlet)
        .fold(0.0, f64::max)
    }
}

/// Residual of every line of the governing system.
pub fn pde_residual(state: &FlowState, profiles: [&LayerProfiles; 2]) -> Result<ResidualReport> {
    let p = &state.params;
    let g = p.g;
    let mut interior = Vec::with_capacity(2);
    let mut grads = Vec::with_capacity(2);
    for ((grid, psi), prof) in state.grids.iter().zip(&state.psi).zip(profiles) {
        let lap = grid.mapped_laplacian(psi)?;
        let mut r = lap.clone();
        for ((v, &y), &s) in r.iter_mut().zip(&grid.y).zip(psi) {
            *v += -g * y * prof.rho_prime(-s) + prof.beta(s);
        }
        interior.push(r);
        grads.push(grid.mapped_gradient(psi)?);
    }
    let (g1, g2) = (&state.grids[0], &state.grids[1]);
    let sq = |l: usize, row: usize, j: usize| {
        let (fx, fy) = &grads[l];
        fx[[j, row]].powi(2) + fy[[j, row]].powi(2)
    };
    let top2 = g2.ns - 1;
    let top1 = g1.ns - 1;
    let surface: Vec<f64> = (0..g2.nx)
        .map(|j| {
            let y = g2.y[[j, top2]];
            let s = state.psi[1][[j, top2]];
            0.5 * sq(1, top2, j) + g * profiles[1].rho(-s) * (y + p.d) - p.q2
        })
        .collect();
    let drho = profiles[0].rho(0.0) - profiles[1].rho(0.0);
    let interface: Vec<f64> = (0..g1.nx)
        .map(|j| {
            let y = g1.y[[j, top1]];
            0.5 * (sq(0, top1, j) - sq(1, 0, j)) + g * drho * (y + p.d) - p.q1
        })
        .collect();
    let dev = |v: Vec<f64>, t: f64| v.iter().fold(0.0f64, |m, x| m.max((x - t).abs()));
    let dirichlet = [
        dev(g1.trace(&state.psi[0], Boundary::Bottom)?, -state.p1),
        dev(g1.trace(&state.psi[0], Boundary::Interface)?, 0.0)
            .max(dev(g2.trace(&state.psi[1], Boundary::Interface)?, 0.0)),
        dev(g2.trace(&state.psi[1], Boundary::Surface)?, -state.p2),
    ];
    let interior_norms = [field_norms(g1, &interior[0]), field_norms(g2, &interior[1])];
    let i2 = interior.pop().unwrap();
    let i1 = interior.pop().unwrap();
    Ok(ResidualReport {
        interior: [i1, i2],
        interior_norms,
        surface_norms: line_norms(&surface),
        surface_bernoulli: surface,
        interface_norms: line_norms(&interface),
        interface_bernoulli: interface,
        dirichlet,
    })
}

/// The four parts of `dH`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VariationBreakdown {
    #[serde(rename = "dH1")]
    pub dh1: f64,
    #[serde(rename = "dH2")]
    pub dh2: f64,
    #[serde(rename = "dH3")]
    pub dh3: f64,
    #[serde(rename = "dH4")]
    pub dh4: f64,
    pub total: f64,
}

impl VariationBreakdown {
    fn new(dh1: f64, dh2: f64, dh3: f64, dh4: f64) -> Self {
        Self {
            dh1,
            dh2,
            dh3,
            dh4,
            total: dh1 + dh2 + dh3 + dh4,
        }
    }
}

/// First variation using precomputed base fields; skips the admissibility check.
pub fn first_variation_with(
    state: &FlowState,
    base: &BaseFields,
    maps: &[BernoulliMap; 2],
    refs: GravityRefs,
    pert: &Perturbation,
) -> Result<VariationBreakdown> {
    let p = &state.params;
    let (g1, g2) = (&state.grids[0], &state.grids[1]);
    let (b1, b2) = (&base.layers[0], &base.layers[1]);

    let mut dh1 = 0.0;
    for ((grid, lb), (psi, psip)) in state
        .grids
        .iter()
        .zip(&base.layers)
        .zip(state.psi.iter().zip(&pert.psi))
    {
        let lap_p = grid.mapped_laplacian(psip)?;
        dh1 -= grid.area_dot(&(psi + &lb.d2), &lap_p);
    }

    let top2 = g2.ns - 1;
    let top1 = g1.ns - 1;
    let grav2 = p.g * refs.rho2;
    let surface: Vec<f64> = (0..g2.nx)
        .map(|j| {
            let y = g2.y[[j, top2]];
            let gs = b2.gx[[j, top2]].powi(2) + b2.gy[[j, top2]].powi(2);
            (0.5 * gs + grav2 * (y + p.d) - p.q2 - b2.f[[j, top2]]) * pert.eta_p.value(g2.x[j])
        })
        .collect();
    let dh2 = g2.line_integral(&surface, Boundary::Surface, Measure::Dx)?;

    let product =
        |a: Vec<f64>, b: Vec<f64>| -> Vec<f64> { a.iter().zip(&b).map(|(x, y)| x * y).collect() };
    let s_term = g2.line_integral(
        &product(
            g2.trace(&state.psi[1], Boundary::Surface)?,
            g2.boundary_normal_derivative(&pert.psi[1], Boundary::Surface)?,
        ),
        Boundary::Surface,
        Measure::Dl,
    )?;
    let i2_term = g2.line_integral(
        &product(
            g2.trace(&state.psi[1], Boundary::Interface)?,
            g2.boundary_normal_derivative(&pert.psi[1], Boundary::Interface)?,
        ),
        Boundary::Interface,
        Measure::Dl,
    )?;
    let i1_term = g1.line_integral(
        &product(
            g1.trace(&state.psi[0], Boundary::Interface)?,
            g1.boundary_normal_derivative(&pert.psi[0], Boundary::Interface)?,
        ),
        Boundary::Interface,
        Measure::Dl,
    )?;
    let b_term = g1.line_integral(
        &product(
            g1.trace(&state.psi[0], Boundary::Bottom)?,
            g1.boundary_normal_derivative(&pert.psi[0], Boundary::Bottom)?,
        ),
        Boundary::Bottom,
        Measure::Dx,
    )?;
    let dh3 = s_term - i2_term + i1_term - b_term;

    let drho = maps[0].profiles().rho(0.0) - maps[1].profiles().rho(0.0);
    let interface: Vec<f64> = (0..g1.nx)
        .map(|j| {
            let y = g1.y[[j, top1]];
            let s1 = b1.gx[[j, top1]].powi(2) + b1.gy[[j, top1]].powi(2);
            let s2 = b2.gx[[j, 0]].powi(2) + b2.gy[[j, 0]].powi(2);
            let bern =
                0.5 * (s1 - s2) + p.g * drho * (y + p.d) - b1.f[[j, top1]] + b2.f[[j, 0]] - p.q1;
            bern * pert.eta_tilde_p.value(g1.x[j])
        })
        .collect();
    let dh4 = g1.line_integral(&interface, Boundary::Interface, Measure::Dx)?;

    Ok(VariationBreakdown::new(dh1, dh2, dh3, dh4))
}

/// The four-part first variation along an admissible perturbation.
pub fn first_variation(
    state: &FlowState,
    maps: &[BernoulliMap; 2],
    refs: GravityRefs,
    pert: &Perturbation,
) -> Result<VariationBreakdown> {
    check_admissible(pert, state)?;
    let base = BaseFields::new(state, maps)?;
    first_variation_with(state, &base, maps, refs, pert)
}

/// Central difference of `H` along `pert` on rebuilt perturbed domains.
pub fn fd_first_variation(
    state: &FlowState,
    maps: &[BernoulliMap; 2],
    refs: GravityRefs,
    pert: &Perturbation,
    eps: f64,
) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::Invalid("eps must be positive".into()));
    }
    let plus = eval_h(&state.displaced(eps, pert)?, maps, refs)?;
    let minus = eval_h(&state.displaced(-eps, pert)?, maps, refs)?;
    Ok((plus - minus) / (2.0 * eps))
}

/// Finite-difference check of one group of terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TermCheck {
    pub analytic: f64,
    pub finite_difference: f64,
    pub mismatch: f64,
}

impl TermCheck {
    fn new(analytic: f64, fd: f64) -> Self {
        Self {
            analytic,
            finite_difference: fd,
            mismatch: analytic - fd,
        }
    }
}

/// Term-by-term comparison for surface-perturbing directions: the stream
/// function part against `dH1 + dH3`, the `eta` part against `dH2` and the
/// `eta~` part against `dH4`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceAttribution {
    pub eps: f64,
    pub stream: TermCheck,
    pub surface: TermCheck,
    pub interface: TermCheck,
}

pub fn attribute_surface_terms(
    state: &FlowState,
    maps: &[BernoulliMap; 2],
    refs: GravityRefs,
    pert: &Perturbation,
    eps: f64,
) -> Result<SurfaceAttribution> {
    let base = BaseFields::new(state, maps)?;
    let v = first_variation_with(state, &base, maps, refs, pert)?;
    let zero = Perturbation::zeros(state);
    let stream_only = Perturbation {
        psi: pert.psi.clone(),
        ..zero.clone()
    };
    let eta_only = Perturbation {
        eta_p: pert.eta_p.clone(),
        ..zero.clone()
    };
    let tilde_only = Perturbation {
        eta_tilde_p: pert.eta_tilde_p.clone(),
        ..zero
    };
    let fd = |q: &Perturbation| fd_first_variation(state, maps, refs, q, eps);
    Ok(SurfaceAttribution {
        eps,
        stream: TermCheck::new(v.dh1 + v.dh3, fd(&stream_only)?),
        surface: TermCheck::new(v.dh2, fd(&eta_only)?),
        interface: TermCheck::new(v.dh4, fd(&tilde_only)?),
    })
}

/// Thresholds of the criticality audit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AuditTolerances {
    pub tol_grad: f64,
    pub tol_res: f64,
    pub modes: usize,
}

impl Default for AuditTolerances {
    fn default() -> Self {
        Self {
            tol_grad: 1e-2,
            tol_res: 1e-2,
            modes: 3,
        }
    }
}

/// One trial direction of the audit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub trial: usize,
    pub seed: u64,
    pub pert_norm: f64,
    #[serde(flatten)]
    pub variation: VariationBreakdown,
    /// `|total| / pert_norm`.
    pub normalized: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImplicationMatrix {
    pub solution_implies_critical: bool,
    pub critical_implies_solution: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditReport {
    pub rows: Vec<AuditRow>,
    pub max_normalized: f64,
    pub residual: ResidualReport,
    pub residual_max: f64,
    /// `max_normalized / residual_max`, absent when the residual vanishes.
    pub ratio: Option<f64>,
    pub critical: bool,
    pub solution: bool,
    pub implications: ImplicationMatrix,
    pub tolerances: AuditTolerances,
}

impl AuditReport {
    pub fn verdict(&self) -> &'static str {
        match (self.critical, self.solution) {
            (true, true) => "CRITICAL+SOLUTION",
            (true, false) => "CRITICAL",
            (false, true) => "SOLUTION",
            (false, false) => "NEITHER",
        }
    }

    pub const CSV_HEADER: &'static str = "trial,pert_norm,dH1,dH2,dH3,dH4,total,normalized";

    pub fn csv_rows(&self) -> Vec<String> {
        self.rows
            .iter()
            .map(|r| {
                let v = &r.variation;
                format!(
                    "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                    r.trial, r.pert_norm, v.dh1, v.dh2, v.dh3, v.dh4, v.total, r.normalized
                )
            })
            .collect()
    }
}

/// Samples `n_trials` random admissible directions (seeds `seed..seed+n`)
/// and compares the criticality and solution flags.
pub fn audit_criticality(
    state: &FlowState,
    maps: &[BernoulliMap; 2],
    refs: GravityRefs,
    n_trials: usize,
    seed: u64,
    tol: AuditTolerances,
) -> Result<AuditReport> {
    if n_trials == 0 {
        return Err(Error::Invalid("n_trials must be at least 1".into()));
    }
    let base = BaseFields::new(state, maps)?;
    let rows = (0..n_trials)
        .into_par_iter()
        .map(|t| {
            let s = seed.wrapping_add(t as u64);
            let pert = random_admissible(s, state, tol.modes, 1.0)?;
            let norm = perturbation_norm(&pert, state);
            let v = first_variation_with(state, &base, maps, refs, &pert)?;
            Ok(AuditRow {
                trial: t,
                seed: s,
                pert_norm: norm,
                variation: v,
                normalized: if norm > 0.0 {
                    v.total.abs() / norm
                } else {
                    0.0
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let max_normalized = rows.iter().fold(0.0f64, |m, r| m.max(r.normalized));
    let residual = pde_residual(state, [maps[0].profiles(), maps[1].profiles()])?;
    let residual_max = residual.max_norm();
    let critical = max_normalized <= tol.tol_grad;
    let solution = residual_max <= tol.tol_res;
    Ok(AuditReport {
        rows,
        max_normalized,
        ratio: (residual_max > 0.0).then(|| max_normalized / residual_max),
        residual,
        residual_max,
        critical,
        solution,
        implications: ImplicationMatrix {
            solution_implies_critical: !solution || critical,
            critical_implies_solution: !critical || solution,
        },
        tolerances: tol,
    })
}
