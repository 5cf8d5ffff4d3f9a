//! x-independent exact flows, manufactured solutions and reconstruction of
//! velocity and pressure from stream functions.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    build_domain, build_grids, Boundary, Field, FlowDomain, LayerGrid, SurfaceCurve,
};
use crate::numerics::{adaptive_gauss, cheb_barycentric, cheb_diff_matrix, cheb_nodes};
use crate::profiles::{
    build_bernoulli_map, phi_forward, BernoulliMap, Layer, LayerProfiles, MapWindow, ScalarProfile,
};
use crate::state::{assemble_state, FlowState, PhysicalParams};

/// Closed-form stream function of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnalyticStream {
    /// `sum c_k y^k`.
    Polynomial { coefficients: Vec<f64> },
    /// `amplitude * sinh(rate * y)`.
    Sinh { amplitude: f64, rate: f64 },
}

impl AnalyticStream {
    /// `(psi, psi', psi'')`.
    pub fn eval_all(&self, y: f64) -> (f64, f64, f64) {
        match self {
            Self::Polynomial { coefficients } => {
                let (mut v, mut d, mut dd) = (0.0, 0.0, 0.0);
                for c in coefficients.iter().rev() {
                    dd = dd * y + 2.0 * d;
                    d = d * y + v;
                    v = v * y + c;
                }
                (v, d, dd)
            }
            Self::Sinh { amplitude, rate } => {
                let (s, c) = ((rate * y).sinh(), (rate * y).cosh());
                (
                    amplitude * s,
                    amplitude * rate * c,
                    amplitude * rate * rate * s,
                )
            }
        }
    }
}

/// `psi(y)` on one layer interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StreamProfile {
    /// Values on Chebyshev-Gauss-Lobatto nodes of `[lower, upper]`, ordered
    /// from `upper` down to `lower`.
    Chebyshev {
        lower: f64,
        upper: f64,
        values: Vec<f64>,
    },
    Analytic(AnalyticStream),
}

fn mat_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter()
        .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

impl StreamProfile {
    /// `(psi, psi', psi'')` at `y`.
    pub fn eval_all(&self, y: f64) -> (f64, f64, f64) {
        match self {
            Self::Analytic(a) => a.eval_all(y),
            Self::Chebyshev {
                lower,
                upper,
                values,
            } => {
                let n = values.len() - 1;
                let nodes = cheb_nodes(n);
                let scale = 2.0 / (upper - lower);
                let t = (2.0 * y - lower - upper) / (upper - lower);
                let d = cheb_diff_matrix(n);
                let dv: Vec<f64> = mat_vec(&d, values).iter().map(|v| v * scale).collect();
                let ddv: Vec<f64> = mat_vec(&d, &dv).iter().map(|v| v * scale).collect();
                (
                    cheb_barycentric(&nodes, values, t),
                    cheb_barycentric(&nodes, &dv, t),
                    cheb_barycentric(&nodes, &ddv, t),
                )
            }
        }
    }

    pub fn value(&self, y: f64) -> f64 {
        self.eval_all(y).0
    }

    pub fn derivative(&self, y: f64) -> f64 {
        self.eval_all(y).1
    }
}

/// An x-independent solution of the governing system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaminarFlow {
    pub psi: [StreamProfile; 2],
    pub profiles: [LayerProfiles; 2],
    pub g: f64,
    pub d: f64,
    pub h_tilde: f64,
    pub h: f64,
    pub p1: f64,
    pub p2: f64,
    #[serde(rename = "Q1")]
    pub q1: f64,
    #[serde(rename = "Q2")]
    pub q2: f64,
    /// Largest scaled collocation residual (zero for closed-form profiles).
    pub residual: f64,
    /// `psi'` vanishes or changes sign somewhere.
    pub stagnant: bool,
}

impl LaminarFlow {
    pub fn interval(&self, layer: usize) -> (f64, f64) {
        if layer == 0 {
            (-self.d, self.h_tilde)
        } else {
            (self.h_tilde, self.h)
        }
    }

    pub fn psi(&self, layer: usize, y: f64) -> f64 {
        self.psi[layer].value(y)
    }

    pub fn psi_prime(&self, layer: usize, y: f64) -> f64 {
        self.psi[layer].derivative(y)
    }

    /// Flat domain and grids of this flow.
    pub fn grids(&self, nx: usize, ns1: usize, ns2: usize) -> Result<(LayerGrid, LayerGrid)> {
        let domain = build_domain(
            self.d,
            SurfaceCurve::flat(self.h_tilde),
            SurfaceCurve::flat(self.h),
        )?;
        build_grids(&domain, nx, ns1, ns2)
    }

    /// Lifts onto freshly built `nx x (ns1 + ns2)` grids.
    pub fn lift(&self, nx: usize, ns1: usize, ns2: usize, c: f64, p_atm: f64) -> Result<FlowState> {
        lift_to_state(self, self.grids(nx, ns1, ns2)?, c, p_atm)
    }
}

/// Settings of the collocation solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LaminarOptions {
    pub degree: usize,
    pub ode_tol: f64,
    pub max_iter: usize,
}

impl Default for LaminarOptions {
    fn default() -> Self {
        Self {
            degree: 32,
            ode_tol: 1e-10,
            max_iter: 60,
        }
    }
}

/// Solves `psi'' = g y rho'(-psi) - beta(psi)` on `[a, b]` with
/// `psi(a) = va`, `psi(b) = vb`. Returns node values and the scaled residual.
fn solve_layer_bvp(
    prof: &LayerProfiles,
    g: f64,
    (a, b): (f64, f64),
    (va, vb): (f64, f64),
    opts: LaminarOptions,
) -> Result<(Vec<f64>, f64)> {
    let n = opts.degree;
    let t = cheb_nodes(n);
    let y: Vec<f64> = t
        .iter()
        .map(|t| 0.5 * (a + b) + 0.5 * (b - a) * t)
        .collect();
    let scale = 2.0 / (b - a);
    let d1 = DMatrix::from_fn(n + 1, n + 1, {
        let d = cheb_diff_matrix(n);
        move |i, j| d[i][j] * scale
    });
    let d2 = &d1 * &d1;
    let row_abs: Vec<f64> = (0..=n)
        .map(|i| d2.row(i).iter().map(|v| v.abs()).sum())
        .collect();
    // node 0 is y = b, node n is y = a
    let mut psi = DVector::from_fn(n + 1, |i, _| va + (vb - va) * (y[i] - a) / (b - a));
    let residual = |psi: &DVector<f64>| -> (DVector<f64>, f64) {
        let lap = &d2 * psi;
        let mut r = DVector::zeros(n + 1);
        let mut scaled: f64 = 0.0;
        let pmax = psi.amax().max(1.0);
        for i in 1..n {
            r[i] = lap[i] - g * y[i] * prof.rho_prime(-psi[i]) + prof.beta(psi[i]);
            scaled = scaled.max(r[i].abs() / (1.0 + row_abs[i] * pmax));
        }
        r[0] = psi[0] - vb;
        r[n] = psi[n] - va;
        scaled = scaled.max(r[0].abs()).max(r[n].abs());
        (r, scaled)
    };
    let (mut r, mut res) = residual(&psi);
    for it in 0..opts.max_iter {
        if res <= opts.ode_tol {
            psi[0] = vb;
            psi[n] = va;
            return Ok((psi.iter().copied().collect(), res));
        }
        let mut jac = d2.clone();
        for i in 1..n {
            jac[(i, i)] += g * y[i] * prof.rho.second_derivative(-psi[i]) + prof.beta_prime(psi[i]);
        }
        for i in [0, n] {
            jac.row_mut(i).fill(0.0);
            jac[(i, i)] = 1.0;
        }
        let step = jac.lu().solve(&(-&r)).ok_or(Error::NewtonDivergence {
            residual: res,
            iterations: it,
        })?;
        let mut lambda = 1.0;
        loop {
            let trial = &psi + &step * lambda;
            let (tr, tres) = residual(&trial);
            if tres < res || lambda < 1e-4 {
                psi = trial;
                r = tr;
                res = tres;
                break;
            }
            lambda *= 0.5;
        }
    }
    Err(Error::NewtonDivergence {
        residual: res,
        iterations: opts.max_iter,
    })
}

fn laminar_constants(
    psi: &[StreamProfile; 2],
    profiles: &[LayerProfiles; 2],
    g: f64,
    d: f64,
    h_tilde: f64,
    h: f64,
    p2: f64,
) -> (f64, f64) {
    let s2 = psi[1].derivative(h);
    let q2 = 0.5 * s2 * s2 + g * profiles[1].rho(p2) * (h + d);
    let i1 = psi[0].derivative(h_tilde);
    let i2 = psi[1].derivative(h_tilde);
    let q1 = 0.5 * (i1 * i1 - i2 * i2)
        + g * (profiles[0].rho(0.0) - profiles[1].rho(0.0)) * (h_tilde + d);
    (q1, q2)
}

fn stagnant_on(psi: &StreamProfile, (a, b): (f64, f64)) -> bool {
    let n = 400;
    let s: Vec<f64> = (0..=n)
        .map(|k| psi.derivative(a + (b - a) * k as f64 / n as f64))
        .collect();
    !(s.iter().all(|v| *v > 0.0) || s.iter().all(|v| *v < 0.0))
}

/// Laminar flow with the four Dirichlet values `-p1, 0, 0, -p2`.
#[allow(clippy::too_many_arguments)]
pub fn solve_laminar(
    profiles: [LayerProfiles; 2],
    g: f64,
    d: f64,
    h_tilde: f64,
    h: f64,
    p1: f64,
    p2: f64,
    opts: LaminarOptions,
) -> Result<LaminarFlow> {
    if !(g > 0.0 && d > 0.0 && -d < h_tilde && h_tilde < h) {
        return Err(Error::Invalid(format!(
            "laminar data need g, d > 0 and -d < h_tilde < h (got g = {g}, d = {d}, h_tilde = {h_tilde}, h = {h})"
        )));
    }
    if opts.degree < 4 {
        return Err(Error::Invalid(
            "collocation degree must be at least 4".into(),
        ));
    }
    let (v1, r1) = solve_layer_bvp(&profiles[0], g, (-d, h_tilde), (-p1, 0.0), opts)?;
    let (v2, r2) = solve_layer_bvp(&profiles[1], g, (h_tilde, h), (0.0, -p2), opts)?;
    let psi = [
        StreamProfile::Chebyshev {
            lower: -d,
            upper: h_tilde,
            values: v1,
        },
        StreamProfile::Chebyshev {
            lower: h_tilde,
            upper: h,
            values: v2,
        },
    ];
    let (q1, q2) = laminar_constants(&psi, &profiles, g, d, h_tilde, h, p2);
    let stagnant = stagnant_on(&psi[0], (-d, h_tilde)) || stagnant_on(&psi[1], (h_tilde, h));
    Ok(LaminarFlow {
        psi,
        profiles,
        g,
        d,
        h_tilde,
        h,
        p1,
        p2,
        q1,
        q2,
        residual: r1.max(r2),
        stagnant,
    })
}

/// Replicates `psi_i(y)` across x on flat grids.
pub fn lift_to_state(
    flow: &LaminarFlow,
    grids: (LayerGrid, LayerGrid),
    c: f64,
    p_atm: f64,
) -> Result<FlowState> {
    let domain = build_domain(
        flow.d,
        SurfaceCurve::flat(flow.h_tilde),
        SurfaceCurve::flat(flow.h),
    )?;
    let (g1, g2) = grids;
    let flat = |curve: &SurfaceCurve, level: f64| {
        curve.mean == level && curve.cos.iter().chain(&curve.sin).all(|v| *v == 0.0)
    };
    if !(flat(g1.lower_curve(), -flow.d)
        && flat(g1.upper_curve(), flow.h_tilde)
        && flat(g2.upper_curve(), flow.h))
    {
        return Err(Error::Invalid(
            "grids do not match the laminar domain".into(),
        ));
    }
    let fill = |grid: &LayerGrid, layer: usize, bottom: f64, top: f64| {
        let mut f = grid.field_from_xy(|_, y| flow.psi(layer, y));
        f.column_mut(0).fill(bottom);
        f.column_mut(grid.ns - 1).fill(top);
        f
    };
    let psi1 = fill(&g1, 0, -flow.p1, 0.0);
    let psi2 = fill(&g2, 1, 0.0, -flow.p2);
    let params = PhysicalParams {
        g: flow.g,
        c,
        d: flow.d,
        p_atm,
        q1: flow.q1,
        q2: flow.q2,
    };
    assemble_state(psi1, psi2, domain, (g1, g2), flow.p1, flow.p2, params)
}

/// Carries the laminar profiles onto a curved domain along the sigma lines:
/// `Psi_i(x, sigma) = psi_i(y_flat(sigma))`. The result keeps the Dirichlet
/// traces but is not a solution unless the domain is flat.
pub fn warp_to_domain(
    flow: &LaminarFlow,
    domain: FlowDomain,
    nx: usize,
    ns1: usize,
    ns2: usize,
    c: f64,
    p_atm: f64,
) -> Result<FlowState> {
    let (g1, g2) = build_grids(&domain, nx, ns1, ns2)?;
    let fill = |grid: &LayerGrid, layer: usize, lo: f64, hi: f64, bottom: f64, top: f64| {
        let mut f = grid.field_from_xs(|_, s| flow.psi(layer, lo + s * (hi - lo)));
        f.column_mut(0).fill(bottom);
        f.column_mut(grid.ns - 1).fill(top);
        f
    };
    let psi1 = fill(&g1, 0, -flow.d, flow.h_tilde, -flow.p1, 0.0);
    let psi2 = fill(&g2, 1, flow.h_tilde, flow.h, 0.0, -flow.p2);
    let params = PhysicalParams {
        g: flow.g,
        c,
        d: flow.d,
        p_atm,
        q1: flow.q1,
        q2: flow.q2,
    };
    assemble_state(psi1, psi2, domain, (g1, g2), flow.p1, flow.p2, params)
}

/// Tabulation settings for manufactured vorticity functions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ManufactureOptions {
    pub knots: usize,
    /// Fraction of each layer interval added on both sides of the table.
    pub extension: f64,
}

impl Default for ManufactureOptions {
    fn default() -> Self {
        Self {
            knots: 4001,
            extension: 0.5,
        }
    }
}

/// Sign facts about a manufactured profile pair; reported, not enforced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManufactureReport {
    pub rho_nonincreasing: [bool; 2],
    pub beta_decreasing: [bool; 2],
}

/// `beta_i(q) = g y_i(q) rho_i'(-q) - psi_i''(y_i(q))`, tabulated.
#[allow(clippy::too_many_arguments)]
pub fn manufacture_from_streamfunction(
    psi: [AnalyticStream; 2],
    rho: [ScalarProfile; 2],
    g: f64,
    d: f64,
    h_tilde: f64,
    h: f64,
    opts: ManufactureOptions,
) -> Result<([ScalarProfile; 2], LaminarFlow, ManufactureReport)> {
    if !(g > 0.0 && d > 0.0 && -d < h_tilde && h_tilde < h) {
        return Err(Error::Invalid(
            "manufactured data need g, d > 0 and -d < h_tilde < h".into(),
        ));
    }
    if opts.knots < 16 {
        return Err(Error::Invalid(
            "at least 16 tabulation knots are required".into(),
        ));
    }
    let intervals = [(-d, h_tilde), (h_tilde, h)];
    let mut betas = Vec::with_capacity(2);
    let mut beta_decreasing = [false; 2];
    for (i, (stream, (a, b))) in psi.iter().zip(intervals).enumerate() {
        let n = opts.knots;
        let monotone_on = |lo: f64, hi: f64| {
            let s: Vec<f64> = (0..=n)
                .map(|k| stream.eval_all(lo + (hi - lo) * k as f64 / n as f64).1)
                .collect();
            s.iter().all(|v| *v > 0.0) || s.iter().all(|v| *v < 0.0)
        };
        if !monotone_on(a, b) {
            return Err(Error::NonMonotoneStream { layer: i as u8 + 1 });
        }
        if stream.eval_all(h_tilde).0.abs() > 1e-12 {
            return Err(Error::Invalid(format!(
                "manufactured psi{} does not vanish on the interface",
                i + 1
            )));
        }
        // widen the table while psi stays monotone
        let mut ext = opts.extension * (b - a);
        while ext > 1e-3 * (b - a) && !monotone_on(a - ext, b + ext) {
            ext *= 0.5;
        }
        let (lo, hi) = (a - ext, b + ext);
        let mut pts: Vec<(f64, f64)> = (0..n)
            .map(|k| {
                let y = lo + (hi - lo) * k as f64 / (n - 1) as f64;
                let (q, _, dd) = stream.eval_all(y);
                (q, g * y * rho[i].derivative(-q) - dd)
            })
            .collect();
        pts.sort_by(|x, y| x.0.total_cmp(&y.0));
        beta_decreasing[i] = pts.windows(2).all(|w| w[1].1 < w[0].1);
        let (knots, values): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        betas.push(ScalarProfile::tabulated(knots, values)?);
    }
    let b2 = betas.pop().unwrap();
    let b1 = betas.pop().unwrap();
    let profiles = [
        LayerProfiles::new(Layer::Lower, rho[0].clone(), b1.clone()),
        LayerProfiles::new(Layer::Upper, rho[1].clone(), b2.clone()),
    ];
    let p1 = -psi[0].eval_all(-d).0;
    let p2 = -psi[1].eval_all(h).0;
    let psi = psi.map(StreamProfile::Analytic);
    let (q1, q2) = laminar_constants(&psi, &profiles, g, d, h_tilde, h, p2);
    let stagnant = stagnant_on(&psi[0], (-d, h_tilde)) || stagnant_on(&psi[1], (h_tilde, h));
    let rho_nonincreasing = [0, 1].map(|i| {
        let (a, b) = (p1.min(p2).min(0.0), p1.max(p2).max(0.0));
        (0..=200).all(|k| rho[i].derivative(a + (b - a) * k as f64 / 200.0) <= 0.0)
    });
    Ok((
        [b1, b2],
        LaminarFlow {
            psi,
            profiles,
            g,
            d,
            h_tilde,
            h,
            p1,
            p2,
            q1,
            q2,
            residual: 0.0,
            stagnant,
        },
        ManufactureReport {
            rho_nonincreasing,
            beta_decreasing,
        },
    ))
}

/// Bernoulli maps certified on windows around the stream-function ranges of `state`.
pub fn maps_for_state(
    state: &FlowState,
    profiles: &[LayerProfiles; 2],
) -> Result<[BernoulliMap; 2]> {
    maps_for_state_with(state, profiles, 0.05)
}

/// As [`maps_for_state`] with at least `min_margin` of slack in `p` on each side.
///
/// Windows are also widened, where the profiles allow, until the map covers
/// the state's own Laplacian values, so states that are far from solutions
/// can still be evaluated.
pub fn maps_for_state_with(
    state: &FlowState,
    profiles: &[LayerProfiles; 2],
    min_margin: f64,
) -> Result<[BernoulliMap; 2]> {
    let psi = state.psi_ranges();
    let y = state.y_ranges();
    let mut windows = [0, 1].map(|i| MapWindow::around_psi(psi[i], y[i], min_margin));
    for i in 0..2 {
        let omega = state.grids[i].mapped_laplacian(&state.psi[i])?;
        let lo = omega.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = omega.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if lo.is_finite() && hi.is_finite() {
            windows[i] = cover_values(windows[i], &profiles[i], state.params.g, (lo, hi));
        }
    }
    let (f1, f2) = build_bernoulli_map(
        &profiles[0],
        &profiles[1],
        state.params.g,
        state.p2,
        windows,
    )?;
    Ok([f1, f2])
}

/// Grows the `p` window on the side that moves `phi_y` toward the missing
/// values, stopping at the edge of the profiles' admissible range.
fn cover_values(mut w: MapWindow, prof: &LayerProfiles, g: f64, m: (f64, f64)) -> MapWindow {
    let image = |w: &MapWindow, y: f64| -> Option<(f64, f64)> {
        let a = phi_forward(prof, g, y, w.p_window.0).ok()?;
        let b = phi_forward(prof, g, y, w.p_window.1).ok()?;
        Some((a, b))
    };
    let mut step = 0.25 * (w.p_window.1 - w.p_window.0).abs().max(0.1);
    for _ in 0..40 {
        let mut grow = (false, false);
        for y in [w.y_range.0, w.y_range.1] {
            let Some((a, b)) = image(&w, y) else { return w };
            // the side whose image is larger has to reach m.1
            let (low_side, high_side) = if a <= b { (0, 1) } else { (1, 0) };
            for (side, short) in [(low_side, a.min(b) > m.0), (high_side, a.max(b) < m.1)] {
                if short {
                    if side == 0 {
                        grow.0 = true;
                    } else {
                        grow.1 = true;
                    }
                }
            }
        }
        if !grow.0 && !grow.1 {
            return w;
        }
        let mut next = w;
        if grow.0 {
            next.p_window.0 -= step;
        }
        if grow.1 {
            next.p_window.1 += step;
        }
        if image(&next, next.y_range.0).is_none() || image(&next, next.y_range.1).is_none() {
            return w;
        }
        w = next;
        step *= 2.0;
    }
    w
}

/// Velocity, pressure and Bernoulli energy on the layer grids.
#[derive(Debug, Clone)]
pub struct PhysicalFields {
    pub u: [Field; 2],
    pub v: [Field; 2],
    pub pressure: [Field; 2],
    pub energy: [Field; 2],
}

/// `dE/dpsi = -beta(psi) - g d rho'(-psi)` on exact solutions.
fn energy_slope(prof: &LayerProfiles, g: f64, d: f64, s: f64) -> f64 {
    -prof.beta(s) - g * d * prof.rho_prime(-s)
}

/// Reconstructs `(u, v, P, E)` with `sqrt(rho)(u - c) = psi_y`,
/// `sqrt(rho) v = -psi_x`. `E_i` is a function of `psi` anchored by
/// `P2 = P_atm` on `S` and `P1 = P2` on `S~`, column by column.
pub fn recover_physical(
    state: &FlowState,
    profiles: [&LayerProfiles; 2],
) -> Result<PhysicalFields> {
    let stag = check_no_stagnation(state);
    if !stag.pass {
        return Err(Error::Invalid(format!(
            "stagnation: psi_y is not single-signed at {} nodes",
            stag.bad_nodes.len()
        )));
    }
    let p = &state.params;
    let mut u = Vec::new();
    let mut v = Vec::new();
    let mut kin = Vec::new();
    for (grid, psi) in state.grids.iter().zip(&state.psi) {
        let i = grid.layer.index();
        let (fx, fy) = grid.mapped_gradient4(psi)?;
        let sr = psi.mapv(|s| profiles[i].rho(-s).sqrt());
        u.push(&fy / &sr + p.c);
        v.push(-&fx / &sr);
        kin.push(0.5 * (&fx * &fx + &fy * &fy));
    }
    let mut pressure = [state.grids[0].zeros(), state.grids[1].zeros()];
    let mut energy = [state.grids[0].zeros(), state.grids[1].zeros()];
    // upper layer first: its interface pressure anchors the lower one
    for i in [1, 0] {
        let grid = &state.grids[i];
        let psi = &state.psi[i];
        let prof = profiles[i];
        // S for the upper layer, S~ for the lower one
        let anchor = grid.ns - 1;
        for j in 0..grid.nx {
            let pa = if i == 1 { p.p_atm } else { pressure[1][[j, 0]] };
            let sa = psi[[j, anchor]];
            let ya = grid.y[[j, anchor]];
            let grav_a = prof.rho(-sa) * p.g * (ya + p.d);
            let ea = pa + kin[i][[j, anchor]] + grav_a;
            for k in 0..grid.ns {
                let s = psi[[j, k]];
                let de = adaptive_gauss(|t| energy_slope(prof, p.g, p.d, t), sa, s, 1e-13);
                let y = grid.y[[j, k]];
                energy[i][[j, k]] = ea + de;
                pressure[i][[j, k]] = if k == anchor {
                    pa
                } else {
                    pa + de
                        - (kin[i][[j, k]] - kin[i][[j, anchor]])
                        - (prof.rho(-s) * p.g * (y + p.d) - grav_a)
                };
            }
        }
    }
    let (u2, u1) = (u.pop().unwrap(), u.pop().unwrap());
    let (v2, v1) = (v.pop().unwrap(), v.pop().unwrap());
    Ok(PhysicalFields {
        u: [u1, u2],
        v: [v1, v2],
        pressure,
        energy,
    })
}

/// Residuals of the Euler system and boundary conditions for recovered fields.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionReport {
    pub divergence: [f64; 2],
    pub momentum_x: [f64; 2],
    pub momentum_y: [f64; 2],
    /// Max `|P2 - P_atm|` on `S`.
    pub surface_pressure: f64,
    /// Max `|P1 - P2|` on `S~`.
    pub interface_pressure: f64,
    /// Max `|v2 - (u2 - c) eta'|` on `S`.
    pub kinematic_surface: f64,
}

impl ReconstructionReport {
    pub fn momentum_max(&self) -> f64 {
        self.momentum_x
            .iter()
            .chain(&self.momentum_y)
            .fold(0.0, |m, v| m.max(*v))
    }
}

fn max_abs(f: &Field) -> f64 {
    f.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn reconstruction_residuals(
    state: &FlowState,
    fields: &PhysicalFields,
    profiles: [&LayerProfiles; 2],
) -> Result<ReconstructionReport> {
    let p = &state.params;
    let mut divergence = [0.0; 2];
    let mut momentum_x = [0.0; 2];
    let mut momentum_y = [0.0; 2];
    for i in 0..2 {
        let grid = &state.grids[i];
        let rho = state.psi[i].mapv(|s| profiles[i].rho(-s));
        let w = &fields.u[i] - p.c;
        let (ux, uy) = grid.mapped_gradient(&fields.u[i])?;
        let (vx, vy) = grid.mapped_gradient(&fields.v[i])?;
        let (px, py) = grid.mapped_gradient(&fields.pressure[i])?;
        divergence[i] = max_abs(&(&ux + &vy));
        let mx = &rho * &(&w * &ux + &fields.v[i] * &uy) + &px;
        let my = &rho * &(&w * &vx + &fields.v[i] * &vy) + &py + &rho * p.g;
        momentum_x[i] = max_abs(&mx);
        momentum_y[i] = max_abs(&my);
    }
    let (g1, g2) = (&state.grids[0], &state.grids[1]);
    let top2 = g2.ns - 1;
    let top1 = g1.ns - 1;
    let slope = g2.boundary_slope(Boundary::Surface)?;
    let mut surface_pressure: f64 = 0.0;
    let mut interface_pressure: f64 = 0.0;
    let mut kinematic_surface: f64 = 0.0;
    for j in 0..g2.nx {
        surface_pressure = surface_pressure.max((fields.pressure[1][[j, top2]] - p.p_atm).abs());
        interface_pressure = interface_pressure
            .max((fields.pressure[0][[j, top1]] - fields.pressure[1][[j, 0]]).abs());
        let kin = fields.v[1][[j, top2]] - (fields.u[1][[j, top2]] - p.c) * slope[j];
        kinematic_surface = kinematic_surface.max(kin.abs());
    }
    Ok(ReconstructionReport {
        divergence,
        momentum_x,
        momentum_y,
        surface_pressure,
        interface_pressure,
        kinematic_surface,
    })
}

/// Sign check of `psi_y` on both layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagnationReport {
    pub pass: bool,
    pub min_abs_psi_y: [f64; 2],
    /// `(layer, j, k)` of nodes whose sign differs from the layer majority.
    pub bad_nodes: Vec<(u8, usize, usize)>,
}

pub fn check_no_stagnation(state: &FlowState) -> StagnationReport {
    let mut min_abs = [0.0; 2];
    let mut bad = Vec::new();
    for (i, (grid, psi)) in state.grids.iter().zip(&state.psi).enumerate() {
        let (_, fy) = grid.mapped_gradient(psi).expect("state fields match grids");
        min_abs[i] = fy.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
        let pos = fy.iter().filter(|v| **v > 0.0).count();
        let neg = fy.iter().filter(|v| **v < 0.0).count();
        let majority = if pos >= neg { 1.0 } else { -1.0 };
        for ((j, k), v) in fy.indexed_iter() {
            if v.signum() != majority || *v == 0.0 {
                bad.push((i as u8 + 1, j, k));
            }
        }
    }
    StagnationReport {
        pass: bad.is_empty(),
        min_abs_psi_y: min_abs,
        bad_nodes: bad,
    }
}

/// Profiles of the laminar fixture: `rho1 = 2`, `rho2 = 1`, `beta(q) = -q`.
pub fn lam1_profiles() -> [LayerProfiles; 2] {
    let beta = ScalarProfile::linear(0.0, -1.0);
    [
        LayerProfiles::new(Layer::Lower, ScalarProfile::constant(2.0), beta.clone()),
        LayerProfiles::new(Layer::Upper, ScalarProfile::constant(1.0), beta),
    ]
}

/// The laminar fixture `psi = -sinh y` on `d = 1`, `h_tilde = 0`, `h = 0.5`.
pub fn lam1_flow() -> Result<LaminarFlow> {
    solve_laminar(
        lam1_profiles(),
        1.0,
        1.0,
        0.0,
        0.5,
        -1.0f64.sinh(),
        0.5f64.sinh(),
        LaminarOptions::default(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lam1_matches_closed_form() {
        let flow = lam1_flow().unwrap();
        for k in 0..=100 {
            let y = -1.0 + 1.5 * k as f64 / 100.0;
            let layer = usize::from(y > 0.0);
            assert!((flow.psi(layer, y) + y.sinh()).abs() < 1e-12);
            assert!((flow.psi_prime(layer, y) + y.cosh()).abs() < 1e-10);
        }
        assert!((flow.q1 - 1.0).abs() < 1e-12);
        let q2 = 0.5f64.cosh().powi(2) / 2.0 + 1.5;
        assert!((flow.q2 - q2).abs() < 1e-12);
        assert!(!flow.stagnant);
    }

    #[test]
    fn zero_data_gives_zero_branch_with_warning() {
        let flow = solve_laminar(
            lam1_profiles(),
            1.0,
            1.0,
            0.0,
            0.5,
            0.0,
            0.0,
            LaminarOptions::default(),
        )
        .unwrap();
        assert!(flow.stagnant);
        assert!(flow.psi(0, -0.3).abs() < 1e-14);
    }

    #[test]
    fn symmetric_data_give_odd_solution() {
        // beta(q) = -q with constant densities: psi'' = psi, odd about y = 0
        let prof = lam1_profiles();
        let flow = solve_laminar(
            prof,
            1.0,
            0.5,
            0.0,
            0.5,
            -0.7,
            0.7,
            LaminarOptions::default(),
        )
        .unwrap();
        for y in [0.1, 0.25, 0.4] {
            assert!((flow.psi(1, y) + flow.psi(0, -y)).abs() < 1e-12);
        }
    }

    #[test]
    fn manufactured_sinh_recovers_linear_beta() {
        let s = AnalyticStream::Sinh {
            amplitude: -1.0,
            rate: 1.0,
        };
        let rho = [ScalarProfile::constant(1.0), ScalarProfile::constant(1.0)];
        let (betas, flow, _) = manufacture_from_streamfunction(
            [s.clone(), s],
            rho,
            1.0,
            1.0,
            0.0,
            0.5,
            ManufactureOptions::default(),
        )
        .unwrap();
        for q in [-0.4, 0.0, 0.3, 1.0] {
            assert!((betas[0].value(q) + q).abs() < 1e-9);
        }
        assert!((flow.p1 + 1.0f64.sinh()).abs() < 1e-15);
    }

    #[test]
    fn linear_stream_gives_zero_beta() {
        let s = AnalyticStream::Polynomial {
            coefficients: vec![0.0, -1.0],
        };
        let rho = [ScalarProfile::constant(1.0), ScalarProfile::constant(1.0)];
        let (betas, _, rep) = manufacture_from_streamfunction(
            [s.clone(), s],
            rho,
            1.0,
            1.0,
            0.0,
            0.5,
            ManufactureOptions::default(),
        )
        .unwrap();
        assert!(betas[1].value(-0.2).abs() < 1e-14);
        assert!(!rep.beta_decreasing[0]);
    }

    #[test]
    fn non_monotone_stream_is_rejected() {
        let s = AnalyticStream::Polynomial {
            coefficients: vec![0.0, 0.0, 1.0],
        };
        let rho = [ScalarProfile::constant(1.0), ScalarProfile::constant(1.0)];
        let err = manufacture_from_streamfunction(
            [s.clone(), s],
            rho,
            1.0,
            1.0,
            0.0,
            0.5,
            ManufactureOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonMonotoneStream { .. }));
    }

    #[test]
    fn lift_and_stagnation() {
        let flow = lam1_flow().unwrap();
        let st = flow.lift(16, 9, 9, 0.0, 0.0).unwrap();
        let dx = st.grids[1].d_x(&st.psi[1]);
        assert!(dx.iter().all(|v| v.abs() < 1e-12));
        let rep = check_no_stagnation(&st);
        assert!(rep.pass);
        assert!((rep.min_abs_psi_y[1] - 1.0).abs() < 5e-3);
        let mut flipped = st.psi[1].clone();
        for j in 0..8 {
            for k in 0..9 {
                flipped[[j, k]] = -flipped[[j, k]];
            }
        }
        let bad = st.with_fields(st.psi[0].clone(), flipped);
        let rep = check_no_stagnation(&bad);
        assert!(!rep.pass);
        assert!(rep.bad_nodes.iter().all(|n| n.0 == 2));
    }

    #[test]
    fn warp_keeps_traces_and_reduces_to_lift() {
        let flow = lam1_flow().unwrap();
        let flat = build_domain(1.0, SurfaceCurve::flat(0.0), SurfaceCurve::flat(0.5)).unwrap();
        let a = warp_to_domain(&flow, flat, 16, 9, 9, 0.0, 0.0).unwrap();
        let b = flow.lift(16, 9, 9, 0.0, 0.0).unwrap();
        for i in 0..2 {
            let diff = (&a.psi[i] - &b.psi[i])
                .iter()
                .fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(diff < 1e-14);
        }
        let wavy = SurfaceCurve::new(0.0, vec![0.05], vec![]);
        let curved = build_domain(1.0, wavy, SurfaceCurve::flat(0.5)).unwrap();
        let c = warp_to_domain(&flow, curved, 16, 9, 9, 0.0, 0.0).unwrap();
        assert_eq!(c.psi[0].column(8).iter().filter(|v| **v != 0.0).count(), 0);
    }

    #[test]
    fn lam1_reconstruction() {
        let flow = lam1_flow().unwrap();
        let st = flow.lift(16, 17, 17, 0.3, 1.5).unwrap();
        let prof = lam1_profiles();
        let f = recover_physical(&st, [&prof[0], &prof[1]]).unwrap();
        for k in 0..17 {
            let y = st.grids[1].y[[0, k]];
            assert!((f.u[1][[3, k]] - 0.3 + y.cosh()).abs() < 2e-3);
            assert!(f.v[1][[3, k]].abs() < 1e-12);
        }
        let rep = reconstruction_residuals(&st, &f, [&prof[0], &prof[1]]).unwrap();
        assert_eq!(rep.surface_pressure, 0.0);
        assert_eq!(rep.interface_pressure, 0.0);
        assert!(rep.divergence[0] < 1e-8 && rep.divergence[1] < 1e-8);
    }

    #[test]
    fn map_windows_cover_laplacian_of_non_solutions() {
        let st = lam1_flow().unwrap().lift(16, 9, 9, 0.0, 0.0).unwrap();
        let bump = st.grids[1].field_from_xs(|x, s| 0.1 * x.sin() * s * (1.0 - s));
        let st = st.with_fields(st.psi[0].clone(), &st.psi[1] + &bump);
        let maps = maps_for_state(&st, &lam1_profiles()).unwrap();
        for i in 0..2 {
            let omega = st.grids[i].mapped_laplacian(&st.psi[i]).unwrap();
            let y = st.grids[i].field_from_xy(|_, y| y);
            for (w, y) in omega.iter().zip(y.iter()) {
                assert!(maps[i].eval(*y, *w).is_ok(), "layer {i}: ({y}, {w})");
            }
        }
        // exact states keep the narrow window
        let exact = lam1_flow().unwrap().lift(16, 9, 9, 0.0, 0.0).unwrap();
        let narrow = maps_for_state(&exact, &lam1_profiles()).unwrap();
        assert!(narrow[1].window().p_window.1 < maps[1].window().p_window.1);
    }
}
