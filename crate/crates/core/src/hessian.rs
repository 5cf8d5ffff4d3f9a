//! Second variation of `H`, Hessian assembly on a finite basis and the
//! linear-stability verdict.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::{eval_h, pde_residual, BaseFields, GravityRefs};
use crate::error::{Error, Result};
use crate::geometry::{Boundary, Field, LayerGrid, Measure, SurfaceCurve};
use crate::profiles::BernoulliMap;
use crate::state::{
    check_admissible, perturbation_inner, project_admissible, state_fingerprint,
    vertical_basis_shape, FlowState, Perturbation, PerturbationDocument,
};

/// Boundary on which the integral over the undefined curve `S-bar` is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BarBoundary {
    #[default]
    Interface,
    Surface,
}

/// Normal used for the upper-layer flux on the interface where `n2` is printed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterfaceNormal {
    /// `n1`, pointing up.
    #[default]
    Upward,
    /// Outward normal of the upper layer, `-n1`.
    OutwardUpper,
}

/// Readings of the ambiguous spots of the second-variation formula.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SecondVariationReading {
    pub bar_boundary: BarBoundary,
    pub interface_normal: InterfaceNormal,
    /// Adds the mirror images of the two one-sided `d2F * omega_p * eta_p`
    /// terms on `S` and `S~`, making the form symmetric.
    pub symmetric_surface_terms: bool,
}

/// Base-state traces used by the boundary terms.
#[derive(Debug, Clone)]
pub struct Linearization {
    pub base: BaseFields,
    refs: GravityRefs,
    reading: SecondVariationReading,
    psi2y_s: Vec<f64>,
    psi2y_i: Vec<f64>,
    psi1y_i: Vec<f64>,
    /// `g rho_ref2 + [|grad psi2|^2 / 2]_y` on `S`.
    s_gravity: Vec<f64>,
    /// `d1F2 + d2F2 omega2_y` on `S`.
    s_map: Vec<f64>,
    /// `d2F2` on `S`.
    d2f2_s: Vec<f64>,
    /// `d2F1` and `d2F2` on `S~`.
    d2f1_i: Vec<f64>,
    d2f2_i: Vec<f64>,
    /// Bracket of the `eta~ eta~` term.
    t_coeff: Vec<f64>,
}

fn col(f: &Field, row: usize) -> Vec<f64> {
    f.column(row).to_vec()
}

impl Linearization {
    pub fn new(
        state: &FlowState,
        maps: &[BernoulliMap; 2],
        refs: GravityRefs,
        reading: SecondVariationReading,
    ) -> Result<Self> {
        let base = BaseFields::new(state, maps)?;
        let (g1, g2) = (&state.grids[0], &state.grids[1]);
        let (b1, b2) = (&base.layers[0], &base.layers[1]);
        let top1 = g1.ns - 1;
        let top2 = g2.ns - 1;
        let g = state.params.g;
        let (_, half_sq_y) = g2.mapped_gradient(&(b2.grad_sq() * 0.5))?;
        let (_, w2y) = g2.mapped_gradient(&b2.lap)?;
        let (_, w1y) = g1.mapped_gradient(&b1.lap)?;
        let s_gravity = (0..g2.nx)
            .map(|j| g * refs.rho2 + half_sq_y[[j, top2]])
            .collect();
        let s_map = (0..g2.nx)
            .map(|j| b2.d1[[j, top2]] + b2.d2[[j, top2]] * w2y[[j, top2]])
            .collect();
        let interface_gravity = g * (maps[0].profiles().rho(0.0) - maps[1].profiles().rho(0.0));
        let t_coeff = (0..g1.nx)
            .map(|j| {
                interface_gravity - b1.d1[[j, top1]] - b1.d2[[j, top1]] * w1y[[j, top1]]
                    + b2.d1[[j, 0]]
                    + b2.d2[[j, 0]] * w2y[[j, 0]]
            })
            .collect();
        Ok(Self {
            psi2y_s: col(&b2.gy, top2),
            psi2y_i: col(&b2.gy, 0),
            psi1y_i: col(&b1.gy, top1),
            d2f2_s: col(&b2.d2, top2),
            d2f1_i: col(&b1.d2, top1),
            d2f2_i: col(&b2.d2, 0),
            s_gravity,
            s_map,
            t_coeff,
            base,
            refs,
            reading,
        })
    }

    pub fn refs(&self) -> GravityRefs {
        self.refs
    }

    pub fn reading(&self) -> SecondVariationReading {
        self.reading
    }

    /// `d22F_i < 0` at every node of both layers.
    pub fn d22f_negative(&self) -> bool {
        self.base
            .layers
            .iter()
            .all(|l| l.d22.iter().all(|v| *v < 0.0))
    }
}

/// Per-direction data entering the bilinear form.
#[derive(Debug, Clone)]
pub struct DirectionData {
    grad: [(Field, Field); 2],
    lap: [Field; 2],
    /// Traces of `psi2p` on `S` and `S~`, `psi1p` on `S~`.
    psi2_s: Vec<f64>,
    psi2_i: Vec<f64>,
    /// Normal derivatives: `d psi2p/d n2` on `S`, `d psi2p/d n1` on `S~`,
    /// `d psi1p/d n1` on `S~`.
    dn2_s: Vec<f64>,
    dn1_2i: Vec<f64>,
    dn1_1i: Vec<f64>,
    /// Laplacian traces: `omega2p` on `S` and `S~`, `omega1p` on `S~`.
    w2_s: Vec<f64>,
    w2_i: Vec<f64>,
    w1_i: Vec<f64>,
    eta: Vec<f64>,
    eta_tilde: Vec<f64>,
}

impl DirectionData {
    pub fn new(state: &FlowState, pert: &Perturbation) -> Result<Self> {
        let (g1, g2) = (&state.grids[0], &state.grids[1]);
        let grad1 = g1.mapped_gradient(&pert.psi[0])?;
        let grad2 = g2.mapped_gradient(&pert.psi[1])?;
        let lap1 = g1.mapped_laplacian(&pert.psi[0])?;
        let lap2 = g2.mapped_laplacian(&pert.psi[1])?;
        let top1 = g1.ns - 1;
        let top2 = g2.ns - 1;
        let on = |g: &LayerGrid, c: &SurfaceCurve| g.x.iter().map(|&x| c.value(x)).collect();
        Ok(Self {
            psi2_s: col(&pert.psi[1], top2),
            psi2_i: col(&pert.psi[1], 0),
            dn2_s: g2.normal_from_gradient(&grad2.0, &grad2.1, Boundary::Surface, top2)?,
            dn1_2i: g2.normal_from_gradient(&grad2.0, &grad2.1, Boundary::Interface, 0)?,
            dn1_1i: g1.normal_from_gradient(&grad1.0, &grad1.1, Boundary::Interface, top1)?,
            w2_s: col(&lap2, top2),
            w2_i: col(&lap2, 0),
            w1_i: col(&lap1, top1),
            eta: on(g2, &pert.eta_p),
            eta_tilde: on(g1, &pert.eta_tilde_p),
            grad: [grad1, grad2],
            lap: [lap1, lap2],
        })
    }
}

/// Every term of the second variation, barred direction `a`, unbarred `b`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SecondVariationTerms {
    /// `int grad a . grad b` per layer.
    pub gradient: [f64; 2],
    /// `-int d22F omega_a omega_b` per layer.
    pub curvature: [f64; 2],
    /// The seven boundary coupling terms in print order.
    pub boundary: [f64; 7],
    /// Surface terms: `eta eta` gravity/kinetic, `d2F2 omega eta`, `eta eta` map derivatives.
    pub surface: [f64; 3],
    /// Interface terms: `d2F omega eta~` and `eta~ eta~`.
    pub interface: [f64; 2],
    /// Mirror terms added by [`SecondVariationReading::symmetric_surface_terms`].
    pub mirror: [f64; 2],
    pub total: f64,
}

fn dot3(a: &[f64], b: &[f64], c: &[f64]) -> Vec<f64> {
    a.iter()
        .zip(b)
        .zip(c)
        .map(|((x, y), z)| x * y * z)
        .collect()
}

fn dot2(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

/// Evaluates the form on precomputed data.
pub fn bilinear_terms(
    state: &FlowState,
    lin: &Linearization,
    a: &DirectionData,
    b: &DirectionData,
) -> SecondVariationTerms {
    let (g1, g2) = (&state.grids[0], &state.grids[1]);
    let mut t = SecondVariationTerms::default();
    for (i, grid) in state.grids.iter().enumerate() {
        let (ax, ay) = &a.grad[i];
        let (bx, by) = &b.grad[i];
        t.gradient[i] = grid.area_dot(ax, bx) + grid.area_dot(ay, by);
        let weighted = &lin.base.layers[i].d22 * &a.lap[i];
        t.curvature[i] = -grid.area_dot(&weighted, &b.lap[i]);
    }
    let line = |g: &LayerGrid, v: Vec<f64>, boundary: Boundary, m: Measure| {
        g.line_integral(&v, boundary, m)
            .expect("trace length matches grid")
    };
    use Boundary::{Interface as I, Surface as S};
    use Measure::{Dl, Dx};
    t.boundary[0] = match lin.reading.bar_boundary {
        BarBoundary::Interface => line(g2, dot2(&a.psi2_i, &b.dn1_2i), I, Dl),
        BarBoundary::Surface => line(g2, dot2(&a.psi2_s, &b.dn2_s), S, Dl),
    };
    t.boundary[1] = line(g2, dot3(&lin.psi2y_s, &a.dn2_s, &b.eta), S, Dl);
    t.boundary[2] = line(g2, dot3(&lin.psi2y_s, &a.eta, &b.dn2_s), S, Dl);
    let sign = match lin.reading.interface_normal {
        InterfaceNormal::Upward => 1.0,
        InterfaceNormal::OutwardUpper => -1.0,
    };
    let b4: Vec<f64> = (0..g2.nx)
        .map(|j| -(a.psi2_i[j] + lin.psi2y_i[j] * a.eta_tilde[j]) * sign * b.dn1_2i[j])
        .collect();
    t.boundary[3] = line(g2, b4, I, Dl);
    t.boundary[4] = line(g1, dot3(&lin.psi1y_i, &a.eta_tilde, &b.dn1_1i), I, Dl);
    t.boundary[5] = line(g1, dot3(&lin.psi1y_i, &a.dn1_1i, &b.eta_tilde), I, Dl);
    t.boundary[6] = -line(g2, dot3(&lin.psi2y_i, &a.dn1_2i, &b.eta_tilde), I, Dl);

    t.surface[0] = line(g2, dot3(&lin.s_gravity, &b.eta, &a.eta), S, Dx);
    t.surface[1] = -line(g2, dot3(&lin.d2f2_s, &a.w2_s, &b.eta), S, Dx);
    t.surface[2] = -line(g2, dot3(&lin.s_map, &b.eta, &a.eta), S, Dx);

    let t1: Vec<f64> = (0..g1.nx)
        .map(|j| (-lin.d2f1_i[j] * a.w1_i[j] + lin.d2f2_i[j] * a.w2_i[j]) * b.eta_tilde[j])
        .collect();
    t.interface[0] = line(g1, t1, I, Dx);
    t.interface[1] = line(g1, dot3(&lin.t_coeff, &b.eta_tilde, &a.eta_tilde), I, Dx);

    if lin.reading.symmetric_surface_terms {
        t.mirror[0] = -line(g2, dot3(&lin.d2f2_s, &b.w2_s, &a.eta), S, Dx);
        let m1: Vec<f64> = (0..g1.nx)
            .map(|j| (-lin.d2f1_i[j] * b.w1_i[j] + lin.d2f2_i[j] * b.w2_i[j]) * a.eta_tilde[j])
            .collect();
        t.mirror[1] = line(g1, m1, I, Dx);
    }

    let mut total = 0.0;
    for v in t
        .gradient
        .iter()
        .chain(&t.curvature)
        .chain(&t.boundary)
        .chain(&t.surface)
        .chain(&t.interface)
        .chain(&t.mirror)
    {
        total += v;
    }
    t.total = total;
    t
}

/// All terms for admissible `a` (barred) and `b` (unbarred).
pub fn second_variation_terms(
    state: &FlowState,
    maps: &[BernoulliMap; 2],
    refs: GravityRefs,
    reading: SecondVariationReading,
    a: &Perturbation,
    b: &Perturbation,
) -> Result<SecondVariationTerms> {
    check_admissible(a, state)?;
    check_admissible(b, state)?;
    let lin = Linearization::new(state, maps, refs, reading)?;
    let da = DirectionData::new(state, a)?;
    let db = DirectionData::new(state, b)?;
    Ok(bilinear_terms(state, &lin, &da, &db))
}

/// Second variation with the default reading.
pub fn second_variation(
    state: &FlowState,
    maps: &[BernoulliMap; 2],
    refs: GravityRefs,
    a: &Perturbation,
    b: &Perturbation,
) -> Result<f64> {
    let reading = SecondVariationReading::default();
    Ok(second_variation_terms(state, maps, refs, reading, a, b)?.total)
}

/// `second_variation(p, p)` through the same code path.
pub fn quadratic_form(
    state: &FlowState,
    maps: &[BernoulliMap; 2],
    refs: GravityRefs,
    p: &Perturbation,
) -> Result<f64> {
    check_admissible(p, state)?;
    let lin = Linearization::new(state, maps, refs, SecondVariationReading::default())?;
    let d = DirectionData::new(state, p)?;
    Ok(bilinear_terms(state, &lin, &d, &d).total)
}

/// Four-corner difference of `H` on rebuilt perturbed domains.
pub fn fd_second_variation(
    state: &FlowState,
    maps: &[BernoulliMap; 2],
    refs: GravityRefs,
    a: &Perturbation,
    b: &Perturbation,
    eps: f64,
) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::Invalid("eps must be positive".into()));
    }
    let h = |sa: f64, sb: f64| -> Result<f64> {
        let dir = a.scaled(sa).axpy(sb, b);
        eval_h(&state.displaced(eps, &dir)?, maps, refs)
    };
    let v = h(1.0, 1.0)? - h(1.0, -1.0)? - h(-1.0, 1.0)? + h(-1.0, -1.0)?;
    Ok(v / (4.0 * eps * eps))
}

/// Size of the tensor-product trial basis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BasisOptions {
    /// Highest Fourier wavenumber `K`; `2K + 1` x-modes.
    pub fourier_modes: usize,
    /// Vertical profiles per layer.
    pub vertical_modes: usize,
    /// Keep `eta_p = eta~_p = 0` and use profiles vanishing at both ends.
    pub restrict_surfaces: bool,
}

impl Default for BasisOptions {
    fn default() -> Self {
        Self {
            fourier_modes: 2,
            vertical_modes: 4,
            restrict_surfaces: true,
        }
    }
}

fn fourier(k: usize, sine: bool, x: f64) -> f64 {
    match (k, sine) {
        (0, _) => 1.0,
        (_, true) => (k as f64 * x).sin(),
        (_, false) => (k as f64 * x).cos(),
    }
}

fn fourier_curve(k: usize, sine: bool) -> SurfaceCurve {
    if k == 0 {
        return SurfaceCurve::flat(1.0);
    }
    let mut c = vec![0.0; k];
    let mut s = vec![0.0; k];
    if sine {
        s[k - 1] = 1.0;
    } else {
        c[k - 1] = 1.0;
    }
    SurfaceCurve::new(0.0, c, s)
}

fn fourier_list(k_max: usize) -> Vec<(usize, bool, String)> {
    let mut out = vec![(0, false, "1".to_string())];
    for k in 1..=k_max {
        out.push((k, false, format!("cos{k}x")));
        out.push((k, true, format!("sin{k}x")));
    }
    out
}

/// Projected Fourier x vertical basis with labels.
pub fn build_basis(
    state: &FlowState,
    opts: BasisOptions,
) -> Result<(Vec<Perturbation>, Vec<String>)> {
    if opts.vertical_modes == 0 {
        return Err(Error::Invalid(
            "basis needs at least one vertical mode".into(),
        ));
    }
    let mut basis = Vec::new();
    let mut labels = Vec::new();
    let zero = Perturbation::zeros(state);
    for layer in 0..2 {
        let grid = &state.grids[layer];
        for (k, sine, name) in fourier_list(opts.fourier_modes) {
            for m in 1..=opts.vertical_modes {
                let mut p = zero.clone();
                p.psi[layer] = grid.field_from_xs(|x, s| {
                    fourier(k, sine, x) * vertical_basis_shape(opts.restrict_surfaces, m, s)
                });
                basis.push(project_admissible(&p, state));
                labels.push(format!("psi{}:{name}:v{m}", layer + 1));
            }
        }
    }
    if !opts.restrict_surfaces {
        for (which, tag) in [(0, "eta"), (1, "eta_tilde")] {
            for (k, sine, name) in fourier_list(opts.fourier_modes) {
                let mut p = zero.clone();
                if which == 0 {
                    p.eta_p = fourier_curve(k, sine);
                } else {
                    p.eta_tilde_p = fourier_curve(k, sine);
                }
                basis.push(project_admissible(&p, state));
                labels.push(format!("{tag}:{name}"));
            }
        }
    }
    Ok((basis, labels))
}

/// Dense matrix of the form on a basis.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HessianMatrix {
    pub n: usize,
    /// Row-major, symmetrized.
    pub entries: Vec<f64>,
    /// `max |M - M^T| / max |M|` before symmetrization.
    pub asymmetry: f64,
    pub gram_condition: f64,
    pub labels: Vec<String>,
    /// `[nx, ns1, ns2]`.
    pub grid: [usize; 3],
    pub state_hash: String,
    pub reading: SecondVariationReading,
    #[serde(skip)]
    pub basis: Vec<Perturbation>,
}

impl HessianMatrix {
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.n, &self.entries)
    }

    /// Little-endian `f64` entries, row-major.
    pub fn sidecar_bytes(&self) -> Vec<u8> {
        self.entries.iter().flat_map(|v| v.to_le_bytes()).collect()
    }
}

/// Largest accepted Gram condition number of a basis.
pub const GRAM_CONDITION_MAX: f64 = 1e12;

/// Condition number of the Gram matrix in the perturbation inner product.
pub fn gram_condition(state: &FlowState, basis: &[Perturbation]) -> f64 {
    let n = basis.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| perturbation_inner(&basis[i], &basis[j], state))
                .collect()
        })
        .collect();
    let g = DMatrix::from_fn(n, n, |i, j| 0.5 * (rows[i][j] + rows[j][i]));
    let eig = SymmetricEigen::new(g).eigenvalues;
    let lo = eig.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = eig.iter().copied().fold(0.0, f64::max);
    if lo > 0.0 {
        hi / lo
    } else {
        f64::INFINITY
    }
}

pub fn assemble_hessian(
    state: &FlowState,
    maps: &[BernoulliMap; 2],
    refs: GravityRefs,
    basis: &[Perturbation],
) -> Result<HessianMatrix> {
    let labels = (0..basis.len()).map(|i| format!("b{i}")).collect();
    let reading = SecondVariationReading::default();
    assemble_hessian_with(state, maps, refs, reading, basis, labels)
}

pub fn assemble_hessian_with(
    state: &FlowState,
    maps: &[BernoulliMap; 2],
    refs: GravityRefs,
    reading: SecondVariationReading,
    basis: &[Perturbation],
    labels: Vec<String>,
) -> Result<HessianMatrix> {
    let n = basis.len();
    if n == 0 {
        return Err(Error::Invalid("empty basis".into()));
    }
    if labels.len() != n {
        return Err(Error::Size(format!(
            "{} labels for {n} basis elements",
            labels.len()
        )));
    }
    for p in basis {
        check_admissible(p, state)?;
    }
    let condition = gram_condition(state, basis);
    if !(condition <= GRAM_CONDITION_MAX) {
        return Err(Error::RankDeficient { condition });
    }
    let lin = Linearization::new(state, maps, refs, reading)?;
    let data = basis
        .par_iter()
        .map(|p| DirectionData::new(state, p))
        .collect::<Result<Vec<_>>>()?;
    let raw: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| bilinear_terms(state, &lin, &data[i], &data[j]).total)
                .collect()
        })
        .collect();
    let scale = raw.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut asym = 0.0f64;
    let mut entries = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            asym = asym.max((raw[i][j] - raw[j][i]).abs());
            entries[i * n + j] = 0.5 * (raw[i][j] + raw[j][i]);
        }
    }
    let (nx, ns1, ns2) = state.grid_dims();
    Ok(HessianMatrix {
        n,
        entries,
        asymmetry: if scale > 0.0 { asym / scale } else { 0.0 },
        gram_condition: condition,
        labels,
        grid: [nx, ns1, ns2],
        state_hash: state_fingerprint(state),
        reading,
        basis: basis.to_vec(),
    })
}

/// Largest dimension handled by the dense eigensolver.
pub const EIGEN_DIMENSION_CAP: usize = 2000;

/// Smallest eigenvalue and its unit eigenvector, sign fixed so that the
/// largest component is positive.
pub fn spectrum_edge(matrix: &HessianMatrix) -> Result<(f64, Vec<f64>)> {
    if matrix.n > EIGEN_DIMENSION_CAP {
        return Err(Error::DimensionCap {
            n: matrix.n,
            cap: EIGEN_DIMENSION_CAP,
        });
    }
    let m = matrix.to_dmatrix();
    let eig = SymmetricEigen::new(m.clone());
    let mut k = 0;
    for (i, &v) in eig.eigenvalues.iter().enumerate() {
        if v < eig.eigenvalues[k] {
            k = i;
        }
    }
    let lambda = eig.eigenvalues[k];
    let mut v = eig.eigenvectors.column(k).into_owned();
    let big = v
        .iter()
        .copied()
        .fold(0.0f64, |b, x| if x.abs() > b.abs() { x } else { b });
    if big < 0.0 {
        v = -v;
    }
    let res = (&m * &v - &v * lambda).norm();
    let norm = m.norm();
    if res > 1e-8 * norm.max(f64::MIN_POSITIVE) {
        return Err(Error::Invalid(format!(
            "eigen-residual {res:e} exceeds 1e-8 |M| = {norm:e}"
        )));
    }
    Ok((lambda, v.iter().copied().collect()))
}

/// All eigenvalues, ascending.
pub fn spectrum(matrix: &HessianMatrix) -> Result<Vec<f64>> {
    if matrix.n > EIGEN_DIMENSION_CAP {
        return Err(Error::DimensionCap {
            n: matrix.n,
            cap: EIGEN_DIMENSION_CAP,
        });
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(matrix.to_dmatrix())
        .eigenvalues
        .iter()
        .copied()
        .collect();
    ev.sort_by(f64::total_cmp);
    Ok(ev)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Stable,
    Indefinite,
    Inconclusive,
}

/// Hypotheses of the stability criterion as found on the state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionsChecked {
    pub surfaces_unperturbed: bool,
    #[serde(rename = "d22F_negative")]
    pub d22f_negative: bool,
}

/// Negative direction found by the eigensolve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub coefficients: Vec<f64>,
    pub quadratic_form: f64,
    pub perturbation: PerturbationDocument,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityVerdict {
    pub verdict: Verdict,
    pub lambda_min: Option<f64>,
    pub witness: Option<Witness>,
    pub conditions_checked: ConditionsChecked,
    pub residual_max: f64,
    pub matrix_norm: Option<f64>,
    pub basis_size: usize,
    pub reason: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StabilityOptions {
    pub basis: BasisOptions,
    pub tol_psd: f64,
    pub tol_res: f64,
    pub reading: SecondVariationReading,
}

impl Default for StabilityOptions {
    fn default() -> Self {
        Self {
            basis: BasisOptions::default(),
            tol_psd: 1e-8,
            tol_res: 1e-2,
            reading: SecondVariationReading::default(),
        }
    }
}

/// Builds the basis, assembles the Hessian and classifies its spectrum.
pub fn stability_verdict(
    state: &FlowState,
    maps: &[BernoulliMap; 2],
    refs: GravityRefs,
    opts: StabilityOptions,
) -> Result<(StabilityVerdict, Option<HessianMatrix>)> {
    let residual_max = pde_residual(state, [maps[0].profiles(), maps[1].profiles()])?.max_norm();
    let lin = Linearization::new(state, maps, refs, opts.reading)?;
    let conditions = ConditionsChecked {
        surfaces_unperturbed: opts.basis.restrict_surfaces,
        d22f_negative: lin.d22f_negative(),
    };
    let inconclusive = |reason: String, n: usize| StabilityVerdict {
        verdict: Verdict::Inconclusive,
        lambda_min: None,
        witness: None,
        conditions_checked: conditions,
        residual_max,
        matrix_norm: None,
        basis_size: n,
        reason: Some(reason),
    };
    if !(residual_max <= opts.tol_res) {
        let why = format!("state residual {residual_max:e} exceeds {:e}", opts.tol_res);
        return Ok((inconclusive(why, 0), None));
    }
    let (basis, labels) = build_basis(state, opts.basis)?;
    let n = basis.len();
    if n > EIGEN_DIMENSION_CAP {
        return Err(Error::DimensionCap {
            n,
            cap: EIGEN_DIMENSION_CAP,
        });
    }
    let matrix = match assemble_hessian_with(state, maps, refs, opts.reading, &basis, labels) {
        Ok(m) => m,
        Err(e @ (Error::RankDeficient { .. } | Error::NotAdmissible { .. })) => {
            return Ok((inconclusive(e.to_string(), n), None))
        }
        Err(e) => return Err(e),
    };
    let (lambda, v) = match spectrum_edge(&matrix) {
        Ok(x) => x,
        Err(e) => return Ok((inconclusive(e.to_string(), n), Some(matrix))),
    };
    let norm = matrix.to_dmatrix().norm();
    let stable = lambda >= -opts.tol_psd * norm;
    let witness = if stable {
        None
    } else {
        let mut w = Perturbation::zeros(state);
        for (c, b) in v.iter().zip(&basis) {
            w = w.axpy(*c, b);
        }
        let d = DirectionData::new(state, &w)?;
        Some(Witness {
            coefficients: v,
            quadratic_form: bilinear_terms(state, &lin, &d, &d).total,
            perturbation: PerturbationDocument::from_perturbation(&w),
        })
    };
    let verdict = StabilityVerdict {
        verdict: if stable {
            Verdict::Stable
        } else {
            Verdict::Indefinite
        },
        lambda_min: Some(lambda),
        witness,
        conditions_checked: conditions,
        residual_max,
        matrix_norm: Some(norm),
        basis_size: n,
        reason: None,
    };
    Ok((verdict, Some(matrix)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::laminar::{lam1_flow, lam1_profiles, maps_for_state, maps_for_state_with};
    use crate::state::{random_admissible_with, PerturbationClass, RandomOptions};

    fn lam1(nx: usize, ns: usize) -> (FlowState, [BernoulliMap; 2], GravityRefs) {
        let st = lam1_flow().unwrap().lift(nx, ns, ns, 0.0, 0.0).unwrap();
        let maps = maps_for_state(&st, &lam1_profiles()).unwrap();
        let refs = GravityRefs::defaults(&maps, st.p1, st.p2);
        (st, maps, refs)
    }

    fn direction(st: &FlowState, seed: u64, class: PerturbationClass) -> Perturbation {
        let opts = RandomOptions {
            class,
            ..RandomOptions::default()
        };
        random_admissible_with(seed, st, opts).unwrap()
    }

    fn matrix(entries: Vec<f64>, n: usize) -> HessianMatrix {
        HessianMatrix {
            n,
            entries,
            asymmetry: 0.0,
            gram_condition: 1.0,
            labels: vec![String::new(); n],
            grid: [0; 3],
            state_hash: String::new(),
            reading: SecondVariationReading::default(),
            basis: Vec::new(),
        }
    }

    #[test]
    fn zero_direction_gives_zero() {
        let (st, maps, refs) = lam1(16, 13);
        let z = Perturbation::zeros(&st);
        let p = direction(&st, 3, PerturbationClass::Full);
        assert_eq!(second_variation(&st, &maps, refs, &z, &p).unwrap(), 0.0);
        assert_eq!(quadratic_form(&st, &maps, refs, &z).unwrap(), 0.0);
    }

    #[test]
    fn quadratic_form_is_diagonal_and_homogeneous() {
        let (st, maps, refs) = lam1(16, 13);
        let p = direction(&st, 5, PerturbationClass::Full);
        let q = quadratic_form(&st, &maps, refs, &p).unwrap();
        assert_eq!(q, second_variation(&st, &maps, refs, &p, &p).unwrap());
        let q3 = quadratic_form(&st, &maps, refs, &p.scaled(3.0)).unwrap();
        assert!((q3 - 9.0 * q).abs() <= 1e-10 * q.abs().max(1.0));
    }

    #[test]
    fn symmetric_with_fixed_surfaces() {
        let (st, maps, refs) = lam1(16, 13);
        let a = direction(&st, 1, PerturbationClass::FixedSurfaces);
        let b = direction(&st, 2, PerturbationClass::FixedSurfaces);
        let ab = second_variation(&st, &maps, refs, &a, &b).unwrap();
        let ba = second_variation(&st, &maps, refs, &b, &a).unwrap();
        assert!(
            (ab - ba).abs() <= 1e-10 * ab.abs().max(ba.abs()),
            "{ab} {ba}"
        );
    }

    #[test]
    fn lam1_form_reduces_to_gradient_and_laplacian_norms() {
        let (st, maps, refs) = lam1(24, 17);
        let g2 = &st.grids[1];
        let mut p = Perturbation::zeros(&st);
        p.psi[1] = g2.field_from_xs(|x, s| x.sin() * s * (1.0 - s));
        let t = second_variation_terms(&st, &maps, refs, SecondVariationReading::default(), &p, &p)
            .unwrap();
        let th = g2.thickness[0];
        let grad_sq = g2.field_from_xs(|x, s| {
            let px = x.cos() * s * (1.0 - s);
            let py = x.sin() * (1.0 - 2.0 * s) / th;
            px * px + py * py
        });
        let lap_sq = g2.field_from_xs(|x, s| {
            let l = -x.sin() * s * (1.0 - s) - 2.0 * x.sin() / (th * th);
            l * l
        });
        let i1 = g2.area_integral(&grad_sq).unwrap();
        let i2 = g2.area_integral(&lap_sq).unwrap();
        assert!(
            (t.total - i1 - i2).abs() <= 1e-8 * (i1 + i2),
            "{} vs {}",
            t.total,
            i1 + i2
        );
        assert!((t.gradient[1] - i1).abs() <= 1e-10 * i1);
        assert!((t.curvature[1] - i2).abs() <= 1e-8 * i2);
    }

    #[test]
    fn form_matches_finite_differences_of_h() {
        let (st, maps, refs) = lam1(16, 13);
        let a = direction(&st, 7, PerturbationClass::FixedSurfaces);
        let b = direction(&st, 8, PerturbationClass::FixedSurfaces);
        let exact = second_variation(&st, &maps, refs, &a, &b).unwrap();
        let fd = fd_second_variation(&st, &maps, refs, &a, &b, 1e-3).unwrap();
        assert!(
            (exact - fd).abs() <= 1e-5 * exact.abs().max(1.0),
            "{exact} {fd}"
        );
    }

    #[test]
    fn spectrum_edge_of_small_matrices() {
        let (l, v) = spectrum_edge(&matrix(
            vec![1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 3.0],
            3,
        ))
        .unwrap();
        assert!((l - 1.0).abs() < 1e-14);
        assert!((v[0] - 1.0).abs() < 1e-12);
        let (l, v) = spectrum_edge(&matrix(vec![-1.0, 0.0, 0.0, 5.0], 2)).unwrap();
        assert!((l + 1.0).abs() < 1e-14);
        assert!((v[0] - 1.0).abs() < 1e-12 && v[1].abs() < 1e-12);
        let ev = spectrum(&matrix(vec![3.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 2.0], 3)).unwrap();
        assert_eq!(ev.len(), 3);
        assert!((ev[0] - 1.0).abs() < 1e-14 && (ev[2] - 3.0).abs() < 1e-14);
        let big = matrix(Vec::new(), EIGEN_DIMENSION_CAP + 1);
        assert!(matches!(
            spectrum_edge(&big),
            Err(Error::DimensionCap { .. })
        ));
    }

    #[test]
    fn duplicated_basis_is_rank_deficient() {
        let (st, maps, refs) = lam1(16, 13);
        let p = direction(&st, 1, PerturbationClass::FixedSurfaces);
        let res = assemble_hessian(&st, &maps, refs, &[p.clone(), p]);
        assert!(matches!(res, Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn lam1_is_stable_on_restricted_basis() {
        let (st, maps, refs) = lam1(16, 13);
        let (v, m) = stability_verdict(&st, &maps, refs, StabilityOptions::default()).unwrap();
        assert_eq!(v.verdict, Verdict::Stable, "{v:?}");
        assert!(v.conditions_checked.surfaces_unperturbed && v.conditions_checked.d22f_negative);
        let m = m.unwrap();
        assert_eq!(m.n, 40);
        assert!(m.asymmetry < 1e-10, "{}", m.asymmetry);
        assert!(v.lambda_min.unwrap() > 0.0);
        assert_eq!(m.sidecar_bytes().len(), 8 * 40 * 40);
    }

    #[test]
    fn corrupted_state_is_inconclusive() {
        let (st, _, _) = lam1(16, 13);
        let maps = maps_for_state_with(&st, &lam1_profiles(), 2.0).unwrap();
        let refs = GravityRefs::defaults(&maps, st.p1, st.p2);
        let g2 = &st.grids[1];
        let bad = &st.psi[1] + &g2.field_from_xs(|x, s| 0.1 * x.sin() * s * (1.0 - s));
        let corrupt = st.with_fields(st.psi[0].clone(), bad);
        let (v, m) = stability_verdict(&corrupt, &maps, refs, StabilityOptions::default()).unwrap();
        assert_eq!(v.verdict, Verdict::Inconclusive);
        assert!(m.is_none() && v.reason.is_some());
    }
}
