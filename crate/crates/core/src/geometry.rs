//! Periodic two-layer domain, terrain-following (sigma) grids, mapped
//! differential operators and quadrature.
//!
//! Each layer is mapped onto the rectangle `[0, 2pi) x [0, 1]` through
//! `y = lower(x) + sigma (upper(x) - lower(x))`. Fields are stored as
//! `nx x ns` arrays indexed `[x, sigma]`.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profiles::Layer;

/// Nodal field on a layer grid, indexed `[x, sigma]`.
pub type Field = Array2<f64>;

/// Truncated Fourier series `mean + sum_k a_k cos(kx) + b_k sin(kx)`, k >= 1.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SurfaceCurve {
    pub mean: f64,
    #[serde(rename = "cos_coeffs")]
    pub cos: Vec<f64>,
    #[serde(rename = "sin_coeffs")]
    pub sin: Vec<f64>,
}

impl SurfaceCurve {
    pub fn flat(mean: f64) -> Self {
        Self {
            mean,
            cos: Vec::new(),
            sin: Vec::new(),
        }
    }

    pub fn new(mean: f64, cos: Vec<f64>, sin: Vec<f64>) -> Self {
        Self { mean, cos, sin }
    }

    pub fn modes(&self) -> usize {
        self.cos.len().max(self.sin.len())
    }

    pub fn is_zero(&self) -> bool {
        self.mean == 0.0 && self.cos.iter().all(|&c| c == 0.0) && self.sin.iter().all(|&s| s == 0.0)
    }

    /// Value, first and second derivative at `x`.
    pub fn eval_all(&self, x: f64) -> (f64, f64, f64) {
        let (mut v, mut d, mut dd) = (self.mean, 0.0, 0.0);
        for k in 0..self.modes() {
            let kf = (k + 1) as f64;
            let a = self.cos.get(k).copied().unwrap_or(0.0);
            let b = self.sin.get(k).copied().unwrap_or(0.0);
            let (s, c) = (kf * x).sin_cos();
            v += a * c + b * s;
            d += kf * (-a * s + b * c);
            dd += -kf * kf * (a * c + b * s);
        }
        (v, d, dd)
    }

    pub fn value(&self, x: f64) -> f64 {
        self.eval_all(x).0
    }

    /// `self + scale * other`.
    pub fn axpy(&self, scale: f64, other: &SurfaceCurve) -> SurfaceCurve {
        let n = self.modes().max(other.modes());
        let get = |v: &[f64], k: usize| v.get(k).copied().unwrap_or(0.0);
        SurfaceCurve {
            mean: self.mean + scale * other.mean,
            cos: (0..n)
                .map(|k| get(&self.cos, k) + scale * get(&other.cos, k))
                .collect(),
            sin: (0..n)
                .map(|k| get(&self.sin, k) + scale * get(&other.sin, k))
                .collect(),
        }
    }

    pub fn scaled(&self, s: f64) -> SurfaceCurve {
        SurfaceCurve {
            mean: s * self.mean,
            cos: self.cos.iter().map(|c| s * c).collect(),
            sin: self.sin.iter().map(|c| s * c).collect(),
        }
    }
}

/// Number of points in the layer-collapse scan of [`build_domain`].
pub const COLLAPSE_SCAN: usize = 4096;

/// Validated two-layer domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowDomain {
    pub d: f64,
    pub eta_tilde: SurfaceCurve,
    pub eta: SurfaceCurve,
    /// Minimum thickness of (lower, upper) layer.
    pub min_thickness: [f64; 2],
}

fn scan_min<F: Fn(f64) -> f64>(f: F, n: usize) -> (f64, f64) {
    let mut best = (f64::INFINITY, 0.0);
    for i in 0..n {
        let x = 2.0 * PI * i as f64 / n as f64;
        let v = f(x);
        if v < best.0 {
            best = (v, x);
        }
    }
    // golden-section polish around the best sample
    let h = 2.0 * PI / n as f64;
    let (mut a, mut b) = (best.1 - h, best.1 + h);
    let r = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..60 {
        let c = b - r * (b - a);
        let d = a + r * (b - a);
        if f(c) < f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    let x = 0.5 * (a + b);
    let v = f(x);
    if v < best.0 {
        (v, x)
    } else {
        best
    }
}

/// Validates the layer geometry.
pub fn build_domain(d: f64, eta_tilde: SurfaceCurve, eta: SurfaceCurve) -> Result<FlowDomain> {
    if !(d > 0.0) || !d.is_finite() {
        return Err(Error::Invalid(format!("depth must be positive, got {d}")));
    }
    let (t1, x1) = scan_min(|x| eta_tilde.value(x) + d, COLLAPSE_SCAN);
    if t1 <= 0.0 {
        return Err(Error::Collapse {
            layer: 1,
            min_thickness: t1,
            x: x1,
        });
    }
    let (t2, x2) = scan_min(|x| eta.value(x) - eta_tilde.value(x), COLLAPSE_SCAN);
    if t2 <= 0.0 {
        return Err(Error::Collapse {
            layer: 2,
            min_thickness: t2,
            x: x2,
        });
    }
    Ok(FlowDomain {
        d,
        eta_tilde,
        eta,
        min_thickness: [t1, t2],
    })
}

impl FlowDomain {
    /// (lower, upper) bounding curves of a layer.
    pub fn bounds(&self, layer: Layer) -> (SurfaceCurve, SurfaceCurve) {
        match layer {
            Layer::Lower => (SurfaceCurve::flat(-self.d), self.eta_tilde.clone()),
            Layer::Upper => (self.eta_tilde.clone(), self.eta.clone()),
        }
    }

    /// Domain with both surfaces shifted by `eps` times the given deltas.
    pub fn perturbed(
        &self,
        eps: f64,
        eta_tilde_p: &SurfaceCurve,
        eta_p: &SurfaceCurve,
    ) -> Result<FlowDomain> {
        build_domain(
            self.d,
            self.eta_tilde.axpy(eps, eta_tilde_p),
            self.eta.axpy(eps, eta_p),
        )
    }
}

/// Boundary pieces of the two-layer domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Boundary {
    /// Rigid bottom `y = -d` (layer 1).
    Bottom,
    /// Internal interface `y = eta_tilde(x)` (both layers).
    Interface,
    /// Free surface `y = eta(x)` (layer 2).
    Surface,
}

impl Boundary {
    pub fn name(self) -> &'static str {
        match self {
            Boundary::Bottom => "B",
            Boundary::Interface => "S~",
            Boundary::Surface => "S",
        }
    }
}

/// Line measure used by [`LayerGrid::line_integral`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Measure {
    /// Arc length `sqrt(1 + c'^2) dx`.
    Dl,
    Dx,
}

/// Discretization of horizontal derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum XDerivative {
    #[default]
    Spectral,
    Central4,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Column {
    lower: (f64, f64, f64),
    upper: (f64, f64, f64),
}

impl Column {
    fn h(&self) -> (f64, f64, f64) {
        (
            self.upper.0 - self.lower.0,
            self.upper.1 - self.lower.1,
            self.upper.2 - self.lower.2,
        )
    }
}

/// Sigma-mapped tensor grid of one layer.
#[derive(Debug, Clone)]
pub struct LayerGrid {
    pub layer: Layer,
    pub nx: usize,
    pub ns: usize,
    pub x: Vec<f64>,
    pub sigma: Vec<f64>,
    pub dsigma: f64,
    /// Physical `y` at every node.
    pub y: Field,
    /// `d sigma / dx` at fixed `y`.
    pub sigma_x: Field,
    /// `d sigma / dy = 1 / thickness`, per column.
    pub sigma_y: Vec<f64>,
    /// Layer thickness per column.
    pub thickness: Vec<f64>,
    cols: Vec<Column>,
    lower: SurfaceCurve,
    upper: SurfaceCurve,
    xderiv: XDerivative,
    dx_matrix: Arc<Vec<f64>>,
}

fn fourier_diff_matrix(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    let h = 2.0 * PI / n as f64;
    for j in 0..n {
        for i in 0..n {
            if i != j {
                let k = j as isize - i as isize;
                let sign = if k.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
                m[j * n + i] = 0.5 * sign / (0.5 * k as f64 * h).tan();
            }
        }
    }
    m
}

fn central4_matrix(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    let h = 2.0 * PI / n as f64;
    for j in 0..n {
        let at = |o: isize| (j as isize + o).rem_euclid(n as isize) as usize;
        m[j * n + at(1)] += 8.0 / (12.0 * h);
        m[j * n + at(-1)] -= 8.0 / (12.0 * h);
        m[j * n + at(2)] -= 1.0 / (12.0 * h);
        m[j * n + at(-2)] += 1.0 / (12.0 * h);
    }
    m
}

/// Builds the two layer grids of `domain`.
pub fn build_grids(
    domain: &FlowDomain,
    nx: usize,
    ns1: usize,
    ns2: usize,
) -> Result<(LayerGrid, LayerGrid)> {
    build_grids_with(domain, nx, ns1, ns2, XDerivative::Spectral)
}

pub fn build_grids_with(
    domain: &FlowDomain,
    nx: usize,
    ns1: usize,
    ns2: usize,
    xderiv: XDerivative,
) -> Result<(LayerGrid, LayerGrid)> {
    if nx < 8 || nx % 2 != 0 {
        return Err(Error::Size(format!("nx must be even and >= 8, got {nx}")));
    }
    if ns1 < 5 || ns2 < 5 {
        return Err(Error::Size(format!("ns must be >= 5, got ({ns1}, {ns2})")));
    }
    let dx = Arc::new(match xderiv {
        XDerivative::Spectral => fourier_diff_matrix(nx),
        XDerivative::Central4 => central4_matrix(nx),
    });
    let g1 = LayerGrid::new(domain, Layer::Lower, nx, ns1, xderiv, dx.clone())?;
    let g2 = LayerGrid::new(domain, Layer::Upper, nx, ns2, xderiv, dx)?;
    Ok((g1, g2))
}

impl LayerGrid {
    fn new(
        domain: &FlowDomain,
        layer: Layer,
        nx: usize,
        ns: usize,
        xderiv: XDerivative,
        dx_matrix: Arc<Vec<f64>>,
    ) -> Result<Self> {
        let (lower, upper) = domain.bounds(layer);
        let x: Vec<f64> = (0..nx).map(|j| 2.0 * PI * j as f64 / nx as f64).collect();
        let sigma: Vec<f64> = (0..ns).map(|k| k as f64 / (ns - 1) as f64).collect();
        let cols: Vec<Column> = x
            .iter()
            .map(|&xj| Column {
                lower: lower.eval_all(xj),
                upper: upper.eval_all(xj),
            })
            .collect();
        let mut y = Field::zeros((nx, ns));
        let mut sigma_x = Field::zeros((nx, ns));
        let mut sigma_y = Vec::with_capacity(nx);
        let mut thickness = Vec::with_capacity(nx);
        for (j, c) in cols.iter().enumerate() {
            let (h, hx, _) = c.h();
            if !(h > 0.0) {
                return Err(Error::Collapse {
                    layer: layer.id(),
                    min_thickness: h,
                    x: x[j],
                });
            }
            thickness.push(h);
            sigma_y.push(1.0 / h);
            for (k, &s) in sigma.iter().enumerate() {
                y[[j, k]] = c.lower.0 + s * h;
                sigma_x[[j, k]] = -(c.lower.1 + s * hx) / h;
            }
        }
        Ok(Self {
            layer,
            nx,
            ns,
            x,
            sigma,
            dsigma: 1.0 / (ns - 1) as f64,
            y,
            sigma_x,
            sigma_y,
            thickness,
            cols,
            lower,
            upper,
            xderiv,
            dx_matrix,
        })
    }

    pub fn xderiv(&self) -> XDerivative {
        self.xderiv
    }

    pub fn lower_curve(&self) -> &SurfaceCurve {
        &self.lower
    }

    pub fn upper_curve(&self) -> &SurfaceCurve {
        &self.upper
    }

    pub fn zeros(&self) -> Field {
        Field::zeros((self.nx, self.ns))
    }

    /// Field from a function of `(x, y)` evaluated at the nodes.
    pub fn field_from_xy<F: Fn(f64, f64) -> f64>(&self, f: F) -> Field {
        Field::from_shape_fn((self.nx, self.ns), |(j, k)| f(self.x[j], self.y[[j, k]]))
    }

    /// Field from a function of `(x, sigma)` evaluated at the nodes.
    pub fn field_from_xs<F: Fn(f64, f64) -> f64>(&self, f: F) -> Field {
        Field::from_shape_fn((self.nx, self.ns), |(j, k)| f(self.x[j], self.sigma[k]))
    }

    fn check(&self, f: &Field) -> Result<()> {
        if f.dim() != (self.nx, self.ns) {
            return Err(Error::Size(format!(
                "field shape {:?} does not match grid ({}, {})",
                f.dim(),
                self.nx,
                self.ns
            )));
        }
        Ok(())
    }

    /// Sigma row of a boundary (errors if the boundary is not on this layer).
    pub fn boundary_row(&self, boundary: Boundary) -> Result<usize> {
        match (self.layer, boundary) {
            (Layer::Lower, Boundary::Bottom) | (Layer::Upper, Boundary::Interface) => Ok(0),
            (Layer::Lower, Boundary::Interface) | (Layer::Upper, Boundary::Surface) => {
                Ok(self.ns - 1)
            }
            _ => Err(Error::WrongBoundary {
                boundary: boundary.name(),
                layer: self.layer.id(),
            }),
        }
    }

    /// Slope `c'(x_j)` of the curve carrying `boundary`.
    pub fn boundary_slope(&self, boundary: Boundary) -> Result<Vec<f64>> {
        let row = self.boundary_row(boundary)?;
        Ok(self
            .cols
            .iter()
            .map(|c| if row == 0 { c.lower.1 } else { c.upper.1 })
            .collect())
    }

    /// Row `k` of a field as a line trace.
    pub fn trace(&self, f: &Field, boundary: Boundary) -> Result<Vec<f64>> {
        self.check(f)?;
        let row = self.boundary_row(boundary)?;
        Ok(f.column(row).to_vec())
    }

    /// Horizontal derivative at fixed sigma.
    pub fn d_x(&self, f: &Field) -> Field {
        let n = self.nx;
        let m = &self.dx_matrix;
        let mut out = self.zeros();
        for j in 0..n {
            let row = &m[j * n..(j + 1) * n];
            for k in 0..self.ns {
                let mut acc = 0.0;
                for (i, mji) in row.iter().enumerate() {
                    if *mji != 0.0 {
                        acc += mji * f[[i, k]];
                    }
                }
                out[[j, k]] = acc;
            }
        }
        out
    }

    /// Sigma derivative: central in the interior, one-sided second order at the ends.
    pub fn d_sigma(&self, f: &Field) -> Field {
        let n = self.ns;
        let h = self.dsigma;
        let mut out = self.zeros();
        for j in 0..self.nx {
            out[[j, 0]] = (-3.0 * f[[j, 0]] + 4.0 * f[[j, 1]] - f[[j, 2]]) / (2.0 * h);
            for k in 1..n - 1 {
                out[[j, k]] = (f[[j, k + 1]] - f[[j, k - 1]]) / (2.0 * h);
            }
            out[[j, n - 1]] =
                (3.0 * f[[j, n - 1]] - 4.0 * f[[j, n - 2]] + f[[j, n - 3]]) / (2.0 * h);
        }
        out
    }

    fn d_sigma2_at(&self, f: &Field, j: usize, k: usize) -> f64 {
        let n = self.ns;
        let h2 = self.dsigma * self.dsigma;
        // third-order one-sided closures keep the boundary rows from
        // polluting area integrals at O(h^3)
        let edge = |v: [f64; 5]| {
            (35.0 * v[0] - 104.0 * v[1] + 114.0 * v[2] - 56.0 * v[3] + 11.0 * v[4]) / (12.0 * h2)
        };
        if k == 0 {
            edge([f[[j, 0]], f[[j, 1]], f[[j, 2]], f[[j, 3]], f[[j, 4]]])
        } else if k == n - 1 {
            edge([f[[j, n - 1]], f[[j, n - 2]], f[[j, n - 3]], f[[j, n - 4]], f[[j, n - 5]]])
        } else {
            (f[[j, k + 1]] - 2.0 * f[[j, k]] + f[[j, k - 1]]) / h2
        }
    }

    /// Physical gradient `(f_x, f_y)` through the chain rule of the sigma map.
    pub fn mapped_gradient(&self, f: &Field) -> Result<(Field, Field)> {
        self.check(f)?;
        Ok(self.gradient_unchecked(f))
    }

    /// Sigma derivative with fourth-order central rows and third-order
    /// one-sided closures on the two rows next to each end; needs `ns >= 5`.
    pub fn d_sigma4(&self, f: &Field) -> Field {
        let n = self.ns;
        let c4 = 1.0 / (12.0 * self.dsigma);
        let c3 = 1.0 / (6.0 * self.dsigma);
        let mut out = self.zeros();
        for j in 0..self.nx {
            let v = |k: usize| f[[j, k]];
            out[[j, 0]] = c3 * (-11.0 * v(0) + 18.0 * v(1) - 9.0 * v(2) + 2.0 * v(3));
            out[[j, 1]] = c3 * (-2.0 * v(0) - 3.0 * v(1) + 6.0 * v(2) - v(3));
            for k in 2..n - 2 {
                out[[j, k]] = c4 * (v(k - 2) - 8.0 * v(k - 1) + 8.0 * v(k + 1) - v(k + 2));
            }
            let m = n - 1;
            out[[j, m - 1]] = -c3 * (-2.0 * v(m) - 3.0 * v(m - 1) + 6.0 * v(m - 2) - v(m - 3));
            out[[j, m]] = -c3 * (-11.0 * v(m) + 18.0 * v(m - 1) - 9.0 * v(m - 2) + 2.0 * v(m - 3));
        }
        out
    }

    /// Chain-rule gradient built on [`LayerGrid::d_sigma4`]. Used where the
    /// result is differentiated again, so its error must stay smooth up to
    /// the boundary rows.
    pub fn mapped_gradient4(&self, f: &Field) -> Result<(Field, Field)> {
        self.check(f)?;
        Ok(self.chain_rule(self.d_x(f), self.d_sigma4(f)))
    }

    fn gradient_unchecked(&self, f: &Field) -> (Field, Field) {
        self.chain_rule(self.d_x(f), self.d_sigma(f))
    }

    fn chain_rule(&self, fx0: Field, fs: Field) -> (Field, Field) {
        let mut fx = fx0;
        let mut fy = self.zeros();
        for j in 0..self.nx {
            let sy = self.sigma_y[j];
            for k in 0..self.ns {
                fx[[j, k]] += self.sigma_x[[j, k]] * fs[[j, k]];
                fy[[j, k]] = sy * fs[[j, k]];
            }
        }
        (fx, fy)
    }

    /// Physical Laplacian.
    ///
    /// Rows `2..ns-2` use the divergence form `(1/h)[D_x(h f_x) + D_s(h s_x f_x + f_y)]`,
    /// which is the exact negative adjoint of the discrete gradient in the
    /// area quadrature. The two rows next to each boundary use the
    /// non-conservative chain-rule expansion with one-sided closures.
    pub fn mapped_laplacian(&self, f: &Field) -> Result<Field> {
        self.check(f)?;
        Ok(self.laplacian_unchecked(f))
    }

    fn laplacian_unchecked(&self, f: &Field) -> Field {
        let (nx, ns) = (self.nx, self.ns);
        let (fx, fy) = self.gradient_unchecked(f);
        let mut flux_x = self.zeros();
        let mut flux_s = self.zeros();
        for j in 0..nx {
            let h = self.thickness[j];
            for k in 0..ns {
                flux_x[[j, k]] = h * fx[[j, k]];
                flux_s[[j, k]] = h * self.sigma_x[[j, k]] * fx[[j, k]] + fy[[j, k]];
            }
        }
        let dflux_x = self.d_x(&flux_x);
        let mut out = self.zeros();
        let h2s = 2.0 * self.dsigma;
        for j in 0..nx {
            let h = self.thickness[j];
            for k in 2..ns - 2 {
                out[[j, k]] =
                    (dflux_x[[j, k]] + (flux_s[[j, k + 1]] - flux_s[[j, k - 1]]) / h2s) / h;
            }
        }
        // near-boundary rows
        let fs = self.d_sigma(f);
        let fxx = self.d_x(&self.d_x(f));
        let fxs = self.d_x(&fs);
        for j in 0..nx {
            let c = &self.cols[j];
            let (h, hx, hxx) = c.h();
            let (_, lx, lxx) = c.lower;
            for &k in &[0, 1, ns - 2, ns - 1] {
                let s = self.sigma[k];
                let sx = self.sigma_x[[j, k]];
                let sy = self.sigma_y[j];
                let dsx_dx = -(lxx + s * hxx) / h + (lx + s * hx) * hx / (h * h);
                let dsx_ds = -hx / h;
                out[[j, k]] = fxx[[j, k]]
                    + 2.0 * sx * fxs[[j, k]]
                    + (sx * sx + sy * sy) * self.d_sigma2_at(f, j, k)
                    + (dsx_dx + sx * dsx_ds) * fs[[j, k]];
            }
        }
        out
    }

    /// Outward normal derivative trace on a boundary of this layer.
    ///
    /// On the interface the normal is `n1`, pointing up out of the lower
    /// layer, for both layers; on the surface it is `n2`, pointing up. On the
    /// bottom the trace is `f_y` itself, which is what the bottom integrals use.
    pub fn boundary_normal_derivative(&self, f: &Field, boundary: Boundary) -> Result<Vec<f64>> {
        self.check(f)?;
        let row = self.boundary_row(boundary)?;
        let (fx, fy) = self.gradient_unchecked(f);
        self.normal_from_gradient(&fx, &fy, boundary, row)
    }

    pub(crate) fn normal_from_gradient(
        &self,
        fx: &Field,
        fy: &Field,
        boundary: Boundary,
        row: usize,
    ) -> Result<Vec<f64>> {
        if boundary == Boundary::Bottom {
            return Ok(fy.column(row).to_vec());
        }
        let slope = self.boundary_slope(boundary)?;
        Ok((0..self.nx)
            .map(|j| {
                let (nx, ny) = unit_normal(slope[j]);
                nx * fx[[j, row]] + ny * fy[[j, row]]
            })
            .collect())
    }

    /// Periodic trapezoidal quadrature of a boundary trace.
    pub fn line_integral(
        &self,
        trace: &[f64],
        boundary: Boundary,
        measure: Measure,
    ) -> Result<f64> {
        if trace.len() != self.nx {
            return Err(Error::Size(format!(
                "trace length {} does not match nx = {}",
                trace.len(),
                self.nx
            )));
        }
        let w = 2.0 * PI / self.nx as f64;
        match measure {
            Measure::Dx => Ok(w * trace.iter().sum::<f64>()),
            Measure::Dl => {
                let slope = self.boundary_slope(boundary)?;
                Ok(w * trace
                    .iter()
                    .zip(&slope)
                    .map(|(t, s)| t * (1.0 + s * s).sqrt())
                    .sum::<f64>())
            }
        }
    }

    /// Trapezoid weight of sigma row `k`.
    pub fn sigma_weight(&self, k: usize) -> f64 {
        if k == 0 || k == self.ns - 1 {
            0.5 * self.dsigma
        } else {
            self.dsigma
        }
    }

    /// Tensor quadrature with the Jacobian of the sigma map.
    pub fn area_integral(&self, f: &Field) -> Result<f64> {
        self.check(f)?;
        Ok(self.area_unchecked(f))
    }

    pub(crate) fn area_unchecked(&self, f: &Field) -> f64 {
        let wx = 2.0 * PI / self.nx as f64;
        let mut acc = 0.0;
        for j in 0..self.nx {
            let mut col = 0.0;
            for k in 0..self.ns {
                col += self.sigma_weight(k) * f[[j, k]];
            }
            acc += self.thickness[j] * col;
        }
        wx * acc
    }

    /// Quadrature of the product of two fields.
    pub(crate) fn area_dot(&self, a: &Field, b: &Field) -> f64 {
        let wx = 2.0 * PI / self.nx as f64;
        let mut acc = 0.0;
        for j in 0..self.nx {
            let mut col = 0.0;
            for k in 0..self.ns {
                col += self.sigma_weight(k) * a[[j, k]] * b[[j, k]];
            }
            acc += self.thickness[j] * col;
        }
        wx * acc
    }
}

/// Unit normal `(-c', 1) / sqrt(1 + c'^2)` of a graph with slope `c'`.
pub fn unit_normal(slope: f64) -> (f64, f64) {
    let n = (1.0 + slope * slope).sqrt();
    (-slope / n, 1.0 / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn flat() -> FlowDomain {
        build_domain(1.0, SurfaceCurve::flat(0.0), SurfaceCurve::flat(0.5)).unwrap()
    }

    fn curved() -> FlowDomain {
        build_domain(
            1.0,
            SurfaceCurve::new(0.0, vec![0.05], vec![]),
            SurfaceCurve::flat(0.5),
        )
        .unwrap()
    }

    #[test]
    fn domain_examples() {
        let d = flat();
        assert_eq!(d.min_thickness, [1.0, 0.5]);
        let err = build_domain(
            1.0,
            SurfaceCurve::flat(0.0),
            SurfaceCurve::new(0.5, vec![0.6], vec![]),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Collapse { layer: 2, .. }));
        let d = build_domain(
            1.0,
            SurfaceCurve::new(0.0, vec![0.05], vec![]),
            SurfaceCurve::new(0.5, vec![0.0, 0.02], vec![]),
        )
        .unwrap();
        let n = 10_000;
        let mut m1 = f64::INFINITY;
        let mut m2 = f64::INFINITY;
        for i in 0..n {
            let x = 2.0 * PI * i as f64 / n as f64;
            let et = 0.05 * x.cos();
            let e = 0.5 + 0.02 * (2.0 * x).cos();
            m1 = m1.min(et + 1.0);
            m2 = m2.min(e - et);
        }
        assert_abs_diff_eq!(d.min_thickness[0], m1, epsilon = 1e-6);
        assert_abs_diff_eq!(d.min_thickness[1], m2, epsilon = 1e-6);
        assert!(d.min_thickness[1] <= m2 + 1e-12);
        assert!(build_domain(0.0, SurfaceCurve::flat(0.0), SurfaceCurve::flat(1.0)).is_err());
    }

    #[test]
    fn grid_sizes_and_nesting() {
        let d = curved();
        assert!(build_grids(&d, 7, 9, 9).is_err());
        assert!(build_grids(&d, 16, 4, 9).is_err());
        let (a, _) = build_grids(&flat(), 16, 9, 9).unwrap();
        assert_eq!(a.y[[3, 4]], -1.0 + 0.5);
        let (c1, c2) = build_grids(&d, 16, 9, 9).unwrap();
        for j in 0..16 {
            for k in 0..9 {
                let et = 0.05 * c1.x[j].cos();
                assert_abs_diff_eq!(
                    c1.y[[j, k]],
                    -1.0 + c1.sigma[k] * (et + 1.0),
                    epsilon = 1e-15
                );
                assert_abs_diff_eq!(c2.y[[j, k]], et + c2.sigma[k] * (0.5 - et), epsilon = 1e-15);
            }
        }
        let (f1, _) = build_grids(&d, 32, 17, 17).unwrap();
        for j in 0..16 {
            for k in 0..9 {
                assert_eq!(f1.x[2 * j], c1.x[j]);
                assert_abs_diff_eq!(f1.y[[2 * j, 2 * k]], c1.y[[j, k]], epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn gradient_examples() {
        let (g1, _) = build_grids(&flat(), 16, 9, 9).unwrap();
        let (fx, fy) = g1.mapped_gradient(&g1.field_from_xy(|_, y| y)).unwrap();
        assert!(fx.iter().all(|v| v.abs() < 1e-13));
        assert!(fy.iter().all(|v| (v - 1.0).abs() < 1e-13));
        let (fx, fy) = g1
            .mapped_gradient(&g1.field_from_xy(|x, _| x.sin()))
            .unwrap();
        for j in 0..16 {
            for k in 0..9 {
                assert_abs_diff_eq!(fx[[j, k]], g1.x[j].cos(), epsilon = 1e-13);
                assert_abs_diff_eq!(fy[[j, k]], 0.0, epsilon = 1e-13);
            }
        }
        let (c1, _) = build_grids(&curved(), 32, 9, 9).unwrap();
        let (fx, fy) = c1
            .mapped_gradient(&c1.field_from_xy(|_, y| 0.3 + y - 2.0 * y * y))
            .unwrap();
        for j in 0..32 {
            for k in 0..9 {
                assert_abs_diff_eq!(fx[[j, k]], 0.0, epsilon = 1e-10);
                assert_abs_diff_eq!(fy[[j, k]], 1.0 - 4.0 * c1.y[[j, k]], epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn laplacian_exact_cases() {
        let (g1, g2) = build_grids(&flat(), 16, 9, 9).unwrap();
        let l = g2
            .mapped_laplacian(&g2.field_from_xy(|_, y| y * y))
            .unwrap();
        assert!(l.iter().all(|v| (v - 2.0).abs() < 1e-10));
        let l = g1.mapped_laplacian(&g1.field_from_xy(|_, _| 3.7)).unwrap();
        assert!(l.iter().all(|v| v.abs() < 1e-10));
        let (c1, c2) = build_grids(&curved(), 32, 9, 9).unwrap();
        for g in [&c1, &c2] {
            let l = g
                .mapped_laplacian(&g.field_from_xy(|_, y| y * y - y))
                .unwrap();
            assert!(l.iter().all(|v| (v - 2.0).abs() < 1e-9), "{l:?}");
        }
    }

    fn laplacian_error(ns: usize) -> f64 {
        let (g1, _) = build_grids(&flat(), 16, ns, 9).unwrap();
        let exact = |x: f64, y: f64| x.sin() * (PI * (y + 1.0)).sin();
        let l = g1.mapped_laplacian(&g1.field_from_xy(exact)).unwrap();
        let mut err: f64 = 0.0;
        for j in 0..16 {
            for k in 0..ns {
                let e = -(1.0 + PI * PI) * exact(g1.x[j], g1.y[[j, k]]);
                err = err.max((l[[j, k]] - e).abs());
            }
        }
        err
    }

    #[test]
    fn laplacian_is_second_order_in_sigma() {
        let e: Vec<f64> = [17, 33, 65].iter().map(|&n| laplacian_error(n)).collect();
        let r1 = (e[0] / e[1]).log2();
        let r2 = (e[1] / e[2]).log2();
        assert!((r1 - 2.0).abs() < 0.2 && (r2 - 2.0).abs() < 0.2, "{e:?}");
    }

    #[test]
    fn normal_derivative_examples() {
        let (g1, g2) = build_grids(&flat(), 16, 9, 9).unwrap();
        let psi = g2.field_from_xy(|_, y| y);
        let t = g2
            .boundary_normal_derivative(&psi, Boundary::Surface)
            .unwrap();
        assert!(t.iter().all(|v| (v - 1.0).abs() < 1e-13));
        let t = g1
            .boundary_normal_derivative(&g1.field_from_xy(|_, y| y), Boundary::Bottom)
            .unwrap();
        assert!(t.iter().all(|v| (v - 1.0).abs() < 1e-13));
        assert!(matches!(
            g1.boundary_normal_derivative(&g1.zeros(), Boundary::Surface),
            Err(Error::WrongBoundary { .. })
        ));
        let (c1, _) = build_grids(&curved(), 32, 9, 9).unwrap();
        let t = c1
            .boundary_normal_derivative(&c1.field_from_xy(|_, y| y), Boundary::Interface)
            .unwrap();
        for j in 0..32 {
            let s = -0.05 * c1.x[j].sin();
            assert_abs_diff_eq!(t[j], 1.0 / (1.0 + s * s).sqrt(), epsilon = 1e-12);
        }
    }

    #[test]
    fn normals_are_unit() {
        for s in [-3.0, -0.1, 0.0, 0.7, 12.0] {
            let (a, b) = unit_normal(s);
            assert!((a * a + b * b - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn line_integral_examples() {
        let (_, g2) = build_grids(&flat(), 16, 9, 9).unwrap();
        let one = vec![1.0; 16];
        assert_abs_diff_eq!(
            g2.line_integral(&one, Boundary::Surface, Measure::Dx)
                .unwrap(),
            2.0 * PI,
            epsilon = 1e-13
        );
        let (c1, _) = build_grids(&curved(), 64, 9, 9).unwrap();
        let arc = c1
            .line_integral(&vec![1.0; 64], Boundary::Interface, Measure::Dl)
            .unwrap();
        let oracle = crate::numerics::adaptive_gauss(
            |x| (1.0 + 0.0025 * x.sin().powi(2)).sqrt(),
            0.0,
            2.0 * PI,
            1e-14,
        );
        assert_abs_diff_eq!(arc, oracle, epsilon = 1e-12);
        let odd: Vec<f64> = c1.x.iter().map(|x| x.sin()).collect();
        assert!(
            c1.line_integral(&odd, Boundary::Interface, Measure::Dl)
                .unwrap()
                .abs()
                < 1e-14
        );
    }

    #[test]
    fn area_integral_examples() {
        let (g1, g2) = build_grids(&flat(), 16, 9, 9).unwrap();
        assert_abs_diff_eq!(
            g2.area_integral(&g2.field_from_xy(|_, _| 1.0)).unwrap(),
            PI,
            epsilon = 1e-13
        );
        assert_abs_diff_eq!(
            g1.area_integral(&g1.field_from_xy(|_, y| y)).unwrap(),
            -PI,
            epsilon = 1e-13
        );
        let (c1, c2) = build_grids(&curved(), 32, 9, 9).unwrap();
        let a1 = c1.area_integral(&c1.field_from_xy(|_, _| 1.0)).unwrap();
        let o1 = crate::numerics::adaptive_gauss(|x| 1.0 + 0.05 * x.cos(), 0.0, 2.0 * PI, 1e-14);
        assert_abs_diff_eq!(a1, o1, epsilon = 1e-12);
        let a2 = c2.area_integral(&c2.field_from_xy(|_, _| 1.0)).unwrap();
        assert_abs_diff_eq!(a2, PI, epsilon = 1e-12);
        let bad = Field::zeros((3, 3));
        assert!(c1.area_integral(&bad).is_err());
    }

    fn divergence_gap(nx: usize, ns: usize) -> f64 {
        let d = build_domain(
            1.0,
            SurfaceCurve::new(0.0, vec![0.05], vec![]),
            SurfaceCurve::new(0.5, vec![0.0, 0.02], vec![]),
        )
        .unwrap();
        let (_, g2) = build_grids(&d, nx, ns, ns).unwrap();
        let f = g2.field_from_xy(|x, y| (x + 0.3).cos() * (1.3 * y).exp() + y * y * y);
        let lap = g2.mapped_laplacian(&f).unwrap();
        let interior = g2.area_integral(&lap).unwrap();
        let top = g2
            .boundary_normal_derivative(&f, Boundary::Surface)
            .unwrap();
        let bot = g2
            .boundary_normal_derivative(&f, Boundary::Interface)
            .unwrap();
        let flux = g2
            .line_integral(&top, Boundary::Surface, Measure::Dl)
            .unwrap()
            - g2.line_integral(&bot, Boundary::Interface, Measure::Dl)
                .unwrap();
        (interior - flux).abs()
    }

    #[test]
    fn divergence_theorem_converges() {
        let e1 = divergence_gap(32, 17);
        let e2 = divergence_gap(32, 33);
        let e3 = divergence_gap(32, 65);
        assert!(e2 < e1 && e3 < e2, "{e1} {e2} {e3}");
        assert!((e2 / e3).log2() > 1.7, "{e1} {e2} {e3}");
    }

    #[test]
    fn high_order_sigma_derivative_is_exact_on_cubics() {
        let (g, _) = build_grids(&flat(), 8, 9, 9).unwrap();
        let f = g.field_from_xs(|_, s| 1.0 - s + 2.0 * s.powi(3));
        let d = g.d_sigma4(&f);
        for k in 0..g.ns {
            let s = g.sigma[k];
            let exact = -1.0 + 6.0 * s * s;
            assert!((d[[3, k]] - exact).abs() < 1e-12, "{k}");
        }
    }
}
