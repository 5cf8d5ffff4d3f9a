//! Per-layer density and vorticity profiles and the Bernoulli maps built
//! from them.
//!
//! For a layer with density `rho(s)` and vorticity function `beta(q)` the
//! map `phi_y(p) = g y rho'(p) - beta(-p)` is the inverse of `m -> d2F(y, m)`.
//! `F` itself is recovered by quadrature after the substitution `s = phi_y(p)`:
//!
//! ```text
//! F(y, m) = int_{p0}^{phi_y^{-1}(m)} p phi_y'(p) dp + offset(y)
//! ```
//!
//! which keeps the inversion out of the quadrature loop.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{adaptive_gauss, MonotoneCubic};

/// Relative tolerance of the Bernoulli-map quadrature.
pub const QUAD_REL_TOL: f64 = 1e-12;

/// Which of the two layers an object belongs to (1 = lower, 2 = upper).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Layer {
    Lower,
    Upper,
}

impl Layer {
    pub fn id(self) -> u8 {
        match self {
            Layer::Lower => 1,
            Layer::Upper => 2,
        }
    }

    pub fn index(self) -> usize {
        self.id() as usize - 1
    }
}

impl From<Layer> for u8 {
    fn from(l: Layer) -> u8 {
        l.id()
    }
}

impl TryFrom<u8> for Layer {
    type Error = String;
    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(Layer::Lower),
            2 => Ok(Layer::Upper),
            _ => Err(format!("layer id must be 1 or 2, got {v}")),
        }
    }
}

/// Serialized form of a scalar profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProfileSpec {
    Constant {
        value: f64,
    },
    Linear {
        value_at_zero: f64,
        slope: f64,
    },
    /// Ascending coefficients: `c0 + c1 x + c2 x^2 + ...`.
    Polynomial {
        coefficients: Vec<f64>,
    },
    Tabulated {
        knots: Vec<f64>,
        values: Vec<f64>,
    },
}

/// A smooth scalar function of one variable with first and second derivatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProfileSpec", into = "ProfileSpec")]
pub enum ScalarProfile {
    Constant(f64),
    Linear { value_at_zero: f64, slope: f64 },
    Polynomial(Vec<f64>),
    Tabulated(MonotoneCubic),
}

impl TryFrom<ProfileSpec> for ScalarProfile {
    type Error = String;
    fn try_from(spec: ProfileSpec) -> std::result::Result<Self, String> {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match spec {
            ProfileSpec::Constant { value } if value.is_finite() => Ok(Self::Constant(value)),
            ProfileSpec::Linear {
                value_at_zero,
                slope,
            } if value_at_zero.is_finite() && slope.is_finite() => Ok(Self::Linear {
                value_at_zero,
                slope,
            }),
            ProfileSpec::Polynomial { coefficients }
                if !coefficients.is_empty() && finite(&coefficients) =>
            {
                Ok(Self::Polynomial(coefficients))
            }
            ProfileSpec::Tabulated { knots, values } if finite(&knots) && finite(&values) => {
                MonotoneCubic::new(knots, values)
                    .map(Self::Tabulated)
                    .ok_or_else(|| {
                        "tabulated profile needs >= 2 strictly increasing knots and matching values"
                            .into()
                    })
            }
            other => Err(format!("invalid profile specification {other:?}")),
        }
    }
}

impl From<ScalarProfile> for ProfileSpec {
    fn from(p: ScalarProfile) -> Self {
        match p {
            ScalarProfile::Constant(value) => ProfileSpec::Constant { value },
            ScalarProfile::Linear {
                value_at_zero,
                slope,
            } => ProfileSpec::Linear {
                value_at_zero,
                slope,
            },
            ScalarProfile::Polynomial(coefficients) => ProfileSpec::Polynomial { coefficients },
            ScalarProfile::Tabulated(t) => ProfileSpec::Tabulated {
                knots: t.knots().to_vec(),
                values: t.values().to_vec(),
            },
        }
    }
}

impl ScalarProfile {
    pub fn constant(value: f64) -> Self {
        Self::Constant(value)
    }

    pub fn linear(value_at_zero: f64, slope: f64) -> Self {
        Self::Linear {
            value_at_zero,
            slope,
        }
    }

    pub fn polynomial(coefficients: Vec<f64>) -> Self {
        Self::Polynomial(coefficients)
    }

    pub fn tabulated(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        MonotoneCubic::new(knots, values)
            .map(Self::Tabulated)
            .ok_or_else(|| {
                Error::Invalid("tabulated profile needs strictly increasing knots".into())
            })
    }

    /// Closed interval on which the profile is defined.
    pub fn range(&self) -> (f64, f64) {
        match self {
            Self::Tabulated(t) => t.range(),
            _ => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    /// Value, first and second derivative.
    pub fn eval_all(&self, x: f64) -> (f64, f64, f64) {
        match self {
            Self::Constant(v) => (*v, 0.0, 0.0),
            Self::Linear {
                value_at_zero,
                slope,
            } => (value_at_zero + slope * x, *slope, 0.0),
            Self::Polynomial(c) => {
                let (mut v, mut d, mut dd) = (0.0, 0.0, 0.0);
                for ck in c.iter().rev() {
                    dd = dd * x + 2.0 * d;
                    d = d * x + v;
                    v = v * x + ck;
                }
                (v, d, dd)
            }
            Self::Tabulated(t) => t.eval_all(x),
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        self.eval_all(x).0
    }

    pub fn derivative(&self, x: f64) -> f64 {
        self.eval_all(x).1
    }

    pub fn second_derivative(&self, x: f64) -> f64 {
        self.eval_all(x).2
    }

    pub fn is_polynomial(&self) -> bool {
        !matches!(self, Self::Tabulated(_))
    }
}

/// Density `rho(s)` and vorticity function `beta(q)` of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerProfiles {
    pub layer: Layer,
    pub rho: ScalarProfile,
    pub beta: ScalarProfile,
}

impl LayerProfiles {
    pub fn new(layer: Layer, rho: ScalarProfile, beta: ScalarProfile) -> Self {
        Self { layer, rho, beta }
    }

    pub fn s_range(&self) -> (f64, f64) {
        self.rho.range()
    }

    pub fn q_range(&self) -> (f64, f64) {
        self.beta.range()
    }

    pub fn rho(&self, s: f64) -> f64 {
        self.rho.value(s)
    }

    pub fn rho_prime(&self, s: f64) -> f64 {
        self.rho.derivative(s)
    }

    pub fn beta(&self, q: f64) -> f64 {
        self.beta.value(q)
    }

    pub fn beta_prime(&self, q: f64) -> f64 {
        self.beta.derivative(q)
    }

    fn check_p(&self, p: f64) -> Result<()> {
        let (slo, shi) = self.s_range();
        if !(p >= slo && p <= shi) {
            return Err(Error::Domain {
                what: "rho (as -psi)",
                value: p,
                lo: slo,
                hi: shi,
            });
        }
        let (qlo, qhi) = self.q_range();
        if !(-p >= qlo && -p <= qhi) {
            return Err(Error::Domain {
                what: "beta (as psi)",
                value: -p,
                lo: qlo,
                hi: qhi,
            });
        }
        Ok(())
    }

    fn phi_unchecked(&self, g: f64, y: f64, p: f64) -> f64 {
        g * y * self.rho.derivative(p) - self.beta.value(-p)
    }

    fn phi_slope_unchecked(&self, g: f64, y: f64, p: f64) -> f64 {
        g * y * self.rho.second_derivative(p) + self.beta.derivative(-p)
    }
}

/// `phi_y(p) = g y rho'(p) - beta(-p)`.
pub fn phi_forward(profiles: &LayerProfiles, g: f64, y: f64, p: f64) -> Result<f64> {
    profiles.check_p(p)?;
    Ok(profiles.phi_unchecked(g, y, p))
}

/// `d/dp phi_y(p) = g y rho''(p) + beta'(-p)`.
pub fn phi_slope(profiles: &LayerProfiles, g: f64, y: f64, p: f64) -> Result<f64> {
    profiles.check_p(p)?;
    Ok(profiles.phi_slope_unchecked(g, y, p))
}

/// Closed interval `[lo, hi]`.
pub type Interval = (f64, f64);

/// Solves `phi_y(p) = m` for `p` inside `window`.
///
/// The window is first checked for strict monotonicity by sampling the slope.
pub fn phi_invert(
    profiles: &LayerProfiles,
    g: f64,
    y: f64,
    m: f64,
    window: Interval,
) -> Result<f64> {
    profiles.check_p(window.0)?;
    profiles.check_p(window.1)?;
    let report = validate_profiles(profiles, g, (y, y), window, 65);
    if !report.monotone {
        return Err(Error::NonMonotone {
            min_abs_slope: report.min_abs_slope,
        });
    }
    invert_bracketed(profiles, g, y, m, window)
}

fn invert_bracketed(
    profiles: &LayerProfiles,
    g: f64,
    y: f64,
    m: f64,
    window: Interval,
) -> Result<f64> {
    let (mut a, mut b) = window;
    let mut fa = profiles.phi_unchecked(g, y, a) - m;
    let fb = profiles.phi_unchecked(g, y, b) - m;
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        let (lo, hi) = (fa.min(fb) + m, fa.max(fb) + m);
        return Err(Error::Bracket { target: m, lo, hi });
    }
    let tol = 4.0 * f64::EPSILON * m.abs().max(1.0);
    // secant start, then safeguarded Newton with bisection fallback
    let mut p = a - fa * (b - a) / (fb - fa);
    if !(p > a && p < b) {
        p = 0.5 * (a + b);
    }
    for _ in 0..200 {
        let f = profiles.phi_unchecked(g, y, p) - m;
        if f.abs() <= tol {
            return Ok(p);
        }
        if f.signum() == fa.signum() {
            a = p;
            fa = f;
        } else {
            b = p;
        }
        let slope = profiles.phi_slope_unchecked(g, y, p);
        let newton = p - f / slope;
        let next = if slope != 0.0 && newton > a && newton < b {
            newton
        } else {
            0.5 * (a + b)
        };
        if (b - a).abs() <= 2.0 * f64::EPSILON * p.abs().max(1e-300) || next == p {
            return Ok(next);
        }
        p = next;
    }
    Ok(p)
}

/// Outcome of sampling the slope of `phi_y` over a `(y, p)` rectangle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileValidationReport {
    pub monotone: bool,
    pub window: (Interval, Interval),
    pub min_abs_slope: f64,
    /// Sample points `(y, p)` where the slope vanishes or has the minority sign.
    pub violations: Vec<(f64, f64)>,
    /// `rho > 0` at all sampled `p`.
    pub rho_positive: bool,
    /// `rho' <= 0` at all sampled `p`.
    pub rho_nonincreasing: bool,
    /// `beta' < 0` at all sampled `q = -p`.
    pub beta_decreasing: bool,
}

fn samples(range: Interval, n: usize) -> Vec<f64> {
    if n < 2 || range.0 == range.1 {
        return vec![range.0; n.max(1)];
    }
    (0..n)
        .map(|i| range.0 + (range.1 - range.0) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Samples `(phi_y)'(p)` on an `n_samples x n_samples` grid.
pub fn validate_profiles(
    profiles: &LayerProfiles,
    g: f64,
    y_range: Interval,
    p_window: Interval,
    n_samples: usize,
) -> ProfileValidationReport {
    let n = n_samples.max(2);
    let ys = samples(y_range, n);
    let ps = samples(p_window, n);
    let mut pos = 0usize;
    let mut neg = 0usize;
    let mut min_abs = f64::INFINITY;
    let mut slopes = Vec::with_capacity(ys.len() * ps.len());
    let mut in_domain = true;
    for &y in &ys {
        for &p in &ps {
            if profiles.check_p(p).is_err() {
                in_domain = false;
                slopes.push((y, p, 0.0));
                continue;
            }
            let s = profiles.phi_slope_unchecked(g, y, p);
            if s > 0.0 {
                pos += 1;
            } else if s < 0.0 {
                neg += 1;
            }
            min_abs = min_abs.min(s.abs());
            slopes.push((y, p, s));
        }
    }
    if !in_domain {
        min_abs = 0.0;
    }
    let majority_positive = pos >= neg;
    let violations: Vec<(f64, f64)> = slopes
        .iter()
        .filter(|(_, _, s)| *s == 0.0 || (*s > 0.0) != majority_positive)
        .take(64)
        .map(|&(y, p, _)| (y, p))
        .collect();
    let monotone = min_abs > 0.0 && (pos == 0 || neg == 0) && in_domain;
    let mut rho_positive = true;
    let mut rho_nonincreasing = true;
    let mut beta_decreasing = true;
    for &p in &ps {
        if profiles.check_p(p).is_err() {
            continue;
        }
        let (r, rp, _) = profiles.rho.eval_all(p);
        rho_positive &= r > 0.0;
        rho_nonincreasing &= rp <= 0.0;
        beta_decreasing &= profiles.beta.derivative(-p) < 0.0;
    }
    ProfileValidationReport {
        monotone,
        window: (y_range, p_window),
        min_abs_slope: if min_abs.is_finite() { min_abs } else { 0.0 },
        violations,
        rho_positive,
        rho_nonincreasing,
        beta_decreasing,
    }
}

/// Rectangle of `(y, p)` on which a Bernoulli map is certified invertible.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapWindow {
    pub y_range: Interval,
    pub p_window: Interval,
}

impl MapWindow {
    /// Window covering stream-function values `psi_range` (so `p = -psi`)
    /// widened by half its span, at least `min_margin` on each side.
    pub fn around_psi(psi_range: Interval, y_range: Interval, min_margin: f64) -> Self {
        let (lo, hi) = (-psi_range.1, -psi_range.0);
        let margin = (0.5 * (hi - lo)).max(min_margin);
        let ypad = 0.25 * (y_range.1 - y_range.0).abs().max(0.1);
        Self {
            y_range: (y_range.0 - ypad, y_range.1 + ypad),
            p_window: (lo - margin, hi + margin),
        }
    }

    fn including(mut self, p: f64) -> Self {
        let pad = 1e-3 * (self.p_window.1 - self.p_window.0).abs().max(1.0);
        if p <= self.p_window.0 {
            self.p_window.0 = p - pad;
        }
        if p >= self.p_window.1 {
            self.p_window.1 = p + pad;
        }
        self
    }

    /// Clips the window to the declared profile ranges.
    fn clipped(mut self, profiles: &LayerProfiles) -> Self {
        let (slo, shi) = profiles.s_range();
        let (qlo, qhi) = profiles.q_range();
        self.p_window.0 = self.p_window.0.max(slo).max(-qhi);
        self.p_window.1 = self.p_window.1.min(shi).min(-qlo);
        self
    }
}

/// Offset function `y -> (C(y), C'(y))` for custom normalizations.
pub type OffsetFn = Arc<dyn Fn(f64) -> (f64, f64) + Send + Sync>;

/// How the free function of `y` in `F` is fixed.
#[derive(Clone)]
pub enum Normalization {
    /// `F(y, phi_y(p_ref)) = 0` for every `y`.
    Zero { p_ref: f64 },
    /// `F(y, phi_y(p_ref)) = G(y, phi^G_y(partner_p))`, with `G` another map.
    MatchPartner {
        p_ref: f64,
        partner: Box<BernoulliMap>,
        partner_p: f64,
    },
    /// `F(y, phi_y(p_ref)) = C(y)`.
    Custom { p_ref: f64, offset: OffsetFn },
}

impl fmt::Debug for Normalization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Zero { p_ref } => f.debug_struct("Zero").field("p_ref", p_ref).finish(),
            Self::MatchPartner {
                p_ref, partner_p, ..
            } => f
                .debug_struct("MatchPartner")
                .field("p_ref", p_ref)
                .field("partner_p", partner_p)
                .finish(),
            Self::Custom { p_ref, .. } => f.debug_struct("Custom").field("p_ref", p_ref).finish(),
        }
    }
}

impl Normalization {
    fn p_ref(&self) -> f64 {
        match self {
            Self::Zero { p_ref }
            | Self::MatchPartner { p_ref, .. }
            | Self::Custom { p_ref, .. } => *p_ref,
        }
    }
}

/// `F` and its partial derivatives at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BernoulliEval {
    pub f: f64,
    pub d1: f64,
    pub d2: f64,
    pub d22: f64,
}

/// The function `F_i(y, m)` of one layer.
#[derive(Debug, Clone)]
pub struct BernoulliMap {
    pub layer: Layer,
    pub g: f64,
    profiles: LayerProfiles,
    window: MapWindow,
    normalization: Normalization,
    slope_sign: f64,
}

impl BernoulliMap {
    /// Builds a map after certifying monotonicity on `window`.
    pub fn new(
        profiles: LayerProfiles,
        g: f64,
        window: MapWindow,
        normalization: Normalization,
    ) -> Result<Self> {
        let window = window.including(normalization.p_ref()).clipped(&profiles);
        if window.p_window.0 >= window.p_window.1 {
            return Err(Error::Invalid("empty inversion window".into()));
        }
        let report = validate_profiles(&profiles, g, window.y_range, window.p_window, 64);
        if !report.monotone {
            return Err(Error::NonMonotone {
                min_abs_slope: report.min_abs_slope,
            });
        }
        if !report.rho_positive {
            return Err(Error::Invalid(format!(
                "density of layer {} is not positive on the window",
                profiles.layer.id()
            )));
        }
        let slope_sign = profiles
            .phi_slope_unchecked(g, window.y_range.0, window.p_window.0)
            .signum();
        Ok(Self {
            layer: profiles.layer,
            g,
            profiles,
            window,
            normalization,
            slope_sign,
        })
    }

    pub fn profiles(&self) -> &LayerProfiles {
        &self.profiles
    }

    pub fn window(&self) -> MapWindow {
        self.window
    }

    pub fn normalization(&self) -> &Normalization {
        &self.normalization
    }

    /// Sign of `d22F` on the validated window.
    pub fn curvature_sign(&self) -> f64 {
        self.slope_sign
    }

    /// `phi_y(p)` without range checks (p must lie in the window).
    pub fn phi(&self, y: f64, p: f64) -> f64 {
        self.profiles.phi_unchecked(self.g, y, p)
    }

    /// `p = (phi_y)^{-1}(m) = d2F(y, m)`.
    pub fn invert(&self, y: f64, m: f64) -> Result<f64> {
        invert_bracketed(&self.profiles, self.g, y, m, self.window.p_window)
    }

    /// `int_{p0}^{p} s phi_y'(s) ds`.
    fn core(&self, y: f64, p0: f64, p: f64) -> f64 {
        let prof = &self.profiles;
        let g = self.g;
        adaptive_gauss(
            |s| s * prof.phi_slope_unchecked(g, y, s),
            p0,
            p,
            QUAD_REL_TOL,
        )
    }

    /// `d/dy` of `core` at fixed `m`: `-g [rho(p) - rho(p0) + p0 rho'(p0)]`.
    fn core_dy(&self, p0: f64, p: f64) -> f64 {
        let rho = &self.profiles.rho;
        -self.g * (rho.value(p) - rho.value(p0) + p0 * rho.derivative(p0))
    }

    fn offset(&self, y: f64) -> (f64, f64) {
        match &self.normalization {
            Normalization::Zero { .. } => (0.0, 0.0),
            Normalization::MatchPartner {
                partner, partner_p, ..
            } => {
                let e = partner.eval_at_p(y, *partner_p);
                // d/dy G(y, phi^G_y(p*)) = d1G + d2G * g rho_G'(p*)
                let dphi = partner.g * partner.profiles.rho.derivative(*partner_p);
                (e.f, e.d1 + e.d2 * dphi)
            }
            Normalization::Custom { offset, .. } => offset(y),
        }
    }

    /// Evaluation at a known preimage `p` (so `m = phi_y(p)`).
    pub fn eval_at_p(&self, y: f64, p: f64) -> BernoulliEval {
        let p0 = self.normalization.p_ref();
        let (c, dc) = self.offset(y);
        let slope = self.profiles.phi_slope_unchecked(self.g, y, p);
        BernoulliEval {
            f: self.core(y, p0, p) + c,
            d1: self.core_dy(p0, p) + dc,
            d2: p,
            d22: 1.0 / slope,
        }
    }

    /// `F`, `d1F`, `d2F`, `d22F` at `(y, m)`.
    pub fn eval(&self, y: f64, m: f64) -> Result<BernoulliEval> {
        let p = self.invert(y, m)?;
        Ok(self.eval_at_p(y, p))
    }

    pub fn value(&self, y: f64, m: f64) -> Result<f64> {
        Ok(self.eval(y, m)?.f)
    }

    pub fn d2(&self, y: f64, m: f64) -> Result<f64> {
        self.invert(y, m)
    }

    pub fn d22(&self, y: f64, m: f64) -> Result<f64> {
        Ok(self.eval(y, m)?.d22)
    }

    pub fn d1(&self, y: f64, m: f64) -> Result<f64> {
        Ok(self.eval(y, m)?.d1)
    }
}

/// Builds `(F1, F2)` with the normalizations `F2(y, phi2_y(p2)) = 0` and
/// `F1(y, phi1_y(0)) = F2(y, phi2_y(0))`.
pub fn build_bernoulli_map(
    lower: &LayerProfiles,
    upper: &LayerProfiles,
    g: f64,
    p2: f64,
    windows: [MapWindow; 2],
) -> Result<(BernoulliMap, BernoulliMap)> {
    let f2 = BernoulliMap::new(
        upper.clone(),
        g,
        windows[1].including(0.0),
        Normalization::Zero { p_ref: p2 },
    )?;
    let f1 = BernoulliMap::new(
        lower.clone(),
        g,
        windows[0],
        Normalization::MatchPartner {
            p_ref: 0.0,
            partner: Box::new(f2.clone()),
            partner_p: 0.0,
        },
    )?;
    Ok((f1, f2))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lam1_upper() -> LayerProfiles {
        LayerProfiles::new(
            Layer::Upper,
            ScalarProfile::constant(1.0),
            ScalarProfile::linear(0.0, -1.0),
        )
    }

    fn lam1_lower() -> LayerProfiles {
        LayerProfiles::new(
            Layer::Lower,
            ScalarProfile::constant(2.0),
            ScalarProfile::linear(0.0, -1.0),
        )
    }

    #[test]
    fn phi_forward_examples() {
        let p = lam1_upper();
        assert_eq!(phi_forward(&p, 1.0, 0.3, 0.7).unwrap(), -0.7);
        let q = LayerProfiles::new(
            Layer::Upper,
            ScalarProfile::linear(2.0, -1.0),
            ScalarProfile::linear(0.0, -1.0),
        );
        assert_eq!(phi_forward(&q, 1.0, 1.0, 0.5).unwrap(), -1.5);
        for y in [-0.25, 0.0, 0.4] {
            assert_eq!(phi_forward(&p, 1.0, y, 0.2).unwrap(), -0.2);
        }
    }

    #[test]
    fn phi_forward_rejects_out_of_range() {
        let p = LayerProfiles::new(
            Layer::Upper,
            ScalarProfile::tabulated(vec![0.0, 1.0], vec![1.0, 0.9]).unwrap(),
            ScalarProfile::linear(0.0, -1.0),
        );
        assert!(matches!(
            phi_forward(&p, 1.0, 0.0, 1.5),
            Err(Error::Domain { .. })
        ));
    }

    #[test]
    fn phi_invert_examples() {
        let p = lam1_upper();
        let x = phi_invert(&p, 1.0, 0.2, -0.7, (-5.0, 5.0)).unwrap();
        assert!((x - 0.7).abs() < 1e-14);
        let q = LayerProfiles::new(
            Layer::Upper,
            ScalarProfile::linear(2.0, -1.0),
            ScalarProfile::linear(0.0, -1.0),
        );
        let x = phi_invert(&q, 1.0, 1.0, -1.5, (-5.0, 5.0)).unwrap();
        assert!((x - 0.5).abs() < 1e-14);
        let flat = LayerProfiles::new(
            Layer::Upper,
            ScalarProfile::constant(1.0),
            ScalarProfile::constant(0.0),
        );
        assert!(matches!(
            phi_invert(&flat, 1.0, 0.0, 0.0, (-5.0, 5.0)),
            Err(Error::NonMonotone { .. })
        ));
        assert!(matches!(
            phi_invert(&p, 1.0, 0.0, 9.0, (-5.0, 5.0)),
            Err(Error::Bracket { .. })
        ));
    }

    #[test]
    fn validate_examples() {
        let r = validate_profiles(&lam1_upper(), 1.0, (-1.0, 1.0), (-2.0, 2.0), 10);
        assert!(r.monotone);
        assert_eq!(r.min_abs_slope, 1.0);
        let flat = LayerProfiles::new(
            Layer::Upper,
            ScalarProfile::constant(1.0),
            ScalarProfile::constant(0.0),
        );
        let r = validate_profiles(&flat, 1.0, (-1.0, 1.0), (-2.0, 2.0), 10);
        assert!(!r.monotone);
        assert!(!r.violations.is_empty());
    }

    #[test]
    fn validate_quadratic_density_against_dense_sampling() {
        let prof = LayerProfiles::new(
            Layer::Upper,
            ScalarProfile::polynomial(vec![2.0, 0.0, -0.1]),
            ScalarProfile::linear(0.0, -1.0),
        );
        let r = validate_profiles(&prof, 1.0, (-1.0, 0.5), (-1.0, 1.0), 50);
        // brute force on a 1000 x 1000 grid: slope = -0.2 y - 1
        let mut min_abs = f64::INFINITY;
        let mut same_sign = true;
        for i in 0..1000 {
            let y = -1.0 + 1.5 * i as f64 / 999.0;
            for j in 0..1000 {
                let p = -1.0 + 2.0 * j as f64 / 999.0;
                let s = 1.0 * y * (-0.2) + (-1.0) + 0.0 * p;
                same_sign &= s < 0.0;
                min_abs = min_abs.min(s.abs());
            }
        }
        assert_eq!(r.monotone, same_sign);
        assert!((r.min_abs_slope - min_abs).abs() < 1e-12);
    }

    #[test]
    fn lam1_maps_match_closed_form() {
        let p2 = 0.5f64.sinh();
        let w = MapWindow {
            y_range: (-1.5, 1.0),
            p_window: (-3.0, 3.0),
        };
        let (f1, f2) = build_bernoulli_map(&lam1_lower(), &lam1_upper(), 1.0, p2, [w, w]).unwrap();
        for &(y, m) in &[(0.1, 0.3), (-0.7, -1.1), (0.45, 0.9)] {
            let e = f2.eval(y, m).unwrap();
            assert!((e.f - (p2 * p2 - m * m) / 2.0).abs() < 1e-13);
            assert!((e.d2 + m).abs() < 1e-14);
            assert!((e.d22 + 1.0).abs() < 1e-14);
            assert!(e.d1.abs() < 1e-14);
            let e1 = f1.eval(y, m).unwrap();
            assert!((e1.f - (p2 * p2 - m * m) / 2.0).abs() < 1e-13);
        }
        assert!((f1.value(0.2, 0.0).unwrap() - p2 * p2 / 2.0).abs() < 1e-14);
    }

    #[test]
    fn surface_normalization_vanishes() {
        let up = LayerProfiles::new(
            Layer::Upper,
            ScalarProfile::linear(1.0, -0.2),
            ScalarProfile::polynomial(vec![0.1, -1.0, 0.0, -0.3]),
        );
        let p2 = 0.4;
        let w = MapWindow {
            y_range: (-1.0, 1.0),
            p_window: (-1.0, 1.0),
        };
        let (_, f2) = build_bernoulli_map(&up.clone(), &up, 9.81, p2, [w, w]).unwrap();
        for i in 0..20 {
            let y = -1.0 + 2.0 * i as f64 / 19.0;
            let m = f2.phi(y, p2);
            assert!(f2.value(y, m).unwrap().abs() <= 1e-10);
        }
    }

    #[test]
    fn custom_offset_is_added() {
        let off: OffsetFn = Arc::new(|y| (y * y, 2.0 * y));
        let map = BernoulliMap::new(
            lam1_upper(),
            1.0,
            MapWindow {
                y_range: (-1.0, 1.0),
                p_window: (-2.0, 2.0),
            },
            Normalization::Custom {
                p_ref: 0.0,
                offset: off,
            },
        )
        .unwrap();
        let e = map.eval(0.5, 0.0).unwrap();
        assert!((e.f - 0.25).abs() < 1e-15);
        assert!((e.d1 - 1.0).abs() < 1e-15);
    }
}
