//! Small numerical kernels shared by the modules: Gauss-Legendre rules,
//! adaptive quadrature, monotone cubic interpolation and Chebyshev
//! collocation helpers.

use std::f64::consts::PI;
use std::sync::OnceLock;

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..(n + 1) / 2 {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else { p1 };
            let pn1 = if n == 0 { 0.0 } else { p0 };
            dp = n as f64 * (x * pn - pn1) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn gl10() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(10))
}

fn gauss_panel<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
    let (x, w) = gl10();
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut acc = 0.0;
    for (xi, wi) in x.iter().zip(w) {
        acc += wi * f(mid + half * xi);
    }
    acc * half
}

/// Adaptive composite 10-point Gauss-Legendre quadrature of `f` over [a, b].
///
/// A panel is accepted when it agrees with its two halves to
/// `rel_tol * max(|I|, abs_floor)`.
pub fn adaptive_gauss<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let whole = gauss_panel(&f, a, b);
    adaptive_step(&f, a, b, whole, rel_tol, whole.abs().max(1e-300), 0)
}

fn adaptive_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    whole: f64,
    rel_tol: f64,
    scale: f64,
    depth: usize,
) -> f64 {
    let mid = 0.5 * (a + b);
    let left = gauss_panel(f, a, mid);
    let right = gauss_panel(f, mid, b);
    let refined = left + right;
    if (refined - whole).abs() <= rel_tol * scale.max(refined.abs()) || depth >= 40 {
        return refined;
    }
    adaptive_step(f, a, mid, left, rel_tol, scale, depth + 1)
        + adaptive_step(f, mid, b, right, rel_tol, scale, depth + 1)
}

/// Monotone piecewise cubic Hermite interpolant (Fritsch-Carlson slopes).
#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneCubic {
    knots: Vec<f64>,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl MonotoneCubic {
    /// `knots` must be strictly increasing with at least two entries.
    pub fn new(knots: Vec<f64>, values: Vec<f64>) -> Option<Self> {
        let n = knots.len();
        if n < 2 || values.len() != n || knots.windows(2).any(|w| w[1] <= w[0]) {
            return None;
        }
        let secants: Vec<f64> = (0..n - 1)
            .map(|i| (values[i + 1] - values[i]) / (knots[i + 1] - knots[i]))
            .collect();
        let mut slopes = vec![0.0; n];
        slopes[0] = secants[0];
        slopes[n - 1] = secants[n - 2];
        for i in 1..n - 1 {
            let (a, b) = (secants[i - 1], secants[i]);
            if a * b <= 0.0 {
                slopes[i] = 0.0;
            } else {
                let h0 = knots[i] - knots[i - 1];
                let h1 = knots[i + 1] - knots[i];
                let w1 = 2.0 * h1 + h0;
                let w2 = h1 + 2.0 * h0;
                slopes[i] = (w1 + w2) / (w1 / a + w2 / b);
            }
        }
        Some(Self {
            knots,
            values,
            slopes,
        })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn range(&self) -> (f64, f64) {
        (self.knots[0], self.knots[self.knots.len() - 1])
    }

    fn segment(&self, x: f64) -> usize {
        let n = self.knots.len();
        match self
            .knots
            .binary_search_by(|k| k.partial_cmp(&x).unwrap_or(std::cmp::Ordering::Less))
        {
            Ok(i) => i.min(n - 2),
            Err(i) => i.saturating_sub(1).min(n - 2),
        }
    }

    /// Value, first and second derivative at `x` (clamped to the knot range).
    pub fn eval_all(&self, x: f64) -> (f64, f64, f64) {
        let i = self.segment(x);
        let h = self.knots[i + 1] - self.knots[i];
        let t = (x - self.knots[i]) / h;
        let (y0, y1) = (self.values[i], self.values[i + 1]);
        let (m0, m1) = (self.slopes[i] * h, self.slopes[i + 1] * h);
        let t2 = t * t;
        let t3 = t2 * t;
        let v = (2.0 * t3 - 3.0 * t2 + 1.0) * y0
            + (t3 - 2.0 * t2 + t) * m0
            + (-2.0 * t3 + 3.0 * t2) * y1
            + (t3 - t2) * m1;
        let d = ((6.0 * t2 - 6.0 * t) * y0
            + (3.0 * t2 - 4.0 * t + 1.0) * m0
            + (-6.0 * t2 + 6.0 * t) * y1
            + (3.0 * t2 - 2.0 * t) * m1)
            / h;
        let dd = ((12.0 * t - 6.0) * y0
            + (6.0 * t - 4.0) * m0
            + (-12.0 * t + 6.0) * y1
            + (6.0 * t - 2.0) * m1)
            / (h * h);
        (v, d, dd)
    }
}

/// Chebyshev-Gauss-Lobatto nodes `cos(pi j / n)`, j = 0..=n (descending from 1 to -1).
pub fn cheb_nodes(n: usize) -> Vec<f64> {
    (0..=n).map(|j| (PI * j as f64 / n as f64).cos()).collect()
}

/// Chebyshev differentiation matrix on the Gauss-Lobatto nodes, row-major.
pub fn cheb_diff_matrix(n: usize) -> Vec<Vec<f64>> {
    let x = cheb_nodes(n);
    let c: Vec<f64> = (0..=n)
        .map(|j| {
            let e = if j == 0 || j == n { 2.0 } else { 1.0 };
            if j % 2 == 0 {
                e
            } else {
                -e
            }
        })
        .collect();
    let mut d = vec![vec![0.0; n + 1]; n + 1];
    for i in 0..=n {
        for j in 0..=n {
            if i != j {
                d[i][j] = c[i] / c[j] / (x[i] - x[j]);
            }
        }
    }
    // negative-sum trick for the diagonal
    for i in 0..=n {
        let s: f64 = (0..=n).filter(|&j| j != i).map(|j| d[i][j]).sum();
        d[i][i] = -s;
    }
    d
}

/// Barycentric interpolation on Chebyshev-Gauss-Lobatto nodes of [-1, 1].
pub fn cheb_barycentric(nodes: &[f64], values: &[f64], x: f64) -> f64 {
    let n = nodes.len() - 1;
    let mut num = 0.0;
    let mut den = 0.0;
    for j in 0..=n {
        let diff = x - nodes[j];
        if diff == 0.0 {
            return values[j];
        }
        let mut w = if j % 2 == 0 { 1.0 } else { -1.0 };
        if j == 0 || j == n {
            w *= 0.5;
        }
        let t = w / diff;
        num += t * values[j];
        den += t;
    }
    num / den
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_rule_integrates_polynomials_exactly() {
        let (x, w) = gauss_legendre(10);
        let s: f64 = w.iter().sum();
        assert!((s - 2.0).abs() < 1e-14);
        let m18: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(18)).sum();
        assert!((m18 - 2.0 / 19.0).abs() < 1e-14);
    }

    #[test]
    fn adaptive_gauss_handles_peaked_integrand() {
        let v = adaptive_gauss(|x| 1.0 / (1e-3 + x * x), -1.0, 1.0, 1e-12);
        let exact = 2.0 / 1e-3f64.sqrt() * (1.0 / 1e-3f64.sqrt()).atan();
        assert!((v - exact).abs() / exact < 1e-11);
    }

    #[test]
    fn monotone_cubic_reproduces_linear_data() {
        let k: Vec<f64> = (0..11).map(|i| i as f64 * 0.1).collect();
        let v: Vec<f64> = k.iter().map(|x| 3.0 - 2.0 * x).collect();
        let m = MonotoneCubic::new(k, v).unwrap();
        let (v, d, dd) = m.eval_all(0.537);
        assert!((v - (3.0 - 2.0 * 0.537)).abs() < 1e-14);
        assert!((d + 2.0).abs() < 1e-12);
        assert!(dd.abs() < 1e-9);
    }

    #[test]
    fn monotone_cubic_rejects_unsorted_knots() {
        assert!(MonotoneCubic::new(vec![0.0, 0.0], vec![1.0, 2.0]).is_none());
    }

    #[test]
    fn chebyshev_derivative_of_sinh_is_spectral() {
        let n = 24;
        let x = cheb_nodes(n);
        let d = cheb_diff_matrix(n);
        let f: Vec<f64> = x.iter().map(|x| x.sinh()).collect();
        for i in 0..=n {
            let df: f64 = (0..=n).map(|j| d[i][j] * f[j]).sum();
            assert!((df - x[i].cosh()).abs() < 1e-12);
        }
        let v = cheb_barycentric(&x, &f, 0.3);
        assert!((v - 0.3f64.sinh()).abs() < 1e-14);
    }
}
