//! One-dimensional polynomial bases and Gauss quadrature on the reference
//! interval [0,1].
//!
//! Two basis families are provided:
//! - `LEGENDRE_L2`: L2-orthonormal shifted Legendre polynomials (field
//!   variables and broken test spaces),
//! - `LOBATTO_H1`: the two linear vertex functions plus integrated-Legendre
//!   bubbles vanishing at both endpoints (trace closures).

use once_cell::sync::Lazy;
use std::collections::HashMap;
use std::sync::RwLock;

/// Basis family selector, matching the two kinds used by the element spaces.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BasisKind {
    LegendreL2,
    LobattoH1,
}

/// Gauss-Legendre rule on [0,1] with `n` points; exact for degree 2n-1.
/// The weights sum to 1 (unit reference measure).
#[derive(Clone, Debug)]
pub struct GaussRule {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

static GAUSS_CACHE: Lazy<RwLock<HashMap<usize, GaussRule>>> =
    Lazy::new(|| RwLock::new(HashMap::new()));

/// Returns the cached n-point Gauss-Legendre rule on [0,1].
pub fn gauss_rule(n: usize) -> GaussRule {
    assert!(n >= 1, "quadrature rule needs at least one point");
    if let Some(r) = GAUSS_CACHE.read().unwrap().get(&n) {
        return r.clone();
    }
    let r = compute_gauss(n);
    GAUSS_CACHE.write().unwrap().insert(n, r.clone());
    r
}

/// Newton iteration on P_n over [-1,1], then mapped to [0,1].
fn compute_gauss(n: usize) -> GaussRule {
    let mut points = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        // Chebyshev initial guess
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_deriv(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_with_deriv(n, x);
        points[n - 1 - i] = 0.5 * (x + 1.0);
        weights[n - 1 - i] = 1.0 / ((1.0 - x * x) * dp * dp);
    }
    GaussRule { points, weights }
}

/// (P_n(t), P_n'(t)) on [-1,1].
fn legendre_with_deriv(n: usize, t: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = t;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 1..n {
        let p2 = ((2 * k + 1) as f64 * t * p1 - k as f64 * p0) / (k + 1) as f64;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (t * p1 - p0) / (t * t - 1.0);
    (p1, dp)
}

/// Values of the shifted Legendre polynomials P_0..P_deg at x in [0,1],
/// and their x-derivatives.
pub fn shifted_legendre_all(deg: usize, x: f64) -> (Vec<f64>, Vec<f64>) {
    let t = 2.0 * x - 1.0;
    let mut vals = vec![0.0; deg + 1];
    let mut ders = vec![0.0; deg + 1];
    vals[0] = 1.0;
    ders[0] = 0.0;
    if deg >= 1 {
        vals[1] = t;
        ders[1] = 2.0; // d/dx = 2 d/dt
    }
    for k in 1..deg {
        vals[k + 1] = ((2 * k + 1) as f64 * t * vals[k] - k as f64 * vals[k - 1]) / (k + 1) as f64;
        // P'_{k+1}(t) = P'_{k-1}(t) + (2k+1) P_k(t); ders store d/dx = 2 d/dt
        ders[k + 1] = ders[k - 1] + 2.0 * (2 * k + 1) as f64 * vals[k];
    }
    (vals, ders)
}

/// L2-orthonormal Legendre family on [0,1]: phi_k = sqrt(2k+1) P_k(2x-1),
/// with count `n` (degrees 0..n-1). Returns values and derivatives at `x`.
pub fn orthonormal_legendre(n: usize, x: f64) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let (mut v, mut d) = shifted_legendre_all(n - 1, x);
    for k in 0..n {
        let s = ((2 * k + 1) as f64).sqrt();
        v[k] *= s;
        d[k] *= s;
    }
    (v, d)
}

/// Lobatto H1 family of order p on [0,1]: p+1 functions.
/// Index 0: 1-x, index 1: x, index k (2..=p): bubble
/// (P_k - P_{k-2})(2x-1) / sqrt(2(2k-1)), vanishing at both endpoints.
pub fn lobatto_h1(p: usize, x: f64) -> (Vec<f64>, Vec<f64>) {
    let mut v = vec![0.0; p + 1];
    let mut d = vec![0.0; p + 1];
    v[0] = 1.0 - x;
    d[0] = -1.0;
    if p >= 1 {
        v[1] = x;
        d[1] = 1.0;
    }
    if p >= 2 {
        let (pv, pd) = shifted_legendre_all(p, x);
        for k in 2..=p {
            let s = 1.0 / (2.0 * (2.0 * k as f64 - 1.0)).sqrt();
            v[k] = (pv[k] - pv[k - 2]) * s;
            d[k] = (pd[k] - pd[k - 2]) * s;
        }
    }
    (v, d)
}

/// Evaluates a family at a point.
pub fn eval_basis(kind: BasisKind, count: usize, x: f64) -> (Vec<f64>, Vec<f64>) {
    match kind {
        BasisKind::LegendreL2 => orthonormal_legendre(count, x),
        // order p has p+1 functions: count = p+1
        BasisKind::LobattoH1 => lobatto_h1(count - 1, x),
    }
}

/// Value/derivative tables of a 1D family at a set of points.
/// `values[j][q]` is function j at point q.
#[derive(Clone, Debug)]
pub struct BasisTable {
    pub kind: BasisKind,
    pub count: usize,
    pub values: Vec<Vec<f64>>,
    pub derivs: Vec<Vec<f64>>,
}

impl BasisTable {
    pub fn tabulate(kind: BasisKind, count: usize, points: &[f64]) -> BasisTable {
        let mut values = vec![vec![0.0; points.len()]; count];
        let mut derivs = vec![vec![0.0; points.len()]; count];
        for (q, &x) in points.iter().enumerate() {
            let (v, d) = eval_basis(kind, count, x);
            for j in 0..count {
                values[j][q] = v[j];
                derivs[j][q] = d[j];
            }
        }
        BasisTable { kind, count, values, derivs }
    }
}

/// 1D Gram matrix of a family on [0,1] under the unit-measure Gauss rule.
pub fn gram_1d(kind: BasisKind, count: usize) -> nalgebra::DMatrix<f64> {
    let deg = count; // integrand degree <= 2*count, rule n = count+1 is exact
    let rule = gauss_rule(deg + 1);
    let tab = BasisTable::tabulate(kind, count, &rule.points);
    let mut g = nalgebra::DMatrix::zeros(count, count);
    for a in 0..count {
        for b in 0..count {
            let mut s = 0.0;
            for q in 0..rule.points.len() {
                s += rule.weights[q] * tab.values[a][q] * tab.values[b][q];
            }
            g[(a, b)] = s;
        }
    }
    g
}
