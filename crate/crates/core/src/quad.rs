//! Quadrature primitives shared by the analytic and fixed-point modules.
//!
//! Everything operates on uniform grids over `[0, 1]`. Scalar integrals of
//! smooth integrands use composite Simpson; cumulative integrals (CDFs,
//! reverse cumulatives) use the per-cell quadratic rule that is consistent
//! with Simpson; integrands that involve the tabulated CDF raised to a power
//! are integrated cell-by-cell with Gauss-Legendre nodes so they are exact
//! for the piecewise-linear CDF model that the samplers draw from.

use std::sync::{Mutex, OnceLock};

/// Uniform grid of `m` points on `[0, 1]`, `m` odd and at least 3.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grid {
    m: usize,
}

impl Grid {
    pub fn new(m: usize) -> crate::Result<Self> {
        if m < 3 || m.is_multiple_of(2) {
            return Err(crate::Error::InvalidParameter(format!(
                "grid size must be odd and >= 3, got {m}"
            )));
        }
        Ok(Self { m })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Cell width.
    #[inline]
    pub fn h(&self) -> f64 {
        1.0 / (self.m - 1) as f64
    }

    /// The i-th grid point; the last point is exactly 1.
    #[inline]
    pub fn point(&self, i: usize) -> f64 {
        i as f64 / (self.m - 1) as f64
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.m).map(|i| self.point(i))
    }

    /// Evaluate `f` on every grid point.
    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.points().map(f).collect()
    }
}

/// Composite Simpson over uniformly spaced `values` (odd length >= 3).
pub fn simpson(values: &[f64], h: f64) -> f64 {
    debug_assert!(values.len() >= 3 && values.len() % 2 == 1);
    let mut acc = values[0] + values[values.len() - 1];
    for (i, v) in values.iter().enumerate().skip(1).take(values.len() - 2) {
        acc += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
    }
    acc * h / 3.0
}

/// Per-cell increments of the cumulative integral of `values`. Interior
/// cells use the symmetric 4-point cubic rule (exact for cubics, O(h^4)
/// globally); end cells fall back to the one-sided quadratic. The layout is
/// mirror-symmetric, so reflected data yields exactly reflected increments.
/// Increments are clamped at zero so cumulative sums of nonnegative data
/// stay monotone.
pub fn cumulative_increments(values: &[f64], h: f64) -> Vec<f64> {
    let n = values.len();
    debug_assert!(n >= 3);
    let mut inc = Vec::with_capacity(n - 1);
    for i in 0..n - 1 {
        // Evaluation order chosen so reflected input gives bit-identical
        // reflected increments.
        let raw = if i == 0 {
            h / 12.0 * (5.0 * values[0] + 8.0 * values[1] - values[2])
        } else if i == n - 2 {
            h / 12.0 * (5.0 * values[i + 1] + 8.0 * values[i] - values[i - 1])
        } else {
            h / 24.0 * (13.0 * (values[i] + values[i + 1]) - (values[i - 1] + values[i + 2]))
        };
        inc.push(raw.max(0.0));
    }
    inc
}

/// Trapezoid rule over uniformly spaced `values`.
pub fn trapezoid(values: &[f64], h: f64) -> f64 {
    debug_assert!(values.len() >= 2);
    let inner: f64 = values[1..values.len() - 1].iter().sum();
    h * (0.5 * (values[0] + values[values.len() - 1]) + inner)
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`, cached per order.
pub fn gauss_legendre(n: usize) -> &'static (Vec<f64>, Vec<f64>) {
    type Table = &'static (Vec<f64>, Vec<f64>);
    static CACHE: OnceLock<Mutex<Vec<Option<Table>>>> = OnceLock::new();
    assert!((1..=64).contains(&n), "Gauss-Legendre order out of range: {n}");
    let cache = CACHE.get_or_init(|| Mutex::new(vec![None; 65]));
    let mut guard = cache.lock().unwrap();
    if let Some(entry) = guard[n] {
        return entry;
    }
    let entry: &'static _ = Box::leak(Box::new(compute_gauss_legendre(n)));
    guard[n] = Some(entry);
    entry
}

/// Newton iteration on Legendre polynomials; standard construction.
fn compute_gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for k in 0..n.div_ceil(2) {
        // Chebyshev-based initial guess for the k-th root.
        let mut x = (std::f64::consts::PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let step = p / d;
            x -= step;
            if step.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[k] = -x;
        nodes[n - 1 - k] = x;
        weights[k] = w;
        weights[n - 1 - k] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Integrate `f` over `[a, b]` with an `n`-point Gauss-Legendre rule
/// (exact for polynomials of degree <= 2n-1).
pub fn gauss_integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let (nodes, weights) = gauss_legendre(n);
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut acc = 0.0;
    for (x, w) in nodes.iter().zip(weights) {
        acc += w * f(mid + half * x);
    }
    acc * half
}
