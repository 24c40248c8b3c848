//! Tensor-product Gauss–Legendre grids on `[-R, R]³` and one-dimensional
//! quadrature helpers.
//!
//! Grid nodes are enumerated lexicographically, x-axis slowest, so operator
//! indices are reproducible between runs.

use std::collections::BinaryHeap;

use num_complex::Complex64;

use crate::error::{invalid, Result};
use crate::Point;

/// Gauss–Legendre nodes and weights on `[-1, 1]`, nodes ascending.
///
/// Newton iteration on `P_n` from the Chebyshev-like initial guesses; the
/// iteration converges to machine precision in a handful of steps for every
/// `n` used here.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, z);
        if d.is_finite() {
            dp = d;
        }
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// Gauss–Legendre rule mapped to `[a, b]`.
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    (x.iter().map(|&s| mid + half * s).collect(), w.iter().map(|&s| half * s).collect())
}

/// Truncated tensor grid on the box `[-radius, radius]³`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureGrid {
    pub nodes: Vec<Point>,
    pub weights: Vec<f64>,
    pub radius: f64,
    pub order: usize,
}

impl QuadratureGrid {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `√w_j`, the factor relating grid values to the symmetrized basis.
    pub fn sqrt_weights(&self) -> Vec<f64> {
        self.weights.iter().map(|w| w.sqrt()).collect()
    }

    /// Quadrature of a real function sampled at the nodes.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        values.iter().zip(&self.weights).map(|(f, w)| f * w).sum()
    }

    pub fn sample<F: Fn(&Point) -> f64>(&self, f: F) -> Vec<f64> {
        self.nodes.iter().map(f).collect()
    }
}

/// Tensor Gauss–Legendre grid with `order` nodes per axis on `[-radius, radius]³`.
pub fn build_box_grid(radius: f64, order: usize) -> Result<QuadratureGrid> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(invalid(format!("grid radius must be positive, got {radius}")));
    }
    if order < 2 {
        return Err(invalid(format!("grid order must be at least 2, got {order}")));
    }
    let (x, w) = gauss_legendre_on(order, -radius, radius);
    let mut nodes = Vec::with_capacity(order.pow(3));
    let mut weights = Vec::with_capacity(order.pow(3));
    for i in 0..order {
        for j in 0..order {
            for k in 0..order {
                nodes.push([x[i], x[j], x[k]]);
                weights.push(w[i] * w[j] * w[k]);
            }
        }
    }
    Ok(QuadratureGrid { nodes, weights, radius, order })
}

/// `Σ_j conj(f_j) g_j w_j`, conjugate-linear in the first slot.
pub fn inner_product(f: &[Complex64], g: &[Complex64], grid: &QuadratureGrid) -> Result<Complex64> {
    if f.len() != grid.len() || g.len() != grid.len() {
        return Err(invalid(format!(
            "grid functions of length {} and {} on a grid of {} nodes",
            f.len(),
            g.len(),
            grid.len()
        )));
    }
    Ok(f.iter().zip(g).zip(&grid.weights).map(|((a, b), w)| a.conj() * b * *w).sum())
}

// Gauss–Kronrod 7/15 abscissae and weights (QUADPACK qk15).
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] =
    [0.129_484_966_168_869_7, 0.279_705_391_489_276_7, 0.381_830_050_505_118_9, 0.417_959_183_673_469_4];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        kronrod += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    ((kronrod * h), ((kronrod - gauss) * h).abs())
}

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// Result of a one-dimensional adaptive integration.
#[derive(Debug, Clone, Copy)]
pub struct Integral {
    pub value: f64,
    pub error: f64,
    pub converged: bool,
}

/// Globally adaptive Gauss–Kronrod 7/15 quadrature on `[a, b]`.
///
/// Bisects the segment with the largest error estimate until the summed
/// estimate drops below `max(abs_tol, rel_tol·|I|)` or `max_segments` is hit.
pub fn integrate_adaptive<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
    max_segments: usize,
) -> Integral {
    if a == b {
        return Integral { value: 0.0, error: 0.0, converged: true };
    }
    let (v, e) = gk15(&f, a, b);
    let mut heap = BinaryHeap::new();
    heap.push(Segment { a, b, value: v, error: e });
    let mut total = v;
    let mut err = e;
    let mut segments = 1;
    while err > abs_tol.max(rel_tol * total.abs()) {
        if segments >= max_segments {
            return Integral { value: total, error: err, converged: false };
        }
        let worst = heap.pop().expect("segment heap is never empty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            heap.push(worst);
            return Integral { value: total, error: err, converged: false };
        }
        let (v1, e1) = gk15(&f, worst.a, mid);
        let (v2, e2) = gk15(&f, mid, worst.b);
        total += v1 + v2 - worst.value;
        err += e1 + e2 - worst.error;
        heap.push(Segment { a: worst.a, b: mid, value: v1, error: e1 });
        heap.push(Segment { a: mid, b: worst.b, value: v2, error: e2 });
        segments += 1;
    }
    // Re-sum to shed the drift of the running updates.
    let value: f64 = heap.iter().map(|s| s.value).sum();
    let error: f64 = heap.iter().map(|s| s.error).sum();
    Integral { value, error, converged: true }
}

/// Complex-valued variant of [`integrate_adaptive`]; real and imaginary parts
/// are integrated independently.
pub fn integrate_adaptive_complex<F: Fn(f64) -> Complex64>(
    f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
    max_segments: usize,
) -> (Complex64, f64, bool) {
    let re = integrate_adaptive(|x| f(x).re, a, b, abs_tol, rel_tol, max_segments);
    let im = integrate_adaptive(|x| f(x).im, a, b, abs_tol, rel_tol, max_segments);
    (Complex64::new(re.value, im.value), re.error.hypot(im.error), re.converged && im.converged)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn erf(x: f64) -> f64 {
        // Independent route: Gauss–Kronrod quadrature of the defining integral.
        let i = integrate_adaptive(|s| (-s * s).exp(), 0.0, x, 1e-16, 1e-15, 2000);
        2.0 / std::f64::consts::PI.sqrt() * i.value
    }

    #[test]
    fn legendre_rule_is_exact_for_polynomials() {
        for n in [2usize, 5, 12, 16] {
            let (x, w) = gauss_legendre(n);
            for deg in 0..(2 * n) {
                let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
                let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
                assert!((q - exact).abs() <= 1e-13 * exact.abs().max(1.0), "n={n} deg={deg}");
            }
        }
    }

    #[test]
    fn small_grid_has_eight_nodes_and_volume_eight() {
        let g = build_box_grid(1.0, 2).unwrap();
        assert_eq!(g.len(), 8);
        let s: f64 = g.weights.iter().sum();
        assert!((s - 8.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_grid_arguments_are_rejected() {
        assert!(build_box_grid(1.0, 0).is_err());
        assert!(build_box_grid(1.0, 1).is_err());
        assert!(build_box_grid(0.0, 4).is_err());
        assert!(build_box_grid(-2.0, 4).is_err());
    }

    #[test]
    fn grid_invariants_hold() {
        for (r, n) in [(1.0, 3), (8.0, 12), (2.5, 7)] {
            let g = build_box_grid(r, n).unwrap();
            assert_eq!(g.len(), n * n * n);
            assert!(g.weights.iter().all(|&w| w > 0.0));
            let s: f64 = g.weights.iter().sum();
            let vol = (2.0 * r).powi(3);
            assert!(((s - vol) / vol).abs() < 1e-12);
            assert!(g.nodes.iter().all(|p| p.iter().all(|c| c.abs() <= r)));
        }
    }

    #[test]
    fn nodes_are_lexicographic() {
        let g = build_box_grid(1.0, 3).unwrap();
        for w in g.nodes.windows(2) {
            assert!(w[0] < w[1], "{:?} !< {:?}", w[0], w[1]);
        }
    }

    #[test]
    fn monomials_per_axis_integrate_exactly() {
        let n = 6;
        let g = build_box_grid(1.5, n).unwrap();
        for (p, q, s) in [(0, 0, 0), (2, 4, 6), (11, 0, 10), (4, 8, 2)] {
            let vals = g.sample(|x| x[0].powi(p) * x[1].powi(q) * x[2].powi(s));
            let num = g.integrate(&vals);
            let one = |k: i32| {
                if k % 2 == 1 {
                    0.0
                } else {
                    2.0 * 1.5f64.powi(k + 1) / (k as f64 + 1.0)
                }
            };
            let exact = one(p) * one(q) * one(s);
            assert!((num - exact).abs() <= 1e-12 * exact.abs().max(1.0), "{p} {q} {s}: {num} vs {exact}");
        }
    }

    #[test]
    fn gaussian_over_box_matches_erf_product() {
        // Twelve nodes per axis leave a 5e-1 error on this box; forty resolve it.
        let g = build_box_grid(6.0, 40).unwrap();
        let num = g.integrate(&g.sample(|x| (-(x[0] * x[0] + x[1] * x[1] + x[2] * x[2])).exp()));
        let exact = (std::f64::consts::PI.sqrt() * erf(6.0)).powi(3);
        assert!((num - exact).abs() < 1e-8, "{num} vs {exact}");
    }

    #[test]
    fn gaussian_integral_converges_under_refinement() {
        let f = |x: &Point| (-(x[0] * x[0] + x[1] * x[1] + x[2] * x[2])).exp();
        for n in [24usize, 28] {
            let a = build_box_grid(4.0, n).unwrap();
            let b = build_box_grid(4.0, 2 * n).unwrap();
            let ia = a.integrate(&a.sample(f));
            let ib = b.integrate(&b.sample(f));
            assert!((ia - ib).abs() < 1e-10, "order {n}: {ia} vs {ib}");
        }
    }

    #[test]
    fn inner_product_of_ones_is_volume() {
        let g = build_box_grid(1.0, 4).unwrap();
        let one = vec![Complex64::new(1.0, 0.0); g.len()];
        let ip = inner_product(&one, &one, &g).unwrap();
        assert!((ip.re - 8.0).abs() < 1e-12 && ip.im.abs() < 1e-15);
    }

    #[test]
    fn inner_product_length_mismatch() {
        let g = build_box_grid(1.0, 2).unwrap();
        let f = vec![Complex64::new(1.0, 0.0); 7];
        assert!(inner_product(&f, &f, &g).is_err());
    }

    #[test]
    fn adaptive_rule_handles_oscillation() {
        // ∫_0^{10π} sin²(x) dx = 5π
        let r = integrate_adaptive(|x| x.sin().powi(2), 0.0, 10.0 * std::f64::consts::PI, 1e-13, 1e-13, 500);
        assert!(r.converged);
        assert!((r.value - 5.0 * std::f64::consts::PI).abs() < 1e-11);
    }
}
