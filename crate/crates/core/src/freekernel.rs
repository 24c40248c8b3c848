//! Closed-form kernels of the free resolvent `R₀^±(λ⁴) = (Δ² - λ⁴ ∓ i0)^{-1}`
//! in three dimensions, its low-energy series, and the scalar profiles
//!
//! ```text
//! F^±(p) = (e^{±ip} - e^{-p}) / p
//! F̃^±(p) = F^±(p) + p
//! F̄(p)   = (e^{ip} - e^{-ip}) / p + i p²/3
//! ```
//!
//! so that `R₀^±(λ⁴)(x, y) = F^±(λ|x-y|) / (8πλ)`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::quadrature::integrate_adaptive_complex;
use crate::{dist, norm3, Point};

/// Below this argument the profiles are summed from their Taylor series.
///
/// The series has radius of convergence ∞ and 30 terms reach 1e-40 here;
/// above it the direct formula loses at most a couple of digits even for the
/// third derivative.
pub const SERIES_SWITCH: f64 = 0.5;
const SERIES_TERMS: usize = 32;

/// Boundary value `λ⁴ ± i0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn as_f64(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }

    /// `±i`
    fn i(self) -> Complex64 {
        Complex64::new(0.0, self.as_f64())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileKind {
    /// `F^±`
    F,
    /// `F̃^± = F^± + p`, first derivative vanishes at 0.
    Ftilde,
    /// `F̄`, first and second derivatives vanish at 0; sign is ignored.
    Fbar,
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

fn ipow(z: Complex64, n: usize) -> Complex64 {
    let mut acc = Complex64::new(1.0, 0.0);
    for _ in 0..n {
        acc *= z;
    }
    acc
}

/// Taylor coefficient of `p^n` in the profile.
pub fn profile_coefficient(kind: ProfileKind, sign: Sign, n: usize) -> Complex64 {
    let one = Complex64::new(1.0, 0.0);
    let m1 = Complex64::new(-1.0, 0.0);
    let i = Complex64::i();
    let base = match kind {
        ProfileKind::F | ProfileKind::Ftilde => ipow(sign.i(), n + 1) - ipow(m1, n + 1),
        ProfileKind::Fbar => ipow(i, n + 1) - ipow(-i, n + 1),
    } / factorial(n + 1);
    match (kind, n) {
        (ProfileKind::Ftilde, 1) => base + one,
        (ProfileKind::Fbar, 2) => base + i / 3.0,
        _ => base,
    }
}

/// Value and the first three derivatives of a profile at `p ≥ 0`.
pub fn profile_derivatives(kind: ProfileKind, sign: Sign, p: f64) -> [Complex64; 4] {
    if p < SERIES_SWITCH {
        series_derivatives(kind, sign, p)
    } else {
        direct_derivatives(kind, sign, p)
    }
}

fn series_derivatives(kind: ProfileKind, sign: Sign, p: f64) -> [Complex64; 4] {
    let mut out = [Complex64::new(0.0, 0.0); 4];
    // Horner per derivative order, highest power first.
    for (k, slot) in out.iter_mut().enumerate() {
        let mut acc = Complex64::new(0.0, 0.0);
        for n in (k..SERIES_TERMS).rev() {
            let falling = factorial(n) / factorial(n - k);
            acc = acc * p + profile_coefficient(kind, sign, n) * falling;
        }
        *slot = acc;
    }
    out
}

fn direct_derivatives(kind: ProfileKind, sign: Sign, p: f64) -> [Complex64; 4] {
    let i = Complex64::i();
    // A(p) with F = A/p, and its derivatives.
    let a_k = |k: usize| -> Complex64 {
        match kind {
            ProfileKind::F | ProfileKind::Ftilde => {
                let s = sign.i();
                ipow(s, k) * (s * p).exp() - (-1f64).powi(k as i32) * (-p).exp()
            }
            ProfileKind::Fbar => ipow(i, k) * (i * p).exp() - ipow(-i, k) * (-i * p).exp(),
        }
    };
    let a: Vec<Complex64> = (0..4).map(a_k).collect();
    let mut out = [Complex64::new(0.0, 0.0); 4];
    for (k, slot) in out.iter_mut().enumerate() {
        let mut acc = Complex64::new(0.0, 0.0);
        for j in 0..=k {
            let binom = factorial(k) / (factorial(j) * factorial(k - j));
            let inv = (-1f64).powi(j as i32) * factorial(j) / p.powi(j as i32 + 1);
            acc += a[k - j] * (binom * inv);
        }
        *slot = acc;
    }
    match kind {
        ProfileKind::Ftilde => {
            out[0] += p;
            out[1] += 1.0;
        }
        ProfileKind::Fbar => {
            out[0] += i * (p * p / 3.0);
            out[1] += i * (2.0 * p / 3.0);
            out[2] += i * (2.0 / 3.0);
        }
        ProfileKind::F => {}
    }
    out
}

/// Profile value or derivative of order `derivative_order ≤ 3` at `p ≥ 0`.
pub fn profile_value(kind: ProfileKind, sign: Sign, p: f64, derivative_order: usize) -> Result<Complex64> {
    if derivative_order > 3 {
        return Err(Error::Unsupported(format!(
            "profile derivatives are available up to order 3, requested {derivative_order}"
        )));
    }
    if !(p >= 0.0) || !p.is_finite() {
        return Err(invalid(format!("profile argument must be a finite p >= 0, got {p}")));
    }
    Ok(profile_derivatives(kind, sign, p)[derivative_order])
}

/// `F'(p)/p`, finite at 0 when `F'(0) = 0`.
fn first_over_p(kind: ProfileKind, sign: Sign, p: f64) -> Complex64 {
    if p < SERIES_SWITCH {
        let mut acc = Complex64::new(0.0, 0.0);
        for n in (2..SERIES_TERMS).rev() {
            acc = acc * p + profile_coefficient(kind, sign, n) * n as f64;
        }
        // Residual c₁/p term; zero for the kinds this is called with.
        let c1 = profile_coefficient(kind, sign, 1);
        if c1.norm() > 0.0 {
            acc += c1 / p;
        }
        acc
    } else {
        direct_derivatives(kind, sign, p)[1] / p
    }
}

/// `F'(p)/p² - F''(p)/p`, finite at 0 when `F'(0) = F''(0) = 0`.
fn mixed_ratio(kind: ProfileKind, sign: Sign, p: f64) -> Complex64 {
    if p < SERIES_SWITCH {
        let mut acc = Complex64::new(0.0, 0.0);
        for n in (3..SERIES_TERMS).rev() {
            acc = acc * p + profile_coefficient(kind, sign, n) * (n as f64 * (2.0 - n as f64));
        }
        acc
    } else {
        let d = direct_derivatives(kind, sign, p);
        d[1] / (p * p) - d[2] / p
    }
}

/// `R₀^±(λ⁴)` as a function of the separation `r = |x - y|`.
pub fn free_resolvent_radial(lambda: f64, r: f64, sign: Sign) -> Complex64 {
    let p = lambda * r;
    let f = if p < SERIES_SWITCH {
        let mut acc = Complex64::new(0.0, 0.0);
        for n in (0..SERIES_TERMS).rev() {
            acc = acc * p + profile_coefficient(ProfileKind::F, sign, n);
        }
        acc
    } else {
        ((sign.i() * p).exp() - (-p).exp()) / p
    };
    f / (8.0 * PI * lambda)
}

/// Kernel `R₀^±(λ⁴)(x, y)`, finite on the diagonal.
pub fn free_resolvent_kernel(lambda: f64, x: &Point, y: &Point, sign: Sign) -> Result<Complex64> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(invalid(format!("spectral parameter must be positive, got {lambda}")));
    }
    Ok(free_resolvent_radial(lambda, dist(x, y), sign))
}

/// Highest truncation order of the low-energy series.
pub const MAX_SERIES_ORDER: usize = 8;

/// Coefficient `a_k^±` of `λ^k G_k` in the low-energy series; `k = 0` gives
/// `a^±` (the coefficient of `λ^{-1}`), and `k = 4` is the real unit
/// coefficient of the `λ⁴ G₄` term. Returns `None` where no term exists.
pub fn series_coefficient(k: usize, sign: Sign) -> Option<Complex64> {
    let s = sign.as_f64();
    let c = |re: f64, im: f64, fact: usize| Complex64::new(re, im) / (8.0 * PI * factorial(fact));
    match k {
        0 => Some(c(1.0, s, 0)),
        1 => Some(c(1.0, -s, 3)),
        2 => None,
        3 => Some(c(1.0, s, 5)),
        4 => Some(Complex64::new(1.0, 0.0)),
        _ => {
            let num = Complex64::new((-1f64).powi(k as i32 + 1), 0.0) + ipow(sign.i(), k + 2);
            Some(num / (8.0 * PI * factorial(k + 2)))
        }
    }
}

/// Radial kernel `G_k(r)`; `k = 0` is `G₀ = -r/(8π)`, the kernel of `(Δ²)^{-1}`.
pub fn g_kernel(k: usize, r: f64) -> f64 {
    match k {
        0 => -r / (8.0 * PI),
        1 => r * r,
        3 => r.powi(4),
        4 => -r.powi(5) / (4.0 * PI * factorial(6)),
        2 => 0.0,
        _ => r.powi(k as i32 + 1),
    }
}

/// Low-energy series of `R₀^±(λ⁴)(x, y)` truncated after the `λ^N` term.
pub fn free_resolvent_series(lambda: f64, x: &Point, y: &Point, sign: Sign, order: usize) -> Result<Complex64> {
    if order > MAX_SERIES_ORDER {
        return Err(Error::Unsupported(format!(
            "series coefficients are tabulated up to order {MAX_SERIES_ORDER}, requested {order}"
        )));
    }
    if !(lambda > 0.0) {
        return Err(invalid(format!("spectral parameter must be positive, got {lambda}")));
    }
    let r = dist(x, y);
    let mut sum = series_coefficient(0, sign).unwrap() / lambda + g_kernel(0, r);
    for k in 1..=order {
        if let Some(a) = series_coefficient(k, sign) {
            sum += a * lambda.powi(k as i32) * g_kernel(k, r);
        }
    }
    Ok(sum)
}

/// Which Taylor-type expansion of `F(λ|x-y|)` around `y = 0` to check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaylorVariant {
    /// First order with an integral remainder in `F'`.
    I,
    /// Second order; needs `F'(0) = 0`.
    Ii,
    /// Third order; needs `F'(0) = F''(0) = 0`.
    Iii,
}

fn unit(x: &Point) -> Point {
    let n = norm3(x);
    if n == 0.0 {
        [0.0; 3]
    } else {
        [x[0] / n, x[1] / n, x[2] / n]
    }
}

fn dot(a: &Point, b: &Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// `|LHS - RHS|` for the Taylor identity of `F(λ|x-y|)` about `y = 0`, with the
/// θ-remainder integrated adaptively.
pub fn verify_taylor_identity(
    kind: ProfileKind,
    sign: Sign,
    lambda: f64,
    x: &Point,
    y: &Point,
    variant: TaylorVariant,
) -> Result<f64> {
    match (variant, kind) {
        (TaylorVariant::Ii, ProfileKind::F) => {
            return Err(invalid("second-order identity needs F'(0) = 0 (use Ftilde or Fbar)"))
        }
        (TaylorVariant::Iii, ProfileKind::F | ProfileKind::Ftilde) => {
            return Err(invalid("third-order identity needs F'(0) = F''(0) = 0 (use Fbar)"))
        }
        _ => {}
    }
    if !(lambda > 0.0) {
        return Err(invalid("spectral parameter must be positive"));
    }
    let d = |p: f64| profile_derivatives(kind, sign, p);
    let xy = [x[0] - y[0], x[1] - y[1], x[2] - y[2]];
    let lhs = d(lambda * norm3(&xy))[0];
    let ny = norm3(y);
    let rx = norm3(x);
    let fx = d(lambda * rx);
    if ny == 0.0 {
        return Ok((lhs - fx[0]).norm());
    }
    let w = unit(x);
    let yw = dot(y, &w);
    // cos α for the angle between y and x - θy.
    let geometry = |theta: f64| -> (f64, f64) {
        let z = [x[0] - theta * y[0], x[1] - theta * y[1], x[2] - theta * y[2]];
        let cos = dot(y, &unit(&z)) / ny;
        (norm3(&z), cos)
    };
    let tol = 1e-14;
    let rhs = match variant {
        TaylorVariant::I => {
            let (int, _, _) = integrate_adaptive_complex(
                |theta| {
                    let (r, cos) = geometry(theta);
                    d(lambda * r)[1] * cos
                },
                0.0,
                1.0,
                tol,
                tol,
                4000,
            );
            fx[0] - lambda * ny * int
        }
        TaylorVariant::Ii => {
            let (int, _, _) = integrate_adaptive_complex(
                |theta| {
                    let (r, cos) = geometry(theta);
                    let sin2 = 1.0 - cos * cos;
                    let p = lambda * r;
                    (first_over_p(kind, sign, p) * sin2 + d(p)[2] * (cos * cos)) * (1.0 - theta)
                },
                0.0,
                1.0,
                tol,
                tol,
                4000,
            );
            fx[0] - fx[1] * (lambda * yw) + int * (lambda * lambda * ny * ny)
        }
        TaylorVariant::Iii => {
            let (int, _, _) = integrate_adaptive_complex(
                |theta| {
                    let (r, cos) = geometry(theta);
                    let sin2 = 1.0 - cos * cos;
                    let p = lambda * r;
                    (mixed_ratio(kind, sign, p) * (3.0 * cos * sin2) - d(p)[3] * cos.powi(3)) * (1.0 - theta).powi(2)
                },
                0.0,
                1.0,
                tol,
                tol,
                4000,
            );
            let quad = (ny * ny - yw * yw) * first_over_p(kind, sign, lambda * rx) + fx[2] * (yw * yw);
            fx[0] - fx[1] * (lambda * yw) + quad * (lambda * lambda / 2.0) + int * (lambda.powi(3) * ny.powi(3) / 2.0)
        }
    };
    Ok((lhs - rhs).norm())
}
