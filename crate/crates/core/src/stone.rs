//! Stone's formula for the wave propagators of `H = Δ² + V`.
//!
//! With `D(λ) = Im R^+(λ⁴)(x, y)` (so `R^+ - R^- = 2i D` for real `V`),
//!
//! ```text
//! H^{α/2} e^{-it√H}(x, y) = (4/π) ∫₀^∞ e^{-itλ²} λ^{3+2α} D(λ) dλ,
//! cos(t√H)      = Re[α = 0],
//! sin(t√H)/√H   = -Im[α = -1].
//! ```
//!
//! The λ-integral is split by the Littlewood–Paley partition
//! `Σ_N φ₀(2^{-N}λ) = 1`; every panel is integrated with composite 16-point
//! Gauss–Legendre sized to the phase `tλ² + Ψλ` it carries, and panels are
//! summed in ascending `N`.

use std::f64::consts::PI;
use std::sync::OnceLock;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::birman::{factor_m, SpectralAssembly};
use crate::error::{invalid, Result};
use crate::freekernel::{free_resolvent_radial, Sign};
use crate::quadrature::{integrate_adaptive, integrate_adaptive_complex};
use crate::resonance::Classification;
use crate::{dist, norm3, Point};

/// `e^{-1/x}` glued into the smooth step `ψ(x) = f(x)/(f(x) + f(1-x))`.
fn smooth_step(x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let a = (-1.0 / x).exp();
    let b = (-1.0 / (1.0 - x)).exp();
    a / (a + b)
}

/// Even `C^∞` cutoff: 1 on `|s| ≤ 1/2`, 0 on `|s| ≥ 1`.
pub fn phi(s: f64) -> f64 {
    smooth_step(2.0 * (1.0 - s.abs()))
}

/// `φ₀(s) = φ(s) - φ(2s)`, supported in `1/4 ≤ |s| ≤ 1`.
pub fn phi0(s: f64) -> f64 {
    phi(s) - phi(2.0 * s)
}

/// Low-energy cutoff `χ`: 1 on `|λ| ≤ λ₀`, 0 on `|λ| ≥ 2λ₀`, with the quintic
/// `C²` transition `1 - (10x³ - 15x⁴ + 6x⁵)`.
pub fn chi(lambda: f64, lambda0: f64) -> f64 {
    let x = (lambda.abs() - lambda0) / lambda0;
    if x <= 0.0 {
        1.0
    } else if x >= 1.0 {
        0.0
    } else {
        1.0 - x * x * x * (10.0 - 15.0 * x + 6.0 * x * x)
    }
}

/// `N₀` for `Ψ = 0`: below every panel index in use.
pub const N0_SENTINEL: i32 = i32::MIN / 4;

/// `N₀ = ⌊(1/3) log₂(Ψ/|t|)⌋`.
pub fn n0_index(psi: f64, t: f64) -> Result<i32> {
    if t == 0.0 || !t.is_finite() {
        return Err(invalid("the envelope needs t != 0"));
    }
    if !(psi >= 0.0) {
        return Err(invalid(format!("psi must be non-negative, got {psi}")));
    }
    if psi == 0.0 {
        return Ok(N0_SENTINEL);
    }
    Ok(((psi / t.abs()).log2() / 3.0).floor() as i32)
}

/// `Θ_{N₀,N}(t)`: `(1+|t|4^N)^{-3/2}` if `|N - N₀| ≤ 2`, else `(1+|t|4^N)^{-2}`.
pub fn theta_envelope(n: i32, n0: i32, t: f64) -> Result<f64> {
    if t == 0.0 || !t.is_finite() {
        return Err(invalid("the envelope needs t != 0"));
    }
    let base = 1.0 + t.abs() * 4f64.powi(n);
    let near = (n as i64 - n0 as i64).abs() <= 2;
    Ok(if near { base.powf(-1.5) } else { base.powi(-2) })
}

/// Per-panel node allocation and tail tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureBudget {
    pub n_min: usize,
    pub nodes_per_cycle: f64,
    pub n_cap: usize,
    pub tail_eps: f64,
}

impl Default for QuadratureBudget {
    fn default() -> Self {
        Self { n_min: 96, nodes_per_cycle: 8.0, n_cap: 4096, tail_eps: 1e-8 }
    }
}

impl QuadratureBudget {
    pub fn validate(&self) -> Result<()> {
        if self.n_min < 1 || self.n_cap < self.n_min {
            return Err(invalid("need 1 <= n_min <= n_cap"));
        }
        if !(self.nodes_per_cycle > 0.0) || !(self.tail_eps > 0.0 && self.tail_eps < 1.0) {
            return Err(invalid("need nodes_per_cycle > 0 and tail_eps in (0, 1)"));
        }
        Ok(())
    }
}

/// One Littlewood–Paley panel: `φ₀(2^{-N}λ)` on `[2^{N-2}, 2^N]`, or for the
/// low-pass base panel `φ(2^{-N}λ)` on `[0, 2^N]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DyadicPanel {
    pub n: i32,
    pub lower: f64,
    pub upper: f64,
    pub nodes: usize,
    pub base: bool,
    /// The allocation asked for more than `n_cap` nodes.
    pub capped: bool,
}

impl DyadicPanel {
    pub fn new(n: i32, base: bool, t: f64, psi: f64, budget: &QuadratureBudget) -> Self {
        let upper = 2f64.powi(n);
        let lower = if base { 0.0 } else { upper / 4.0 };
        // Phase swept by e^{-itλ²} e^{±iλΨ} across the panel.
        let phase = t.abs() * (upper * upper - lower * lower) + psi * (upper - lower);
        let want = (budget.nodes_per_cycle * phase / (2.0 * PI)).ceil() as usize;
        let want = want.max(budget.n_min);
        let capped = want > budget.n_cap;
        let nodes = want.min(budget.n_cap).div_ceil(GL_ORDER) * GL_ORDER;
        Self { n, lower, upper, nodes, base, capped }
    }

    pub fn cutoff(&self, lambda: f64) -> f64 {
        let s = lambda / self.upper;
        if self.base {
            phi(s)
        } else {
            phi0(s)
        }
    }
}

const GL_ORDER: usize = 16;

fn gl16() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| crate::quadrature::gauss_legendre(GL_ORDER))
}

/// The base panel at `n_range.start()` followed by ordinary panels; their
/// cutoffs sum to `φ(2^{-N_max}λ)`, which is 1 on `[0, 2^{N_max-1}]`.
pub fn build_panels(
    t: f64,
    psi: f64,
    n_range: std::ops::RangeInclusive<i32>,
    budget: &QuadratureBudget,
) -> Result<Vec<DyadicPanel>> {
    if t == 0.0 || !t.is_finite() {
        return Err(invalid("panels need t != 0"));
    }
    if n_range.is_empty() {
        return Err(invalid("empty panel index range"));
    }
    let lo = *n_range.start();
    Ok(n_range.map(|n| DyadicPanel::new(n, n == lo, t, psi, budget)).collect())
}

/// `∫ cutoff(λ) e^{-itλ²} λ^{3+2α} D(λ) dλ` over one panel.
pub fn panel_integral<D: Fn(f64) -> f64>(panel: &DyadicPanel, t: f64, alpha: f64, d: &D) -> Complex64 {
    let (x, w) = gl16();
    let segments = panel.nodes / GL_ORDER;
    let h = (panel.upper - panel.lower) / segments as f64;
    let mut sum = Complex64::new(0.0, 0.0);
    for s in 0..segments {
        let a = panel.lower + s as f64 * h;
        for k in 0..GL_ORDER {
            let lambda = a + 0.5 * h * (x[k] + 1.0);
            let c = panel.cutoff(lambda);
            if c == 0.0 {
                continue;
            }
            let amp = c * lambda.powf(3.0 + 2.0 * alpha) * d(lambda) * (0.5 * h * w[k]);
            sum += Complex64::from_polar(amp, -t * lambda * lambda);
        }
    }
    sum
}

/// `max_N |I_N| / (2^{(3+2α)N} Θ_{N₀,N}(t))` over the free panels `N ∈ n_range`
/// at separation `r`: the smallest constant for which the envelope bounds
/// every panel. Panels beyond the node cap are skipped.
pub fn envelope_constant(
    t: f64,
    alpha: f64,
    r: f64,
    n_range: std::ops::RangeInclusive<i32>,
    budget: &QuadratureBudget,
) -> Result<f64> {
    let n0 = n0_index(r, t)?;
    let d = |l: f64| free_spectral_density(l, r);
    let mut c = 0.0f64;
    for n in n_range {
        let panel = DyadicPanel::new(n, false, t, r, budget);
        if panel.capped {
            continue;
        }
        let i = panel_integral(&panel, t, alpha, &d).norm();
        let scale = 2f64.powf((3.0 + 2.0 * alpha) * n as f64) * theta_envelope(n, n0, t)?;
        c = c.max(i / scale);
    }
    Ok(c)
}

/// A Stone integral with its error estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoneValue {
    pub value: Complex64,
    pub est_error: f64,
    /// The tail tolerance was not reached within the budget.
    pub warn: bool,
    pub panels: usize,
}

const MAX_PANELS: i32 = 80;

/// `(4/π) ∫₀^∞ e^{-itλ²} λ^{3+2α} D(λ) dλ` by dyadic panels.
///
/// `psi` is the spatial frequency of `D` (e.g. `|x - y|`); panels are added
/// until one lies past both the main mass near `|t|^{-1/2}` and the
/// stationary point `Ψ/(2|t|)` and the geometric tail extrapolated from the
/// last two panels is below `tail_eps` of the running sum. Panels reaching
/// beyond `lambda_max`, or needing more than `n_cap` nodes, are not
/// evaluated; stopping for either reason before convergence sets `warn`.
/// `floor` is an absolute tolerance on the final value, for integrals that
/// are a small part of a larger kernel.
pub fn stone_integral<D: Fn(f64) -> f64>(
    t: f64,
    alpha: f64,
    psi: f64,
    d: D,
    budget: &QuadratureBudget,
    lambda_max: f64,
    floor: f64,
) -> Result<StoneValue> {
    if t == 0.0 || !t.is_finite() {
        return Err(invalid("propagators are evaluated at t != 0"));
    }
    budget.validate()?;
    let s = t.abs();
    let n_lo = (0.25 / s.sqrt()).log2().floor() as i32;
    let lambda_s = psi / (2.0 * s);
    let base = DyadicPanel::new(n_lo, true, t, psi, budget);
    let mut sum = panel_integral(&base, t, alpha, &d);
    let mut prev = sum.norm();
    let mut panels = 1;
    let mut est_error = None;
    for n in n_lo + 1..=n_lo + MAX_PANELS {
        let panel = DyadicPanel::new(n, false, t, psi, budget);
        if panel.upper > lambda_max {
            // Stopping at a panel edge keeps the truncation smooth: the
            // partial sum of cutoffs is φ(2^{-N}λ).
            break;
        }
        if panel.capped {
            // An unresolved panel would only add noise.
            break;
        }
        let i = panel_integral(&panel, t, alpha, &d);
        panels += 1;
        sum += i;
        let past_mass = panel.lower > 2.0 * lambda_s.max(1.0 / s.sqrt());
        let q = i.norm() / prev;
        if past_mass && q < 0.5 {
            // Geometric tail with the observed decay ratio.
            let tail = i.norm() * q / (1.0 - q);
            if tail <= (budget.tail_eps * sum.norm()).max(floor * PI / 4.0) {
                est_error = Some(tail);
                break;
            }
        }
        prev = i.norm();
    }
    let warn = est_error.is_none();
    let est_error = est_error.unwrap_or(prev);
    let scale = 4.0 / PI;
    Ok(StoneValue { value: sum * scale, est_error: est_error * scale, warn, panels })
}

/// Which propagator a kernel sample belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Mode {
    /// `cos(t√H)`.
    Cosine,
    /// `sin(t√H)/√H`.
    SineOverSqrt,
    /// `H^{α/2} e^{-it√H}`, `-3/2 < α ≤ 0`.
    Halfwave { alpha: f64 },
}

impl Mode {
    pub fn alpha(self) -> f64 {
        match self {
            Mode::Cosine => 0.0,
            Mode::SineOverSqrt => -1.0,
            Mode::Halfwave { alpha } => alpha,
        }
    }

    pub fn validate(self) -> Result<()> {
        let a = self.alpha();
        if let Mode::Halfwave { .. } = self {
            if !(a > -1.5 && a <= 0.0) {
                return Err(invalid(format!("halfwave exponent must lie in (-3/2, 0], got {a}")));
            }
        }
        Ok(())
    }

    /// Map the halfwave integral to this mode's kernel value.
    pub fn project(self, halfwave: Complex64) -> Complex64 {
        match self {
            Mode::Cosine => Complex64::new(halfwave.re, 0.0),
            Mode::SineOverSqrt => Complex64::new(-halfwave.im, 0.0),
            Mode::Halfwave { .. } => halfwave,
        }
    }

    pub fn label(self) -> String {
        match self {
            Mode::Cosine => "cosine".into(),
            Mode::SineOverSqrt => "sine_over_sqrt".into(),
            Mode::Halfwave { alpha } => format!("halfwave({alpha})"),
        }
    }
}

/// What to evaluate.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagatorRequest {
    pub mode: Mode,
    pub times: Vec<f64>,
    pub pairs: Vec<(Point, Point)>,
    pub budget: QuadratureBudget,
    /// Low-energy boundary `λ₀`.
    pub lambda0: f64,
}

impl PropagatorRequest {
    pub fn new(mode: Mode, times: Vec<f64>, pairs: Vec<(Point, Point)>) -> Self {
        Self { mode, times, pairs, budget: QuadratureBudget::default(), lambda0: crate::birman::DEFAULT_LAMBDA0 }
    }

    fn validate(&self) -> Result<()> {
        self.mode.validate()?;
        self.budget.validate()?;
        if self.times.iter().any(|&t| t == 0.0 || !t.is_finite()) {
            return Err(invalid("propagator times must be finite and non-zero"));
        }
        if self.pairs.is_empty() {
            return Err(invalid("no sample pairs requested"));
        }
        Ok(())
    }
}

/// One kernel value `K(t; x, y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSample {
    pub t: f64,
    pub x: Point,
    pub y: Point,
    pub mode: Mode,
    pub value: Complex64,
    pub est_error: f64,
    pub warn: bool,
}

pub const KERNEL_CSV_HEADER: &str = "t,x1,x2,x3,y1,y2,y3,mode,re,im,est_error,warn_flag";

pub fn kernel_csv(samples: &[KernelSample]) -> String {
    let mut s = String::from(KERNEL_CSV_HEADER);
    s.push('\n');
    for k in samples {
        s.push_str(&format!(
            "{:e},{:e},{:e},{:e},{:e},{:e},{:e},{},{:e},{:e},{:e},{}\n",
            k.t,
            k.x[0],
            k.x[1],
            k.x[2],
            k.y[0],
            k.y[1],
            k.y[2],
            k.mode.label(),
            k.value.re,
            k.value.im,
            k.est_error,
            u8::from(k.warn)
        ));
    }
    s
}

/// `Im R₀^+(λ⁴)` at separation `r`.
pub fn free_spectral_density(lambda: f64, r: f64) -> f64 {
    free_resolvent_radial(lambda, r, Sign::Plus).im
}

/// Free kernel at one `(t, x, y)` through the Stone quadrature.
pub fn free_kernel_value(mode: Mode, t: f64, x: &Point, y: &Point, budget: &QuadratureBudget) -> Result<StoneValue> {
    mode.validate()?;
    let r = dist(x, y);
    let v = stone_integral(t, mode.alpha(), r, |l| free_spectral_density(l, r), budget, f64::INFINITY, 0.0)?;
    Ok(StoneValue { value: mode.project(v.value), ..v })
}

/// Free propagator kernel samples for every `(t, pair)`, `t` outermost.
pub fn free_propagator_kernel(req: &PropagatorRequest) -> Result<Vec<KernelSample>> {
    req.validate()?;
    let jobs: Vec<(f64, Point, Point)> =
        req.times.iter().flat_map(|&t| req.pairs.iter().map(move |&(x, y)| (t, x, y))).collect();
    jobs.par_iter()
        .map(|&(t, x, y)| {
            let v = free_kernel_value(req.mode, t, &x, &y, &req.budget)?;
            Ok(KernelSample { t, x, y, mode: req.mode, value: v.value, est_error: v.est_error, warn: v.warn })
        })
        .collect()
}

/// Exact `e^{itΔ}(x, y) = (4πit)^{-3/2} e^{i r²/(4t)}` (principal branch).
pub fn gaussian_halfwave_kernel(t: f64, r: f64) -> Complex64 {
    let z = Complex64::new(0.0, 4.0 * PI * t);
    z.powf(-1.5) * Complex64::from_polar(1.0, r * r / (4.0 * t))
}

/// Exact free `cos(t√H₀)` kernel.
pub fn free_cosine_oracle(t: f64, r: f64) -> f64 {
    gaussian_halfwave_kernel(t, r).re
}

/// Free `sin(t√H₀)/√H₀` kernel
/// `(1/(2π²r)) ∫₀^∞ sin(tλ²) sin(λr) λ^{-1} dλ`, evaluated by exchanging the
/// order of integration: the inner Fresnel-type integral is
/// `½√(π/2t)[cos(s²/4t) - sin(s²/4t)]`, leaving a finite integral over
/// `s ∈ [0, r]`.
pub fn free_sine_kernel_oracle(t: f64, r: f64) -> f64 {
    if t == 0.0 {
        return 0.0;
    }
    let s = t.abs();
    let amp = 0.5 * (PI / (2.0 * s)).sqrt();
    let value = if r == 0.0 {
        amp / (2.0 * PI * PI)
    } else {
        let f = |u: f64| {
            let ph = u * u / (4.0 * s);
            amp * (ph.cos() - ph.sin())
        };
        let int = integrate_adaptive(f, 0.0, r, 0.0, 1e-12, 4000);
        int.value / (2.0 * PI * PI * r)
    };
    t.signum() * value
}

/// `I(t) = ∫₀^∞ χ(λ) sin(tλ²) λ^{-2} dλ`; `I(t)/√t → √(π/2)`.
pub fn scalar_growth_integral(t: f64, lambda0: f64) -> Result<f64> {
    if !(lambda0 > 0.0) {
        return Err(invalid("lambda0 must be positive"));
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    let f = |l: f64| {
        let c = chi(l, lambda0);
        if c == 0.0 {
            return 0.0;
        }
        let u = t * l * l;
        // sin(u)/λ² = t·sinc(u) with the removable point at 0.
        let s = if u.abs() < 1e-8 { t * (1.0 - u * u / 6.0) } else { u.sin() / (l * l) };
        c * s
    };
    // Split at oscillation-scale break points so every piece is smooth.
    let b = 2.0 * lambda0;
    let cycles = (t.abs() * b * b / (2.0 * PI)).ceil().max(1.0) as usize;
    let pieces = cycles.min(20000);
    let mut total = 0.0;
    let mut prev = 0.0;
    for k in 1..=pieces {
        // Equal phase increments: λ_k = b √(k/pieces).
        let next = b * (k as f64 / pieces as f64).sqrt();
        total += integrate_adaptive(f, prev, next, 1e-15, 1e-12, 200).value;
        prev = next;
    }
    Ok(total)
}

/// Leading `S₂` block `A` of `λ³ S₂ M(λ)⁻¹ S₂` as `λ → 0`, with the basis it
/// refers to.
#[derive(Debug, Clone, PartialEq)]
pub struct S2Block {
    /// `n × r` orthonormal basis in symmetrized active-node coordinates.
    pub basis: DMatrix<f64>,
    /// `r × r` block.
    pub block: DMatrix<Complex64>,
}

/// `λ³ S₂ M^+(λ)⁻¹ S₂` at one small `λ`.
pub fn extract_s2_block(sa: &SpectralAssembly, s2: &DMatrix<f64>, lambda: f64) -> Result<S2Block> {
    if s2.ncols() == 0 {
        return Err(invalid("rank(S₂) = 0: no second-kind block"));
    }
    let lu = factor_m(sa, lambda, Sign::Plus)?;
    let b = s2.map(|x| Complex64::new(x, 0.0));
    let x = lu.solve(&b);
    let block = b.adjoint() * x * Complex64::new(lambda.powi(3), 0.0);
    Ok(S2Block { basis: s2.clone(), block })
}

fn distance_column(sa: &SpectralAssembly, x: &Point) -> Vec<f64> {
    sa.nodes.iter().zip(&sa.vt).map(|(u, v)| dist(x, u) * v).collect()
}

/// `W(x, y) = (1/64π²) Σ |x-u₁| v(u₁) [S₂AS₂](u₁,u₂) v(u₂) |y-u₂|`, the
/// `(x, y)` factor of `G₀ v (S₂AS₂) v G₀`.
pub fn growth_weight(sa: &SpectralAssembly, block: &S2Block, x: &Point, y: &Point) -> Result<Complex64> {
    if block.basis.ncols() == 0 {
        return Err(invalid("rank(S₂) = 0: no second-kind block"));
    }
    let gx = nalgebra::DVector::from_vec(distance_column(sa, x));
    let gy = nalgebra::DVector::from_vec(distance_column(sa, y));
    let bx = (block.basis.transpose() * gx).map(|z| Complex64::new(z, 0.0));
    let by = (block.basis.transpose() * gy).map(|z| Complex64::new(z, 0.0));
    let w = (bx.transpose() * &block.block * by)[(0, 0)];
    Ok(w / (64.0 * PI * PI))
}

/// Cauchy–Schwarz bound `(1/64π²)(|x|‖v‖ + ‖|u|v‖)‖A‖(|y|‖v‖ + ‖|u|v‖)`.
pub fn growth_weight_bound(sa: &SpectralAssembly, block: &S2Block, x: &Point, y: &Point) -> f64 {
    let vn = sa.l1.sqrt();
    let uv = sa.nodes.iter().zip(&sa.vt).map(|(u, v)| (norm3(u) * v).powi(2)).sum::<f64>().sqrt();
    let a = crate::opalg::complex_singular_values(&block.block)[0];
    (norm3(x) * vn + uv) * a * (norm3(y) * vn + uv) / (64.0 * PI * PI)
}

/// Leading growing term `I(t)·W(x, y)` of the second-kind propagator.
pub fn leading_growth_kernel(
    t: f64,
    x: &Point,
    y: &Point,
    block: &S2Block,
    sa: &SpectralAssembly,
    lambda0: f64,
) -> Result<Complex64> {
    let w = growth_weight(sa, block, x, y)?;
    Ok(w * scalar_growth_integral(t, lambda0)?)
}

/// `-[R₀ v M^±(λ)⁻¹ v R₀](x, y)` for every pair, from one factorization.
pub fn resolvent_correction(
    sa: &SpectralAssembly,
    lambda: f64,
    sign: Sign,
    pairs: &[(Point, Point)],
) -> Result<Vec<Complex64>> {
    let lu = factor_m(sa, lambda, sign)?;
    let n = sa.dim();
    let rhs = DMatrix::from_fn(n, pairs.len(), |_, _| Complex64::new(0.0, 0.0));
    let mut rhs = rhs;
    for (k, (_, y)) in pairs.iter().enumerate() {
        let col = sa.coupling_column(lambda, y, sign);
        for j in 0..n {
            rhs[(j, k)] = col[j];
        }
    }
    let sol = lu.solve(&rhs);
    Ok(pairs
        .iter()
        .enumerate()
        .map(|(k, (x, _))| {
            let a = sa.coupling_column(lambda, x, sign);
            -(0..n).map(|j| a[j] * sol[(j, k)]).sum::<Complex64>()
        })
        .collect())
}

/// First Born term `-[R₀ V R₀](x, y)` on the grid, for high-energy checks.
pub fn born_correction(sa: &SpectralAssembly, lambda: f64, sign: Sign, x: &Point, y: &Point) -> Complex64 {
    let a = sa.coupling_column(lambda, x, sign);
    let b = sa.coupling_column(lambda, y, sign);
    -(0..sa.dim()).map(|j| a[j] * sa.sign[j] * b[j]).sum::<Complex64>()
}

/// Chebyshev interpolant of `h_p(λ) = λ · Im[correction_p(λ)]` for every pair.
#[derive(Debug, Clone)]
pub struct CorrectionTable {
    pub pieces: Vec<ChebPiece>,
    pub lambda_max: f64,
    /// Per pair, `max_u |x-u| + max_u |u-y|` over the active nodes: the
    /// largest spatial frequency of the correction.
    pub psi: Vec<f64>,
    /// Number of `M(λ)` factorizations spent.
    pub factorizations: usize,
}

#[derive(Debug, Clone)]
pub struct ChebPiece {
    pub a: f64,
    pub b: f64,
    /// `coeffs[p][k]`, pair `p`, degree `k`.
    pub coeffs: Vec<Vec<f64>>,
}

const CHEB_POINTS: usize = 24;

fn cheb_nodes(a: f64, b: f64) -> Vec<f64> {
    (0..CHEB_POINTS)
        .map(|k| {
            let th = PI * (k as f64 + 0.5) / CHEB_POINTS as f64;
            0.5 * (a + b) + 0.5 * (b - a) * th.cos()
        })
        .collect()
}

fn cheb_coeffs(values: &[f64]) -> Vec<f64> {
    let m = values.len();
    (0..m)
        .map(|j| {
            let s: f64 =
                values.iter().enumerate().map(|(k, v)| v * (PI * j as f64 * (k as f64 + 0.5) / m as f64).cos()).sum();
            s * if j == 0 { 1.0 } else { 2.0 } / m as f64
        })
        .collect()
}

fn cheb_eval(c: &[f64], a: f64, b: f64, x: f64) -> f64 {
    let u = (2.0 * x - a - b) / (b - a);
    // Clenshaw.
    let (mut b1, mut b2) = (0.0, 0.0);
    for &ck in c.iter().skip(1).rev() {
        let b0 = 2.0 * u * b1 - b2 + ck;
        b2 = b1;
        b1 = b0;
    }
    u * b1 - b2 + c[0]
}

/// Relative amplitude below which the active set is ignored when bounding the
/// spatial frequency of the correction.
const REACH_CUTOFF: f64 = 1e-3;

impl CorrectionTable {
    /// Adaptive table on `[0, lambda_max]`, starting from pieces spanning
    /// about three oscillations of the largest `Ψ`.
    /// A piece is accepted when its last four Chebyshev coefficients are
    /// below `tol` times the largest `|h_p|` seen, otherwise it is bisected.
    pub fn build(sa: &SpectralAssembly, pairs: &[(Point, Point)], lambda_max: f64, tol: f64) -> Result<Self> {
        if pairs.is_empty() {
            return Err(invalid("no sample pairs"));
        }
        if !(tol > 0.0 && tol < 1.0) || !(lambda_max > 0.0 && lambda_max.is_finite()) {
            return Err(invalid("need a finite positive table range and tolerance in (0, 1)"));
        }
        let sample = |a: f64, b: f64| -> Result<Vec<Vec<f64>>> {
            let nodes = cheb_nodes(a, b);
            let vals: Vec<Vec<Complex64>> =
                nodes.par_iter().map(|&l| resolvent_correction(sa, l, Sign::Plus, pairs)).collect::<Result<_>>()?;
            Ok((0..pairs.len()).map(|p| nodes.iter().zip(&vals).map(|(l, v)| l * v[p].im).collect()).collect())
        };
        let mut factorizations = 0;
        let psi: Vec<f64> = pairs.iter().map(|(x, y)| correction_psi(sa, x, y)).collect();
        let psi_max = psi.iter().fold(0.0f64, |m, p| m.max(*p));
        let target = (6.0 * PI / psi_max.max(1e-12)).clamp(0.25, 2.0);
        let count = (lambda_max / target).ceil() as usize;
        let width = lambda_max / count as f64;
        let mut stack: Vec<(f64, f64)> = (0..count).map(|k| (k as f64 * width, (k + 1) as f64 * width)).collect();
        let mut done: Vec<(f64, f64, Vec<Vec<f64>>)> = Vec::new();
        let mut scale = vec![0.0f64; pairs.len()];
        // Refine level by level so every acceptance test sees the scale of
        // the whole range sampled so far.
        while !stack.is_empty() {
            let mut level = Vec::with_capacity(stack.len());
            for (a, b) in stack.drain(..) {
                let vals = sample(a, b)?;
                factorizations += CHEB_POINTS;
                for (p, v) in vals.iter().enumerate() {
                    scale[p] = v.iter().fold(scale[p], |m, h| m.max(h.abs()));
                }
                level.push((a, b, vals.iter().map(|v| cheb_coeffs(v)).collect::<Vec<_>>()));
            }
            for (a, b, c) in level {
                let resolved = c.iter().enumerate().all(|(p, cp)| {
                    let tail = cp[CHEB_POINTS - 4..].iter().fold(0.0f64, |m, x| m.max(x.abs()));
                    tail <= tol * scale[p].max(f64::MIN_POSITIVE)
                });
                if resolved || b - a < 1e-4 {
                    done.push((a, b, c));
                } else {
                    let mid = 0.5 * (a + b);
                    stack.push((a, mid));
                    stack.push((mid, b));
                }
            }
        }
        done.sort_by(|x, y| x.0.total_cmp(&y.0));
        let pieces = done.into_iter().map(|(a, b, coeffs)| ChebPiece { a, b, coeffs }).collect();
        Ok(Self { pieces, lambda_max, psi, factorizations })
    }

    /// `h_p(λ)`, zero beyond the table.
    pub fn eval(&self, pair: usize, lambda: f64) -> f64 {
        if lambda < 0.0 || lambda > self.lambda_max {
            return 0.0;
        }
        let k = self.pieces.partition_point(|p| p.b < lambda).min(self.pieces.len() - 1);
        let p = &self.pieces[k];
        cheb_eval(&p.coeffs[pair], p.a, p.b, lambda)
    }
}

/// `max_u |x-u| + max_u |u-y|` over the nodes carrying a non-negligible
/// share of the amplitude: the largest spatial frequency of the correction.
pub fn correction_psi(sa: &SpectralAssembly, x: &Point, y: &Point) -> f64 {
    let vmax = sa.amplitude.iter().fold(0.0f64, |m, v| m.max(*v));
    let reach = |x: &Point| {
        sa.nodes
            .iter()
            .zip(&sa.amplitude)
            .filter(|(_, v)| **v >= REACH_CUTOFF * vmax)
            .fold(0.0f64, |m, (u, _)| m.max(dist(x, u)))
    };
    reach(x) + reach(y)
}

/// Table range for times `|t| ≥ t_min`: a power of two two panels past both
/// the main mass `|t|^{-1/2}` and the stationary point `Ψ/(2|t|)`.
pub fn table_range(t_min: f64, psi_max: f64) -> Result<f64> {
    if !(t_min > 0.0) || !(psi_max >= 0.0) {
        return Err(invalid("table range needs t_min > 0 and psi >= 0"));
    }
    let edge = 2.0 * (psi_max / (2.0 * t_min)).max(1.0 / t_min.sqrt());
    Ok(2f64.powi(edge.log2().ceil() as i32 + 3))
}

/// Relative accuracy of the correction table.
pub const TABLE_TOL: f64 = 1e-7;

/// Perturbed kernels: the exact free kernel plus the Stone integral of the
/// tabulated resolvent correction.
pub fn perturbed_propagator_kernel(
    req: &PropagatorRequest,
    sa: &SpectralAssembly,
    classification: Classification,
) -> Result<Vec<KernelSample>> {
    req.validate()?;
    let t_min = req.times.iter().fold(f64::INFINITY, |m, t| m.min(t.abs()));
    let psi_max = req.pairs.iter().fold(0.0f64, |m, (x, y)| m.max(correction_psi(sa, x, y)));
    let table = CorrectionTable::build(sa, &req.pairs, table_range(t_min, psi_max)?, TABLE_TOL)?;
    perturbed_from_table(req, &table, classification)
}

/// Evaluate the propagator request against a prebuilt correction table.
pub fn perturbed_from_table(
    req: &PropagatorRequest,
    table: &CorrectionTable,
    classification: Classification,
) -> Result<Vec<KernelSample>> {
    req.validate()?;
    let resonant = classification != Classification::Regular;
    let alpha = req.mode.alpha();
    let jobs: Vec<(f64, usize)> = req.times.iter().flat_map(|&t| (0..req.pairs.len()).map(move |p| (t, p))).collect();
    jobs.par_iter()
        .map(|&(t, p)| {
            let (x, y) = req.pairs[p];
            let r = dist(&x, &y);
            let free = free_halfwave(req.mode, t, r, &req.budget)?;
            let floor = req.budget.tail_eps * free.value.norm();
            let corr =
                stone_integral(t, alpha, table.psi[p], |l| table.eval(p, l) / l, &req.budget, table.lambda_max, floor)?;
            let value = free.value + req.mode.project(corr.value);
            Ok(KernelSample {
                t,
                x,
                y,
                mode: req.mode,
                value,
                est_error: free.est_error + corr.est_error,
                warn: free.warn || corr.warn || resonant,
            })
        })
        .collect()
}

/// Free kernel for the perturbed path: closed forms for the cosine and sine
/// modes, the Stone quadrature for general halfwave exponents.
fn free_halfwave(mode: Mode, t: f64, r: f64, budget: &QuadratureBudget) -> Result<StoneValue> {
    let exact = |v: f64| StoneValue { value: Complex64::new(v, 0.0), est_error: 0.0, warn: false, panels: 0 };
    match mode {
        Mode::Cosine => Ok(exact(free_cosine_oracle(t, r))),
        Mode::SineOverSqrt => Ok(exact(free_sine_kernel_oracle(t, r))),
        Mode::Halfwave { alpha: 0.0 } => {
            Ok(StoneValue { value: gaussian_halfwave_kernel(t, r), est_error: 0.0, warn: false, panels: 0 })
        }
        Mode::Halfwave { .. } => free_kernel_value(mode, t, &[0.0; 3], &[r, 0.0, 0.0], budget),
    }
}

/// Complex version of [`scalar_growth_integral`]'s adaptive rule, used by the
/// oracle tests for `∫ e^{-itλ²} λ^k dλ`.
pub fn gaussian_moment(t: f64, k: f64, lambda_max: f64) -> Complex64 {
    integrate_adaptive_complex(|l| Complex64::from_polar(l.powf(k), -t * l * l), 0.0, lambda_max, 1e-14, 1e-12, 20000).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::integrate_adaptive;

    #[test]
    fn partition_of_unity() {
        for &s in &[1e-3, 0.013, 0.3, 0.7, 1.0, 3.7, 100.0, 4097.0] {
            let total: f64 = (-40..=40).map(|n| phi0(2f64.powi(-n) * s)).sum();
            assert!((total - 1.0).abs() < 1e-12, "s={s}: {total}");
        }
        assert!((phi0(0.7) + phi0(1.4) + phi0(0.35) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn phi0_support() {
        assert_eq!(phi0(0.24), 0.0);
        assert_eq!(phi0(1.01), 0.0);
        assert!(phi0(0.5) > 0.99);
    }

    #[test]
    fn panels_sum_to_one_below_top() {
        let b = QuadratureBudget::default();
        let panels = build_panels(1.0, 0.0, -5..=4, &b).unwrap();
        for &l in &[1e-4, 0.02, 0.9, 3.3, 7.9] {
            let s: f64 = panels.iter().map(|p| p.cutoff(l)).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        #[allow(clippy::reversed_empty_ranges)]
        let empty = 3..=2;
        assert!(build_panels(1.0, 0.0, empty, &b).is_err());
        assert!(build_panels(0.0, 0.0, 0..=2, &b).is_err());
    }

    #[test]
    fn unit_time_unit_panel_gets_minimum_nodes() {
        let b = QuadratureBudget::default();
        let p = DyadicPanel::new(0, false, 1.0, 0.0, &b);
        assert_eq!(p.nodes, b.n_min);
    }

    #[test]
    fn theta_branches() {
        // |t| 4^N = 3 with t = 3, N = 0.
        assert!((theta_envelope(0, 1, 3.0).unwrap() - 0.125).abs() < 1e-15);
        assert!((theta_envelope(0, 5, 3.0).unwrap() - 0.0625).abs() < 1e-15);
        assert_eq!(n0_index(8.0, 1.0).unwrap(), 1);
        assert_eq!(n0_index(0.0, 1.0).unwrap(), N0_SENTINEL);
        assert!(theta_envelope(0, 0, 0.0).is_err());
        assert!(n0_index(1.0, 0.0).is_err());
    }

    #[test]
    fn envelope_constant_is_scale_invariant_on_diagonal() {
        // On the diagonal the panel integral depends on t only through t·4^N.
        let b = QuadratureBudget::default();
        let a = envelope_constant(1.0, 0.0, 0.0, -6..=6, &b).unwrap();
        let c = envelope_constant(4.0, 0.0, 0.0, -7..=5, &b).unwrap();
        assert!((a - c).abs() < 1e-6 * a, "{a} {c}");
        assert!(a > 0.05 && a < 0.5);
    }

    #[test]
    fn chi_is_c2_cutoff() {
        assert_eq!(chi(0.05, 0.1), 1.0);
        assert_eq!(chi(0.2, 0.1), 0.0);
        assert!((chi(0.15, 0.1) - 0.5).abs() < 1e-12);
        let h = 1e-5;
        let d = (chi(0.1 + h, 0.1) - chi(0.1, 0.1)) / h;
        assert!(d.abs() < 1e-6);
    }

    #[test]
    fn cosine_diagonal_at_unit_time() {
        let v = free_kernel_value(Mode::Cosine, 1.0, &[0.0; 3], &[0.0; 3], &QuadratureBudget::default()).unwrap();
        let expected = -(4.0 * PI).powf(-1.5) / 2f64.sqrt();
        assert!((v.value.re - expected).abs() < 1e-6 * expected.abs(), "{v:?}");
        assert!(!v.warn);
        assert!((expected + 0.01587).abs() < 1e-5);
    }

    #[test]
    fn sine_diagonal_matches_fresnel() {
        let t = 1.0;
        let v = free_kernel_value(Mode::SineOverSqrt, t, &[0.0; 3], &[0.0; 3], &QuadratureBudget::default()).unwrap();
        let expected = (PI / (2.0 * t)).sqrt() / (4.0 * PI * PI);
        assert!((v.value.re - expected).abs() < 1e-6 * expected, "{v:?} vs {expected}");
        assert!((free_sine_kernel_oracle(t, 0.0) - expected).abs() < 1e-15);
        assert!((expected - 0.03175).abs() < 1e-5);
    }

    #[test]
    fn sine_oracle_matches_stone_path() {
        let (t, r) = (5.0, 2.0);
        let oracle = free_sine_kernel_oracle(t, r);
        let v =
            free_kernel_value(Mode::SineOverSqrt, t, &[0.0; 3], &[r, 0.0, 0.0], &QuadratureBudget::default()).unwrap();
        assert!((v.value.re - oracle).abs() < 1e-6 * oracle.abs(), "{} vs {oracle}", v.value.re);
        assert_eq!(free_sine_kernel_oracle(-t, r), -oracle);
    }

    #[test]
    fn sine_oracle_small_r_limit() {
        let t = 2.0;
        let a = free_sine_kernel_oracle(t, 1e-6);
        let b = free_sine_kernel_oracle(t, 0.0);
        assert!((a - b).abs() < 1e-9 * b);
    }

    #[test]
    fn halfwave_matches_gaussian_kernel() {
        let b = QuadratureBudget::default();
        for &(t, r) in &[(1.0, 0.0), (2.5, 1.3), (30.0, 3.0), (100.0, 0.4)] {
            let v = free_kernel_value(Mode::Halfwave { alpha: 0.0 }, t, &[0.0; 3], &[0.0, r, 0.0], &b).unwrap();
            let exact = gaussian_halfwave_kernel(t, r);
            assert!((v.value - exact).norm() < 1e-6 * exact.norm(), "t={t} r={r}: {v:?} vs {exact}");
        }
    }

    #[test]
    fn parity_in_time() {
        let b = QuadratureBudget::default();
        let (x, y) = ([0.1, 0.0, 0.0], [0.0, 0.7, 0.2]);
        let c1 = free_kernel_value(Mode::Cosine, 3.0, &x, &y, &b).unwrap().value.re;
        let c2 = free_kernel_value(Mode::Cosine, -3.0, &x, &y, &b).unwrap().value.re;
        assert!((c1 - c2).abs() < 1e-10 * c1.abs());
        let s1 = free_kernel_value(Mode::SineOverSqrt, 3.0, &x, &y, &b).unwrap().value.re;
        let s2 = free_kernel_value(Mode::SineOverSqrt, -3.0, &x, &y, &b).unwrap().value.re;
        assert!((s1 + s2).abs() < 1e-10 * s1.abs());
    }

    #[test]
    fn halfwave_alpha_range() {
        assert!(Mode::Halfwave { alpha: -1.5 }.validate().is_err());
        assert!(Mode::Halfwave { alpha: 0.1 }.validate().is_err());
        assert!(Mode::Halfwave { alpha: -1.0 }.validate().is_ok());
    }

    #[test]
    fn growth_integral_limits() {
        assert_eq!(scalar_growth_integral(0.0, 0.1).unwrap(), 0.0);
        let lambda0 = 0.1;
        let t = 0.5;
        let i = scalar_growth_integral(t, lambda0).unwrap();
        let chi_int = integrate_adaptive(|l| chi(l, lambda0), 0.0, 0.2, 1e-14, 1e-12, 100).value;
        assert!(i.abs() <= t * chi_int * (1.0 + 1e-12));
        let big = 1e4;
        let ratio = scalar_growth_integral(big, lambda0).unwrap() / big.sqrt();
        assert!((ratio - (PI / 2.0).sqrt()).abs() < 1e-2, "{ratio}");
        assert_eq!(scalar_growth_integral(-big, lambda0).unwrap(), -scalar_growth_integral(big, lambda0).unwrap());
    }

    #[test]
    fn kernel_csv_header() {
        let s = KernelSample {
            t: 1.0,
            x: [0.0; 3],
            y: [1.0, 0.0, 0.0],
            mode: Mode::Cosine,
            value: Complex64::new(0.5, 0.0),
            est_error: 0.0,
            warn: false,
        };
        let csv = kernel_csv(&[s]);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), KERNEL_CSV_HEADER);
        assert_eq!(lines.next().unwrap().split(',').count(), 12);
    }

    #[test]
    fn chebyshev_interpolant_is_exact_on_polynomials() {
        let nodes = cheb_nodes(0.5, 2.0);
        let vals: Vec<f64> = nodes.iter().map(|x| 3.0 * x * x * x - x + 2.0).collect();
        let c = cheb_coeffs(&vals);
        for &x in &[0.5, 0.77, 1.9] {
            assert!((cheb_eval(&c, 0.5, 2.0, x) - (3.0 * x * x * x - x + 2.0)).abs() < 1e-12);
        }
    }

    mod perturbed {
        use super::super::*;
        use crate::birman::assemble_spectral;
        use crate::potential::Potential;
        use crate::quadrature::build_box_grid;

        fn small(depth: f64) -> SpectralAssembly {
            let g = build_box_grid(3.0, 5).unwrap();
            assemble_spectral(&Potential::gaussian_well(depth, 1.0), &g).unwrap()
        }

        fn pairs() -> Vec<(Point, Point)> {
            vec![([0.0; 3], [0.0; 3]), ([0.3, -0.2, 0.1], [0.0, 0.5, 0.2])]
        }

        #[test]
        fn minus_branch_is_conjugate() {
            let sa = small(-1.0);
            for &l in &[0.05, 0.7, 3.0] {
                let p = resolvent_correction(&sa, l, Sign::Plus, &pairs()).unwrap();
                let m = resolvent_correction(&sa, l, Sign::Minus, &pairs()).unwrap();
                for (a, b) in p.iter().zip(&m) {
                    assert!((a.conj() - b).norm() <= 1e-10 * a.norm());
                }
            }
        }

        #[test]
        fn born_term_dominates_at_high_energy() {
            let sa = small(-0.5);
            let (x, y) = pairs()[1];
            let rel = |l: f64| {
                let c = resolvent_correction(&sa, l, Sign::Plus, &[(x, y)]).unwrap()[0];
                (c - born_correction(&sa, l, Sign::Plus, &x, &y)).norm() / c.norm()
            };
            assert!(rel(6.0) < 0.05);
            assert!(rel(6.0) < rel(1.0));
        }

        #[test]
        fn table_interpolates_the_correction() {
            let sa = small(-0.5);
            let ps = pairs();
            let table = CorrectionTable::build(&sa, &ps, 2.0, 1e-9).unwrap();
            for &l in &[0.013, 0.4, 1.37, 1.99] {
                let c = resolvent_correction(&sa, l, Sign::Plus, &ps).unwrap();
                for (p, cp) in c.iter().enumerate() {
                    let h = table.eval(p, l);
                    assert!((h - l * cp.im).abs() < 1e-7 * table_scale(&table, p), "{l} {p}");
                }
            }
            assert_eq!(table.eval(0, 2.5), 0.0);
            assert!(table.psi.iter().all(|&p| p > 0.0));
        }

        fn table_scale(t: &CorrectionTable, p: usize) -> f64 {
            (0..200).map(|k| t.eval(p, 0.01 * k as f64).abs()).fold(0.0, f64::max)
        }

        #[test]
        fn weak_coupling_approaches_free() {
            let sa = small(-1e-4);
            let ps = pairs();
            let req = PropagatorRequest::new(Mode::Cosine, vec![10.0, 30.0], ps.clone());
            let out = perturbed_propagator_kernel(&req, &sa, Classification::Regular).unwrap();
            for k in out {
                let free = free_cosine_oracle(k.t, dist(&k.x, &k.y));
                assert!((k.value.re - free).abs() < 1e-2 * free.abs(), "{k:?}");
                assert!(!k.warn);
            }
        }

        #[test]
        fn table_range_covers_stationary_region() {
            let r = table_range(10.0, 10.0).unwrap();
            assert!(r >= 4.0 * 0.5 && r.log2().fract() == 0.0);
            assert!(table_range(0.0, 1.0).is_err());
        }

        #[test]
        fn growth_weight_respects_cauchy_schwarz() {
            let sa = small(-1.0);
            let n = sa.dim();
            // Synthetic orthonormal pair of columns and a complex block.
            let mut s2 = DMatrix::zeros(n, 2);
            s2[(0, 0)] = 1.0;
            s2[(n - 1, 1)] = 1.0;
            let block = DMatrix::from_row_slice(
                2,
                2,
                &[
                    Complex64::new(1.0, 0.5),
                    Complex64::new(0.2, 0.0),
                    Complex64::new(0.2, 0.0),
                    Complex64::new(-0.7, 0.1),
                ],
            );
            let b = S2Block { basis: s2, block };
            let (x, y) = ([0.5, 0.0, 0.0], [0.0, -1.0, 2.0]);
            let w = growth_weight(&sa, &b, &x, &y).unwrap();
            assert!(w.norm() > 0.0);
            assert!(w.norm() <= growth_weight_bound(&sa, &b, &x, &y));
            // A symmetric block gives a symmetric weight.
            let w2 = growth_weight(&sa, &b, &y, &x).unwrap();
            assert!((w - w2).norm() < 1e-14 * w.norm());
            let k = leading_growth_kernel(100.0, &x, &y, &b, &sa, 0.1).unwrap();
            assert!((k - w * scalar_growth_integral(100.0, 0.1).unwrap()).norm() < 1e-15 * k.norm());
            let empty = S2Block { basis: DMatrix::zeros(n, 0), block: DMatrix::zeros(0, 0) };
            assert!(growth_weight(&sa, &empty, &x, &y).is_err());
        }
    }
}
