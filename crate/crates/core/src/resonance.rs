//! The zero-energy resonance ladder `S₁ ⊇ S₂ ⊇ S₃`, classification of the
//! threshold, orthogonality diagnostics, resonance functions and coupling
//! scans.
//!
//! All operators here are real symmetric; each `S_j` is kept as an orthonormal
//! basis of its range and the inverses `D_j` act in those coordinates.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::birman::{assemble_spectral, SpectralAssembly};
use crate::error::{invalid, Error, Result};
use crate::freekernel::g_kernel;
use crate::opalg::{sorted_symmetric_eigenvalues, symmetric_shifted_inverse, tall_norm, Projection};
use crate::potential::Potential;
use crate::quadrature::QuadratureGrid;
use crate::{dist, Point};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Classification {
    Regular,
    FirstKind,
    SecondKind,
    ThirdKind,
}

impl Classification {
    pub fn from_ranks(r1: usize, r2: usize, r3: usize) -> Self {
        match (r1, r2, r3) {
            (0, _, _) => Classification::Regular,
            (_, 0, _) => Classification::FirstKind,
            (_, _, 0) => Classification::SecondKind,
            _ => Classification::ThirdKind,
        }
    }

    /// Smallest decay exponent `β` the decay theorems assume for this case.
    pub fn required_beta(self) -> f64 {
        match self {
            Classification::Regular => 7.0,
            Classification::FirstKind => 11.0,
            Classification::SecondKind => 19.0,
            Classification::ThirdKind => 23.0,
        }
    }

    /// Expected power of `λ` in `‖M(λ)⁻¹‖`.
    pub fn blowup_exponent(self) -> f64 {
        match self {
            Classification::Regular => 0.0,
            Classification::FirstKind => -1.0,
            Classification::SecondKind => -3.0,
            Classification::ThirdKind => -4.0,
        }
    }

    /// Whether a fitted blow-up order is compatible with this label.
    pub fn blowup_consistent(self, order: f64) -> bool {
        (order - self.blowup_exponent()).abs() <= if self == Classification::Regular { 0.2 } else { 0.3 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ranks {
    pub s1: usize,
    pub s2: usize,
    pub s3: usize,
}

/// Absolute eigenvalues (= singular values) of each ladder operator, descending.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SingularSpectra {
    pub qtq: Vec<f64>,
    pub t1: Vec<f64>,
    pub t2: Vec<f64>,
    pub t3: Vec<f64>,
}

/// Orthonormal bases of `S₁ ⊇ S₂ ⊇ S₃` (active-node symmetrized coordinates)
/// and the ladder inverses.
#[derive(Debug, Clone, Default)]
pub struct Ladder {
    /// Basis of `Q L²`.
    pub q: DMatrix<f64>,
    pub s1: DMatrix<f64>,
    pub s2: DMatrix<f64>,
    pub s3: DMatrix<f64>,
    /// `(QTQ + S₁)⁻¹` in `Q` coordinates.
    pub d0: DMatrix<f64>,
    /// `S₁` in `Q` coordinates.
    pub s1_in_q: DMatrix<f64>,
    /// `(T₁ + S₂)⁻¹` in `S₁` coordinates.
    pub d1: DMatrix<f64>,
    /// `(T₂ + S₃)⁻¹` in `S₂` coordinates.
    pub d2: DMatrix<f64>,
    /// `T₃⁻¹` in `S₃` coordinates.
    pub d3: DMatrix<f64>,
}

impl Ladder {
    pub fn projection(&self, j: usize) -> Projection {
        match j {
            1 => Projection::from_real_basis(&self.s1),
            2 => Projection::from_real_basis(&self.s2),
            3 => Projection::from_real_basis(&self.s3),
            _ => panic!("ladder has projections S₁, S₂, S₃"),
        }
    }
}

/// Summary of a resonance function `φ` with `f = Uvφ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResonanceFunctionSummary {
    pub c0: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResonanceReport {
    pub classification: Classification,
    pub ranks: Ranks,
    pub singular_spectra: SingularSpectra,
    pub residuals: BTreeMap<String, f64>,
    pub coupling: f64,
    pub tolerance: f64,
    #[serde(default)]
    pub resonance_functions: Vec<ResonanceFunctionSummary>,
    #[serde(default)]
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub ladder: Ladder,
}

fn abs_desc(vals: &[f64]) -> Vec<f64> {
    let mut v: Vec<f64> = vals.iter().map(|x| x.abs()).collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

fn sym(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

fn spectral_norm_sym(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.symmetric_eigenvalues().iter().fold(0.0, |a: f64, x| a.max(x.abs()))
}

/// Null space of a symmetric block whose entries result from cancelling
/// parts of size `scale`: `|μ| ≤ rel_tol · max(σ_max, scale)`.
fn ladder_step(m: DMatrix<f64>, scale: f64, rel_tol: f64) -> (DMatrix<f64>, DMatrix<f64>, Vec<f64>) {
    let smax = spectral_norm_sym(&m).max(scale);
    symmetric_shifted_inverse(m, rel_tol * smax)
}

/// Run the ladder `QTQ → T₁ → T₂ → T₃` and classify the threshold.
pub fn classify(sa: &SpectralAssembly, rel_tol: f64) -> Result<ResonanceReport> {
    if !(rel_tol > 0.0 && rel_tol < 1.0) {
        return Err(invalid(format!("rank tolerance must lie in (0, 1), got {rel_tol}")));
    }
    let n = sa.dim();
    let l1 = sa.l1;
    let t = &sa.t;
    let vt = DVector::from_column_slice(&sa.vt);
    let q = sa.q_basis();
    let qtq = sym(q.transpose() * t * &q);
    let (d0, n1, mu0) = ladder_step(qtq, 0.0, rel_tol);
    let s1 = &q * &n1;
    let mut spectra = SingularSpectra { qtq: abs_desc(&mu0), ..Default::default() };
    let g1 = sa.vg(1);

    let mut ladder = Ladder { q, s1: s1.clone(), s1_in_q: n1.clone(), d0, ..Default::default() };
    ladder.s2 = DMatrix::zeros(n, 0);
    ladder.s3 = DMatrix::zeros(n, 0);
    ladder.d1 = DMatrix::zeros(0, 0);
    ladder.d2 = DMatrix::zeros(0, 0);
    ladder.d3 = DMatrix::zeros(0, 0);

    if s1.ncols() > 0 {
        let tv = s1.transpose() * (t * &vt);
        let first = &tv * tv.transpose() / l1;
        let second = s1.transpose() * &g1 * &s1 * (l1 / (3.0 * (8.0 * PI).powi(2)));
        let scale = spectral_norm_sym(&first).max(spectral_norm_sym(&second));
        let t1 = sym(first - second);
        let (d1, n2, mu1) = ladder_step(t1, scale, rel_tol);
        spectra.t1 = abs_desc(&mu1);
        let s2 = &s1 * &n2;
        ladder.d1 = d1;
        if s2.ncols() > 0 {
            let c = 10.0 / (3.0 * l1);
            let g1s2 = &g1 * &s2;
            let a = s2.transpose() * sa.vg(3) * &s2;
            let b = g1s2.transpose() * &g1s2 * c;
            let w = s1.transpose() * (t * &g1s2);
            let d = w.transpose() * &ladder.d1 * &w * c;
            let scale = [&a, &b, &d].iter().map(|m| spectral_norm_sym(m)).fold(0.0, f64::max);
            let t2 = sym(a + b - d);
            let (d2, n3, mu2) = ladder_step(t2, scale, rel_tol);
            spectra.t2 = abs_desc(&mu2);
            let s3 = &s2 * &n3;
            ladder.d2 = d2;
            if s3.ncols() > 0 {
                let g4 = sa.vg(4);
                let t3 = sym(s3.transpose() * &g4 * &s3);
                let mu3 = sorted_symmetric_eigenvalues(t3.clone());
                spectra.t3 = abs_desc(&mu3);
                let smin = spectra.t3.last().copied().unwrap_or(0.0);
                let scale = spectral_norm_sym(&g4);
                if smin <= rel_tol * scale {
                    return Err(Error::Inconsistency(format!(
                        "T₃ is singular on S₃ (σ_min = {smin:e}); the grid under-resolves the potential"
                    )));
                }
                ladder.d3 = t3.try_inverse().ok_or_else(|| Error::Inconsistency("T₃ inversion failed".into()))?;
            }
            ladder.s3 = s3;
        }
        ladder.s2 = s2;
    }

    let ranks = Ranks { s1: ladder.s1.ncols(), s2: ladder.s2.ncols(), s3: ladder.s3.ncols() };
    let classification = Classification::from_ranks(ranks.s1, ranks.s2, ranks.s3);
    let mut warnings = Vec::new();
    let beta = sa.potential.decay_beta();
    if beta <= classification.required_beta() {
        warnings.push(format!(
            "decay exponent beta = {beta} does not exceed {} assumed for {classification:?}",
            classification.required_beta()
        ));
    }
    let mut report = ResonanceReport {
        classification,
        ranks,
        singular_spectra: spectra,
        residuals: BTreeMap::new(),
        coupling: sa.potential.coupling,
        tolerance: rel_tol,
        resonance_functions: Vec::new(),
        warnings,
        ladder,
    };
    report.residuals = orthogonality_residuals(&report, sa);
    if classification != Classification::Regular {
        for k in 0..ranks.s1 {
            let f: Vec<f64> = report.ladder.s1.column(k).iter().copied().collect();
            let r = reconstruct_resonance_function(&f, sa, classification)?;
            report.resonance_functions.push(ResonanceFunctionSummary { c0: r.c0, residual: r.residual });
        }
    }
    Ok(report)
}

/// Named residuals of the orthogonality relations at the detected subspaces.
///
/// Operator residuals are normalized by the norm of the operator involved;
/// moment residuals by `‖x_i v‖`. Empty subspaces give 0.
pub fn orthogonality_residuals(report: &ResonanceReport, sa: &SpectralAssembly) -> BTreeMap<String, f64> {
    let l = &report.ladder;
    let t = &sa.t;
    let vt = DVector::from_column_slice(&sa.vt);
    let t_norm = spectral_norm_sym(t);
    let q_apply = |m: DMatrix<f64>| -> DMatrix<f64> {
        let c = vt.transpose() * &m / sa.l1;
        &m - &vt * c
    };
    let p_apply = |m: DMatrix<f64>| -> DMatrix<f64> { &vt * (vt.transpose() * &m / sa.l1) };
    let mut out = BTreeMap::new();

    let ts1 = t * &l.s1;
    out.insert("qts1".to_string(), tall_norm(&q_apply(ts1.clone())) / t_norm);
    out.insert("s1tq".to_string(), tall_norm(&q_apply(ts1).transpose().transpose()) / t_norm);
    let s1q = &l.s1_in_q;
    let id = (&l.d0 * s1q) - s1q;
    out.insert("s1_d0_identity".to_string(), if s1q.ncols() > 0 { tall_norm(&id) } else { 0.0 });

    let ts2 = t * &l.s2;
    out.insert("pts2".to_string(), tall_norm(&p_apply(ts2.clone())) / t_norm);
    out.insert("ts2".to_string(), tall_norm(&ts2) / t_norm);
    let g1 = sa.vg(1);
    let g1_norm = spectral_norm_sym(&g1);
    out.insert("q_vg1v_s2".to_string(), tall_norm(&q_apply(&g1 * &l.s2)) / g1_norm);
    out.insert("x_moments_s2".to_string(), moment_residual(sa, &l.s2, 1));
    out.insert("xx_moments_s3".to_string(), moment_residual(sa, &l.s3, 2));
    out.insert("vg1v_s3".to_string(), tall_norm(&(&g1 * &l.s3)) / g1_norm);
    out
}

/// `max |⟨m v, f⟩| / ‖m v‖` over monomials `m = x_i` (degree 1) or `x_i x_j`
/// (degree 2) and basis vectors `f`.
fn moment_residual(sa: &SpectralAssembly, basis: &DMatrix<f64>, degree: usize) -> f64 {
    if basis.ncols() == 0 {
        return 0.0;
    }
    type Monomial = Box<dyn Fn(&Point) -> f64>;
    let monomials: Vec<Monomial> = if degree == 1 {
        (0..3).map(|i| Box::new(move |x: &Point| x[i]) as Monomial).collect()
    } else {
        let mut v: Vec<Monomial> = Vec::new();
        for i in 0..3 {
            for j in i..3 {
                v.push(Box::new(move |x: &Point| x[i] * x[j]));
            }
        }
        v
    };
    let mut worst: f64 = 0.0;
    for m in &monomials {
        let mv: Vec<f64> = sa.nodes.iter().zip(&sa.vt).map(|(x, v)| m(x) * v).collect();
        let norm = mv.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        for col in basis.column_iter() {
            let ip: f64 = mv.iter().zip(col.iter()).map(|(a, b)| a * b).sum();
            worst = worst.max(ip.abs() / norm);
        }
    }
    worst
}

/// `φ = -G₀ v f + c₀` with `c₀ = ‖V‖⁻¹ ⟨v, T f⟩` (first kind) or `c₀ = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResonanceFunction {
    /// Symmetrized `f̃_j = f(u_j) √w_j` on the active nodes, unit norm.
    pub f: Vec<f64>,
    /// `φ(u_j)` on the active nodes.
    pub phi: Vec<f64>,
    pub c0: f64,
    /// `‖f - Uvφ‖_{L²}`.
    pub residual: f64,
}

impl ResonanceFunction {
    /// `φ(x)` at an arbitrary point.
    pub fn evaluate(&self, sa: &SpectralAssembly, x: &Point) -> f64 {
        let s: f64 = sa.nodes.iter().zip(&sa.vt).zip(&self.f).map(|((u, v), f)| g_kernel(0, dist(x, u)) * v * f).sum();
        self.c0 - s
    }
}

pub fn reconstruct_resonance_function(
    f: &[f64],
    sa: &SpectralAssembly,
    kind: Classification,
) -> Result<ResonanceFunction> {
    if kind == Classification::Regular {
        return Err(invalid("a regular threshold has no resonance function"));
    }
    if f.len() != sa.dim() {
        return Err(invalid(format!("expected {} active-node values, got {}", sa.dim(), f.len())));
    }
    let norm = f.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(invalid("resonance function seed must be non-zero"));
    }
    let f = DVector::from_iterator(f.len(), f.iter().map(|x| x / norm));
    let vt = DVector::from_column_slice(&sa.vt);
    let c0 = if kind == Classification::FirstKind { vt.dot(&(&sa.t * &f)) / sa.l1 } else { 0.0 };
    let n = sa.dim();
    let phi: Vec<f64> = (0..n)
        .map(|i| {
            let s: f64 = (0..n).map(|j| g_kernel(0, sa.distances[(i, j)]) * sa.vt[j] * f[j]).sum();
            c0 - s
        })
        .collect();
    let residual = (0..n)
        .map(|i| {
            let e = f[i] - sa.sign[i] * sa.vt[i] * phi[i];
            e * e
        })
        .sum::<f64>()
        .sqrt();
    Ok(ResonanceFunction { f: f.as_slice().to_vec(), phi, c0, residual })
}

/// One sample of a coupling scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanSample {
    pub c: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// Number of negative eigenvalues of `QTQ` on `QL²`.
    pub negative: usize,
}

/// A coupling where an eigenvalue of `QTQ` crosses zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanRoot {
    /// Bisection bracket, relative width ≤ 1e-4.
    pub lower: f64,
    pub upper: f64,
    /// Polished crossing.
    pub coupling: f64,
    /// `σ_min / σ_max` of `QTQ` at the polished coupling.
    pub sigma_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingScan {
    pub samples: Vec<ScanSample>,
    pub roots: Vec<ScanRoot>,
}

impl CouplingScan {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("c,sigma_min,sigma_max\n");
        for p in &self.samples {
            s.push_str(&format!("{:e},{:e},{:e}\n", p.c, p.sigma_min, p.sigma_max));
        }
        s
    }
}

/// `QTQ(c) = QUQ + c·Q v₀G₀v₀ Q` in `Q` coordinates; `P`, `Q` and `U` do not
/// depend on the coupling `c > 0`.
struct CouplingPencil {
    u: DMatrix<f64>,
    k: DMatrix<f64>,
}

impl CouplingPencil {
    fn new(sa: &SpectralAssembly) -> Self {
        let q = sa.q_basis();
        let u = sym(q.transpose() * sa.u() * &q);
        let k = sym(q.transpose() * sa.vg(0) * &q);
        Self { u, k }
    }

    fn eigenvalues(&self, c: f64) -> Vec<f64> {
        sorted_symmetric_eigenvalues(&self.u + &self.k * c)
    }

    fn sample(&self, c: f64) -> ScanSample {
        let e = self.eigenvalues(c);
        let sigma_min = e.iter().fold(f64::INFINITY, |a, x| a.min(x.abs()));
        let sigma_max = e.iter().fold(0.0, |a: f64, x| a.max(x.abs()));
        ScanSample { c, sigma_min, sigma_max, negative: e.iter().filter(|&&x| x < 0.0).count() }
    }
}

/// Scan `σ_min(QTQ)` over `c ∈ [c_min, c_max]`, bracket every change of the
/// negative-eigenvalue count by bisection and polish the crossing.
pub fn coupling_scan(
    base: &Potential,
    grid: &QuadratureGrid,
    c_min: f64,
    c_max: f64,
    steps: usize,
    rel_tol: f64,
) -> Result<CouplingScan> {
    if !(c_min > 0.0) || !(c_max > c_min) || !c_max.is_finite() {
        return Err(invalid(format!("coupling range must satisfy 0 < c_min < c_max, got [{c_min}, {c_max}]")));
    }
    if steps < 8 {
        return Err(invalid(format!("a coupling scan needs at least 8 steps, got {steps}")));
    }
    let sa = assemble_spectral(&base.with_coupling(1.0), grid)?;
    let pencil = CouplingPencil::new(&sa);
    let cs: Vec<f64> = (0..steps).map(|k| c_min + (c_max - c_min) * k as f64 / (steps - 1) as f64).collect();
    let samples: Vec<ScanSample> = cs.par_iter().map(|&c| pencil.sample(c)).collect();
    let mut roots = Vec::new();
    for w in samples.windows(2) {
        if w[0].negative == w[1].negative {
            continue;
        }
        let (mut lo, mut hi) = (w[0], w[1]);
        while (hi.c - lo.c) > 1e-4 * hi.c.abs() {
            let mid = pencil.sample(0.5 * (lo.c + hi.c));
            if mid.negative == lo.negative {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        // Track the eigenvalue that changes sign: index `negative - 1` when
        // the count drops, index `negative` when it grows.
        let idx = if hi.negative < lo.negative { lo.negative - 1 } else { lo.negative };
        let g = |c: f64| pencil.eigenvalues(c)[idx];
        let coupling = brent(g, lo.c, hi.c, 4.0 * f64::EPSILON * hi.c, 100);
        let at = pencil.sample(coupling);
        roots.push(ScanRoot { lower: lo.c, upper: hi.c, coupling, sigma_ratio: at.sigma_min / at.sigma_max });
    }
    // Dips that touch zero without a sign change (a double crossing or a
    // sample landing on the root).
    for s in &samples {
        let ratio = s.sigma_min / s.sigma_max;
        if ratio <= rel_tol && !roots.iter().any(|r| r.lower <= s.c && s.c <= r.upper) {
            roots.push(ScanRoot { lower: s.c, upper: s.c, coupling: s.c, sigma_ratio: ratio });
        }
    }
    roots.sort_by(|a, b| a.coupling.total_cmp(&b.coupling));
    Ok(CouplingScan { samples, roots })
}

/// Brent's root finder on a sign-changing bracket.
pub(crate) fn brent<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64, max_iter: usize) -> f64 {
    let (mut a, mut b) = (a, b);
    let (mut fa, mut fb) = (f(a), f(b));
    if fa == 0.0 {
        return a;
    }
    if fb == 0.0 || fa.signum() == fb.signum() {
        return b;
    }
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for _ in 0..max_iter {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * tol;
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol1 || fb == 0.0 {
            return b;
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            if 2.0 * p < (3.0 * xm * q - (tol1 * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol1 { d } else { tol1 * xm.signum() };
        fb = f(b);
    }
    b
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::build_box_grid;

    fn grid() -> QuadratureGrid {
        build_box_grid(4.0, 6).unwrap()
    }

    #[test]
    fn ranks_determine_label() {
        assert_eq!(Classification::from_ranks(0, 0, 0), Classification::Regular);
        assert_eq!(Classification::from_ranks(2, 0, 0), Classification::FirstKind);
        assert_eq!(Classification::from_ranks(2, 1, 0), Classification::SecondKind);
        assert_eq!(Classification::from_ranks(3, 2, 1), Classification::ThirdKind);
    }

    #[test]
    fn weak_well_is_regular_with_vacuous_residuals() {
        let sa = assemble_spectral(&Potential::gaussian_well(-0.2, 1.0), &grid()).unwrap();
        let r = classify(&sa, 1e-8).unwrap();
        assert_eq!(r.classification, Classification::Regular);
        assert_eq!(r.ranks, Ranks::default());
        for (name, v) in &r.residuals {
            assert_eq!(*v, 0.0, "{name}");
        }
        assert!(r.resonance_functions.is_empty());
        assert!(reconstruct_resonance_function(&vec![1.0; sa.dim()], &sa, Classification::Regular).is_err());
    }

    #[test]
    fn brent_finds_cubic_root() {
        let r = brent(|x| x * x * x - 2.0, 0.0, 2.0, 1e-15, 100);
        assert!((r - 2f64.cbrt()).abs() < 1e-14);
    }

    #[test]
    fn scan_rejects_bad_ranges() {
        let v = Potential::gaussian_well(-1.0, 1.0);
        assert!(coupling_scan(&v, &grid(), 0.0, 1.0, 10, 1e-8).is_err());
        assert!(coupling_scan(&v, &grid(), 1.0, 2.0, 4, 1e-8).is_err());
    }

    #[test]
    fn scanned_root_is_first_kind() {
        let v = Potential::gaussian_well(-1.0, 1.0);
        let g = grid();
        let scan = coupling_scan(&v, &g, 0.5, 40.0, 24, 1e-8).unwrap();
        assert!(!scan.roots.is_empty(), "{:?}", scan.samples);
        let root = scan.roots[0];
        assert!(root.sigma_ratio < 1e-12, "{root:?}");
        let sa = assemble_spectral(&v.with_coupling(root.coupling), &g).unwrap();
        let r = classify(&sa, 1e-8).unwrap();
        assert_eq!(r.classification, Classification::FirstKind);
        assert!(r.residuals["qts1"] <= 1e-7);
        assert!(r.residuals["s1_d0_identity"] <= 1e-8);
        for f in &r.resonance_functions {
            assert!(f.residual <= 1e-6);
        }
        assert!(scan.to_csv().starts_with("c,sigma_min,sigma_max\n"));
    }

    #[test]
    fn report_json_round_trips() {
        let sa = assemble_spectral(&Potential::gaussian_well(-0.2, 1.0), &grid()).unwrap();
        let r = classify(&sa, 1e-8).unwrap();
        let s = serde_json::to_string(&r).unwrap();
        let back: ResonanceReport = serde_json::from_str(&s).unwrap();
        assert_eq!(serde_json::to_string(&back).unwrap(), s);
    }
}
