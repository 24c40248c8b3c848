//! Birman–Schwinger operators `M^±(λ) = U + v R₀^±(λ⁴) v` and the
//! zero-energy data `T = U + v G₀ v`, `P = ‖V‖⁻¹ v⟨v, ·⟩`, `Q = I - P`.
//!
//! Everything lives on the *active* nodes, where `V ≠ 0`: on the remaining
//! nodes `U = v = 0`, so those rows of `M` vanish identically and carry no
//! information about the perturbation.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::freekernel::{free_resolvent_radial, g_kernel, series_coefficient, Sign};
use crate::opalg::{complement_basis, complex_singular_values, ComplexLu, KernelOperator, Projection};
use crate::potential::{decompose_sign_amplitude, Potential};
use crate::quadrature::QuadratureGrid;
use crate::{dist, Point};

/// Default low-energy boundary `λ₀`.
pub const DEFAULT_LAMBDA0: f64 = 0.1;

/// Zero-energy data of a potential on a grid.
#[derive(Debug, Clone)]
pub struct SpectralAssembly {
    pub potential: Potential,
    /// Grid indices of the active nodes.
    pub active: Vec<usize>,
    pub nodes: Vec<Point>,
    pub weights: Vec<f64>,
    /// `U` on the active nodes, entries ±1.
    pub sign: Vec<f64>,
    /// `v = |V|^{1/2}` on the active nodes.
    pub amplitude: Vec<f64>,
    /// `ṽ_j = v_j √w_j`, the symmetrized amplitude.
    pub vt: Vec<f64>,
    /// `‖V‖_{L¹} = Σ ṽ_j²`.
    pub l1: f64,
    /// Node distances `|x_i - x_j|`.
    pub distances: DMatrix<f64>,
    /// `T = U + v G₀ v`, real symmetric.
    pub t: DMatrix<f64>,
    pub p: Projection,
}

pub fn assemble_spectral(potential: &Potential, grid: &QuadratureGrid) -> Result<SpectralAssembly> {
    let sa = decompose_sign_amplitude(potential, grid)?;
    let active: Vec<usize> = (0..grid.len()).filter(|&j| sa.amplitude[j] > 0.0).collect();
    let nodes: Vec<Point> = active.iter().map(|&j| grid.nodes[j]).collect();
    let weights: Vec<f64> = active.iter().map(|&j| grid.weights[j]).collect();
    let sign: Vec<f64> = active.iter().map(|&j| sa.sign[j]).collect();
    let amplitude: Vec<f64> = active.iter().map(|&j| sa.amplitude[j]).collect();
    let vt: Vec<f64> = amplitude.iter().zip(&weights).map(|(v, w)| v * w.sqrt()).collect();
    let l1 = vt.iter().map(|x| x * x).sum();
    let n = nodes.len();
    let distances = DMatrix::from_fn(n, n, |i, j| dist(&nodes[i], &nodes[j]));
    let mut out = SpectralAssembly {
        potential: *potential,
        active,
        nodes,
        weights,
        sign,
        amplitude,
        vt,
        l1,
        distances,
        t: DMatrix::zeros(0, 0),
        p: Projection::zero(n),
    };
    let mut t = out.vg(0);
    for i in 0..n {
        t[(i, i)] += out.sign[i];
    }
    out.t = t;
    let vc: Vec<Complex64> = out.vt.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    out.p = Projection::rank_one(&vc)?;
    Ok(out)
}

impl SpectralAssembly {
    pub fn dim(&self) -> usize {
        self.nodes.len()
    }

    /// `ã^± = a^± ‖V‖_{L¹}`.
    pub fn a_tilde(&self, sign: Sign) -> Complex64 {
        series_coefficient(0, sign).expect("a^± exists") * self.l1
    }

    /// `v G_k v` in the symmetrized basis.
    pub fn vg(&self, k: usize) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::from_fn(n, n, |i, j| self.vt[i] * g_kernel(k, self.distances[(i, j)]) * self.vt[j])
    }

    /// Diagonal `U`.
    pub fn u(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&self.sign))
    }

    /// Orthonormal basis of `Q L²`, `n × (n-1)`.
    pub fn q_basis(&self) -> DMatrix<f64> {
        complement_basis(&self.vt).expect("non-degenerate assembly")
    }

    pub fn q_projection(&self) -> Projection {
        Projection::from_real_basis(&self.q_basis())
    }

    /// Embed an active-node vector into a full grid function (zero elsewhere).
    pub fn embed<T: Copy + Default>(&self, values: &[T], grid_len: usize) -> Vec<T> {
        let mut out = vec![T::default(); grid_len];
        for (k, &j) in self.active.iter().enumerate() {
            out[j] = values[k];
        }
        out
    }

    /// `ṽ_j R₀^±(λ⁴)(x, u_j)`: the column that couples a point to the grid.
    pub fn coupling_column(&self, lambda: f64, x: &Point, sign: Sign) -> Vec<Complex64> {
        self.nodes.iter().zip(&self.vt).map(|(u, v)| free_resolvent_radial(lambda, dist(x, u), sign) * *v).collect()
    }
}

/// `M^±(λ)` in the symmetrized basis.
pub fn assemble_m(sa: &SpectralAssembly, lambda: f64, sign: Sign) -> Result<KernelOperator> {
    check_lambda(lambda)?;
    Ok(KernelOperator { matrix: m_matrix(sa, lambda, sign) })
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(invalid(format!("spectral parameter must be positive, got {lambda}")));
    }
    Ok(())
}

pub(crate) fn m_matrix(sa: &SpectralAssembly, lambda: f64, sign: Sign) -> DMatrix<Complex64> {
    let n = sa.dim();
    let cols: Vec<Vec<Complex64>> =
        (0..n).into_par_iter().map(|j| (0..n).map(|i| m_entry(sa, lambda, sign, i, j)).collect()).collect();
    DMatrix::from_iterator(n, n, cols.into_iter().flatten())
}

fn m_entry(sa: &SpectralAssembly, lambda: f64, sign: Sign, i: usize, j: usize) -> Complex64 {
    let k = free_resolvent_radial(lambda, sa.distances[(i, j)], sign) * (sa.vt[i] * sa.vt[j]);
    if i == j {
        k + sa.sign[i]
    } else {
        k
    }
}

/// LU factorization of `M^±(λ)`; singular pivots become a spectral-singularity
/// error carrying `λ`.
pub fn factor_m(sa: &SpectralAssembly, lambda: f64, sign: Sign) -> Result<ComplexLu> {
    check_lambda(lambda)?;
    let lu = ComplexLu::from_fn(sa.dim(), |i, j| m_entry(sa, lambda, sign, i, j));
    if lu.is_singular() {
        let m = m_matrix(sa, lambda, sign);
        let sigma_min = complex_singular_values(&m).last().copied().unwrap_or(0.0);
        return Err(Error::SpectralSingularity { lambda, sigma_min });
    }
    Ok(lu)
}

/// `M^±(λ)⁻¹`.
pub fn invert_m(sa: &SpectralAssembly, lambda: f64, sign: Sign) -> Result<KernelOperator> {
    let lu = factor_m(sa, lambda, sign)?;
    let n = sa.dim();
    Ok(KernelOperator { matrix: lu.solve(&DMatrix::identity(n, n)) })
}

/// Which truncation of the low-energy expansion of `M^±(λ)` is subtracted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Truncation {
    /// `ã^±/λ · P + T`; the remainder is `O(λ)`.
    Leading,
    /// additionally `a₁^± λ vG₁v`; the remainder is `O(λ³)`.
    WithG1,
}

/// One point of an expansion-order diagnostic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpansionRecord {
    pub lambda: f64,
    pub residual_norm: f64,
    /// Local order from this and the previous record; `None` on the first.
    pub fitted_order: Option<f64>,
}

/// Records plus the least-squares order over all of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionFit {
    pub sign: Sign,
    pub truncation: Truncation,
    pub records: Vec<ExpansionRecord>,
    pub order: f64,
}

/// `‖M^±(λ) - truncation‖` in operator norm.
pub fn expansion_residual(sa: &SpectralAssembly, lambda: f64, sign: Sign, truncation: Truncation) -> Result<f64> {
    check_lambda(lambda)?;
    let mut r = m_matrix(sa, lambda, sign);
    let pm = sa.p.matrix();
    let a = sa.a_tilde(sign) / lambda;
    let g1 = sa.vg(1);
    let a1 = series_coefficient(1, sign).expect("a₁ exists") * lambda;
    let n = sa.dim();
    for j in 0..n {
        for i in 0..n {
            let mut z = r[(i, j)] - pm[(i, j)] * a - sa.t[(i, j)];
            if truncation == Truncation::WithG1 {
                z -= a1 * g1[(i, j)];
            }
            r[(i, j)] = z;
        }
    }
    Ok(KernelOperator { matrix: r }.singular_values()[0])
}

/// Residual norms along `lambdas` and the fitted power of `λ`.
pub fn expansion_orders(
    sa: &SpectralAssembly,
    sign: Sign,
    truncation: Truncation,
    lambdas: &[f64],
) -> Result<ExpansionFit> {
    if lambdas.len() < 2 {
        return Err(invalid("an order fit needs at least two spectral parameters"));
    }
    let norms: Vec<f64> =
        lambdas.par_iter().map(|&l| expansion_residual(sa, l, sign, truncation)).collect::<Result<_>>()?;
    let mut records = Vec::with_capacity(lambdas.len());
    for (k, (&lambda, &residual_norm)) in lambdas.iter().zip(&norms).enumerate() {
        let fitted_order = (k > 0).then(|| (norms[k - 1] / residual_norm).ln() / (lambdas[k - 1] / lambda).ln());
        records.push(ExpansionRecord { lambda, residual_norm, fitted_order });
    }
    let order = log_log_slope(lambdas, &norms).0;
    Ok(ExpansionFit { sign, truncation, records, order })
}

/// `λ_k = start · 2^{-k}`, `k = 0..count`.
pub fn halving_sequence(start: f64, count: usize) -> Vec<f64> {
    (0..count).map(|k| start * 0.5f64.powi(k as i32)).collect()
}

/// Least-squares slope and its standard error for `log y` against `log x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> (f64, f64) {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    linear_fit(&lx, &ly)
}

pub(crate) fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let stderr = if x.len() > 2 {
        let rss: f64 = x
            .iter()
            .zip(y)
            .map(|(a, b)| {
                let e = b - my - slope * (a - mx);
                e * e
            })
            .sum();
        (rss / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    (slope, stderr)
}

/// `‖M^±(λ)⁻¹‖ = 1/σ_min(M^±(λ))` at each `λ`.
pub fn m_inverse_norms(sa: &SpectralAssembly, sign: Sign, lambdas: &[f64]) -> Result<Vec<f64>> {
    lambdas
        .par_iter()
        .map(|&lambda| {
            check_lambda(lambda)?;
            let m = m_matrix(sa, lambda, sign);
            let s = complex_singular_values(&m);
            let (smin, smax) = (s[s.len() - 1], s[0]);
            if smin <= 1e-14 * smax {
                return Err(Error::SpectralSingularity { lambda, sigma_min: smin });
            }
            Ok(1.0 / smin)
        })
        .collect()
}

/// Slope of `log ‖M^±(λ)⁻¹‖` against `log λ`: 0 at a regular point, -1 for a
/// resonance of the first kind, -3 and -4 for the second and third kinds.
pub fn m_inverse_blowup_order(sa: &SpectralAssembly, sign: Sign, lambdas: &[f64]) -> Result<f64> {
    if lambdas.len() < 2 {
        return Err(invalid("a blow-up fit needs at least two spectral parameters"));
    }
    let norms = m_inverse_norms(sa, sign, lambdas)?;
    Ok(log_log_slope(lambdas, &norms).0)
}

/// `λ = 2^{-k}` for `k` in `range`, the default blow-up sweep.
pub fn dyadic_lambdas(range: std::ops::RangeInclusive<i32>) -> Vec<f64> {
    range.map(|k| 2f64.powi(-k)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::build_box_grid;

    fn small() -> SpectralAssembly {
        let g = build_box_grid(3.0, 6).unwrap();
        assemble_spectral(&Potential::gaussian_well(-1.0, 1.0), &g).unwrap()
    }

    #[test]
    fn p_fixes_v_and_q_kills_it() {
        let sa = small();
        let v: Vec<Complex64> = sa.vt.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        let pv = sa.p.apply(&v).unwrap();
        let err: f64 = pv.iter().zip(&v).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        assert!(err < 1e-10);
        let qv = sa.q_basis().transpose() * nalgebra::DVector::from_column_slice(&sa.vt);
        assert!(qv.norm() < 1e-10);
        assert!((sa.p.trace() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn t_minus_u_is_nystrom_of_vg0v() {
        let g = build_box_grid(3.0, 5).unwrap();
        let pot = Potential::gaussian_well(-2.0, 1.0);
        let sa = assemble_spectral(&pot, &g).unwrap();
        let v = |x: &Point| pot.evaluate(x).abs().sqrt();
        let k = crate::opalg::assemble_nystrom(|x, y| Complex64::new(v(x) * g_kernel(0, dist(x, y)) * v(y), 0.0), &g)
            .unwrap();
        let diff = &sa.t - sa.u() - k.matrix.map(|z| z.re);
        assert!(diff.norm() < 1e-13);
    }

    #[test]
    fn adjoint_of_m_plus_is_m_minus() {
        let sa = small();
        for lambda in [0.01, 0.3, 2.0] {
            let p = assemble_m(&sa, lambda, Sign::Plus).unwrap();
            let m = assemble_m(&sa, lambda, Sign::Minus).unwrap();
            assert!((p.adjoint().matrix - m.matrix).norm() < 1e-10);
        }
    }

    #[test]
    fn m_rejects_nonpositive_lambda() {
        let sa = small();
        assert!(matches!(assemble_m(&sa, 0.0, Sign::Plus), Err(Error::InvalidArgument(_))));
        assert!(matches!(invert_m(&sa, -1.0, Sign::Plus), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn degenerate_potential_is_rejected() {
        let g = build_box_grid(2.0, 4).unwrap();
        let err = assemble_spectral(&Potential::gaussian_well(0.0, 1.0), &g).unwrap_err();
        assert!(matches!(err, Error::DegeneratePotential(_)));
    }

    #[test]
    fn tiny_coupling_inverse_is_near_u() {
        let g = build_box_grid(3.0, 5).unwrap();
        let sa = assemble_spectral(&Potential::gaussian_well(1e-8, 1.0), &g).unwrap();
        let x = invert_m(&sa, 0.5, Sign::Plus).unwrap();
        let id = KernelOperator::identity(sa.dim());
        assert!((x.matrix - id.matrix).norm() < 1e-6);
    }

    #[test]
    fn inverse_residual_is_small() {
        let sa = small();
        let m = assemble_m(&sa, 0.4, Sign::Minus).unwrap();
        let x = invert_m(&sa, 0.4, Sign::Minus).unwrap();
        let r = m.compose(&x).unwrap().sub(&KernelOperator::identity(sa.dim())).unwrap();
        assert!(r.matrix.norm() < 1e-8);
    }

    #[test]
    fn expansion_orders_match_lemma() {
        let sa = small();
        let ls = halving_sequence(1e-2, 4);
        for sign in [Sign::Plus, Sign::Minus] {
            let lead = expansion_orders(&sa, sign, Truncation::Leading, &ls).unwrap();
            assert!(lead.order >= 0.9, "{lead:?}");
            let g1 = expansion_orders(&sa, sign, Truncation::WithG1, &ls).unwrap();
            assert!(g1.order >= 2.7, "{g1:?}");
        }
    }

    #[test]
    fn records_round_trip_json() {
        let sa = small();
        let fit = expansion_orders(&sa, Sign::Plus, Truncation::Leading, &halving_sequence(1e-2, 3)).unwrap();
        let s = serde_json::to_string(&fit).unwrap();
        assert!(s.contains("\"fitted_order\":null"));
        let back: ExpansionFit = serde_json::from_str(&s).unwrap();
        assert_eq!(back, fit);
    }

    #[test]
    fn slope_of_exact_power_law() {
        let x = [1.0, 2.0, 4.0, 8.0];
        let y: Vec<f64> = x.iter().map(|t: &f64| 3.0 * t.powf(-1.5)).collect();
        let (s, e) = log_log_slope(&x, &y);
        assert!((s + 1.5).abs() < 1e-12 && e < 1e-10);
    }

    #[test]
    fn regular_well_has_bounded_inverse() {
        let sa = small();
        let order = m_inverse_blowup_order(&sa, Sign::Plus, &dyadic_lambdas(6..=12)).unwrap();
        assert!(order.abs() < 0.2, "{order}");
    }
}
