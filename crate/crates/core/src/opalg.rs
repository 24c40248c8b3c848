//! Dense operator algebra in the symmetrized Nyström basis.
//!
//! A grid function `f` is stored as `f̃_j = f(x_j) √w_j`, so the `L²` inner
//! product is the Euclidean one and integral operators become
//! `√w_i K(x_i, x_j) √w_j`. Multiplication operators are plain diagonals.
//!
//! Summation order: assembly fills rows independently (one task per row), and
//! every reduction is a sequential loop over ascending indices, so results are
//! bitwise identical for any thread count.

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::quadrature::QuadratureGrid;
use crate::Point;

/// Relative threshold used by [`null_space_projection`] unless configured.
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

/// Dense complex operator on the symmetrized grid basis.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelOperator {
    pub matrix: DMatrix<Complex64>,
}

impl KernelOperator {
    pub fn new(matrix: DMatrix<Complex64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(invalid(format!("operators must be square, got {}x{}", matrix.nrows(), matrix.ncols())));
        }
        Ok(Self { matrix })
    }

    pub fn from_real(m: &DMatrix<f64>) -> Self {
        Self { matrix: m.map(|x| Complex64::new(x, 0.0)) }
    }

    pub fn identity(n: usize) -> Self {
        Self { matrix: DMatrix::identity(n, n) }
    }

    pub fn zeros(n: usize) -> Self {
        Self { matrix: DMatrix::zeros(n, n) }
    }

    /// Multiplication by a real function (no weights enter).
    pub fn diagonal(values: &[f64]) -> Self {
        let d = DVector::from_iterator(values.len(), values.iter().map(|&x| Complex64::new(x, 0.0)));
        Self { matrix: DMatrix::from_diagonal(&d) }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn check_dim(&self, n: usize) -> Result<()> {
        if n != self.dim() {
            return Err(invalid(format!("dimension mismatch: {} vs {}", self.dim(), n)));
        }
        Ok(())
    }

    pub fn apply(&self, f: &[Complex64]) -> Result<Vec<Complex64>> {
        self.check_dim(f.len())?;
        let x = DVector::from_column_slice(f);
        Ok((&self.matrix * x).as_slice().to_vec())
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &KernelOperator) -> Result<KernelOperator> {
        self.check_dim(other.dim())?;
        Ok(Self { matrix: complex_mul(&self.matrix, &other.matrix) })
    }

    pub fn adjoint(&self) -> KernelOperator {
        Self { matrix: self.matrix.adjoint() }
    }

    pub fn add(&self, other: &KernelOperator) -> Result<KernelOperator> {
        self.check_dim(other.dim())?;
        Ok(Self { matrix: &self.matrix + &other.matrix })
    }

    pub fn sub(&self, other: &KernelOperator) -> Result<KernelOperator> {
        self.check_dim(other.dim())?;
        Ok(Self { matrix: &self.matrix - &other.matrix })
    }

    pub fn scale(&self, c: Complex64) -> KernelOperator {
        Self { matrix: &self.matrix * c }
    }

    /// The real part, if every imaginary part is exactly zero.
    pub fn as_real(&self) -> Option<DMatrix<f64>> {
        if self.matrix.iter().all(|z| z.im == 0.0) {
            Some(self.matrix.map(|z| z.re))
        } else {
            None
        }
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        let n = self.dim();
        let scale = self.matrix.iter().map(|z| z.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        for i in 0..n {
            for j in 0..=i {
                if (self.matrix[(i, j)] - self.matrix[(j, i)].conj()).norm() > tol * scale {
                    return false;
                }
            }
        }
        true
    }

    /// Singular values, descending.
    ///
    /// Real and Hermitian inputs go through the cheaper real SVD or the
    /// Hermitian eigensolver.
    pub fn singular_values(&self) -> Vec<f64> {
        let mut s: Vec<f64> = if let Some(r) = self.as_real() {
            if r == r.transpose() {
                SymmetricEigen::new(r).eigenvalues.iter().map(|x| x.abs()).collect()
            } else {
                SVD::new(r, false, false).singular_values.as_slice().to_vec()
            }
        } else if self.is_hermitian(0.0) {
            SymmetricEigen::new(self.matrix.clone()).eigenvalues.iter().map(|x| x.abs()).collect()
        } else {
            complex_singular_values(&self.matrix)
        };
        s.sort_by(|a, b| b.total_cmp(a));
        s
    }

    /// Spectral norm of the entrywise absolute value `|A|`.
    pub fn absolute_norm(&self) -> f64 {
        let a = self.matrix.map(|z| z.norm());
        SVD::new(a, false, false).singular_values.max()
    }

    /// Dense inverse by LU.
    pub fn inverse(&self) -> Result<KernelOperator> {
        lu_inverse(&self.matrix)
            .map(|matrix| Self { matrix })
            .ok_or_else(|| Error::PreconditionViolation("operator is numerically singular".into()))
    }
}

/// LU inverse with a pivot-growth singularity check.
pub(crate) fn lu_inverse(m: &DMatrix<Complex64>) -> Option<DMatrix<Complex64>> {
    let lu = ComplexLu::new(m);
    if lu.is_singular() {
        return None;
    }
    let x = lu.solve(&DMatrix::identity(m.nrows(), m.nrows()));
    x.iter().all(|z| z.re.is_finite() && z.im.is_finite()).then_some(x)
}

/// Partial-pivoting LU of a dense complex matrix (blocked, via faer).
pub struct ComplexLu {
    lu: faer::linalg::solvers::PartialPivLu<Complex64>,
}

impl ComplexLu {
    pub fn new(m: &DMatrix<Complex64>) -> Self {
        Self::from_fn(m.nrows(), |i, j| m[(i, j)])
    }

    /// Factor the `n × n` matrix with entries `f(i, j)` without an
    /// intermediate copy.
    pub fn from_fn(n: usize, f: impl FnMut(usize, usize) -> Complex64) -> Self {
        Self { lu: faer::Mat::from_fn(n, n, f).partial_piv_lu() }
    }

    pub fn dim(&self) -> usize {
        self.lu.U().nrows()
    }

    /// A pivot below `1e-14` of the largest one, or an all-zero `U`.
    pub fn is_singular(&self) -> bool {
        let u = self.lu.U();
        let diag: Vec<f64> = (0..u.nrows()).map(|i| u[(i, i)].norm()).collect();
        let big = diag.iter().cloned().fold(0.0, f64::max);
        big == 0.0 || diag.iter().any(|&d| !(d > 1e-14 * big))
    }

    pub fn solve(&self, b: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        use faer::linalg::solvers::Solve;
        let mut x = faer::Mat::from_fn(b.nrows(), b.ncols(), |i, j| b[(i, j)]);
        self.lu.solve_in_place(x.as_mut());
        DMatrix::from_fn(b.nrows(), b.ncols(), |i, j| x[(i, j)])
    }
}

/// Singular values of a dense complex matrix, descending.
pub fn complex_singular_values(m: &DMatrix<Complex64>) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    let a = faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)]);
    let mut s = match a.singular_values() {
        Ok(s) => s,
        // Fall back to the slower but unconditional nalgebra path.
        Err(_) => SVD::new(m.clone(), false, false).singular_values.as_slice().to_vec(),
    };
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

pub fn operator_norm(a: &KernelOperator) -> f64 {
    a.singular_values().first().copied().unwrap_or(0.0)
}

pub fn smallest_singular(a: &KernelOperator) -> f64 {
    a.singular_values().last().copied().unwrap_or(0.0)
}

/// Symmetrized Nyström matrix `√w_i K(x_i, x_j) √w_j`.
pub fn assemble_nystrom<K>(kernel: K, grid: &QuadratureGrid) -> Result<KernelOperator>
where
    K: Fn(&Point, &Point) -> Complex64 + Sync,
{
    let n = grid.len();
    let sw = grid.sqrt_weights();
    let rows: Vec<std::result::Result<Vec<Complex64>, usize>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut row = Vec::with_capacity(n);
            for j in 0..n {
                let k = kernel(&grid.nodes[i], &grid.nodes[j]);
                if !k.re.is_finite() || !k.im.is_finite() {
                    return Err(j);
                }
                row.push(k * (sw[i] * sw[j]));
            }
            Ok(row)
        })
        .collect();
    let mut m = DMatrix::zeros(n, n);
    for (i, row) in rows.into_iter().enumerate() {
        let row = row.map_err(|col| Error::Assembly { row: i, col })?;
        for (j, z) in row.into_iter().enumerate() {
            m[(i, j)] = z;
        }
    }
    Ok(KernelOperator { matrix: m })
}

/// Orthogonal projection, stored through an orthonormal basis of its range.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    /// `n × rank`, orthonormal columns.
    pub basis: DMatrix<Complex64>,
}

impl Projection {
    pub fn zero(n: usize) -> Self {
        Self { basis: DMatrix::zeros(n, 0) }
    }

    /// Projection onto the span of the columns, dropping directions whose
    /// singular value is below `1e-12` of the largest.
    pub fn from_span(vectors: &DMatrix<Complex64>) -> Self {
        let n = vectors.nrows();
        if vectors.ncols() == 0 {
            return Self::zero(n);
        }
        let svd = SVD::new(vectors.clone(), true, false);
        let u = svd.u.expect("left singular vectors requested");
        let smax = svd.singular_values.max();
        if smax == 0.0 {
            return Self::zero(n);
        }
        let keep: Vec<usize> =
            (0..svd.singular_values.len()).filter(|&k| svd.singular_values[k] > 1e-12 * smax).collect();
        Self { basis: u.select_columns(&keep) }
    }

    /// `v ⟨v, ·⟩ / ‖v‖²`.
    pub fn rank_one(v: &[Complex64]) -> Result<Self> {
        let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(invalid("rank-one projection onto the zero vector"));
        }
        Ok(Self { basis: DMatrix::from_iterator(v.len(), 1, v.iter().map(|z| z / norm)) })
    }

    pub fn from_real_basis(basis: &DMatrix<f64>) -> Self {
        Self { basis: basis.map(|x| Complex64::new(x, 0.0)) }
    }

    pub fn dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    pub fn matrix(&self) -> DMatrix<Complex64> {
        &self.basis * self.basis.adjoint()
    }

    pub fn as_operator(&self) -> KernelOperator {
        KernelOperator { matrix: self.matrix() }
    }

    pub fn trace(&self) -> f64 {
        self.basis.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn apply(&self, f: &[Complex64]) -> Result<Vec<Complex64>> {
        if f.len() != self.dim() {
            return Err(invalid("dimension mismatch in projection"));
        }
        let x = DVector::from_column_slice(f);
        let c = self.basis.adjoint() * x;
        Ok((&self.basis * c).as_slice().to_vec())
    }
}

/// Projection onto the right singular directions with `σ ≤ rel_tol·σ_max`.
pub fn null_space_projection(a: &KernelOperator, rel_tol: f64) -> Result<Projection> {
    if !(rel_tol > 0.0 && rel_tol < 1.0) {
        return Err(invalid(format!("rank tolerance must lie in (0, 1), got {rel_tol}")));
    }
    let n = a.dim();
    if let Some(r) = a.as_real() {
        if r == r.transpose() {
            let (vals, vecs) = sorted_symmetric_eigen(r);
            let smax = vals.iter().map(|x| x.abs()).fold(0.0, f64::max);
            if smax == 0.0 {
                return Err(Error::DegenerateOperator);
            }
            let keep: Vec<usize> = (0..n).filter(|&k| vals[k].abs() <= rel_tol * smax).collect();
            return Ok(Projection::from_real_basis(&vecs.select_columns(&keep)));
        }
    }
    // Right singular vectors of A are the left ones of A*.
    let svd = SVD::new(a.matrix.adjoint(), true, false);
    let u = svd.u.expect("left singular vectors requested");
    let s = &svd.singular_values;
    let smax = s.max();
    if smax == 0.0 {
        return Err(Error::DegenerateOperator);
    }
    let keep: Vec<usize> = (0..s.len()).filter(|&k| s[k] <= rel_tol * smax).collect();
    Ok(Projection { basis: u.select_columns(&keep) })
}

/// Outcome of a Schur-complement inversion.
#[derive(Debug, Clone)]
pub enum Feshbach {
    Inverse(KernelOperator),
    /// `a = S - S(A+S)⁻¹S` is singular on the range of `S`.
    NonInvertible {
        sigma_min: f64,
    },
}

impl Feshbach {
    pub fn inverse(self) -> Option<KernelOperator> {
        match self {
            Feshbach::Inverse(x) => Some(x),
            Feshbach::NonInvertible { .. } => None,
        }
    }
}

/// `A⁻¹ = (A+S)⁻¹ + (A+S)⁻¹ S a⁻¹ S (A+S)⁻¹` with `a = S - S(A+S)⁻¹S`
/// inverted on the range of `S`.
pub fn feshbach_inverse(a: &KernelOperator, s: &Projection) -> Result<Feshbach> {
    a.check_dim(s.dim())?;
    let sum = &a.matrix + s.matrix();
    let x = lu_inverse(&sum).ok_or_else(|| Error::PreconditionViolation("A + S is numerically singular".into()))?;
    let k = s.rank();
    if k == 0 {
        return Ok(Feshbach::Inverse(KernelOperator { matrix: x }));
    }
    let b = &s.basis;
    let inner = b.adjoint() * &x * b;
    let small = DMatrix::<Complex64>::identity(k, k) - &inner;
    let sv = SVD::new(small.clone(), false, false).singular_values;
    let sigma_min = sv.min();
    let scale = 1.0f64.max(SVD::new(inner, false, false).singular_values.max());
    if sigma_min <= 1e-10 * scale {
        return Ok(Feshbach::NonInvertible { sigma_min });
    }
    let small_inv = lu_inverse(&small).ok_or(Feshbach::NonInvertible { sigma_min }).ok();
    let Some(small_inv) = small_inv else {
        return Ok(Feshbach::NonInvertible { sigma_min });
    };
    let xb = &x * b;
    let bx = b.adjoint() * &x;
    let correction = &xb * small_inv * bx;
    Ok(Feshbach::Inverse(KernelOperator { matrix: x + correction }))
}

/// Real symmetric eigen-decomposition with eigenvalues ascending.
pub fn sorted_symmetric_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m);
    let n = eig.eigenvalues.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = idx.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vecs = eig.eigenvectors.select_columns(&idx);
    (vals, vecs)
}

/// Eigenvalues of a real symmetric matrix, ascending, without eigenvectors.
pub fn sorted_symmetric_eigenvalues(m: DMatrix<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = m.symmetric_eigenvalues().as_slice().to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Orthonormal basis (`n × (n-1)`) of the orthogonal complement of `v`,
/// taken from the Householder reflector that maps `e₁` to `v/‖v‖`.
pub fn complement_basis(v: &[f64]) -> Result<DMatrix<f64>> {
    let n = v.len();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(invalid("complement of the zero vector"));
    }
    let mut w: Vec<f64> = v.iter().map(|x| x / norm).collect();
    // H = I - 2uuᵀ with u ∝ e₁ - v̂ (sign chosen to avoid cancellation).
    let s = if w[0] > 0.0 { -1.0 } else { 1.0 };
    w[0] += -s;
    let wn = w.iter().map(|x| x * x).sum::<f64>().sqrt();
    let u: Vec<f64> = w.iter().map(|x| x / wn).collect();
    let mut b = DMatrix::zeros(n, n - 1);
    for c in 1..n {
        for r in 0..n {
            let id = if r == c { 1.0 } else { 0.0 };
            b[(r, c - 1)] = id - 2.0 * u[r] * u[c];
        }
    }
    Ok(b)
}

/// Inverse of a real symmetric matrix on the orthogonal complement of its
/// numerical null space, with the identity on the null space:
/// `(A + S)⁻¹` for `S` the null projection. Returns `(inverse, null basis,
/// eigenvalues)`. Eigenvalues with `|μ| ≤ threshold` count as null.
pub fn symmetric_shifted_inverse(m: DMatrix<f64>, threshold: f64) -> (DMatrix<f64>, DMatrix<f64>, Vec<f64>) {
    let (vals, vecs) = sorted_symmetric_eigen(m);
    let null: Vec<usize> = (0..vals.len()).filter(|&k| vals[k].abs() <= threshold).collect();
    let mut scaled = vecs.clone();
    for (k, mut col) in scaled.column_iter_mut().enumerate() {
        let d = if null.contains(&k) { 1.0 } else { 1.0 / vals[k] };
        col *= d;
    }
    let inv = &scaled * vecs.transpose();
    (inv, vecs.select_columns(&null), vals)
}

/// Spectral norm of a tall real matrix through its small Gram matrix.
pub fn tall_norm(m: &DMatrix<f64>) -> f64 {
    if m.ncols() == 0 || m.nrows() == 0 {
        return 0.0;
    }
    let g = m.transpose() * m;
    g.symmetric_eigenvalues().max().max(0.0).sqrt()
}

/// Complex product through four real products, which use the blocked real
/// kernel instead of the generic complex loop.
pub fn complex_mul(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let (ar, ai) = (a.map(|z| z.re), a.map(|z| z.im));
    let (br, bi) = (b.map(|z| z.re), b.map(|z| z.im));
    let re = &ar * &br - &ai * &bi;
    let im = &ar * &bi + &ai * &br;
    re.zip_map(&im, Complex64::new)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::build_box_grid;

    fn complex_identity(n: usize) -> DMatrix<Complex64> {
        DMatrix::from_fn(n, n, |i, j| if i == j { c(1.0) } else { c(0.0) })
    }

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn diag(d: &[f64]) -> KernelOperator {
        KernelOperator::diagonal(d)
    }

    fn axis(n: usize, k: usize) -> Projection {
        let mut e = vec![c(0.0); n];
        e[k] = c(1.0);
        Projection::rank_one(&e).unwrap()
    }

    fn pseudo_random(n: usize, seed: u64) -> DMatrix<Complex64> {
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        DMatrix::from_fn(n, n, |_, _| Complex64::new(next(), next()))
    }

    #[test]
    fn constant_kernel_gives_volume() {
        let g = build_box_grid(1.5, 4).unwrap();
        let k = assemble_nystrom(|_, _| c(1.0), &g).unwrap();
        // Constant function 1 is stored as √w.
        let one: Vec<Complex64> = g.sqrt_weights().iter().map(|&s| c(s)).collect();
        let out = k.apply(&one).unwrap();
        for (o, s) in out.iter().zip(g.sqrt_weights()) {
            assert!((o / s - c(27.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn rank_one_kernel_is_a_projection() {
        let g = build_box_grid(2.0, 5).unwrap();
        let v = |x: &Point| (-(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]) / 2.0).exp();
        let vs: Vec<f64> = g.sample(v);
        let l1: f64 = vs.iter().zip(&g.weights).map(|(a, w)| a * a * w).sum();
        let k = assemble_nystrom(|x, y| c(v(x) * v(y) / l1), &g).unwrap();
        let vt: Vec<Complex64> = vs.iter().zip(g.sqrt_weights()).map(|(a, s)| c(a * s)).collect();
        let pv = k.apply(&vt).unwrap();
        for (a, b) in pv.iter().zip(&vt) {
            assert!((a - b).norm() < 1e-12);
        }
        let k2 = k.compose(&k).unwrap();
        assert!((&k2.matrix - &k.matrix).norm() < 1e-12);
    }

    #[test]
    fn non_finite_kernel_names_the_pair() {
        let g = build_box_grid(1.0, 2).unwrap();
        let err = assemble_nystrom(|x, y| if x == y { c(f64::NAN) } else { c(1.0) }, &g).unwrap_err();
        assert!(matches!(err, Error::Assembly { row: 0, col: 0 }));
    }

    #[test]
    fn adjoint_matches_conjugate_transposed_kernel() {
        let g = build_box_grid(1.0, 3).unwrap();
        let k = |x: &Point, y: &Point| Complex64::new(x[0] + 2.0 * y[1], x[2] * y[0] - y[2]);
        let kt = |x: &Point, y: &Point| k(y, x).conj();
        let a = assemble_nystrom(k, &g).unwrap();
        let b = assemble_nystrom(kt, &g).unwrap();
        assert_eq!(a.adjoint(), b);
        assert_eq!(a.adjoint().adjoint(), a);
    }

    #[test]
    fn null_space_of_diag() {
        let p = null_space_projection(&diag(&[0.0, 2.0]), 1e-8).unwrap();
        assert_eq!(p.rank(), 1);
        assert!((p.basis[(0, 0)].norm() - 1.0).abs() < 1e-14);
        assert!(matches!(null_space_projection(&diag(&[0.0, 0.0]), 1e-8), Err(Error::DegenerateOperator)));
    }

    #[test]
    fn full_rank_hermitian_has_trivial_null_space() {
        let m = pseudo_random(12, 3);
        let h = KernelOperator { matrix: &m + m.adjoint() };
        let p = null_space_projection(&h, 1e-8).unwrap();
        assert_eq!(p.rank(), 0);
        let direct = SVD::new(h.matrix.clone(), false, false).singular_values.min();
        assert!((smallest_singular(&h) - direct).abs() < 1e-12);
    }

    #[test]
    fn rank_is_monotone_in_tolerance() {
        let a = diag(&[1e-9, 1e-6, 1e-3, 1.0]);
        let ranks: Vec<usize> =
            [0.5, 1e-2, 1e-4, 1e-7, 1e-10].iter().map(|&t| null_space_projection(&a, t).unwrap().rank()).collect();
        assert_eq!(ranks, vec![3, 3, 2, 1, 0]);
    }

    #[test]
    fn feshbach_on_diagonals() {
        let x = feshbach_inverse(&diag(&[3.0, 2.0]), &axis(2, 0)).unwrap().inverse().unwrap();
        assert!((x.matrix[(0, 0)] - c(1.0 / 3.0)).norm() < 1e-15);
        assert!((x.matrix[(1, 1)] - c(0.5)).norm() < 1e-15);
        assert!(x.matrix[(0, 1)].norm() < 1e-15);
        let flag = feshbach_inverse(&diag(&[0.0, 2.0]), &axis(2, 0)).unwrap();
        assert!(matches!(flag, Feshbach::NonInvertible { .. }));
    }

    #[test]
    fn feshbach_rejects_singular_shift() {
        // A + S = diag(0, 2) + 0 with S = 0.
        let err = feshbach_inverse(&diag(&[0.0, 2.0]), &Projection::zero(2)).unwrap_err();
        assert!(matches!(err, Error::PreconditionViolation(_)));
    }

    #[test]
    fn feshbach_matches_dense_inverse() {
        let a = KernelOperator { matrix: pseudo_random(50, 11) + complex_identity(50) * c(2.0) };
        let s = Projection::from_span(&pseudo_random(50, 12).columns(0, 3).into_owned());
        assert_eq!(s.rank(), 3);
        let x = feshbach_inverse(&a, &s).unwrap().inverse().unwrap();
        let direct = a.inverse().unwrap();
        assert!((&x.matrix - &direct.matrix).norm() / direct.matrix.norm() < 1e-10);
    }

    #[test]
    fn split_product_matches_direct() {
        let a = pseudo_random(9, 1);
        let b = DMatrix::from_fn(9, 4, |i, j| Complex64::new(i as f64 - j as f64, 0.5 * j as f64));
        assert!((complex_mul(&a, &b) - &a * &b).norm() < 1e-13);
    }

    #[test]
    fn norms_of_simple_operators() {
        assert_eq!(operator_norm(&diag(&[3.0, 2.0])), 3.0);
        assert_eq!(smallest_singular(&diag(&[3.0, 2.0])), 2.0);
        let p = Projection::from_span(&pseudo_random(8, 5).columns(0, 2).into_owned());
        assert!((operator_norm(&p.as_operator()) - 1.0).abs() < 1e-12);
        assert!((p.trace() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn complement_basis_is_orthonormal_and_orthogonal() {
        let v = [3.0, -1.0, 0.5, 2.0];
        let b = complement_basis(&v).unwrap();
        let g = b.transpose() * &b;
        assert!((g - DMatrix::<f64>::identity(3, 3)).norm() < 1e-14);
        let vv = DVector::from_column_slice(&v);
        assert!((b.transpose() * vv).norm() < 1e-14);
    }

    #[test]
    fn shifted_inverse_fixes_null_space() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 2.0, -4.0]));
        let (inv, null, _) = symmetric_shifted_inverse(m, 1e-8 * 4.0);
        assert_eq!(null.ncols(), 1);
        assert!((inv[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((inv[(1, 1)] - 0.5).abs() < 1e-15);
        assert!((inv[(2, 2)] + 0.25).abs() < 1e-15);
    }
}
