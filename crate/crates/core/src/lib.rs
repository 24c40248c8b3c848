//! Numerical laboratory for the three-dimensional beam operator `H = Δ² + V`.
//!
//! The crate discretizes the Birman–Schwinger family `M(λ) = U + v R₀(λ⁴) v`
//! on tensor Gauss–Legendre grids, classifies the zero-energy threshold
//! (regular point or resonance of the first, second or third kind), and
//! evaluates the wave propagators `cos(t√H)` and `sin(t√H)/√H` through
//! Stone's formula with a dyadic (Littlewood–Paley) oscillatory quadrature.
//!
//! Module map:
//! - [`quadrature`]: box grids, weighted inner products, 1D adaptive rules.
//! - [`potential`]: test potentials and the `V = U v²` factorization.
//! - [`freekernel`]: closed-form free resolvent kernels and profile functions.
//! - [`opalg`]: dense Nyström operators, projections, Feshbach inversion.
//! - [`birman`]: `M(λ)`, `T`, `P`, `Q` and low-energy expansion diagnostics.
//! - [`resonance`]: the `S₁ ⊇ S₂ ⊇ S₃` ladder, classification and scans.
//! - [`stone`]: dyadic panels, Θ envelope, free/perturbed propagator kernels.
//! - [`decay`]: sup-norm time scans and power-law fits.
//! - [`config`]: run configuration shared with the command-line driver.
//! - [`cli`]: subcommand orchestration and exit codes.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod birman;
pub mod cli;
pub mod config;
pub mod decay;
pub mod error;
pub mod freekernel;
pub mod opalg;
pub mod potential;
pub mod quadrature;
pub mod resonance;
pub mod stone;

pub use error::{Error, Result};
pub use num_complex::Complex64;

/// A point of ℝ³.
pub type Point = [f64; 3];

pub(crate) fn dist(x: &Point, y: &Point) -> f64 {
    let d = [x[0] - y[0], x[1] - y[1], x[2] - y[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

pub(crate) fn norm3(x: &Point) -> f64 {
    (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt()
}
