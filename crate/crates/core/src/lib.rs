//! Numerical laboratory for transport calculus on the unit sphere bundle of
//! two-dimensional Riemannian surfaces.
//!
//! Surfaces are given in isothermal coordinates `ds² = e^{2λ}(dx₁² + dx₂²)` on
//! either the flat-periodic torus or the Euclidean coordinate unit disc.
//! Functions on `SM` are stored as vertical Fourier series `u = Σ u_k(x) e^{ikθ}`
//! and the first-order operators `V`, `X`, `X⊥`, `η±` act on the coefficients.
//!
//! Module map:
//!
//! - [`metric`]: conformal factor, curvature, geodesic flow, exit times.
//! - [`bundle`]: Fourier fields on `SM` and the operators acting on them.
//! - [`identities`]: commutator, Pestov and Guillemin–Kazhdan residuals.
//! - [`beurling`]: minimal-norm Beurling transform and formal invariant distributions.
//! - [`jacobi`]: β-Jacobi fields, conjugate times, Green solutions, index forms.
//! - [`xray`]: geodesic ray transform on the disc, adjoint, Santaló checks.
//! - [`constants`]: closed-form Beurling and threshold constants.
//! - [`runner`]: config-driven experiments and deterministic reports.

pub mod beurling;
pub mod bundle;
pub mod cg;
pub mod constants;
pub mod error;
pub mod identities;
pub mod jacobi;
pub mod metric;
pub mod poly;
pub mod quadrature;
pub mod runner;
pub mod xray;

pub use error::{Error, Result};
pub use num_complex::Complex64;
