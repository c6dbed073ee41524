//! Bivariate polynomials and the ridge basis of the unit disc.
//!
//! [`Poly2`] is a dense complex polynomial in `(x₁, x₂)` with exact
//! differentiation and multiplication. The ridge functions
//! `U_n(x·ω_j) / √π`, `ω_j = (cos jπ/(n+1), sin jπ/(n+1))`, built from Chebyshev
//! polynomials of the second kind, form an orthonormal basis of polynomials on
//! the unit disc and are used both for disc fields and tensor bases.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Sub};

use num_complex::Complex64;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Dense polynomial `Σ c_{ab} x₁^a x₂^b` with `a + b ≤ degree`.
#[derive(Debug, Clone, PartialEq)]
pub struct Poly2 {
    degree: usize,
    // row-major (a, b) with a, b ≤ degree; entries with a + b > degree stay zero
    coeffs: Vec<Complex64>,
}

impl Poly2 {
    pub fn zero(degree: usize) -> Self {
        Self {
            degree,
            coeffs: vec![ZERO; (degree + 1) * (degree + 1)],
        }
    }

    pub fn constant(c: Complex64) -> Self {
        let mut p = Self::zero(0);
        p.coeffs[0] = c;
        p
    }

    /// Builds a polynomial from `(a, b, coefficient)` triples.
    pub fn from_terms(terms: &[(usize, usize, Complex64)]) -> Self {
        let degree = terms.iter().map(|t| t.0 + t.1).max().unwrap_or(0);
        let mut p = Self::zero(degree);
        for &(a, b, c) in terms {
            *p.coeff_mut(a, b) += c;
        }
        p
    }

    pub fn from_real_terms(terms: &[(usize, usize, f64)]) -> Self {
        let t: Vec<_> = terms
            .iter()
            .map(|&(a, b, c)| (a, b, Complex64::new(c, 0.0)))
            .collect();
        Self::from_terms(&t)
    }

    /// `1 - x₁² - x₂²`, the boundary defining function of the disc.
    pub fn bubble() -> Self {
        Self::from_real_terms(&[(0, 0, 1.0), (2, 0, -1.0), (0, 2, -1.0)])
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn coeff(&self, a: usize, b: usize) -> Complex64 {
        if a > self.degree || b > self.degree {
            return ZERO;
        }
        self.coeffs[a * (self.degree + 1) + b]
    }

    fn coeff_mut(&mut self, a: usize, b: usize) -> &mut Complex64 {
        let d = self.degree;
        &mut self.coeffs[a * (d + 1) + b]
    }

    /// Iterates over nonzero `(a, b, c)` terms.
    pub fn terms(&self) -> impl Iterator<Item = (usize, usize, Complex64)> + '_ {
        let d = self.degree;
        (0..=d).flat_map(move |a| {
            (0..=d - a).filter_map(move |b| {
                let c = self.coeff(a, b);
                (c != ZERO).then_some((a, b, c))
            })
        })
    }

    fn with_degree(&self, degree: usize) -> Self {
        let mut p = Self::zero(degree);
        for (a, b, c) in self.terms() {
            *p.coeff_mut(a, b) = c;
        }
        p
    }

    pub fn eval(&self, x1: f64, x2: f64) -> Complex64 {
        let d = self.degree;
        let mut acc = ZERO;
        for a in (0..=d).rev() {
            let mut inner = ZERO;
            for b in (0..=d - a).rev() {
                inner = inner * x2 + self.coeff(a, b);
            }
            acc = acc * x1 + inner;
        }
        acc
    }

    pub fn eval_re(&self, x1: f64, x2: f64) -> f64 {
        self.eval(x1, x2).re
    }

    pub fn dx1(&self) -> Self {
        let d = self.degree.max(1);
        let mut p = Self::zero(d - 1);
        for (a, b, c) in self.terms() {
            if a > 0 {
                *p.coeff_mut(a - 1, b) += c * a as f64;
            }
        }
        p
    }

    pub fn dx2(&self) -> Self {
        let d = self.degree.max(1);
        let mut p = Self::zero(d - 1);
        for (a, b, c) in self.terms() {
            if b > 0 {
                *p.coeff_mut(a, b - 1) += c * b as f64;
            }
        }
        p
    }

    /// `∂/∂z = ½(∂₁ − i∂₂)`.
    pub fn dz(&self) -> Self {
        (self.dx1() - self.dx2().scale(Complex64::i())).scale(Complex64::new(0.5, 0.0))
    }

    /// `∂/∂z̄ = ½(∂₁ + i∂₂)`.
    pub fn dzbar(&self) -> Self {
        (self.dx1() + self.dx2().scale(Complex64::i())).scale(Complex64::new(0.5, 0.0))
    }

    pub fn laplacian(&self) -> Self {
        self.dx1().dx1() + self.dx2().dx2()
    }

    pub fn scale(&self, s: Complex64) -> Self {
        Self {
            degree: self.degree,
            coeffs: self.coeffs.iter().map(|c| c * s).collect(),
        }
    }

    pub fn conj(&self) -> Self {
        Self {
            degree: self.degree,
            coeffs: self.coeffs.iter().map(|c| c.conj()).collect(),
        }
    }

    /// Largest coefficient modulus.
    pub fn max_abs_coeff(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }
}

impl Add for Poly2 {
    type Output = Poly2;
    fn add(self, rhs: Poly2) -> Poly2 {
        &self + &rhs
    }
}

impl Add<&Poly2> for &Poly2 {
    type Output = Poly2;
    fn add(self, rhs: &Poly2) -> Poly2 {
        let d = self.degree.max(rhs.degree);
        let mut p = self.with_degree(d);
        for (a, b, c) in rhs.terms() {
            *p.coeff_mut(a, b) += c;
        }
        p
    }
}

impl Sub for Poly2 {
    type Output = Poly2;
    fn sub(self, rhs: Poly2) -> Poly2 {
        &self + &rhs.scale(Complex64::new(-1.0, 0.0))
    }
}

impl Mul<&Poly2> for &Poly2 {
    type Output = Poly2;
    fn mul(self, rhs: &Poly2) -> Poly2 {
        let mut p = Poly2::zero(self.degree + rhs.degree);
        for (a, b, c) in self.terms() {
            for (a2, b2, c2) in rhs.terms() {
                *p.coeff_mut(a + a2, b + b2) += c * c2;
            }
        }
        p
    }
}

/// Chebyshev polynomials of the second kind `U_0..=U_n` and their first two
/// derivatives at `s`.
pub fn chebyshev_u(n: usize, s: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut u = vec![0.0; n + 1];
    let mut du = vec![0.0; n + 1];
    let mut ddu = vec![0.0; n + 1];
    u[0] = 1.0;
    if n >= 1 {
        u[1] = 2.0 * s;
        du[1] = 2.0;
    }
    for k in 1..n {
        u[k + 1] = 2.0 * s * u[k] - u[k - 1];
        du[k + 1] = 2.0 * u[k] + 2.0 * s * du[k] - du[k - 1];
        ddu[k + 1] = 4.0 * du[k] + 2.0 * s * ddu[k] - ddu[k - 1];
    }
    (u, du, ddu)
}

/// One ridge basis function `U_n(x·ω) / √π` with `ω = (cos φ, sin φ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ridge {
    pub degree: usize,
    pub angle: f64,
}

/// Value, gradient and Laplacian of a basis function at a point.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub dx1: f64,
    pub dx2: f64,
    pub laplacian: f64,
}

/// All ridge functions of degree `≤ max_degree`, ordered by degree.
pub fn ridge_basis(max_degree: usize) -> Vec<Ridge> {
    (0..=max_degree)
        .flat_map(|n| {
            (0..=n).map(move |j| Ridge {
                degree: n,
                angle: j as f64 * PI / (n as f64 + 1.0),
            })
        })
        .collect()
}

/// Number of polynomials of total degree `≤ d` in two variables.
pub fn poly_dim(d: usize) -> usize {
    (d + 1) * (d + 2) / 2
}

impl Ridge {
    pub fn jet(&self, x1: f64, x2: f64) -> Jet {
        let (c, s) = (self.angle.cos(), self.angle.sin());
        let t = x1 * c + x2 * s;
        let (u, du, ddu) = chebyshev_u(self.degree, t);
        let n = self.degree;
        let norm = PI.sqrt().recip();
        Jet {
            value: u[n] * norm,
            dx1: du[n] * c * norm,
            dx2: du[n] * s * norm,
            laplacian: ddu[n] * norm,
        }
    }

    /// Monomial expansion of the ridge function.
    pub fn to_poly(&self) -> Poly2 {
        // U_n coefficients in t, then substitute t = c x₁ + s x₂.
        let n = self.degree;
        let mut prev = vec![0.0; n + 2];
        let mut cur = vec![0.0; n + 2];
        prev[0] = 1.0; // U_0
        if n >= 1 {
            cur[1] = 2.0; // U_1
        } else {
            cur = prev.clone();
        }
        for _ in 1..n {
            let mut next = vec![0.0; n + 2];
            for i in 0..=n {
                if i >= 1 {
                    next[i] += 2.0 * cur[i - 1];
                }
                next[i] -= prev[i];
            }
            prev = cur;
            cur = next;
        }
        let (c, s) = (self.angle.cos(), self.angle.sin());
        let mut p = Poly2::zero(n);
        for (i, &ti) in cur.iter().enumerate().take(n + 1) {
            if ti == 0.0 {
                continue;
            }
            // (c x₁ + s x₂)^i = Σ binom(i, a) c^a s^{i-a} x₁^a x₂^{i-a}
            let mut binom = 1.0;
            for a in 0..=i {
                let coef = ti * binom * c.powi(a as i32) * s.powi((i - a) as i32);
                *p.coeff_mut(a, i - a) += Complex64::new(coef / PI.sqrt(), 0.0);
                binom = binom * (i - a) as f64 / (a + 1) as f64;
            }
        }
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::DiscQuadrature;

    #[test]
    fn ridge_basis_is_orthonormal_on_the_disc() {
        let basis = ridge_basis(6);
        assert_eq!(basis.len(), poly_dim(6));
        let q = DiscQuadrature::new(8, 16);
        for (i, a) in basis.iter().enumerate() {
            for (j, b) in basis.iter().enumerate() {
                let g: f64 = q
                    .nodes
                    .iter()
                    .zip(&q.weights)
                    .map(|(p, w)| w * a.jet(p[0], p[1]).value * b.jet(p[0], p[1]).value)
                    .sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((g - expect).abs() < 1e-12, "({i},{j}) -> {g}");
            }
        }
    }

    #[test]
    fn ridge_poly_and_jet_agree() {
        for r in ridge_basis(7) {
            let p = r.to_poly();
            let (dx, dy, lap) = (p.dx1(), p.dx2(), p.laplacian());
            for &(x, y) in &[(0.1, -0.3), (0.7, 0.2), (-0.5, -0.5)] {
                let j = r.jet(x, y);
                assert!((p.eval_re(x, y) - j.value).abs() < 1e-11);
                assert!((dx.eval_re(x, y) - j.dx1).abs() < 1e-10);
                assert!((dy.eval_re(x, y) - j.dx2).abs() < 1e-10);
                assert!((lap.eval_re(x, y) - j.laplacian).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn complex_derivatives() {
        // z = x₁ + i x₂: ∂_z z = 1, ∂_z̄ z = 0.
        let z = Poly2::from_terms(&[(1, 0, Complex64::new(1.0, 0.0)), (0, 1, Complex64::i())]);
        assert!((z.dz().eval(0.3, 0.4) - 1.0).norm() < 1e-15);
        assert!(z.dzbar().eval(0.3, 0.4).norm() < 1e-15);
        let zz = &z * &z.conj();
        assert!((zz.eval(0.3, 0.4).re - 0.25).abs() < 1e-15);
        assert!((zz.laplacian().eval(0.1, 0.9).re - 4.0).abs() < 1e-14);
    }
}
