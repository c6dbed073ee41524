//! Functions on the unit sphere bundle as vertical Fourier series.
//!
//! A [`FourierField`] stores `u(x, θ) = Σ_k u_k(x) e^{ikθ}` for
//! `k ∈ [−N_θ, N_θ]`, each `u_k` sampled on the spatial nodes of a shared
//! [`Discretization`]. On the torus the nodes are a uniform `n × n` grid and
//! spatial derivatives are pseudospectral; on the disc the nodes are a polar
//! Gauss rule and derivatives come from a least-squares fit in the ridge
//! polynomial basis.
//!
//! In isothermal coordinates, on a component `u_k e^{ikθ}`,
//!
//! ```text
//! η₊ : u_k ↦ e^{−λ}(∂_z u_k − k λ_z u_k)    (degree k + 1)
//! η₋ : u_k ↦ e^{−λ}(∂_z̄ u_k + k λ_z̄ u_k)    (degree k − 1)
//! ```
//!
//! with `X = η₊ + η₋`, `X⊥ = −i(η₊ − η₋)` and `V = ∂_θ`.

use std::f64::consts::TAU;
use std::io::{Read, Write};
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::metric::{Domain, IsothermalMetric};
use crate::poly::{ridge_basis, Ridge};
use crate::quadrature::DiscQuadrature;

type C = Complex64;
const ZERO: C = C::new(0.0, 0.0);

/// Spatial grid, quadrature and derivative machinery shared by all fields
/// built on it.
pub struct Discretization {
    metric: IsothermalMetric,
    n_theta: usize,
    backend: Backend,
    nodes: Vec<[f64; 2]>,
    // quadrature weight × e^{2λ} × 2π
    weights: Vec<f64>,
    exp_neg_lambda: Vec<f64>,
    lambda_z: Vec<C>,
    curvature: Vec<f64>,
}

enum Backend {
    Torus(TorusSpectral),
    Disc(DiscFit),
}

impl std::fmt::Debug for Discretization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Discretization")
            .field("domain", &self.metric.domain())
            .field("nodes", &self.nodes.len())
            .field("n_theta", &self.n_theta)
            .finish()
    }
}

struct TorusSpectral {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    // wavenumbers with the Nyquist entry zeroed
    wave: Vec<f64>,
}

impl TorusSpectral {
    fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        let wave = (0..n)
            .map(|i| {
                if 2 * i == n {
                    0.0
                } else if i < n.div_ceil(2) {
                    i as f64
                } else {
                    i as f64 - n as f64
                }
            })
            .collect();
        Self {
            n,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
            wave,
        }
    }

    fn fft2(&self, data: &mut [C], fft: &Arc<dyn Fft<f64>>) {
        let n = self.n;
        fft.process(data);
        let mut t = transpose(data, n);
        fft.process(&mut t);
        data.copy_from_slice(&transpose(&t, n));
    }

    /// Returns `(∂_z u, ∂_z̄ u)`.
    fn derivatives(&self, u: &[C]) -> (Vec<C>, Vec<C>) {
        let n = self.n;
        let mut hat = u.to_vec();
        self.fft2(&mut hat, &self.forward);
        let scale = 1.0 / (n * n) as f64;
        let mut dz = vec![ZERO; n * n];
        let mut dzb = vec![ZERO; n * n];
        for i in 0..n {
            let k1 = self.wave[i];
            for j in 0..n {
                let k2 = self.wave[j];
                let h = hat[i * n + j] * scale;
                dz[i * n + j] = h * C::new(0.5 * k2, 0.5 * k1);
                dzb[i * n + j] = h * C::new(-0.5 * k2, 0.5 * k1);
            }
        }
        self.fft2(&mut dz, &self.inverse);
        self.fft2(&mut dzb, &self.inverse);
        (dz, dzb)
    }
}

fn transpose(data: &[C], n: usize) -> Vec<C> {
    let mut out = vec![ZERO; n * n];
    for i in 0..n {
        for j in 0..n {
            out[j * n + i] = data[i * n + j];
        }
    }
    out
}

struct DiscFit {
    degree: usize,
    n_basis: usize,
    // node-major tables, n_nodes × n_basis
    phi: Vec<f64>,
    phi_dz: Vec<C>,
    phi_dzbar: Vec<C>,
    ring: Vec<f64>,
    n_ring: usize,
    quad_weights: Vec<f64>,
}

impl DiscFit {
    fn new(degree: usize, quad: &DiscQuadrature, n_ring: usize) -> Self {
        let basis = ridge_basis(degree);
        let p = basis.len();
        let mut phi = Vec::with_capacity(quad.len() * p);
        let mut phi_dz = Vec::with_capacity(quad.len() * p);
        let mut phi_dzbar = Vec::with_capacity(quad.len() * p);
        for x in &quad.nodes {
            for r in &basis {
                let j = r.jet(x[0], x[1]);
                phi.push(j.value);
                phi_dz.push(C::new(0.5 * j.dx1, -0.5 * j.dx2));
                phi_dzbar.push(C::new(0.5 * j.dx1, 0.5 * j.dx2));
            }
        }
        let ring = (0..n_ring)
            .flat_map(|i| {
                let t = TAU * (i as f64 + 0.5) / n_ring as f64;
                let basis = &basis;
                basis
                    .iter()
                    .map(move |r: &Ridge| r.jet(t.cos(), t.sin()).value)
            })
            .collect();
        Self {
            degree,
            n_basis: p,
            phi,
            phi_dz,
            phi_dzbar,
            ring,
            n_ring,
            quad_weights: quad.weights.clone(),
        }
    }

    fn fit(&self, u: &[C]) -> Vec<C> {
        let p = self.n_basis;
        let mut c = vec![ZERO; p];
        for (n, (un, w)) in u.iter().zip(&self.quad_weights).enumerate() {
            let wu = un * *w;
            for (cj, phi) in c.iter_mut().zip(&self.phi[n * p..(n + 1) * p]) {
                *cj += wu * *phi;
            }
        }
        c
    }

    fn synth(table: &[C], c: &[C]) -> Vec<C> {
        table
            .chunks(c.len())
            .map(|row| row.iter().zip(c).map(|(a, b)| a * b).sum())
            .collect()
    }

    fn derivatives(&self, u: &[C]) -> (Vec<C>, Vec<C>) {
        let c = self.fit(u);
        (
            Self::synth(&self.phi_dz, &c),
            Self::synth(&self.phi_dzbar, &c),
        )
    }

    fn trace(&self, u: &[C]) -> Vec<C> {
        let c = self.fit(u);
        self.ring
            .chunks(self.n_basis)
            .map(|row| row.iter().zip(&c).map(|(a, b)| b * *a).sum())
            .collect()
    }
}

impl Discretization {
    /// Uniform `n × n` grid on the torus `[0, 2π)²`; node `(i, j)` sits at
    /// `(2πi/n, 2πj/n)` with index `i·n + j`.
    pub fn torus(metric: IsothermalMetric, n: usize, n_theta: usize) -> Result<Arc<Self>> {
        if metric.domain() != Domain::Torus {
            return Err(Error::InvalidArgument(
                "torus grid needs a torus metric".into(),
            ));
        }
        if n < 4 || n % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "torus grid size must be even and at least 4 (got {n})"
            )));
        }
        let h = TAU / n as f64;
        let nodes: Vec<[f64; 2]> = (0..n * n)
            .map(|idx| [h * (idx / n) as f64, h * (idx % n) as f64])
            .collect();
        let quad = vec![h * h; n * n];
        Ok(Arc::new(Self::assemble(
            metric,
            n_theta,
            Backend::Torus(TorusSpectral::new(n)),
            nodes,
            &quad,
        )))
    }

    /// Polar Gauss grid on the disc with a degree-`degree` ridge fit; the
    /// quadrature integrates polynomials of degree `2·degree` exactly.
    pub fn disc(metric: IsothermalMetric, degree: usize, n_theta: usize) -> Result<Arc<Self>> {
        Self::disc_with(metric, degree, degree + 2, 2 * degree + 4, n_theta)
    }

    pub fn disc_with(
        metric: IsothermalMetric,
        degree: usize,
        n_r: usize,
        n_phi: usize,
        n_theta: usize,
    ) -> Result<Arc<Self>> {
        if metric.domain() != Domain::Disc {
            return Err(Error::InvalidArgument(
                "disc grid needs a disc metric".into(),
            ));
        }
        if n_r < degree + 1 || n_phi <= 2 * degree {
            return Err(Error::InvalidArgument(format!(
                "disc quadrature {n_r}×{n_phi} too coarse for fit degree {degree}"
            )));
        }
        let quad = DiscQuadrature::new(n_r, n_phi);
        let fit = DiscFit::new(degree, &quad, n_phi.max(64));
        Ok(Arc::new(Self::assemble(
            metric,
            n_theta,
            Backend::Disc(fit),
            quad.nodes.clone(),
            &quad.weights,
        )))
    }

    fn assemble(
        metric: IsothermalMetric,
        n_theta: usize,
        backend: Backend,
        nodes: Vec<[f64; 2]>,
        quad: &[f64],
    ) -> Self {
        let jets: Vec<_> = nodes
            .iter()
            .map(|x| metric.lambda_jet(x[0], x[1]))
            .collect();
        let weights = jets
            .iter()
            .zip(quad)
            .map(|(j, q)| q * (2.0 * j.value).exp() * TAU)
            .collect();
        let exp_neg_lambda = jets.iter().map(|j| (-j.value).exp()).collect();
        let lambda_z = jets.iter().map(|j| j.dz()).collect();
        let curvature = jets
            .iter()
            .map(|j| -(-2.0 * j.value).exp() * j.laplacian)
            .collect();
        Self {
            metric,
            n_theta,
            backend,
            nodes,
            weights,
            exp_neg_lambda,
            lambda_z,
            curvature,
        }
    }

    pub fn metric(&self) -> &IsothermalMetric {
        &self.metric
    }

    pub fn domain(&self) -> Domain {
        self.metric.domain()
    }

    pub fn n_theta(&self) -> usize {
        self.n_theta
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    /// SM quadrature weights per node (fiber length and `e^{2λ}` included).
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn exp_neg_lambda(&self) -> &[f64] {
        &self.exp_neg_lambda
    }

    pub fn lambda_z(&self) -> &[C] {
        &self.lambda_z
    }

    pub fn curvature(&self) -> &[f64] {
        &self.curvature
    }

    /// Side of the torus grid, or `None` on the disc.
    pub fn grid_n(&self) -> Option<usize> {
        match &self.backend {
            Backend::Torus(t) => Some(t.n),
            Backend::Disc(_) => None,
        }
    }

    /// Polynomial degree of the disc fit, or `None` on the torus.
    pub fn fit_degree(&self) -> Option<usize> {
        match &self.backend {
            Backend::Torus(_) => None,
            Backend::Disc(d) => Some(d.degree),
        }
    }

    /// Human-readable grid label for reports.
    pub fn label(&self) -> String {
        match &self.backend {
            Backend::Torus(t) => format!("torus {}x{}", t.n, t.n),
            Backend::Disc(d) => format!("disc degree {} ({} nodes)", d.degree, self.nodes.len()),
        }
    }

    /// `(∂_z u, ∂_z̄ u)` for a scalar function sampled on the nodes.
    pub fn derivatives(&self, u: &[C]) -> (Vec<C>, Vec<C>) {
        match &self.backend {
            Backend::Torus(t) => t.derivatives(u),
            Backend::Disc(d) => d.derivatives(u),
        }
    }

    /// Values of the disc fit of `u` on a ring of boundary points.
    pub fn boundary_trace(&self, u: &[C]) -> Option<Vec<C>> {
        match &self.backend {
            Backend::Torus(_) => None,
            Backend::Disc(d) => Some(d.trace(u)),
        }
    }

    pub fn boundary_ring_len(&self) -> usize {
        match &self.backend {
            Backend::Torus(_) => 0,
            Backend::Disc(d) => d.n_ring,
        }
    }

    /// `η₊` on one Fourier mode `u_k`.
    pub fn eta_plus_mode(&self, u: &[C], k: i64) -> Vec<C> {
        let (dz, _) = self.derivatives(u);
        let kf = k as f64;
        dz.iter()
            .zip(u)
            .zip(self.exp_neg_lambda.iter().zip(&self.lambda_z))
            .map(|((d, u), (e, lz))| (d - lz * u * kf) * *e)
            .collect()
    }

    /// `η₋` on one Fourier mode `u_k`.
    pub fn eta_minus_mode(&self, u: &[C], k: i64) -> Vec<C> {
        let (_, dzb) = self.derivatives(u);
        let kf = k as f64;
        dzb.iter()
            .zip(u)
            .zip(self.exp_neg_lambda.iter().zip(&self.lambda_z))
            .map(|((d, u), (e, lz))| (d + lz.conj() * u * kf) * *e)
            .collect()
    }

    fn eta_both_mode(&self, u: &[C], k: i64) -> (Vec<C>, Vec<C>) {
        let (dz, dzb) = self.derivatives(u);
        let kf = k as f64;
        let mut plus = Vec::with_capacity(u.len());
        let mut minus = Vec::with_capacity(u.len());
        for i in 0..u.len() {
            let e = self.exp_neg_lambda[i];
            let lz = self.lambda_z[i];
            plus.push((dz[i] - lz * u[i] * kf) * e);
            minus.push((dzb[i] + lz.conj() * u[i] * kf) * e);
        }
        (plus, minus)
    }

    /// Weighted pairing `∫_M a b̄ e^{2λ} dx · 2π` of two nodal functions.
    pub fn pair(&self, a: &[C], b: &[C]) -> C {
        a.iter()
            .zip(b)
            .zip(&self.weights)
            .map(|((a, b), w)| a * b.conj() * *w)
            .sum()
    }

    pub fn norm_sq(&self, a: &[C]) -> f64 {
        a.iter()
            .zip(&self.weights)
            .map(|(a, w)| a.norm_sqr() * w)
            .sum()
    }

    fn same_as(&self, other: &Self) -> bool {
        std::ptr::eq(self, other)
            || (self.metric == other.metric
                && self.n_theta == other.n_theta
                && self.nodes == other.nodes)
    }
}

/// A function on `SM` given by its vertical Fourier coefficients.
#[derive(Clone)]
pub struct FourierField {
    disc: Arc<Discretization>,
    band: Option<(i64, i64)>,
    coeffs: Vec<Vec<C>>,
}

impl std::fmt::Debug for FourierField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FourierField")
            .field("grid", &self.disc.label())
            .field("band", &self.band)
            .finish()
    }
}

/// Vertical vector field `Z = z · iv`, stored through its scalar part.
#[derive(Debug, Clone)]
pub struct VerticalField {
    pub z: FourierField,
}

impl VerticalField {
    /// `∇ᵛu = (Vu) iv`.
    pub fn vertical_gradient(u: &FourierField) -> Result<Self> {
        Ok(Self {
            z: apply_operator(Operator::V, u)?,
        })
    }

    /// `∇ʰu = −(X⊥u) iv`.
    pub fn horizontal_gradient(u: &FourierField) -> Result<Self> {
        Ok(Self {
            z: apply_operator(Operator::XPerp, u)?.scale(C::new(-1.0, 0.0)),
        })
    }

    /// `XZ = (Xz) iv`, since `iv` is parallel along geodesics.
    pub fn transport(&self) -> Result<Self> {
        Ok(Self {
            z: apply_operator(Operator::X, &self.z)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Operator {
    V,
    X,
    XPerp,
    EtaPlus,
    EtaMinus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selector {
    /// The single mode `Λ_k`.
    Lambda(i64),
    /// `Ω_m = Λ_m ⊕ Λ_{−m}`.
    Omega(u32),
    /// `T_{≥m}`: every mode with `|k| ≥ m`.
    AtLeast(u32),
}

impl Selector {
    fn keeps(&self, k: i64) -> bool {
        match *self {
            Selector::Lambda(j) => k == j,
            Selector::Omega(m) => k.unsigned_abs() == m as u64,
            Selector::AtLeast(m) => k.unsigned_abs() >= m as u64,
        }
    }
}

impl FourierField {
    pub fn zeros(disc: &Arc<Discretization>) -> Self {
        let n = disc.n_nodes();
        Self {
            disc: disc.clone(),
            band: None,
            coeffs: vec![vec![ZERO; n]; 2 * disc.n_theta + 1],
        }
    }

    /// Single-mode field `u_k(x) e^{ikθ}`.
    pub fn from_mode(disc: &Arc<Discretization>, k: i64, values: Vec<C>) -> Result<Self> {
        let mut f = Self::zeros(disc);
        f.set_mode(k, values)?;
        Ok(f)
    }

    /// Single-mode field from a closure in the spatial variables.
    pub fn from_fn(disc: &Arc<Discretization>, k: i64, f: impl Fn(f64, f64) -> C) -> Result<Self> {
        let values = disc.nodes.iter().map(|x| f(x[0], x[1])).collect();
        Self::from_mode(disc, k, values)
    }

    pub fn discretization(&self) -> &Arc<Discretization> {
        &self.disc
    }

    pub fn n_theta(&self) -> usize {
        self.disc.n_theta
    }

    /// Active band `(degree_lo, degree_hi)`, `None` for the zero field.
    pub fn band(&self) -> Option<(i64, i64)> {
        self.band
    }

    fn slot(&self, k: i64) -> Result<usize> {
        let n = self.disc.n_theta as i64;
        if k.abs() > n {
            return Err(Error::BandOverflow {
                degree: k,
                n_theta: self.disc.n_theta,
            });
        }
        Ok((k + n) as usize)
    }

    /// Coefficient `u_k` on the nodes (zero outside the stored range).
    pub fn mode(&self, k: i64) -> &[C] {
        static EMPTY: [C; 0] = [];
        match self.slot(k) {
            Ok(s) => &self.coeffs[s],
            Err(_) => &EMPTY,
        }
    }

    /// Overwrites `u_k` and widens the active band to include `k`.
    pub fn set_mode(&mut self, k: i64, values: Vec<C>) -> Result<()> {
        if values.len() != self.disc.n_nodes() {
            return Err(Error::InvalidArgument(format!(
                "mode has {} values, grid has {} nodes",
                values.len(),
                self.disc.n_nodes()
            )));
        }
        let s = self.slot(k)?;
        self.coeffs[s] = values;
        self.band = Some(match self.band {
            None => (k, k),
            Some((lo, hi)) => (lo.min(k), hi.max(k)),
        });
        Ok(())
    }

    /// Declares the active band explicitly; coefficients outside are zeroed.
    pub fn with_band(mut self, lo: i64, hi: i64) -> Result<Self> {
        self.slot(lo)?;
        self.slot(hi)?;
        if lo > hi {
            return Err(Error::InvalidArgument(format!("empty band [{lo}, {hi}]")));
        }
        let n = self.disc.n_theta as i64;
        for k in -n..=n {
            if k < lo || k > hi {
                let s = (k + n) as usize;
                self.coeffs[s].iter_mut().for_each(|c| *c = ZERO);
            }
        }
        self.band = Some((lo, hi));
        Ok(self)
    }

    /// Shrinks the band to modes whose norm exceeds `tol` times the field norm.
    pub fn trimmed(mut self, tol: f64) -> Self {
        let total = self.norm();
        let keep: Vec<i64> = self
            .degrees()
            .filter(|&k| self.disc.norm_sq(self.mode(k)).sqrt() > tol * total)
            .collect();
        self.band = match (keep.first(), keep.last()) {
            (Some(&lo), Some(&hi)) => Some((lo, hi)),
            _ => None,
        };
        if let Some((lo, hi)) = self.band {
            let n = self.disc.n_theta as i64;
            for k in -n..=n {
                if k < lo || k > hi {
                    self.coeffs[(k + n) as usize]
                        .iter_mut()
                        .for_each(|c| *c = ZERO);
                }
            }
        } else {
            self.coeffs.iter_mut().flatten().for_each(|c| *c = ZERO);
        }
        self
    }

    /// Degrees in the active band.
    pub fn degrees(&self) -> impl Iterator<Item = i64> {
        match self.band {
            Some((lo, hi)) => lo..=hi,
            #[allow(clippy::reversed_empty_ranges)]
            None => 1..=0,
        }
    }

    fn check_same(&self, other: &Self) -> Result<()> {
        if self.disc.same_as(&other.disc) {
            Ok(())
        } else {
            Err(Error::MetricMismatch)
        }
    }

    fn union_band(a: Option<(i64, i64)>, b: Option<(i64, i64)>) -> Option<(i64, i64)> {
        match (a, b) {
            (None, x) | (x, None) => x,
            (Some((a0, a1)), Some((b0, b1))) => Some((a0.min(b0), a1.max(b1))),
        }
    }

    pub fn scale(&self, s: C) -> Self {
        let mut out = self.clone();
        out.coeffs.iter_mut().flatten().for_each(|c| *c *= s);
        out
    }

    /// `self + s·other`.
    pub fn axpy(&self, s: C, other: &Self) -> Result<Self> {
        self.check_same(other)?;
        let mut out = self.clone();
        for (a, b) in out.coeffs.iter_mut().zip(&other.coeffs) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += s * y;
            }
        }
        out.band = Self::union_band(self.band, other.band);
        Ok(out)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.axpy(C::new(1.0, 0.0), other)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.axpy(C::new(-1.0, 0.0), other)
    }

    /// Complex conjugate of the function: `(ū)_k = conj(u_{−k})`.
    pub fn conj(&self) -> Self {
        let n = self.disc.n_theta as i64;
        let mut out = Self::zeros(&self.disc);
        for k in -n..=n {
            out.coeffs[(k + n) as usize] = self.coeffs[(-k + n) as usize]
                .iter()
                .map(|c| c.conj())
                .collect();
        }
        out.band = self.band.map(|(lo, hi)| (-hi, -lo));
        out
    }

    /// Pointwise multiplication by the Gaussian curvature.
    pub fn mul_curvature(&self) -> Self {
        let mut out = self.clone();
        for row in out.coeffs.iter_mut() {
            for (c, k) in row.iter_mut().zip(&self.disc.curvature) {
                *c *= *k;
            }
        }
        out
    }

    /// `max_k max_x |u_k − conj(u_{−k})|`, relative to the largest coefficient.
    pub fn reality_residual(&self) -> f64 {
        let n = self.disc.n_theta as i64;
        let mut worst: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for k in -n..=n {
            let a = &self.coeffs[(k + n) as usize];
            let b = &self.coeffs[(-k + n) as usize];
            for (x, y) in a.iter().zip(b) {
                worst = worst.max((x - y.conj()).norm());
                scale = scale.max(x.norm());
            }
        }
        if scale == 0.0 {
            0.0
        } else {
            worst / scale
        }
    }

    pub fn is_real(&self, tol: f64) -> bool {
        self.reality_residual() <= tol
    }

    pub fn norm_sq(&self) -> f64 {
        self.degrees()
            .map(|k| self.disc.norm_sq(self.mode(k)))
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// `‖u_m‖` for the `Ω_m` component (`m ≥ 0`).
    pub fn omega_norm(&self, m: u32) -> f64 {
        let m = m as i64;
        let mut s = self.disc.norm_sq(self.mode(m));
        if m != 0 {
            s += self.disc.norm_sq(self.mode(-m));
        }
        s.sqrt()
    }

    /// Largest `|k|` in the band.
    pub fn max_degree(&self) -> Option<u32> {
        self.band
            .map(|(lo, hi)| lo.unsigned_abs().max(hi.unsigned_abs()) as u32)
    }

    /// Evaluates `u(x_node, θ)`.
    pub fn eval_at(&self, node: usize, theta: f64) -> C {
        self.degrees()
            .map(|k| self.mode(k)[node] * C::from_polar(1.0, k as f64 * theta))
            .sum()
    }

    /// Columnar binary dump: header, then the columns `k` (i32), `re` (f64)
    /// and `im` (f64), one row per (degree, node), little endian.
    pub fn write_columnar<W: Write>(&self, mut w: W) -> Result<()> {
        let nodes = self.disc.n_nodes();
        let degrees: Vec<i64> = self.degrees().collect();
        let rows = degrees.len() * nodes;
        w.write_all(b"GFLD")?;
        w.write_all(&1u32.to_le_bytes())?;
        w.write_all(&(self.disc.n_theta as u32).to_le_bytes())?;
        w.write_all(&(nodes as u64).to_le_bytes())?;
        w.write_all(&(rows as u64).to_le_bytes())?;
        for &k in &degrees {
            for _ in 0..nodes {
                w.write_all(&(k as i32).to_le_bytes())?;
            }
        }
        for &k in &degrees {
            for c in self.mode(k) {
                w.write_all(&c.re.to_le_bytes())?;
            }
        }
        for &k in &degrees {
            for c in self.mode(k) {
                w.write_all(&c.im.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_columnar<R: Read>(disc: &Arc<Discretization>, mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        let bad = |m: &str| Error::InvalidArgument(format!("columnar field: {m}"));
        if &magic != b"GFLD" {
            return Err(bad("bad magic"));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4)?;
        if u32::from_le_bytes(b4) != 1 {
            return Err(bad("unsupported version"));
        }
        r.read_exact(&mut b4)?;
        if u32::from_le_bytes(b4) as usize != disc.n_theta {
            return Err(Error::MetricMismatch);
        }
        r.read_exact(&mut b8)?;
        let nodes = u64::from_le_bytes(b8) as usize;
        if nodes != disc.n_nodes() {
            return Err(Error::MetricMismatch);
        }
        r.read_exact(&mut b8)?;
        let rows = u64::from_le_bytes(b8) as usize;
        let mut ks = Vec::with_capacity(rows);
        for _ in 0..rows {
            r.read_exact(&mut b4)?;
            ks.push(i32::from_le_bytes(b4) as i64);
        }
        let mut re = Vec::with_capacity(rows);
        for _ in 0..rows {
            r.read_exact(&mut b8)?;
            re.push(f64::from_le_bytes(b8));
        }
        let mut out = Self::zeros(disc);
        let mut values = Vec::with_capacity(nodes);
        for (row, (&k, &x)) in ks.iter().zip(&re).enumerate() {
            r.read_exact(&mut b8)?;
            values.push(C::new(x, f64::from_le_bytes(b8)));
            if (row + 1) % nodes == 0 {
                out.set_mode(k, std::mem::take(&mut values))?;
            }
        }
        Ok(out)
    }
}

/// Applies one of the first-order operators in coefficient space.
///
/// Degree-shifting operators refuse to leave `[−N_θ, N_θ]`.
pub fn apply_operator(op: Operator, u: &FourierField) -> Result<FourierField> {
    let disc = &u.disc;
    let n = disc.n_theta as i64;
    let Some((lo, hi)) = u.band else {
        return Ok(FourierField::zeros(disc));
    };
    let (up, down) = match op {
        Operator::V => (false, false),
        Operator::EtaPlus => (true, false),
        Operator::EtaMinus => (false, true),
        Operator::X | Operator::XPerp => (true, true),
    };
    if up && hi + 1 > n {
        return Err(Error::BandOverflow {
            degree: hi + 1,
            n_theta: disc.n_theta,
        });
    }
    if down && lo - 1 < -n {
        return Err(Error::BandOverflow {
            degree: lo - 1,
            n_theta: disc.n_theta,
        });
    }
    let mut out = FourierField::zeros(disc);
    if op == Operator::V {
        for k in lo..=hi {
            let ik = C::new(0.0, k as f64);
            out.coeffs[(k + n) as usize] = u.mode(k).iter().map(|c| c * ik).collect();
        }
        out.band = u.band;
        return Ok(out);
    }
    let parts: Vec<(i64, Vec<C>, Vec<C>)> = (lo..=hi)
        .into_par_iter()
        .map(|k| {
            let m = u.mode(k);
            match op {
                Operator::EtaPlus => (k, disc.eta_plus_mode(m, k), Vec::new()),
                Operator::EtaMinus => (k, Vec::new(), disc.eta_minus_mode(m, k)),
                _ => {
                    let (p, q) = disc.eta_both_mode(m, k);
                    (k, p, q)
                }
            }
        })
        .collect();
    let (ps, ms) = match op {
        Operator::EtaPlus => (C::new(1.0, 0.0), ZERO),
        Operator::EtaMinus => (ZERO, C::new(1.0, 0.0)),
        Operator::X => (C::new(1.0, 0.0), C::new(1.0, 0.0)),
        Operator::XPerp => (C::new(0.0, -1.0), C::new(0.0, 1.0)),
        Operator::V => unreachable!(),
    };
    for (k, plus, minus) in parts {
        if !plus.is_empty() {
            let row = &mut out.coeffs[(k + 1 + n) as usize];
            for (o, p) in row.iter_mut().zip(&plus) {
                *o += ps * p;
            }
        }
        if !minus.is_empty() {
            let row = &mut out.coeffs[(k - 1 + n) as usize];
            for (o, m) in row.iter_mut().zip(&minus) {
                *o += ms * m;
            }
        }
    }
    out.band = Some((
        if down { lo - 1 } else { lo + 1 },
        if up { hi + 1 } else { hi - 1 },
    ));
    Ok(out)
}

/// `(u, w) = Σ_k ∫_M u_k w̄_k e^{2λ} dx · 2π`.
pub fn inner_product(u: &FourierField, w: &FourierField) -> Result<C> {
    u.check_same(w)?;
    let Some((lo, hi)) = FourierField::union_band(u.band, w.band) else {
        return Ok(ZERO);
    };
    Ok((lo..=hi).map(|k| u.disc.pair(u.mode(k), w.mode(k))).sum())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixedNorm {
    pub value: f64,
    /// The top stored degree `N_θ` carries energy, so the series may be truncated.
    pub truncated: bool,
}

/// `(Σ_m ⟨m⟩^{2s} ‖u_m‖²)^{1/2}` with `⟨m⟩ = (1 + m²)^{1/2}`.
pub fn mixed_norm(u: &FourierField, s: f64) -> MixedNorm {
    let Some(top) = u.max_degree() else {
        return MixedNorm {
            value: 0.0,
            truncated: false,
        };
    };
    let value = (0..=top)
        .map(|m| {
            let jm = (1.0 + (m as f64).powi(2)).sqrt();
            jm.powf(2.0 * s) * u.omega_norm(m).powi(2)
        })
        .sum::<f64>()
        .sqrt();
    let n = u.n_theta() as u32;
    let truncated = top == n && u.omega_norm(n) > 1e-12 * u.norm();
    MixedNorm { value, truncated }
}

pub fn project(u: &FourierField, selector: Selector) -> FourierField {
    let mut out = FourierField::zeros(&u.disc);
    for k in u.degrees().filter(|&k| selector.keeps(k)) {
        out.set_mode(k, u.mode(k).to_vec())
            .expect("degree within band");
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct AdjointnessResiduals {
    /// `|(η₊u, w) + (u, η₋w)| / (‖u‖‖w‖)`.
    pub eta: f64,
    pub v: f64,
    pub x: f64,
    pub x_perp: f64,
}

/// Skew-adjointness defects of `V`, `X`, `X⊥` and the pairing `η₊* = −η₋`.
pub fn adjointness_residual(u: &FourierField, w: &FourierField) -> Result<AdjointnessResiduals> {
    u.check_same(w)?;
    if u.disc.domain() != Domain::Torus {
        return Err(Error::Precondition(
            "adjointness residuals need a closed (torus) domain".into(),
        ));
    }
    let scale = u.norm() * w.norm();
    if scale == 0.0 {
        return Ok(AdjointnessResiduals {
            eta: 0.0,
            v: 0.0,
            x: 0.0,
            x_perp: 0.0,
        });
    }
    let skew = |op: Operator| -> Result<f64> {
        let a = inner_product(&apply_operator(op, u)?, w)?;
        let b = inner_product(u, &apply_operator(op, w)?)?;
        Ok((a + b).norm() / scale)
    };
    let eta = {
        let a = inner_product(&apply_operator(Operator::EtaPlus, u)?, w)?;
        let b = inner_product(u, &apply_operator(Operator::EtaMinus, w)?)?;
        (a + b).norm() / scale
    };
    Ok(AdjointnessResiduals {
        eta,
        v: skew(Operator::V)?,
        x: skew(Operator::X)?,
        x_perp: skew(Operator::XPerp)?,
    })
}

/// Recipe for pseudorandom band-limited test fields.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomFieldSpec {
    pub lo: i64,
    pub hi: i64,
    /// Largest spatial frequency `|p|, |q|` on the torus, polynomial degree on the disc.
    pub spatial: usize,
    pub real: bool,
    /// Multiply every disc coefficient by `1 − |x|²`.
    pub vanish_on_boundary: bool,
}

impl RandomFieldSpec {
    pub fn band(lo: i64, hi: i64, spatial: usize) -> Self {
        Self {
            lo,
            hi,
            spatial,
            real: false,
            vanish_on_boundary: false,
        }
    }
}

/// Draws a band-limited field with uniform coefficients in `[−1, 1]²`.
pub fn random_field<R: Rng>(
    disc: &Arc<Discretization>,
    spec: RandomFieldSpec,
    rng: &mut R,
) -> Result<FourierField> {
    let mut out = FourierField::zeros(disc);
    let lo = if spec.real {
        spec.lo.min(-spec.hi)
    } else {
        spec.lo
    };
    let hi = if spec.real {
        spec.hi.max(-spec.lo)
    } else {
        spec.hi
    };
    out.slot(lo)?;
    out.slot(hi)?;
    let m = spec.spatial as i64;
    let ridges = ridge_basis(spec.spatial);
    let draw = |rng: &mut R| C::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    for k in lo..=hi {
        if spec.real && k < 0 {
            continue;
        }
        let values: Vec<C> = match disc.domain() {
            Domain::Torus => {
                let mut terms = Vec::new();
                for p in -m..=m {
                    for q in -m..=m {
                        terms.push((p as f64, q as f64, draw(rng)));
                    }
                }
                disc.nodes
                    .iter()
                    .map(|x| {
                        terms
                            .iter()
                            .map(|(p, q, c)| c * C::from_polar(1.0, p * x[0] + q * x[1]))
                            .sum()
                    })
                    .collect()
            }
            Domain::Disc => {
                let cs: Vec<C> = ridges.iter().map(|_| draw(rng)).collect();
                disc.nodes
                    .iter()
                    .map(|x| {
                        let v: C = ridges
                            .iter()
                            .zip(&cs)
                            .map(|(r, c)| c * r.jet(x[0], x[1]).value)
                            .sum();
                        if spec.vanish_on_boundary {
                            v * (1.0 - x[0] * x[0] - x[1] * x[1])
                        } else {
                            v
                        }
                    })
                    .collect()
            }
        };
        let values = if spec.real && k == 0 {
            values.iter().map(|c| C::new(c.re, 0.0)).collect()
        } else {
            values
        };
        if spec.real && k > 0 {
            out.set_mode(-k, values.iter().map(|c| c.conj()).collect())?;
        }
        out.set_mode(k, values)?;
    }
    Ok(out)
}

/// `e^{i(p x₁ + q x₂)}` sampled on the nodes.
pub fn plane_wave(disc: &Discretization, p: f64, q: f64) -> Vec<C> {
    disc.nodes
        .iter()
        .map(|x| C::from_polar(1.0, p * x[0] + q * x[1]))
        .collect()
}

/// Full SM volume `∫ e^{2λ} dx · 2π` of the discretization.
pub fn sm_volume(disc: &Discretization) -> f64 {
    disc.weights.iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::FourierTerm;
    use crate::poly::Poly2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn flat(n: usize, nt: usize) -> Arc<Discretization> {
        Discretization::torus(IsothermalMetric::flat_torus(), n, nt).unwrap()
    }

    fn one(disc: &Arc<Discretization>) -> FourierField {
        FourierField::from_fn(disc, 0, |_, _| C::new(1.0, 0.0)).unwrap()
    }

    #[test]
    fn vertical_derivative_of_e_i_theta() {
        let d = flat(8, 3);
        let e1 = FourierField::from_fn(&d, 1, |_, _| C::new(1.0, 0.0)).unwrap();
        let vu = apply_operator(Operator::V, &e1).unwrap();
        assert!(vu.mode(1).iter().all(|c| (c - C::i()).norm() < 1e-15));
    }

    #[test]
    fn eta_plus_on_plane_wave() {
        let d = flat(16, 3);
        let u = FourierField::from_mode(&d, 0, plane_wave(&d, 1.0, 0.0)).unwrap();
        let out = apply_operator(Operator::EtaPlus, &u).unwrap();
        assert_eq!(out.band(), Some((1, 1)));
        for (o, x) in out.mode(1).iter().zip(d.nodes()) {
            let expect = C::new(0.0, 0.5) * C::from_polar(1.0, x[0]);
            assert!((o - expect).norm() < 1e-14);
        }
        let c = apply_operator(Operator::EtaPlus, &one(&d)).unwrap();
        assert!(c.norm() < 1e-13);
    }

    #[test]
    fn inner_products_on_the_flat_torus() {
        let d = flat(16, 3);
        let vol = (2.0 * PI).powi(3);
        assert!((inner_product(&one(&d), &one(&d)).unwrap().re - vol).abs() < 1e-10);
        let w = FourierField::from_mode(&d, 0, plane_wave(&d, 1.0, 0.0)).unwrap();
        assert!((inner_product(&w, &w).unwrap().re - vol).abs() < 1e-10);
        let e2 = FourierField::from_fn(&d, 2, |_, _| C::new(1.0, 0.0)).unwrap();
        assert_eq!(inner_product(&one(&d), &e2).unwrap(), ZERO);
        assert!((sm_volume(&d) - vol).abs() < 1e-10);
    }

    #[test]
    fn mixed_norm_weights() {
        let d = flat(8, 4);
        let u = FourierField::from_fn(&d, 2, |_, _| C::new(1.0, 0.0)).unwrap();
        let l2 = u.norm();
        assert!((mixed_norm(&u, 0.0).value - l2).abs() < 1e-12);
        assert!((mixed_norm(&u, -1.0).value - l2 / 5f64.sqrt()).abs() < 1e-12);
        assert!(!mixed_norm(&u, 0.0).truncated);
        let top = FourierField::from_fn(&d, -4, |_, _| C::new(1.0, 0.0)).unwrap();
        assert!(mixed_norm(&top, 0.0).truncated);
    }

    #[test]
    fn projections() {
        let d = flat(8, 4);
        let mut u = FourierField::from_fn(&d, 1, |_, _| C::new(1.0, 0.0)).unwrap();
        u.set_mode(3, vec![C::new(1.0, 0.0); d.n_nodes()]).unwrap();
        let p = project(&u, Selector::Lambda(1));
        assert_eq!(p.band(), Some((1, 1)));
        let mut v = one(&d).scale(C::new(2.0, 0.0));
        v.set_mode(1, vec![C::new(1.0, 0.0); d.n_nodes()]).unwrap();
        let p = project(&v, Selector::Omega(0));
        assert_eq!(p.band(), Some((0, 0)));
        assert!((p.mode(0)[3] - C::new(2.0, 0.0)).norm() == 0.0);
        // 1 + cos θ + cos 2θ
        let mut w = one(&d);
        for k in [-2i64, -1, 1, 2] {
            w.set_mode(k, vec![C::new(0.5, 0.0); d.n_nodes()]).unwrap();
        }
        let t = project(&w, Selector::AtLeast(2));
        assert_eq!(t.band(), Some((-2, 2)));
        assert!(t.mode(0).iter().all(|c| *c == ZERO));
        assert!(t.mode(1).iter().all(|c| *c == ZERO));
        assert!((t.omega_norm(2) - w.omega_norm(2)).abs() == 0.0);
    }

    #[test]
    fn band_overflow_is_an_error() {
        let d = flat(8, 2);
        let u = FourierField::from_fn(&d, 2, |_, _| C::new(1.0, 0.0)).unwrap();
        assert!(matches!(
            apply_operator(Operator::EtaPlus, &u),
            Err(Error::BandOverflow { degree: 3, .. })
        ));
        assert!(apply_operator(Operator::EtaMinus, &u).is_ok());
        assert!(apply_operator(Operator::X, &u).is_err());
    }

    #[test]
    fn x_and_x_perp_are_eta_combinations() {
        let m = IsothermalMetric::torus_cos_x1(0.1);
        let d = Discretization::torus(m, 16, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let u = random_field(&d, RandomFieldSpec::band(-3, 3, 3), &mut rng).unwrap();
        let p = apply_operator(Operator::EtaPlus, &u).unwrap();
        let q = apply_operator(Operator::EtaMinus, &u).unwrap();
        let x = apply_operator(Operator::X, &u).unwrap();
        let xp = apply_operator(Operator::XPerp, &u).unwrap();
        let r1 = x.sub(&p.add(&q).unwrap()).unwrap().norm() / x.norm();
        let r2 = xp
            .sub(&p.sub(&q).unwrap().scale(C::new(0.0, -1.0)))
            .unwrap()
            .norm()
            / xp.norm();
        assert!(r1 <= 1e-13 && r2 <= 1e-13, "{r1} {r2}");
        assert_eq!(p.band(), Some((-2, 4)));
    }

    #[test]
    fn real_fields_stay_real() {
        let m = IsothermalMetric::torus(vec![FourierTerm {
            p: 1,
            q: 1,
            cos: 0.1,
            sin: 0.05,
        }]);
        let d = Discretization::torus(m, 16, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = RandomFieldSpec {
            real: true,
            ..RandomFieldSpec::band(-3, 3, 2)
        };
        let u = random_field(&d, spec, &mut rng).unwrap();
        assert!(u.is_real(1e-15));
        assert!(apply_operator(Operator::X, &u).unwrap().reality_residual() <= 1e-13);
        assert!(
            apply_operator(Operator::XPerp, &u)
                .unwrap()
                .reality_residual()
                <= 1e-13
        );
    }

    #[test]
    fn adjointness_on_the_flat_torus() {
        let d = flat(16, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let u = random_field(&d, RandomFieldSpec::band(-3, 3, 4), &mut rng).unwrap();
        let w = random_field(&d, RandomFieldSpec::band(-3, 3, 4), &mut rng).unwrap();
        let r = adjointness_residual(&u, &w).unwrap();
        assert!(
            r.eta <= 1e-12 && r.v <= 1e-12 && r.x <= 1e-12 && r.x_perp <= 1e-12,
            "{r:?}"
        );
        let o = one(&d);
        let x1 = apply_operator(Operator::X, &o).unwrap();
        assert_eq!(inner_product(&x1, &o).unwrap(), ZERO);
    }

    #[test]
    fn adjointness_refines_on_a_curved_torus() {
        let mut prev = f64::INFINITY;
        for n in [8, 16, 32] {
            let d = Discretization::torus(IsothermalMetric::torus_cos_x1(0.5), n, 6).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let u = random_field(&d, RandomFieldSpec::band(-2, 2, 2), &mut rng).unwrap();
            let w = random_field(&d, RandomFieldSpec::band(-2, 2, 2), &mut rng).unwrap();
            let r = adjointness_residual(&u, &w).unwrap().eta;
            assert!(r <= prev.max(1e-12), "n = {n}: {r} after {prev}");
            prev = r;
        }
        assert!(prev < 1e-10);
    }

    #[test]
    fn disc_fit_differentiates_polynomials_exactly() {
        let d = Discretization::disc(IsothermalMetric::euclidean_disc(), 6, 2).unwrap();
        // u = z² z̄ = (x₁² + x₂²)(x₁ + i x₂): ∂_z u = 2 z z̄ = 2|x|², ∂_z̄ u = z².
        let u: Vec<C> = d
            .nodes()
            .iter()
            .map(|x| {
                let z = C::new(x[0], x[1]);
                z * z * z.conj()
            })
            .collect();
        let (dz, dzb) = d.derivatives(&u);
        for ((a, b), x) in dz.iter().zip(&dzb).zip(d.nodes()) {
            let z = C::new(x[0], x[1]);
            assert!((a - 2.0 * z.norm_sqr()).norm() < 1e-12);
            assert!((b - z * z).norm() < 1e-12);
        }
        let trace = d.boundary_trace(&u).unwrap();
        assert!(trace.iter().all(|t| (t.norm() - 1.0).abs() < 1e-12));
        let bubble = Poly2::bubble();
        let v: Vec<C> = d.nodes().iter().map(|x| bubble.eval(x[0], x[1])).collect();
        assert!(d
            .boundary_trace(&v)
            .unwrap()
            .iter()
            .all(|t| t.norm() < 1e-12));
    }

    #[test]
    fn columnar_round_trip() {
        let d = flat(8, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = random_field(&d, RandomFieldSpec::band(-1, 2, 2), &mut rng).unwrap();
        let mut buf = Vec::new();
        u.write_columnar(&mut buf).unwrap();
        let v = FourierField::read_columnar(&d, buf.as_slice()).unwrap();
        assert_eq!(v.band(), u.band());
        assert_eq!(u.sub(&v).unwrap().norm(), 0.0);
    }

    #[test]
    fn mismatched_grids_are_rejected() {
        let a = flat(8, 3);
        let b = flat(16, 3);
        assert!(matches!(
            inner_product(&one(&a), &one(&b)),
            Err(Error::MetricMismatch)
        ));
    }
}
