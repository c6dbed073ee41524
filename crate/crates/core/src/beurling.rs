//! Beurling transform as a minimal-norm solve, formal invariant distributions
//! and contraction surveys.
//!
//! For `f ∈ Λ_k`, `k ≥ 0`, the output `B₊f ∈ Λ_{k+2}` is `η₊v` where
//! `v ∈ Λ_{k+1}` satisfies the weak normal equation
//!
//! ```text
//! (η₊v, η₊φ) = −(f, η₋φ)    for every test potential φ,
//! ```
//!
//! so `B₊f` lies in the range of `η₊` and is orthogonal to `Ker η₋`. On the
//! torus the potentials are arbitrary grid functions; on the disc they are
//! `(1 − |x|²)·p` with `p` a polynomial, so `v` vanishes on the boundary.
//! The system is solved by conjugate gradients. `B₋` is the mirror image
//! `B₋f = conj(B₊ conj f)`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::bundle::{
    mixed_norm, project, random_field, Discretization, FourierField, RandomFieldSpec, Selector,
};
use crate::cg::conjugate_gradient;
use crate::error::{Error, Result};
use crate::metric::Domain;
use crate::poly::ridge_basis;
use crate::Complex64;

type C = Complex64;
const ZERO: C = C::new(0.0, 0.0);

pub const CG_TOLERANCE: f64 = 1e-10;

/// Which form of the defining relation `η₋f_{k+2} = −η₊f_k` is reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualKind {
    /// Pointwise on the grid.
    Collocation,
    /// Tested against every potential in the trial space.
    Galerkin,
}

#[derive(Debug, Clone)]
pub struct BeurlingStep {
    pub k: i64,
    pub output: FourierField,
    pub potential: FourierField,
    pub iterations: usize,
    pub residual: f64,
    pub residual_kind: ResidualKind,
    pub galerkin_residual: f64,
    pub collocation_residual: f64,
    pub norm_ratio: f64,
    /// Fraction of the right-hand side lying along `Ker η₊` and removed.
    pub obstruction: f64,
    pub kernel_dim: Option<usize>,
}

/// Numbers-only view of a step for reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepSummary {
    pub k: i64,
    pub iterations: usize,
    pub residual: f64,
    pub residual_kind: ResidualKind,
    pub galerkin_residual: f64,
    pub collocation_residual: f64,
    pub norm_ratio: f64,
    pub obstruction: f64,
    pub kernel_dim: Option<usize>,
}

impl BeurlingStep {
    pub fn summary(&self) -> StepSummary {
        StepSummary {
            k: self.k,
            iterations: self.iterations,
            residual: self.residual,
            residual_kind: self.residual_kind,
            galerkin_residual: self.galerkin_residual,
            collocation_residual: self.collocation_residual,
            norm_ratio: self.norm_ratio,
            obstruction: self.obstruction,
            kernel_dim: self.kernel_dim,
        }
    }
}

struct DiscOperator {
    // nodal values of the orthonormalized potentials, of η₊ and η₋ applied to
    // them, and of η₋η₊
    phi: DMatrix<C>,
    e: DMatrix<C>,
    f: DMatrix<C>,
    h: DMatrix<C>,
    a: DMatrix<C>,
}

enum Kind {
    Torus,
    Disc(DiscOperator),
}

/// `B₊` on `Λ_k` for one discretization, with all degree-dependent operators
/// assembled once.
pub struct BeurlingSolver {
    disc: Arc<Discretization>,
    k: i64,
    kind: Kind,
}

impl BeurlingSolver {
    pub fn new(disc: &Arc<Discretization>, k: i64) -> Result<Self> {
        if k < 0 {
            return Err(Error::InvalidArgument(format!("B₊ needs k ≥ 0 (got {k})")));
        }
        if k + 2 > disc.n_theta() as i64 {
            return Err(Error::BandOverflow {
                degree: k + 2,
                n_theta: disc.n_theta(),
            });
        }
        let kind = match disc.domain() {
            Domain::Torus => Kind::Torus,
            Domain::Disc => Kind::Disc(DiscOperator::new(disc, k)?),
        };
        Ok(Self {
            disc: disc.clone(),
            k,
            kind,
        })
    }

    pub fn degree(&self) -> i64 {
        self.k
    }

    pub fn n_unknowns(&self) -> usize {
        match &self.kind {
            Kind::Torus => self.disc.n_nodes(),
            Kind::Disc(d) => d.a.ncols(),
        }
    }

    /// Unknowns ↦ nodal values of `η₊v`.
    fn apply_e(&self, x: &[C]) -> Vec<C> {
        match &self.kind {
            Kind::Torus => self.disc.eta_plus_mode(x, self.k + 1),
            Kind::Disc(d) => matvec(&d.e, x),
        }
    }

    /// Nodal `y` ↦ `E^H W y`.
    fn apply_eh_w(&self, y: &[C]) -> Vec<C> {
        let wy: Vec<C> = y
            .iter()
            .zip(self.disc.weights())
            .map(|(a, w)| a * *w)
            .collect();
        match &self.kind {
            Kind::Torus => {
                let kk = (self.k + 1) as f64;
                let t: Vec<C> = wy
                    .iter()
                    .zip(self.disc.exp_neg_lambda())
                    .map(|(a, e)| a * *e)
                    .collect();
                let (_, dzb) = self.disc.derivatives(&t);
                dzb.iter()
                    .zip(&t)
                    .zip(self.disc.lambda_z())
                    .map(|((d, t), lz)| -d - lz.conj() * t * kk)
                    .collect()
            }
            Kind::Disc(d) => matvec_adjoint(&d.e, &wy),
        }
    }

    fn apply_a(&self, x: &[C]) -> Vec<C> {
        match &self.kind {
            Kind::Torus => self.apply_eh_w(&self.apply_e(x)),
            Kind::Disc(d) => matvec(&d.a, x),
        }
    }

    /// `−F^H W f` with `F` the nodal `η₋` on potentials.
    fn rhs(&self, f: &[C]) -> Vec<C> {
        let wf: Vec<C> = f
            .iter()
            .zip(self.disc.weights())
            .map(|(a, w)| a * *w)
            .collect();
        match &self.kind {
            Kind::Torus => {
                let kk = (self.k + 1) as f64;
                let t: Vec<C> = wf
                    .iter()
                    .zip(self.disc.exp_neg_lambda())
                    .map(|(a, e)| a * *e)
                    .collect();
                let (dz, _) = self.disc.derivatives(&t);
                dz.iter()
                    .zip(&t)
                    .zip(self.disc.lambda_z())
                    .map(|((d, t), lz)| d - lz * t * kk)
                    .collect()
            }
            Kind::Disc(d) => matvec_adjoint(&d.f, &wf).into_iter().map(|c| -c).collect(),
        }
    }

    /// Unit vector along the continuous kernel `e^{(k+1)λ}` of `η₊` on the torus.
    fn torus_kernel(&self) -> Option<Vec<C>> {
        match self.kind {
            Kind::Torus => {
                let p = -((self.k + 1) as i32);
                let v: Vec<C> = self
                    .disc
                    .exp_neg_lambda()
                    .iter()
                    .map(|e| C::new(e.powi(p), 0.0))
                    .collect();
                let n = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
                Some(v.into_iter().map(|c| c / n).collect())
            }
            Kind::Disc(_) => None,
        }
    }

    fn potential_nodes(&self, x: &[C]) -> Vec<C> {
        match &self.kind {
            Kind::Torus => x.to_vec(),
            Kind::Disc(d) => matvec(&d.phi, x),
        }
    }

    /// Nodal `η₋η₊v`.
    fn apply_h(&self, x: &[C]) -> Vec<C> {
        match &self.kind {
            Kind::Torus => self.disc.eta_minus_mode(&self.apply_e(x), self.k + 2),
            Kind::Disc(d) => matvec(&d.h, x),
        }
    }

    /// Dimension of the discrete kernel of `η₊` on potentials, when known.
    pub fn kernel_dim(&self) -> Option<usize> {
        match &self.kind {
            Kind::Torus if self.disc.metric().is_flat() => {
                // grid modes whose ∂_z symbol vanishes: zero and Nyquist wavenumbers
                self.disc.grid_n().map(|n| if n % 2 == 0 { 4 } else { 1 })
            }
            Kind::Torus => None,
            Kind::Disc(d) => {
                let ev = d.a.clone().symmetric_eigenvalues();
                let max = ev.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                Some(ev.iter().filter(|v| v.abs() <= 1e-10 * max).count())
            }
        }
    }

    fn cg(&self, b: &[C]) -> Result<crate::cg::CgSolution> {
        conjugate_gradient(|x| self.apply_a(x), b, CG_TOLERANCE, 10 * self.n_unknowns())
    }

    /// `B₊f` for `f ∈ Λ_k`.
    pub fn solve(&self, f: &FourierField) -> Result<BeurlingStep> {
        if !Arc::ptr_eq(f.discretization(), &self.disc)
            && f.discretization().metric() != self.disc.metric()
        {
            return Err(Error::MetricMismatch);
        }
        require_single_mode(f, self.k)?;
        let fk = f.mode(self.k);
        let f_norm = self.disc.norm_sq(fk).sqrt();
        let mut b = self.rhs(fk);
        let mut obstruction = 0.0;
        if let Some(kappa) = self.torus_kernel() {
            let along: C = kappa.iter().zip(&b).map(|(a, b)| a.conj() * b).sum();
            let b_norm = b.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
            if b_norm > 0.0 {
                obstruction = along.norm() / b_norm;
            }
            for (bi, ki) in b.iter_mut().zip(&kappa) {
                *bi -= along * ki;
            }
        }
        let sol = match (self.cg(&b), &self.kind) {
            (Ok(s), _) => s,
            (Err(Error::Solver { .. }), Kind::Torus) => {
                // inconsistent discrete system: minimum-norm least squares
                let ab = self.apply_a(&b);
                conjugate_gradient(
                    |x| self.apply_a(&self.apply_a(x)),
                    &ab,
                    CG_TOLERANCE,
                    20 * self.n_unknowns(),
                )?
            }
            (Err(e), _) => return Err(e),
        };
        let out_nodes = self.apply_e(&sol.x);
        let out_norm = self.disc.norm_sq(&out_nodes).sqrt();

        let ax = self.apply_a(&sol.x);
        let b_norm = b.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        let galerkin_residual = if b_norm == 0.0 {
            0.0
        } else {
            ax.iter()
                .zip(&b)
                .map(|(a, b)| (a - b).norm_sqr())
                .sum::<f64>()
                .sqrt()
                / b_norm
        };
        let eta_plus_f = self.disc.eta_plus_mode(fk, self.k);
        let hx = self.apply_h(&sol.x);
        let defect: Vec<C> = hx.iter().zip(&eta_plus_f).map(|(a, b)| a + b).collect();
        let rhs_norm = self.disc.norm_sq(&eta_plus_f).sqrt();
        let collocation_residual = if rhs_norm == 0.0 {
            self.disc.norm_sq(&defect).sqrt()
        } else {
            self.disc.norm_sq(&defect).sqrt() / rhs_norm
        };
        let (residual, residual_kind) = match self.kind {
            Kind::Torus => (collocation_residual, ResidualKind::Collocation),
            Kind::Disc(_) => (galerkin_residual, ResidualKind::Galerkin),
        };
        Ok(BeurlingStep {
            k: self.k,
            output: FourierField::from_mode(&self.disc, self.k + 2, out_nodes)?,
            potential: FourierField::from_mode(
                &self.disc,
                self.k + 1,
                self.potential_nodes(&sol.x),
            )?,
            iterations: sol.iterations,
            residual,
            residual_kind,
            galerkin_residual,
            collocation_residual,
            norm_ratio: if f_norm == 0.0 {
                0.0
            } else {
                out_norm / f_norm
            },
            obstruction,
            kernel_dim: self.kernel_dim(),
        })
    }

    /// Adds `directions` random vectors from the orthogonal complement of
    /// `Ran η₊` (the discrete `Ker η₋`) to the output and reports the
    /// smallest relative norm increase `(‖B₊f + h‖² − ‖B₊f‖²) / ‖h‖²`.
    pub fn minimality_check<R: Rng>(
        &self,
        step: &BeurlingStep,
        directions: usize,
        rng: &mut R,
    ) -> Result<MinimalityReport> {
        let out = step.output.mode(self.k + 2);
        let base = self.disc.norm_sq(out);
        let scale = base.sqrt().max(1.0);
        let mut worst = f64::INFINITY;
        let mut max_cos: f64 = 0.0;
        for _ in 0..directions {
            let g: Vec<C> = (0..self.disc.n_nodes())
                .map(|_| C::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();
            let sol = self.cg(&self.apply_eh_w(&g))?;
            let eg = self.apply_e(&sol.x);
            let h: Vec<C> = g.iter().zip(&eg).map(|(a, b)| a - b).collect();
            let hn = self.disc.norm_sq(&h).sqrt();
            if hn == 0.0 {
                continue;
            }
            let h: Vec<C> = h.iter().map(|c| c * (scale / hn)).collect();
            let sum: Vec<C> = out.iter().zip(&h).map(|(a, b)| a + b).collect();
            let hh = self.disc.norm_sq(&h);
            worst = worst.min((self.disc.norm_sq(&sum) - base) / hh);
            if base > 0.0 {
                max_cos = max_cos.max(self.disc.pair(out, &h).norm() / (base.sqrt() * hh.sqrt()));
            }
        }
        Ok(MinimalityReport {
            directions,
            min_relative_increase: worst,
            max_cosine: max_cos,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MinimalityReport {
    pub directions: usize,
    /// Ideally 1: the added direction is orthogonal to the output.
    pub min_relative_increase: f64,
    pub max_cosine: f64,
}

fn matvec(m: &DMatrix<C>, x: &[C]) -> Vec<C> {
    (m * DVector::from_column_slice(x)).as_slice().to_vec()
}

fn matvec_adjoint(m: &DMatrix<C>, y: &[C]) -> Vec<C> {
    (m.ad_mul(&DVector::from_column_slice(y)))
        .as_slice()
        .to_vec()
}

impl DiscOperator {
    fn new(disc: &Arc<Discretization>, k: i64) -> Result<Self> {
        let degree = disc.fit_degree().expect("disc discretization");
        if degree < 3 {
            return Err(Error::InvalidArgument(format!(
                "disc Beurling solve needs fit degree ≥ 3 (got {degree})"
            )));
        }
        let basis = ridge_basis(degree - 2);
        let nb = basis.len();
        let nodes = disc.nodes();
        let nn = nodes.len();
        // bubble-times-ridge potentials and their derivatives
        let mut phi = DMatrix::<f64>::zeros(nn, nb);
        let mut px = DMatrix::<f64>::zeros(nn, nb);
        let mut py = DMatrix::<f64>::zeros(nn, nb);
        let mut lap = DMatrix::<f64>::zeros(nn, nb);
        for (n, x) in nodes.iter().enumerate() {
            let b = 1.0 - x[0] * x[0] - x[1] * x[1];
            let (bx, by) = (-2.0 * x[0], -2.0 * x[1]);
            for (j, r) in basis.iter().enumerate() {
                let s = r.jet(x[0], x[1]);
                phi[(n, j)] = b * s.value;
                px[(n, j)] = b * s.dx1 + bx * s.value;
                py[(n, j)] = b * s.dx2 + by * s.value;
                lap[(n, j)] = b * s.laplacian + 2.0 * (bx * s.dx1 + by * s.dx2) - 4.0 * s.value;
            }
        }
        let w = DMatrix::from_diagonal(&DVector::from_column_slice(disc.weights()));
        let gram = phi.transpose() * &w * &phi;
        let chol = gram.cholesky().ok_or_else(|| {
            Error::InvalidArgument("potential basis is numerically dependent".into())
        })?;
        let t = chol
            .l()
            .try_inverse()
            .ok_or_else(|| Error::InvalidArgument("singular Cholesky factor".into()))?
            .transpose();
        let (phi, px, py, lap) = (&phi * &t, &px * &t, &py * &t, &lap * &t);

        let kk = (k + 1) as f64;
        let enl = disc.exp_neg_lambda();
        let lz = disc.lambda_z();
        let lap_lambda: Vec<f64> = nodes
            .iter()
            .map(|x| disc.metric().lambda_jet(x[0], x[1]).laplacian)
            .collect();
        let e = DMatrix::<C>::from_fn(nn, nb, |n, j| {
            let dz = C::new(0.5 * px[(n, j)], -0.5 * py[(n, j)]);
            (dz - lz[n] * phi[(n, j)] * kk) * enl[n]
        });
        let f = DMatrix::<C>::from_fn(nn, nb, |n, j| {
            let dzb = C::new(0.5 * px[(n, j)], 0.5 * py[(n, j)]);
            (dzb + lz[n].conj() * phi[(n, j)] * kk) * enl[n]
        });
        let h = DMatrix::<C>::from_fn(nn, nb, |n, j| {
            let p = phi[(n, j)];
            let dz = C::new(0.5 * px[(n, j)], -0.5 * py[(n, j)]);
            let dzb = C::new(0.5 * px[(n, j)], 0.5 * py[(n, j)]);
            let g = dz - lz[n] * p * kk;
            let dzb_g = C::new(0.25 * lap[(n, j)], 0.0)
                - (C::new(0.25 * lap_lambda[n] * p, 0.0) + lz[n] * dzb) * kk;
            (dzb_g + lz[n].conj() * g * kk) * (enl[n] * enl[n])
        });
        let wc = DMatrix::<C>::from_diagonal(&DVector::from_iterator(
            nn,
            disc.weights().iter().map(|w| C::new(*w, 0.0)),
        ));
        let a = e.adjoint() * (&wc * &e);
        let phi = phi.map(|v| C::new(v, 0.0));
        Ok(Self { phi, e, f, h, a })
    }
}

fn require_single_mode(f: &FourierField, k: i64) -> Result<()> {
    let total = f.norm();
    let rest = f.sub(&project(f, Selector::Lambda(k)))?.norm();
    if rest > 1e-12 * total {
        return Err(Error::Precondition(format!(
            "input must lie in Λ_{k} (off-mode norm {rest:.3e} of {total:.3e})"
        )));
    }
    Ok(())
}

/// `B₊f` for `f ∈ Λ_k` with `k ≥ 0`.
pub fn beurling_plus(f: &FourierField, k: i64) -> Result<BeurlingStep> {
    BeurlingSolver::new(f.discretization(), k)?.solve(f)
}

/// `B₋f = conj(B₊ conj f)` for `f ∈ Λ_{−k}` with `k ≥ 0`; the step is
/// reported in mirrored form (degree `−k`, output in `Λ_{−k−2}`).
pub fn beurling_minus(f: &FourierField, k: i64) -> Result<BeurlingStep> {
    let mut step = beurling_plus(&f.conj(), k)?;
    step.output = step.output.conj();
    step.potential = step.potential.conj();
    step.k = -k;
    Ok(step)
}

#[derive(Debug, Clone)]
pub struct BeurlingFull {
    pub m: u32,
    pub output: FourierField,
    pub plus: Option<BeurlingStep>,
    pub minus: Option<BeurlingStep>,
    pub norm_ratio: f64,
}

/// `B` on `Ω_m`: `B₊` on the `Λ_m` part and `B₋` on the `Λ_{−m}` part; on
/// `Ω_0` both act on the single coefficient.
pub fn beurling_full(f: &FourierField, m: u32) -> Result<BeurlingFull> {
    let total = f.norm();
    let rest = f.sub(&project(f, Selector::Omega(m)))?.norm();
    if rest > 1e-12 * total {
        return Err(Error::Precondition(format!(
            "input must lie in Ω_{m} (off-mode norm {rest:.3e})"
        )));
    }
    let mi = m as i64;
    let disc = f.discretization();
    if mi + 2 > disc.n_theta() as i64 {
        return Err(Error::BandOverflow {
            degree: mi + 2,
            n_theta: disc.n_theta(),
        });
    }
    let (pos, neg) = if m == 0 {
        (f.clone(), f.clone())
    } else {
        (
            project(f, Selector::Lambda(mi)),
            project(f, Selector::Lambda(-mi)),
        )
    };
    let plus = (pos.norm() > 0.0)
        .then(|| beurling_plus(&pos, mi))
        .transpose()?;
    let minus = (neg.norm() > 0.0)
        .then(|| beurling_minus(&neg, mi))
        .transpose()?;
    let mut output = FourierField::zeros(disc);
    for s in plus.iter().chain(minus.iter()) {
        output = output.add(&s.output)?;
    }
    Ok(BeurlingFull {
        m,
        norm_ratio: if total == 0.0 {
            0.0
        } else {
            output.norm() / total
        },
        output,
        plus,
        minus,
    })
}

/// Where a formal invariant distribution starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Start {
    /// `f ∈ Λ_{k₀}`, `k₀ ≥ 0`, with `η₋f = 0`; the series uses `B₊` only.
    Lambda(i64),
    /// `f ∈ Ω_{m₀}` with `X₋f = 0`; the series uses `B`.
    Omega(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MixedNormEntry {
    pub epsilon: f64,
    pub s: f64,
    pub value: f64,
    pub truncated: bool,
}

#[derive(Debug, Clone)]
pub struct InvariantDistribution {
    pub w: FourierField,
    pub start: Start,
    pub j_max: usize,
    pub f_norm: f64,
    /// `‖w_{m₀+2j}‖` for `j = 0..=J_max`.
    pub coefficient_norms: Vec<f64>,
    /// `‖project(Xw, degrees < m₀ + 2J_max)‖ / ‖f‖`.
    pub transport_residual: f64,
    pub mixed_norms: Vec<MixedNormEntry>,
    pub steps: Vec<StepSummary>,
}

fn solenoidal_defect(f: &FourierField, start: Start) -> Result<f64> {
    let disc = f.discretization();
    let defect = match start {
        Start::Lambda(k) => disc.norm_sq(&disc.eta_minus_mode(f.mode(k), k)).sqrt(),
        Start::Omega(0) => 0.0,
        Start::Omega(m) => {
            let m = m as i64;
            let a = disc.eta_minus_mode(f.mode(m), m);
            let b = disc.eta_plus_mode(f.mode(-m), -m);
            if m == 1 {
                let s: Vec<C> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
                disc.norm_sq(&s).sqrt()
            } else {
                (disc.norm_sq(&a) + disc.norm_sq(&b)).sqrt()
            }
        }
    };
    Ok(defect)
}

/// `w = Σ_{j ≤ J_max} Bʲf` with coefficient norms and the truncated transport residual.
pub fn invariant_distribution(
    f: &FourierField,
    start: Start,
    j_max: usize,
) -> Result<InvariantDistribution> {
    let disc = f.discretization().clone();
    let n_theta = disc.n_theta();
    let m0 = match start {
        Start::Lambda(k) if k < 0 => {
            return Err(Error::InvalidArgument(format!(
                "Λ start needs k₀ ≥ 0 (got {k})"
            )))
        }
        Start::Lambda(k) => k as usize,
        Start::Omega(m) => m as usize,
    };
    if 2 * j_max + m0 > n_theta {
        return Err(Error::Precondition(format!(
            "J_max = {j_max} from degree {m0} reaches degree {} but N_theta = {n_theta}; raise N_theta to at least {}",
            m0 + 2 * j_max,
            m0 + 2 * j_max
        )));
    }
    let f_norm = f.norm();
    match start {
        Start::Lambda(k) => require_single_mode(f, k)?,
        Start::Omega(m) => {
            let rest = f.sub(&project(f, Selector::Omega(m)))?.norm();
            if rest > 1e-12 * f_norm {
                return Err(Error::Precondition(format!("input must lie in Ω_{m}")));
            }
        }
    }
    if f_norm > 0.0 {
        let residual = solenoidal_defect(f, start)? / f_norm;
        if residual > 1e-10 {
            return Err(Error::NotSolenoidal { residual });
        }
    }
    let mut w = f.clone();
    let mut current = f.clone();
    let mut coefficient_norms = vec![f_norm];
    let mut steps = Vec::new();
    for j in 0..j_max {
        let m = (m0 + 2 * j) as i64;
        if current.norm() == 0.0 {
            coefficient_norms.push(0.0);
            continue;
        }
        current = match start {
            Start::Lambda(_) => {
                let s = beurling_plus(&current, m)?;
                steps.push(s.summary());
                s.output
            }
            Start::Omega(_) => {
                let b = beurling_full(&current, m as u32)?;
                steps.extend(b.plus.iter().chain(b.minus.iter()).map(|s| s.summary()));
                b.output
            }
        };
        coefficient_norms.push(current.norm());
        w = w.add(&current)?;
    }

    // Xw in degrees |d| < top; only needs w up to the top degree
    let top = (m0 + 2 * j_max) as i64;
    let mut xw_sq = 0.0;
    for d in (-top + 1)..top {
        let mut acc = vec![ZERO; disc.n_nodes()];
        if w.mode(d - 1).iter().any(|c| *c != ZERO) {
            for (a, b) in acc.iter_mut().zip(disc.eta_plus_mode(w.mode(d - 1), d - 1)) {
                *a += b;
            }
        }
        if w.mode(d + 1).iter().any(|c| *c != ZERO) {
            for (a, b) in acc
                .iter_mut()
                .zip(disc.eta_minus_mode(w.mode(d + 1), d + 1))
            {
                *a += b;
            }
        }
        xw_sq += disc.norm_sq(&acc);
    }
    let transport_residual = if f_norm == 0.0 {
        0.0
    } else {
        xw_sq.sqrt() / f_norm
    };
    let mixed_norms = [0.01, 0.1]
        .iter()
        .map(|&eps| {
            let s = -0.5 - eps;
            let mn = mixed_norm(&w, s);
            MixedNormEntry {
                epsilon: eps,
                s,
                value: mn.value,
                truncated: mn.truncated,
            }
        })
        .collect();
    Ok(InvariantDistribution {
        w,
        start,
        j_max,
        f_norm,
        coefficient_norms,
        transport_residual,
        mixed_norms,
        steps,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SurveyRow {
    pub k: i64,
    pub trials: usize,
    pub max_ratio: f64,
    pub max_residual: f64,
    pub max_iterations: usize,
}

/// Largest `‖B₊f‖/‖f‖` over `trials` seeded random `f ∈ Λ_k`, per `k`.
pub fn contraction_survey(
    disc: &Arc<Discretization>,
    ks: &[i64],
    trials: usize,
    spatial: usize,
    seed: u64,
) -> Result<Vec<SurveyRow>> {
    if trials == 0 {
        return Ok(Vec::new());
    }
    ks.iter()
        .map(|&k| {
            let solver = BeurlingSolver::new(disc, k)?;
            let steps: Vec<Result<StepSummary>> = (0..trials)
                .into_par_iter()
                .map(|t| {
                    let mut rng = ChaCha8Rng::seed_from_u64(
                        seed ^ ((k as u64) << 32) ^ (t as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
                    );
                    let f = random_field(disc, RandomFieldSpec::band(k, k, spatial), &mut rng)?;
                    Ok(solver.solve(&f)?.summary())
                })
                .collect();
            let mut row = SurveyRow {
                k,
                trials,
                max_ratio: 0.0,
                max_residual: 0.0,
                max_iterations: 0,
            };
            for s in steps {
                let s = s?;
                row.max_ratio = row.max_ratio.max(s.norm_ratio);
                row.max_residual = row.max_residual.max(s.residual);
                row.max_iterations = row.max_iterations.max(s.iterations);
            }
            Ok(row)
        })
        .collect()
}

/// `−(iξ₁ + ξ₂)/(iξ₁ − ξ₂)`, the flat-torus multiplier of `B₊` on `e^{iξ·x}`.
pub fn flat_multiplier(xi1: f64, xi2: f64) -> C {
    -C::new(xi2, xi1) / C::new(-xi2, xi1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::plane_wave;
    use crate::metric::IsothermalMetric;
    use crate::poly::Poly2;

    fn flat(n: usize, nt: usize) -> Arc<Discretization> {
        Discretization::torus(IsothermalMetric::flat_torus(), n, nt).unwrap()
    }

    fn negative_disc(degree: usize, nt: usize) -> Arc<Discretization> {
        let m = IsothermalMetric::disc(Poly2::from_real_terms(&[(2, 0, 1.0), (0, 2, 1.0)]));
        Discretization::disc(m, degree, nt).unwrap()
    }

    #[test]
    fn flat_single_mode_multiplier() {
        let d = flat(16, 6);
        for &(p, q) in &[(1.0, 0.0), (0.0, 1.0), (2.0, -1.0), (-3.0, 2.0)] {
            let f = FourierField::from_mode(&d, 1, plane_wave(&d, p, q)).unwrap();
            let s = beurling_plus(&f, 1).unwrap();
            let c = flat_multiplier(p, q);
            assert!((c.norm() - 1.0).abs() < 1e-15);
            for (o, e) in s.output.mode(3).iter().zip(plane_wave(&d, p, q)) {
                assert!((o - c * e).norm() < 1e-10, "{o} vs {}", c * e);
            }
            assert!((s.norm_ratio - 1.0).abs() < 1e-10);
            assert!(s.residual < 1e-9);
        }
        assert_eq!(flat_multiplier(1.0, 0.0), C::new(-1.0, 0.0));
    }

    #[test]
    fn constants_map_to_zero() {
        let d = flat(8, 4);
        let f = FourierField::from_fn(&d, 0, |_, _| C::new(3.0, 0.0)).unwrap();
        let s = beurling_plus(&f, 0).unwrap();
        assert_eq!(s.output.norm(), 0.0);
        assert_eq!(s.iterations, 0);
        let z = beurling_full(&FourierField::zeros(&d), 2).unwrap();
        assert_eq!(z.output.norm(), 0.0);
    }

    #[test]
    fn full_transform_of_cos_x1() {
        let d = flat(16, 6);
        let f = FourierField::from_fn(&d, 0, |x, _| C::new(x.cos(), 0.0)).unwrap();
        let b = beurling_full(&f, 0).unwrap();
        assert!((b.norm_ratio - 2f64.sqrt()).abs() < 1e-10);
        for k in [2, -2] {
            for (o, x) in b.output.mode(k).iter().zip(d.nodes()) {
                assert!((o + x[0].cos()).norm() < 1e-10);
            }
        }
        let g = FourierField::from_mode(&d, 2, plane_wave(&d, 1.0, 1.0)).unwrap();
        assert!((beurling_full(&g, 2).unwrap().norm_ratio - 1.0).abs() < 1e-8);
    }

    #[test]
    fn flat_invariant_distribution() {
        let d = flat(16, 12);
        let f = FourierField::from_fn(&d, 0, |x, _| C::new(x.cos(), 0.0)).unwrap();
        let inv = invariant_distribution(&f, Start::Omega(0), 5).unwrap();
        for j in 1..=5 {
            assert!((inv.coefficient_norms[j] / inv.f_norm - 2f64.sqrt()).abs() < 1e-8);
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            for (o, x) in inv.w.mode(2 * j as i64).iter().zip(d.nodes()) {
                assert!((o - sign * x[0].cos()).norm() < 1e-9);
            }
        }
        assert!(inv.transport_residual <= 1e-8, "{}", inv.transport_residual);
        assert!(matches!(
            invariant_distribution(&f, Start::Omega(0), 7),
            Err(Error::Precondition(msg)) if msg.contains("N_theta")
        ));
        let c = FourierField::from_fn(&d, 0, |_, _| C::new(1.0, 0.0)).unwrap();
        let inv = invariant_distribution(&c, Start::Omega(0), 3).unwrap();
        assert!(inv.w.sub(&c).unwrap().norm() < 1e-12 && inv.transport_residual < 1e-12);
        let bad = FourierField::from_mode(&d, 1, plane_wave(&d, 1.0, 0.0)).unwrap();
        assert!(matches!(
            invariant_distribution(&bad, Start::Lambda(1), 2),
            Err(Error::NotSolenoidal { .. })
        ));
    }

    #[test]
    fn disc_contraction_and_minimality() {
        let d = negative_disc(12, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for k in 0..=2 {
            let solver = BeurlingSolver::new(&d, k).unwrap();
            assert_eq!(solver.kernel_dim(), Some(0));
            let f = random_field(&d, RandomFieldSpec::band(k, k, 4), &mut rng).unwrap();
            let s = solver.solve(&f).unwrap();
            assert!(s.norm_ratio <= 1.0 + 1e-6, "k = {k}: {}", s.norm_ratio);
            assert!(s.residual <= 1e-9);
            let m = solver.minimality_check(&s, 4, &mut rng).unwrap();
            assert!(m.min_relative_increase >= 1.0 - 1e-8, "{m:?}");
        }
        // potential vanishes on the boundary
        let f = random_field(&d, RandomFieldSpec::band(1, 1, 3), &mut rng).unwrap();
        let s = beurling_plus(&f, 1).unwrap();
        let trace = d.boundary_trace(s.potential.mode(2)).unwrap();
        let scale = s
            .potential
            .mode(2)
            .iter()
            .map(|c| c.norm())
            .fold(0.0, f64::max);
        assert!(trace.iter().all(|t| t.norm() <= 1e-10 * scale));
    }

    #[test]
    fn flat_torus_minimality_and_linearity() {
        let d = flat(16, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let f = random_field(&d, RandomFieldSpec::band(1, 1, 3), &mut rng).unwrap();
        let g = random_field(&d, RandomFieldSpec::band(1, 1, 3), &mut rng).unwrap();
        let solver = BeurlingSolver::new(&d, 1).unwrap();
        let sf = solver.solve(&f).unwrap();
        let sg = solver.solve(&g).unwrap();
        let (a, b) = (C::new(0.3, -1.2), C::new(2.0, 0.5));
        let combo = solver.solve(&f.scale(a).add(&g.scale(b)).unwrap()).unwrap();
        let lin = sf.output.scale(a).add(&sg.output.scale(b)).unwrap();
        assert!(combo.output.sub(&lin).unwrap().norm() <= 1e-9 * lin.norm());
        let m = solver.minimality_check(&sf, 3, &mut rng).unwrap();
        assert!(m.min_relative_increase >= 1.0 - 1e-8, "{m:?}");
        assert_eq!(sf.kernel_dim, Some(4));
    }

    #[test]
    fn survey_shapes() {
        let d = flat(8, 6);
        assert!(contraction_survey(&d, &[0, 1], 0, 2, 1).unwrap().is_empty());
        let rows = contraction_survey(&d, &[0, 1, 2], 3, 2, 1).unwrap();
        assert_eq!(rows.len(), 3);
        for r in rows {
            assert!(r.max_ratio <= 1.0 + 1e-8 && r.max_ratio > 0.5, "{r:?}");
        }
    }
}
