//! Surfaces in isothermal coordinates.
//!
//! A metric is `g = e^{2λ(x)}(dx₁² + dx₂²)` where `λ` is a finite coefficient
//! list: real Fourier terms on the `2π`-periodic torus, or a bivariate
//! polynomial on the Euclidean coordinate unit disc. All derivatives of `λ` are
//! analytic.

use std::f64::consts::TAU;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly::Poly2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    /// `[0, 2π)²` with periodic identification.
    Torus,
    /// Euclidean coordinate unit disc `x₁² + x₂² ≤ 1`.
    Disc,
}

/// One term `a cos(p x₁ + q x₂) + b sin(p x₁ + q x₂)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FourierTerm {
    pub p: i32,
    pub q: i32,
    pub cos: f64,
    pub sin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConformalFactor {
    Fourier(Vec<FourierTerm>),
    Polynomial {
        lambda: Poly2,
        dx1: Poly2,
        dx2: Poly2,
        laplacian: Poly2,
    },
}

/// `λ` and its derivatives at a point.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LambdaJet {
    pub value: f64,
    pub dx1: f64,
    pub dx2: f64,
    pub laplacian: f64,
}

impl LambdaJet {
    /// `∂λ/∂z = ½(λ₁ − iλ₂)`.
    pub fn dz(&self) -> Complex64 {
        Complex64::new(0.5 * self.dx1, -0.5 * self.dx2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IsothermalMetric {
    domain: Domain,
    factor: ConformalFactor,
}

/// A point `(x₁, x₂, θ)` of the unit sphere bundle; `θ` is the angle from `∂/∂x₁`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub x1: f64,
    pub x2: f64,
    pub theta: f64,
}

impl PhasePoint {
    pub fn new(x1: f64, x2: f64, theta: f64) -> Self {
        Self { x1, x2, theta }
    }

    fn normalized(self) -> Self {
        Self {
            theta: self.theta.rem_euclid(TAU),
            ..self
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub points: Vec<PhasePoint>,
    /// The geodesic reached the disc boundary and was stopped there.
    pub exited: bool,
}

impl Trajectory {
    pub fn last(&self) -> PhasePoint {
        *self.points.last().expect("trajectory is never empty")
    }
}

/// Location of the first boundary hit of a disc geodesic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Exit {
    pub tau: f64,
    pub point: PhasePoint,
}

/// Default cap on RK4 steps for a single geodesic.
pub const DEFAULT_MAX_STEPS: usize = 20_000_000;

impl IsothermalMetric {
    pub fn flat_torus() -> Self {
        Self::torus(Vec::new())
    }

    pub fn torus(terms: Vec<FourierTerm>) -> Self {
        Self {
            domain: Domain::Torus,
            factor: ConformalFactor::Fourier(terms),
        }
    }

    /// `λ = amplitude · cos x₁` on the torus.
    pub fn torus_cos_x1(amplitude: f64) -> Self {
        Self::torus(vec![FourierTerm {
            p: 1,
            q: 0,
            cos: amplitude,
            sin: 0.0,
        }])
    }

    pub fn euclidean_disc() -> Self {
        Self::disc(Poly2::zero(0))
    }

    pub fn disc(lambda: Poly2) -> Self {
        let dx1 = lambda.dx1();
        let dx2 = lambda.dx2();
        let laplacian = lambda.laplacian();
        Self {
            domain: Domain::Disc,
            factor: ConformalFactor::Polynomial {
                lambda,
                dx1,
                dx2,
                laplacian,
            },
        }
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn factor(&self) -> &ConformalFactor {
        &self.factor
    }

    /// The conformal factor polynomial on the disc.
    pub fn lambda_poly(&self) -> Option<&Poly2> {
        match &self.factor {
            ConformalFactor::Polynomial { lambda, .. } => Some(lambda),
            ConformalFactor::Fourier(_) => None,
        }
    }

    /// True when every coefficient of `λ` vanishes.
    pub fn is_flat(&self) -> bool {
        match &self.factor {
            ConformalFactor::Fourier(t) => t.iter().all(|t| t.cos == 0.0 && t.sin == 0.0),
            ConformalFactor::Polynomial { dx1, dx2, .. } => {
                dx1.max_abs_coeff() == 0.0 && dx2.max_abs_coeff() == 0.0
            }
        }
    }

    pub fn lambda_jet(&self, x1: f64, x2: f64) -> LambdaJet {
        match &self.factor {
            ConformalFactor::Fourier(terms) => {
                let mut j = LambdaJet::default();
                for t in terms {
                    let (p, q) = (t.p as f64, t.q as f64);
                    let arg = p * x1 + q * x2;
                    let (s, c) = arg.sin_cos();
                    let val = t.cos * c + t.sin * s;
                    let der = -t.cos * s + t.sin * c;
                    j.value += val;
                    j.dx1 += p * der;
                    j.dx2 += q * der;
                    j.laplacian -= (p * p + q * q) * val;
                }
                j
            }
            ConformalFactor::Polynomial {
                lambda,
                dx1,
                dx2,
                laplacian,
            } => LambdaJet {
                value: lambda.eval_re(x1, x2),
                dx1: dx1.eval_re(x1, x2),
                dx2: dx2.eval_re(x1, x2),
                laplacian: laplacian.eval_re(x1, x2),
            },
        }
    }

    fn check_point(&self, x1: f64, x2: f64) -> Result<()> {
        let inside = match self.domain {
            Domain::Torus => x1.is_finite() && x2.is_finite(),
            Domain::Disc => x1 * x1 + x2 * x2 <= 1.0 + 1e-12,
        };
        if inside {
            Ok(())
        } else {
            Err(Error::Domain { x1, x2 })
        }
    }

    /// Gaussian curvature `K = −e^{−2λ} Δλ`.
    pub fn curvature_at(&self, x1: f64, x2: f64) -> Result<f64> {
        self.check_point(x1, x2)?;
        Ok(self.curvature_unchecked(x1, x2))
    }

    pub(crate) fn curvature_unchecked(&self, x1: f64, x2: f64) -> f64 {
        let j = self.lambda_jet(x1, x2);
        -(-2.0 * j.value).exp() * j.laplacian
    }

    /// Density of the Liouville measure `e^{2λ} dx₁ dx₂ dθ` with respect to
    /// coordinate measure.
    pub fn sm_volume_element(&self, x1: f64, x2: f64) -> f64 {
        (2.0 * self.lambda_jet(x1, x2).value).exp()
    }

    /// Right-hand side of the geodesic equations.
    pub fn geodesic_rhs(&self, p: &PhasePoint) -> [f64; 3] {
        let j = self.lambda_jet(p.x1, p.x2);
        let e = (-j.value).exp();
        let (s, c) = p.theta.sin_cos();
        [e * c, e * s, e * (-j.dx1 * s + j.dx2 * c)]
    }

    fn rk4(&self, p: &PhasePoint, h: f64) -> PhasePoint {
        let shift = |p: &PhasePoint, k: &[f64; 3], a: f64| PhasePoint {
            x1: p.x1 + a * k[0],
            x2: p.x2 + a * k[1],
            theta: p.theta + a * k[2],
        };
        let k1 = self.geodesic_rhs(p);
        let k2 = self.geodesic_rhs(&shift(p, &k1, 0.5 * h));
        let k3 = self.geodesic_rhs(&shift(p, &k2, 0.5 * h));
        let k4 = self.geodesic_rhs(&shift(p, &k3, h));
        PhasePoint {
            x1: p.x1 + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
            x2: p.x2 + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
            theta: p.theta + h / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]),
        }
    }

    /// Single RK4 step of the geodesic flow.
    pub fn step(&self, p: &PhasePoint, h: f64) -> PhasePoint {
        self.rk4(p, h)
    }

    /// Metric speed `e^{2λ}|ẋ|²` of the flow at `p` (identically one in exact arithmetic).
    pub fn speed_squared(&self, p: &PhasePoint) -> f64 {
        let r = self.geodesic_rhs(p);
        self.sm_volume_element(p.x1, p.x2) * (r[0] * r[0] + r[1] * r[1])
    }

    /// Fixed-step RK4 integration of the geodesic flow up to `t_end`; on the
    /// disc the trajectory is cut at the first boundary crossing.
    pub fn geodesic_flow(&self, p0: PhasePoint, t_end: f64, dt: f64) -> Result<Trajectory> {
        self.geodesic_flow_capped(p0, t_end, dt, DEFAULT_MAX_STEPS)
    }

    pub fn geodesic_flow_capped(
        &self,
        p0: PhasePoint,
        t_end: f64,
        dt: f64,
        max_steps: usize,
    ) -> Result<Trajectory> {
        if !(dt > 0.0) || !(t_end >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "geodesic_flow needs dt > 0 and t_end ≥ 0 (got dt = {dt}, t_end = {t_end})"
            )));
        }
        self.check_point(p0.x1, p0.x2)?;
        let n_steps = (t_end / dt).ceil() as usize;
        let h = if n_steps == 0 {
            0.0
        } else {
            t_end / n_steps as f64
        };
        let mut traj = Trajectory {
            times: vec![0.0],
            points: vec![p0.normalized()],
            exited: false,
        };
        let mut p = p0;
        let mut gap_prev = -1.0;
        for i in 0..n_steps {
            if i >= max_steps {
                return Err(Error::Trapped {
                    steps: max_steps,
                    partial: Box::new(traj),
                });
            }
            let next = self.rk4(&p, h);
            let gap = boundary_gap(&next);
            if self.domain == Domain::Disc && gap >= 0.0 && gap_prev < 0.0 {
                let (s, q) = self.locate_exit(&p, h);
                traj.times.push(i as f64 * h + s);
                traj.points.push(q.normalized());
                traj.exited = true;
                return Ok(traj);
            }
            gap_prev = gap;
            p = next;
            traj.times.push((i + 1) as f64 * h);
            traj.points.push(p.normalized());
        }
        Ok(traj)
    }

    /// Bisection for the boundary crossing within one step of length `h`.
    fn locate_exit(&self, p: &PhasePoint, h: f64) -> (f64, PhasePoint) {
        let (mut lo, mut hi) = (0.0, h);
        while hi - lo > 1e-12 {
            let mid = 0.5 * (lo + hi);
            if boundary_gap(&self.rk4(p, mid)) >= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let s = 0.5 * (lo + hi);
        (s, self.rk4(p, s))
    }

    /// Arc length until the geodesic through `p0` first meets `|x| = 1`.
    pub fn exit_time(&self, p0: PhasePoint) -> Result<f64> {
        self.exit(p0, 1e-3, 1e3).map(|e| e.tau)
    }

    /// Exit time and exit point, with explicit step and maximal length.
    pub fn exit(&self, p0: PhasePoint, dt: f64, max_length: f64) -> Result<Exit> {
        if self.domain != Domain::Disc {
            return Err(Error::Precondition("exit_time needs a disc domain".into()));
        }
        self.check_point(p0.x1, p0.x2)?;
        let r2 = p0.x1 * p0.x1 + p0.x2 * p0.x2;
        let outward = p0.x1 * p0.theta.cos() + p0.x2 * p0.theta.sin();
        if r2 > 1.0 - 1e-12 && outward > 1e-9 {
            return Err(Error::Precondition(
                "boundary start must point inward or tangentially".into(),
            ));
        }
        let mut p = p0;
        let mut t = 0.0;
        // a boundary start counts as inside for the first step
        let mut gap_prev = -1.0;
        let max_steps = (max_length / dt).ceil() as usize;
        for _ in 0..max_steps {
            let next = self.rk4(&p, dt);
            let gap = boundary_gap(&next);
            if gap >= 0.0 && gap_prev < 0.0 {
                let (s, q) = self.locate_exit(&p, dt);
                return Ok(Exit {
                    tau: t + s,
                    point: q.normalized(),
                });
            }
            gap_prev = gap;
            p = next;
            t += dt;
        }
        Err(Error::NonTrapping { max_length })
    }

    /// Geodesic curvature of `∂M` at 256 equispaced boundary points,
    /// `κ = e^{−λ}(1 + ∂_r λ)`; the boundary is strictly convex when all are positive.
    pub fn boundary_convexity(&self) -> Option<BoundaryConvexity> {
        if self.domain != Domain::Disc {
            return None;
        }
        let kappa: Vec<f64> = (0..256)
            .map(|i| {
                let phi = TAU * i as f64 / 256.0;
                let (s, c) = phi.sin_cos();
                let j = self.lambda_jet(c, s);
                (-j.value).exp() * (1.0 + c * j.dx1 + s * j.dx2)
            })
            .collect();
        let min = kappa.iter().copied().fold(f64::INFINITY, f64::min);
        Some(BoundaryConvexity {
            min_geodesic_curvature: min,
            strictly_convex: min > 0.0,
        })
    }

    /// Total volume of `SM` by the given spatial quadrature.
    pub fn sm_volume(&self, nodes: &[[f64; 2]], weights: &[f64]) -> f64 {
        nodes
            .iter()
            .zip(weights)
            .map(|(p, w)| w * self.sm_volume_element(p[0], p[1]))
            .sum::<f64>()
            * TAU
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundaryConvexity {
    pub min_geodesic_curvature: f64,
    pub strictly_convex: bool,
}

fn boundary_gap(p: &PhasePoint) -> f64 {
    p.x1 * p.x1 + p.x2 * p.x2 - 1.0
}

/// Chord length `2√(1 − d²)` of the unit circle at distance `d` from the centre.
pub fn chord_length(d: f64) -> f64 {
    2.0 * (1.0 - d * d).max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn lambda_r2() -> IsothermalMetric {
        IsothermalMetric::disc(Poly2::from_real_terms(&[(2, 0, 1.0), (0, 2, 1.0)]))
    }

    #[test]
    fn curvature_examples() {
        let flat = IsothermalMetric::flat_torus();
        assert_eq!(flat.curvature_at(1.0, 2.0).unwrap(), 0.0);
        assert!((lambda_r2().curvature_at(0.0, 0.0).unwrap() + 4.0).abs() < 1e-15);
        // λ = 0.1 cos x₁: Δλ(0) = −0.1, so K(0) = e^{−0.2}·0.1.
        let m = IsothermalMetric::torus_cos_x1(0.1);
        let oracle = -(-0.2f64).exp() * (-0.1);
        assert!((m.curvature_at(0.0, 0.0).unwrap() - oracle).abs() < 1e-15);
        assert!(matches!(
            lambda_r2().curvature_at(1.0, 0.5),
            Err(Error::Domain { .. })
        ));
    }

    #[test]
    fn curvature_matches_finite_difference_laplacian() {
        let m = IsothermalMetric::torus(vec![
            FourierTerm {
                p: 1,
                q: 2,
                cos: 0.2,
                sin: -0.1,
            },
            FourierTerm {
                p: 0,
                q: 1,
                cos: 0.0,
                sin: 0.3,
            },
        ]);
        let (x, y) = (0.7, -1.3);
        let lam = |a: f64, b: f64| m.lambda_jet(a, b).value;
        let mut errs = Vec::new();
        for h in [1e-2, 5e-3] {
            let lap = (lam(x + h, y) + lam(x - h, y) + lam(x, y + h) + lam(x, y - h)
                - 4.0 * lam(x, y))
                / (h * h);
            let k_fd = -(-2.0 * lam(x, y)).exp() * lap;
            errs.push((k_fd - m.curvature_at(x, y).unwrap()).abs());
        }
        // second order: halving h divides the error by ~4
        assert!(errs[1] < errs[0] / 3.5, "{errs:?}");
    }

    #[test]
    fn straight_lines() {
        let flat = IsothermalMetric::flat_torus();
        let t = flat
            .geodesic_flow(PhasePoint::new(0.0, 0.0, 0.0), PI, 1e-3)
            .unwrap();
        let p = t.last();
        assert!((p.x1 - PI).abs() < 1e-12 && p.x2.abs() < 1e-12 && p.theta.abs() < 1e-12);

        let disc = IsothermalMetric::euclidean_disc();
        let t = disc
            .geodesic_flow(PhasePoint::new(-1.0, 0.0, 0.0), 1.0, 1e-3)
            .unwrap();
        let p = t.last();
        assert!(p.x1.abs() < 1e-12 && p.x2.abs() < 1e-12);
        assert!(!t.exited);
    }

    #[test]
    fn unit_speed_is_conserved() {
        let m = IsothermalMetric::torus_cos_x1(0.1);
        let t = m
            .geodesic_flow(PhasePoint::new(0.3, 0.1, 0.4), 10.0, 1e-3)
            .unwrap();
        let worst = t
            .points
            .iter()
            .map(|p| (m.speed_squared(p) - 1.0).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 1e-10, "speed drift {worst}");
    }

    #[test]
    fn flow_is_reversible() {
        let m = IsothermalMetric::torus(vec![FourierTerm {
            p: 1,
            q: 1,
            cos: 0.2,
            sin: 0.1,
        }]);
        let p0 = PhasePoint::new(0.5, 1.0, 2.0);
        let p1 = m.geodesic_flow(p0, 3.0, 1e-3).unwrap().last();
        let back = PhasePoint::new(p1.x1, p1.x2, p1.theta + PI);
        let p2 = m.geodesic_flow(back, 3.0, 1e-3).unwrap().last();
        assert!((p2.x1 - p0.x1).abs() < 1e-8 && (p2.x2 - p0.x2).abs() < 1e-8);
        let dtheta = (p2.theta - p0.theta - PI).rem_euclid(TAU);
        assert!(dtheta.min(TAU - dtheta) < 1e-8);
    }

    #[test]
    fn exit_times_on_the_euclidean_disc() {
        let d = IsothermalMetric::euclidean_disc();
        assert!((d.exit_time(PhasePoint::new(-1.0, 0.0, 0.0)).unwrap() - 2.0).abs() < 1e-10);
        let x0 = -(0.75f64).sqrt();
        let tau = d.exit_time(PhasePoint::new(x0, 0.5, 0.0)).unwrap();
        assert!((tau - 3f64.sqrt()).abs() < 1e-10);
        for theta in [0.0, 1.0, 4.0] {
            let tau = d.exit_time(PhasePoint::new(0.0, 0.0, theta)).unwrap();
            assert!((tau - 1.0).abs() < 1e-10);
        }
        assert!(matches!(
            IsothermalMetric::flat_torus().exit_time(PhasePoint::new(0.0, 0.0, 0.0)),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn trapping_and_nontrapping_errors() {
        let d = IsothermalMetric::euclidean_disc();
        let err = d
            .geodesic_flow_capped(PhasePoint::new(0.0, 0.0, 0.0), 0.5, 1e-3, 10)
            .unwrap_err();
        match err {
            Error::Trapped { partial, steps } => {
                assert_eq!(steps, 10);
                assert_eq!(partial.points.len(), 11);
            }
            e => panic!("unexpected {e}"),
        }
        assert!(matches!(
            d.exit(PhasePoint::new(0.0, 0.0, 0.0), 1e-3, 0.5),
            Err(Error::NonTrapping { .. })
        ));
    }

    #[test]
    fn volume_elements() {
        assert_eq!(
            IsothermalMetric::flat_torus().sm_volume_element(0.2, 0.3),
            1.0
        );
        let c = IsothermalMetric::disc(Poly2::from_real_terms(&[(0, 0, 0.3)]));
        assert!((c.sm_volume_element(0.1, 0.1) - (0.6f64).exp()).abs() < 1e-15);
        let q = crate::quadrature::DiscQuadrature::new(4, 8);
        let v = IsothermalMetric::euclidean_disc().sm_volume(&q.nodes, &q.weights);
        assert!((v - 2.0 * PI * PI).abs() < 1e-12);
    }

    #[test]
    fn convexity_diagnostic() {
        let c = lambda_r2().boundary_convexity().unwrap();
        assert!(c.strictly_convex);
        assert!((c.min_geodesic_curvature - 3.0 * (-1.0f64).exp()).abs() < 1e-12);
        // λ = −|x|² bends the boundary the other way: 1 − 2 < 0.
        let concave = IsothermalMetric::disc(Poly2::from_real_terms(&[(2, 0, -1.0), (0, 2, -1.0)]));
        assert!(!concave.boundary_convexity().unwrap().strictly_convex);
    }
}
