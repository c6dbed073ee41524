//! Scalar β-Jacobi and Riccati equations along a unit-speed geodesic.
//!
//! Everything here works with the curvature `K(t)` seen by a geodesic,
//! either given by a formula or sampled from [`IsothermalMetric::geodesic_flow`].
//! Green solutions are quotients `J'/J` of linear solutions, so the Riccati
//! equation is never integrated through a pole.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::identities::Residual;
use crate::metric::{IsothermalMetric, PhasePoint};
use crate::quadrature::gauss_legendre_interval;

/// Curvature as a function of arc length.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Curvature {
    Constant {
        value: f64,
    },
    /// `mean + Σ_j cos[j]·cos((j+1)ωt) + sin[j]·sin((j+1)ωt)`.
    Trigonometric {
        mean: f64,
        omega: f64,
        cos: Vec<f64>,
        sin: Vec<f64>,
    },
    PositivePart {
        inner: Box<Curvature>,
    },
    /// Samples at `t = i·dt`, interpolated by cubic Catmull-Rom segments.
    Sampled {
        dt: f64,
        values: Vec<f64>,
    },
}

impl Curvature {
    fn eval(&self, t: f64) -> f64 {
        match self {
            Curvature::Constant { value } => *value,
            Curvature::Trigonometric {
                mean,
                omega,
                cos,
                sin,
            } => {
                let mut s = *mean;
                for (j, (a, b)) in cos.iter().zip(sin.iter()).enumerate() {
                    let arg = (j + 1) as f64 * omega * t;
                    s += a * arg.cos() + b * arg.sin();
                }
                s
            }
            Curvature::PositivePart { inner } => inner.eval(t).max(0.0),
            Curvature::Sampled { dt, values } => catmull_rom(values, t / dt),
        }
    }

    fn max_abs(&self) -> f64 {
        match self {
            Curvature::Constant { value } => value.abs(),
            Curvature::Trigonometric { mean, cos, sin, .. } => {
                mean.abs() + cos.iter().chain(sin.iter()).map(|c| c.abs()).sum::<f64>()
            }
            Curvature::PositivePart { inner } => inner.max_abs(),
            Curvature::Sampled { values, .. } => values.iter().fold(0.0, |m, v| m.max(v.abs())),
        }
    }
}

fn catmull_rom(values: &[f64], s: f64) -> f64 {
    let n = values.len();
    if n == 1 {
        return values[0];
    }
    let s = s.clamp(0.0, (n - 1) as f64);
    let i = (s.floor() as usize).min(n - 2);
    let u = s - i as f64;
    let at = |j: isize| values[j.clamp(0, n as isize - 1) as usize];
    let (p0, p1, p2, p3) = (
        at(i as isize - 1),
        at(i as isize),
        at(i as isize + 1),
        at(i as isize + 2),
    );
    0.5 * (2.0 * p1
        + (-p0 + p2) * u
        + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * u * u
        + (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * u * u * u)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvatureProfile {
    pub curvature: Curvature,
    pub length: f64,
    pub periodic: bool,
}

impl CurvatureProfile {
    pub fn constant(k: f64, length: f64) -> Self {
        Self {
            curvature: Curvature::Constant { value: k },
            length,
            periodic: false,
        }
    }

    pub fn periodic(curvature: Curvature, period: f64) -> Self {
        Self {
            curvature,
            length: period,
            periodic: true,
        }
    }

    pub fn new(curvature: Curvature, length: f64) -> Self {
        Self {
            curvature,
            length,
            periodic: false,
        }
    }

    /// `K` sampled along the geodesic from `p0` over `[0, length]` (shorter
    /// if a disc geodesic exits first).
    pub fn along_geodesic(
        metric: &IsothermalMetric,
        p0: PhasePoint,
        length: f64,
        dt: f64,
    ) -> Result<Self> {
        let traj = metric.geodesic_flow(p0, length, dt)?;
        let h = if traj.times.len() > 1 {
            traj.times[1]
        } else {
            dt
        };
        let mut values: Vec<f64> = traj
            .points
            .iter()
            .map(|p| metric.curvature_unchecked(p.x1, p.x2))
            .collect();
        if traj.exited {
            values.pop();
        }
        if values.len() < 2 {
            return Err(Error::InvalidArgument(
                "geodesic too short to sample".into(),
            ));
        }
        Ok(Self {
            length: h * (values.len() - 1) as f64,
            curvature: Curvature::Sampled { dt: h, values },
            periodic: false,
        })
    }

    pub fn k(&self, t: f64) -> f64 {
        let t = if self.periodic {
            t.rem_euclid(self.length)
        } else {
            t
        };
        self.curvature.eval(t)
    }

    pub fn max_abs_k(&self) -> f64 {
        self.curvature.max_abs()
    }

    fn is_sampled(&self) -> bool {
        matches!(self.curvature, Curvature::Sampled { .. })
    }

    /// `1e−3·min(1, 1/√(β·max|K|))`.
    pub fn step_size(&self, beta: f64) -> f64 {
        let s = beta * self.max_abs_k();
        if s > 1.0 {
            1e-3 / s.sqrt()
        } else {
            1e-3
        }
    }

    pub fn default_horizon(&self, beta: f64) -> f64 {
        20.0 / (beta * self.max_abs_k() + 1.0).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JacobiTrajectory {
    pub times: Vec<f64>,
    pub j: Vec<f64>,
    pub jp: Vec<f64>,
}

fn rk4(profile: &CurvatureProfile, beta: f64, t: f64, y: [f64; 2], h: f64) -> [f64; 2] {
    let f = |t: f64, y: [f64; 2]| [y[1], -beta * profile.k(t) * y[0]];
    let k1 = f(t, y);
    let k2 = f(
        t + 0.5 * h,
        [y[0] + 0.5 * h * k1[0], y[1] + 0.5 * h * k1[1]],
    );
    let k3 = f(
        t + 0.5 * h,
        [y[0] + 0.5 * h * k2[0], y[1] + 0.5 * h * k2[1]],
    );
    let k4 = f(t + h, [y[0] + h * k3[0], y[1] + h * k3[1]]);
    [
        y[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        y[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
    ]
}

/// Visits `(t, J, J')` from `t0` to `t1` (either direction) with equal
/// steps no longer than the profile step size.
fn integrate(
    profile: &CurvatureProfile,
    beta: f64,
    t0: f64,
    t1: f64,
    y0: [f64; 2],
    renormalize: bool,
    mut visit: impl FnMut(f64, [f64; 2]) -> bool,
) -> [f64; 2] {
    let dt = profile.step_size(beta);
    let n = ((t1 - t0).abs() / dt).ceil().max(1.0) as usize;
    let h = (t1 - t0) / n as f64;
    let mut y = y0;
    if !visit(t0, y) {
        return y;
    }
    for i in 0..n {
        y = rk4(profile, beta, t0 + i as f64 * h, y, h);
        if renormalize {
            let scale = y[0].abs().max(y[1].abs());
            if scale > 1e150 {
                y = [y[0] / scale, y[1] / scale];
            }
        }
        if !visit(t0 + (i + 1) as f64 * h, y) {
            break;
        }
    }
    y
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta >= 0.0) || !beta.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "β = {beta} must be finite and ≥ 0"
        )));
    }
    Ok(())
}

/// `J'' + βK(t)J = 0` on `[0, L]` from `(J(0), J'(0))`.
pub fn solve_beta_jacobi(
    profile: &CurvatureProfile,
    beta: f64,
    initial: (f64, f64),
) -> Result<JacobiTrajectory> {
    check_beta(beta)?;
    let mut out = JacobiTrajectory {
        times: Vec::new(),
        j: Vec::new(),
        jp: Vec::new(),
    };
    integrate(
        profile,
        beta,
        0.0,
        profile.length,
        [initial.0, initial.1],
        false,
        |t, y| {
            out.times.push(t);
            out.j.push(y[0]);
            out.jp.push(y[1]);
            true
        },
    );
    Ok(out)
}

fn first_zero_after(profile: &CurvatureProfile, beta: f64, t0: f64, t_end: f64) -> Option<f64> {
    let mut prev: Option<(f64, [f64; 2])> = None;
    let mut found = None;
    integrate(profile, beta, t0, t_end, [0.0, 1.0], true, |t, y| {
        if let Some((tp, yp)) = prev {
            if yp[0] * y[0] < 0.0 || (y[0] == 0.0 && yp[0] != 0.0) {
                found = Some((tp, yp, t - tp));
                return false;
            }
        }
        prev = Some((t, y));
        true
    });
    let (tp, yp, h) = found?;
    let (mut lo, mut hi) = (0.0, h);
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if rk4(profile, beta, tp, yp, mid)[0] * yp[0] <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(tp + 0.5 * (lo + hi))
}

/// First positive zero of the solution with `J(0) = 0, J'(0) = 1` in `(0, L]`.
pub fn first_conjugate_time(profile: &CurvatureProfile, beta: f64) -> Result<Option<f64>> {
    check_beta(beta)?;
    Ok(first_zero_after(profile, beta, 0.0, profile.length))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TerminatorEstimate {
    pub beta_lower: f64,
    /// `None` when no profile has a conjugate point up to `β_max`.
    pub beta_upper: Option<f64>,
    pub witness: Option<usize>,
    pub conjugate_free_to_max: bool,
}

fn any_conjugate(profiles: &[CurvatureProfile], beta: f64) -> Option<usize> {
    profiles
        .par_iter()
        .enumerate()
        .filter_map(|(i, p)| first_zero_after(p, beta, 0.0, p.length).map(|_| i))
        .min()
}

/// Bisection on `β ∈ [0, β_max]` for the smallest `β` at which some profile
/// has a conjugate point. `beta_upper` is witnessed by a found conjugate
/// point; `beta_lower` holds only for the given profiles and lengths.
pub fn estimate_terminator(
    profiles: &[CurvatureProfile],
    beta_max: f64,
    tol: f64,
) -> Result<TerminatorEstimate> {
    if profiles.is_empty() {
        return Err(Error::InvalidArgument("no curvature profiles given".into()));
    }
    if !(beta_max > 0.0) || !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need β_max > 0 and tol > 0 (got {beta_max}, {tol})"
        )));
    }
    let Some(mut witness) = any_conjugate(profiles, beta_max) else {
        return Ok(TerminatorEstimate {
            beta_lower: beta_max,
            beta_upper: None,
            witness: None,
            conjugate_free_to_max: true,
        });
    };
    let (mut lo, mut hi) = (0.0, beta_max);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        match any_conjugate(profiles, mid) {
            Some(w) => {
                hi = mid;
                witness = w;
            }
            None => lo = mid,
        }
    }
    Ok(TerminatorEstimate {
        beta_lower: lo,
        beta_upper: Some(hi),
        witness: Some(witness),
        conjugate_free_to_max: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    /// `U⁻`, from solutions vanishing at `t + T`.
    Minus,
    /// `U⁺`, from solutions vanishing at `t − T`.
    Plus,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiccatiRecord {
    pub beta: f64,
    pub side: Side,
    pub horizon: f64,
    pub times: Vec<f64>,
    /// Extrapolated values `2S_{2T} − S_T`.
    pub values: Vec<f64>,
    /// `max_t |S_T(t) − S_{2T}(t)|`.
    pub convergence: f64,
    /// `max |U̇ + U² + βK|` for the horizon-`2T` solutions.
    pub riccati_residual: f64,
}

impl RiccatiRecord {
    pub fn at_zero(&self) -> f64 {
        self.values[0]
    }

    /// Piecewise-linear in `t`, periodic over the sampled window.
    pub fn value_at(&self, t: f64) -> f64 {
        let n = self.times.len();
        if n == 1 {
            return self.values[0];
        }
        let span = self.times[n - 1] - self.times[0];
        let step = span / (n - 1) as f64;
        let s = ((t - self.times[0]).rem_euclid(span)) / step;
        let i = (s.floor() as usize).min(n - 2);
        let u = s - i as f64;
        self.values[i] * (1.0 - u) + self.values[i + 1] * u
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LadderEntry {
    pub horizon: f64,
    pub s_minus: f64,
    pub s_plus: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GreenSolutions {
    pub minus: RiccatiRecord,
    pub plus: RiccatiRecord,
    /// `S_T(0)` on `T/4, T/2, T, 2T`.
    pub ladder: Vec<LadderEntry>,
    /// `S_T(0)` for `U⁻` never decreases, and for `U⁺` never increases, up the ladder.
    pub monotone: bool,
}

/// `S(t) = J'(t)/J(t)` for the solution vanishing at `t ± horizon`; also
/// returns the largest Riccati residual on the first half of that solution.
fn quotient(profile: &CurvatureProfile, beta: f64, t: f64, horizon: f64, side: Side) -> (f64, f64) {
    let (start, y0) = match side {
        Side::Minus => (t + horizon, [0.0, 1.0]),
        Side::Plus => (t - horizon, [0.0, 1.0]),
    };
    let mut us: Vec<f64> = Vec::new();
    let half = 0.5 * horizon;
    let y = integrate(profile, beta, start, t, y0, true, |s, y| {
        if (s - t).abs() <= half {
            us.push(y[1] / y[0]);
        }
        true
    });
    let dt_abs = horizon / ((horizon / profile.step_size(beta)).ceil().max(1.0));
    let h = match side {
        Side::Minus => -dt_abs,
        Side::Plus => dt_abs,
    };
    let mut residual: f64 = 0.0;
    let n = us.len();
    let t_first = t - (n as f64 - 1.0) * h;
    for i in 2..n.saturating_sub(2) {
        let du = (-us[i + 2] + 8.0 * us[i + 1] - 8.0 * us[i - 1] + us[i - 2]) / (12.0 * h);
        let s = t_first + i as f64 * h;
        residual = residual.max((du + us[i] * us[i] + beta * profile.k(s)).abs());
    }
    (y[1] / y[0], residual)
}

fn sample_times(profile: &CurvatureProfile, horizon: f64) -> Result<Vec<f64>> {
    const SAMPLES: usize = 17;
    if profile.is_sampled() && !profile.periodic {
        let (a, b) = (2.0 * horizon, profile.length - 2.0 * horizon);
        if b < a {
            return Err(Error::Precondition(format!(
                "sampled profile of length {} is shorter than 4T = {}",
                profile.length,
                4.0 * horizon
            )));
        }
        return Ok((0..SAMPLES)
            .map(|i| a + (b - a) * i as f64 / (SAMPLES - 1) as f64)
            .collect());
    }
    Ok((0..SAMPLES)
        .map(|i| profile.length * i as f64 / (SAMPLES - 1) as f64)
        .collect())
}

/// Green solutions `U⁻`, `U⁺` from quotients of linear Jacobi solutions with
/// horizons `T` and `2T`, after checking the window for conjugate points.
pub fn green_solutions(
    profile: &CurvatureProfile,
    beta: f64,
    horizon: Option<f64>,
) -> Result<GreenSolutions> {
    check_beta(beta)?;
    let t = horizon.unwrap_or_else(|| profile.default_horizon(beta));
    if !(t > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "horizon T = {t} must be positive"
        )));
    }
    let times = sample_times(profile, t)?;
    let (lo, hi) = (times[0] - 2.0 * t, times[times.len() - 1] + 2.0 * t);
    if let Some(z) = first_zero_after(profile, beta, lo, hi) {
        return Err(Error::ConjugatePoint { t: z });
    }
    let record = |side: Side| {
        let rows: Vec<(f64, f64, f64)> = times
            .par_iter()
            .map(|&s| {
                let (a, _) = quotient(profile, beta, s, t, side);
                let (b, r) = quotient(profile, beta, s, 2.0 * t, side);
                (2.0 * b - a, (a - b).abs(), r)
            })
            .collect();
        RiccatiRecord {
            beta,
            side,
            horizon: t,
            times: times.clone(),
            values: rows.iter().map(|r| r.0).collect(),
            convergence: rows.iter().fold(0.0, |m, r| m.max(r.1)),
            riccati_residual: rows.iter().fold(0.0, |m, r| m.max(r.2)),
        }
    };
    let minus = record(Side::Minus);
    let plus = record(Side::Plus);
    let ladder: Vec<LadderEntry> = [0.25, 0.5, 1.0, 2.0]
        .iter()
        .map(|f| LadderEntry {
            horizon: f * t,
            s_minus: quotient(profile, beta, times[0], f * t, Side::Minus).0,
            s_plus: quotient(profile, beta, times[0], f * t, Side::Plus).0,
        })
        .collect();
    let monotone = ladder
        .windows(2)
        .all(|w| w[1].s_minus >= w[0].s_minus - 1e-9 && w[1].s_plus <= w[0].s_plus + 1e-9);
    Ok(GreenSolutions {
        minus,
        plus,
        ladder,
        monotone,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HyperbolicityReport {
    pub gap: f64,
    pub convergence: f64,
    pub hyperbolic: bool,
    /// `K` vanishes along the profile, so a parallel orthogonal Jacobi field exists.
    pub rank_one: bool,
    /// `U⁺ ≥ U⁻ − 1e−8` at every sampled time.
    pub ordered: bool,
    pub green: GreenSolutions,
}

pub fn hyperbolicity_gap(
    profile: &CurvatureProfile,
    beta: f64,
    horizon: Option<f64>,
) -> Result<HyperbolicityReport> {
    let green = green_solutions(profile, beta, horizon)?;
    let diffs: Vec<f64> = green
        .plus
        .values
        .iter()
        .zip(&green.minus.values)
        .map(|(p, m)| p - m)
        .collect();
    let gap = diffs.iter().cloned().fold(f64::INFINITY, f64::min);
    let convergence = green.plus.convergence.max(green.minus.convergence);
    Ok(HyperbolicityReport {
        gap,
        convergence,
        hyperbolic: gap > (10.0 * convergence).max(1e-8),
        rank_one: profile.max_abs_k() <= 1e-10,
        ordered: diffs.iter().all(|d| *d >= -1e-8),
        green,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndexForm {
    pub eigenvalues: Vec<f64>,
    pub min_eigenvalue: f64,
    pub positive: bool,
}

fn panel_rule(length: f64, panels: usize, order: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = Vec::with_capacity(panels * order);
    let mut weights = Vec::with_capacity(panels * order);
    for p in 0..panels {
        let a = length * p as f64 / panels as f64;
        let b = length * (p + 1) as f64 / panels as f64;
        let (x, w) = gauss_legendre_interval(order, a, b);
        nodes.extend(x);
        weights.extend(w);
    }
    (nodes, weights)
}

/// `∫₀ᴸ (ẇ² − βKw²) dt` on the `L²`-orthonormal sine basis `√(2/L) sin(jπt/L)`.
pub fn index_form(
    profile: &CurvatureProfile,
    beta: f64,
    length: f64,
    n_modes: usize,
) -> Result<IndexForm> {
    check_beta(beta)?;
    if !(length > 0.0) || n_modes == 0 {
        return Err(Error::InvalidArgument(format!(
            "index form needs L > 0 and n_modes ≥ 1 (got {length}, {n_modes})"
        )));
    }
    let (nodes, weights) = panel_rule(length, 8 * n_modes.max(4), 8);
    let norm = 2.0 / length;
    let ks: Vec<f64> = nodes.iter().map(|t| profile.k(*t)).collect();
    let m = DMatrix::from_fn(n_modes, n_modes, |i, j| {
        let (a, b) = (
            (i + 1) as f64 * std::f64::consts::PI / length,
            (j + 1) as f64 * std::f64::consts::PI / length,
        );
        let kinetic = if i == j { a * a } else { 0.0 };
        let potential: f64 = nodes
            .iter()
            .zip(&weights)
            .zip(&ks)
            .map(|((t, w), k)| w * k * (a * t).sin() * (b * t).sin())
            .sum();
        kinetic - beta * norm * potential
    });
    let mut eigenvalues: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
    eigenvalues.sort_by(f64::total_cmp);
    let min = eigenvalues[0];
    Ok(IndexForm {
        min_eigenvalue: min,
        positive: min > 0.0,
        eigenvalues,
    })
}

/// `|∫(ż − Uz)² − (∫ż² − β∫Kz²)| / ∫ż²` over `[0, L]` for a periodic `z`;
/// `z` returns `(z(t), ż(t))`.
pub fn greeneq_residual(
    profile: &CurvatureProfile,
    beta: f64,
    u: impl Fn(f64) -> f64,
    z: impl Fn(f64) -> (f64, f64),
) -> Result<Residual> {
    check_beta(beta)?;
    let (nodes, weights) = panel_rule(profile.length, 64, 10);
    let (mut lhs, mut kinetic, mut potential) = (0.0, 0.0, 0.0);
    for (t, w) in nodes.iter().zip(&weights) {
        let (zv, zd) = z(*t);
        lhs += w * (zd - u(*t) * zv).powi(2);
        kinetic += w * zd * zd;
        potential += w * profile.k(*t) * zv * zv;
    }
    let diff = (lhs - (kinetic - beta * potential)).abs();
    if !(kinetic > 1e-300) {
        return Ok(Residual {
            value: diff,
            degenerate: true,
        });
    }
    Ok(Residual {
        value: diff / kinetic,
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn closed_form_solutions() {
        let p = CurvatureProfile::constant(1.0, PI);
        let s = solve_beta_jacobi(&p, 1.0, (0.0, 1.0)).unwrap();
        let err = s
            .times
            .iter()
            .zip(&s.j)
            .map(|(t, j)| (j - t.sin()).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1e-8, "{err}");
        let s = solve_beta_jacobi(&p, 4.0, (0.0, 1.0)).unwrap();
        let err = s
            .times
            .iter()
            .zip(&s.j)
            .map(|(t, j)| (j - (2.0 * t).sin() / 2.0).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1e-8, "{err}");
        let p = CurvatureProfile::constant(-1.0, 3.0);
        let s = solve_beta_jacobi(&p, 1.0, (0.0, 1.0)).unwrap();
        let err = s
            .times
            .iter()
            .zip(&s.j)
            .map(|(t, j)| (j - t.sinh()).abs() / t.cosh())
            .fold(0.0, f64::max);
        assert!(err <= 1e-10, "{err}");
    }

    #[test]
    fn conjugate_times() {
        let p = CurvatureProfile::constant(1.0, 2.0 * PI);
        assert!((first_conjugate_time(&p, 1.0).unwrap().unwrap() - PI).abs() < 1e-8);
        assert!((first_conjugate_time(&p, 4.0).unwrap().unwrap() - PI / 2.0).abs() < 1e-8);
        let n = CurvatureProfile::constant(-1.0, 50.0);
        for b in [0.0, 1.0, 10.0, 100.0] {
            assert_eq!(first_conjugate_time(&n, b).unwrap(), None);
        }
        assert!(first_conjugate_time(&p, -1.0).is_err());
    }

    #[test]
    fn terminator_brackets() {
        let p = vec![CurvatureProfile::constant(1.0, PI)];
        let e = estimate_terminator(&p, 4.0, 1e-3).unwrap();
        let hi = e.beta_upper.unwrap();
        assert!(
            hi - e.beta_lower <= 1e-3 && e.beta_lower <= 1.0 + 1e-6 && hi >= 1.0 - 1e-6,
            "{e:?}"
        );
        let n = vec![CurvatureProfile::constant(-1.0, 10.0)];
        let e = estimate_terminator(&n, 5.0, 1e-3).unwrap();
        assert!(e.conjugate_free_to_max && e.beta_lower == 5.0);
        assert!(estimate_terminator(&[], 1.0, 1e-3).is_err());
    }

    #[test]
    fn green_solutions_closed_forms() {
        let p = CurvatureProfile::constant(-1.0, 1.0);
        let h = hyperbolicity_gap(&p, 1.0, Some(20.0)).unwrap();
        assert!((h.green.minus.at_zero() + 1.0).abs() < 1e-6);
        assert!((h.green.plus.at_zero() - 1.0).abs() < 1e-6);
        assert!((h.gap - 2.0).abs() < 1e-6 && h.hyperbolic && !h.rank_one && h.ordered);
        assert!(h.green.monotone);
        assert!(
            h.green.minus.riccati_residual <= 1e-8,
            "{}",
            h.green.minus.riccati_residual
        );
        let q = hyperbolicity_gap(&p, 0.25, None).unwrap();
        assert!((q.green.minus.at_zero() + 0.5).abs() < 1e-6 && (q.gap - 1.0).abs() < 1e-6);
        let z = hyperbolicity_gap(&CurvatureProfile::constant(0.0, 1.0), 1.0, Some(20.0)).unwrap();
        assert!(z.gap.abs() < 1e-9 && !z.hyperbolic && z.rank_one);
        assert!(z.green.monotone);
        let pos = CurvatureProfile::constant(1.0, 1.0);
        assert!(matches!(
            green_solutions(&pos, 1.0, Some(20.0)),
            Err(Error::ConjugatePoint { .. })
        ));
    }

    #[test]
    fn index_form_signs() {
        let p = CurvatureProfile::constant(1.0, 10.0);
        let a = index_form(&p, 1.0, PI / 2.0, 6).unwrap();
        assert!((a.min_eigenvalue - 3.0).abs() < 1e-10 && a.positive);
        assert!(!index_form(&p, 1.0, 1.5 * PI, 6).unwrap().positive);
        let z = index_form(&p, 0.0, 2.0, 4).unwrap();
        assert!((z.min_eigenvalue - (PI / 2.0).powi(2)).abs() < 1e-10);
    }

    #[test]
    fn energy_identity() {
        let p = CurvatureProfile::periodic(Curvature::Constant { value: -1.0 }, 2.0 * PI);
        let r = greeneq_residual(&p, 1.0, |_| -1.0, |t| (t.sin(), t.cos())).unwrap();
        assert!(r.value <= 1e-8 && !r.degenerate);
        let flat = CurvatureProfile::periodic(Curvature::Constant { value: 0.0 }, 2.0 * PI);
        let r = greeneq_residual(&flat, 1.0, |_| 0.0, |_| (3.0, 0.0)).unwrap();
        assert!(r.degenerate && r.value == 0.0);
    }

    #[test]
    fn sampled_profile_from_geodesic() {
        let m = IsothermalMetric::torus_cos_x1(0.1);
        let p = CurvatureProfile::along_geodesic(&m, PhasePoint::new(0.3, 0.0, 0.0), 2.0, 1e-2)
            .unwrap();
        assert!((p.length - 2.0).abs() < 1e-12);
        let flat = CurvatureProfile::along_geodesic(
            &IsothermalMetric::flat_torus(),
            PhasePoint::new(0.0, 0.0, 0.4),
            1.0,
            1e-2,
        )
        .unwrap();
        assert_eq!(flat.max_abs_k(), 0.0);
        let s = Curvature::Sampled {
            dt: 0.5,
            values: vec![0.0, 1.0, 4.0, 9.0],
        };
        assert!((s.eval(1.0) - 4.0).abs() < 1e-15);
        assert!((s.eval(0.75) - 2.25).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn wronskian_is_conserved(a in 0.0f64..2.0, b in -1.0f64..1.0, beta in 0.0f64..3.0) {
            let p = CurvatureProfile::new(
                Curvature::Trigonometric { mean: b, omega: 1.0, cos: vec![a], sin: vec![0.3] },
                5.0,
            );
            let s1 = solve_beta_jacobi(&p, beta, (0.0, 1.0)).unwrap();
            let s2 = solve_beta_jacobi(&p, beta, (1.0, 0.0)).unwrap();
            for i in 0..s1.j.len() {
                let (a, b) = (s1.j[i] * s2.jp[i], s2.j[i] * s1.jp[i]);
                prop_assert!((a - b + 1.0).abs() <= 1e-9 * (1.0 + a.abs() + b.abs()));
            }
        }

        #[test]
        fn conjugate_times_shrink_with_beta(k in 0.2f64..3.0, b0 in 0.5f64..4.0, db in 0.0f64..4.0) {
            let p = CurvatureProfile::constant(k, 20.0);
            let t0 = first_conjugate_time(&p, b0).unwrap().unwrap();
            let t1 = first_conjugate_time(&p, b0 + db).unwrap().unwrap();
            prop_assert!(t1 <= t0 + 1e-9);
            prop_assert!((t0 - PI / (b0 * k).sqrt()).abs() <= 1e-7);
        }

        #[test]
        fn index_form_sign_tracks_threshold(k in 0.2f64..2.0, l in 0.5f64..4.0, beta in 0.0f64..4.0) {
            let p = CurvatureProfile::constant(k, l);
            let threshold = (PI / l).powi(2) / k;
            let f = index_form(&p, beta, l, 4).unwrap();
            prop_assume!((beta - threshold).abs() > 1e-6);
            prop_assert_eq!(f.positive, beta < threshold);
        }

        #[test]
        fn green_ordering_and_monotone_ladder(a in 0.0f64..0.5, beta in 0.1f64..2.0) {
            let p = CurvatureProfile::periodic(
                Curvature::Trigonometric { mean: -1.0, omega: 1.0, cos: vec![a], sin: vec![0.0] },
                2.0 * PI,
            );
            let h = hyperbolicity_gap(&p, beta, None).unwrap();
            prop_assert!(h.ordered);
            prop_assert!(h.green.monotone);
        }
    }
}
