//! Geodesic ray transform on disc domains.
//!
//! Rays are labelled by the influx boundary: a boundary point at angle `φ`
//! and an angle `α ∈ (−π/2, π/2)` from the inner normal. Tensor fields are
//! stored through their vertical Fourier components, each a polynomial times
//! a power of `e^{λ}`, which keeps `dh = Xh` exact.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::metric::{Domain, IsothermalMetric, PhasePoint};
use crate::poly::{poly_dim, ridge_basis, Poly2};
use crate::quadrature::{simpson_panels, simpson_weights, DiscQuadrature};
use crate::Complex64;

type C = Complex64;

pub const MAX_STEP: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FanRay {
    pub phi: f64,
    pub alpha: f64,
    pub start: PhasePoint,
    pub tau: f64,
    pub panels: usize,
    /// `|⟨v, ν⟩|`.
    pub cos_alpha: f64,
    /// Santaló quadrature weight `cos α · e^{λ} dφ dα`.
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct BoundaryFan {
    metric: IsothermalMetric,
    pub n_b: usize,
    pub n_a: usize,
    pub rays: Vec<FanRay>,
}

impl BoundaryFan {
    pub fn new(metric: &IsothermalMetric, n_b: usize, n_a: usize) -> Result<Self> {
        if metric.domain() != Domain::Disc {
            return Err(Error::InvalidArgument(
                "ray transforms need a disc metric".into(),
            ));
        }
        if n_b == 0 || n_a == 0 {
            return Err(Error::InvalidArgument(format!(
                "fan needs n_b, n_a ≥ 1 (got {n_b} × {n_a})"
            )));
        }
        let (dphi, dalpha) = (2.0 * PI / n_b as f64, PI / n_a as f64);
        let rays = (0..n_b * n_a)
            .into_par_iter()
            .map(|idx| {
                let (i, j) = (idx / n_a, idx % n_a);
                let phi = dphi * (i as f64 + 0.5);
                let alpha = -0.5 * PI + dalpha * (j as f64 + 0.5);
                let (x1, x2) = (phi.cos(), phi.sin());
                let start = PhasePoint::new(x1, x2, phi + PI + alpha);
                let tau = metric.exit(start, MAX_STEP, 1e3)?.tau;
                let lambda = metric.lambda_jet(x1, x2).value;
                Ok(FanRay {
                    phi,
                    alpha,
                    start,
                    tau,
                    panels: simpson_panels(tau, MAX_STEP),
                    cos_alpha: alpha.cos(),
                    weight: alpha.cos() * lambda.exp() * dphi * dalpha,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            metric: metric.clone(),
            n_b,
            n_a,
            rays,
        })
    }

    pub fn metric(&self) -> &IsothermalMetric {
        &self.metric
    }

    pub fn len(&self) -> usize {
        self.rays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rays.is_empty()
    }

    /// Calls `visit(point, simpson_weight)` along ray `r`.
    pub fn trace(&self, r: usize, mut visit: impl FnMut(&PhasePoint, f64)) {
        let ray = &self.rays[r];
        let h = ray.tau / ray.panels as f64;
        let w = simpson_weights(ray.panels, h);
        let mut p = ray.start;
        for (i, wi) in w.iter().enumerate() {
            visit(&p, *wi);
            if i < ray.panels {
                p = self.metric.step(&p, h);
            }
        }
    }
}

/// `e^{p λ(x)} P(x) e^{ikθ}`.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorComponent {
    pub k: i64,
    pub exp_power: i32,
    pub poly: Poly2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymTensorField {
    metric: IsothermalMetric,
    m: u32,
    components: Vec<TensorComponent>,
    /// Set by [`solenoidal_project`]: largest normalized pairing with the potential basis.
    pub solenoidal_residual: Option<f64>,
}

fn merge(components: Vec<TensorComponent>) -> Vec<TensorComponent> {
    let mut out: Vec<TensorComponent> = Vec::new();
    for c in components {
        match out
            .iter_mut()
            .find(|o| o.k == c.k && o.exp_power == c.exp_power)
        {
            Some(o) => o.poly = &o.poly + &c.poly,
            None => out.push(c),
        }
    }
    out.sort_by_key(|c| (c.k, c.exp_power));
    out
}

impl SymTensorField {
    pub fn new(
        metric: &IsothermalMetric,
        m: u32,
        components: Vec<TensorComponent>,
    ) -> Result<Self> {
        if metric.lambda_poly().is_none() {
            return Err(Error::InvalidArgument(
                "tensor fields need a disc metric".into(),
            ));
        }
        for c in &components {
            if c.k.unsigned_abs() > m as u64 || (c.k - m as i64) % 2 != 0 {
                return Err(Error::InvalidArgument(format!(
                    "component of degree {} does not fit a symmetric {m}-tensor",
                    c.k
                )));
            }
        }
        Ok(Self {
            metric: metric.clone(),
            m,
            components: merge(components),
            solenoidal_residual: None,
        })
    }

    pub fn function(metric: &IsothermalMetric, f: Poly2) -> Result<Self> {
        Self::new(
            metric,
            0,
            vec![TensorComponent {
                k: 0,
                exp_power: 0,
                poly: f,
            }],
        )
    }

    /// The real field with `e^{iθ}` coefficient `f₁` and `e^{−iθ}` coefficient `conj f₁`.
    pub fn real_one_form(metric: &IsothermalMetric, f1: Poly2) -> Result<Self> {
        let conj = f1.conj();
        Self::new(
            metric,
            1,
            vec![
                TensorComponent {
                    k: 1,
                    exp_power: 0,
                    poly: f1,
                },
                TensorComponent {
                    k: -1,
                    exp_power: 0,
                    poly: conj,
                },
            ],
        )
    }

    pub fn degree(&self) -> u32 {
        self.m
    }

    pub fn metric(&self) -> &IsothermalMetric {
        &self.metric
    }

    pub fn components(&self) -> &[TensorComponent] {
        &self.components
    }

    pub fn eval(&self, x1: f64, x2: f64, theta: f64) -> C {
        let lambda = self.metric.lambda_jet(x1, x2).value;
        self.components
            .iter()
            .map(|c| {
                c.poly.eval(x1, x2)
                    * (c.exp_power as f64 * lambda).exp()
                    * C::from_polar(1.0, c.k as f64 * theta)
            })
            .sum()
    }

    /// Value of the `Λ_k` coefficient at `x`.
    pub fn mode_value(&self, k: i64, x1: f64, x2: f64) -> C {
        let lambda = self.metric.lambda_jet(x1, x2).value;
        self.components
            .iter()
            .filter(|c| c.k == k)
            .map(|c| c.poly.eval(x1, x2) * (c.exp_power as f64 * lambda).exp())
            .sum()
    }

    pub fn is_real(&self, tol: f64) -> bool {
        let conj = self.conj();
        let diff = self.sub(&conj);
        diff.components
            .iter()
            .all(|c| c.poly.max_abs_coeff() <= tol)
    }

    pub fn conj(&self) -> Self {
        Self {
            components: merge(
                self.components
                    .iter()
                    .map(|c| TensorComponent {
                        k: -c.k,
                        exp_power: c.exp_power,
                        poly: c.poly.conj(),
                    })
                    .collect(),
            ),
            solenoidal_residual: None,
            ..self.clone()
        }
    }

    pub fn scale(&self, s: C) -> Self {
        Self {
            components: self
                .components
                .iter()
                .map(|c| TensorComponent {
                    poly: c.poly.scale(s),
                    ..c.clone()
                })
                .collect(),
            solenoidal_residual: None,
            ..self.clone()
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut comps = self.components.clone();
        comps.extend(other.components.iter().cloned());
        Self {
            metric: self.metric.clone(),
            m: self.m.max(other.m),
            components: merge(comps),
            solenoidal_residual: None,
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(C::new(-1.0, 0.0)))
    }

    /// `Xh = η₊h + η₋h`, the symmetrized derivative of a degree-`m` field.
    pub fn derivative(&self) -> Self {
        let lambda = self.metric.lambda_poly().expect("disc metric");
        let (lz, lzb) = (lambda.dz(), lambda.dzbar());
        let mut comps = Vec::new();
        for c in &self.components {
            let p = c.exp_power as f64;
            let k = c.k as f64;
            comps.push(TensorComponent {
                k: c.k + 1,
                exp_power: c.exp_power - 1,
                poly: &c.poly.dz() + &(&lz * &c.poly).scale(C::new(p - k, 0.0)),
            });
            comps.push(TensorComponent {
                k: c.k - 1,
                exp_power: c.exp_power - 1,
                poly: &c.poly.dzbar() + &(&lzb * &c.poly).scale(C::new(p + k, 0.0)),
            });
        }
        Self {
            metric: self.metric.clone(),
            m: self.m + 1,
            components: merge(comps),
            solenoidal_residual: None,
        }
    }

    fn max_poly_degree(&self) -> usize {
        self.components
            .iter()
            .map(|c| c.poly.degree())
            .max()
            .unwrap_or(0)
    }

    /// Nodal values of every `Λ_k` coefficient, keyed by degree.
    fn nodal(&self, nodes: &[[f64; 2]]) -> Vec<(i64, Vec<C>)> {
        let mut out: Vec<(i64, Vec<C>)> = Vec::new();
        for k in self.components.iter().map(|c| c.k) {
            if out.iter().any(|o| o.0 == k) {
                continue;
            }
            out.push((
                k,
                nodes
                    .iter()
                    .map(|x| self.mode_value(k, x[0], x[1]))
                    .collect(),
            ));
        }
        out
    }
}

/// `L²(SM)` pairing on a disc quadrature.
struct SmPairing {
    nodes: Vec<[f64; 2]>,
    weights: Vec<f64>,
}

impl SmPairing {
    fn new(metric: &IsothermalMetric, degree: usize) -> Self {
        let q = DiscQuadrature::new(degree / 2 + 4, degree + 8);
        let weights = q
            .nodes
            .iter()
            .zip(&q.weights)
            .map(|(x, w)| w * 2.0 * PI * (2.0 * metric.lambda_jet(x[0], x[1]).value).exp())
            .collect();
        Self {
            nodes: q.nodes,
            weights,
        }
    }

    fn pair(&self, a: &[(i64, Vec<C>)], b: &[(i64, Vec<C>)]) -> C {
        let mut s = C::new(0.0, 0.0);
        for (k, va) in a {
            if let Some((_, vb)) = b.iter().find(|(kb, _)| kb == k) {
                for ((x, y), w) in va.iter().zip(vb).zip(&self.weights) {
                    s += x * y.conj() * *w;
                }
            }
        }
        s
    }
}

/// Monomial moments `∫ e^{ikθ} e^{pλ} x₁^a x₂^b dt` along every ray.
struct Moments {
    keys: Vec<(i64, i32)>,
    degree: usize,
    values: Vec<Vec<C>>,
}

fn mono_index(a: usize, b: usize) -> usize {
    let d = a + b;
    d * (d + 1) / 2 + b
}

impl Moments {
    fn new(fields: &[&SymTensorField], fan: &BoundaryFan) -> Self {
        let mut keys: Vec<(i64, i32)> = Vec::new();
        for f in fields {
            for c in &f.components {
                if !keys.contains(&(c.k, c.exp_power)) {
                    keys.push((c.k, c.exp_power));
                }
            }
        }
        let degree = fields
            .iter()
            .map(|f| f.max_poly_degree())
            .max()
            .unwrap_or(0);
        let dim = poly_dim(degree);
        let any_weight = keys.iter().any(|k| k.1 != 0);
        let values = (0..fan.len())
            .into_par_iter()
            .map(|r| {
                let mut acc = vec![C::new(0.0, 0.0); keys.len() * dim];
                let mut mono = vec![0.0; dim];
                fan.trace(r, |p, w| {
                    let mut px = vec![1.0; degree + 1];
                    let mut py = vec![1.0; degree + 1];
                    for i in 1..=degree {
                        px[i] = px[i - 1] * p.x1;
                        py[i] = py[i - 1] * p.x2;
                    }
                    for d in 0..=degree {
                        for b in 0..=d {
                            mono[mono_index(d - b, b)] = px[d - b] * py[b] * w;
                        }
                    }
                    let lambda = if any_weight {
                        fan.metric.lambda_jet(p.x1, p.x2).value
                    } else {
                        0.0
                    };
                    for (ki, (k, pw)) in keys.iter().enumerate() {
                        let phase = C::from_polar((*pw as f64 * lambda).exp(), *k as f64 * p.theta);
                        let slot = &mut acc[ki * dim..(ki + 1) * dim];
                        for (s, m) in slot.iter_mut().zip(&mono) {
                            *s += phase * *m;
                        }
                    }
                });
                acc
            })
            .collect();
        Self {
            keys,
            degree,
            values,
        }
    }

    fn coefficients(&self, f: &SymTensorField) -> Vec<C> {
        let dim = poly_dim(self.degree);
        let mut v = vec![C::new(0.0, 0.0); self.keys.len() * dim];
        for c in &f.components {
            let ki = self
                .keys
                .iter()
                .position(|k| *k == (c.k, c.exp_power))
                .expect("key");
            for (a, b, coef) in c.poly.terms() {
                v[ki * dim + mono_index(a, b)] += coef;
            }
        }
        v
    }

    fn apply(&self, f: &SymTensorField) -> Vec<C> {
        let coef = self.coefficients(f);
        self.values
            .iter()
            .map(|m| m.iter().zip(&coef).map(|(a, b)| a * b).sum())
            .collect()
    }
}

fn check_fan(f: &SymTensorField, fan: &BoundaryFan) -> Result<()> {
    if f.metric != fan.metric {
        return Err(Error::StaleFan);
    }
    Ok(())
}

/// `I_m f` on every ray of the fan.
pub fn ray_transform(f: &SymTensorField, fan: &BoundaryFan) -> Result<Vec<C>> {
    Ok(ray_transform_many(&[f.clone()], fan)?
        .pop()
        .expect("one field"))
}

/// Ray transforms of several fields from one pass over the rays.
pub fn ray_transform_many(fields: &[SymTensorField], fan: &BoundaryFan) -> Result<Vec<Vec<C>>> {
    for f in fields {
        check_fan(f, fan)?;
    }
    let refs: Vec<&SymTensorField> = fields.iter().collect();
    let moments = Moments::new(&refs, fan);
    Ok(fields.iter().map(|f| moments.apply(f)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoverageWarning {
    pub index: usize,
    pub x: [f64; 2],
    pub rays: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Backprojection {
    pub values: Vec<C>,
    pub coverage: Vec<usize>,
    pub warnings: Vec<CoverageWarning>,
}

/// Catmull-Rom weights for fractional offset `u` over taps `−1..=2`.
fn cubic_weights(u: f64) -> [f64; 4] {
    let (u2, u3) = (u * u, u * u * u);
    [
        0.5 * (-u3 + 2.0 * u2 - u),
        0.5 * (3.0 * u3 - 5.0 * u2 + 2.0),
        0.5 * (-3.0 * u3 + 4.0 * u2 + u),
        0.5 * (u3 - u2),
    ]
}

fn wrap_angle(a: f64) -> f64 {
    (a + PI).rem_euclid(2.0 * PI) - PI
}

impl BoundaryFan {
    /// Influx label `(φ, α)` of the geodesic through `(x, θ)`.
    fn label(&self, x: [f64; 2], theta: f64) -> Result<(f64, f64)> {
        let back = self
            .metric
            .exit(PhasePoint::new(x[0], x[1], theta + PI), MAX_STEP, 1e3)?
            .point;
        let phi = back.x2.atan2(back.x1).rem_euclid(2.0 * PI);
        let alpha = wrap_angle(back.theta + PI - phi - PI);
        Ok((phi, alpha))
    }

    /// Interpolated ray data at `(φ, α)` and the nearest ray index.
    fn interpolate(&self, h: &[C], phi: f64, alpha: f64) -> (C, usize) {
        let sb = phi / (2.0 * PI) * self.n_b as f64 - 0.5;
        let sa =
            ((alpha + 0.5 * PI) / PI * self.n_a as f64 - 0.5).clamp(0.0, (self.n_a - 1) as f64);
        let (ib, ia) = (sb.floor(), sa.floor());
        let (wb, wa) = (cubic_weights(sb - ib), cubic_weights(sa - ia));
        let mut v = C::new(0.0, 0.0);
        for (di, wbi) in wb.iter().enumerate() {
            let b = (ib as i64 + di as i64 - 1).rem_euclid(self.n_b as i64) as usize;
            for (dj, waj) in wa.iter().enumerate() {
                let a = (ia as i64 + dj as i64 - 1).clamp(0, self.n_a as i64 - 1) as usize;
                v += h[b * self.n_a + a] * (wbi * waj);
            }
        }
        let nb = (sb.round() as i64).rem_euclid(self.n_b as i64) as usize;
        let na = (sa.round() as usize).min(self.n_a - 1);
        (v, nb * self.n_a + na)
    }
}

/// `I₀*h(x) = ∫_{S_x} h♯(x, v) dv` with `h♯` constant along each geodesic.
pub fn backproject_adjoint(
    h: &[C],
    fan: &BoundaryFan,
    grid: &[[f64; 2]],
    n_directions: usize,
) -> Result<Backprojection> {
    if fan.n_a < 16 {
        return Err(Error::InvalidArgument(format!(
            "backprojection needs n_a ≥ 16 (got {})",
            fan.n_a
        )));
    }
    if h.len() != fan.len() {
        return Err(Error::InvalidArgument(format!(
            "{} ray values for a fan of {} rays",
            h.len(),
            fan.len()
        )));
    }
    let rows: Vec<(C, usize)> = grid
        .par_iter()
        .map(|x| {
            let mut total = C::new(0.0, 0.0);
            let mut hit: Vec<usize> = Vec::new();
            for l in 0..n_directions {
                let theta = 2.0 * PI * (l as f64 + 0.5) / n_directions as f64;
                let (phi, alpha) = fan.label(*x, theta)?;
                let (v, nearest) = fan.interpolate(h, phi, alpha);
                total += v;
                if !hit.contains(&nearest) {
                    hit.push(nearest);
                }
            }
            Ok((total * (2.0 * PI / n_directions as f64), hit.len()))
        })
        .collect::<Result<_>>()?;
    let warnings = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.1 < 4)
        .map(|(i, r)| CoverageWarning {
            index: i,
            x: grid[i],
            rays: r.1,
        })
        .collect();
    Ok(Backprojection {
        values: rows.iter().map(|r| r.0).collect(),
        coverage: rows.iter().map(|r| r.1).collect(),
        warnings,
    })
}

/// `∫_{∂₊SM} ∫₀^τ g(φ_t) |⟨v, ν⟩| dt`.
pub fn santalo_integral(g: impl Fn(&PhasePoint) -> f64 + Sync, fan: &BoundaryFan) -> f64 {
    (0..fan.len())
        .into_par_iter()
        .map(|r| {
            let mut s = 0.0;
            fan.trace(r, |p, w| s += w * g(p));
            s * fan.rays[r].weight
        })
        .collect::<Vec<_>>()
        .iter()
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SantaloCheck {
    pub fan_value: f64,
    pub grid_value: f64,
    pub relative_residual: f64,
}

/// Santaló integral against a direct `∫_M ∫_{S_x}` quadrature.
pub fn santalo_check(
    g: impl Fn(&PhasePoint) -> f64 + Sync,
    fan: &BoundaryFan,
    quad: &DiscQuadrature,
    n_theta: usize,
) -> SantaloCheck {
    let fan_value = santalo_integral(&g, fan);
    let dtheta = 2.0 * PI / n_theta as f64;
    let grid_value: f64 = quad
        .nodes
        .iter()
        .zip(&quad.weights)
        .map(|(x, w)| {
            let area = (2.0 * fan.metric.lambda_jet(x[0], x[1]).value).exp();
            let s: f64 = (0..n_theta)
                .map(|l| g(&PhasePoint::new(x[0], x[1], dtheta * (l as f64 + 0.5))))
                .sum();
            w * area * s * dtheta
        })
        .sum();
    let scale = fan_value.abs().max(grid_value.abs());
    SantaloCheck {
        fan_value,
        grid_value,
        relative_residual: if scale == 0.0 {
            0.0
        } else {
            (fan_value - grid_value).abs() / scale
        },
    }
}

/// `|(I₀f, h)_{∂₊} − (f, I₀*h)_M| / (‖I₀f‖·‖h‖)` with both pairings by quadrature.
pub fn duality_residual(
    f: &SymTensorField,
    h: &[C],
    fan: &BoundaryFan,
    quad: &DiscQuadrature,
    n_directions: usize,
) -> Result<f64> {
    if f.degree() != 0 {
        return Err(Error::InvalidArgument(
            "duality check is for functions".into(),
        ));
    }
    let i0f = ray_transform(f, fan)?;
    let lhs: C = i0f
        .iter()
        .zip(h)
        .zip(&fan.rays)
        .map(|((a, b), r)| a * b.conj() * r.weight)
        .sum();
    let back = backproject_adjoint(h, fan, &quad.nodes, n_directions)?;
    let rhs: C = quad
        .nodes
        .iter()
        .zip(&quad.weights)
        .zip(&back.values)
        .map(|((x, w), b)| {
            let area = (2.0 * fan.metric.lambda_jet(x[0], x[1]).value).exp();
            f.mode_value(0, x[0], x[1]) * b.conj() * (w * area)
        })
        .sum();
    let norm = |v: &[C]| {
        v.iter()
            .zip(&fan.rays)
            .map(|(a, r)| a.norm_sqr() * r.weight)
            .sum::<f64>()
            .sqrt()
    };
    Ok((lhs - rhs).norm() / (norm(&i0f) * norm(h)))
}

/// Real potentials `h` of degree `m − 1` with `h|∂M = 0`, built from the
/// bubble times ridge functions of degree `≤ degree`.
pub fn potential_basis(
    metric: &IsothermalMetric,
    m: u32,
    degree: usize,
) -> Result<Vec<SymTensorField>> {
    if m == 0 {
        return Ok(Vec::new());
    }
    let hm = m - 1;
    let bubble = Poly2::bubble();
    let mut out = Vec::new();
    for r in ridge_basis(degree) {
        let psi = &bubble * &r.to_poly();
        for k in (0..=hm as i64).rev().step_by(2) {
            let phases: &[C] = if k == 0 {
                &[C::new(1.0, 0.0)]
            } else {
                &[C::new(1.0, 0.0), C::new(0.0, 1.0)]
            };
            for c in phases {
                let p = psi.scale(*c);
                let comps = if k == 0 {
                    vec![TensorComponent {
                        k: 0,
                        exp_power: 0,
                        poly: p,
                    }]
                } else {
                    vec![
                        TensorComponent {
                            k,
                            exp_power: 0,
                            poly: p.clone(),
                        },
                        TensorComponent {
                            k: -k,
                            exp_power: 0,
                            poly: p.conj(),
                        },
                    ]
                };
                out.push(SymTensorField::new(metric, hm, comps)?);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolenoidalProjection {
    pub field: SymTensorField,
    pub coefficients: Vec<C>,
    /// `‖dh-part‖ / ‖f‖`.
    pub potential_fraction: f64,
    /// `max_i |(dh_i, f^s)| / (‖dh_i‖‖f‖)`.
    pub orthogonality_residual: f64,
    pub basis_dim: usize,
}

/// Least-squares removal of `span{dh_i}` from `f` in `L²(SM)`; potentials
/// use ridge degree `≤ degree`.
pub fn solenoidal_project(f: &SymTensorField, degree: usize) -> Result<SolenoidalProjection> {
    if f.degree() == 0 {
        return Ok(SolenoidalProjection {
            field: SymTensorField {
                solenoidal_residual: Some(0.0),
                ..f.clone()
            },
            coefficients: Vec::new(),
            potential_fraction: 0.0,
            orthogonality_residual: 0.0,
            basis_dim: 0,
        });
    }
    let potentials: Vec<SymTensorField> = potential_basis(f.metric(), f.degree(), degree)?
        .iter()
        .map(|h| h.derivative())
        .collect();
    if potentials.len() < 4 {
        return Err(Error::config(
            "xray.potential_degree",
            format!("potential basis has dimension {} (< 4)", potentials.len()),
        ));
    }
    let pd = potentials
        .iter()
        .map(|p| p.max_poly_degree())
        .max()
        .unwrap_or(0);
    let pairing = SmPairing::new(f.metric(), 2 * pd.max(f.max_poly_degree()) + 2);
    let nodal: Vec<_> = potentials.iter().map(|p| p.nodal(&pairing.nodes)).collect();
    let fn_nodal = f.nodal(&pairing.nodes);
    let n = potentials.len();
    let gram = DMatrix::from_fn(n, n, |i, j| pairing.pair(&nodal[i], &nodal[j]));
    let rhs = DVector::from_iterator(n, nodal.iter().map(|p| pairing.pair(&fn_nodal, p)));
    let svd = gram.clone().svd(true, true);
    let eps = 1e-13 * svd.singular_values.max();
    let coef = svd
        .solve(&rhs, eps)
        .map_err(|e| Error::InvalidArgument(format!("potential Gram solve failed: {e}")))?;
    // gram[i][j] = (dh_i, dh_j), so f ≈ Σ_j c_j dh_j solves Σ_j c_j (dh_j, dh_i) = (f, dh_i)
    let coef: Vec<C> = coef.iter().copied().collect();
    let mut potential_part = SymTensorField::new(f.metric(), f.degree(), Vec::new())?;
    for (c, p) in coef.iter().zip(&potentials) {
        potential_part = potential_part.add(&p.scale(*c));
    }
    let mut out = f.sub(&potential_part);
    out.m = f.m;
    let out_nodal = out.nodal(&pairing.nodes);
    let f_norm = pairing.pair(&fn_nodal, &fn_nodal).re.sqrt();
    let pp_nodal = potential_part.nodal(&pairing.nodes);
    let potential_fraction = if f_norm == 0.0 {
        0.0
    } else {
        pairing.pair(&pp_nodal, &pp_nodal).re.sqrt() / f_norm
    };
    let mut orth: f64 = 0.0;
    if f_norm > 0.0 {
        for (i, p) in nodal.iter().enumerate() {
            let pn = gram[(i, i)].re.sqrt();
            if pn > 0.0 {
                orth = orth.max(pairing.pair(&out_nodal, p).norm() / (pn * f_norm));
            }
        }
    }
    out.solenoidal_residual = Some(orth);
    Ok(SolenoidalProjection {
        field: out,
        coefficients: coef,
        potential_fraction,
        orthogonality_residual: orth,
        basis_dim: n,
    })
}

/// The first `count` real tensor fields of degree `m`, ordered by polynomial degree.
fn tensor_basis(metric: &IsothermalMetric, m: u32, count: usize) -> Result<Vec<SymTensorField>> {
    let mut out = Vec::new();
    let mut d = 0;
    while out.len() < count {
        for r in ridge_basis(d).into_iter().filter(|r| r.degree == d) {
            let psi = r.to_poly();
            for k in (0..=m as i64).rev().step_by(2) {
                let phases: &[C] = if k == 0 {
                    &[C::new(1.0, 0.0)]
                } else {
                    &[C::new(1.0, 0.0), C::new(0.0, 1.0)]
                };
                for c in phases {
                    let p = psi.scale(*c);
                    let comps = if k == 0 {
                        vec![TensorComponent {
                            k: 0,
                            exp_power: 0,
                            poly: p,
                        }]
                    } else {
                        vec![
                            TensorComponent {
                                k,
                                exp_power: 0,
                                poly: p.clone(),
                            },
                            TensorComponent {
                                k: -k,
                                exp_power: 0,
                                poly: p.conj(),
                            },
                        ]
                    };
                    out.push(SymTensorField::new(metric, m, comps)?);
                }
            }
        }
        d += 1;
    }
    out.truncate(count);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumRung {
    pub basis_size: usize,
    pub rank: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// Smallest singular value once a normalized `dh` column is appended.
    pub injected_sigma: f64,
    /// Weight of the injected column in that singular direction.
    pub injected_alignment: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumReport {
    pub m: u32,
    pub basis_size: usize,
    pub n_b: usize,
    pub n_a: usize,
    pub singular_values: Vec<f64>,
    /// Raw-basis combinations whose solenoidal part vanishes.
    pub null_directions: Vec<Vec<f64>>,
    pub ladder: Vec<SpectrumRung>,
}

struct Rung {
    singular_values: Vec<f64>,
    null_directions: Vec<Vec<f64>>,
    summary: SpectrumRung,
}

fn spectrum_rung(m: u32, count: usize, fan: &BoundaryFan) -> Result<Rung> {
    let metric = fan.metric();
    let raw = tensor_basis(metric, m, count)?;
    let raw_degree = raw.iter().map(|f| f.max_poly_degree()).max().unwrap_or(0);
    let projected: Vec<SymTensorField> = raw
        .iter()
        .map(|f| {
            if m == 0 {
                Ok(f.clone())
            } else {
                solenoidal_project(f, raw_degree.max(2)).map(|p| p.field)
            }
        })
        .collect::<Result<_>>()?;
    let injected = potential_basis(metric, m.max(1), 1)?
        .pop()
        .expect("nonempty potential basis")
        .derivative();

    let pd = projected
        .iter()
        .chain(std::iter::once(&injected))
        .map(|p| p.max_poly_degree())
        .max()
        .unwrap_or(0);
    let pairing = SmPairing::new(metric, 2 * pd + 2);
    let nodal: Vec<_> = projected.iter().map(|p| p.nodal(&pairing.nodes)).collect();
    let gram = DMatrix::from_fn(count, count, |i, j| pairing.pair(&nodal[i], &nodal[j]).re);
    let eig = gram.symmetric_eigen();
    let max_ev = eig.eigenvalues.max();
    let mut keep = Vec::new();
    let mut null_directions = Vec::new();
    for (i, ev) in eig.eigenvalues.iter().enumerate() {
        let v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
        if *ev > 1e-10 * max_ev {
            keep.push((*ev, v));
        } else {
            null_directions.push(v);
        }
    }
    let q = DMatrix::from_fn(count, keep.len(), |r, c| keep[c].1[r] / keep[c].0.sqrt());

    let mut all = projected.clone();
    all.push(injected.clone());
    let transforms = ray_transform_many(&all, fan)?;
    let sqrt_w: Vec<f64> = fan.rays.iter().map(|r| r.weight.sqrt()).collect();
    let nr = fan.len();
    let raw_matrix = DMatrix::from_fn(nr, count, |r, j| transforms[j][r].re * sqrt_w[r]);
    let a = &raw_matrix * &q;
    let mut sv: Vec<f64> = a
        .clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .collect();
    sv.sort_by(|x, y| y.total_cmp(x));

    let inj_nodal = injected.nodal(&pairing.nodes);
    let inj_norm = pairing.pair(&inj_nodal, &inj_nodal).re.sqrt();
    let mut aug = a.clone().insert_column(a.ncols(), 0.0);
    for r in 0..nr {
        aug[(r, a.ncols())] = transforms[count][r].re * sqrt_w[r] / inj_norm;
    }
    let svd = aug.svd(false, true);
    let (imin, smin) =
        svd.singular_values
            .iter()
            .enumerate()
            .fold(
                (0, f64::INFINITY),
                |acc, (i, s)| if *s < acc.1 { (i, *s) } else { acc },
            );
    let v_t = svd.v_t.expect("requested");
    let alignment = v_t[(imin, a.ncols())].abs();

    Ok(Rung {
        summary: SpectrumRung {
            basis_size: count,
            rank: keep.len(),
            sigma_min: *sv.last().unwrap_or(&0.0),
            sigma_max: *sv.first().unwrap_or(&0.0),
            injected_sigma: smin,
            injected_alignment: alignment,
        },
        singular_values: sv,
        null_directions,
    })
}

/// Singular values of `I_m` on the solenoidal span of the first `basis_size`
/// tensor fields, with the rung at `2·basis_size` for comparison.
pub fn sinjectivity_spectrum(
    m: u32,
    basis_size: usize,
    fan: &BoundaryFan,
) -> Result<SpectrumReport> {
    if basis_size == 0 {
        return Err(Error::config("xray.basis", "basis size must be positive"));
    }
    let raw_degree = tensor_basis(fan.metric(), m, 2 * basis_size)?
        .iter()
        .map(|f| f.max_poly_degree())
        .max()
        .unwrap_or(0);
    let needed = 2 * (raw_degree + 1);
    if fan.n_b < needed || fan.n_a < needed {
        return Err(Error::InvalidArgument(format!(
            "fan {} × {} is coarser than twice the basis resolution ({needed})",
            fan.n_b, fan.n_a
        )));
    }
    let first = spectrum_rung(m, basis_size, fan)?;
    let second = spectrum_rung(m, 2 * basis_size, fan)?;
    Ok(SpectrumReport {
        m,
        basis_size,
        n_b: fan.n_b,
        n_a: fan.n_a,
        singular_values: first.singular_values,
        null_directions: first.null_directions,
        ladder: vec![first.summary, second.summary],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::chord_length;

    fn euclid() -> IsothermalMetric {
        IsothermalMetric::euclidean_disc()
    }

    #[test]
    fn chords_and_odd_integrands() {
        let m = euclid();
        let fan = BoundaryFan::new(&m, 8, 16).unwrap();
        let one = SymTensorField::function(&m, Poly2::constant(C::new(1.0, 0.0))).unwrap();
        let v = ray_transform(&one, &fan).unwrap();
        for (r, val) in fan.rays.iter().zip(&v) {
            assert!((val.re - chord_length(r.alpha.sin().abs())).abs() < 1e-9);
            assert!((r.tau - m.exit_time(r.start).unwrap()).abs() < 1e-8);
        }
        let x1 = SymTensorField::function(&m, Poly2::from_real_terms(&[(1, 0, 1.0)])).unwrap();
        let d = BoundaryFan::new(&m, 2, 1).unwrap();
        // the two rays run along the x₂-axis, where x₁ vanishes
        let v = ray_transform(&x1, &d).unwrap();
        assert!(v.iter().all(|c| c.norm() < 1e-9));
    }

    #[test]
    fn potentials_integrate_to_zero() {
        let m = IsothermalMetric::disc(Poly2::from_real_terms(&[(2, 0, 0.3), (0, 2, 0.3)]));
        let fan = BoundaryFan::new(&m, 12, 12).unwrap();
        for h in potential_basis(&m, 1, 2).unwrap().iter().take(4) {
            let dh = h.derivative();
            assert_eq!(dh.degree(), 1);
            let scale = dh
                .components()
                .iter()
                .map(|c| c.poly.max_abs_coeff())
                .fold(0.0, f64::max);
            let v = ray_transform(&dh, &fan).unwrap();
            assert!(
                v.iter().all(|c| c.norm() <= 1e-6 * scale),
                "{:?}",
                v.iter().map(|c| c.norm()).fold(0.0, f64::max)
            );
        }
        let other = BoundaryFan::new(&euclid(), 4, 4).unwrap();
        let f = SymTensorField::function(&m, Poly2::constant(C::new(1.0, 0.0))).unwrap();
        assert!(matches!(ray_transform(&f, &other), Err(Error::StaleFan)));
    }

    #[test]
    fn santalo_volume_and_zero() {
        let m = euclid();
        let fan = BoundaryFan::new(&m, 32, 32).unwrap();
        let v = santalo_integral(|_| 1.0, &fan);
        assert!((v - 2.0 * PI * PI).abs() / (2.0 * PI * PI) < 1e-2, "{v}");
        assert_eq!(santalo_integral(|_| 0.0, &fan), 0.0);
        let c = santalo_check(
            |p| (-(p.x1 * p.x1 + p.x2 * p.x2) * 3.0).exp(),
            &fan,
            &DiscQuadrature::new(16, 32),
            16,
        );
        assert!(c.relative_residual < 1e-2, "{c:?}");
    }

    #[test]
    fn backprojection_of_constants() {
        let m = euclid();
        let fan = BoundaryFan::new(&m, 16, 16).unwrap();
        let h = vec![C::new(1.0, 0.0); fan.len()];
        let b = backproject_adjoint(&h, &fan, &[[0.0, 0.0], [0.5, 0.2]], 16).unwrap();
        for v in &b.values {
            assert!((v.re - 2.0 * PI).abs() < 1e-12);
        }
        assert!(b.warnings.is_empty());
        let small = BoundaryFan::new(&m, 8, 8).unwrap();
        assert!(
            backproject_adjoint(&vec![C::new(1.0, 0.0); 64], &small, &[[0.0, 0.0]], 8).is_err()
        );
    }

    #[test]
    fn projection_properties() {
        let m = euclid();
        let hs = potential_basis(&m, 1, 3).unwrap();
        let dh = hs[4].derivative();
        let p = solenoidal_project(&dh, 3).unwrap();
        let q = SmPairing::new(&m, 12);
        let norm = |f: &SymTensorField| {
            let n = f.nodal(&q.nodes);
            q.pair(&n, &n).re.sqrt()
        };
        assert!(norm(&p.field) <= 1e-8 * norm(&dh));
        let one = SymTensorField::function(&m, Poly2::constant(C::new(1.0, 0.0))).unwrap();
        assert_eq!(
            solenoidal_project(&one, 3).unwrap().field.components(),
            one.components()
        );
        let f = SymTensorField::real_one_form(
            &m,
            Poly2::from_terms(&[
                (0, 0, C::new(0.3, 0.1)),
                (2, 1, C::new(-1.0, 0.4)),
                (0, 3, C::new(0.2, 0.0)),
            ]),
        )
        .unwrap();
        let p = solenoidal_project(&f, 3).unwrap();
        assert!(
            p.orthogonality_residual <= 1e-8,
            "{}",
            p.orthogonality_residual
        );
        assert!(p.field.is_real(1e-12));
        assert!(matches!(
            solenoidal_project(&f, 0),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn small_spectrum() {
        let fan = BoundaryFan::new(&euclid(), 24, 24).unwrap();
        let s = sinjectivity_spectrum(0, 6, &fan).unwrap();
        assert_eq!(s.singular_values.len(), 6);
        assert!(s.ladder[0].sigma_min > 0.0);
        assert!(s.ladder[0].injected_sigma <= 1e-6 * s.ladder[0].sigma_max);
        assert!(sinjectivity_spectrum(0, 0, &fan).is_err());
    }
}
