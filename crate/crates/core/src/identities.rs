//! Residuals of the sphere-bundle commutator formulas and energy identities.
//!
//! Every check returns a relative residual `|L − R| / max(|t₁|, …, |t_j|, ε)`
//! where the `t_i` are the individual terms on both sides and `ε = 1e−300`.
//! Inputs whose norm is zero are flagged as degenerate instead of reporting
//! `0/0`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bundle::{
    apply_operator, inner_product, project, random_field, FourierField, Operator, RandomFieldSpec,
    Selector,
};
use crate::error::{Error, Result};
use crate::metric::Domain;
use crate::Complex64;

const EPS: f64 = 1e-300;
const TRACE_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Residual {
    pub value: f64,
    pub degenerate: bool,
}

impl Residual {
    fn relative(terms: &[f64], diff: f64, input_norm: f64) -> Self {
        if !(input_norm > EPS) {
            return Self {
                value: 0.0,
                degenerate: true,
            };
        }
        let scale = terms.iter().fold(EPS, |m, t| m.max(t.abs()));
        Self {
            value: diff / scale,
            degenerate: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CommutatorResiduals {
    /// `[X, V] = X⊥`
    pub x_v: Residual,
    /// `[X, X⊥] = −KV`
    pub x_xperp: Residual,
    /// `[V, X⊥] = X`
    pub v_xperp: Residual,
}

fn op(o: Operator, u: &FourierField) -> Result<FourierField> {
    apply_operator(o, u)
}

/// Residual of `a − b = r` relative to the largest of the three terms.
fn commutator_residual(
    a: &FourierField,
    b: &FourierField,
    r: &FourierField,
    input: f64,
) -> Result<Residual> {
    let diff = a.sub(b)?.sub(r)?.norm();
    Ok(Residual::relative(
        &[a.norm(), b.norm(), r.norm()],
        diff,
        input,
    ))
}

fn require_torus(u: &FourierField, what: &str) -> Result<()> {
    if u.discretization().domain() != Domain::Torus {
        return Err(Error::Precondition(format!(
            "{what} needs the torus domain"
        )));
    }
    Ok(())
}

/// Fails unless every Fourier mode of a disc field vanishes on the boundary ring.
fn require_vanishing_trace(u: &FourierField) -> Result<()> {
    let disc = u.discretization();
    if disc.domain() != Domain::Disc {
        return Ok(());
    }
    let scale = u
        .degrees()
        .flat_map(|k| u.mode(k).iter().map(|c| c.norm()))
        .fold(0.0, f64::max);
    let trace = u
        .degrees()
        .filter_map(|k| disc.boundary_trace(u.mode(k)))
        .flatten()
        .map(|c| c.norm())
        .fold(0.0, f64::max);
    if trace > TRACE_TOL * scale.max(EPS) {
        return Err(Error::Precondition(format!(
            "disc field must vanish on the boundary (trace {trace:.3e} vs scale {scale:.3e})"
        )));
    }
    Ok(())
}

pub fn commutator_residuals(u: &FourierField) -> Result<CommutatorResiduals> {
    require_torus(u, "commutator residuals")?;
    let n = u.norm();
    let xu = op(Operator::X, u)?;
    let vu = op(Operator::V, u)?;
    let xpu = op(Operator::XPerp, u)?;

    let x_v = commutator_residual(&op(Operator::X, &vu)?, &op(Operator::V, &xu)?, &xpu, n)?;

    let kv = vu.mul_curvature().scale(Complex64::new(-1.0, 0.0));
    let x_xperp = commutator_residual(&op(Operator::X, &xpu)?, &op(Operator::XPerp, &xu)?, &kv, n)?;

    let v_xperp = commutator_residual(&op(Operator::V, &xpu)?, &op(Operator::XPerp, &vu)?, &xu, n)?;

    Ok(CommutatorResiduals {
        x_v,
        x_xperp,
        v_xperp,
    })
}

/// `‖VXu‖² = ‖XVu‖² − (KVu, Vu) + ‖Xu‖²`.
pub fn pestov_residual(u: &FourierField) -> Result<Residual> {
    require_vanishing_trace(u)?;
    let xu = op(Operator::X, u)?;
    let vu = op(Operator::V, u)?;
    let lhs = op(Operator::V, &xu)?.norm_sq();
    let xvu = op(Operator::X, &vu)?.norm_sq();
    let kvu = inner_product(&vu.mul_curvature(), &vu)?.re;
    let xu2 = xu.norm_sq();
    let rhs = xvu - kvu + xu2;
    Ok(Residual::relative(
        &[lhs, xvu, kvu, xu2],
        (lhs - rhs).abs(),
        u.norm(),
    ))
}

/// `‖η₋u‖² = ‖η₊u‖² − (i/2)(KVu, u)`.
pub fn gk_residual(u: &FourierField) -> Result<Residual> {
    require_vanishing_trace(u)?;
    let lhs = op(Operator::EtaMinus, u)?.norm_sq();
    let plus = op(Operator::EtaPlus, u)?.norm_sq();
    let curv = Complex64::new(0.0, 0.5) * inner_product(&op(Operator::V, u)?.mul_curvature(), u)?;
    let diff = (Complex64::new(lhs - plus, 0.0) + curv).norm();
    Ok(Residual::relative(
        &[lhs, plus, curv.norm()],
        diff,
        u.norm(),
    ))
}

/// `2k(‖η₊u‖² − ‖η₋u‖²) = ik(KVu, u)` for `u ∈ Λ_k`.
pub fn lambda_k_equivalence(u: &FourierField) -> Result<Residual> {
    let total = u.norm();
    let k = match u.band() {
        None => return Ok(Residual::relative(&[], 0.0, 0.0)),
        Some((lo, hi)) => {
            let dominant = (lo..=hi)
                .max_by(|a, b| {
                    let na = u.discretization().norm_sq(u.mode(*a));
                    let nb = u.discretization().norm_sq(u.mode(*b));
                    na.total_cmp(&nb)
                })
                .expect("nonempty band");
            let rest = u.sub(&project(u, Selector::Lambda(dominant)))?.norm();
            if rest > 1e-12 * total {
                return Err(Error::Precondition(format!(
                    "field is not concentrated in a single Λ_k (off-mode norm {rest:.3e})"
                )));
            }
            dominant
        }
    };
    if k == 0 {
        return Ok(Residual {
            value: 0.0,
            degenerate: total == 0.0,
        });
    }
    require_vanishing_trace(u)?;
    let kf = k as f64;
    let plus = 2.0 * kf * op(Operator::EtaPlus, u)?.norm_sq();
    let minus = 2.0 * kf * op(Operator::EtaMinus, u)?.norm_sq();
    let rhs = Complex64::new(0.0, kf) * inner_product(&op(Operator::V, u)?.mul_curvature(), u)?;
    let diff = (Complex64::new(plus - minus, 0.0) - rhs).norm();
    Ok(Residual::relative(&[plus, minus, rhs.norm()], diff, total))
}

/// Outcome of a ratio whose denominator may vanish.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Ratio {
    Value(f64),
    KernelDirection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SubellipticRatios {
    /// `‖u − ū‖_{H¹} / ‖VXu‖` with `ū` the SM mean.
    pub pestov_ratio: Ratio,
    /// `‖u‖_{H¹} / ‖V T_{≥m+1} X u‖`, present when `m` was requested.
    pub qm_ratio: Option<Ratio>,
}

/// `(‖u‖² + ‖Xu‖² + ‖X⊥u‖² + ‖Vu‖²)^{1/2}`.
pub fn h1_norm(u: &FourierField) -> Result<f64> {
    Ok((u.norm_sq()
        + op(Operator::X, u)?.norm_sq()
        + op(Operator::XPerp, u)?.norm_sq()
        + op(Operator::V, u)?.norm_sq())
    .sqrt())
}

fn ratio(num: f64, den: f64) -> Ratio {
    if den <= 1e-13 * num.max(1.0) {
        Ratio::KernelDirection
    } else {
        Ratio::Value(num / den)
    }
}

/// Measured ratios for the operators `P = VX` and `Q_m = V T_{≥m+1} X`.
///
/// No bound is asserted on these numbers.
pub fn subelliptic_ratio(u: &FourierField, m: Option<u32>) -> Result<SubellipticRatios> {
    let disc = u.discretization();
    let one = FourierField::from_fn(disc, 0, |_, _| Complex64::new(1.0, 0.0))?;
    let mean = inner_product(u, &one)? / inner_product(&one, &one)?;
    let centred = u.sub(&one.scale(mean))?;
    let pu = op(Operator::V, &op(Operator::X, u)?)?;
    let pestov_ratio = ratio(h1_norm(&centred)?, pu.norm());
    let qm_ratio = match m {
        None => None,
        Some(m) => {
            if u.degrees()
                .any(|k| k.unsigned_abs() < m as u64 && disc.norm_sq(u.mode(k)) > 0.0)
            {
                return Err(Error::Precondition(format!(
                    "Q_{m} ratio needs u supported in degrees |k| ≥ {m}"
                )));
            }
            let q = op(
                Operator::V,
                &project(&op(Operator::X, u)?, Selector::AtLeast(m + 1)),
            )?;
            Some(ratio(h1_norm(u)?, q.norm()))
        }
    };
    Ok(SubellipticRatios {
        pestov_ratio,
        qm_ratio,
    })
}

/// One CSV row per (identity, test function).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityRow {
    pub identity: String,
    pub input: String,
    pub residual: f64,
    pub grid: String,
}

/// Worst residual of each identity over a battery.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct BatteryMax {
    pub commutator_x_v: f64,
    pub commutator_x_xperp: f64,
    pub commutator_v_xperp: f64,
    pub pestov: f64,
    pub gk: f64,
}

impl BatteryMax {
    pub fn worst(&self) -> f64 {
        [
            self.commutator_x_v,
            self.commutator_x_xperp,
            self.commutator_v_xperp,
            self.pestov,
            self.gk,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    pub fn as_array(&self) -> [(&'static str, f64); 5] {
        [
            ("commutator [X,V]", self.commutator_x_v),
            ("commutator [X,Xperp]", self.commutator_x_xperp),
            ("commutator [V,Xperp]", self.commutator_v_xperp),
            ("pestov", self.pestov),
            ("gk", self.gk),
        ]
    }
}

/// Runs the five torus identities on `count` seeded random fields in
/// `[−band, band]` with spatial frequencies up to `spatial`.
pub fn identity_battery(
    disc: &std::sync::Arc<crate::bundle::Discretization>,
    count: usize,
    band: i64,
    spatial: usize,
    seed: u64,
) -> Result<(Vec<IdentityRow>, BatteryMax)> {
    use rayon::prelude::*;
    let grid = disc.label();
    let results: Vec<Result<(CommutatorResiduals, Residual, Residual)>> = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
            let real = i % 2 == 1;
            let spec = RandomFieldSpec {
                real,
                ..RandomFieldSpec::band(-band, band, spatial)
            };
            let u = random_field(disc, spec, &mut rng)?;
            Ok((
                commutator_residuals(&u)?,
                pestov_residual(&u)?,
                gk_residual(&u)?,
            ))
        })
        .collect();
    let mut rows = Vec::with_capacity(5 * count);
    let mut max = BatteryMax::default();
    for (i, r) in results.into_iter().enumerate() {
        let (c, p, g) = r?;
        let input = format!("random#{i} band={band} spatial={spatial}");
        for (name, v, slot) in [
            ("commutator [X,V]", c.x_v.value, &mut max.commutator_x_v),
            (
                "commutator [X,Xperp]",
                c.x_xperp.value,
                &mut max.commutator_x_xperp,
            ),
            (
                "commutator [V,Xperp]",
                c.v_xperp.value,
                &mut max.commutator_v_xperp,
            ),
            ("pestov", p.value, &mut max.pestov),
            ("gk", g.value, &mut max.gk),
        ] {
            *slot = slot.max(v);
            rows.push(IdentityRow {
                identity: name.into(),
                input: input.clone(),
                residual: v,
                grid: grid.clone(),
            });
        }
    }
    Ok((rows, max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::{plane_wave, Discretization};
    use crate::metric::IsothermalMetric;
    use crate::poly::Poly2;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn flat(n: usize, nt: usize) -> Arc<Discretization> {
        Discretization::torus(IsothermalMetric::flat_torus(), n, nt).unwrap()
    }

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn constants_give_zero() {
        let d = flat(16, 4);
        let one = FourierField::from_fn(&d, 0, |_, _| c(1.0)).unwrap();
        let r = commutator_residuals(&one).unwrap();
        assert_eq!(
            (r.x_v.value, r.x_xperp.value, r.v_xperp.value),
            (0.0, 0.0, 0.0)
        );
        assert_eq!(pestov_residual(&one).unwrap().value, 0.0);
        assert_eq!(gk_residual(&one).unwrap().value, 0.0);
        let zero = FourierField::zeros(&d);
        assert!(pestov_residual(&zero).unwrap().degenerate);
    }

    #[test]
    fn single_plane_wave_on_the_flat_torus() {
        let d = flat(16, 4);
        let u = FourierField::from_mode(&d, 1, plane_wave(&d, 1.0, 0.0)).unwrap();
        let r = commutator_residuals(&u).unwrap();
        assert!(r.x_v.value <= 1e-12 && r.x_xperp.value <= 1e-12 && r.v_xperp.value <= 1e-12);
        let e3 = FourierField::from_mode(&d, 3, plane_wave(&d, 1.0, 0.0)).unwrap();
        assert!(lambda_k_equivalence(&e3).unwrap().value <= 1e-12);
        let ep = apply_operator(Operator::EtaPlus, &e3).unwrap().norm();
        let em = apply_operator(Operator::EtaMinus, &e3).unwrap().norm();
        assert!((ep - em).abs() <= 1e-12 * ep);
    }

    #[test]
    fn pestov_for_spatial_functions() {
        // u = u(x): VXu and Xu are rotations of the gradient, so ‖VXu‖ = ‖Xu‖.
        let d = flat(16, 4);
        let u = FourierField::from_fn(&d, 0, |x, y| c((2.0 * x).sin() + (x + y).cos())).unwrap();
        let vxu = apply_operator(Operator::V, &apply_operator(Operator::X, &u).unwrap()).unwrap();
        let xu = apply_operator(Operator::X, &u).unwrap();
        assert!((vxu.norm() - xu.norm()).abs() <= 1e-12 * xu.norm());
        assert!(pestov_residual(&u).unwrap().value <= 1e-12);
    }

    #[test]
    fn curved_torus_identities() {
        let d = Discretization::torus(IsothermalMetric::torus_cos_x1(0.1), 32, 6).unwrap();
        let e1 = FourierField::from_fn(&d, 1, |_, _| c(1.0)).unwrap();
        assert!(gk_residual(&e1).unwrap().value <= 1e-10);
        assert!(lambda_k_equivalence(&e1).unwrap().value <= 1e-9);
        let r = commutator_residuals(&e1).unwrap();
        assert!(r.x_xperp.value <= 1e-10, "{r:?}");
    }

    #[test]
    fn lambda_k_requires_a_single_mode() {
        let d = flat(8, 4);
        let mut u = FourierField::from_fn(&d, 1, |_, _| c(1.0)).unwrap();
        u.set_mode(2, vec![c(1.0); d.n_nodes()]).unwrap();
        assert!(matches!(
            lambda_k_equivalence(&u),
            Err(Error::Precondition(_))
        ));
        let z = FourierField::from_fn(&d, 0, |x, _| c(x.cos())).unwrap();
        assert_eq!(lambda_k_equivalence(&z).unwrap().value, 0.0);
    }

    #[test]
    fn disc_identities_need_vanishing_trace() {
        let m = IsothermalMetric::disc(Poly2::from_real_terms(&[(2, 0, 1.0), (0, 2, 1.0)]));
        let d = Discretization::disc(m, 10, 3).unwrap();
        let u = FourierField::from_fn(&d, 1, |x, _| c(x)).unwrap();
        assert!(matches!(pestov_residual(&u), Err(Error::Precondition(_))));
        assert!(matches!(gk_residual(&u), Err(Error::Precondition(_))));
        let b = FourierField::from_fn(&d, 1, |x, y| c((1.0 - x * x - y * y) * x)).unwrap();
        assert!(gk_residual(&b).unwrap().value.is_finite());
        assert!(matches!(
            commutator_residuals(&b),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn subelliptic_ratios() {
        let d = flat(16, 4);
        let one = FourierField::from_fn(&d, 0, |_, _| c(1.0)).unwrap();
        assert_eq!(
            subelliptic_ratio(&one, None).unwrap().pestov_ratio,
            Ratio::KernelDirection
        );
        let e1 = FourierField::from_fn(&d, 1, |_, _| c(1.0)).unwrap();
        // X e^{iθ} = 0 on the flat torus with constant coefficients.
        assert_eq!(
            subelliptic_ratio(&e1, None).unwrap().pestov_ratio,
            Ratio::KernelDirection
        );
        let w = FourierField::from_mode(&d, 1, plane_wave(&d, 1.0, 0.0)).unwrap();
        // η₊(e^{ix₁}e^{iθ}) = (i/2)e^{ix₁}e^{2iθ}, η₋ = (i/2)e^{ix₁}; VX has norm² = (4·¼ + 0)·(2π)³.
        let pu = apply_operator(Operator::V, &apply_operator(Operator::X, &w).unwrap()).unwrap();
        let vol = (2.0 * std::f64::consts::PI).powi(3);
        assert!((pu.norm_sq() - vol).abs() < 1e-9);
        match subelliptic_ratio(&w, Some(1)).unwrap() {
            SubellipticRatios {
                pestov_ratio: Ratio::Value(p),
                qm_ratio: Some(Ratio::Value(q)),
            } => assert!(p.is_finite() && q.is_finite()),
            other => panic!("{other:?}"),
        }
        let ux = FourierField::from_fn(&d, 0, |x, _| c(x.sin())).unwrap();
        assert!(matches!(
            subelliptic_ratio(&ux, None).unwrap().pestov_ratio,
            Ratio::Value(_)
        ));
        assert!(subelliptic_ratio(&ux, Some(1)).is_err());
    }

    #[test]
    fn battery_on_the_flat_torus() {
        let d = flat(16, 8);
        let (rows, max) = identity_battery(&d, 4, 4, 3, 1).unwrap();
        assert_eq!(rows.len(), 20);
        assert!(max.worst() <= 1e-10, "{max:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn residuals_are_scale_and_conjugation_invariant(seed in 0u64..1000, s in 0.1f64..10.0, t in 0.0f64..6.0) {
            let d = Discretization::torus(IsothermalMetric::torus_cos_x1(0.3), 16, 6).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u = random_field(&d, RandomFieldSpec::band(-2, 2, 2), &mut rng).unwrap();
            let cu = u.scale(Complex64::from_polar(s, t));
            let g0 = gk_residual(&u).unwrap().value;
            let p0 = pestov_residual(&u).unwrap().value;
            prop_assert!((gk_residual(&cu).unwrap().value - g0).abs() <= 1e-12);
            prop_assert!((pestov_residual(&cu).unwrap().value - p0).abs() <= 1e-12);
            prop_assert!((gk_residual(&u.conj()).unwrap().value - g0).abs() <= 1e-12);
            prop_assert!((pestov_residual(&u.conj()).unwrap().value - p0).abs() <= 1e-12);
            let c0 = commutator_residuals(&u).unwrap();
            let c1 = commutator_residuals(&cu).unwrap();
            prop_assert!((c0.x_xperp.value - c1.x_xperp.value).abs() <= 1e-12);
        }
    }
}
