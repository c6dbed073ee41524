//! Closed-form Beurling contraction constants, the products `A_n(m₀)` with an
//! auditable tail certificate, and the α/β thresholds.

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BeurlingConstants {
    pub n: u32,
    pub m: u32,
    pub c: f64,
    /// `None` at `m = 0`, where `D_n` is undefined.
    pub d: Option<f64>,
    /// Only the inequality `≤ 1` is known; the value is that bound.
    pub bound_only: bool,
}

fn c3(m: u32) -> f64 {
    let m = m as f64;
    (1.0 + 1.0 / ((m + 2.0).powi(2) * (2.0 * m + 1.0))).sqrt()
}

fn d3(m: u32) -> f64 {
    let m = m as f64;
    (1.0 + 1.0 / ((m + 1.0).powi(2) * (2.0 * m - 1.0))).sqrt()
}

fn c_value(n: u32, m: u32) -> f64 {
    match n {
        2 if m == 0 => std::f64::consts::SQRT_2,
        2 => 1.0,
        3 => c3(m),
        _ => 1.0,
    }
}

pub fn beurling_constants(n: u32, m: u32) -> Result<BeurlingConstants> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "dimension n = {n} must be at least 2"
        )));
    }
    let d = (m >= 1).then(|| match n {
        2 if m == 1 => std::f64::consts::SQRT_2,
        2 => 1.0,
        3 => d3(m),
        _ => 1.0,
    });
    Ok(BeurlingConstants {
        n,
        m,
        c: c_value(n, m),
        d,
        bound_only: n >= 4,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ACertificate {
    pub n: u32,
    pub m0: u32,
    pub tail_terms: usize,
    /// `Π_{j < tail_terms} C_n(m₀ + 2j)`.
    pub partial_product: f64,
    /// Upper bound for `Σ_{j ≥ tail_terms} log C_n(m₀ + 2j)`.
    pub tail_log_bound: f64,
    /// The two pieces of the tail bound: the first omitted term and the integral remainder.
    pub tail_first_term: f64,
    pub tail_integral: f64,
    pub certified_upper_bound: f64,
    pub bound_only: bool,
}

/// `A_n(m₀) = Π_{j≥0} C_n(m₀ + 2j)` with a rigorous upper bound.
///
/// For `n = 3` the omitted factors satisfy `log C₃(m) ≤ 1/(2(m+2)²(2m+1)) ≤ 1/(4(m+½)³)`,
/// so with `m_J = m₀ + 2J` the tail is at most
/// `1/(2(m_J+2)²(2m_J+1)) + 1/(16(m_J+½)²)`.
pub fn a_constant(n: u32, m0: u32, tail_terms: usize) -> Result<ACertificate> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "dimension n = {n} must be at least 2"
        )));
    }
    if tail_terms < 8 {
        return Err(Error::InvalidArgument(format!(
            "tail_terms = {tail_terms} is too few for a certified bound (need ≥ 8)"
        )));
    }
    let partial: f64 = (0..tail_terms)
        .map(|j| c_value(n, m0 + 2 * j as u32))
        .product();
    let (first, integral) = if n == 3 {
        let mj = m0 as f64 + 2.0 * tail_terms as f64;
        (
            1.0 / (2.0 * (mj + 2.0).powi(2) * (2.0 * mj + 1.0)),
            1.0 / (16.0 * (mj + 0.5).powi(2)),
        )
    } else {
        (0.0, 0.0)
    };
    let tail = first + integral;
    Ok(ACertificate {
        n,
        m0,
        tail_terms,
        partial_product: partial,
        tail_log_bound: tail,
        tail_first_term: first,
        tail_integral: integral,
        certified_upper_bound: partial * tail.exp(),
        bound_only: n >= 4,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AlphaThreshold {
    /// `α_{m,n} = (m−1)(m+n−2) / (m(m+n−1))`.
    pub alpha: f64,
    /// `(m−2)(m+n−3) / ((m−1)(m+n−2))`, undefined at `m = 1`.
    pub secondary: Option<f64>,
}

pub fn alpha_threshold(n: u32, m: u32) -> Result<AlphaThreshold> {
    if m < 1 || n < 2 {
        return Err(Error::InvalidArgument(format!(
            "alpha threshold needs m ≥ 1, n ≥ 2 (got m = {m}, n = {n})"
        )));
    }
    let (m, n) = (m as f64, n as f64);
    let alpha = (m - 1.0) * (m + n - 2.0) / (m * (m + n - 1.0));
    let secondary = (m >= 2.0).then(|| (m - 2.0) * (m + n - 3.0) / ((m - 1.0) * (m + n - 2.0)));
    Ok(AlphaThreshold { alpha, secondary })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BetaThreshold {
    pub beta: f64,
    /// `2(n+1)/(n+2)`, reported at `m = 2`.
    pub m2_form: Option<f64>,
}

/// `m(m+n−1) / (2m+n−2)`.
pub fn beta_threshold(n: u32, m: u32) -> Result<BetaThreshold> {
    if m < 2 || n < 2 {
        return Err(Error::InvalidArgument(format!(
            "beta threshold needs m ≥ 2, n ≥ 2 (got m = {m}, n = {n})"
        )));
    }
    let (mf, nf) = (m as f64, n as f64);
    Ok(BetaThreshold {
        beta: mf * (mf + nf - 1.0) / (2.0 * mf + nf - 2.0),
        m2_form: (m == 2).then(|| 2.0 * (nf + 1.0) / (nf + 2.0)),
    })
}

/// `(β − 1)/β`; `β = ∞` gives 1.
pub fn controlled_from_beta(beta: f64) -> Result<f64> {
    if !(beta > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "β = {beta} must be positive"
        )));
    }
    if beta.is_infinite() {
        return Ok(1.0);
    }
    Ok((beta - 1.0) / beta)
}

/// One line of the constants table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstantsRow {
    pub n: u32,
    pub m: u32,
    pub c: f64,
    pub d: Option<f64>,
    pub bound_only: bool,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub controlled: Option<f64>,
}

pub fn constants_table(ns: &[u32], ms: &[u32]) -> Result<Vec<ConstantsRow>> {
    let mut rows = Vec::new();
    for &n in ns {
        for &m in ms {
            let bc = beurling_constants(n, m)?;
            let alpha = (m >= 1)
                .then(|| alpha_threshold(n, m))
                .transpose()?
                .map(|a| a.alpha);
            let beta = (m >= 2)
                .then(|| beta_threshold(n, m))
                .transpose()?
                .map(|b| b.beta);
            let controlled = beta.map(controlled_from_beta).transpose()?;
            rows.push(ConstantsRow {
                n,
                m,
                c: bc.c,
                d: bc.d,
                bound_only: bc.bound_only,
                alpha,
                beta,
                controlled,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn closed_forms() {
        assert_eq!(beurling_constants(2, 0).unwrap().c, 2f64.sqrt());
        assert_eq!(beurling_constants(2, 3).unwrap().c, 1.0);
        assert!((beurling_constants(3, 0).unwrap().c - 1.25f64.sqrt()).abs() < 1e-15);
        assert!((beurling_constants(3, 1).unwrap().d.unwrap() - 1.25f64.sqrt()).abs() < 1e-15);
        let b = beurling_constants(5, 2).unwrap();
        assert!(b.bound_only && b.c == 1.0);
        assert!(beurling_constants(1, 0).is_err());
        assert_eq!(beurling_constants(3, 0).unwrap().d, None);
    }

    #[test]
    fn products() {
        assert_eq!(
            a_constant(2, 0, 16).unwrap().certified_upper_bound,
            2f64.sqrt()
        );
        assert_eq!(a_constant(2, 5, 16).unwrap().certified_upper_bound, 1.0);
        let a3 = a_constant(3, 0, 64).unwrap();
        assert!(a3.certified_upper_bound <= 1.13, "{a3:?}");
        assert!(a3.partial_product <= a3.certified_upper_bound);
        assert!(a_constant(3, 0, 7).is_err());
    }

    #[test]
    fn thresholds() {
        assert_eq!(alpha_threshold(7, 1).unwrap().alpha, 0.0);
        assert!((alpha_threshold(2, 2).unwrap().alpha - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(alpha_threshold(2, 2).unwrap().secondary, Some(0.0));
        let b = beta_threshold(2, 2).unwrap();
        assert_eq!(b.beta, 1.5);
        assert_eq!(b.m2_form, Some(1.5));
        assert!((beta_threshold(3, 2).unwrap().beta - 1.6).abs() < 1e-15);
        assert_eq!(controlled_from_beta(1.0).unwrap(), 0.0);
        assert_eq!(controlled_from_beta(2.0).unwrap(), 0.5);
        assert_eq!(controlled_from_beta(f64::INFINITY).unwrap(), 1.0);
        assert!(controlled_from_beta(0.0).is_err());
    }

    #[test]
    fn table_shape() {
        let rows = constants_table(&[2, 3], &[0, 1, 2]).unwrap();
        assert_eq!(rows.len(), 6);
        assert_eq!(rows[0].alpha, None);
        assert!(rows[2].beta.is_some());
    }

    proptest! {
        #[test]
        fn c_equals_shifted_d(n in 2u32..4, m in 0u32..500) {
            let c = beurling_constants(n, m).unwrap().c;
            let d = beurling_constants(n, m + 1).unwrap().d.unwrap();
            prop_assert!((c - d).abs() <= 1e-15);
        }

        #[test]
        fn beta_control_dominates_alpha(n in 2u32..=50, m in 2u32..=50) {
            let b = beta_threshold(n, m).unwrap().beta;
            prop_assert!(b > 1.0);
            let a = alpha_threshold(n, m).unwrap().alpha;
            prop_assert!(controlled_from_beta(b).unwrap() >= a - 1e-12);
        }

        #[test]
        fn certificate_tightens_with_more_terms(m0 in 0u32..20, j in 8usize..200) {
            let a = a_constant(3, m0, j).unwrap().certified_upper_bound;
            let b = a_constant(3, m0, j + 1).unwrap().certified_upper_bound;
            prop_assert!(b <= a * (1.0 + 1e-15));
            prop_assert!(b >= a_constant(3, m0, j + 1).unwrap().partial_product);
        }
    }
}
