//! Conjugate gradients for Hermitian positive semidefinite systems given as
//! closures.

use num_complex::Complex64;

use crate::error::{Error, Result};

type C = Complex64;

#[derive(Debug, Clone)]
pub struct CgSolution {
    pub x: Vec<C>,
    pub iterations: usize,
    /// Relative residual `‖b − Ax‖ / ‖b‖` after each iteration.
    pub history: Vec<f64>,
}

fn dot(a: &[C], b: &[C]) -> C {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn norm(a: &[C]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

/// Solves `A x = b` from `x = 0` until the relative residual drops below `tol`.
///
/// A zero right-hand side returns the zero vector without iterating.
pub fn conjugate_gradient<F>(apply: F, b: &[C], tol: f64, max_iter: usize) -> Result<CgSolution>
where
    F: Fn(&[C]) -> Vec<C>,
{
    let n = b.len();
    let b_norm = norm(b);
    let mut x = vec![C::new(0.0, 0.0); n];
    if b_norm == 0.0 {
        return Ok(CgSolution {
            x,
            iterations: 0,
            history: Vec::new(),
        });
    }
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut rr = dot(&r, &r).re;
    let mut history = Vec::new();
    for it in 1..=max_iter {
        let ap = apply(&p);
        let pap = dot(&p, &ap).re;
        if pap <= 0.0 {
            break;
        }
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += p[i] * alpha;
            r[i] -= ap[i] * alpha;
        }
        let rr_new = dot(&r, &r).re;
        let rel = rr_new.sqrt() / b_norm;
        history.push(rel);
        if rel <= tol {
            return Ok(CgSolution {
                x,
                iterations: it,
                history,
            });
        }
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + p[i] * beta;
        }
    }
    Err(Error::Solver {
        iterations: history.len(),
        history,
    })
}
