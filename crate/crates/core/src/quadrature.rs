//! Quadrature rules: Gauss–Legendre, polar Gauss rules on the unit disc and
//! composite Simpson weights.

use std::f64::consts::PI;

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
///
/// Exact for polynomials of degree `2n - 1`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0, "gauss_legendre needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess, then Newton on P_n.
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Gauss–Legendre rule mapped to `[a, b]`.
pub fn gauss_legendre_interval(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    (
        x.iter().map(|&t| mid + half * t).collect(),
        w.iter().map(|&v| v * half).collect(),
    )
}

/// Product rule on the unit disc: Gauss–Legendre in `r` (with the `r dr`
/// Jacobian folded into the weights) and uniform nodes in the polar angle.
///
/// Exact for polynomials in `(x₁, x₂)` of total degree `d` when
/// `n_r ≥ (d + 2) / 2` and `n_phi > d`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscQuadrature {
    pub n_r: usize,
    pub n_phi: usize,
    pub nodes: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
}

impl DiscQuadrature {
    pub fn new(n_r: usize, n_phi: usize) -> Self {
        let (r, wr) = gauss_legendre_interval(n_r, 0.0, 1.0);
        let dphi = 2.0 * PI / n_phi as f64;
        let mut nodes = Vec::with_capacity(n_r * n_phi);
        let mut weights = Vec::with_capacity(n_r * n_phi);
        for (ri, wi) in r.iter().zip(&wr) {
            for j in 0..n_phi {
                let phi = (j as f64 + 0.5) * dphi;
                nodes.push([ri * phi.cos(), ri * phi.sin()]);
                weights.push(wi * ri * dphi);
            }
        }
        Self {
            n_r,
            n_phi,
            nodes,
            weights,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Composite Simpson weights for `n` (even) panels of width `h`.
pub fn simpson_weights(n: usize, h: f64) -> Vec<f64> {
    assert!(
        n >= 2 && n % 2 == 0,
        "simpson needs an even number of panels"
    );
    let mut w = vec![0.0; n + 1];
    for (i, wi) in w.iter_mut().enumerate() {
        *wi = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        } * h
            / 3.0;
    }
    w
}

/// Smallest even panel count with panel width at most `max_step`.
pub fn simpson_panels(length: f64, max_step: f64) -> usize {
    let n = (length / max_step).ceil().max(2.0) as usize;
    n + n % 2
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        let (x, w) = gauss_legendre(7);
        for d in 0..14 {
            let approx: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(d)).sum();
            let exact = if d % 2 == 1 {
                0.0
            } else {
                2.0 / (d as f64 + 1.0)
            };
            assert!(
                (approx - exact).abs() < 1e-14,
                "degree {d}: {approx} vs {exact}"
            );
        }
    }

    #[test]
    fn disc_rule_area_and_moments() {
        let q = DiscQuadrature::new(6, 12);
        let area: f64 = q.weights.iter().sum();
        assert!((area - PI).abs() < 1e-13);
        // ∫ r⁴ over the unit disc = 2π/6.
        let m4: f64 = q
            .nodes
            .iter()
            .zip(&q.weights)
            .map(|(p, w)| w * (p[0] * p[0] + p[1] * p[1]).powi(2))
            .sum();
        assert!((m4 - PI / 3.0).abs() < 1e-13);
        // x₁⁴: ∫ = π/8.
        let x4: f64 = q
            .nodes
            .iter()
            .zip(&q.weights)
            .map(|(p, w)| w * p[0].powi(4))
            .sum();
        assert!((x4 - PI / 8.0).abs() < 1e-13);
    }

    #[test]
    fn simpson_is_exact_on_cubics() {
        let n = simpson_panels(2.0, 0.3);
        assert_eq!(n % 2, 0);
        let h = 2.0 / n as f64;
        let w = simpson_weights(n, h);
        let s: f64 = w
            .iter()
            .enumerate()
            .map(|(i, w)| {
                let t = i as f64 * h;
                w * (t * t * t - 2.0 * t + 1.0)
            })
            .sum();
        assert!((s - (4.0 - 4.0 + 2.0)).abs() < 1e-13);
    }
}
