//! Orthonormal polynomials for the symmetric weight `(1 - x^2)^alpha` on
//! `[-1, 1]` and the matching Gauss rules.
//!
//! Nodes come from the Golub–Welsch eigenproblem and are then polished by
//! Newton steps on the degree-`N` polynomial; weights are Christoffel numbers
//! `1 / sum_k q_k(x)^2`, which keeps them accurate to a few ulps.

use nalgebra::{DMatrix, SymmetricEigen};

/// Three-term recurrence of the polynomials orthonormal for `(1 - x^2)^alpha`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymmetricJacobi {
    /// Exponent of the weight; `alpha > -1`.
    pub alpha: f64,
}

impl SymmetricJacobi {
    pub fn new(alpha: f64) -> Self {
        assert!(alpha > -1.0, "weight exponent must exceed -1");
        Self { alpha }
    }

    /// `int_{-1}^{1} (1 - x^2)^alpha dx` for integer or half-integer `alpha`.
    pub fn mass(&self) -> f64 {
        let two_a = (2.0 * self.alpha).round();
        assert!(
            (2.0 * self.alpha - two_a).abs() < 1e-12,
            "mass only implemented for half-integer exponents"
        );
        let two_a = two_a as i64;
        // Step down by one until the base case at alpha = 0 or alpha = -1/2.
        let (mut value, mut k) = if two_a % 2 == 0 {
            (2.0, 0)
        } else {
            (std::f64::consts::PI, -1)
        };
        while k < two_a {
            k += 2;
            let a = k as f64 / 2.0;
            value *= 2.0 * a / (2.0 * a + 1.0);
        }
        value
    }

    /// Off-diagonal Jacobi matrix entry `sqrt(beta_k)` for `k >= 1`.
    pub fn b(&self, k: usize) -> f64 {
        let lam = self.alpha + 0.5;
        let k = k as f64;
        (k * (k + 2.0 * lam - 1.0) / (4.0 * (k + lam) * (k + lam - 1.0))).sqrt()
    }

    /// Values of `q_0..=q_deg` at `x`.
    pub fn values(&self, x: f64, deg: usize, out: &mut Vec<f64>) {
        out.clear();
        out.push(1.0 / self.mass().sqrt());
        if deg == 0 {
            return;
        }
        out.push(x * out[0] / self.b(1));
        for k in 1..deg {
            let next = (x * out[k] - self.b(k) * out[k - 1]) / self.b(k + 1);
            out.push(next);
        }
    }

    /// Values and first derivatives of `q_0..=q_deg` at `x`.
    pub fn values_and_derivatives(&self, x: f64, deg: usize) -> (Vec<f64>, Vec<f64>) {
        let mut p = Vec::with_capacity(deg + 1);
        let mut d = Vec::with_capacity(deg + 1);
        p.push(1.0 / self.mass().sqrt());
        d.push(0.0);
        if deg > 0 {
            let b1 = self.b(1);
            p.push(x * p[0] / b1);
            d.push(p[0] / b1);
        }
        for k in 1..deg {
            let bk = self.b(k);
            let bk1 = self.b(k + 1);
            p.push((x * p[k] - bk * p[k - 1]) / bk1);
            d.push((p[k] + x * d[k] - bk * d[k - 1]) / bk1);
        }
        (p, d)
    }

    /// Gauss rule with `count` nodes, ascending in `x`.
    pub fn gauss(&self, count: usize) -> (Vec<f64>, Vec<f64>) {
        assert!(count >= 1);
        let mut jac = DMatrix::<f64>::zeros(count, count);
        for k in 1..count {
            let b = self.b(k);
            jac[(k, k - 1)] = b;
            jac[(k - 1, k)] = b;
        }
        let eig = SymmetricEigen::new(jac);
        let mut nodes: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());

        // Symmetric weight: enforce exact mirror symmetry before polishing.
        for i in 0..count / 2 {
            let j = count - 1 - i;
            let a = 0.5 * (nodes[j] - nodes[i]);
            nodes[i] = -a;
            nodes[j] = a;
        }
        if count % 2 == 1 {
            nodes[count / 2] = 0.0;
        }

        let mut weights = vec![0.0; count];
        for (i, x) in nodes.iter_mut().enumerate() {
            for _ in 0..3 {
                let (p, d) = self.values_and_derivatives(*x, count);
                if d[count] != 0.0 {
                    *x -= p[count] / d[count];
                }
            }
            let (p, _) = self.values_and_derivatives(*x, count - 1);
            weights[i] = 1.0 / p.iter().map(|v| v * v).sum::<f64>();
        }
        for i in 0..count / 2 {
            let j = count - 1 - i;
            let a = 0.5 * (nodes[j] - nodes[i]);
            nodes[i] = -a;
            nodes[j] = a;
            let w = 0.5 * (weights[i] + weights[j]);
            weights[i] = w;
            weights[j] = w;
        }
        (nodes, weights)
    }
}

/// Area of the unit sphere `S^k` embedded in `R^{k+1}`.
pub fn unit_sphere_area(k: usize) -> f64 {
    use std::f64::consts::PI;
    match k {
        0 => 2.0,
        1 => 2.0 * PI,
        _ => 2.0 * PI / (k as f64 - 1.0) * unit_sphere_area(k - 2),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn masses_match_beta_function() {
        assert!((SymmetricJacobi::new(0.0).mass() - 2.0).abs() < 1e-15);
        assert!((SymmetricJacobi::new(0.5).mass() - PI / 2.0).abs() < 1e-15);
        assert!((SymmetricJacobi::new(1.0).mass() - 4.0 / 3.0).abs() < 1e-15);
        assert!((SymmetricJacobi::new(2.0).mass() - 16.0 / 15.0).abs() < 1e-15);
    }

    #[test]
    fn legendre_rule_integrates_monomials() {
        let (x, w) = SymmetricJacobi::new(0.0).gauss(6);
        for p in 0..12 {
            let exact = if p % 2 == 1 { 0.0 } else { 2.0 / (p as f64 + 1.0) };
            let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(p)).sum();
            assert!((q - exact).abs() < 1e-14, "degree {p}: {q} vs {exact}");
        }
    }

    #[test]
    fn chebyshev_second_kind_nodes_are_closed_form() {
        // Weight sqrt(1-x^2): nodes cos(k pi/(N+1)).
        let n = 7;
        let (x, _) = SymmetricJacobi::new(0.5).gauss(n);
        for (i, xi) in x.iter().enumerate() {
            let exact = -((i + 1) as f64 * PI / (n + 1) as f64).cos();
            assert!((xi - exact).abs() < 1e-14);
        }
    }

    #[test]
    fn sphere_areas() {
        assert!((unit_sphere_area(2) - 4.0 * PI).abs() < 1e-14);
        assert!((unit_sphere_area(3) - 2.0 * PI * PI).abs() < 1e-13);
        assert!((unit_sphere_area(4) - 8.0 * PI * PI / 3.0).abs() < 1e-13);
    }
}
