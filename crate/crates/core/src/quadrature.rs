//! Gauss–Hermite rules for expectations against a normal law.

use alloc::vec::Vec;

use nalgebra::{DMatrix, SymmetricEigen};

#[cfg(not(any(feature = "std", test)))]
#[allow(unused_imports)] // std inherent float methods win whenever std is linked
use num_traits::Float;

pub const DEFAULT_NODES: usize = 64;

/// Nodes and weights with `Σ wᵢ f(xᵢ) ≈ E[f(Z)]`, `Z ~ N(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    /// Golub–Welsch on the Jacobi matrix of the probabilists' Hermite
    /// polynomials (off-diagonal `√k`).
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "need at least one node");
        let mut j = DMatrix::zeros(n, n);
        for k in 1..n {
            let b = (k as f64).sqrt();
            j[(k - 1, k)] = b;
            j[(k, k - 1)] = b;
        }
        let eig = SymmetricEigen::new(j);
        let mut pairs: Vec<(f64, f64)> = (0..n)
            .map(|i| {
                let v0 = eig.eigenvectors[(0, i)];
                (eig.eigenvalues[i], v0 * v0)
            })
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        // symmetric rule: average mirrored pairs to remove eigen-solver noise
        for i in 0..n / 2 {
            let k = n - 1 - i;
            let x = 0.5 * (pairs[k].0 - pairs[i].0);
            let w = 0.5 * (pairs[k].1 + pairs[i].1);
            pairs[i] = (-x, w);
            pairs[k] = (x, w);
        }
        if n % 2 == 1 {
            pairs[n / 2].0 = 0.0;
        }
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        Self {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1 / total).collect(),
        }
    }

    /// `E[f(μ + σZ)]`.
    pub fn expect(&self, mean: f64, sd: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(z, w)| w * f(mean + sd * z)).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_moments_are_exact() {
        let gh = GaussHermite::new(DEFAULT_NODES);
        let m = |k: i32| gh.expect(0.0, 1.0, |z| z.powi(k));
        assert!((m(0) - 1.0).abs() < 1e-13);
        assert!(m(1).abs() < 1e-13);
        assert!((m(2) - 1.0).abs() < 1e-12);
        assert!((m(4) - 3.0).abs() < 1e-11);
        assert!((m(8) - 105.0).abs() < 1e-8);
    }

    #[test]
    fn shifted_scaled_expectation() {
        let gh = GaussHermite::new(DEFAULT_NODES);
        // E[exp(Y)] for Y ~ N(1, 0.5²) is exp(1 + 0.125).
        let v = gh.expect(1.0, 0.5, f64::exp);
        assert!((v - (1.125f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn three_point_rule() {
        let gh = GaussHermite::new(3);
        let s3 = 3f64.sqrt();
        assert!((gh.nodes[2] - s3).abs() < 1e-14 && gh.nodes[1] == 0.0);
        assert!((gh.weights[1] - 2.0 / 3.0).abs() < 1e-14);
    }
}
