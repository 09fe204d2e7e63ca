//! Power-series sieve `u_K(x) = (x̃^{λ(1)}, …, x̃^{λ(K)})` on standardized
//! covariates `x̃`.
//!
//! Multi-indices are ordered by total degree, ties broken in graded
//! lexicographic order, so `λ(1) = 0` and `|λ(k)| ≤ |λ(k+1)|`.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

#[cfg(not(any(feature = "std", test)))]
#[allow(unused_imports)] // std inherent float methods win whenever std is linked
use num_traits::Float;

use crate::linalg::extreme_eigenvalues;
use crate::{Error, Result};

pub type MultiIndex = Vec<u32>;

/// Relative eigenvalue gap below which the Gram matrix is flagged.
pub const CONDITIONING_WARN: f64 = 1e-8;

/// All multi-indices of total degree `d` in `r` coordinates, lexicographically
/// descending: `(d,0,…)` first, `(…,0,d)` last.
fn indices_of_degree(r: usize, d: u32, out: &mut Vec<MultiIndex>) {
    fn rec(prefix: &mut Vec<u32>, remaining: u32, slots: usize, out: &mut Vec<MultiIndex>) {
        if slots == 1 {
            prefix.push(remaining);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for first in (0..=remaining).rev() {
            prefix.push(first);
            rec(prefix, remaining - first, slots - 1, out);
            prefix.pop();
        }
    }
    rec(&mut Vec::with_capacity(r), d, r, out);
}

/// First `k` multi-indices in `r` dimensions.
pub fn enumerate_multi_indices(r: usize, k: usize) -> Vec<MultiIndex> {
    let mut out = Vec::with_capacity(k);
    let mut d = 0;
    while out.len() < k {
        indices_of_degree(r.max(1), d, &mut out);
        d += 1;
    }
    out.truncate(k);
    out
}

/// Per-coordinate affine map `x̃ⱼ = (xⱼ - centerⱼ) / scaleⱼ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardization {
    pub fn identity(r: usize) -> Self {
        Self { center: vec![0.0; r], scale: vec![1.0; r] }
    }

    /// Sample mean and (divisor-N) standard deviation of each column of a
    /// row-major `n × r` matrix. Constant columns keep unit scale.
    pub fn from_rows(x: &[f64], r: usize) -> Self {
        let n = x.len().checked_div(r).unwrap_or(0);
        if n == 0 {
            return Self::identity(r);
        }
        let mut center = vec![0.0; r];
        for row in x.chunks_exact(r) {
            for (c, v) in center.iter_mut().zip(row) {
                *c += v;
            }
        }
        center.iter_mut().for_each(|c| *c /= n as f64);
        let mut scale = vec![0.0; r];
        for row in x.chunks_exact(r) {
            for j in 0..r {
                let d = row[j] - center[j];
                scale[j] += d * d;
            }
        }
        for s in scale.iter_mut() {
            let sd = (*s / n as f64).sqrt();
            *s = if sd > 0.0 && sd.is_finite() { sd } else { 1.0 };
        }
        Self { center, scale }
    }

    #[inline]
    pub fn apply(&self, j: usize, v: f64) -> f64 {
        (v - self.center[j]) / self.scale[j]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasisSpec {
    r: usize,
    indices: Vec<MultiIndex>,
    standardization: Standardization,
    max_power: Vec<u32>,
}

impl BasisSpec {
    pub fn new(r: usize, k: usize, standardization: Standardization) -> Result<Self> {
        if r == 0 || k == 0 {
            return Err(Error::InvalidInput("basis needs r ≥ 1 and K ≥ 1".into()));
        }
        if standardization.center.len() != r || standardization.scale.len() != r {
            return Err(Error::DimensionMismatch {
                what: "standardization",
                expected: r,
                got: standardization.center.len(),
            });
        }
        let indices = enumerate_multi_indices(r, k);
        let max_power = (0..r).map(|j| indices.iter().map(|l| l[j]).max().unwrap_or(0)).collect();
        Ok(Self { r, indices, standardization, max_power })
    }

    /// Raw monomials, no standardization.
    pub fn power_series(r: usize, k: usize) -> Result<Self> {
        Self::new(r, k, Standardization::identity(r))
    }

    /// Standardized with the sample moments of a row-major covariate matrix.
    pub fn standardized(r: usize, k: usize, covariates: &[f64]) -> Result<Self> {
        Self::new(r, k, Standardization::from_rows(covariates, r))
    }

    pub fn k(&self) -> usize {
        self.indices.len()
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    pub fn standardization(&self) -> &Standardization {
        &self.standardization
    }

    /// Same multi-indices and standardization, `k` terms.
    pub fn with_k(&self, k: usize) -> Result<Self> {
        Self::new(self.r, k, self.standardization.clone())
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        let mut powers: Vec<Vec<f64>> = Vec::with_capacity(self.r);
        for j in 0..self.r {
            let v = self.standardization.apply(j, x[j]);
            let mut col = Vec::with_capacity(self.max_power[j] as usize + 1);
            let mut acc = 1.0;
            col.push(acc);
            for _ in 0..self.max_power[j] {
                acc *= v;
                col.push(acc);
            }
            powers.push(col);
        }
        for (o, lambda) in out.iter_mut().zip(&self.indices) {
            *o = lambda.iter().enumerate().map(|(j, &e)| powers[j][e as usize]).product();
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.k()];
        self.eval_into(x, &mut out);
        out
    }
}

#[derive(Debug, Clone)]
pub struct BasisGram {
    pub gram: DMatrix<f64>,
    pub min_eig: f64,
    pub max_eig: f64,
    /// `min_eig < 1e-8 · max_eig`.
    pub ill_conditioned: bool,
}

/// `(1/N) Σ u_K(xᵢ) u_K(xᵢ)ᵀ` over a row-major covariate matrix.
pub fn gram_matrix(spec: &BasisSpec, covariates: &[f64]) -> DMatrix<f64> {
    let k = spec.k();
    let n = covariates.len() / spec.r();
    let mut gram = DMatrix::zeros(k, k);
    let mut u = vec![0.0; k];
    for row in covariates.chunks_exact(spec.r()) {
        spec.eval_into(row, &mut u);
        for a in 0..k {
            for b in a..k {
                gram[(a, b)] += u[a] * u[b];
            }
        }
    }
    for a in 0..k {
        for b in a..k {
            gram[(a, b)] /= n as f64;
            gram[(b, a)] = gram[(a, b)];
        }
    }
    gram
}

pub fn gram_diagnostics(spec: &BasisSpec, covariates: &[f64]) -> Result<BasisGram> {
    let n = covariates.len() / spec.r();
    if n < spec.k() {
        return Err(Error::InsufficientSample { n, required: spec.k() });
    }
    let gram = gram_matrix(spec, covariates);
    let (min_eig, max_eig) = extreme_eigenvalues(&gram);
    let ill_conditioned = !(min_eig >= CONDITIONING_WARN * max_eig);
    if ill_conditioned {
        log::warn!(
            "basis Gram matrix is ill-conditioned at K = {}: min eig {min_eig:e}, max eig {max_eig:e}",
            spec.k()
        );
    }
    Ok(BasisGram { gram, min_eig, max_eig, ill_conditioned })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn univariate_and_bivariate_orderings() {
        assert_eq!(enumerate_multi_indices(1, 3), vec![vec![0], vec![1], vec![2]]);
        assert_eq!(enumerate_multi_indices(2, 3), vec![vec![0, 0], vec![1, 0], vec![0, 1]]);
        assert_eq!(
            enumerate_multi_indices(2, 6),
            vec![vec![0, 0], vec![1, 0], vec![0, 1], vec![2, 0], vec![1, 1], vec![0, 2]]
        );
    }

    #[test]
    fn degrees_are_nondecreasing_and_distinct() {
        for r in 1..=3 {
            let idx = enumerate_multi_indices(r, 30);
            assert!(idx[0].iter().all(|&e| e == 0));
            for w in idx.windows(2) {
                let d0: u32 = w[0].iter().sum();
                let d1: u32 = w[1].iter().sum();
                assert!(d0 <= d1);
            }
            for i in 0..idx.len() {
                for j in (i + 1)..idx.len() {
                    assert_ne!(idx[i], idx[j]);
                }
            }
        }
    }

    #[test]
    fn eval_monomials() {
        let b = BasisSpec::power_series(1, 3).unwrap();
        assert_eq!(b.eval(&[2.0]), vec![1.0, 2.0, 4.0]);
        let b = BasisSpec::power_series(2, 6).unwrap();
        assert_eq!(b.eval(&[2.0, 3.0]), vec![1.0, 2.0, 3.0, 4.0, 6.0, 9.0]);
    }

    #[test]
    fn center_maps_to_unit_vector() {
        let st = Standardization { center: vec![1.5, -2.0], scale: vec![3.0, 0.5] };
        let b = BasisSpec::new(2, 10, st).unwrap();
        let u = b.eval(&[1.5, -2.0]);
        assert_eq!(u[0], 1.0);
        assert!(u[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gram_examples() {
        let b = BasisSpec::power_series(1, 1).unwrap();
        let g = gram_diagnostics(&b, &[0.3, -2.0, 5.0]).unwrap();
        assert_eq!(g.gram[(0, 0)], 1.0);
        assert_eq!((g.min_eig, g.max_eig), (1.0, 1.0));

        let b = BasisSpec::power_series(1, 2).unwrap();
        let g = gram_diagnostics(&b, &[-1.0, 1.0]).unwrap();
        assert_eq!(g.gram, DMatrix::identity(2, 2));
        assert!(!g.ill_conditioned);
    }

    #[test]
    fn too_few_rows_is_an_error() {
        let b = BasisSpec::power_series(1, 3).unwrap();
        assert!(matches!(
            gram_diagnostics(&b, &[0.0, 1.0]),
            Err(Error::InsufficientSample { n: 2, required: 3 })
        ));
    }

    #[test]
    fn duplicate_rows_flag_conditioning() {
        let b = BasisSpec::power_series(1, 3).unwrap();
        let g = gram_diagnostics(&b, &[1.0, 1.0, 2.0, 2.0]).unwrap();
        assert!(g.ill_conditioned);
    }

    #[test]
    fn standardization_moments() {
        let st = Standardization::from_rows(&[1.0, 10.0, 3.0, 10.0], 2);
        assert_eq!(st.center, vec![2.0, 10.0]);
        assert_eq!(st.scale, vec![1.0, 1.0]);
    }
}
