//! Sandwich variance `V̂_K = (B̂ᵀ D̂⁻¹ B̂)⁻¹`, standard errors and intervals.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

#[cfg(not(any(feature = "std", test)))]
#[allow(unused_imports)] // std inherent float methods win whenever std is linked
use num_traits::Float;

use crate::basis::{BasisSpec, Standardization};
use crate::dgp::{stream_rng, Population};
use crate::gmm::{GmmFit, MomentSystem, PreparedMoments};
use crate::linalg::{sym_inverse, symmetrize};
use crate::sample::ObservedSample;
use crate::stats::normal_quantile;
use crate::{Error, Result};

pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Clone)]
pub struct VarianceEstimate {
    pub b_hat: DMatrix<f64>,
    pub d_hat: DMatrix<f64>,
    pub v_hat: DMatrix<f64>,
    pub se_theta: f64,
    pub ci_theta: (f64, f64),
    pub alpha: f64,
}

impl VarianceEstimate {
    pub fn covers(&self, theta: f64) -> bool {
        self.ci_theta.0 <= theta && theta <= self.ci_theta.1
    }
}

/// Sample Jacobian of the moments at `γ`; the `θ` column is `(0, …, 0, 1)`.
pub fn b_hat(system: &MomentSystem, sample: &ObservedSample, gamma: &[f64]) -> Result<DMatrix<f64>> {
    system.prepare(sample)?.moment_jacobian(gamma)
}

pub fn confidence_interval(theta: f64, se: f64, alpha: f64) -> (f64, f64) {
    let z = normal_quantile(1.0 - alpha / 2.0);
    (theta - z * se, theta + z * se)
}

/// `V̂ = (B̂ᵀ D̂⁻¹ B̂)⁻¹`, `se = √(V̂_θθ / N)` and the normal interval.
pub fn v_hat(b: &DMatrix<f64>, d: &DMatrix<f64>, theta_hat: f64, n: usize, alpha: f64) -> Result<VarianceEstimate> {
    if b.nrows() != d.nrows() {
        return Err(Error::DimensionMismatch { what: "B̂ rows", expected: d.nrows(), got: b.nrows() });
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidInput("alpha must lie in (0, 1)".into()));
    }
    let d_inv = sym_inverse(d, "moment covariance D̂", "reduce K")?.inverse;
    let inner = symmetrize(&(b.transpose() * d_inv * b));
    let inv = sym_inverse(&inner, "B̂ᵀD̂⁻¹B̂", "reduce K or check the response model")?;
    // a ridge here would only mask an unidentified direction
    if inv.ridge > 0.0 {
        return Err(Error::Singular { what: "B̂ᵀD̂⁻¹B̂", advice: "reduce K or check the response model" });
    }
    let v = inv.inverse;
    let last = v.nrows() - 1;
    let var = v[(last, last)];
    if !(var > 0.0) || !var.is_finite() {
        return Err(Error::Singular { what: "B̂ᵀD̂⁻¹B̂", advice: "reduce K or check the response model" });
    }
    let se_theta = (var / n as f64).sqrt();
    Ok(VarianceEstimate {
        b_hat: b.clone(),
        d_hat: d.clone(),
        v_hat: v,
        se_theta,
        ci_theta: confidence_interval(theta_hat, se_theta, alpha),
        alpha,
    })
}

/// Variance of a two-step fit with `B̂` and `D̂` both evaluated at `(γ̂, θ̂)`.
pub fn fit_variance(prep: &PreparedMoments<'_>, fit: &GmmFit, alpha: f64) -> Result<VarianceEstimate> {
    let b = prep.moment_jacobian(&fit.gamma_hat)?;
    let d = prep.best_weighting(&fit.gamma_hat, fit.theta_hat)?.d_hat;
    v_hat(&b, &d, fit.theta_hat, prep.n(), alpha)
}

/// Population `B`, `D` and `V_K = (Bᵀ D⁻¹ B)⁻¹` at `(γ₀, θ₀)`.
#[derive(Debug, Clone)]
pub struct VkOracle {
    pub b: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub basis: BasisSpec,
}

/// Monte Carlo over `m_draws` draws of `(X, Y)` with `T` integrated out.
/// The basis is standardized with the draws' own covariate moments.
pub fn vk_population_oracle<P: Population + ?Sized>(pop: &P, k: usize, m_draws: usize, seed: u64) -> Result<VkOracle> {
    if m_draws == 0 {
        return Err(Error::InvalidInput("need at least one draw".into()));
    }
    let r = pop.r();
    let model = pop.model();
    let gamma0 = pop.gamma0();
    let theta0 = pop.theta0();
    let target = pop.target();
    let p = gamma0.len();

    let mut rng = stream_rng(seed, 0);
    let mut xs = vec![0.0; m_draws * r];
    let mut ys = Vec::with_capacity(m_draws);
    for row in xs.chunks_exact_mut(r) {
        pop.draw_covariates(&mut rng, row);
        ys.push(pop.outcome_law(row).sample(&mut rng));
    }
    let basis = BasisSpec::new(r, k, Standardization::from_rows(&xs, r))?;

    let mut b = DMatrix::zeros(k + 1, p + 1);
    let mut d = DMatrix::zeros(k + 1, k + 1);
    let mut u = vec![0.0; k];
    let mut w = vec![0.0; p];
    for (x, &y) in xs.chunks_exact(r).zip(&ys) {
        basis.eval_into(x, &mut u);
        model.features().fill(x, y, &mut w);
        let resp = model.response_unchecked(&gamma0, x, y);
        let (pi, q) = (resp.pi, resp.one_minus_pi);
        let odds = q / pi;
        let big_u = target.eval(x, y);
        // E[T ∇πᵀ/π² | Z] = ∇πᵀ/π = −(1 − π) wᵀ
        let slope = if resp.clamped { 0.0 } else { -q };
        for a in 0..k {
            for l in 0..p {
                b[(a, l)] += u[a] * slope * w[l];
            }
            for c in a..k {
                d[(a, c)] += odds * u[a] * u[c];
            }
            d[(a, k)] += odds * big_u * u[a];
        }
        for l in 0..p {
            b[(k, l)] += big_u * slope * w[l];
        }
        d[(k, k)] += theta0 * theta0 - 2.0 * theta0 * big_u + big_u * big_u / pi;
    }
    let m = m_draws as f64;
    b /= m;
    d /= m;
    b[(k, p)] = 1.0;
    for a in 0..=k {
        for c in a..=k {
            d[(c, a)] = d[(a, c)];
        }
    }
    let d_inv = sym_inverse(&d, "population D", "reduce K")?.inverse;
    let v = sym_inverse(&symmetrize(&(b.transpose() * d_inv * &b)), "population BᵀD⁻¹B", "reduce K")?.inverse;
    Ok(VkOracle { b, d, v, basis })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interval_is_symmetric_and_contains_estimate() {
        let (lo, hi) = confidence_interval(1.0, 0.1, DEFAULT_ALPHA);
        assert!((hi - 1.0 - 0.195_996_398_454_005_4).abs() < 1e-12);
        assert!((1.0 - lo - (hi - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn exactly_identified_variance_is_the_inverse_sandwich() {
        // K = p = 1: V = B⁻¹ D B⁻ᵀ.
        let b = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.5, 1.0]);
        let d = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 3.0]);
        let est = v_hat(&b, &d, 0.0, 100, DEFAULT_ALPHA).unwrap();
        let bi = b.clone().try_inverse().unwrap();
        let expected = &bi * &d * bi.transpose();
        assert!((&est.v_hat - &expected).norm() < 1e-12);
        assert!((est.se_theta - (expected[(1, 1)] / 100.0).sqrt()).abs() < 1e-15);
        assert!(est.covers(0.0));
    }

    #[test]
    fn rank_deficient_jacobian_is_an_error() {
        let b = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]);
        let d = DMatrix::identity(2, 2);
        assert!(matches!(v_hat(&b, &d, 0.0, 10, DEFAULT_ALPHA), Err(Error::Singular { .. })));
    }

    #[test]
    fn oracle_constant_block_is_variance_of_weight() {
        use crate::dgp::CoinFlipPopulation;
        // π ≡ ½: Var(1 − T/π) = (1 − π)/π = 1.
        let o = vk_population_oracle(&CoinFlipPopulation, 1, 100, 1).unwrap();
        assert!((o.d[(0, 0)] - 1.0).abs() < 1e-14);
        assert_eq!(o.b[(1, 1)], 1.0);
    }
}
