//! Choice of the number of moments `K`.
//!
//! Two criteria are scanned over `K = p, …, K̄`:
//!
//! - covariate balance: `D_N(K) = Σⱼ supₓ |F̃ʲ(x) − F̂ʲ_K(x)|`, the aggregate
//!   KS distance between the plain empirical CDF of each covariate and its
//!   IPW-weighted counterpart at the two-step fit for that `K`;
//! - higher-order MSE: `S_GMM(K) = Σⱼ {Π̂(K; eⱼ)²/N + Φ̂(K; eⱼ)}` at a single
//!   preliminary estimate `γ̌` shared by all candidates.
//!
//! The smallest minimizing `K` wins.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use nalgebra::{DMatrix, DVector};

#[cfg(not(any(feature = "std", test)))]
#[allow(unused_imports)] // std inherent float methods win whenever std is linked
use num_traits::Float;

use crate::basis::BasisSpec;
use crate::gmm::{GmmFit, GmmOptions, MomentSystem, PreparedMoments};
use crate::linalg::{sym_inverse, symmetrize};
use crate::propensity::PropensityModel;
use crate::sample::{ObservedSample, TargetFunctional};
use crate::{Error, Result};

/// `Tᵢ / π(Zᵢ; γ)` for every row, zero where `t = 0`.
pub fn ipw_weights(sample: &ObservedSample, model: &PropensityModel, gamma: &[f64]) -> Result<Vec<f64>> {
    if gamma.len() != model.p() {
        return Err(Error::DimensionMismatch { what: "propensity parameters", expected: model.p(), got: gamma.len() });
    }
    let mut w = vec![0.0; sample.n()];
    for (i, x, y) in sample.respondents() {
        w[i] = 1.0 / model.response_unchecked(gamma, x, y).pi;
    }
    Ok(w)
}

/// `F̂ʲ(x) = N⁻¹ Σ Tᵢ/πᵢ · 1{Xᵢⱼ ≤ x}`; not capped at one.
pub fn weighted_cdf(sample: &ObservedSample, model: &PropensityModel, gamma: &[f64], j: usize, x: f64) -> Result<f64> {
    if j >= sample.r() {
        return Err(Error::DimensionMismatch { what: "covariate index", expected: sample.r(), got: j });
    }
    let w = ipw_weights(sample, model, gamma)?;
    let total: f64 = (0..sample.n()).filter(|&i| sample.row(i)[j] <= x).map(|i| w[i]).sum();
    Ok(total / sample.n() as f64)
}

/// `Σⱼ supₓ |F̃ʲ(x) − F̂ʲ(x)|` for per-row weights. Both functions are
/// right-continuous steps with jumps at the sample values, so the supremum is
/// attained at one of them once ties are absorbed.
pub fn balance_distance(sample: &ObservedSample, weights: &[f64]) -> f64 {
    let n = sample.n();
    let nf = n as f64;
    let mut order: Vec<usize> = (0..n).collect();
    let mut total = 0.0;
    for j in 0..sample.r() {
        order.sort_by(|&a, &b| sample.row(a)[j].total_cmp(&sample.row(b)[j]));
        let mut plain = 0.0;
        let mut weighted = 0.0;
        let mut sup: f64 = 0.0;
        let mut k = 0;
        while k < n {
            let v = sample.row(order[k])[j];
            while k < n && sample.row(order[k])[j] == v {
                plain += 1.0;
                weighted += weights[order[k]];
                k += 1;
            }
            sup = sup.max((plain / nf - weighted / nf).abs());
        }
        total += sup;
    }
    total
}

/// `D_N(K)` at the fitted `γ̂`.
pub fn balance_criterion(sample: &ObservedSample, model: &PropensityModel, gamma_hat: &[f64]) -> Result<f64> {
    Ok(balance_distance(sample, &ipw_weights(sample, model, gamma_hat)?))
}

/// Ingredients of the higher-order MSE criterion at a preliminary `γ̌`.
#[derive(Debug, Clone)]
pub struct DonaldNeweyParts {
    pub k: usize,
    pub p: usize,
    pub n: usize,
    /// `ρᵢ = 1 − Tᵢ/πᵢ`.
    pub rho: Vec<f64>,
    /// `∇_γ ρᵢ` as rows, `N × p`.
    pub grad_rho: DMatrix<f64>,
    pub upsilon: DMatrix<f64>,
    pub upsilon_inv: DMatrix<f64>,
    /// `Γ̂`, `K × p`.
    pub gamma_mat: DMatrix<f64>,
    pub omega: DMatrix<f64>,
    pub omega_inv: DMatrix<f64>,
    /// `d̃ᵢ` as rows.
    pub d_tilde: DMatrix<f64>,
    /// `η̃ᵢ` as rows.
    pub eta_tilde: DMatrix<f64>,
    /// `ξ̂ᵢᵢ`.
    pub xi: Vec<f64>,
    /// `D̂*ᵢ` as rows.
    pub d_star: DMatrix<f64>,
}

pub fn donald_newey_parts(prep: &PreparedMoments<'_>, gamma_check: &[f64]) -> Result<DonaldNeweyParts> {
    let (n, k, p) = (prep.n(), prep.k(), prep.p());
    if gamma_check.len() != p {
        return Err(Error::DimensionMismatch { what: "propensity parameters", expected: p, got: gamma_check.len() });
    }
    let sample = prep.sample();
    let model = prep.system().model();
    let mut rho = vec![1.0; n];
    let mut grad_rho = DMatrix::zeros(n, p);
    let mut w = vec![0.0; p];
    for (i, x, y) in sample.respondents() {
        let r = model.response_unchecked(gamma_check, x, y);
        rho[i] = 1.0 - 1.0 / r.pi;
        // ∇ρ = T ∇π / π² = −T (1 − π)/π · w
        if !r.clamped {
            model.features().fill(x, y, &mut w);
            let odds = r.one_minus_pi / r.pi;
            for l in 0..p {
                grad_rho[(i, l)] = -odds * w[l];
            }
        }
    }
    let nf = n as f64;
    let mut upsilon = DMatrix::zeros(k, k);
    let mut gamma_mat = DMatrix::zeros(k, p);
    for i in 0..n {
        let u = DVector::from_column_slice(prep.instruments_of(i));
        upsilon += &u * u.transpose() * (rho[i] * rho[i]);
        gamma_mat += &u * grad_rho.row(i);
    }
    upsilon = symmetrize(&(upsilon / nf));
    gamma_mat /= nf;
    let upsilon_inv = sym_inverse(&upsilon, "Υ̂", "skip this K")?.inverse;
    let omega = symmetrize(&(gamma_mat.transpose() * &upsilon_inv * &gamma_mat));
    let omega_inv = sym_inverse(&omega, "Ω̂", "skip this K")?.inverse;
    let gram_inv = sym_inverse(&prep.gram(), "instrument Gram matrix", "skip this K")?.inverse;

    let proj_gram = gamma_mat.transpose() * &gram_inv;
    let proj_ups = gamma_mat.transpose() * &upsilon_inv;
    let mut d_tilde = DMatrix::zeros(n, p);
    let mut d_star = DMatrix::zeros(n, p);
    let mut xi = vec![0.0; n];
    for i in 0..n {
        let u = DVector::from_column_slice(prep.instruments_of(i));
        d_tilde.row_mut(i).copy_from(&(&proj_gram * &u).transpose());
        d_star.row_mut(i).copy_from(&(&proj_ups * &u).transpose());
        xi[i] = u.dot(&(&upsilon_inv * &u)) / nf;
    }
    let eta_tilde = &grad_rho - &d_tilde;
    Ok(DonaldNeweyParts {
        k,
        p,
        n,
        rho,
        grad_rho,
        upsilon,
        upsilon_inv,
        gamma_mat,
        omega,
        omega_inv,
        d_tilde,
        eta_tilde,
        xi,
        d_star,
    })
}

/// `Π̂(K; t)` and `Φ̂(K; t)` for one direction `t`.
pub fn pi_phi(parts: &DonaldNeweyParts, t: &DVector<f64>) -> (f64, f64) {
    let a = parts.omega_inv.transpose() * t;
    let mut pi_hat = 0.0;
    let mut phi = 0.0;
    for i in 0..parts.n {
        let rho = parts.rho[i];
        pi_hat += parts.xi[i] * rho * a.dot(&parts.eta_tilde.row(i).transpose());
        let inner = &parts.d_star.row(i).transpose() * (rho * rho) - parts.grad_rho.row(i).transpose();
        phi += parts.xi[i] * a.dot(&inner).powi(2);
    }
    let middle = parts.gamma_mat.transpose() * &parts.upsilon_inv * &parts.gamma_mat;
    phi -= a.dot(&(middle * &a));
    (pi_hat, phi)
}

/// `S_GMM(K) = Σⱼ {Π̂(K; eⱼ)²/N + Φ̂(K; eⱼ)}`.
pub fn mse_criterion(parts: &DonaldNeweyParts) -> f64 {
    (0..parts.p)
        .map(|j| {
            let e = DVector::from_fn(parts.p, |i, _| if i == j { 1.0 } else { 0.0 });
            let (pi_hat, phi) = pi_phi(parts, &e);
            pi_hat * pi_hat / parts.n as f64 + phi
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KMethod {
    Balance,
    Mse,
}

impl fmt::Display for KMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KMethod::Balance => "balance",
            KMethod::Mse => "mse",
        })
    }
}

impl FromStr for KMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "balance" => Ok(KMethod::Balance),
            "mse" => Ok(KMethod::Mse),
            other => Err(Error::InvalidInput(alloc::format!("unknown K-selection method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct KCandidate {
    pub k: usize,
    pub criterion: Option<f64>,
    pub skipped: Option<String>,
    /// Two-step fit at this `K` (balance method only).
    pub fit: Option<GmmFit>,
}

#[derive(Debug, Clone)]
pub struct KScanResult {
    pub method: KMethod,
    pub candidates: Vec<KCandidate>,
    pub chosen: usize,
    /// Preliminary `γ̌` (mse method only).
    pub gamma_check: Option<Vec<f64>>,
}

impl KScanResult {
    pub fn chosen_candidate(&self) -> &KCandidate {
        self.candidates.iter().find(|c| c.k == self.chosen).expect("chosen K is a candidate")
    }
}

/// Problem description shared by every candidate `K`.
#[derive(Debug, Clone)]
pub struct KScanSetup<'a> {
    pub sample: &'a ObservedSample,
    pub model: &'a PropensityModel,
    pub target: TargetFunctional,
    /// Basis at the largest `K`; candidates use its leading terms.
    pub basis: &'a BasisSpec,
    pub options: &'a GmmOptions,
}

impl KScanSetup<'_> {
    fn system(&self, k: usize) -> Result<MomentSystem> {
        MomentSystem::sieve(self.basis.with_k(k)?, self.model.clone(), self.target)
    }
}

fn scan_one(setup: &KScanSetup<'_>, method: KMethod, k: usize, gamma_check: Option<&[f64]>) -> Result<(f64, Option<GmmFit>)> {
    let system = setup.system(k)?;
    let prep = system.prepare(setup.sample)?;
    match method {
        KMethod::Balance => {
            let fit = prep.fit(setup.options)?;
            if !fit.converged {
                return Err(Error::NoConvergence("two-step fit did not converge".to_string()));
            }
            let d = balance_criterion(setup.sample, setup.model, &fit.gamma_hat)?;
            Ok((d, Some(fit)))
        }
        KMethod::Mse => {
            let parts = donald_newey_parts(&prep, gamma_check.expect("preliminary estimate"))?;
            Ok((mse_criterion(&parts), None))
        }
    }
}

/// Scans `K = p, …, kmax` and returns the smallest minimizer.
pub fn select_k(setup: &KScanSetup<'_>, method: KMethod, kmax: usize) -> Result<KScanResult> {
    let p = setup.model.p();
    if kmax < p {
        return Err(Error::InvalidInput(alloc::format!("K̄ = {kmax} is below p = {p}")));
    }
    if setup.sample.n() <= kmax {
        return Err(Error::InsufficientSample { n: setup.sample.n(), required: kmax + 1 });
    }
    if setup.basis.k() < kmax {
        return Err(Error::InvalidInput("basis has fewer terms than K̄".into()));
    }
    let gamma_check = match method {
        KMethod::Mse => {
            // preliminary Step-I estimate at K = p
            let system = setup.system(p)?;
            Some(system.prepare(setup.sample)?.step1(setup.options)?.gamma)
        }
        KMethod::Balance => None,
    };
    let mut candidates = Vec::with_capacity(kmax + 1 - p);
    for k in p..=kmax {
        let c = match scan_one(setup, method, k, gamma_check.as_deref()) {
            Ok((v, _)) if !v.is_finite() => {
                KCandidate { k, criterion: None, skipped: Some("criterion is not finite".into()), fit: None }
            }
            Ok((v, fit)) => KCandidate { k, criterion: Some(v), skipped: None, fit },
            Err(e) => KCandidate { k, criterion: None, skipped: Some(e.to_string()), fit: None },
        };
        if let Some(reason) = &c.skipped {
            log::debug!("K = {k} skipped: {reason}");
        }
        candidates.push(c);
    }
    let mut best: Option<(usize, f64)> = None;
    for c in &candidates {
        if let Some(v) = c.criterion {
            if best.is_none_or(|(_, b)| v < b) {
                best = Some((c.k, v));
            }
        }
    }
    let (chosen, _) = best.ok_or(Error::NoCandidates)?;
    Ok(KScanResult { method, candidates, chosen, gamma_check })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::propensity::FeatureMap;

    fn const_y() -> PropensityModel {
        PropensityModel::new(FeatureMap::parse("const,y").unwrap())
    }

    #[test]
    fn hand_instance_weighted_cdf_and_balance() {
        // π(γ = 0) = ½, only the first row responds.
        let s = ObservedSample::new(vec![true, false], vec![0.3, 0.7], 1, vec![Some(1.0), None]).unwrap();
        let m = const_y();
        assert_eq!(weighted_cdf(&s, &m, &[0.0, 0.0], 0, 1.0).unwrap(), 1.0);
        assert_eq!(weighted_cdf(&s, &m, &[0.0, 0.0], 0, 0.5).unwrap(), 1.0);
        assert_eq!(weighted_cdf(&s, &m, &[0.0, 0.0], 0, 0.1).unwrap(), 0.0);
        assert_eq!(balance_criterion(&s, &m, &[0.0, 0.0]).unwrap(), 0.5);
    }

    #[test]
    fn unit_weights_give_zero_distance() {
        let s = ObservedSample::new(vec![true; 4], vec![0.1, 0.1, -2.0, 5.0], 1, vec![Some(0.0); 4]).unwrap();
        assert_eq!(balance_distance(&s, &[1.0; 4]), 0.0);
    }

    #[test]
    fn method_parsing() {
        assert_eq!("mse".parse::<KMethod>().unwrap(), KMethod::Mse);
        assert!("aic".parse::<KMethod>().is_err());
        assert_eq!(KMethod::Balance.to_string(), "balance");
    }
}
