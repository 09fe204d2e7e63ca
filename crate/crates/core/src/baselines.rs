//! Comparison estimators: IPW under a covariate-only (MAR) response model,
//! and the kernel efficient-score estimator (MK2).

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

#[cfg(not(any(feature = "std", test)))]
#[allow(unused_imports)] // std inherent float methods win whenever std is linked
use num_traits::Float;

use crate::gmm::{GmmFit, GmmOptions, Instruments, MomentSystem};
use crate::inference::{confidence_interval, fit_variance, VarianceEstimate};
use crate::optim::{newton_root, numeric_jacobian, RootOptions};
use crate::propensity::{FeatureMap, PropensityModel, Response, Term};
use crate::sample::{ObservedSample, TargetFunctional};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct MarFit {
    pub gamma: Vec<f64>,
    pub theta: f64,
    pub fit: GmmFit,
    pub variance: Option<VarianceEstimate>,
}

/// Exactly identified GMM for a covariate-only response model with the
/// features themselves as instruments, then `θ̃ = N⁻¹ Σ Tᵢ Uᵢ / π(Xᵢ; γ̃)`.
pub fn mar_estimate(
    sample: &ObservedSample,
    features: &FeatureMap,
    target: TargetFunctional,
    opts: &GmmOptions,
    alpha: f64,
) -> Result<MarFit> {
    if features.uses_outcome() {
        return Err(Error::InvalidInput("the MAR response model cannot depend on the outcome".into()));
    }
    let system = MomentSystem::new(
        Instruments::Covariates(features.clone()),
        PropensityModel::new(features.clone()),
        target,
    )?;
    let prep = system.prepare(sample)?;
    let fit = prep.fit(opts)?;
    let variance = fit_variance(&prep, &fit, alpha).ok();
    Ok(MarFit { gamma: fit.gamma_hat.clone(), theta: fit.theta_hat, fit, variance })
}

#[derive(Debug, Clone)]
pub struct Mk2Config {
    /// Gaussian kernel bandwidth `h > 0`.
    pub bandwidth: f64,
    pub root: RootOptions,
    /// Start points for the root finder besides the origin.
    pub n_starts: usize,
    pub alpha: f64,
}

impl Mk2Config {
    pub fn new(bandwidth: f64) -> Self {
        Self { bandwidth, root: RootOptions::default(), n_starts: 5, alpha: crate::inference::DEFAULT_ALPHA }
    }
}

/// Kernel-weighted conditional expectations `E*[· | X = xᵢ]` over the
/// respondents, for every row `i`.
///
/// Features split into an `x`-part and a `y`-part because every term depends
/// on at most one of them, so `w(xᵢ, Yⱼ) = w_x(xᵢ) + w_y(Yⱼ)`.
#[derive(Debug, Clone)]
pub struct KernelSmoother<'a> {
    sample: &'a ObservedSample,
    model: &'a PropensityModel,
    target: TargetFunctional,
    n: usize,
    p: usize,
    resp: Vec<usize>,
    resp_y: Vec<f64>,
    /// `N × n_obs`, each row rescaled so its largest entry is one.
    kernel: Vec<f64>,
    wx: Vec<f64>,
    wy: Vec<f64>,
    /// `U(xᵢ, Yⱼ)`, `N × n_obs`.
    target_xy: Vec<f64>,
}

impl<'a> KernelSmoother<'a> {
    pub fn new(
        sample: &'a ObservedSample,
        model: &'a PropensityModel,
        target: TargetFunctional,
        bandwidth: f64,
    ) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::InvalidInput("bandwidth must be positive".into()));
        }
        let (n, r, p) = (sample.n(), sample.r(), model.p());
        let resp: Vec<usize> = sample.respondents().map(|(i, _, _)| i).collect();
        if resp.is_empty() {
            return Err(Error::NoObservedOutcomes);
        }
        let resp_y: Vec<f64> = resp.iter().map(|&j| sample.outcome(j).expect("respondent")).collect();
        let m = resp.len();
        let mut kernel = vec![0.0; n * m];
        let inv2h2 = 0.5 / (bandwidth * bandwidth);
        for i in 0..n {
            let xi = sample.row(i);
            let row = &mut kernel[i * m..(i + 1) * m];
            let mut max = f64::NEG_INFINITY;
            for (slot, &j) in row.iter_mut().zip(&resp) {
                let xj = sample.row(j);
                let d2: f64 = (0..r).map(|c| (xi[c] - xj[c]).powi(2)).sum();
                *slot = -d2 * inv2h2;
                max = max.max(*slot);
            }
            // every raw weight exp(·) would underflow to zero
            if max < f64::MIN_POSITIVE.ln() {
                return Err(Error::ZeroKernelMass(bandwidth));
            }
            for v in row.iter_mut() {
                *v = (*v - max).exp();
            }
        }
        let terms = model.features().terms();
        let mut wx = vec![0.0; n * p];
        for i in 0..n {
            for (l, t) in terms.iter().enumerate() {
                if t.term != Term::Outcome {
                    wx[i * p + l] = t.value(sample.row(i), f64::NAN);
                }
            }
        }
        let mut wy = vec![0.0; m * p];
        for (jj, &y) in resp_y.iter().enumerate() {
            for (l, t) in terms.iter().enumerate() {
                if t.term == Term::Outcome {
                    wy[jj * p + l] = t.value(&[], y);
                }
            }
        }
        let mut target_xy = vec![0.0; n * m];
        for i in 0..n {
            for (jj, &y) in resp_y.iter().enumerate() {
                target_xy[i * m + jj] = target.eval(sample.row(i), y);
            }
        }
        if wx.iter().chain(&wy).chain(&target_xy).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("response features or target are not finite".into()));
        }
        Ok(Self { sample, model, target, n, p, resp, resp_y, kernel, wx, wy, target_xy })
    }

    fn index_x(&self, gamma: &[f64], i: usize) -> f64 {
        self.wx[i * self.p..(i + 1) * self.p].iter().zip(gamma).map(|(a, b)| a * b).sum()
    }

    fn index_y(&self, gamma: &[f64], jj: usize) -> f64 {
        self.wy[jj * self.p..(jj + 1) * self.p].iter().zip(gamma).map(|(a, b)| a * b).sum()
    }

    /// `E*[g(xᵢ, Yⱼ) | X = xᵢ]` for caller-supplied `g(i, jj)`, where `jj`
    /// indexes respondents.
    pub fn expect_at(&self, gamma: &[f64], i: usize, mut g: impl FnMut(usize, usize) -> f64) -> f64 {
        let m = self.resp.len();
        let ex = self.index_x(gamma, i);
        let mut num = 0.0;
        let mut den = 0.0;
        for jj in 0..m {
            let own = Response::from_index(self.index_x(gamma, self.resp[jj]) + self.index_y(gamma, jj));
            let cross = Response::from_index(ex + self.index_y(gamma, jj));
            let v = self.kernel[i * m + jj] / own.pi * cross.one_minus_pi / cross.pi;
            num += v * g(i, jj);
            den += v;
        }
        num / den
    }

    /// Per-row scores `(Ŝ₁ᵢ, Ŝ₂ᵢ)` at `(γ, θ)` as rows of an `N × (p+1)` matrix.
    pub fn scores(&self, gamma: &[f64], theta: f64) -> DMatrix<f64> {
        let (n, p) = (self.n, self.p);
        let m = self.resp.len();
        let mut s = DMatrix::zeros(n, p + 1);
        let own: Vec<Response> =
            (0..m).map(|jj| Response::from_index(self.index_x(gamma, self.resp[jj]) + self.index_y(gamma, jj))).collect();
        let mut rho = vec![1.0; n];
        let mut ipw_u = vec![0.0; n];
        for (jj, &j) in self.resp.iter().enumerate() {
            rho[j] = 1.0 - 1.0 / own[jj].pi;
            ipw_u[j] = self.target.eval(self.sample.row(j), self.resp_y[jj]) / own[jj].pi;
        }
        let mut num_w = vec![0.0; p];
        for i in 0..n {
            let ex = self.index_x(gamma, i);
            let mut den = 0.0;
            let mut num_pi = 0.0;
            let mut num_u = 0.0;
            num_w.iter_mut().for_each(|v| *v = 0.0);
            for jj in 0..m {
                let cross = Response::from_index(ex + self.index_y(gamma, jj));
                let base = self.kernel[i * m + jj] / own[jj].pi;
                let v = base * cross.one_minus_pi / cross.pi;
                den += v;
                num_u += v * self.target_xy[i * m + jj];
                // ∇π/(1 − π) = −π w, so v · (−∇π/(1 − π)) = base (1 − π) w
                let vp = base * cross.one_minus_pi;
                num_pi += vp;
                for (l, acc) in num_w.iter_mut().enumerate() {
                    *acc += vp * self.wy[jj * p + l];
                }
            }
            let wx = &self.wx[i * p..(i + 1) * p];
            for l in 0..p {
                // Ŝ₁ = −ρ E*[∇π/(1 − π)] = ρ E*[π w]
                s[(i, l)] = rho[i] * (num_pi * wx[l] + num_w[l]) / den;
            }
            s[(i, p)] = -ipw_u[i] + theta - rho[i] * num_u / den;
        }
        s
    }

    /// `θ` solving `Σ Ŝ₂ = 0` at `γ`.
    pub fn profile_theta(&self, gamma: &[f64]) -> f64 {
        let s = self.scores(gamma, 0.0);
        -s.column(self.p).sum() / self.n as f64
    }

    pub fn mean_gamma_score(&self, gamma: &[f64]) -> Vec<f64> {
        let s = self.scores(gamma, 0.0);
        (0..self.p).map(|l| s.column(l).sum() / self.n as f64).collect()
    }

    pub fn model(&self) -> &PropensityModel {
        self.model
    }
}

/// `E*[g(x, Yⱼ) | X = x]` at an arbitrary query point, by direct summation.
pub fn estar(
    sample: &ObservedSample,
    model: &PropensityModel,
    gamma: &[f64],
    g: impl Fn(&[f64], f64) -> f64,
    x: &[f64],
    bandwidth: f64,
) -> Result<f64> {
    if !(bandwidth > 0.0) {
        return Err(Error::InvalidInput("bandwidth must be positive".into()));
    }
    if x.len() != sample.r() {
        return Err(Error::DimensionMismatch { what: "query point", expected: sample.r(), got: x.len() });
    }
    let logk: Vec<(f64, f64, f64)> = sample
        .respondents()
        .map(|(_, xj, yj)| {
            let d2: f64 = x.iter().zip(xj).map(|(a, b)| (a - b).powi(2)).sum();
            let own = model.response_unchecked(gamma, xj, yj);
            let cross = model.response_unchecked(gamma, x, yj);
            (-0.5 * d2 / (bandwidth * bandwidth), cross.one_minus_pi / (cross.pi * own.pi), yj)
        })
        .collect();
    if logk.is_empty() {
        return Err(Error::NoObservedOutcomes);
    }
    let max = logk.iter().map(|v| v.0).fold(f64::NEG_INFINITY, f64::max);
    if max < f64::MIN_POSITIVE.ln() {
        return Err(Error::ZeroKernelMass(bandwidth));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (lk, ow, yj) in logk {
        let v = (lk - max).exp() * ow;
        num += v * g(x, yj);
        den += v;
    }
    Ok(num / den)
}

#[derive(Debug, Clone)]
pub struct Mk2Fit {
    pub gamma: Vec<f64>,
    pub theta: f64,
    /// `‖N⁻¹ Σ Ŝ₁ᵢ‖` at the returned root.
    pub score_norm: f64,
    pub se_theta: Option<f64>,
    pub ci_theta: Option<(f64, f64)>,
    pub iterations: usize,
}

/// Solves the stacked score equations with `θ` profiled out, and attaches a
/// sandwich variance `A⁻¹ B A⁻ᵀ` of the full score system.
pub fn mk2_estimate(
    sample: &ObservedSample,
    model: &PropensityModel,
    target: TargetFunctional,
    config: &Mk2Config,
) -> Result<Mk2Fit> {
    let sm = KernelSmoother::new(sample, model, target, config.bandwidth)?;
    let p = model.p();
    let starts = GmmOptions { n_starts: config.n_starts, ..GmmOptions::default() }.starts(p);
    let score = |g: &[f64]| {
        let v = sm.mean_gamma_score(g);
        v.iter().all(|x| x.is_finite()).then_some(v)
    };
    let mut best: Option<crate::optim::Root> = None;
    for x0 in &starts {
        let root = newton_root(score, x0, &config.root);
        let better = best.as_ref().is_none_or(|b| root.residual_norm < b.residual_norm);
        let done = root.converged;
        if better {
            best = Some(root);
        }
        if done {
            break;
        }
    }
    let root = best.expect("at least one start");
    if !root.converged {
        return Err(Error::NoConvergence(alloc::format!(
            "score equations not solved (residual {:e})",
            root.residual_norm
        )));
    }
    let theta = sm.profile_theta(&root.x);
    let (se_theta, ci_theta) = match mk2_sandwich_se(&sm, &root.x, theta) {
        Some(se) => (Some(se), Some(confidence_interval(theta, se, config.alpha))),
        None => (None, None),
    };
    Ok(Mk2Fit { gamma: root.x, theta, score_norm: root.residual_norm, se_theta, ci_theta, iterations: root.iterations })
}

fn mk2_sandwich_se(sm: &KernelSmoother<'_>, gamma: &[f64], theta: f64) -> Option<f64> {
    let p = gamma.len();
    let n = sm.n as f64;
    let mut params = gamma.to_vec();
    params.push(theta);
    let mean = |v: &[f64]| {
        let s = sm.scores(&v[..p], v[p]);
        let out: Vec<f64> = (0..=p).map(|l| s.column(l).sum() / n).collect();
        out.iter().all(|x| x.is_finite()).then_some(out)
    };
    let a = numeric_jacobian(mean, &params, 1e-6)?;
    let s = sm.scores(gamma, theta);
    let b = s.transpose() * &s / n;
    let a_inv = a.try_inverse()?;
    let v = &a_inv * b * a_inv.transpose();
    let var = v[(p, p)];
    (var > 0.0 && var.is_finite()).then(|| (var / n).sqrt())
}
