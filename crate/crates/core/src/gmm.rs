//! Stacked moment system and two-step GMM.
//!
//! With `m(γ, θ) = (a(γ), θ − c(γ))`, where
//! `a(γ) = N⁻¹ Σ (1 − Tᵢ/πᵢ) u_K(Xᵢ)` and `c(γ) = N⁻¹ Σ Tᵢ U(Zᵢ)/πᵢ`,
//! the objective `mᵀ W m` is minimized over `θ` in closed form:
//!
//! ```text
//! θ*(γ) = c(γ) − w_θaᵀ a(γ) / w_θθ,
//! Q*(γ) = a(γ)ᵀ (W_aa − w_aθ w_aθᵀ / w_θθ) a(γ),
//! ```
//!
//! so the numerical search runs over `γ ∈ ℝᵖ` only.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::basis::BasisSpec;
use crate::linalg::{max_asymmetry, quad_form, sym_inverse, symmetrize};
use crate::optim::{bfgs, MinimizeOptions, Minimum};
use crate::propensity::{FeatureMap, PropensityModel, Response};
use crate::sample::{ObservedSample, TargetFunctional};
use crate::{Error, Result};

/// Tolerance on `|W - Wᵀ|` accepted by [`objective`].
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Instruments `u(X)` for the conditional restriction.
#[derive(Debug, Clone, PartialEq)]
pub enum Instruments {
    /// Power-series sieve.
    Sieve(BasisSpec),
    /// A covariate-only feature map, used by the exactly identified MAR fit.
    Covariates(FeatureMap),
}

impl Instruments {
    pub fn dim(&self) -> usize {
        match self {
            Instruments::Sieve(b) => b.k(),
            Instruments::Covariates(f) => f.len(),
        }
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Instruments::Sieve(b) => b.eval_into(x, out),
            Instruments::Covariates(f) => f.fill(x, f64::NAN, out),
        }
    }

    fn required_covariates(&self) -> usize {
        match self {
            Instruments::Sieve(b) => b.r(),
            Instruments::Covariates(f) => f.required_covariates(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentSystem {
    instruments: Instruments,
    model: PropensityModel,
    target: TargetFunctional,
}

impl MomentSystem {
    pub fn new(instruments: Instruments, model: PropensityModel, target: TargetFunctional) -> Result<Self> {
        if let Instruments::Covariates(f) = &instruments {
            if f.uses_outcome() {
                return Err(Error::InvalidInput("instruments cannot depend on the outcome".into()));
            }
        }
        if instruments.dim() < model.p() {
            return Err(Error::InvalidInput(alloc::format!(
                "K = {} moments cannot identify p = {} propensity parameters",
                instruments.dim(),
                model.p()
            )));
        }
        Ok(Self { instruments, model, target })
    }

    pub fn sieve(basis: BasisSpec, model: PropensityModel, target: TargetFunctional) -> Result<Self> {
        Self::new(Instruments::Sieve(basis), model, target)
    }

    pub fn k(&self) -> usize {
        self.instruments.dim()
    }

    pub fn p(&self) -> usize {
        self.model.p()
    }

    pub fn instruments(&self) -> &Instruments {
        &self.instruments
    }

    pub fn model(&self) -> &PropensityModel {
        &self.model
    }

    pub fn target(&self) -> &TargetFunctional {
        &self.target
    }

    /// Evaluates everything that does not depend on `(γ, θ)` once.
    pub fn prepare<'a>(&'a self, sample: &'a ObservedSample) -> Result<PreparedMoments<'a>> {
        PreparedMoments::new(self, sample)
    }
}

/// A moment system bound to a sample, with instruments and features cached.
#[derive(Debug, Clone)]
pub struct PreparedMoments<'a> {
    system: &'a MomentSystem,
    sample: &'a ObservedSample,
    n: usize,
    k: usize,
    p: usize,
    /// `N × K`, row-major.
    u_all: Vec<f64>,
    u_sum: Vec<f64>,
    respondents: Vec<usize>,
    /// `n_obs × p`, row-major.
    w_resp: Vec<f64>,
    target_resp: Vec<f64>,
}

/// Moment pieces at one `γ`.
#[derive(Debug, Clone)]
pub(crate) struct GammaEval {
    pub a: DVector<f64>,
    pub c: f64,
    /// `∂a/∂γ`, `K × p`.
    pub da: DMatrix<f64>,
    /// `∂c/∂γ`.
    pub dc: DVector<f64>,
    pub clamps: usize,
}

impl<'a> PreparedMoments<'a> {
    fn new(system: &'a MomentSystem, sample: &'a ObservedSample) -> Result<Self> {
        let (n, k, p) = (sample.n(), system.k(), system.p());
        let need = (k + 1).max(p + 1);
        if n < need {
            return Err(Error::InsufficientSample { n, required: need });
        }
        let needed_r = system.instruments.required_covariates().max(system.model.features().required_covariates());
        if sample.r() < needed_r {
            return Err(Error::DimensionMismatch { what: "covariate columns", expected: needed_r, got: sample.r() });
        }
        if let Instruments::Sieve(b) = &system.instruments {
            if b.r() != sample.r() {
                return Err(Error::DimensionMismatch { what: "basis dimension", expected: sample.r(), got: b.r() });
            }
        }
        let mut u_all = vec![0.0; n * k];
        let mut u_sum = vec![0.0; k];
        for i in 0..n {
            let u = &mut u_all[i * k..(i + 1) * k];
            system.instruments.eval_into(sample.row(i), u);
            for (s, v) in u_sum.iter_mut().zip(u.iter()) {
                *s += v;
            }
        }
        let mut respondents = Vec::new();
        let mut w_resp = Vec::new();
        let mut target_resp = Vec::new();
        let mut w = vec![0.0; p];
        for (i, x, y) in sample.respondents() {
            respondents.push(i);
            system.model.features().fill(x, y, &mut w);
            w_resp.extend_from_slice(&w);
            target_resp.push(system.target.eval(x, y));
        }
        if respondents.is_empty() {
            return Err(Error::NoObservedOutcomes);
        }
        if w_resp.iter().chain(&target_resp).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("propensity features or target are not finite".into()));
        }
        Ok(Self { system, sample, n, k, p, u_all, u_sum, respondents, w_resp, target_resp })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn system(&self) -> &MomentSystem {
        self.system
    }

    pub fn sample(&self) -> &ObservedSample {
        self.sample
    }

    pub fn instruments_of(&self, i: usize) -> &[f64] {
        &self.u_all[i * self.k..(i + 1) * self.k]
    }

    /// `(1/N) Σ u_K(Xᵢ) u_K(Xᵢ)ᵀ` over all rows.
    pub fn gram(&self) -> DMatrix<f64> {
        let k = self.k;
        let mut g = DMatrix::zeros(k, k);
        for row in self.u_all.chunks_exact(k) {
            for a in 0..k {
                for b in a..k {
                    g[(a, b)] += row[a] * row[b];
                }
            }
        }
        for a in 0..k {
            for b in a..k {
                g[(a, b)] /= self.n as f64;
                g[(b, a)] = g[(a, b)];
            }
        }
        g
    }

    #[inline]
    fn response(&self, gamma: &[f64], j: usize) -> Response {
        let w = &self.w_resp[j * self.p..(j + 1) * self.p];
        Response::from_index(w.iter().zip(gamma).map(|(a, b)| a * b).sum())
    }

    pub(crate) fn eval_gamma(&self, gamma: &[f64]) -> GammaEval {
        let (k, p) = (self.k, self.p);
        let mut a = DVector::from_column_slice(&self.u_sum);
        let mut c = 0.0;
        let mut da = DMatrix::zeros(k, p);
        let mut dc = DVector::zeros(p);
        let mut clamps = 0;
        for (j, &i) in self.respondents.iter().enumerate() {
            let r = self.response(gamma, j);
            clamps += r.clamped as usize;
            let inv = 1.0 / r.pi;
            // ∂(1/π)/∂γ = (1 − π)/π · w off the clamp
            let odds = if r.clamped { 0.0 } else { r.one_minus_pi / r.pi };
            let u = self.instruments_of(i);
            let w = &self.w_resp[j * p..(j + 1) * p];
            let target = self.target_resp[j];
            for (av, uv) in a.iter_mut().zip(u) {
                *av -= uv * inv;
            }
            c += target * inv;
            if odds != 0.0 {
                for l in 0..p {
                    let ow = odds * w[l];
                    for (m, uv) in u.iter().enumerate() {
                        da[(m, l)] -= uv * ow;
                    }
                    dc[l] += target * ow;
                }
            }
        }
        let inv_n = 1.0 / self.n as f64;
        a *= inv_n;
        da *= inv_n;
        dc *= inv_n;
        GammaEval { a, c: c * inv_n, da, dc, clamps }
    }

    fn check_clamps(&self, clamps: usize) -> Result<()> {
        if 2 * clamps > self.n {
            return Err(Error::ExcessiveClamping { clamps, n: self.n });
        }
        Ok(())
    }

    /// `(1/N) G_K(γ, θ)`.
    pub fn moment_vector(&self, gamma: &[f64], theta: f64) -> Result<DVector<f64>> {
        self.check_gamma(gamma)?;
        let e = self.eval_gamma(gamma);
        self.check_clamps(e.clamps)?;
        Ok(stack(&e.a, theta - e.c))
    }

    /// `∂[(1/N) G_K] / ∂(γ, θ)`, `(K+1) × (p+1)`.
    pub fn moment_jacobian(&self, gamma: &[f64]) -> Result<DMatrix<f64>> {
        self.check_gamma(gamma)?;
        let e = self.eval_gamma(gamma);
        self.check_clamps(e.clamps)?;
        Ok(jacobian(&e, self.k, self.p))
    }

    /// Per-row `g_K(Tᵢ, Zᵢ; γ, θ)` as the rows of an `N × (K+1)` matrix.
    pub fn per_row_moments(&self, gamma: &[f64], theta: f64) -> Result<DMatrix<f64>> {
        self.check_gamma(gamma)?;
        let k = self.k;
        let mut g = DMatrix::zeros(self.n, k + 1);
        for i in 0..self.n {
            for (m, uv) in self.instruments_of(i).iter().enumerate() {
                g[(i, m)] = *uv;
            }
            g[(i, k)] = theta;
        }
        let mut clamps = 0;
        for (j, &i) in self.respondents.iter().enumerate() {
            let r = self.response(gamma, j);
            clamps += r.clamped as usize;
            let weight = 1.0 / r.pi;
            for m in 0..k {
                g[(i, m)] *= 1.0 - weight;
            }
            g[(i, k)] = theta - weight * self.target_resp[j];
        }
        self.check_clamps(clamps)?;
        Ok(g)
    }

    fn check_gamma(&self, gamma: &[f64]) -> Result<()> {
        if gamma.len() != self.p {
            return Err(Error::DimensionMismatch { what: "propensity parameters", expected: self.p, got: gamma.len() });
        }
        if gamma.iter().any(|g| !g.is_finite()) {
            return Err(Error::InvalidInput("propensity parameters must be finite".into()));
        }
        Ok(())
    }

    fn check_weighting(&self, w: &DMatrix<f64>) -> Result<()> {
        let d = self.k + 1;
        if w.nrows() != d || w.ncols() != d {
            return Err(Error::DimensionMismatch { what: "weighting matrix", expected: d, got: w.nrows() });
        }
        let asym = max_asymmetry(w);
        if asym > SYMMETRY_TOL * w.amax().max(1.0) {
            return Err(Error::NotSymmetric(asym));
        }
        Ok(())
    }

    /// `mᵀ W m` with `m = (1/N) G_K(γ, θ)`.
    pub fn objective(&self, gamma: &[f64], theta: f64, w: &DMatrix<f64>) -> Result<f64> {
        self.check_weighting(w)?;
        let m = self.moment_vector(gamma, theta)?;
        Ok(quad_form(w, &m))
    }

    /// Value and gradient of `mᵀ W m` in `(γ, θ)` jointly.
    pub fn objective_with_gradient(&self, params: &[f64], w: &DMatrix<f64>) -> Result<(f64, DVector<f64>)> {
        self.check_weighting(w)?;
        let (gamma, theta) = params.split_at(self.p);
        let m = self.moment_vector(gamma, theta[0])?;
        let jac = self.moment_jacobian(gamma)?;
        let wm = w * &m;
        Ok((m.dot(&wm), jac.transpose() * wm * 2.0))
    }

    fn gauss_newton_inverse(&self, gamma: &[f64], profile: &Profile) -> Option<DMatrix<f64>> {
        let e = self.eval_gamma(gamma);
        let h = symmetrize(&(e.da.transpose() * &profile.s * &e.da * 2.0));
        let inv = sym_inverse(&h, "Gauss-Newton Hessian", "").ok()?;
        (inv.ridge == 0.0 && inv.min_eig > 1e-12 * inv.max_eig).then_some(inv.inverse)
    }

    /// Minimizes the `θ`-profiled objective from each start and keeps the
    /// lowest value.
    fn minimize_profiled(&self, profile: &Profile, starts: &[Vec<f64>], opts: &GmmOptions) -> Option<Minimum> {
        let bounds = opts.bounds(self.p);
        let mopts = MinimizeOptions {
            grad_tol: opts.grad_tol,
            max_iter: opts.max_iter,
            lower: Some(bounds.0),
            upper: Some(bounds.1),
            ..MinimizeOptions::default()
        };
        let n = self.n;
        let objective = |gamma: &[f64], grad: &mut [f64]| {
            let e = self.eval_gamma(gamma);
            if 2 * e.clamps > n {
                return f64::INFINITY;
            }
            let sa = &profile.s * &e.a;
            let g = e.da.transpose() * &sa * 2.0;
            grad.copy_from_slice(g.as_slice());
            e.a.dot(&sa)
        };
        let mut best: Option<Minimum> = None;
        for x0 in starts {
            let h0 = self.gauss_newton_inverse(x0, profile);
            let m = bfgs(objective, x0, h0, &mopts);
            if !m.f.is_finite() {
                continue;
            }
            let better = match &best {
                None => true,
                Some(b) => m.f < b.f || (m.f == b.f && m.converged && !b.converged),
            };
            if better {
                best = Some(m);
            }
        }
        best
    }

    pub fn step1(&self, opts: &GmmOptions) -> Result<Step1> {
        let gram = self.gram();
        let gram_inv = sym_inverse(&gram, "instrument Gram matrix", "use fewer basis terms")?;
        let k = self.k;
        let mut w0_inv = DMatrix::zeros(k + 1, k + 1);
        w0_inv.view_mut((0, 0), (k, k)).copy_from(&gram_inv.inverse);
        w0_inv[(k, k)] = 1.0;
        let profile = Profile::new(&w0_inv);
        let best = self
            .minimize_profiled(&profile, &opts.starts(self.p), opts)
            .ok_or_else(|| Error::NoConvergence("no start point gave finite moments".to_string()))?;
        let e = self.eval_gamma(&best.x);
        let theta = profile.theta(&e);
        Ok(Step1 {
            gamma: best.x,
            theta,
            objective: best.f,
            w0_inv,
            gram_ridge: gram_inv.ridge,
            converged: best.converged,
            iterations: best.iterations,
            n_clamps: e.clamps,
        })
    }

    /// `D̂ = (1/N) Σ gᵢ gᵢᵀ` at the given parameters and its inverse.
    pub fn best_weighting(&self, gamma: &[f64], theta: f64) -> Result<Weighting> {
        let g = self.per_row_moments(gamma, theta)?;
        let d_hat = symmetrize(&(g.transpose() * &g / self.n as f64));
        let inv = sym_inverse(&d_hat, "moment covariance D̂", "reduce K")?;
        Ok(Weighting { d_hat, d_inv: inv.inverse, ridge: inv.ridge, min_eig: inv.min_eig, max_eig: inv.max_eig })
    }

    pub fn step2(&self, weighting: &Weighting, step1: &Step1, opts: &GmmOptions) -> Result<GmmFit> {
        let profile = Profile::new(&weighting.d_inv);
        let warm = self.minimize_profiled(&profile, core::slice::from_ref(&step1.gamma), opts);
        let best = match warm {
            Some(m) if m.converged => m,
            other => {
                let mut starts = opts.starts(self.p);
                starts.insert(0, step1.gamma.clone());
                match (other, self.minimize_profiled(&profile, &starts, opts)) {
                    (Some(a), Some(b)) => if b.f < a.f { b } else { a },
                    (a, b) => a.or(b).ok_or_else(|| {
                        Error::NoConvergence("no start point gave finite moments".to_string())
                    })?,
                }
            }
        };
        let e = self.eval_gamma(&best.x);
        let theta_hat = profile.theta(&e);
        let m = stack(&e.a, theta_hat - e.c);
        let objective_value = quad_form(&weighting.d_inv, &m).max(0.0);
        Ok(GmmFit {
            k: self.k,
            p: self.p,
            gamma_hat: best.x,
            theta_hat,
            step1: step1.clone(),
            objective_value,
            weighting: weighting.clone(),
            n_clamps: e.clamps,
            converged: best.converged && step1.converged,
            iterations: best.iterations,
        })
    }

    pub fn fit(&self, opts: &GmmOptions) -> Result<GmmFit> {
        let s1 = self.step1(opts)?;
        let w = self.best_weighting(&s1.gamma, s1.theta)?;
        self.step2(&w, &s1, opts)
    }
}

fn stack(a: &DVector<f64>, last: f64) -> DVector<f64> {
    let k = a.len();
    DVector::from_fn(k + 1, |i, _| if i < k { a[i] } else { last })
}

fn jacobian(e: &GammaEval, k: usize, p: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(k + 1, p + 1);
    j.view_mut((0, 0), (k, p)).copy_from(&e.da);
    for l in 0..p {
        j[(k, l)] = -e.dc[l];
    }
    j[(k, p)] = 1.0;
    j
}

/// Schur-complement form of `W` after profiling out `θ`.
#[derive(Debug, Clone)]
struct Profile {
    s: DMatrix<f64>,
    w_at: DVector<f64>,
    w_tt: f64,
}

impl Profile {
    fn new(w: &DMatrix<f64>) -> Self {
        let k = w.nrows() - 1;
        let w_aa = w.view((0, 0), (k, k)).into_owned();
        let w_at = w.view((0, k), (k, 1)).column(0).into_owned();
        let w_tt = w[(k, k)];
        let s = if w_tt > 0.0 { symmetrize(&(w_aa - &w_at * w_at.transpose() / w_tt)) } else { w_aa };
        Self { s, w_at, w_tt }
    }

    fn theta(&self, e: &GammaEval) -> f64 {
        if self.w_tt > 0.0 {
            e.c - self.w_at.dot(&e.a) / self.w_tt
        } else {
            e.c
        }
    }
}

#[derive(Debug, Clone)]
pub struct GmmOptions {
    /// `Γ = [lower, upper]` per coordinate; `None` means `[-10, 10]`.
    pub bounds: Option<(Vec<f64>, Vec<f64>)>,
    /// Start points in addition to the origin.
    pub n_starts: usize,
    pub grad_tol: f64,
    pub max_iter: usize,
}

impl Default for GmmOptions {
    fn default() -> Self {
        Self { bounds: None, n_starts: 5, grad_tol: 1e-9, max_iter: 500 }
    }
}

const HALTON_BASES: [u32; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

fn radical_inverse(mut i: u32, base: u32) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

impl GmmOptions {
    pub fn bounds(&self, p: usize) -> (Vec<f64>, Vec<f64>) {
        self.bounds.clone().unwrap_or_else(|| (vec![-10.0; p], vec![10.0; p]))
    }

    /// The origin followed by `n_starts` Halton points scaled into `Γ`.
    pub fn starts(&self, p: usize) -> Vec<Vec<f64>> {
        let (lo, hi) = self.bounds(p);
        let origin: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| 0f64.clamp(*l, *h)).collect();
        let mut out = vec![origin];
        for i in 1..=self.n_starts as u32 {
            out.push(
                (0..p)
                    .map(|d| {
                        let base = HALTON_BASES[d % HALTON_BASES.len()];
                        lo[d] + (hi[d] - lo[d]) * radical_inverse(i, base)
                    })
                    .collect(),
            );
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct Step1 {
    pub gamma: Vec<f64>,
    pub theta: f64,
    pub objective: f64,
    /// `Ŵ₀⁻¹ = diag(Gram⁻¹, 1)`.
    pub w0_inv: DMatrix<f64>,
    pub gram_ridge: f64,
    pub converged: bool,
    pub iterations: usize,
    pub n_clamps: usize,
}

#[derive(Debug, Clone)]
pub struct Weighting {
    pub d_hat: DMatrix<f64>,
    pub d_inv: DMatrix<f64>,
    pub ridge: f64,
    pub min_eig: f64,
    pub max_eig: f64,
}

#[derive(Debug, Clone)]
pub struct GmmFit {
    pub k: usize,
    pub p: usize,
    pub gamma_hat: Vec<f64>,
    pub theta_hat: f64,
    pub step1: Step1,
    pub objective_value: f64,
    pub weighting: Weighting,
    pub n_clamps: usize,
    pub converged: bool,
    pub iterations: usize,
}

/// `(1/N) G_K(γ, θ)`.
pub fn moment_vector(system: &MomentSystem, sample: &ObservedSample, gamma: &[f64], theta: f64) -> Result<DVector<f64>> {
    system.prepare(sample)?.moment_vector(gamma, theta)
}

pub fn objective(
    system: &MomentSystem,
    sample: &ObservedSample,
    gamma: &[f64],
    theta: f64,
    w: &DMatrix<f64>,
) -> Result<f64> {
    system.prepare(sample)?.objective(gamma, theta, w)
}

pub fn step1_estimate(system: &MomentSystem, sample: &ObservedSample, opts: &GmmOptions) -> Result<Step1> {
    system.prepare(sample)?.step1(opts)
}

pub fn best_weighting(system: &MomentSystem, sample: &ObservedSample, gamma: &[f64], theta: f64) -> Result<Weighting> {
    system.prepare(sample)?.best_weighting(gamma, theta)
}

pub fn step2_estimate(
    system: &MomentSystem,
    sample: &ObservedSample,
    weighting: &Weighting,
    step1: &Step1,
    opts: &GmmOptions,
) -> Result<GmmFit> {
    system.prepare(sample)?.step2(weighting, step1, opts)
}

/// Step I, best weighting, Step II.
pub fn fit_two_step(system: &MomentSystem, sample: &ObservedSample, opts: &GmmOptions) -> Result<GmmFit> {
    system.prepare(sample)?.fit(opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::propensity::FeatureMap;

    fn const_y() -> PropensityModel {
        PropensityModel::new(FeatureMap::parse("const,y").unwrap())
    }

    fn tiny() -> ObservedSample {
        ObservedSample::new(
            vec![true, false, true, true, false, true],
            vec![-1.0, 0.5, 0.2, 1.3, -0.4, 0.9],
            1,
            vec![Some(0.3), None, Some(1.1), Some(2.0), None, Some(0.7)],
        )
        .unwrap()
    }

    #[test]
    fn single_nonrespondent_row_moment() {
        let s = ObservedSample::new(vec![false, true, true, true], vec![2.0, 0.0, 0.0, 0.0], 1, vec![None, Some(0.0), Some(0.0), Some(0.0)]).unwrap();
        let sys = MomentSystem::sieve(BasisSpec::power_series(1, 3).unwrap(), const_y(), TargetFunctional::default()).unwrap();
        let prep = sys.prepare(&s).unwrap();
        let g = prep.per_row_moments(&[0.0, 0.0], 1.5).unwrap();
        assert_eq!(g.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 2.0, 4.0, 1.5]);
    }

    #[test]
    fn zero_weighting_gives_zero_objective() {
        let s = tiny();
        let sys = MomentSystem::sieve(BasisSpec::power_series(1, 2).unwrap(), const_y(), TargetFunctional::default()).unwrap();
        let w = DMatrix::zeros(3, 3);
        assert_eq!(objective(&sys, &s, &[0.3, -1.0], 2.0, &w).unwrap(), 0.0);
        let m = moment_vector(&sys, &s, &[0.3, -1.0], 2.0).unwrap();
        let id = DMatrix::identity(3, 3);
        let q = objective(&sys, &s, &[0.3, -1.0], 2.0, &id).unwrap();
        assert!((q - m.norm_squared()).abs() < 1e-15);
    }

    #[test]
    fn asymmetric_weighting_is_rejected() {
        let s = tiny();
        let sys = MomentSystem::sieve(BasisSpec::power_series(1, 2).unwrap(), const_y(), TargetFunctional::default()).unwrap();
        let mut w = DMatrix::identity(3, 3);
        w[(0, 1)] = 1e-6;
        assert!(matches!(objective(&sys, &s, &[0.0, 0.0], 0.0, &w), Err(Error::NotSymmetric(_))));
    }

    #[test]
    fn all_nonrespondents_is_an_error() {
        let s = ObservedSample::new(vec![false; 4], vec![0.0, 1.0, 2.0, 3.0], 1, vec![None; 4]).unwrap();
        let sys = MomentSystem::sieve(BasisSpec::power_series(1, 2).unwrap(), const_y(), TargetFunctional::default()).unwrap();
        assert!(matches!(fit_two_step(&sys, &s, &GmmOptions::default()), Err(Error::NoObservedOutcomes)));
    }

    #[test]
    fn too_small_sample_is_an_error() {
        let s = tiny();
        let sys = MomentSystem::sieve(BasisSpec::power_series(1, 6).unwrap(), const_y(), TargetFunctional::default()).unwrap();
        assert!(matches!(sys.prepare(&s), Err(Error::InsufficientSample { n: 6, required: 7 })));
    }

    #[test]
    fn underidentified_system_is_rejected() {
        assert!(MomentSystem::sieve(BasisSpec::power_series(1, 1).unwrap(), const_y(), TargetFunctional::default()).is_err());
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let s = tiny();
        let sys = MomentSystem::sieve(BasisSpec::power_series(1, 3).unwrap(), const_y(), TargetFunctional::default()).unwrap();
        let prep = sys.prepare(&s).unwrap();
        let gamma = [0.4, -0.8];
        let jac = prep.moment_jacobian(&gamma).unwrap();
        let h = 1e-6;
        for l in 0..2 {
            let mut gp = gamma;
            gp[l] += h;
            let mut gm = gamma;
            gm[l] -= h;
            let fd = (prep.moment_vector(&gp, 1.0).unwrap() - prep.moment_vector(&gm, 1.0).unwrap()) / (2.0 * h);
            for r in 0..4 {
                assert!((fd[r] - jac[(r, l)]).abs() < 1e-7 * (1.0 + jac[(r, l)].abs()));
            }
        }
        assert_eq!(jac[(3, 2)], 1.0);
    }

    #[test]
    fn halton_starts_lie_in_box() {
        let o = GmmOptions::default();
        let s = o.starts(2);
        assert_eq!(s.len(), 6);
        assert_eq!(s[0], vec![0.0, 0.0]);
        assert!(s.iter().flatten().all(|v| (-10.0..=10.0).contains(v)));
    }
}
