//! Simulation designs and the semiparametric efficiency bound.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

#[cfg(not(any(feature = "std", test)))]
#[allow(unused_imports)] // std inherent float methods win whenever std is linked
use num_traits::Float;

use crate::linalg::{sym_inverse, symmetrize};
use crate::propensity::{FeatureMap, FeatureTerm, PropensityModel, Term};
use crate::quadrature::{GaussHermite, DEFAULT_NODES};
use crate::sample::{ObservedSample, TargetFunctional};
use crate::{Error, Result};

/// Law of `Y` given the covariates.
#[derive(Debug, Clone, PartialEq)]
pub enum OutcomeLaw {
    Normal { mean: f64, sd: f64 },
    /// `(value, probability)` pairs.
    Discrete(Vec<(f64, f64)>),
}

impl OutcomeLaw {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            OutcomeLaw::Normal { mean, sd } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + sd * z
            }
            OutcomeLaw::Discrete(atoms) => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for &(v, p) in atoms {
                    acc += p;
                    if u < acc {
                        return v;
                    }
                }
                atoms.last().map_or(f64::NAN, |a| a.0)
            }
        }
    }

    /// Quadrature nodes `(y, weight)` for `E[· | X]`.
    pub fn nodes(&self, gh: &GaussHermite, out: &mut Vec<(f64, f64)>) {
        out.clear();
        match self {
            OutcomeLaw::Normal { mean, sd } => {
                out.extend(gh.nodes.iter().zip(&gh.weights).map(|(z, w)| (mean + sd * z, *w)));
            }
            OutcomeLaw::Discrete(atoms) => out.extend_from_slice(atoms),
        }
    }
}

/// A fully known joint law of `(X, Y, T)` with logistic response.
pub trait Population {
    /// Number of observed covariate columns.
    fn r(&self) -> usize;
    fn model(&self) -> PropensityModel;
    fn gamma0(&self) -> Vec<f64>;
    fn theta0(&self) -> f64;
    fn target(&self) -> TargetFunctional {
        TargetFunctional::default()
    }
    fn draw_covariates(&self, rng: &mut ChaCha8Rng, x: &mut [f64]);
    fn outcome_law(&self, x: &[f64]) -> OutcomeLaw;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scenario {
    I,
    II,
    III,
    IV,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [Scenario::I, Scenario::II, Scenario::III, Scenario::IV];

    pub fn gamma0(self) -> [f64; 2] {
        match self {
            Scenario::I => [0.0, -1.2],
            Scenario::II => [1.25, -1.2],
            Scenario::III => [3.0, -1.0],
            Scenario::IV => [1.0, -1.0],
        }
    }

    pub fn theta0(self) -> f64 {
        match self {
            Scenario::I => 1.0,
            Scenario::II => 2.0,
            Scenario::III => 1.2,
            Scenario::IV => 2.0,
        }
    }

    pub fn r(self) -> usize {
        match self {
            Scenario::IV => 2,
            _ => 1,
        }
    }

    /// Response-model features; Scenario IV recovers `z₁ = 2 ln x₁`.
    pub fn features(self) -> FeatureMap {
        let first = match self {
            Scenario::IV => FeatureTerm::scaled(2.0, Term::LogCovariate(0)),
            _ => FeatureTerm::new(Term::Const),
        };
        FeatureMap::new(vec![first, FeatureTerm::new(Term::Outcome)]).expect("two terms")
    }

    /// Covariate-only features of the MAR comparison model.
    pub fn mar_features(self) -> FeatureMap {
        let terms = match self {
            Scenario::IV => vec![FeatureTerm::scaled(2.0, Term::LogCovariate(0)), FeatureTerm::new(Term::Covariate(1))],
            _ => vec![FeatureTerm::new(Term::Const), FeatureTerm::new(Term::Covariate(0))],
        };
        FeatureMap::new(terms).expect("two terms")
    }

    pub fn default_kmax(self) -> usize {
        match self {
            Scenario::IV => 10,
            _ => 7,
        }
    }

    pub fn default_bandwidth(self) -> f64 {
        match self {
            Scenario::I => 0.15,
            Scenario::II => 0.05,
            Scenario::III => 0.1,
            Scenario::IV => 0.2,
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::I => "I",
            Scenario::II => "II",
            Scenario::III => "III",
            Scenario::IV => "IV",
        })
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "I" | "1" => Ok(Scenario::I),
            "II" | "2" => Ok(Scenario::II),
            "III" | "3" => Ok(Scenario::III),
            "IV" | "4" => Ok(Scenario::IV),
            other => Err(Error::InvalidInput(alloc::format!("unknown scenario `{other}`"))),
        }
    }
}

impl Population for Scenario {
    fn r(&self) -> usize {
        Scenario::r(*self)
    }

    fn model(&self) -> PropensityModel {
        PropensityModel::new(self.features())
    }

    fn gamma0(&self) -> Vec<f64> {
        Scenario::gamma0(*self).to_vec()
    }

    fn theta0(&self) -> f64 {
        Scenario::theta0(*self)
    }

    fn draw_covariates(&self, rng: &mut ChaCha8Rng, x: &mut [f64]) {
        match self {
            Scenario::I | Scenario::II => x[0] = StandardNormal.sample(rng),
            // χ²₆ / 2 is Gamma(3, 1)
            Scenario::III => x[0] = Gamma::new(3.0, 1.0).expect("valid shape").sample(rng),
            Scenario::IV => {
                let z1: f64 = StandardNormal.sample(rng);
                let z2: f64 = StandardNormal.sample(rng);
                x[0] = (z1 / 2.0).exp();
                x[1] = z2 / (1.0 + z1.exp());
            }
        }
    }

    fn outcome_law(&self, x: &[f64]) -> OutcomeLaw {
        match self {
            Scenario::I => OutcomeLaw::Normal { mean: x[0] + 1.0, sd: 1.0 },
            Scenario::II => OutcomeLaw::Normal { mean: x[0] * x[0] + 1.0, sd: 1.0 },
            Scenario::III => OutcomeLaw::Normal { mean: 0.1 * x[0] * x[0], sd: x[0].sqrt() / 5.0 },
            Scenario::IV => OutcomeLaw::Normal { mean: 2.0 + 2.0 * x[0].ln(), sd: 1.0 },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub n: usize,
    pub seed: u64,
}

/// Generator for replication `stream` of a master seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws with the complete outcome kept alongside the observed sample.
#[derive(Debug, Clone)]
pub struct FullDraw {
    pub sample: ObservedSample,
    pub y_full: Vec<f64>,
}

pub fn draw_full<P: Population + ?Sized>(pop: &P, n: usize, rng: &mut ChaCha8Rng) -> Result<FullDraw> {
    let r = pop.r();
    let model = pop.model();
    let gamma0 = pop.gamma0();
    let mut x = vec![0.0; n * r];
    let mut y = vec![0.0; n];
    let mut t = vec![false; n];
    for i in 0..n {
        let row = &mut x[i * r..(i + 1) * r];
        pop.draw_covariates(rng, row);
        y[i] = pop.outcome_law(row).sample(rng);
        let pi = model.response_unchecked(&gamma0, row, y[i]).pi;
        t[i] = rng.random::<f64>() < pi;
    }
    let observed = t.iter().zip(&y).map(|(&ti, &yi)| if ti { yi } else { f64::NAN }).collect();
    let sample = ObservedSample::with_placeholders(t, x, r, observed)?;
    Ok(FullDraw { sample, y_full: y })
}

/// Observed sample for a scenario; outcomes of non-respondents are blanked.
pub fn generate(config: &ScenarioConfig) -> Result<ObservedSample> {
    let mut rng = stream_rng(config.seed, 0);
    Ok(draw_full(&config.scenario, config.n, &mut rng)?.sample)
}

/// Efficient variance bounds for `(γ₀, θ₀)`.
#[derive(Debug, Clone)]
pub struct EffBound {
    pub v_gamma: DMatrix<f64>,
    pub v_theta: f64,
    pub kappa: DVector<f64>,
    /// `E[E[O|X] m mᵀ]`.
    pub info_gamma: DMatrix<f64>,
    pub m_draws: usize,
}

struct CondMoments {
    /// `E[O | X]`.
    odds: f64,
    /// `m(X)`.
    m: DVector<f64>,
    /// `R(X)`.
    r: f64,
}

fn conditional_moments(
    model: &PropensityModel,
    gamma0: &[f64],
    target: &TargetFunctional,
    x: &[f64],
    nodes: &[(f64, f64)],
    w: &mut [f64],
) -> CondMoments {
    let p = gamma0.len();
    let mut odds = 0.0;
    let mut num_m = DVector::zeros(p);
    let mut num_r = 0.0;
    for &(y, wt) in nodes {
        let resp = model.response_unchecked(gamma0, x, y);
        let o = resp.one_minus_pi / resp.pi;
        model.features().fill(x, y, w);
        odds += wt * o;
        // O · S₀ = O · π w = (1 − π) w
        for (a, b) in num_m.iter_mut().zip(w.iter()) {
            *a += wt * resp.one_minus_pi * b;
        }
        num_r += wt * o * target.eval(x, y);
    }
    CondMoments { odds, m: num_m / odds, r: num_r / odds }
}

/// Outer expectations over `m_draws` covariate draws, inner expectations
/// over `Y | X` by quadrature, and `T | Z` integrated analytically.
pub fn efficiency_bound<P: Population + ?Sized>(pop: &P, m_draws: usize, seed: u64) -> Result<EffBound> {
    if m_draws == 0 {
        return Err(Error::InvalidInput("need at least one draw".into()));
    }
    let model = pop.model();
    let gamma0 = pop.gamma0();
    let theta0 = pop.theta0();
    let target = pop.target();
    let p = gamma0.len();
    let r = pop.r();
    let gh = GaussHermite::new(DEFAULT_NODES);
    let mut nodes = Vec::new();
    let mut x = vec![0.0; r];
    let mut w = vec![0.0; p];

    // E[m ∇πᵀ/π] = −info, E[(U − R) ∇πᵀ/π]
    let mut info = DMatrix::zeros(p, p);
    let mut j2 = DVector::zeros(p);
    let mut rng = stream_rng(seed, 0);
    for _ in 0..m_draws {
        pop.draw_covariates(&mut rng, &mut x);
        pop.outcome_law(&x).nodes(&gh, &mut nodes);
        let c = conditional_moments(&model, &gamma0, &target, &x, &nodes, &mut w);
        info += &c.m * c.m.transpose() * c.odds;
        for &(y, wt) in &nodes {
            let resp = model.response_unchecked(&gamma0, &x, y);
            model.features().fill(&x, y, &mut w);
            let s = -wt * resp.one_minus_pi * (target.eval(&x, y) - c.r);
            for (a, b) in j2.iter_mut().zip(&w) {
                *a += s * b;
            }
        }
    }
    info /= m_draws as f64;
    j2 /= m_draws as f64;
    let info = symmetrize(&info);
    let v_gamma = sym_inverse(&info, "efficient information for γ", "check the response model")?.inverse;
    // κᵀ = E[(U − R)∇πᵀ/π] · E[m ∇πᵀ/π]⁻¹ with E[m ∇πᵀ/π] = −info
    let kappa = -(&v_gamma * &j2);

    let mut rng = stream_rng(seed, 0);
    let mut second = 0.0;
    let mut mean_u = 0.0;
    for _ in 0..m_draws {
        pop.draw_covariates(&mut rng, &mut x);
        pop.outcome_law(&x).nodes(&gh, &mut nodes);
        let c = conditional_moments(&model, &gamma0, &target, &x, &nodes, &mut w);
        // S₂ − κᵀS₁ = θ₀ − A − (T/π)(U − A), A = R + κᵀm
        let a = c.r + kappa.dot(&c.m);
        let d = theta0 - a;
        for &(y, wt) in &nodes {
            let pi = model.response_unchecked(&gamma0, &x, y).pi;
            let e = target.eval(&x, y) - a;
            second += wt * (d * d - 2.0 * d * e + e * e / pi);
            mean_u += wt * target.eval(&x, y);
        }
    }
    second /= m_draws as f64;
    mean_u /= m_draws as f64;
    let v_theta = second - (theta0 - mean_u).powi(2);
    Ok(EffBound { v_gamma, v_theta, kappa, info_gamma: info, m_draws })
}

/// Constant response probability `π ≡ ½` via the feature map `(c)` with
/// `γ = 0`, and `Y ∈ {0, 1}` with equal mass independent of `X`.
#[derive(Debug, Clone)]
pub struct CoinFlipPopulation;

impl Population for CoinFlipPopulation {
    fn r(&self) -> usize {
        1
    }
    fn model(&self) -> PropensityModel {
        PropensityModel::new(FeatureMap::new(vec![FeatureTerm::new(Term::Const)]).expect("one term"))
    }
    fn gamma0(&self) -> Vec<f64> {
        vec![0.0]
    }
    fn theta0(&self) -> f64 {
        0.5
    }
    fn draw_covariates(&self, rng: &mut ChaCha8Rng, x: &mut [f64]) {
        x[0] = rng.random();
    }
    fn outcome_law(&self, _x: &[f64]) -> OutcomeLaw {
        OutcomeLaw::Discrete(vec![(0.0, 0.5), (1.0, 0.5)])
    }
}

/// Response rate `E[π(Z; γ₀)]` by quadrature over `Y | X`.
pub fn response_rate<P: Population + ?Sized>(pop: &P, m_draws: usize, seed: u64) -> f64 {
    let model = pop.model();
    let gamma0 = pop.gamma0();
    let gh = GaussHermite::new(DEFAULT_NODES);
    let mut nodes = Vec::new();
    let mut x = vec![0.0; pop.r()];
    let mut rng = stream_rng(seed, 0);
    let mut acc = 0.0;
    for _ in 0..m_draws {
        pop.draw_covariates(&mut rng, &mut x);
        pop.outcome_law(&x).nodes(&gh, &mut nodes);
        acc += nodes.iter().map(|&(y, w)| w * model.response_unchecked(&gamma0, &x, y).pi).sum::<f64>();
    }
    acc / m_draws as f64
}

pub fn describe_law(law: &OutcomeLaw) -> String {
    match law {
        OutcomeLaw::Normal { mean, sd } => alloc::format!("N({mean}, {sd}²)"),
        OutcomeLaw::Discrete(a) => alloc::format!("discrete on {} atoms", a.len()),
    }
}
