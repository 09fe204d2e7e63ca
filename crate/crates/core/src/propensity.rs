//! Logistic response-probability model `π(z; γ) = 1 / (1 + exp(w(x, y)ᵀγ))`.
//!
//! The link is fixed; the feature map `w` is a list of terms drawn from the
//! constant, the outcome, covariate columns and their logarithms, each with
//! an optional multiplier (`2*ln(x1)` is the latent `z₁` of a log-normal
//! covariate `x₁ = exp(z₁/2)`).

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

#[cfg(not(any(feature = "std", test)))]
#[allow(unused_imports)] // std inherent float methods win whenever std is linked
use num_traits::Float;

use crate::{Error, Result};

/// Clamp applied to `π` so that `T/π` weights stay bounded.
pub const PI_CLAMP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Term {
    Const,
    Outcome,
    /// Zero-based covariate column.
    Covariate(usize),
    /// Natural log of a zero-based covariate column.
    LogCovariate(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureTerm {
    pub term: Term,
    pub coef: f64,
}

impl FeatureTerm {
    pub const fn new(term: Term) -> Self {
        Self { term, coef: 1.0 }
    }

    pub const fn scaled(coef: f64, term: Term) -> Self {
        Self { term, coef }
    }

    #[inline]
    pub fn value(&self, x: &[f64], y: f64) -> f64 {
        let raw = match self.term {
            Term::Const => 1.0,
            Term::Outcome => y,
            Term::Covariate(j) => x[j],
            Term::LogCovariate(j) => x[j].ln(),
        };
        self.coef * raw
    }
}

impl fmt::Display for FeatureTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.coef != 1.0 {
            write!(f, "{}*", self.coef)?;
        }
        match self.term {
            Term::Const => f.write_str("const"),
            Term::Outcome => f.write_str("y"),
            Term::Covariate(j) => write!(f, "x{}", j + 1),
            Term::LogCovariate(j) => write!(f, "ln(x{})", j + 1),
        }
    }
}

fn parse_covariate(s: &str) -> Option<usize> {
    let digits = s
        .strip_prefix("x[")
        .and_then(|r| r.strip_suffix(']'))
        .or_else(|| s.strip_prefix('x'))?;
    let j: usize = digits.parse().ok()?;
    (j >= 1).then(|| j - 1)
}

impl FromStr for FeatureTerm {
    type Err = Error;

    /// Accepts `const`, `y`, `x1` / `x[1]`, `ln(x1)` / `log(x1)`, each
    /// optionally prefixed by `c*`. Covariate indices are one-based.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::InvalidInput(alloc::format!("unrecognized feature term `{s}`"));
        let (coef, body) = match s.split_once('*') {
            Some((c, rest)) => (c.trim().parse::<f64>().map_err(|_| bad())?, rest.trim()),
            None => (1.0, s),
        };
        if !coef.is_finite() {
            return Err(bad());
        }
        let term = match body {
            "const" | "1" => Term::Const,
            "y" => Term::Outcome,
            _ => {
                if let Some(inner) = body
                    .strip_prefix("ln(")
                    .or_else(|| body.strip_prefix("log("))
                    .and_then(|r| r.strip_suffix(')'))
                {
                    Term::LogCovariate(parse_covariate(inner.trim()).ok_or_else(bad)?)
                } else {
                    Term::Covariate(parse_covariate(body).ok_or_else(bad)?)
                }
            }
        };
        Ok(FeatureTerm { term, coef })
    }
}

/// Ordered list of feature terms defining `w(x, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    terms: Vec<FeatureTerm>,
}

impl FeatureMap {
    pub fn new(terms: Vec<FeatureTerm>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::InvalidInput("feature map must have at least one term".into()));
        }
        Ok(Self { terms })
    }

    /// Parses a comma-separated list such as `const,y`.
    pub fn parse(list: &str) -> Result<Self> {
        let terms = list
            .split(',')
            .filter(|t| !t.trim().is_empty())
            .map(str::parse)
            .collect::<Result<Vec<_>>>()?;
        Self::new(terms)
    }

    pub fn terms(&self) -> &[FeatureTerm] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn uses_outcome(&self) -> bool {
        self.terms.iter().any(|t| t.term == Term::Outcome)
    }

    /// Number of covariate columns the map needs to see.
    pub fn required_covariates(&self) -> usize {
        self.terms
            .iter()
            .filter_map(|t| match t.term {
                Term::Covariate(j) | Term::LogCovariate(j) => Some(j + 1),
                _ => None,
            })
            .max()
            .unwrap_or(0)
    }

    #[inline]
    pub fn fill(&self, x: &[f64], y: f64, out: &mut [f64]) {
        for (o, t) in out.iter_mut().zip(&self.terms) {
            *o = t.value(x, y);
        }
    }

    pub fn eval(&self, x: &[f64], y: f64) -> Vec<f64> {
        self.terms.iter().map(|t| t.value(x, y)).collect()
    }
}

impl fmt::Display for FeatureMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.terms.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{t}")?;
        }
        Ok(())
    }
}

/// Coefficient vector `γ ∈ ℝᵖ`.
#[derive(Debug, Clone, PartialEq)]
pub struct PropensityParams(pub Vec<f64>);

impl PropensityParams {
    pub fn new(gamma: Vec<f64>) -> Result<Self> {
        if gamma.iter().any(|g| !g.is_finite()) {
            return Err(Error::InvalidInput("propensity parameters must be finite".into()));
        }
        Ok(Self(gamma))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Evaluated response probability with its complement, both after clamping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Response {
    pub pi: f64,
    pub one_minus_pi: f64,
    pub clamped: bool,
}

impl Response {
    /// Logistic response at linear index `eta`, computed without cancellation.
    #[inline]
    pub fn from_index(eta: f64) -> Self {
        let (pi, one_minus_pi) = if eta > 0.0 {
            let e = (-eta).exp();
            (e / (1.0 + e), 1.0 / (1.0 + e))
        } else {
            let e = eta.exp();
            (1.0 / (1.0 + e), e / (1.0 + e))
        };
        if !(pi >= PI_CLAMP) {
            Self { pi: PI_CLAMP, one_minus_pi: 1.0 - PI_CLAMP, clamped: true }
        } else if !(one_minus_pi >= PI_CLAMP) {
            Self { pi: 1.0 - PI_CLAMP, one_minus_pi: PI_CLAMP, clamped: true }
        } else {
            Self { pi, one_minus_pi, clamped: false }
        }
    }

    /// `∂π/∂η`; zero where the clamp is active.
    #[inline]
    pub fn slope(&self) -> f64 {
        if self.clamped {
            0.0
        } else {
            -self.pi * self.one_minus_pi
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropensityModel {
    features: FeatureMap,
}

impl PropensityModel {
    pub fn new(features: FeatureMap) -> Self {
        Self { features }
    }

    pub fn features(&self) -> &FeatureMap {
        &self.features
    }

    pub fn p(&self) -> usize {
        self.features.len()
    }

    fn check(&self, gamma: &[f64]) -> Result<()> {
        if gamma.len() != self.p() {
            return Err(Error::DimensionMismatch {
                what: "propensity parameters",
                expected: self.p(),
                got: gamma.len(),
            });
        }
        if gamma.iter().any(|g| !g.is_finite()) {
            return Err(Error::InvalidInput("propensity parameters must be finite".into()));
        }
        Ok(())
    }

    #[inline]
    pub(crate) fn index(&self, gamma: &[f64], x: &[f64], y: f64) -> f64 {
        self.features
            .terms()
            .iter()
            .zip(gamma)
            .map(|(t, g)| t.value(x, y) * g)
            .sum()
    }

    #[inline]
    pub(crate) fn response_unchecked(&self, gamma: &[f64], x: &[f64], y: f64) -> Response {
        Response::from_index(self.index(gamma, x, y))
    }

    /// `π(x, y; γ)` after clamping into `[ε, 1 - ε]`.
    pub fn pi_value(&self, gamma: &PropensityParams, x: &[f64], y: f64) -> Result<Response> {
        self.check(&gamma.0)?;
        if !y.is_finite() {
            return Err(Error::InvalidInput("propensity needs a finite outcome".into()));
        }
        Ok(self.response_unchecked(&gamma.0, x, y))
    }

    /// `∇_γ π = -π(1 - π) w`, or zero when the clamp is active.
    pub fn pi_gradient(&self, gamma: &PropensityParams, x: &[f64], y: f64) -> Result<Vec<f64>> {
        let r = self.pi_value(gamma, x, y)?;
        let slope = r.slope();
        Ok(self.features.eval(x, y).into_iter().map(|w| slope * w).collect())
    }

    pub fn describe(&self) -> String {
        self.features.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn const_y() -> PropensityModel {
        PropensityModel::new(FeatureMap::parse("const,y").unwrap())
    }

    #[test]
    fn symmetric_point_is_one_half() {
        let m = const_y();
        let g = PropensityParams::new(vec![0.0, -1.2]).unwrap();
        assert_eq!(m.pi_value(&g, &[], 0.0).unwrap().pi, 0.5);
        let z = PropensityParams::new(vec![0.0, 0.0]).unwrap();
        for y in [-3.0, 0.0, 7.5] {
            assert_eq!(m.pi_value(&z, &[], y).unwrap().pi, 0.5);
        }
    }

    #[test]
    fn value_at_y_one() {
        // 1 / (1 + e^{-1.2}) to 16 digits
        let m = const_y();
        let g = PropensityParams::new(vec![0.0, -1.2]).unwrap();
        let v = m.pi_value(&g, &[], 1.0).unwrap().pi;
        assert!((v - 0.768_524_783_499_017_8).abs() < 1e-15, "{v}");
    }

    #[test]
    fn gradient_examples() {
        let m = const_y();
        let z = PropensityParams::new(vec![0.0, 0.0]).unwrap();
        assert_eq!(m.pi_gradient(&z, &[], 3.0).unwrap(), vec![-0.25, -0.75]);
        let g = PropensityParams::new(vec![0.0, -1.2]).unwrap();
        let d = m.pi_gradient(&g, &[], 0.0).unwrap();
        assert_eq!(d[0], -0.25);
        assert_eq!(d[1], 0.0);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let m = const_y();
        let g = PropensityParams(vec![0.0]);
        assert!(matches!(
            m.pi_value(&g, &[], 0.0),
            Err(Error::DimensionMismatch { expected: 2, got: 1, .. })
        ));
    }

    #[test]
    fn clamp_bounds_extreme_indices() {
        for eta in [-800.0, -40.0, 40.0, 800.0] {
            let r = Response::from_index(eta);
            assert!(r.clamped);
            assert!(r.pi >= PI_CLAMP && r.pi <= 1.0 - PI_CLAMP);
            assert_eq!(r.slope(), 0.0);
        }
        assert!(!Response::from_index(3.0).clamped);
    }

    #[test]
    fn parse_and_display() {
        let f = FeatureMap::parse("2*ln(x1), y, x[2], const").unwrap();
        assert_eq!(f.terms()[0], FeatureTerm::scaled(2.0, Term::LogCovariate(0)));
        assert_eq!(f.terms()[2], FeatureTerm::new(Term::Covariate(1)));
        assert_eq!(f.to_string(), "2*ln(x1),y,x2,const");
        assert_eq!(f.required_covariates(), 2);
        assert!(f.uses_outcome());
        assert!(FeatureMap::parse("z1").is_err());
        assert!(FeatureMap::parse("x0").is_err());
        assert!(FeatureMap::parse("").is_err());
    }
}
