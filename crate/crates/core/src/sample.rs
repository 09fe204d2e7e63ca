//! Observed data `{(tᵢ, xᵢ, yᵢ)}` and the target functional `U(Z)`.

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::{Error, Result};

/// `N` rows of response indicator, covariates (row-major, `r` columns) and
/// outcome. Outcomes of non-respondents are stored as opaque placeholders
/// that no accessor ever returns.
#[derive(Debug, Clone)]
pub struct ObservedSample {
    t: Vec<bool>,
    x: Vec<f64>,
    r: usize,
    y: Vec<f64>,
}

impl ObservedSample {
    /// `y[i]` must be `Some` and finite wherever `t[i]` is true; values for
    /// non-respondents are discarded.
    pub fn new(t: Vec<bool>, x: Vec<f64>, r: usize, y: Vec<Option<f64>>) -> Result<Self> {
        let raw = y
            .iter()
            .zip(&t)
            .enumerate()
            .map(|(i, (v, &ti))| match (ti, v) {
                (true, Some(v)) => Ok(*v),
                (true, None) => Err(Error::InvalidInput(alloc::format!(
                    "row {i}: outcome missing for a respondent"
                ))),
                (false, _) => Ok(f64::NAN),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::with_placeholders(t, x, r, raw)
    }

    /// Like [`ObservedSample::new`] but keeps whatever placeholder values the
    /// caller put in the non-respondent slots of `y`.
    pub fn with_placeholders(t: Vec<bool>, x: Vec<f64>, r: usize, y: Vec<f64>) -> Result<Self> {
        let n = t.len();
        if r == 0 {
            return Err(Error::InvalidInput("at least one covariate column is required".into()));
        }
        if x.len() != n * r {
            return Err(Error::DimensionMismatch { what: "covariate matrix", expected: n * r, got: x.len() });
        }
        if y.len() != n {
            return Err(Error::DimensionMismatch { what: "outcome vector", expected: n, got: y.len() });
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(alloc::format!("row {}: non-finite covariate", i / r)));
        }
        if let Some(i) = (0..n).find(|&i| t[i] && !y[i].is_finite()) {
            return Err(Error::InvalidInput(alloc::format!("row {i}: non-finite outcome")));
        }
        Ok(Self { t, x, r, y })
    }

    pub fn n(&self) -> usize {
        self.t.len()
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn n_observed(&self) -> usize {
        self.t.iter().filter(|&&t| t).count()
    }

    pub fn missing_rate(&self) -> f64 {
        if self.n() == 0 {
            return 0.0;
        }
        1.0 - self.n_observed() as f64 / self.n() as f64
    }

    pub fn responded(&self, i: usize) -> bool {
        self.t[i]
    }

    pub fn indicators(&self) -> &[bool] {
        &self.t
    }

    /// Row-major `N × r` covariate matrix.
    pub fn covariates(&self) -> &[f64] {
        &self.x
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.r..(i + 1) * self.r]
    }

    pub fn outcome(&self, i: usize) -> Option<f64> {
        self.t[i].then(|| self.y[i])
    }

    /// `(i, xᵢ, yᵢ)` over respondents only.
    pub fn respondents(&self) -> impl Iterator<Item = (usize, &[f64], f64)> + '_ {
        (0..self.n()).filter(|&i| self.t[i]).map(move |i| (i, self.row(i), self.y[i]))
    }

    /// Rows reordered so that row `k` of the result is row `order[k]` here.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.n() {
            return Err(Error::DimensionMismatch { what: "permutation", expected: self.n(), got: order.len() });
        }
        let t = order.iter().map(|&i| self.t[i]).collect();
        let y = order.iter().map(|&i| self.y[i]).collect();
        let x = order.iter().flat_map(|&i| self.row(i).iter().copied()).collect();
        Self::with_placeholders(t, x, self.r, y)
    }

    /// Copy with every covariate passed through `f(column, value)`.
    pub fn map_covariates(&self, f: impl Fn(usize, f64) -> f64) -> Result<Self> {
        let x = self.x.iter().enumerate().map(|(k, &v)| f(k % self.r, v)).collect();
        Self::with_placeholders(self.t.clone(), x, self.r, self.y.clone())
    }
}

/// Equality of what is observed; placeholders are ignored.
impl PartialEq for ObservedSample {
    fn eq(&self, other: &Self) -> bool {
        self.r == other.r
            && self.t == other.t
            && self.x == other.x
            && (0..self.n()).all(|i| self.outcome(i) == other.outcome(i))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TargetSource {
    Outcome,
    /// Zero-based covariate column.
    Covariate(usize),
}

/// `U(Z) = shift + scale · source(Z)`; the default is `U(Z) = Y`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetFunctional {
    pub source: TargetSource,
    pub scale: f64,
    pub shift: f64,
}

impl Default for TargetFunctional {
    fn default() -> Self {
        Self { source: TargetSource::Outcome, scale: 1.0, shift: 0.0 }
    }
}

impl TargetFunctional {
    pub fn affine(self, scale: f64, shift: f64) -> Self {
        Self { scale: self.scale * scale, shift: self.shift * scale + shift, ..self }
    }

    #[inline]
    pub fn eval(&self, x: &[f64], y: f64) -> f64 {
        let v = match self.source {
            TargetSource::Outcome => y,
            TargetSource::Covariate(j) => x[j],
        };
        self.shift + self.scale * v
    }
}

impl FromStr for TargetFunctional {
    type Err = Error;

    /// `y` or a one-based covariate name such as `x2`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let source = if s == "y" {
            TargetSource::Outcome
        } else {
            match s.strip_prefix('x').and_then(|d| d.parse::<usize>().ok()) {
                Some(j) if j >= 1 => TargetSource::Covariate(j - 1),
                _ => return Err(Error::InvalidInput(alloc::format!("unknown target column `{s}`"))),
            }
        };
        Ok(Self { source, ..Self::default() })
    }
}

impl fmt::Display for TargetFunctional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.source {
            TargetSource::Outcome => f.write_str("y"),
            TargetSource::Covariate(j) => write!(f, "x{}", j + 1),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn respondent_without_outcome_is_rejected() {
        let err = ObservedSample::new(vec![true, true], vec![0.0, 1.0], 1, vec![Some(1.0), None]);
        assert!(matches!(err, Err(Error::InvalidInput(m)) if m.contains("row 1")));
    }

    #[test]
    fn nonrespondent_outcome_is_hidden() {
        let s = ObservedSample::new(vec![true, false], vec![0.0, 1.0], 1, vec![Some(2.0), Some(9.0)]).unwrap();
        assert_eq!(s.outcome(0), Some(2.0));
        assert_eq!(s.outcome(1), None);
        assert_eq!(s.n_observed(), 1);
        assert_eq!(s.missing_rate(), 0.5);
        let rows: Vec<_> = s.respondents().collect();
        assert_eq!(rows.len(), 1);
    }

    #[test]
    fn target_parsing() {
        let u: TargetFunctional = "x2".parse().unwrap();
        assert_eq!(u.eval(&[1.0, 4.0], 0.0), 4.0);
        let u: TargetFunctional = "y".parse().unwrap();
        assert_eq!(u.affine(2.0, 1.0).eval(&[], 3.0), 7.0);
        assert!("z".parse::<TargetFunctional>().is_err());
    }
}
