//! Converts oracle instances into library inputs.

#![allow(dead_code)]

use mnar_gmm_core::basis::BasisSpec;
use mnar_gmm_core::gmm::MomentSystem;
use mnar_gmm_core::propensity::{FeatureMap, PropensityModel};
use mnar_gmm_core::sample::{ObservedSample, TargetFunctional};

use super::oracle::Tiny;

pub fn sample(s: &Tiny) -> ObservedSample {
    let x: Vec<f64> = s.x.iter().flatten().copied().collect();
    let y = s.t.iter().zip(&s.y).map(|(&t, &y)| t.then_some(y)).collect();
    ObservedSample::new(s.t.clone(), x, s.r(), y).unwrap()
}

pub fn model(s: &Tiny) -> PropensityModel {
    PropensityModel::new(FeatureMap::parse(s.features).unwrap())
}

/// Unstandardized power series so the oracle's raw monomials line up.
pub fn system(s: &Tiny) -> MomentSystem {
    MomentSystem::sieve(BasisSpec::power_series(s.r(), s.k).unwrap(), model(s), TargetFunctional::default()).unwrap()
}
