use mnar_gmm_core::dgp::{draw_full, efficiency_bound, stream_rng, OutcomeLaw, Population, Scenario};
use mnar_gmm_core::montecarlo::{summarize, Method};
use mnar_gmm_core::propensity::PropensityModel;
use mnar_gmm_core::sample::TargetFunctional;
use rand_chacha::ChaCha8Rng;

#[test]
fn complete_data_means_match_targets() {
    for sc in Scenario::ALL {
        let n = 400_000;
        let draw = draw_full(&sc, n, &mut stream_rng(77, 3)).unwrap();
        let mean = draw.y_full.iter().sum::<f64>() / n as f64;
        let var = draw.y_full.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!((mean - sc.theta0()).abs() < 3.0 * se, "{sc}: mean {mean}, θ₀ {}, se {se}", sc.theta0());
    }
}

#[test]
fn every_scenario_has_partial_response() {
    for sc in Scenario::ALL {
        let draw = draw_full(&sc, 5_000, &mut stream_rng(1, 0)).unwrap();
        let rate = draw.sample.missing_rate();
        assert!(rate > 0.0 && rate < 1.0, "{sc}: {rate}");
    }
}

/// Scenario I with the target moved by a constant.
struct Shifted(f64);

impl Population for Shifted {
    fn r(&self) -> usize {
        1
    }
    fn model(&self) -> PropensityModel {
        Scenario::I.model()
    }
    fn gamma0(&self) -> Vec<f64> {
        Scenario::I.gamma0().to_vec()
    }
    fn theta0(&self) -> f64 {
        1.0 + self.0
    }
    fn target(&self) -> TargetFunctional {
        TargetFunctional::default().affine(1.0, self.0)
    }
    fn draw_covariates(&self, rng: &mut ChaCha8Rng, x: &mut [f64]) {
        Scenario::I.draw_covariates(rng, x)
    }
    fn outcome_law(&self, x: &[f64]) -> OutcomeLaw {
        Scenario::I.outcome_law(x)
    }
}

#[test]
fn efficiency_bound_ignores_a_shift_of_the_target() {
    let base = efficiency_bound(&Scenario::I, 20_000, 4).unwrap();
    let moved = efficiency_bound(&Shifted(3.5), 20_000, 4).unwrap();
    assert!((base.v_theta - moved.v_theta).abs() < 1e-8 * base.v_theta, "{} vs {}", base.v_theta, moved.v_theta);
    assert!((&base.v_gamma - &moved.v_gamma).norm() < 1e-10 * base.v_gamma.norm());
}

#[test]
fn exact_estimator_has_no_bias_and_no_coverage() {
    let values = vec![(2.0, None); 25];
    let s = summarize(Method::Gmm, 2.0, &values, 0);
    assert_eq!((s.bias, s.stdev, s.mse), (0.0, 0.0, 0.0));
    assert_eq!(s.cp, None);
    assert!(!s.flagged);
}

#[test]
fn summary_decomposes_mse() {
    let values: Vec<(f64, Option<bool>)> = (0..40).map(|i| (1.0 + 0.01 * (i as f64 - 13.0), Some(i % 4 != 0))).collect();
    let s = summarize(Method::Mar, 1.0, &values, 3);
    assert!((s.mse - (s.bias * s.bias + s.stdev * s.stdev)).abs() < 1e-12);
    assert_eq!(s.cp, Some(0.75));
    assert!(s.flagged, "3 failures out of 43 exceed the 5% flag");
}
