//! Library quantities against direct-summation references on tiny samples.

mod support;

use mnar_gmm_core::gmm::GmmOptions;
use mnar_gmm_core::kselect::{donald_newey_parts, mse_criterion, pi_phi};
use nalgebra::{DMatrix, DVector};
use support::oracle::{self, close, Tiny};
use support::bridge;

const TOL: f64 = 1e-12;

fn instances() -> Vec<Tiny> {
    let mut out = Vec::new();
    for seed in 0..6 {
        out.push(oracle::tiny(seed, 6, 1, 2, "const,y"));
        out.push(oracle::tiny(100 + seed, 8, 1, 3, "const,y"));
        out.push(oracle::tiny(200 + seed, 10, 2, 4, "const,x1,y"));
        out.push(oracle::tiny(300 + seed, 9, 2, 3, "x1,y"));
    }
    out
}

fn assert_matrix(name: &str, got: &DMatrix<f64>, want: &DMatrix<f64>) {
    assert_eq!(got.shape(), want.shape(), "{name} shape");
    for (g, w) in got.iter().zip(want.iter()) {
        assert!(close(*g, *w, TOL), "{name}: {g} vs {w}\n{got}\n{want}");
    }
}

fn assert_rows(name: &str, got: &DMatrix<f64>, want: &[Vec<f64>]) {
    assert_eq!(got.nrows(), want.len(), "{name} rows");
    for (i, row) in want.iter().enumerate() {
        for (l, w) in row.iter().enumerate() {
            assert!(close(got[(i, l)], *w, TOL), "{name}[{i},{l}]: {} vs {w}", got[(i, l)]);
        }
    }
}

fn moment_vector_matches_direct_sum() {
    for s in instances() {
        let system = bridge::system(&s);
        let sample = bridge::sample(&s);
        let prep = system.prepare(&sample).unwrap();
        let got = prep.moment_vector(&s.gamma, s.theta).unwrap();
        let want = oracle::moment_vector(&s);
        for (g, w) in got.iter().zip(&want) {
            assert!(close(*g, *w, TOL), "{g} vs {w}");
        }
        let rows = prep.per_row_moments(&s.gamma, s.theta).unwrap();
        let want_rows: Vec<Vec<f64>> = (0..s.n()).map(|i| oracle::row_moment(&s, i)).collect();
        assert_rows("per-row moments", &rows, &want_rows);
    }
}

fn jacobian_matches_direct_sum() {
    for s in instances() {
        let sample = bridge::sample(&s);
        let got = mnar_gmm_core::inference::b_hat(&bridge::system(&s), &sample, &s.gamma).unwrap();
        assert_matrix("B̂", &got, &oracle::b_hat(&s));
    }
}

fn moment_covariance_matches_direct_sum() {
    for s in instances() {
        let sample = bridge::sample(&s);
        let w = mnar_gmm_core::gmm::best_weighting(&bridge::system(&s), &sample, &s.gamma, s.theta).unwrap();
        assert_matrix("D̂", &w.d_hat, &oracle::d_hat(&s));
    }
}

fn step1_objective_matches_direct_sum() {
    for s in instances() {
        let system = bridge::system(&s);
        let sample = bridge::sample(&s);
        let prep = system.prepare(&sample).unwrap();
        let k = s.k;
        let gram_inv = prep.gram().lu().try_inverse().unwrap();
        let mut w0 = DMatrix::zeros(k + 1, k + 1);
        w0.view_mut((0, 0), (k, k)).copy_from(&gram_inv);
        w0[(k, k)] = 1.0;
        let got = prep.objective(&s.gamma, s.theta, &w0).unwrap();
        let want = oracle::step1_objective(&s, &s.gamma, s.theta);
        assert!(close(got, want, 1e-10), "{got} vs {want}");
    }
}

fn higher_order_mse_parts_match_direct_sum() {
    for s in instances() {
        let system = bridge::system(&s);
        let sample = bridge::sample(&s);
        let prep = system.prepare(&sample).unwrap();
        let got = donald_newey_parts(&prep, &s.gamma).unwrap();
        let want = oracle::donald_newey(&s);
        for (g, w) in got.rho.iter().zip(&want.rho) {
            assert!(close(*g, *w, TOL), "ρ: {g} vs {w}");
        }
        assert_rows("∇ρ", &got.grad_rho, &want.grad_rho);
        assert_matrix("Υ̂", &got.upsilon, &want.upsilon);
        assert_matrix("Γ̂", &got.gamma_mat, &want.gamma_mat);
        assert_matrix("Ω̂", &got.omega, &want.omega);
        assert_rows("d̃", &got.d_tilde, &want.d_tilde);
        assert_rows("η̃", &got.eta_tilde, &want.eta_tilde);
        assert_rows("D*", &got.d_star, &want.d_star);
        for (g, w) in got.xi.iter().zip(&want.xi) {
            assert!(close(*g, *w, TOL), "ξ: {g} vs {w}");
        }
        for j in 0..s.p() {
            let mut e = vec![0.0; s.p()];
            e[j] = 1.0;
            let (pg, fg) = pi_phi(&got, &DVector::from_vec(e.clone()));
            let (pw, fw) = oracle::pi_phi(&want, &e);
            assert!(close(pg, pw, TOL), "Π̂: {pg} vs {pw}");
            assert!(close(fg, fw, TOL), "Φ̂: {fg} vs {fw}");
        }
        let (sg, sw) = (mse_criterion(&got), oracle::mse_criterion(&want));
        assert!(close(sg, sw, TOL), "S: {sg} vs {sw}");
    }
}

fn phi_penalty_reduces_to_omega_inverse() {
    for s in instances() {
        let system = bridge::system(&s);
        let sample = bridge::sample(&s);
        let parts = donald_newey_parts(&system.prepare(&sample).unwrap(), &s.gamma).unwrap();
        let t = DVector::from_fn(s.p(), |i, _| 0.3 + i as f64);
        let a = &parts.omega_inv * &t;
        let penalty = (a.transpose() * parts.gamma_mat.transpose() * &parts.upsilon_inv * &parts.gamma_mat * &a)[(0, 0)];
        let direct = (t.transpose() * &parts.omega_inv * &t)[(0, 0)];
        assert!(close(penalty, direct, 1e-9), "{penalty} vs {direct}");
    }
}

fn step1_minimizer_matches_grid_search() {
    let step = 0.01;
    for seed in [11, 12, 13] {
        let s = oracle::tiny(seed, 10, 1, 3, "const,y");
        let sample = bridge::sample(&s);
        let fit = bridge::system(&s).prepare(&sample).unwrap().step1(&GmmOptions::default()).unwrap();
        let (g_grid, f_grid) = oracle::grid_search_step1(&s, -4.0, 4.0, step);
        let f_lib = oracle::step1_objective(&s, &fit.gamma, fit.theta);
        // the continuous minimum can only undercut the grid
        assert!(f_lib <= f_grid + 1e-12, "seed {seed}: {f_lib} > grid {f_grid}");
        for (a, b) in fit.gamma.iter().zip(&g_grid) {
            assert!((a - b).abs() <= step, "seed {seed}: γ {:?} vs grid {:?}", fit.gamma, g_grid);
        }
    }
}

support::registry! {
    moment_vector_matches_direct_sum: "moment vector",
    jacobian_matches_direct_sum: "jacobian",
    moment_covariance_matches_direct_sum: "moment covariance",
    step1_objective_matches_direct_sum: "step-1 objective",
    higher_order_mse_parts_match_direct_sum: "higher-order MSE parts",
    phi_penalty_reduces_to_omega_inverse: "Φ̂ penalty",
    step1_minimizer_matches_grid_search: "step-1 grid search",
}
