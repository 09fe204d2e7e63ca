//! Formula-by-formula reference implementations for small samples.
//!
//! Everything is written as plain loops over rows with hand-coded monomials
//! and features, sharing nothing with the library beyond `nalgebra` for the
//! final matrix inverses (LU here, Cholesky or eigen in the library).

#![allow(dead_code, clippy::needless_range_loop)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A tiny sample with raw rows, outcome placeholders zero where `t = 0`.
#[derive(Debug, Clone)]
pub struct Tiny {
    pub t: Vec<bool>,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    /// Feature spec string understood by the library.
    pub features: &'static str,
    pub gamma: Vec<f64>,
    pub theta: f64,
    pub k: usize,
}

impl Tiny {
    pub fn n(&self) -> usize {
        self.t.len()
    }

    pub fn r(&self) -> usize {
        self.x[0].len()
    }

    pub fn p(&self) -> usize {
        self.gamma.len()
    }

    pub fn w(&self, i: usize) -> Vec<f64> {
        feature_values(self.features, &self.x[i], self.y[i])
    }

    pub fn u(&self, i: usize) -> Vec<f64> {
        monomials(&self.x[i], self.k)
    }

    pub fn pi(&self, i: usize) -> f64 {
        self.pi_at(&self.gamma, i)
    }

    pub fn pi_at(&self, gamma: &[f64], i: usize) -> f64 {
        let eta: f64 = self.w(i).iter().zip(gamma).map(|(a, b)| a * b).sum();
        (1.0 / (1.0 + eta.exp())).clamp(1e-6, 1.0 - 1e-6)
    }
}

pub fn feature_values(spec: &str, x: &[f64], y: f64) -> Vec<f64> {
    match spec {
        "const,y" => vec![1.0, y],
        "x1,y" => vec![x[0], y],
        "const,x1,y" => vec![1.0, x[0], y],
        "const,x2,y" => vec![1.0, x[1], y],
        other => panic!("oracle has no feature map `{other}`"),
    }
}

/// Graded monomials: `1, x, x², …` for one covariate; `1, x₁, x₂, x₁², x₁x₂,
/// x₂²` for two.
pub fn monomials(x: &[f64], k: usize) -> Vec<f64> {
    let all = match x.len() {
        1 => (0..k).map(|d| x[0].powi(d as i32)).collect::<Vec<_>>(),
        2 => {
            let (a, b) = (x[0], x[1]);
            vec![1.0, a, b, a * a, a * b, b * b, a * a * a, a * a * b, a * b * b, b * b * b]
        }
        r => panic!("oracle monomials only for r <= 2, got {r}"),
    };
    all[..k].to_vec()
}

/// A reproducible tiny sample: `n` rows, `r` covariates, at least two
/// respondents and one non-respondent.
pub fn tiny(seed: u64, n: usize, r: usize, k: usize, features: &'static str) -> Tiny {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..r).map(|_| rng.random_range(0.2..2.0)).collect()).collect();
        let t: Vec<bool> = (0..n).map(|_| rng.random_bool(0.6)).collect();
        let resp = t.iter().filter(|&&v| v).count();
        if resp < 2 || resp == n {
            continue;
        }
        let y: Vec<f64> = t.iter().map(|&ti| if ti { rng.random_range(-1.5..2.5) } else { 0.0 }).collect();
        let p = feature_values(features, &x[0], 0.0).len();
        let gamma: Vec<f64> = (0..p).map(|_| rng.random_range(-0.8..0.8)).collect();
        let theta = rng.random_range(-1.0..1.0);
        return Tiny { t, x, y, features, gamma, theta, k };
    }
}

/// Per-row moment `g_i = (u_i (1 − T_i/π_i), θ − T_i Y_i/π_i)`.
pub fn row_moment(s: &Tiny, i: usize) -> Vec<f64> {
    let ti = if s.t[i] { 1.0 } else { 0.0 };
    let pi = s.pi(i);
    let mut g: Vec<f64> = s.u(i).iter().map(|u| u * (1.0 - ti / pi)).collect();
    g.push(s.theta - ti * s.y[i] / pi);
    g
}

pub fn moment_vector(s: &Tiny) -> Vec<f64> {
    let mut m = vec![0.0; s.k + 1];
    for i in 0..s.n() {
        for (acc, g) in m.iter_mut().zip(row_moment(s, i)) {
            *acc += g;
        }
    }
    m.iter().map(|v| v / s.n() as f64).collect()
}

/// `(1/N) Σ g_i g_iᵀ`.
pub fn d_hat(s: &Tiny) -> DMatrix<f64> {
    let q = s.k + 1;
    let mut d = DMatrix::zeros(q, q);
    for i in 0..s.n() {
        let g = row_moment(s, i);
        for a in 0..q {
            for b in 0..q {
                d[(a, b)] += g[a] * g[b];
            }
        }
    }
    d / s.n() as f64
}

/// `∂(1/π)/∂γ_l = exp(wᵀγ) w_l`, zero where the clamp binds.
fn inv_pi_grad(s: &Tiny, i: usize) -> Vec<f64> {
    let w = s.w(i);
    let eta: f64 = w.iter().zip(&s.gamma).map(|(a, b)| a * b).sum();
    let raw = 1.0 / (1.0 + eta.exp());
    if !(1e-6..=1.0 - 1e-6).contains(&raw) {
        return vec![0.0; w.len()];
    }
    w.iter().map(|wl| eta.exp() * wl).collect()
}

/// Sample Jacobian of the moment vector in `(γ, θ)`.
pub fn b_hat(s: &Tiny) -> DMatrix<f64> {
    let (k, p) = (s.k, s.p());
    let mut b = DMatrix::zeros(k + 1, p + 1);
    for i in 0..s.n() {
        if !s.t[i] {
            continue;
        }
        let dg = inv_pi_grad(s, i);
        let u = s.u(i);
        for l in 0..p {
            for a in 0..k {
                b[(a, l)] -= u[a] * dg[l];
            }
            b[(k, l)] -= s.y[i] * dg[l];
        }
    }
    b /= s.n() as f64;
    b[(k, p)] = 1.0;
    b
}

/// The higher-order MSE ingredients at `s.gamma`.
#[derive(Debug, Clone)]
pub struct DnOracle {
    pub rho: Vec<f64>,
    pub grad_rho: Vec<Vec<f64>>,
    pub upsilon: DMatrix<f64>,
    pub gamma_mat: DMatrix<f64>,
    pub omega: DMatrix<f64>,
    pub d_tilde: Vec<Vec<f64>>,
    pub eta_tilde: Vec<Vec<f64>>,
    pub xi: Vec<f64>,
    pub d_star: Vec<Vec<f64>>,
    pub gram: DMatrix<f64>,
}

fn inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().lu().try_inverse().expect("oracle matrix is invertible")
}

pub fn donald_newey(s: &Tiny) -> DnOracle {
    let (n, k, p) = (s.n(), s.k, s.p());
    let nf = n as f64;
    let mut rho = vec![0.0; n];
    let mut grad_rho = vec![vec![0.0; p]; n];
    for i in 0..n {
        let ti = if s.t[i] { 1.0 } else { 0.0 };
        rho[i] = 1.0 - ti / s.pi(i);
        let dg = inv_pi_grad(s, i);
        for l in 0..p {
            grad_rho[i][l] = -ti * dg[l];
        }
    }
    let mut upsilon = DMatrix::zeros(k, k);
    let mut gram = DMatrix::zeros(k, k);
    let mut gamma_mat = DMatrix::zeros(k, p);
    for i in 0..n {
        let u = s.u(i);
        for a in 0..k {
            for b in 0..k {
                upsilon[(a, b)] += rho[i] * rho[i] * u[a] * u[b] / nf;
                gram[(a, b)] += u[a] * u[b] / nf;
            }
            for l in 0..p {
                gamma_mat[(a, l)] += u[a] * grad_rho[i][l] / nf;
            }
        }
    }
    let ups_inv = inverse(&upsilon);
    let gram_inv = inverse(&gram);
    let omega = gamma_mat.transpose() * &ups_inv * &gamma_mat;
    let mut d_tilde = Vec::with_capacity(n);
    let mut eta_tilde = Vec::with_capacity(n);
    let mut d_star = Vec::with_capacity(n);
    let mut xi = Vec::with_capacity(n);
    for i in 0..n {
        let u = DVector::from_vec(s.u(i));
        let dt = gamma_mat.transpose() * &gram_inv * &u;
        let ds = gamma_mat.transpose() * &ups_inv * &u;
        eta_tilde.push((0..p).map(|l| grad_rho[i][l] - dt[l]).collect());
        d_tilde.push(dt.iter().copied().collect());
        d_star.push(ds.iter().copied().collect());
        xi.push((u.transpose() * &ups_inv * &u)[(0, 0)] / nf);
    }
    DnOracle { rho, grad_rho, upsilon, gamma_mat, omega, d_tilde, eta_tilde, xi, d_star, gram }
}

/// `(Π̂(t), Φ̂(t))`.
pub fn pi_phi(o: &DnOracle, t: &[f64]) -> (f64, f64) {
    let p = t.len();
    let om_inv = inverse(&o.omega);
    let a = om_inv.transpose() * DVector::from_column_slice(t);
    let mut pi_hat = 0.0;
    let mut phi = 0.0;
    for i in 0..o.rho.len() {
        let dot_eta: f64 = (0..p).map(|l| a[l] * o.eta_tilde[i][l]).sum();
        pi_hat += o.xi[i] * o.rho[i] * dot_eta;
        let inner: f64 = (0..p).map(|l| a[l] * (o.d_star[i][l] * o.rho[i] * o.rho[i] - o.grad_rho[i][l])).sum();
        phi += o.xi[i] * inner * inner;
    }
    let ups_inv = inverse(&o.upsilon);
    let last = (a.transpose() * o.gamma_mat.transpose() * ups_inv * &o.gamma_mat * &a)[(0, 0)];
    (pi_hat, phi - last)
}

pub fn mse_criterion(o: &DnOracle) -> f64 {
    let p = o.omega.nrows();
    let n = o.rho.len() as f64;
    (0..p)
        .map(|j| {
            let mut e = vec![0.0; p];
            e[j] = 1.0;
            let (pi_hat, phi) = pi_phi(o, &e);
            pi_hat * pi_hat / n + phi
        })
        .sum()
}

/// Step-I objective `aᵀ Gram⁻¹ a + (θ − c)²` at `(γ, θ)`.
pub fn step1_objective(s: &Tiny, gamma: &[f64], theta: f64) -> f64 {
    let (n, k) = (s.n(), s.k);
    let mut a: DVector<f64> = DVector::zeros(k);
    let mut c = 0.0;
    let mut gram = DMatrix::zeros(k, k);
    for i in 0..n {
        let ti = if s.t[i] { 1.0 } else { 0.0 };
        let pi = s.pi_at(gamma, i);
        let u = s.u(i);
        for r in 0..k {
            a[r] += u[r] * (1.0 - ti / pi) / n as f64;
            for q in 0..k {
                gram[(r, q)] += u[r] * u[q] / n as f64;
            }
        }
        c += ti * s.y[i] / pi / n as f64;
    }
    (a.transpose() * inverse(&gram) * &a)[(0, 0)] + (theta - c).powi(2)
}

/// Exhaustive search of the Step-I objective over a square grid in `γ`
/// with `θ` profiled out (its optimum is `θ = c(γ)`).
pub fn grid_search_step1(s: &Tiny, lo: f64, hi: f64, step: f64) -> (Vec<f64>, f64) {
    assert_eq!(s.p(), 2, "grid search is two-dimensional");
    let (n, k) = (s.n(), s.k);
    let mut gram = DMatrix::zeros(k, k);
    let us: Vec<Vec<f64>> = (0..n).map(|i| s.u(i)).collect();
    for u in &us {
        for r in 0..k {
            for q in 0..k {
                gram[(r, q)] += u[r] * u[q] / n as f64;
            }
        }
    }
    let gram_inv = inverse(&gram);
    let ws: Vec<Vec<f64>> = (0..n).map(|i| s.w(i)).collect();
    let steps = ((hi - lo) / step).round() as usize;
    let mut best = (vec![0.0, 0.0], f64::INFINITY);
    let mut a: DVector<f64> = DVector::zeros(k);
    for i0 in 0..=steps {
        for i1 in 0..=steps {
            let g = [lo + i0 as f64 * step, lo + i1 as f64 * step];
            a.fill(0.0);
            for i in 0..n {
                if s.t[i] {
                    let eta = ws[i][0] * g[0] + ws[i][1] * g[1];
                    let pi = (1.0 / (1.0 + eta.exp())).clamp(1e-6, 1.0 - 1e-6);
                    for r in 0..k {
                        a[r] += us[i][r] * (1.0 - 1.0 / pi);
                    }
                } else {
                    for r in 0..k {
                        a[r] += us[i][r];
                    }
                }
            }
            a /= n as f64;
            let f = (a.transpose() * &gram_inv * &a)[(0, 0)];
            if f < best.1 {
                best = (g.to_vec(), f);
            }
        }
    }
    best
}

/// `|a − b| ≤ tol · max(1, |b|)`.
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn max_abs_diff_rows(rows: &[Vec<f64>], m: &DMatrix<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, row) in rows.iter().enumerate() {
        for (l, v) in row.iter().enumerate() {
            worst = worst.max((v - m[(i, l)]).abs());
        }
    }
    worst
}
