//! Quasi-Newton minimization and damped Newton root finding for the small
//! (`p ≤ 10`) parameter vectors used here.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

#[cfg(not(any(feature = "std", test)))]
#[allow(unused_imports)] // std inherent float methods win whenever std is linked
use num_traits::Float;

#[derive(Debug, Clone)]
pub struct MinimizeOptions {
    /// Converged once `‖∇f‖ < grad_tol`.
    pub grad_tol: f64,
    pub max_iter: usize,
    /// A stalled line search still counts as converged below this gradient norm.
    pub stall_grad_tol: f64,
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        Self { grad_tol: 1e-9, max_iter: 500, stall_grad_tol: 1e-6, lower: None, upper: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    GradientTolerance,
    Stalled,
    MaxIterations,
    NonFiniteStart,
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub status: Status,
    pub converged: bool,
}

fn project(x: &mut [f64], opts: &MinimizeOptions) {
    if let Some(lo) = &opts.lower {
        for (v, l) in x.iter_mut().zip(lo) {
            *v = v.max(*l);
        }
    }
    if let Some(hi) = &opts.upper {
        for (v, h) in x.iter_mut().zip(hi) {
            *v = v.min(*h);
        }
    }
}

/// BFGS with Armijo backtracking. `f` writes the gradient into its second
/// argument and returns the value; `+∞` marks an infeasible point.
/// `h0` optionally seeds the inverse-Hessian approximation.
pub fn bfgs<F>(mut f: F, x0: &[f64], h0: Option<DMatrix<f64>>, opts: &MinimizeOptions) -> Minimum
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    project(&mut x, opts);
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g);
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Minimum {
            x,
            f: f64::INFINITY,
            grad_norm: f64::INFINITY,
            iterations: 0,
            status: Status::NonFiniteStart,
            converged: false,
        };
    }
    let seeded = h0.is_some();
    let mut h = h0.unwrap_or_else(|| DMatrix::identity(n, n));
    let mut scaled = seeded;
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();

    let mut iter = 0;
    let mut status = Status::MaxIterations;
    let mut fresh_restart = !seeded;
    while iter < opts.max_iter {
        if norm(&g) < opts.grad_tol {
            status = Status::GradientTolerance;
            break;
        }
        iter += 1;
        let gv = DVector::from_column_slice(&g);
        let mut d = -(&h * &gv);
        if !(d.dot(&gv) < 0.0) {
            h = DMatrix::identity(n, n);
            d = -gv.clone();
            fresh_restart = true;
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            for i in 0..n {
                x_new[i] = x[i] + alpha * d[i];
            }
            project(&mut x_new, opts);
            let step_len: f64 = x_new.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            if step_len == 0.0 {
                break;
            }
            let f_new = f(&x_new, &mut g_new);
            let decrease: f64 = g.iter().zip(x_new.iter().zip(&x)).map(|(gi, (a, b))| gi * (a - b)).sum();
            if f_new.is_finite() && f_new <= fx + 1e-4 * decrease.min(0.0) && f_new <= fx {
                accepted = Some(f_new);
                break;
            }
            alpha *= 0.5;
        }
        let Some(f_new) = accepted else {
            if !fresh_restart {
                h = DMatrix::identity(n, n);
                scaled = false;
                fresh_restart = true;
                continue;
            }
            status = Status::Stalled;
            break;
        };
        fresh_restart = false;
        let s = DVector::from_iterator(n, x_new.iter().zip(&x).map(|(a, b)| a - b));
        let y = DVector::from_iterator(n, g_new.iter().zip(&g).map(|(a, b)| a - b));
        let sy = s.dot(&y);
        if sy > 1e-14 * s.norm() * y.norm() && sy > 0.0 {
            if !scaled {
                h = DMatrix::identity(n, n) * (sy / y.dot(&y));
                scaled = true;
            }
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            // H ← H - ρ(H y sᵀ + s yᵀ H) + (ρ² yᵀHy + ρ) s sᵀ
            h -= (&hy * s.transpose() + &s * hy.transpose()) * rho;
            h += (&s * s.transpose()) * (rho * rho * yhy + rho);
        }
        x.copy_from_slice(&x_new);
        g.copy_from_slice(&g_new);
        fx = f_new;
    }
    let grad_norm = norm(&g);
    let converged = match status {
        Status::GradientTolerance => true,
        Status::Stalled => grad_norm < opts.stall_grad_tol,
        _ => grad_norm < opts.grad_tol,
    };
    Minimum { x, f: fx, grad_norm, iterations: iter, status, converged }
}

/// Central-difference Jacobian of `f: ℝⁿ → ℝᵐ`. Returns `None` if any
/// evaluation fails.
pub fn numeric_jacobian<F>(mut f: F, x: &[f64], rel_step: f64) -> Option<DMatrix<f64>>
where
    F: FnMut(&[f64]) -> Option<Vec<f64>>,
{
    let n = x.len();
    let mut xp = x.to_vec();
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    for j in 0..n {
        let h = rel_step * x[j].abs().max(1.0);
        xp[j] = x[j] + h;
        let fp = f(&xp)?;
        xp[j] = x[j] - h;
        let fm = f(&xp)?;
        xp[j] = x[j];
        cols.push(fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * h)).collect());
    }
    let m = cols.first().map_or(0, Vec::len);
    Some(DMatrix::from_fn(m, n, |i, j| cols[j][i]))
}

#[derive(Debug, Clone)]
pub struct RootOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub fd_step: f64,
}

impl Default for RootOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 100, fd_step: 1e-6 }
    }
}

#[derive(Debug, Clone)]
pub struct Root {
    pub x: Vec<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Damped Newton iteration on `F(x) = 0` with a finite-difference Jacobian
/// and backtracking on `‖F‖`.
pub fn newton_root<F>(mut f: F, x0: &[f64], opts: &RootOptions) -> Root
where
    F: FnMut(&[f64]) -> Option<Vec<f64>>,
{
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let mut x = x0.to_vec();
    let Some(mut fx) = f(&x) else {
        return Root { x, residual_norm: f64::INFINITY, iterations: 0, converged: false };
    };
    let mut r = norm(&fx);
    let mut iter = 0;
    while iter < opts.max_iter && r >= opts.tol {
        iter += 1;
        let Some(jac) = numeric_jacobian(&mut f, &x, opts.fd_step) else { break };
        let rhs = -DVector::from_column_slice(&fx);
        let step = match jac.clone().lu().solve(&rhs) {
            Some(s) if s.iter().all(|v| v.is_finite()) => s,
            _ => match jac.svd(true, true).solve(&rhs, 1e-12) {
                Ok(s) => s,
                Err(_) => break,
            },
        };
        let mut lambda = 1.0;
        let mut moved = false;
        while lambda > 1e-10 {
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, s)| a + lambda * s).collect();
            if let Some(ft) = f(&trial) {
                let rt = norm(&ft);
                if rt.is_finite() && rt < (1.0 - 1e-4 * lambda) * r {
                    x = trial;
                    fx = ft;
                    r = rt;
                    moved = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !moved {
            break;
        }
    }
    Root { x, residual_norm: r, iterations: iter, converged: r < opts.tol }
}
