//! BFGS maximiser with Armijo backtracking.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub struct OptimOptions {
    pub max_iter: usize,
    /// Stop when the largest gradient component falls below this.
    pub grad_tol: f64,
}

impl Default for OptimOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            grad_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimStatus {
    Converged,
    MaxIterations,
    /// No step along the search direction improved the objective.
    Stalled,
}

#[derive(Debug, Clone)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub status: OptimStatus,
    /// Objective value after each accepted step, starting at `x0`.
    pub trace: Vec<f64>,
}

fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Maximises `f`, which returns the value and gradient at a point. A value
/// of `-inf` marks an infeasible point. `inv_hessian0`, when given, is an
/// approximation to the inverse of the negative Hessian at `x0`.
pub fn maximize<F>(f: F, x0: &[f64], inv_hessian0: Option<DMatrix<f64>>, opts: &OptimOptions) -> OptimResult
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    const ARMIJO_C: f64 = 1e-4;
    let k = x0.len();
    let mut x = DVector::from_column_slice(x0);
    let (v0, g0) = f(x0);
    let mut value = v0;
    let mut grad = DVector::from_vec(g0);
    let mut h = inv_hessian0.unwrap_or_else(|| DMatrix::identity(k, k));
    let mut trace = vec![value];
    let mut status = OptimStatus::MaxIterations;
    let mut iterations = 0;
    let mut reset = false;

    while iterations < opts.max_iter {
        if value.is_finite() && max_abs(&grad) < opts.grad_tol {
            status = OptimStatus::Converged;
            break;
        }
        let mut dir = &h * &grad;
        let mut slope = grad.dot(&dir);
        if slope.is_nan() || slope <= 0.0 {
            h = DMatrix::identity(k, k);
            dir = grad.clone();
            slope = grad.dot(&dir);
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial = &x + &dir * step;
            let (tv, tg) = f(trial.as_slice());
            if tv.is_finite() && tv >= value + ARMIJO_C * step * slope {
                accepted = Some((trial, tv, DVector::from_vec(tg)));
                break;
            }
            step *= 0.5;
        }

        let Some((x_new, v_new, g_new)) = accepted else {
            if reset {
                status = OptimStatus::Stalled;
                break;
            }
            // retry once from steepest ascent before giving up
            h = DMatrix::identity(k, k) / (1.0 + max_abs(&grad));
            reset = true;
            continue;
        };
        reset = false;
        iterations += 1;

        let s = &x_new - &x;
        // ascent on f is descent on -f, so y uses the negated gradient change
        let y = &grad - &g_new;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(k, k);
            let a = &i - &s * y.transpose() * rho;
            let b = &i - &y * s.transpose() * rho;
            h = &a * &h * &b + &s * s.transpose() * rho;
        }
        x = x_new;
        value = v_new;
        grad = g_new;
        trace.push(value);
    }
    if status == OptimStatus::MaxIterations && value.is_finite() && max_abs(&grad) < opts.grad_tol {
        status = OptimStatus::Converged;
    }

    OptimResult {
        x: x.as_slice().to_vec(),
        value,
        grad: grad.as_slice().to_vec(),
        iterations,
        status,
        trace,
    }
}

/// Central-difference Jacobian of a gradient, symmetrised.
pub fn fd_hessian<G>(grad: G, x: &[f64]) -> DMatrix<f64>
where
    G: Fn(&[f64]) -> Vec<f64>,
{
    let k = x.len();
    let mut hess = DMatrix::zeros(k, k);
    let mut work = x.to_vec();
    for j in 0..k {
        let h = 1e-5 * x[j].abs().max(1.0);
        work[j] = x[j] + h;
        let up = grad(&work);
        work[j] = x[j] - h;
        let down = grad(&work);
        work[j] = x[j];
        for i in 0..k {
            hess[(i, j)] = (up[i] - down[i]) / (2.0 * h);
        }
    }
    (&hess + hess.transpose()) * 0.5
}

/// Inverse of a symmetric positive-definite matrix, or `None`.
pub fn spd_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if m.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let chol = m.clone().cholesky()?;
    let inv = chol.inverse();
    inv.iter().all(|v| v.is_finite()).then_some(inv)
}
