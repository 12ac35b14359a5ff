//! Bound-clipped Levenberg-Marquardt with a central-difference Jacobian.
//!
//! Solves `min_x sum_i r_i(x)^2` subject to `lo <= x <= hi` by Marquardt-scaled
//! damped normal equations `(J'J + lambda D) dx = -J'r`, `D = diag(J'J)`
//! floored so that rank-deficient problems stay solvable.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmConfig {
    /// Relative Jacobian step; the absolute step is `rel_step * max(|x|, 1)`.
    pub rel_step: f64,
    /// Stall threshold on the relative decrease of the sum of squares.
    pub ftol: f64,
    /// Gradient-norm threshold (`|J'r|`).
    pub gtol: f64,
    /// Successive stalled iterations needed to declare convergence.
    pub stall_iterations: usize,
    pub max_iterations: usize,
    pub initial_lambda: f64,
    pub max_lambda: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            rel_step: 1e-6,
            ftol: 1e-12,
            gtol: 1e-10,
            stall_iterations: 3,
            max_iterations: 500,
            initial_lambda: 1e-3,
            max_lambda: 1e16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// Gradient norm below `gtol`.
    Gradient,
    /// Relative objective decrease below `ftol` for `stall_iterations` iterations.
    Stalled,
    /// Iteration cap reached.
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct LmOutcome {
    pub x: Vec<f64>,
    /// Sum of squared residuals at `x`.
    pub objective: f64,
    pub residuals: Vec<f64>,
    pub jacobian: DMatrix<f64>,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub termination: Termination,
    /// Objective after every accepted step, starting with the initial value.
    pub history: Vec<f64>,
}

impl LmOutcome {
    pub fn converged(&self) -> bool {
        matches!(self.termination, Termination::Gradient | Termination::Stalled)
    }
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

/// Jacobian by central differences; one-sided at a bound.
pub fn numeric_jacobian<F>(f: &F, x: &[f64], lo: &[f64], hi: &[f64], rel_step: f64, m: usize) -> Result<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let n = x.len();
    let mut jac = DMatrix::zeros(m, n);
    let mut probe = x.to_vec();
    for j in 0..n {
        let h = rel_step * x[j].abs().max(1.0);
        let (a, b) = if x[j] - h < lo[j] {
            (x[j], (x[j] + h).min(hi[j]))
        } else if x[j] + h > hi[j] {
            ((x[j] - h).max(lo[j]), x[j])
        } else {
            (x[j] - h, x[j] + h)
        };
        if b <= a {
            continue;
        }
        probe[j] = b;
        let rp = f(&probe)?;
        probe[j] = a;
        let rm = f(&probe)?;
        probe[j] = x[j];
        let inv = 1.0 / (b - a);
        for i in 0..m {
            jac[(i, j)] = (rp[i] - rm[i]) * inv;
        }
    }
    Ok(jac)
}

fn solve_damped(jtj: &DMatrix<f64>, grad: &DVector<f64>, lambda: f64) -> Option<DVector<f64>> {
    let n = jtj.nrows();
    let max_diag = (0..n).map(|i| jtj[(i, i)]).fold(0.0, f64::max);
    let floor = (max_diag * 1e-12).max(1e-300);
    let mut a = jtj.clone();
    for i in 0..n {
        a[(i, i)] += lambda * jtj[(i, i)].max(floor);
    }
    let step = a.cholesky()?.solve(&(-grad));
    step.iter().all(|v| v.is_finite()).then_some(step)
}

/// Minimize the sum of squares of `f` from `x0` inside `[lo, hi]`.
///
/// Errors from `f` at the starting point are returned; errors at trial points
/// count as rejected steps.
pub fn minimize<F>(f: F, x0: &[f64], lo: &[f64], hi: &[f64], cfg: &LmConfig) -> Result<LmOutcome>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let n = x0.len();
    let mut x: Vec<f64> = x0
        .iter()
        .zip(lo.iter().zip(hi))
        .map(|(v, (l, h))| v.clamp(*l, *h))
        .collect();
    let mut r = f(&x)?;
    let m = r.len();
    let mut objective = sum_sq(&r);
    let mut history = vec![objective];
    let mut lambda = cfg.initial_lambda;
    let mut stalled = 0;
    let mut iterations = 0;

    loop {
        let jac = numeric_jacobian(&f, &x, lo, hi, cfg.rel_step, m)?;
        let rv = DVector::from_column_slice(&r);
        let grad = jac.tr_mul(&rv);
        let gradient_norm = grad.norm();

        let termination = if gradient_norm < cfg.gtol {
            Some(Termination::Gradient)
        } else if stalled >= cfg.stall_iterations {
            Some(Termination::Stalled)
        } else if iterations >= cfg.max_iterations {
            Some(Termination::MaxIterations)
        } else {
            None
        };
        if let Some(termination) = termination {
            return Ok(LmOutcome {
                x,
                objective,
                residuals: r,
                jacobian: jac,
                gradient_norm,
                iterations,
                termination,
                history,
            });
        }

        iterations += 1;
        let jtj = jac.tr_mul(&jac);
        let mut accepted = false;
        while lambda <= cfg.max_lambda {
            let Some(step) = solve_damped(&jtj, &grad, lambda) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = (0..n).map(|j| (x[j] + step[j]).clamp(lo[j], hi[j])).collect();
            if trial == x {
                break;
            }
            let trial_r = match f(&trial) {
                Ok(tr) if tr.iter().all(|v| v.is_finite()) => tr,
                _ => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let trial_obj = sum_sq(&trial_r);
            if trial_obj <= objective {
                let decrease = if objective > 0.0 {
                    (objective - trial_obj) / objective
                } else {
                    0.0
                };
                stalled = if decrease < cfg.ftol { stalled + 1 } else { 0 };
                x = trial;
                r = trial_r;
                objective = trial_obj;
                history.push(objective);
                lambda = (lambda / 10.0).max(1e-15);
                accepted = true;
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            stalled += 1;
            lambda = cfg.initial_lambda;
        }
    }
}
