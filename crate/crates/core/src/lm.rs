//! Damped Gauss-Newton (Levenberg-Marquardt) minimisation of `Σ rᵢ(p)²`.
//!
//! The solver works on any residual closure; Jacobians come from central
//! differences unless the problem supplies them. Damping follows Nielsen's
//! gain-ratio update with Marquardt diagonal scaling, which keeps iterates
//! invariant under rescaling of individual parameters.

use nalgebra::{DMatrix, DVector};

/// A least-squares problem: fixed number of residuals over a parameter vector.
pub trait LeastSquares {
    fn residual_count(&self) -> usize;

    /// Writes residuals for `params` into `out`. Returns `false` if `params`
    /// lies outside the model's domain.
    fn residuals(&self, params: &[f64], out: &mut [f64]) -> bool;

    /// Jacobian `∂rᵢ/∂pⱼ`. Defaults to central differences.
    fn jacobian(&self, params: &[f64], jac: &mut DMatrix<f64>) -> bool {
        numeric_jacobian(self, params, jac)
    }
}

pub(crate) fn numeric_jacobian<P: LeastSquares + ?Sized>(problem: &P, params: &[f64], jac: &mut DMatrix<f64>) -> bool {
    let m = problem.residual_count();
    let mut probe = params.to_vec();
    let mut plus = vec![0.0; m];
    let mut minus = vec![0.0; m];
    for j in 0..params.len() {
        let h = 6.0e-6 * params[j].abs().max(1e-3);
        probe[j] = params[j] + h;
        let ok_plus = problem.residuals(&probe, &mut plus);
        probe[j] = params[j] - h;
        let ok_minus = problem.residuals(&probe, &mut minus);
        probe[j] = params[j];
        if !(ok_plus && ok_minus) {
            return false;
        }
        for i in 0..m {
            jac[(i, j)] = (plus[i] - minus[i]) / (2.0 * h);
        }
    }
    true
}

#[derive(Debug, Clone, Copy)]
pub struct LmConfig {
    pub max_iterations: usize,
    /// Relative cost reduction below which an accepted step ends the search.
    pub ftol: f64,
    /// Relative step size below which the search ends.
    pub xtol: f64,
    /// Max-norm of the gradient below which the search ends.
    pub gtol: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self { max_iterations: 500, ftol: 1e-15, xtol: 1e-13, gtol: 1e-300 }
    }
}

#[derive(Debug, Clone)]
pub struct LmOutcome {
    pub params: Vec<f64>,
    /// Residual sum of squares at `params`.
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `(JᵀJ)⁻¹` at the solution, when it exists.
    pub covariance: Option<DMatrix<f64>>,
}

impl LmOutcome {
    /// Parameter standard errors scaled by the reduced chi-square.
    pub fn standard_errors(&self, residual_count: usize) -> Option<Vec<f64>> {
        let cov = self.covariance.as_ref()?;
        let dof = residual_count.saturating_sub(self.params.len());
        let scale = if dof > 0 { self.cost / dof as f64 } else { 0.0 };
        Some((0..self.params.len()).map(|i| (cov[(i, i)] * scale).max(0.0).sqrt()).collect())
    }
}

pub fn minimize<P: LeastSquares + ?Sized>(problem: &P, initial: &[f64], config: LmConfig) -> LmOutcome {
    let n = initial.len();
    let m = problem.residual_count();
    let mut x = DVector::from_column_slice(initial);
    let mut r = vec![0.0; m];
    let mut jac = DMatrix::zeros(m, n);

    if !problem.residuals(x.as_slice(), &mut r) || r.iter().any(|v| !v.is_finite()) {
        return LmOutcome {
            params: initial.to_vec(),
            cost: f64::INFINITY,
            iterations: 0,
            converged: false,
            covariance: None,
        };
    }
    let mut cost = sum_sq(&r);
    let mut mu = -1.0;
    let mut nu = 2.0;
    let mut converged = false;
    let mut iterations = 0;
    let mut trial = vec![0.0; m];
    let mut need_jacobian = true;
    let mut a = DMatrix::zeros(n, n);
    let mut g = DVector::zeros(n);

    while iterations < config.max_iterations {
        iterations += 1;
        if cost == 0.0 {
            converged = true;
            break;
        }
        if need_jacobian {
            if !problem.jacobian(x.as_slice(), &mut jac) {
                break;
            }
            let rv = DVector::from_column_slice(&r);
            a = jac.transpose() * &jac;
            g = jac.transpose() * rv;
            need_jacobian = false;
            if g.amax() <= config.gtol {
                converged = true;
                break;
            }
        }
        let max_diag = (0..n).map(|i| a[(i, i)]).fold(0.0_f64, f64::max);
        if max_diag == 0.0 {
            break;
        }
        if mu < 0.0 {
            mu = 1e-3;
        }
        let mut damped = a.clone();
        for i in 0..n {
            damped[(i, i)] += mu * a[(i, i)].max(1e-12 * max_diag);
        }
        let Some(chol) = damped.cholesky() else {
            mu *= nu;
            nu *= 2.0;
            continue;
        };
        let step = chol.solve(&(-&g));
        if step.norm() <= config.xtol * (x.norm() + config.xtol) {
            converged = true;
            break;
        }
        let candidate = &x + &step;
        let predicted = -(2.0 * step.dot(&g) + (step.transpose() * &a * &step)[(0, 0)]);
        let valid = problem.residuals(candidate.as_slice(), &mut trial) && trial.iter().all(|v| v.is_finite());
        let new_cost = if valid { sum_sq(&trial) } else { f64::INFINITY };
        let actual = cost - new_cost;
        let rho = if predicted > 0.0 { actual / predicted } else { -1.0 };
        if valid && rho > 0.0 {
            x = candidate;
            std::mem::swap(&mut r, &mut trial);
            let old_cost = cost;
            cost = new_cost;
            mu *= (1.0 - (2.0 * rho - 1.0).powi(3)).max(1.0 / 3.0);
            nu = 2.0;
            need_jacobian = true;
            if actual <= config.ftol * old_cost {
                converged = true;
                break;
            }
        } else {
            mu *= nu;
            nu *= 2.0;
            if !mu.is_finite() || mu > 1e30 {
                // No descent direction left at machine precision.
                converged = true;
                break;
            }
        }
    }

    let mut final_jac = DMatrix::zeros(m, n);
    let covariance = if problem.jacobian(x.as_slice(), &mut final_jac) {
        let info = final_jac.transpose() * &final_jac;
        info.clone().try_inverse().or_else(|| info.pseudo_inverse(1e-14).ok())
    } else {
        None
    };

    LmOutcome { params: x.as_slice().to_vec(), cost, iterations, converged, covariance }
}

fn sum_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Residuals from a closure, for small one-off problems.
pub(crate) struct FnProblem<F> {
    pub count: usize,
    pub f: F,
}

impl<F: Fn(&[f64], &mut [f64]) -> bool> LeastSquares for FnProblem<F> {
    fn residual_count(&self) -> usize {
        self.count
    }

    fn residuals(&self, params: &[f64], out: &mut [f64]) -> bool {
        (self.f)(params, out)
    }
}
