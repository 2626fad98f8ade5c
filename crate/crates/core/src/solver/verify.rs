//! Closed-form checks of optimal currents against the multipliers.
//!
//! Lines without a sparsity weight must satisfy `xi = Z~^{-1} mu_mn`, with
//! `Z~ = H + sum_phi rho^phi M^phi`. Switched lines satisfy the shrinkage
//! form `xi = eta (eta Z~ + lambda^2/2 I)^{-1} mu_mn`, which is zero when
//! `|mu_mn| <= lambda`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use super::PrimalDualSolution;
use crate::error::SolverError;
use crate::formulation::DsrProblem;
use crate::network::LineId;

#[derive(Debug, Clone, Serialize)]
pub struct LineResidual {
    pub line: LineId,
    pub residual: f64,
    pub mu_norm: f64,
    pub lambda: f64,
    pub eta: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct VerifyReport {
    pub worst: f64,
    pub lines: Vec<LineResidual>,
}

impl VerifyReport {
    fn push(&mut self, r: LineResidual) {
        self.worst = self.worst.max(r.residual);
        self.lines.push(r);
    }
}

/// `mu_mn = A^(m)' mu_m - A^(n)' mu_n`, plus voltage-constraint terms.
fn line_mu(problem: &DsrProblem<'_>, sol: &PrimalDualSolution, id: LineId) -> DVector<f64> {
    let model = problem.model();
    let inc = problem.incidence();
    let (m, n) = model.endpoints(id);
    let am = inc.stacked_selection(model, m, id);
    let an = inc.stacked_selection(model, n, id);
    am.transpose() * &sol.mu[m] - an.transpose() * &sol.mu[n] + &sol.mu_voltage[id.0]
}

fn z_tilde(problem: &DsrProblem<'_>, sol: &PrimalDualSolution, id: LineId) -> DMatrix<f64> {
    let line = problem.model().line(id);
    let mut z = problem.hessian(id).clone();
    for (p, rho) in sol.rho[id.0].iter().enumerate() {
        z += line.m_bar(p) * *rho;
    }
    z
}

fn scale_floor(sol: &PrimalDualSolution) -> f64 {
    let largest = sol.xi.iter().map(|x| x.norm()).fold(0.0, f64::max);
    (1e-3 * largest).max(1e-9)
}

fn relative(xi: &DVector<f64>, expect: &DVector<f64>, floor: f64) -> f64 {
    (xi - expect).norm() / xi.norm().max(expect.norm()).max(floor)
}

fn prop1_current(
    problem: &DsrProblem<'_>,
    sol: &PrimalDualSolution,
    id: LineId,
) -> Result<(DVector<f64>, DVector<f64>), SolverError> {
    let mu = line_mu(problem, sol, id);
    let chol = z_tilde(problem, sol, id)
        .cholesky()
        .ok_or(SolverError::Singular(id.0))?;
    Ok((chol.solve(&mu), mu))
}

/// Worst relative deviation from `xi = Z~^{-1} mu_mn` over in-service lines
/// without a switch. Residuals are relative to the larger of the two
/// currents, floored at 1e-3 of the largest line current.
pub fn verify_prop1(
    problem: &DsrProblem<'_>,
    sol: &PrimalDualSolution,
) -> Result<VerifyReport, SolverError> {
    ensure_optimal(sol)?;
    let floor = scale_floor(sol);
    let mut report = VerifyReport::default();
    for id in problem.mask().active() {
        if problem.model().line(id).switchable {
            continue;
        }
        let (expect, mu) = prop1_current(problem, sol, id)?;
        report.push(LineResidual {
            line: id,
            residual: relative(&sol.xi[id.0], &expect, floor),
            mu_norm: mu.norm(),
            lambda: 0.0,
            eta: None,
        });
    }
    Ok(report)
}

/// Worst relative deviation from the shrinkage/thresholding form over
/// in-service switched lines.
pub fn verify_prop2(
    problem: &DsrProblem<'_>,
    sol: &PrimalDualSolution,
) -> Result<VerifyReport, SolverError> {
    ensure_optimal(sol)?;
    let floor = scale_floor(sol);
    let mut report = VerifyReport::default();
    for id in problem.mask().active() {
        if !problem.model().line(id).switchable {
            continue;
        }
        let lambda = problem.lambda_pu(id);
        if lambda == 0.0 {
            let (expect, mu) = prop1_current(problem, sol, id)?;
            report.push(LineResidual {
                line: id,
                residual: relative(&sol.xi[id.0], &expect, floor),
                mu_norm: mu.norm(),
                lambda,
                eta: None,
            });
            continue;
        }
        let mu = line_mu(problem, sol, id);
        let zt = z_tilde(problem, sol, id);
        let mu_norm = mu.norm();
        let k = mu.len();
        let (expect, eta) = if mu_norm <= lambda {
            (DVector::zeros(k), 0.0)
        } else if k == 2 {
            // single phase: Z~ is a multiple of the identity
            let scale = (mu_norm - lambda) / (zt[(0, 0)] * mu_norm);
            (&mu * scale, lambda * (mu_norm - lambda) / (2.0 * zt[(0, 0)]))
        } else {
            let eta = solve_eta(&mu, &zt, lambda)?;
            let m = &zt * eta + DMatrix::identity(k, k) * (lambda * lambda / 2.0);
            let x = m.cholesky().ok_or(SolverError::Singular(id.0))?.solve(&mu) * eta;
            (x, eta)
        };
        report.push(LineResidual {
            line: id,
            residual: relative(&sol.xi[id.0], &expect, floor),
            mu_norm,
            lambda,
            eta: Some(eta),
        });
    }
    Ok(report)
}

fn ensure_optimal(sol: &PrimalDualSolution) -> Result<(), SolverError> {
    if !sol.is_optimal() {
        return Err(SolverError::NotOptimal(format!("{:?}", sol.status)));
    }
    Ok(())
}

/// Minimizer over `eta >= 0` of `eta - (eta/2) mu' (eta Z~ + lambda^2/2 I)^{-1} mu`.
///
/// The derivative `1 - (lambda^2/4) |(eta Z~ + lambda^2/2 I)^{-1} mu|^2` is
/// increasing, so its root is bracketed by doubling from 1 and refined by
/// bisection down to floating-point resolution.
pub fn solve_eta(mu: &DVector<f64>, z_tilde: &DMatrix<f64>, lambda: f64) -> Result<f64, SolverError> {
    if mu.norm() <= lambda {
        return Ok(0.0);
    }
    let eig = SymmetricEigen::new(z_tilde.clone());
    let w = eig.eigenvectors.transpose() * mu;
    let c = lambda * lambda / 2.0;
    let deriv = |eta: f64| -> f64 {
        let s: f64 = w
            .iter()
            .zip(eig.eigenvalues.iter())
            .map(|(wi, di)| (wi / (eta * di + c)).powi(2))
            .sum();
        1.0 - lambda * lambda / 4.0 * s
    };
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut grow = 0;
    while deriv(hi) <= 0.0 {
        lo = hi;
        hi *= 2.0;
        grow += 1;
        if grow > 1100 || !hi.is_finite() {
            return Err(SolverError::EtaBracket { lo, hi });
        }
    }
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if deriv(mid) <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eta_is_zero_below_threshold() {
        let mu = DVector::from_vec(vec![0.3, 0.4]);
        let z = DMatrix::identity(2, 2);
        assert_eq!(solve_eta(&mu, &z, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn eta_identity_case_has_closed_form() {
        // Z~ = I, mu = 2 lambda e1: (eta + lambda^2/2)^{-1} 2 lambda = 2/lambda
        // gives eta = lambda^2 / 2.
        let lambda = 0.7;
        let mut mu = DVector::zeros(4);
        mu[0] = 2.0 * lambda;
        let eta = solve_eta(&mu, &DMatrix::identity(4, 4), lambda).unwrap();
        assert!((eta - lambda * lambda / 2.0).abs() < 1e-12);
    }
}
