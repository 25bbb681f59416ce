//! Rate of a fixed linear feedback `u(x) = K x + k0`.
//!
//! With the policy frozen, the ergodic equation uses the policy-evaluation
//! Hamiltonian, which is still quadratic in the gradient, so `f` is again
//! quadratic. `P` solves
//! `At^T P + P At + P (sigma sigma^T) P + lambda^2 Nx^T Nx - lambda M2 = 0`
//! with `At = Theta1 - lambda sigma Nx`, `N(u(x)) = Nx x + n0`,
//! `M(u(x)) = x^T (M2/2) x + m1^T x + m0`. For large `lambda` the equation
//! may lose its stabilizing solution; the rate is then infinite.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::quadratic::Affine;
use super::{derivative_integrand, expand_policy, ou_stationary_law};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::MarketScenario;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRateSolution {
    pub lambda: f64,
    pub p: DMatrix<f64>,
    pub p2: DVector<f64>,
    pub d: DMatrix<f64>,
    pub f: f64,
    pub fprime: f64,
    pub mstar: DVector<f64>,
    pub sigma_stat: DMatrix<f64>,
}

impl PolicyRateSolution {
    pub fn gradient(&self) -> Affine {
        Affine::new(self.p.clone(), self.p2.clone())
    }
}

pub fn evaluate_linear_policy(
    lambda: f64,
    s: &MarketScenario,
    gain: &DMatrix<f64>,
    offset: &DVector<f64>,
) -> Result<PolicyRateSolution> {
    let lin = s.require_linear()?;
    let exp = expand_policy(s, gain, offset)?;
    let nx = &exp.vol.mat;
    let n0 = &exp.vol.off;
    let m2 = &exp.drift.quad * 2.0;
    let m1 = &exp.drift.lin;
    let m0 = exp.drift.constant;
    let ss = s.sigma_sigma_t();

    let a_t = &lin.theta1 - &s.sigma * nx * lambda;
    let q = linalg::symmetrize(&(&m2 * lambda - nx.transpose() * nx * (lambda * lambda)));
    let care = linalg::solve_care(&a_t, &ss, &q)?;
    let p = -care.x;
    let d = &a_t + &ss * &p;

    let rhs = &p * &s.sigma * n0 * lambda - nx.transpose() * n0 * (lambda * lambda) - &p * &lin.theta2
        + m1 * lambda;
    let p2 = d.transpose().lu().solve(&rhs).ok_or(Error::Singular("D^T in policy evaluation"))?;

    let w0 = s.sigma.transpose() * &p2 - n0 * lambda;
    let f = -lambda * m0 + 0.5 * w0.norm_squared() + p2.dot(&lin.theta2) + 0.5 * (&ss * &p).trace();
    let mu0 = &lin.theta2 + &s.sigma * &w0;
    let (mstar, sigma_stat) = ou_stationary_law(&d, &mu0, &ss)?;

    let grad = Affine::new(p.clone(), p2.clone());
    let g = derivative_integrand(s, lambda, gain, offset, &grad)?;
    let fprime = g.gaussian_mean(&mstar, &sigma_stat);
    Ok(PolicyRateSolution { lambda, p, p2, d, f, fprime, mstar, sigma_stat })
}
