//! Closed-form pipeline for linear-Gaussian scenarios.
//!
//! For each dual variable `lambda` the ergodic Bellman equation has a
//! quadratic solution `f(x) = x^T P x / 2 + p2^T x`. `P` solves an algebraic
//! Riccati equation with a stabilizing, negative semidefinite solution, `p2`
//! a linear system, and the tilted factor dynamics are an Ornstein-Uhlenbeck
//! process `dY = (D Y + mu0) dt + sigma dW` with `D = A + B P`.

mod policy_eval;
pub mod quadratic;

pub use policy_eval::{evaluate_linear_policy, PolicyRateSolution};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::lambda_fraction;
use crate::linalg;
use crate::model::MarketScenario;
use quadratic::{Affine, Quadratic};

#[derive(Debug, Clone, PartialEq)]
pub struct AbcMatrices {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

/// Per-lambda closed-form artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiccatiSolution {
    pub lambda: f64,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    /// Negative semidefinite stabilizing solution.
    pub p: DMatrix<f64>,
    pub p2: DVector<f64>,
    /// `A + B P`, Hurwitz.
    pub d: DMatrix<f64>,
    /// The rate value `F(lambda)`.
    pub f: f64,
    /// Constant drift of the tilted factor dynamics.
    pub mu0: DVector<f64>,
    /// Stationary mean of the tilted factor.
    pub mstar: DVector<f64>,
    /// Stationary covariance of the tilted factor.
    pub sigma_stat: DMatrix<f64>,
    pub riccati_residual: f64,
    pub newton_steps: usize,
}

impl RiccatiSolution {
    /// Gradient of the quadratic value function, `x -> P x + p2`.
    pub fn gradient(&self) -> Affine {
        Affine::new(self.p.clone(), self.p2.clone())
    }

    pub fn d_max_re(&self) -> f64 {
        linalg::spectral_abscissa(&self.d)
    }
}

pub fn assemble_abc(lambda: f64, s: &MarketScenario) -> Result<AbcMatrices> {
    let lin = s.require_linear()?;
    let kappa = lambda_fraction(lambda);
    let g = lin.excess_slope();
    let sbc = &s.sigma * s.b.transpose() * s.c_inv();
    let a = &lin.theta1 - &sbc * &g * kappa;
    let b = linalg::symmetrize(&(s.sigma_sigma_t() - &sbc * &s.b * s.sigma.transpose() * kappa));
    let c = linalg::symmetrize(&(g.transpose() * s.c_inv() * &g));
    Ok(AbcMatrices { a, b, c })
}

/// Solves `A^T P + P A + P B P - lambda/(1+lambda) C = 0` for the stabilizing
/// negative semidefinite `P`, through the standard form in `X = -P`.
/// Returns `(P, residual, newton_steps)`.
pub fn solve_riccati(abc: &AbcMatrices, lambda: f64) -> Result<(DMatrix<f64>, f64, usize)> {
    let kappa = lambda_fraction(lambda);
    let q = &abc.c * kappa;
    let sol = linalg::solve_care(&abc.a, &abc.b, &q)?;
    let p = -sol.x;
    let residual = riccati_residual(abc, lambda, &p);
    Ok((p, residual, sol.newton_steps))
}

pub fn riccati_residual(abc: &AbcMatrices, lambda: f64, p: &DMatrix<f64>) -> f64 {
    let kappa = lambda_fraction(lambda);
    (abc.a.transpose() * p + p * &abc.a + p * &abc.b * p - &abc.c * kappa).norm()
}

/// Solves the linear equation for the first-order coefficient `p2` of the
/// quadratic value function.
pub fn solve_p2(lambda: f64, p: &DMatrix<f64>, abc: &AbcMatrices, s: &MarketScenario) -> Result<DVector<f64>> {
    let lin = s.require_linear()?;
    let kappa = lambda_fraction(lambda);
    let g = lin.excess_slope();
    let v = lin.excess_offset() + &s.b * &s.beta * lambda;
    let bsp = &s.b * s.sigma.transpose() * p;
    let rhs = (&g + &bsp).transpose() * s.c_inv() * &v * kappa
        + (&lin.r1 - &lin.alpha1 - p * &s.sigma * &s.beta) * lambda
        - p * &lin.theta2;
    let d = &abc.a + &abc.b * p;
    d.transpose().lu().solve(&rhs).ok_or(Error::Singular("D^T in the p2 equation"))
}

/// `F(lambda)` together with the tilted stationary law.
pub fn rate_f(lambda: f64, s: &MarketScenario) -> Result<RiccatiSolution> {
    let lin = s.require_linear()?;
    let abc = assemble_abc(lambda, s)?;
    let (p, riccati_residual, newton_steps) = solve_riccati(&abc, lambda)?;
    let p2 = solve_p2(lambda, &p, &abc, s)?;
    let d = &abc.a + &abc.b * &p;

    let kappa = lambda_fraction(lambda);
    let ss = s.sigma_sigma_t();
    let beta_sq = s.beta.norm_squared();
    let w = lin.excess_offset() + &s.b * (&s.beta * lambda + s.sigma.transpose() * &p2);
    let f = -0.5 * kappa * w.dot(&(s.c_inv() * &w))
        - lambda * (lin.r2 - lin.alpha2 + 0.5 * beta_sq - s.beta.dot(&(s.sigma.transpose() * &p2)))
        + 0.5 * lambda * lambda * beta_sq
        + 0.5 * p2.dot(&(&ss * &p2))
        + p2.dot(&lin.theta2)
        + 0.5 * (&ss * &p).trace();

    let mu0 = -(&s.sigma * s.b.transpose() * s.c_inv() * &w) * kappa
        + &s.sigma * &s.beta * lambda
        + &ss * &p2
        + &lin.theta2;
    let (mstar, sigma_stat) = ou_stationary_law(&d, &mu0, &ss)?;

    Ok(RiccatiSolution {
        lambda,
        a: abc.a,
        b: abc.b,
        c: abc.c,
        p,
        p2,
        d,
        f,
        mu0,
        mstar,
        sigma_stat,
        riccati_residual,
        newton_steps,
    })
}

/// Stationary mean and covariance of `dY = (D Y + mu0) dt + sigma dW`, with
/// `diffusion = sigma sigma^T`.
pub fn ou_stationary_law(
    d: &DMatrix<f64>,
    mu0: &DVector<f64>,
    diffusion: &DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if !linalg::is_hurwitz(d) {
        return Err(Error::NoStabilizingSolution(format!(
            "tilted drift matrix is not Hurwitz (abscissa {:.3e})",
            linalg::spectral_abscissa(d)
        )));
    }
    let mstar = -d.clone().lu().solve(mu0).ok_or(Error::Singular("D"))?;
    let sigma_stat = linalg::solve_lyapunov(d, diffusion)?;
    Ok((mstar, sigma_stat))
}

/// Gain and offset of the optimal feedback `u(x) = K x + k0`.
pub fn optimal_policy_coefficients(sol: &RiccatiSolution, s: &MarketScenario) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let lin = s.require_linear()?;
    let lam = sol.lambda;
    let bs = &s.b * s.sigma.transpose();
    let gain = s.c_inv() * (lin.excess_slope() + &bs * &sol.p) / (1.0 + lam);
    let offset = s.c_inv() * (lin.excess_offset() + &s.b * &s.beta * lam + &bs * &sol.p2) / (1.0 + lam);
    Ok((gain, offset))
}

/// Quadratic expansions of `M(u(x), x)`, `N(u(x), x)` for a linear policy.
pub(crate) struct PolicyExpansion {
    pub drift: Quadratic,
    pub vol: Affine,
}

pub(crate) fn expand_policy(s: &MarketScenario, gain: &DMatrix<f64>, offset: &DVector<f64>) -> Result<PolicyExpansion> {
    let lin = s.require_linear()?;
    let u = Affine::new(gain.clone(), offset.clone());
    let excess = Affine::new(lin.excess_slope(), lin.excess_offset());
    let beta_sq = s.beta.norm_squared();
    let drift = Quadratic::dot(&u, &excess)
        .add(&Quadratic::weighted_dot(&u, s.c(), &u).scale(-0.5))
        .add(&Quadratic::linear(&lin.r1 - &lin.alpha1, lin.r2 - lin.alpha2 + 0.5 * beta_sq));
    let vol = u.left_mul(&s.b.transpose()).sub_const(&s.beta);
    Ok(PolicyExpansion { drift, vol })
}

/// The integrand `-M(u) + lambda |N(u)|^2 - grad^T sigma N(u)` as a quadratic.
pub(crate) fn derivative_integrand(
    s: &MarketScenario,
    lambda: f64,
    gain: &DMatrix<f64>,
    offset: &DVector<f64>,
    grad: &Affine,
) -> Result<Quadratic> {
    let exp = expand_policy(s, gain, offset)?;
    let sigma_n = exp.vol.left_mul(&s.sigma);
    Ok(exp
        .drift
        .scale(-1.0)
        .add(&Quadratic::dot(&exp.vol, &exp.vol).scale(lambda))
        .add(&Quadratic::dot(grad, &sigma_n).scale(-1.0)))
}

/// `F'(lambda)` as the exact Gaussian expectation of the derivative integrand
/// under the tilted stationary law.
pub fn rate_derivative(sol: &RiccatiSolution, s: &MarketScenario) -> Result<f64> {
    let (gain, offset) = optimal_policy_coefficients(sol, s)?;
    let g = derivative_integrand(s, sol.lambda, &gain, &offset, &sol.gradient())?;
    Ok(g.gaussian_mean(&sol.mstar, &sol.sigma_stat))
}

/// `F` and `F'` at one lambda.
pub fn rate_point(lambda: f64, s: &MarketScenario) -> Result<(RiccatiSolution, f64)> {
    let sol = rate_f(lambda, s)?;
    let fp = rate_derivative(&sol, s)?;
    Ok((sol, fp))
}

/// Stationary standard deviation of each factor component under the
/// untilted dynamics (`Theta1` Hurwitz required).
pub fn physical_stationary_sd(s: &MarketScenario) -> Result<DVector<f64>> {
    let lin = s.require_linear()?;
    let (_, cov) = ou_stationary_law(&lin.theta1, &lin.theta2, &s.sigma_sigma_t())?;
    Ok(cov.diagonal().map(f64::sqrt))
}
