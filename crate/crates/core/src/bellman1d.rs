//! Finite-difference solver for the ergodic Bellman equation with a scalar
//! factor.
//!
//! The equation `T(x) f'^2 / 2 + g1(x) f' + g0(x) + s f'' / 2 = Lambda` is
//! solved by relative policy iteration on the control `w = T f'`, using
//! `T p^2 / 2 = sup_w (w p - w^2 / (2T))`. Each step is a linear ergodic
//! problem for a reflected birth-death chain on a uniform grid; its gain comes
//! from the stationary law of the chain and the relative value from a
//! tridiagonal solve pinned at the origin.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::conditions;
use crate::error::{Error, Result};
use crate::hamiltonian;
use crate::model::{Drift, MarketScenario};

/// Discretization and stopping parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub radius: f64,
    pub nodes: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl GridConfig {
    pub fn new(radius: f64, nodes: usize) -> Self {
        GridConfig { radius, nodes, tol: 1e-10, max_iter: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSolution {
    pub lambda: f64,
    #[serde(rename = "R")]
    pub radius: f64,
    pub xs: Vec<f64>,
    /// Relative value, pinned to zero at the origin.
    pub f: Vec<f64>,
    /// Discrete gradient, zero at the reflecting ends.
    pub fprime: Vec<f64>,
    /// The ergodic constant.
    #[serde(rename = "Lambda")]
    pub ergodic_constant: f64,
    /// Stationary density of the tilted factor, trapezoid-normalized.
    pub m: Vec<f64>,
    pub residual_inf: f64,
    pub iterations: usize,
    /// Ergodic constant after each policy-evaluation step.
    pub history: Vec<f64>,
    /// Sup-norm gap between the integrating-factor density and the
    /// stationary law of the discrete chain.
    pub density_crosscheck: f64,
}

impl GridSolution {
    pub fn spacing(&self) -> f64 {
        self.xs[1] - self.xs[0]
    }

    pub fn center(&self) -> usize {
        self.xs.len() / 2
    }

    /// Linear interpolation of `fprime`, constant beyond the ends.
    pub fn gradient_at(&self, x: f64) -> f64 {
        interpolate(&self.xs, &self.fprime, x)
    }
}

/// Pointwise coefficients of a Hamiltonian quadratic in `p`:
/// `t p^2 / 2 + g1 p + g0`, with diffusion `s`.
#[derive(Debug, Clone)]
struct Coefficients {
    t: Vec<f64>,
    g1: Vec<f64>,
    g0: Vec<f64>,
    s: f64,
}

pub fn grid_nodes(radius: f64, nodes: usize) -> Vec<f64> {
    let dx = 2.0 * radius / (nodes - 1) as f64;
    let c = nodes / 2;
    (0..nodes).map(|i| (i as f64 - c as f64) * dx).collect()
}

fn validate(s: &MarketScenario, cfg: &GridConfig) -> Result<()> {
    if s.dims.l != 1 {
        return Err(Error::Unsupported(format!(
            "the grid solver handles a scalar factor only (l = {})",
            s.dims.l
        )));
    }
    if cfg.nodes < 201 || cfg.nodes.is_multiple_of(2) {
        return Err(Error::InvalidConfig(format!("nodes must be odd and at least 201, got {}", cfg.nodes)));
    }
    if !(cfg.radius > 0.0 && cfg.radius.is_finite()) {
        return Err(Error::InvalidConfig(format!("radius must be positive, got {}", cfg.radius)));
    }
    let report = conditions::check_all(s, &conditions::default_probe(s), conditions::DEFAULT_SHELL_RADIUS);
    if !report.all_passed() {
        return Err(Error::InvalidConfig(format!("scenario fails the standing conditions: {:?}", report.passed)));
    }
    let theta = |x: f64| s.eval_scalar(x).theta[0];
    if theta(cfg.radius) >= 0.0 || theta(-cfg.radius) <= 0.0 {
        return Err(Error::OutwardDrift(format!(
            "factor drift at +-{} is ({:.3e}, {:.3e})",
            cfg.radius,
            theta(-cfg.radius),
            theta(cfg.radius)
        )));
    }
    Ok(())
}

fn diffusion(s: &MarketScenario) -> f64 {
    s.sigma.row(0).norm_squared()
}

fn optimized_coefficients(lambda: f64, s: &MarketScenario, xs: &[f64]) -> Coefficients {
    let mut t = Vec::with_capacity(xs.len());
    let mut g1 = Vec::with_capacity(xs.len());
    let mut g0 = Vec::with_capacity(xs.len());
    for &x in xs {
        let h = hamiltonian::hamiltonian_coefficients(lambda, &s.eval_scalar(x));
        t.push(h.t[(0, 0)]);
        g1.push(h.g1[0]);
        g0.push(h.g0);
    }
    Coefficients { t, g1, g0, s: diffusion(s) }
}

/// Coefficients of the policy-evaluation Hamiltonian for a frozen portfolio:
/// `s p^2 / 2 + (theta - lambda sigma N) p - lambda M + lambda^2 |N|^2 / 2`.
fn policy_coefficients<F>(lambda: f64, s: &MarketScenario, xs: &[f64], policy: F) -> Coefficients
where
    F: Fn(f64) -> DVector<f64>,
{
    let ss = diffusion(s);
    let mut t = Vec::with_capacity(xs.len());
    let mut g1 = Vec::with_capacity(xs.len());
    let mut g0 = Vec::with_capacity(xs.len());
    for &x in xs {
        let frame = s.eval_scalar(x);
        let u = policy(x);
        let n = hamiltonian::vol_n(&u, &frame);
        let m = hamiltonian::drift_m(&u, &frame);
        t.push(ss);
        g1.push(frame.theta[0] - lambda * frame.sigma.row(0).dot(&n.transpose()));
        g0.push(-lambda * m + 0.5 * lambda * lambda * n.norm_squared());
    }
    Coefficients { t, g1, g0, s: ss }
}

/// Transition rates `(down, up)` of the reflected chain with drift `mu`.
fn rates(mu: &[f64], s: f64, dx: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = mu.len();
    let diff = s / (2.0 * dx * dx);
    let mut down = vec![0.0; n];
    let mut up = vec![0.0; n];
    up[0] = 2.0 * diff;
    down[n - 1] = 2.0 * diff;
    for i in 1..n - 1 {
        let adv = mu[i] / (2.0 * dx);
        down[i] = diff - adv;
        up[i] = diff + adv;
        if down[i] < 0.0 || up[i] < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "grid too coarse for the drift at x index {i}: |mu| dx = {:.3e} exceeds s = {s:.3e}",
                mu[i].abs() * dx
            )));
        }
    }
    Ok((down, up))
}

/// Stationary law of the birth-death chain by detailed balance, as
/// probabilities summing to one.
fn chain_stationary(down: &[f64], up: &[f64]) -> Vec<f64> {
    let n = up.len();
    let mut logp = vec![0.0; n];
    for i in 0..n - 1 {
        logp[i + 1] = logp[i] + (up[i] / down[i + 1]).ln();
    }
    let mx = logp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logp.iter().map(|v| (v - mx).exp()).collect();
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= total);
    p
}

/// Solves the tridiagonal system `lo[i] x[i-1] + di[i] x[i] + hi[i] x[i+1] = rhs[i]`.
fn thomas(lo: &[f64], di: &[f64], hi: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = di.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = hi[0] / di[0];
    d[0] = rhs[0] / di[0];
    for i in 1..n {
        let den = di[i] - lo[i] * c[i - 1];
        c[i] = if i + 1 < n { hi[i] / den } else { 0.0 };
        d[i] = (rhs[i] - lo[i] * d[i - 1]) / den;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

/// Gain and relative value of the chain with given drift and reward.
fn evaluate(mu: &[f64], reward: &[f64], s: f64, dx: f64) -> Result<(f64, Vec<f64>)> {
    let n = mu.len();
    let (down, up) = rates(mu, s, dx)?;
    let pi = chain_stationary(&down, &up);
    let gain: f64 = pi.iter().zip(reward).map(|(p, r)| p * r).sum();
    let c = n / 2;
    let mut lo = down.clone();
    let mut hi = up.clone();
    let mut di: Vec<f64> = (0..n).map(|i| -(down[i] + up[i])).collect();
    let mut rhs: Vec<f64> = reward.iter().map(|r| gain - r).collect();
    lo[c] = 0.0;
    hi[c] = 0.0;
    di[c] = 1.0;
    rhs[c] = 0.0;
    Ok((gain, thomas(&lo, &di, &hi, &rhs)))
}

fn discrete_gradient(f: &[f64], dx: f64) -> Vec<f64> {
    let n = f.len();
    let mut g = vec![0.0; n];
    for i in 1..n - 1 {
        g[i] = (f[i + 1] - f[i - 1]) / (2.0 * dx);
    }
    g
}

struct Iterate {
    f: Vec<f64>,
    fprime: Vec<f64>,
    gain: f64,
    history: Vec<f64>,
}

fn policy_iteration(co: &Coefficients, dx: f64, cfg: &GridConfig) -> Result<Iterate> {
    let n = co.t.len();
    let mut w = vec![0.0; n];
    let mut mu = vec![0.0; n];
    let mut reward = vec![0.0; n];
    let mut history = Vec::new();
    let mut last_update = f64::INFINITY;
    for _ in 0..cfg.max_iter {
        for i in 0..n {
            mu[i] = co.g1[i] + w[i];
            reward[i] = co.g0[i] - w[i] * w[i] / (2.0 * co.t[i]);
        }
        let (gain, f) = evaluate(&mu, &reward, co.s, dx)?;
        history.push(gain);
        let fprime = discrete_gradient(&f, dx);
        let mut update = 0.0f64;
        for i in 0..n {
            let next = co.t[i] * fprime[i];
            update = update.max((next - w[i]).abs());
            w[i] = next;
        }
        last_update = update;
        if update <= cfg.tol {
            return Ok(Iterate { f, fprime, gain, history });
        }
    }
    Err(Error::NoConvergence { iterations: cfg.max_iter, last_update })
}

/// Residual of the nonlinear discrete equation at interior nodes.
fn residual(co: &Coefficients, f: &[f64], gain: f64, dx: f64) -> f64 {
    let n = f.len();
    let mut worst = 0.0f64;
    for i in 1..n - 1 {
        let p = (f[i + 1] - f[i - 1]) / (2.0 * dx);
        let pp = (f[i + 1] - 2.0 * f[i] + f[i - 1]) / (dx * dx);
        let h = 0.5 * co.t[i] * p * p + co.g1[i] * p + co.g0[i] + 0.5 * co.s * pp;
        worst = worst.max((h - gain).abs());
    }
    worst
}

fn trapezoid_weights(n: usize, dx: f64) -> Vec<f64> {
    let mut w = vec![dx; n];
    w[0] = 0.5 * dx;
    w[n - 1] = 0.5 * dx;
    w
}

/// Trapezoid integral of `values` on a uniform grid.
pub fn trapezoid(values: &[f64], dx: f64) -> f64 {
    trapezoid_weights(values.len(), dx).iter().zip(values).map(|(w, v)| w * v).sum()
}

/// `m(x) ∝ exp(∫_0^x 2 mu / s)`, normalized by the trapezoid rule.
fn integrating_factor_density(mu: &[f64], s: f64, dx: f64) -> Result<Vec<f64>> {
    let n = mu.len();
    let c = n / 2;
    let mut logm = vec![0.0; n];
    for i in c + 1..n {
        logm[i] = logm[i - 1] + dx * (mu[i - 1] + mu[i]) / s;
    }
    for i in (0..c).rev() {
        logm[i] = logm[i + 1] - dx * (mu[i] + mu[i + 1]) / s;
    }
    let mx = logm.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut m: Vec<f64> = logm.iter().map(|v| (v - mx).exp()).collect();
    let edge = m[0].max(m[n - 1]);
    if edge > 1e-4 {
        return Err(Error::NonNormalizable(format!(
            "density at the boundary is {edge:.3e} of its peak; enlarge the radius"
        )));
    }
    let mass = trapezoid(&m, dx);
    m.iter_mut().for_each(|v| *v /= mass);
    Ok(m)
}

fn finish(lambda: f64, cfg: &GridConfig, xs: Vec<f64>, co: &Coefficients, it: Iterate) -> Result<GridSolution> {
    let dx = xs[1] - xs[0];
    let n = xs.len();
    let mu: Vec<f64> = (0..n).map(|i| co.g1[i] + co.t[i] * it.fprime[i]).collect();
    if mu[0] <= 0.0 || mu[n - 1] >= 0.0 {
        return Err(Error::OutwardDrift(format!(
            "tilted drift at the ends is ({:.3e}, {:.3e})",
            mu[0],
            mu[n - 1]
        )));
    }
    let m = integrating_factor_density(&mu, co.s, dx)?;
    let (down, up) = rates(&mu, co.s, dx)?;
    let pi = chain_stationary(&down, &up);
    let tw = trapezoid_weights(n, dx);
    let scale: f64 = pi.iter().zip(&tw).map(|(p, w)| p / dx * w).sum();
    let density_crosscheck = pi
        .iter()
        .zip(&m)
        .map(|(p, mi)| (p / dx / scale - mi).abs())
        .fold(0.0, f64::max);
    Ok(GridSolution {
        lambda,
        radius: cfg.radius,
        residual_inf: residual(co, &it.f, it.gain, dx),
        xs,
        f: it.f,
        fprime: it.fprime,
        ergodic_constant: it.gain,
        m,
        iterations: it.history.len(),
        history: it.history,
        density_crosscheck,
    })
}

/// Solves the ergodic Bellman equation at `lambda` on `[-R, R]` with
/// reflecting ends, together with the stationary density of the optimally
/// tilted factor.
pub fn solve_ergodic_hjb(lambda: f64, s: &MarketScenario, cfg: &GridConfig) -> Result<GridSolution> {
    validate(s, cfg)?;
    let xs = grid_nodes(cfg.radius, cfg.nodes);
    let co = optimized_coefficients(lambda, s, &xs);
    let it = policy_iteration(&co, xs[1] - xs[0], cfg)?;
    finish(lambda, cfg, xs, &co, it)
}

/// Same as [`solve_ergodic_hjb`] for the Bellman equation of a frozen
/// portfolio `policy`: its rate and its own tilted stationary density.
pub fn solve_policy_hjb<F>(lambda: f64, s: &MarketScenario, cfg: &GridConfig, policy: F) -> Result<GridSolution>
where
    F: Fn(f64) -> DVector<f64>,
{
    validate(s, cfg)?;
    let xs = grid_nodes(cfg.radius, cfg.nodes);
    let co = policy_coefficients(lambda, s, &xs, policy);
    let it = policy_iteration(&co, xs[1] - xs[0], cfg)?;
    finish(lambda, cfg, xs, &co, it)
}

/// Recomputes the stationary density of a solution with the tilted drift
/// written from the portfolio: `-lambda sigma N(u) + theta + s f'`.
pub fn stationary_density(sol: &GridSolution, s: &MarketScenario) -> Result<Vec<f64>> {
    let ss = diffusion(s);
    let mu: Vec<f64> = sol
        .xs
        .iter()
        .zip(&sol.fprime)
        .map(|(&x, &p)| tilted_drift(sol.lambda, s, x, p))
        .collect();
    integrating_factor_density(&mu, ss, sol.spacing())
}

/// Tilted drift of the factor at `x` under the optimal portfolio for gradient `p`.
pub fn tilted_drift(lambda: f64, s: &MarketScenario, x: f64, p: f64) -> f64 {
    let frame = s.eval_scalar(x);
    let grad = DVector::from_element(1, p);
    let u = hamiltonian::optimal_u(lambda, &grad, &frame);
    let n = hamiltonian::vol_n(&u, &frame);
    -lambda * frame.sigma.row(0).dot(&n.transpose()) + frame.theta[0] + diffusion(s) * p
}

pub fn rate_f_grid(lambda: f64, s: &MarketScenario, cfg: &GridConfig) -> Result<f64> {
    Ok(solve_ergodic_hjb(lambda, s, cfg)?.ergodic_constant)
}

/// Trapezoid quadrature of `-M(u) + lambda |N(u)|^2 - f' sigma N(u)` against
/// the stationary density, with `u` the optimal portfolio.
pub fn rate_derivative_grid(sol: &GridSolution, s: &MarketScenario) -> f64 {
    let vals: Vec<f64> = sol
        .xs
        .iter()
        .zip(&sol.fprime)
        .zip(&sol.m)
        .map(|((&x, &p), &m)| {
            let frame = s.eval_scalar(x);
            let grad = DVector::from_element(1, p);
            let u = hamiltonian::optimal_u(sol.lambda, &grad, &frame);
            m * hamiltonian::rate_derivative_integrand(sol.lambda, &grad, &u, &frame)
        })
        .collect();
    trapezoid(&vals, sol.spacing())
}

/// Same quadrature for a frozen portfolio solved by [`solve_policy_hjb`].
pub fn policy_rate_derivative_grid<F>(sol: &GridSolution, s: &MarketScenario, policy: F) -> f64
where
    F: Fn(f64) -> DVector<f64>,
{
    let vals: Vec<f64> = sol
        .xs
        .iter()
        .zip(&sol.fprime)
        .zip(&sol.m)
        .map(|((&x, &p), &m)| {
            let frame = s.eval_scalar(x);
            let grad = DVector::from_element(1, p);
            m * hamiltonian::rate_derivative_integrand(sol.lambda, &grad, &policy(x), &frame)
        })
        .collect();
    trapezoid(&vals, sol.spacing())
}

/// Six standard deviations of the factor's linearized stationary law at the
/// origin.
pub fn default_radius(s: &MarketScenario) -> Result<f64> {
    if s.dims.l != 1 {
        return Err(Error::Unsupported("default radius needs a scalar factor".into()));
    }
    let slope = match &s.drift {
        Drift::Linear(lin) => lin.theta1[(0, 0)],
        Drift::Parametric1d(par) => par.theta.c1 + par.theta.c2 * par.theta.c3,
    };
    if slope >= 0.0 {
        return Err(Error::OutwardDrift(format!("factor drift slope at the origin is {slope:.3e}")));
    }
    Ok(6.0 * (diffusion(s) / (2.0 * -slope)).sqrt())
}

/// `Lambda(R) - Lambda(1.5 R)`: how much the ergodic constant still moves
/// when the domain grows.
pub fn boundary_sensitivity(lambda: f64, s: &MarketScenario, cfg: &GridConfig) -> Result<f64> {
    let base = rate_f_grid(lambda, s, cfg)?;
    let mut wide = *cfg;
    wide.radius *= 1.5;
    wide.nodes = ((cfg.nodes - 1) as f64 * 1.5).round() as usize / 2 * 2 + 1;
    Ok(base - rate_f_grid(lambda, s, &wide)?)
}

/// Linear interpolation on increasing nodes, clamped at the ends.
pub fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    let dx = xs[1] - xs[0];
    let k = (((x - xs[0]) / dx) as usize).min(n - 2);
    let t = (x - xs[k]) / dx;
    ys[k] + t * (ys[k + 1] - ys[k])
}
