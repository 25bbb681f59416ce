//! The outer dual problem `J(q) = sup_{lambda >= 0} (-lambda q - F(lambda))`,
//! the optimal portfolio at the maximizer, its truncation, and the saddle and
//! growth diagnostics.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bellman1d::{self, GridConfig, GridSolution};
use crate::conditions;
use crate::error::{Error, Result};
use crate::gaussian::{self, PolicyRateSolution, RiccatiSolution};
use crate::hamiltonian;
use crate::model::MarketScenario;

/// Stopping tolerance on `F'(lambda) + q`.
pub const ROOT_TOL: f64 = 1e-10;
const MAX_DOUBLINGS: usize = 60;

/// Output of the scalar root search, independent of how `F` is computed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualRoot {
    pub lambda_hat: f64,
    #[serde(rename = "J")]
    pub j: f64,
    pub boundary: bool,
    pub saddle_residual: f64,
    /// Final bracketing interval around `lambda_hat`.
    pub bracket: (f64, f64),
    pub f_hat: f64,
    pub fprime_hat: f64,
    pub evaluations: usize,
}

/// Solves the dual problem for a rate oracle `lambda -> (F, F')`.
///
/// When the oracle fails at a trial upper end (a frozen portfolio's rate can
/// blow up at finite `lambda`), the end is pulled back toward the last good
/// point; the blow-up makes `F'` large there, so the root stays bracketed.
pub fn shortfall_rate<O>(q: f64, mut oracle: O, lmax_init: f64) -> Result<DualRoot>
where
    O: FnMut(f64) -> Result<(f64, f64)>,
{
    let mut evaluations = 0usize;
    let mut call = |lam: f64| {
        evaluations += 1;
        oracle(lam)
    };
    let wrap = |lambda: f64, e: Error| Error::Oracle { lambda, reason: e.to_string() };

    let (f0, fp0) = call(0.0).map_err(|e| wrap(0.0, e))?;
    if fp0 >= -q {
        return Ok(DualRoot {
            lambda_hat: 0.0,
            j: -f0,
            boundary: true,
            saddle_residual: (-q - fp0).max(0.0),
            bracket: (0.0, 0.0),
            f_hat: f0,
            fprime_hat: fp0,
            evaluations: 1,
        });
    }

    let (mut lo, mut glo) = (0.0, fp0 + q);
    let mut hi = lmax_init.max(1e-6);
    let mut ghi;
    let mut doublings = 0usize;
    let mut retreats = 0usize;
    loop {
        match call(hi) {
            Ok((_, fp)) => {
                let g = fp + q;
                if g > 0.0 {
                    ghi = g;
                    break;
                }
                lo = hi;
                glo = g;
                doublings += 1;
                if doublings > MAX_DOUBLINGS {
                    return Err(Error::Unbracketable { doublings: MAX_DOUBLINGS, lambda_max: hi });
                }
                hi *= 2.0;
            }
            Err(e) => {
                retreats += 1;
                if retreats > MAX_DOUBLINGS || hi - lo <= 1e-12 * hi.max(1.0) {
                    return Err(wrap(hi, e));
                }
                hi = lo + 0.5 * (hi - lo);
            }
        }
    }

    // Illinois-modified regula falsi on g = F' + q, bisecting when the
    // secant point crowds an end.
    let mut side = 0i8;
    let mut best = (lo, glo);
    for _ in 0..200 {
        let width = hi - lo;
        let mut x = hi - ghi * width / (ghi - glo);
        if !(x > lo + 1e-3 * width && x < hi - 1e-3 * width) {
            x = lo + 0.5 * width;
        }
        let (_, fp) = call(x).map_err(|e| wrap(x, e))?;
        let g = fp + q;
        if g.abs() < best.1.abs() {
            best = (x, g);
        }
        if g.abs() <= ROOT_TOL || width <= 4.0 * f64::EPSILON * hi {
            break;
        }
        if g > 0.0 {
            hi = x;
            ghi = g;
            if side == 1 {
                glo *= 0.5;
            }
            side = 1;
        } else {
            lo = x;
            glo = g;
            if side == -1 {
                ghi *= 0.5;
            }
            side = -1;
        }
    }
    let lambda_hat = best.0;
    let (f_hat, fprime_hat) = call(lambda_hat).map_err(|e| wrap(lambda_hat, e))?;
    Ok(DualRoot {
        lambda_hat,
        j: -lambda_hat * q - f_hat,
        boundary: false,
        saddle_residual: (fprime_hat + q).abs(),
        bracket: (lo, hi),
        f_hat,
        fprime_hat,
        evaluations,
    })
}

/// The rate computation behind a dual solution, kept for policy assembly,
/// tilting and diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Artifacts {
    Linear(RiccatiSolution),
    Grid(GridSolution),
    /// A frozen linear portfolio evaluated in closed form.
    LinearPolicy(PolicyRateSolution),
    /// A frozen portfolio evaluated on the grid.
    GridPolicy(GridSolution),
}

impl Artifacts {
    pub fn lambda(&self) -> f64 {
        match self {
            Artifacts::Linear(s) => s.lambda,
            Artifacts::Grid(g) | Artifacts::GridPolicy(g) => g.lambda,
            Artifacts::LinearPolicy(p) => p.lambda,
        }
    }

    /// Gradient of the value function.
    pub fn gradient(&self) -> GradientForm {
        match self {
            Artifacts::Linear(s) => GradientForm::Affine { p: s.p.clone(), p2: s.p2.clone() },
            Artifacts::LinearPolicy(s) => GradientForm::Affine { p: s.p.clone(), p2: s.p2.clone() },
            Artifacts::Grid(g) | Artifacts::GridPolicy(g) => {
                GradientForm::Tabulated { xs: g.xs.clone(), values: g.fprime.clone() }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientForm {
    Affine { p: DMatrix<f64>, p2: DVector<f64> },
    /// Scalar factor only; clamped beyond the ends.
    Tabulated { xs: Vec<f64>, values: Vec<f64> },
}

impl GradientForm {
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            GradientForm::Affine { p, p2 } => {
                let l = p2.len();
                for i in 0..l {
                    let mut acc = p2[i];
                    for j in 0..l {
                        acc += p[(i, j)] * x[j];
                    }
                    out[i] = acc;
                }
            }
            GradientForm::Tabulated { xs, values } => out[0] = bellman1d::interpolate(xs, values, x[0]),
        }
    }

    pub fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(x.len());
        self.eval_into(x.as_slice(), out.as_mut_slice());
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualSolution {
    pub q: f64,
    pub lambda_hat: f64,
    #[serde(rename = "J")]
    pub j: f64,
    pub boundary: bool,
    pub saddle_residual: f64,
    pub bracket: (f64, f64),
    pub f_hat: f64,
    pub fprime_hat: f64,
    pub artifacts: Artifacts,
}

impl DualSolution {
    fn assemble(q: f64, root: DualRoot, artifacts: Artifacts) -> Self {
        DualSolution {
            q,
            lambda_hat: root.lambda_hat,
            j: root.j,
            boundary: root.boundary,
            saddle_residual: root.saddle_residual,
            bracket: root.bracket,
            f_hat: root.f_hat,
            fprime_hat: root.fprime_hat,
            artifacts,
        }
    }
}

fn refuse_degenerate(s: &MarketScenario, q: f64) -> Result<()> {
    if s.beta.iter().all(|&v| v == 0.0) {
        let verdict = conditions::check_degenerate_benchmark(s, q);
        return Err(if verdict.safe_only_optimal {
            Error::SafeSecurityOptimal(verdict.message)
        } else {
            Error::Unsupported(verdict.message)
        });
    }
    Ok(())
}

fn require_stable_boundary(s: &MarketScenario, root: &DualRoot) -> Result<()> {
    if root.boundary {
        let report = conditions::check_all(s, &conditions::default_probe(s), conditions::DEFAULT_SHELL_RADIUS);
        if !report.passed.stability {
            return Err(Error::BoundaryRefused(format!(
                "the maximizer is lambda = 0 but the factor drift fails the stability check (margin {:.3e})",
                report.stability_margin
            )));
        }
    }
    Ok(())
}

/// Dual solution in closed form for a linear-Gaussian scenario.
pub fn solve_linear(s: &MarketScenario, q: f64) -> Result<DualSolution> {
    refuse_degenerate(s, q)?;
    s.require_linear()?;
    let root = shortfall_rate(q, |lam| gaussian::rate_point(lam, s).map(|(sol, fp)| (sol.f, fp)), 1.0)?;
    require_stable_boundary(s, &root)?;
    let sol = gaussian::rate_f(root.lambda_hat, s)?;
    Ok(DualSolution::assemble(q, root, Artifacts::Linear(sol)))
}

/// Dual solution from the grid solver for a scalar factor.
pub fn solve_grid(s: &MarketScenario, q: f64, cfg: &GridConfig) -> Result<DualSolution> {
    refuse_degenerate(s, q)?;
    let point = |lam: f64| -> Result<(f64, f64)> {
        let sol = bellman1d::solve_ergodic_hjb(lam, s, cfg)?;
        Ok((sol.ergodic_constant, bellman1d::rate_derivative_grid(&sol, s)))
    };
    let root = shortfall_rate(q, point, 1.0)?;
    require_stable_boundary(s, &root)?;
    let sol = bellman1d::solve_ergodic_hjb(root.lambda_hat, s, cfg)?;
    Ok(DualSolution::assemble(q, root, Artifacts::Grid(sol)))
}

/// Dispatches on the scenario kind: closed form when linear, grid otherwise.
pub fn solve(s: &MarketScenario, q: f64, cfg: Option<&GridConfig>) -> Result<DualSolution> {
    match (s.linear(), cfg) {
        (Some(_), None) => solve_linear(s, q),
        (_, Some(cfg)) => solve_grid(s, q, cfg),
        (None, None) => {
            let r = bellman1d::default_radius(s)?;
            solve_grid(s, q, &GridConfig::new(r, 2001))
        }
    }
}

/// Shortfall rate of a frozen portfolio: the same dual problem with the
/// rate of that portfolio in place of the optimized one.
pub fn policy_shortfall_rate(
    s: &MarketScenario,
    q: f64,
    policy: &PortfolioPolicy,
    cfg: Option<&GridConfig>,
) -> Result<DualSolution> {
    refuse_degenerate(s, q)?;
    match (&policy.form, policy.tau, cfg) {
        (PolicyForm::Linear { gain, offset }, None, None) => {
            let root = shortfall_rate(
                q,
                |lam| gaussian::evaluate_linear_policy(lam, s, gain, offset).map(|e| (e.f, e.fprime)),
                1.0,
            )?;
            let ev = gaussian::evaluate_linear_policy(root.lambda_hat, s, gain, offset)?;
            Ok(DualSolution::assemble(q, root, Artifacts::LinearPolicy(ev)))
        }
        _ => {
            let cfg = match cfg {
                Some(c) => *c,
                None => GridConfig::new(bellman1d::default_radius(s)?, 2001),
            };
            let u = |x: f64| policy.eval(s, &DVector::from_element(1, x));
            let point = |lam: f64| -> Result<(f64, f64)> {
                let sol = bellman1d::solve_policy_hjb(lam, s, &cfg, u)?;
                Ok((sol.ergodic_constant, bellman1d::policy_rate_derivative_grid(&sol, s, u)))
            };
            let root = shortfall_rate(q, point, 1.0)?;
            let sol = bellman1d::solve_policy_hjb(root.lambda_hat, s, &cfg, u)?;
            Ok(DualSolution::assemble(q, root, Artifacts::GridPolicy(sol)))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyForm {
    /// `u(x) = K x + k0`.
    Linear { gain: DMatrix<f64>, offset: DVector<f64> },
    /// Scalar factor: per-node portfolios, linearly interpolated and clamped
    /// beyond the ends.
    Tabulated { xs: Vec<f64>, values: Vec<Vec<f64>> },
    /// The log-optimal feedback `c^{-1}(a(x) - r(x) 1)`.
    Kelly,
    /// Everything in the safe security.
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioPolicy {
    pub lambda_hat: f64,
    pub form: PolicyForm,
    /// Truncation radius; `None` means no truncation.
    pub tau: Option<f64>,
}

impl PortfolioPolicy {
    pub fn zero() -> Self {
        PortfolioPolicy { lambda_hat: 0.0, form: PolicyForm::Zero, tau: None }
    }

    pub fn kelly() -> Self {
        PortfolioPolicy { lambda_hat: 0.0, form: PolicyForm::Kelly, tau: None }
    }

    /// Kelly feedback in explicit linear form for linear scenarios.
    pub fn kelly_linear(s: &MarketScenario) -> Result<Self> {
        let lin = s.require_linear()?;
        Ok(PortfolioPolicy {
            lambda_hat: 0.0,
            form: PolicyForm::Linear {
                gain: s.c_inv() * lin.excess_slope(),
                offset: s.c_inv() * lin.excess_offset(),
            },
            tau: None,
        })
    }

    /// Evaluates the portfolio at `x` without allocating. `excess` is
    /// `a(x) - r(x) 1` and is only read by the Kelly form.
    pub fn eval_into(&self, x: &[f64], excess: &[f64], c_inv: &DMatrix<f64>, out: &mut [f64]) {
        if let Some(tau) = self.tau {
            let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > tau {
                out.iter_mut().for_each(|v| *v = 0.0);
                return;
            }
        }
        match &self.form {
            PolicyForm::Linear { gain, offset } => {
                for i in 0..offset.len() {
                    let mut acc = offset[i];
                    for (j, xj) in x.iter().enumerate() {
                        acc += gain[(i, j)] * xj;
                    }
                    out[i] = acc;
                }
            }
            PolicyForm::Tabulated { xs, values } => {
                let n = out.len();
                let x = x[0];
                let last = xs.len() - 1;
                let (k, t) = if x <= xs[0] {
                    (0, 0.0)
                } else if x >= xs[last] {
                    (last - 1, 1.0)
                } else {
                    let dx = xs[1] - xs[0];
                    let k = (((x - xs[0]) / dx) as usize).min(last - 1);
                    (k, (x - xs[k]) / dx)
                };
                for i in 0..n {
                    out[i] = values[k][i] + t * (values[k + 1][i] - values[k][i]);
                }
            }
            PolicyForm::Kelly => {
                for i in 0..out.len() {
                    out[i] = (0..excess.len()).map(|j| c_inv[(i, j)] * excess[j]).sum();
                }
            }
            PolicyForm::Zero => out.iter_mut().for_each(|v| *v = 0.0),
        }
    }

    pub fn eval(&self, s: &MarketScenario, x: &DVector<f64>) -> DVector<f64> {
        let frame = s.eval(x);
        let mut out = DVector::zeros(s.dims.n);
        self.eval_into(x.as_slice(), frame.excess().as_slice(), s.c_inv(), out.as_mut_slice());
        out
    }
}

/// The optimal portfolio at `sol.lambda_hat`: linear from the Riccati
/// artifacts, tabulated at the grid nodes otherwise.
pub fn build_policy(sol: &DualSolution, s: &MarketScenario) -> Result<PortfolioPolicy> {
    let form = match &sol.artifacts {
        Artifacts::Linear(r) => {
            let (gain, offset) = gaussian::optimal_policy_coefficients(r, s)?;
            PolicyForm::Linear { gain, offset }
        }
        Artifacts::Grid(g) => {
            let values = g
                .xs
                .iter()
                .zip(&g.fprime)
                .map(|(&x, &p)| {
                    let frame = s.eval_scalar(x);
                    hamiltonian::optimal_u(g.lambda, &DVector::from_element(1, p), &frame)
                        .iter()
                        .copied()
                        .collect()
                })
                .collect();
            PolicyForm::Tabulated { xs: g.xs.clone(), values }
        }
        Artifacts::LinearPolicy(_) | Artifacts::GridPolicy(_) => {
            return Err(Error::Unsupported("a frozen portfolio's dual solution carries no optimal portfolio".into()))
        }
    };
    Ok(PortfolioPolicy { lambda_hat: sol.lambda_hat, form, tau: None })
}

/// The same portfolio, set to zero outside the closed ball of radius `tau`.
pub fn truncate_policy(policy: &PortfolioPolicy, tau: f64) -> PortfolioPolicy {
    assert!(tau > 0.0, "truncation radius must be positive");
    PortfolioPolicy { tau: if tau.is_finite() { Some(tau) } else { None }, ..policy.clone() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthCheck {
    pub varrho: f64,
    /// Largest leading coefficient of the quadratic fit of `g` along the rays.
    pub quadratic_coefficient: f64,
    pub max_value: f64,
    /// `g <= C1 |x| + C2` is plausible: no quadratic growth.
    pub linear_bound: bool,
    /// `g` goes to minus infinity, or stays uniformly negative without growth.
    pub tends_to_minus_infinity: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncationReport {
    pub checks: Vec<GrowthCheck>,
    pub all_linear_bound: bool,
    pub all_minus_infinity: bool,
}

/// Probe directions: coordinate axes and the diagonal, both signs.
fn probe_directions(l: usize) -> Vec<DVector<f64>> {
    let mut dirs = Vec::new();
    for i in 0..l {
        for sign in [1.0, -1.0] {
            let mut e = DVector::zeros(l);
            e[i] = sign;
            dirs.push(e);
        }
    }
    if l > 1 {
        let d = DVector::from_element(l, 1.0 / (l as f64).sqrt());
        dirs.push(d.clone());
        dirs.push(-d);
    }
    dirs
}

/// Least-squares fit `y = c0 + c1 r + c2 r^2`, returning `c2`.
fn quadratic_fit(r: &[f64], y: &[f64]) -> f64 {
    let a = DMatrix::from_fn(r.len(), 3, |i, j| r[i].powi(j as i32));
    let b = DVector::from_column_slice(y);
    let svd = a.svd(true, true);
    svd.solve(&b, 1e-14).map(|c| c[2]).unwrap_or(f64::NAN)
}

/// Evaluates `g(x) = (1 + varrho) |b sigma^T grad f(x)|^2_{c^{-1}} - |a(x) - r(x) 1|^2_{c^{-1}}`
/// along rays through the origin at the given radii, for
/// `varrho in {0.01, 0.1, 1}`.
pub fn check_truncation_conditions(sol: &DualSolution, s: &MarketScenario, radii: &[f64]) -> TruncationReport {
    let grad = sol.artifacts.gradient();
    let bs = &s.b * s.sigma.transpose();
    let dirs = match grad {
        GradientForm::Tabulated { .. } => vec![DVector::from_element(1, 1.0), DVector::from_element(1, -1.0)],
        GradientForm::Affine { .. } => probe_directions(s.dims.l),
    };
    let scale = 1.0 + radii.iter().cloned().fold(0.0, f64::max).powi(2);
    let checks = [0.01, 0.1, 1.0]
        .iter()
        .map(|&varrho| {
            let mut lead = f64::NEG_INFINITY;
            let mut max_value = f64::NEG_INFINITY;
            let mut slope_up = false;
            for d in &dirs {
                let ys: Vec<f64> = radii
                    .iter()
                    .map(|&r| {
                        let x = d * r;
                        let frame = s.eval(&x);
                        let v = &bs * grad.eval(&x);
                        let e = frame.excess();
                        (1.0 + varrho) * v.dot(&(s.c_inv() * &v)) - e.dot(&(s.c_inv() * &e))
                    })
                    .collect();
                max_value = ys.iter().cloned().fold(max_value, f64::max);
                lead = lead.max(quadratic_fit(radii, &ys));
                let k = ys.len();
                if k >= 2 && ys[k - 1] > ys[k - 2] + 1e-12 * (1.0 + ys[k - 2].abs()) {
                    slope_up = true;
                }
            }
            let tol = 1e-10 * (1.0 + max_value.abs()) / scale;
            let linear_bound = lead <= tol;
            let tends_to_minus_infinity = lead < -tol || (lead <= tol && max_value < 0.0 && !slope_up);
            GrowthCheck { varrho, quadratic_coefficient: lead, max_value, linear_bound, tends_to_minus_infinity }
        })
        .collect::<Vec<_>>();
    TruncationReport {
        all_linear_bound: checks.iter().all(|c| c.linear_bound),
        all_minus_infinity: checks.iter().all(|c| c.tends_to_minus_infinity),
        checks,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaddleCheck {
    /// `E[M(u) - lambda |N(u)|^2 + grad f^T sigma N(u)]` under the tilted law.
    pub value: f64,
    pub q: f64,
    /// `|value - q|` at interior maximizers, `max(0, value - q)` at the boundary.
    pub residual: f64,
    pub interior: bool,
}

/// Saddle diagnostic: exact Gaussian moments for linear artifacts,
/// quadrature against the grid density otherwise.
pub fn check_saddle(sol: &DualSolution, s: &MarketScenario) -> Result<SaddleCheck> {
    let value = match &sol.artifacts {
        Artifacts::Linear(r) => -gaussian::rate_derivative(r, s)?,
        Artifacts::Grid(g) => -bellman1d::rate_derivative_grid(g, s),
        Artifacts::LinearPolicy(p) => -p.fprime,
        Artifacts::GridPolicy(_) => {
            return Err(Error::Unsupported("saddle check needs the optimal portfolio".into()))
        }
    };
    let interior = !sol.boundary;
    let residual = if interior { (value - sol.q).abs() } else { (value - sol.q).max(0.0) };
    Ok(SaddleCheck { value, q: sol.q, residual, interior })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{reference_parametric_affine, reference_scenario};
    use crate::model::Drift;
    use approx::assert_abs_diff_eq;

    const Q_INTERIOR: f64 = 0.0425 - 0.01;

    #[test]
    fn root_on_a_parabola() {
        // F = lambda^2 - lambda: F' + q = 0 at lambda = (1 - q) / 2
        let root = shortfall_rate(0.2, |l| Ok((l * l - l, 2.0 * l - 1.0)), 0.01).unwrap();
        assert_abs_diff_eq!(root.lambda_hat, 0.4, epsilon = 1e-10);
        assert_abs_diff_eq!(root.j, -0.4 * 0.2 - (0.16 - 0.4), epsilon = 1e-10);
        assert!(!root.boundary);
    }

    #[test]
    fn root_with_finite_domain() {
        // F = -log(1 - lambda) - 2 lambda, infinite beyond lambda = 1
        let oracle = |l: f64| {
            if l >= 1.0 {
                Err(Error::NoStabilizingSolution("blow-up".into()))
            } else {
                Ok((-(1.0 - l).ln() - 2.0 * l, 1.0 / (1.0 - l) - 2.0))
            }
        };
        let root = shortfall_rate(0.5, oracle, 4.0).unwrap();
        // 1/(1-l) = 1.5
        assert_abs_diff_eq!(root.lambda_hat, 1.0 / 3.0, epsilon = 1e-10);
    }

    #[test]
    fn unbracketable_is_reported() {
        let err = shortfall_rate(1.0, |l| Ok((-2.0 * l, -2.0)), 1.0).unwrap_err();
        assert!(matches!(err, Error::Unbracketable { .. }));
    }

    #[test]
    fn boundary_when_target_below_growth() {
        let s = reference_scenario();
        let sol = solve_linear(&s, 0.05).unwrap();
        assert!(sol.boundary);
        assert_eq!(sol.lambda_hat, 0.0);
        assert!(sol.j.abs() < 1e-15);
        let pol = build_policy(&sol, &s).unwrap();
        let kelly = PortfolioPolicy::kelly_linear(&s).unwrap();
        assert_eq!(pol.form, kelly.form);
        let saddle = check_saddle(&sol, &s).unwrap();
        assert!(saddle.value <= sol.q + 1e-8);
    }

    #[test]
    fn interior_reference_solution() {
        let s = reference_scenario();
        let sol = solve_linear(&s, Q_INTERIOR).unwrap();
        assert!(!sol.boundary && sol.lambda_hat > 0.0);
        assert!(sol.saddle_residual <= 1e-8);
        let f = gaussian::rate_f(sol.lambda_hat, &s).unwrap().f;
        assert_abs_diff_eq!(sol.j, -sol.lambda_hat * sol.q - f, epsilon = 1e-12);
        assert!(sol.j >= 0.0);
        assert!(check_saddle(&sol, &s).unwrap().residual <= 1e-8);
        // envelope: lambda_hat maximizes the dual objective
        for i in 0..20 {
            let lam = 0.37 * i as f64;
            let v = -lam * sol.q - gaussian::rate_f(lam, &s).unwrap().f;
            assert!(v <= sol.j + 1e-10);
        }
    }

    #[test]
    fn policy_coefficients_match_formula() {
        let s = reference_scenario();
        let sol = solve_linear(&s, Q_INTERIOR).unwrap();
        let pol = build_policy(&sol, &s).unwrap();
        let Artifacts::Linear(r) = &sol.artifacts else { panic!() };
        let lam = sol.lambda_hat;
        let (p, p2) = (r.p[(0, 0)], r.p2[0]);
        // c = 0.04, b sigma^T = 0.012, G = 0.4, g = 0.04, b beta = 0.01
        let k = (0.4 + 0.012 * p) / 0.04 / (1.0 + lam);
        let k0 = (0.04 + lam * 0.01 + 0.012 * p2) / 0.04 / (1.0 + lam);
        let PolicyForm::Linear { gain, offset } = &pol.form else { panic!() };
        assert_abs_diff_eq!(gain[(0, 0)], k, epsilon = 1e-12);
        assert_abs_diff_eq!(offset[0], k0, epsilon = 1e-12);
    }

    #[test]
    fn rate_monotone_and_continuous_in_q() {
        let s = reference_scenario();
        let qs: Vec<f64> = (0..50).map(|i| -0.05 + 0.002 * i as f64).collect();
        let sols: Vec<DualSolution> = qs.iter().map(|&q| solve_linear(&s, q).unwrap()).collect();
        let lmax = sols.iter().map(|d| d.lambda_hat).fold(0.0, f64::max);
        for w in sols.windows(2) {
            assert!(w[1].j <= w[0].j + 1e-12);
            assert!((w[0].j - w[1].j).abs() <= lmax * 0.002 + 1e-12);
        }
    }

    #[test]
    fn truncation_semantics() {
        let s = reference_scenario();
        let pol = PortfolioPolicy::kelly_linear(&s).unwrap();
        assert_eq!(truncate_policy(&pol, f64::INFINITY), pol);
        let t = truncate_policy(&pol, 0.3);
        let at = |x: f64| t.eval(&s, &DVector::from_element(1, x))[0];
        assert_abs_diff_eq!(at(0.3), pol.eval(&s, &DVector::from_element(1, 0.3))[0], epsilon = 0.0);
        assert_abs_diff_eq!(at(-0.3), pol.eval(&s, &DVector::from_element(1, -0.3))[0], epsilon = 0.0);
        assert_eq!(at(0.3 + 1e-12), 0.0);
        assert_eq!(at(-0.31), 0.0);
    }

    #[test]
    fn kelly_forms_agree() {
        let s = reference_scenario();
        let lin = PortfolioPolicy::kelly_linear(&s).unwrap();
        let exact = PortfolioPolicy::kelly();
        for x in [-1.0, 0.0, 0.7] {
            let x = DVector::from_element(1, x);
            assert_abs_diff_eq!(lin.eval(&s, &x)[0], exact.eval(&s, &x)[0], epsilon = 1e-14);
        }
    }

    #[test]
    fn truncation_report_reference() {
        let s = reference_scenario();
        let sol = solve_linear(&s, Q_INTERIOR).unwrap();
        let Artifacts::Linear(r) = &sol.artifacts else { panic!() };
        let radii: Vec<f64> = (1..=20).map(|i| 0.5 * i as f64).collect();
        let rep = check_truncation_conditions(&sol, &s, &radii);
        let lead = |varrho: f64| ((1.0 + varrho) * (0.012 * r.p[(0, 0)]).powi(2) - 0.16) / 0.04;
        for c in &rep.checks {
            assert_abs_diff_eq!(c.quadratic_coefficient, lead(c.varrho), epsilon = 1e-8);
            assert_eq!(c.tends_to_minus_infinity, lead(c.varrho) < 0.0);
        }
        assert!(rep.all_linear_bound && rep.all_minus_infinity);
    }

    #[test]
    fn truncation_report_constant_coefficients() {
        let mut s = reference_scenario();
        if let Drift::Linear(lin) = &mut s.drift {
            lin.a1[(0, 0)] = 0.0;
        }
        let sol = solve_linear(&s, 0.0).unwrap();
        let radii: Vec<f64> = (1..=10).map(|i| i as f64).collect();
        let rep = check_truncation_conditions(&sol, &s, &radii);
        for c in &rep.checks {
            // P = 0 when the excess return does not load on the factor; g = -|a2 - r2|^2 / c
            assert!(c.quadratic_coefficient.abs() < 1e-10);
            assert!(c.max_value < 0.0);
        }
        assert!(rep.all_linear_bound && rep.all_minus_infinity);
    }

    #[test]
    fn truncation_report_flags_adversarial_instance() {
        // sigma nearly collinear with b and an excess return that pushes the
        // factor outward: |b sigma^T P| outgrows the excess-return slope
        let mut s = reference_scenario();
        s.sigma = DMatrix::from_row_slice(1, 3, &[0.1, 0.01, 0.0]);
        if let Drift::Linear(lin) = &mut s.drift {
            lin.a1[(0, 0)] = -0.4;
            lin.theta1[(0, 0)] = -0.05;
        }
        let s = MarketScenario::new(s.dims, s.drift, s.b, s.beta, s.sigma, s.x0).unwrap();
        let (_, fp0) = gaussian::rate_point(0.0, &s).unwrap();
        let sol = solve_linear(&s, -fp0 - 0.1).unwrap();
        assert!(!sol.boundary);
        let radii: Vec<f64> = (1..=10).map(|i| i as f64).collect();
        let rep = check_truncation_conditions(&sol, &s, &radii);
        assert!(!rep.all_minus_infinity, "{rep:?}");
    }

    #[test]
    fn degenerate_benchmark_refused() {
        let mut s = reference_scenario();
        s.beta = DVector::zeros(3);
        let s = MarketScenario::new_unchecked_benchmark(s.dims, s.drift, s.b, s.beta, s.sigma, s.x0).unwrap();
        // r - alpha = -0.01 here
        assert!(matches!(solve_linear(&s, -0.05), Err(Error::SafeSecurityOptimal(_))));
        assert!(matches!(solve_linear(&s, 0.02), Err(Error::Unsupported(_))));
    }

    #[test]
    fn grid_dual_agrees_with_closed_form() {
        let s = reference_parametric_affine();
        let lin = s.affine_equivalent().unwrap();
        let exact = solve_linear(&lin, Q_INTERIOR).unwrap();
        let grid = solve_grid(&s, Q_INTERIOR, &GridConfig::new(0.7, 1401)).unwrap();
        assert!((grid.lambda_hat - exact.lambda_hat).abs() < 1e-3);
        assert!((grid.j - exact.j).abs() < 1e-5);
        assert!(check_saddle(&grid, &s).unwrap().residual <= 1e-3);
        let pol = build_policy(&grid, &s).unwrap();
        let lin_pol = build_policy(&exact, &lin).unwrap();
        for x in [-0.2, 0.0, 0.15] {
            let x = DVector::from_element(1, x);
            assert!((pol.eval(&s, &x)[0] - lin_pol.eval(&lin, &x)[0]).abs() < 1e-2);
        }
    }

    #[test]
    fn kelly_rate_is_below_optimal() {
        let s = reference_scenario();
        let opt = solve_linear(&s, Q_INTERIOR).unwrap();
        let kelly = policy_shortfall_rate(&s, Q_INTERIOR, &PortfolioPolicy::kelly_linear(&s).unwrap(), None).unwrap();
        assert!(kelly.j < opt.j);
        assert!(kelly.j > 0.0);
    }
}
