//! Euler-Maruyama simulation of the factor and of the time-averaged log
//! return relative to the benchmark, with optional Girsanov tilting, and the
//! Monte Carlo estimators built on it.
//!
//! Every path draws from its own ChaCha stream keyed by `(seed, path index)`
//! and results are reduced in path order, so runs are bit-reproducible for
//! any thread count. Under a tilt with drift correction `d(x)`, the Brownian
//! increment is `dW = dW~ + d dt` and the log weight accumulates
//! `-d.dW~ - |d|^2 dt / 2`, the exact likelihood ratio of the discretized
//! paths.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dual::{self, Artifacts, DualSolution, GradientForm, PolicyForm, PortfolioPolicy};
use crate::error::{Error, Result};
use crate::model::{Drift, MarketScenario, ParametricDrift};

/// States beyond this norm flag the path as exploded.
pub const EXPLOSION_BOUND: f64 = 1e6;
/// Largest tolerated fraction of exploded paths.
pub const EXPLOSION_FRACTION: f64 = 1e-3;
const CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub horizons: Vec<f64>,
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<Vec<usize>> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.horizons.is_empty() {
            return bad("no horizons".into());
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if self.horizons.windows(2).any(|w| w[1] <= w[0]) || self.horizons[0] <= 0.0 {
            return bad("horizons must be positive and increasing".into());
        }
        if self.dt > self.horizons[0] / 100.0 + 1e-15 {
            return bad(format!("dt = {} exceeds the shortest horizon / 100", self.dt));
        }
        if self.n_paths < 100 {
            return bad(format!("at least 100 paths are required, got {}", self.n_paths));
        }
        self.horizons
            .iter()
            .map(|&t| {
                let steps = (t / self.dt).round();
                if (steps * self.dt - t).abs() > 1e-9 * t {
                    Err(Error::InvalidConfig(format!("horizon {t} is not a multiple of dt = {}", self.dt)))
                } else {
                    Ok(steps as usize)
                }
            })
            .collect()
    }
}

/// Drift change `d(x) = -lambda N(u(x), x) + sigma^T grad f(x)` defining the
/// tilted measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tilt {
    pub lambda: f64,
    pub gradient: GradientForm,
    pub policy: PortfolioPolicy,
}

impl Tilt {
    /// The optimal tilt of a dual solution, paired with its optimal portfolio.
    pub fn optimal(sol: &DualSolution, s: &MarketScenario) -> Result<Tilt> {
        Ok(Tilt { lambda: sol.lambda_hat, gradient: sol.artifacts.gradient(), policy: dual::build_policy(sol, s)? })
    }

    /// The tilt belonging to a frozen portfolio's own dual solution.
    pub fn for_policy(sol: &DualSolution, policy: &PortfolioPolicy) -> Result<Tilt> {
        match sol.artifacts {
            Artifacts::LinearPolicy(_) | Artifacts::GridPolicy(_) => {
                Ok(Tilt { lambda: sol.lambda_hat, gradient: sol.artifacts.gradient(), policy: policy.clone() })
            }
            _ => Err(Error::InvalidConfig("expected the dual solution of a frozen portfolio".into())),
        }
    }

    pub fn is_trivial(&self) -> bool {
        let zero_grad = match &self.gradient {
            GradientForm::Affine { p, p2 } => p.iter().chain(p2.iter()).all(|v| *v == 0.0),
            GradientForm::Tabulated { values, .. } => values.iter().all(|v| *v == 0.0),
        };
        self.lambda == 0.0 && zero_grad
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    Physical,
    Tilted(Tilt),
}

/// Per-path states at every horizon. Layout per path:
/// `[flag, (log_weight, x[0..l], L[0..policies]) per horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub horizons: Vec<f64>,
    pub n_paths: usize,
    pub n_policies: usize,
    pub l: usize,
    pub flagged: usize,
    records: Vec<f64>,
}

impl SimOutput {
    fn horizon_stride(&self) -> usize {
        1 + self.l + self.n_policies
    }

    fn stride(&self) -> usize {
        1 + self.horizons.len() * self.horizon_stride()
    }

    fn base(&self, path: usize, h: usize) -> usize {
        path * self.stride() + 1 + h * self.horizon_stride()
    }

    pub fn is_flagged(&self, path: usize) -> bool {
        self.records[path * self.stride()] != 0.0
    }

    pub fn log_weight(&self, path: usize, h: usize) -> f64 {
        self.records[self.base(path, h)]
    }

    pub fn state(&self, path: usize, h: usize) -> &[f64] {
        let b = self.base(path, h) + 1;
        &self.records[b..b + self.l]
    }

    /// Time-averaged relative log return `L_t` of policy `j`.
    pub fn log_return(&self, path: usize, h: usize, j: usize) -> f64 {
        self.records[self.base(path, h) + 1 + self.l + j]
    }
}

/// Drift coefficients flattened row-major for the inner loop.
enum FastDrift {
    Linear {
        a1: Vec<f64>,
        a2: Vec<f64>,
        r1: Vec<f64>,
        r2: f64,
        alpha1: Vec<f64>,
        alpha2: f64,
        theta1: Vec<f64>,
        theta2: Vec<f64>,
    },
    Parametric(ParametricDrift),
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let (r, c) = m.shape();
    (0..r * c).map(|idx| m[(idx / c, idx % c)]).collect()
}

impl FastDrift {
    fn new(s: &MarketScenario) -> Self {
        match &s.drift {
            Drift::Linear(lin) => FastDrift::Linear {
                a1: row_major(&lin.a1),
                a2: lin.a2.iter().copied().collect(),
                r1: lin.r1.iter().copied().collect(),
                r2: lin.r2,
                alpha1: lin.alpha1.iter().copied().collect(),
                alpha2: lin.alpha2,
                theta1: row_major(&lin.theta1),
                theta2: lin.theta2.iter().copied().collect(),
            },
            Drift::Parametric1d(par) => FastDrift::Parametric(par.clone()),
        }
    }

    /// Writes `a(x) - r(x) 1` and `theta(x)`; returns `r(x) - alpha(x)`.
    #[inline(always)]
    fn eval(&self, x: &[f64], excess: &mut [f64], theta: &mut [f64]) -> f64 {
        match self {
            FastDrift::Linear { a1, a2, r1, r2, alpha1, alpha2, theta1, theta2 } => {
                let l = x.len();
                let mut r = *r2;
                let mut alpha = *alpha2;
                for j in 0..l {
                    r += r1[j] * x[j];
                    alpha += alpha1[j] * x[j];
                }
                for (i, e) in excess.iter_mut().enumerate() {
                    let mut acc = a2[i] - r;
                    for j in 0..l {
                        acc += a1[i * l + j] * x[j];
                    }
                    *e = acc;
                }
                for (i, th) in theta.iter_mut().enumerate() {
                    let mut acc = theta2[i];
                    for j in 0..l {
                        acc += theta1[i * l + j] * x[j];
                    }
                    *th = acc;
                }
                r - alpha
            }
            FastDrift::Parametric(par) => {
                let x = x[0];
                let r = par.r.eval(x);
                for (e, coef) in excess.iter_mut().zip(&par.a) {
                    *e = coef.eval(x) - r;
                }
                theta[0] = par.theta.eval(x);
                r - par.alpha.eval(x)
            }
        }
    }
}

/// Uniform table on a scalar factor, clamped at the ends.
struct Table {
    x0: f64,
    inv_dx: f64,
    last: usize,
    width: usize,
    values: Vec<f64>,
}

impl Table {
    fn new(xs: &[f64], rows: impl Iterator<Item = f64>, width: usize) -> Self {
        Table { x0: xs[0], inv_dx: 1.0 / (xs[1] - xs[0]), last: xs.len() - 1, width, values: rows.collect() }
    }

    #[inline(always)]
    fn eval(&self, x: f64, out: &mut [f64]) {
        let pos = (x - self.x0) * self.inv_dx;
        let (k, t) = if pos <= 0.0 {
            (0, 0.0)
        } else if pos >= self.last as f64 {
            (self.last - 1, 1.0)
        } else {
            let k = (pos as usize).min(self.last - 1);
            (k, pos - k as f64)
        };
        let w = self.width;
        for (i, o) in out.iter_mut().enumerate() {
            let lo = self.values[k * w + i];
            *o = lo + t * (self.values[(k + 1) * w + i] - lo);
        }
    }
}

enum FastForm {
    Linear { gain: Vec<f64>, offset: Vec<f64> },
    Table(Table),
    Kelly { c_inv: Vec<f64> },
    Zero,
}

/// A portfolio compiled for the inner loop.
struct FastPolicy {
    tau_sq: f64,
    form: FastForm,
}

impl FastForm {
    fn new(form: &PolicyForm, s: &MarketScenario) -> Self {
        let n = s.dims.n;
        match form {
            PolicyForm::Linear { gain, offset } => {
                FastForm::Linear { gain: row_major(gain), offset: offset.iter().copied().collect() }
            }
            PolicyForm::Tabulated { xs, values } => {
                FastForm::Table(Table::new(xs, values.iter().flat_map(|v| v.iter().copied()), n))
            }
            PolicyForm::Kelly => FastForm::Kelly { c_inv: row_major(s.c_inv()) },
            PolicyForm::Zero => FastForm::Zero,
        }
    }
}

impl FastPolicy {
    fn new(p: &PortfolioPolicy, s: &MarketScenario) -> Self {
        FastPolicy { tau_sq: p.tau.map_or(f64::INFINITY, |t| t * t), form: FastForm::new(&p.form, s) }
    }

    #[inline(always)]
    fn eval(&self, x: &[f64], excess: &[f64], out: &mut [f64]) {
        if self.tau_sq.is_finite() {
            let norm_sq: f64 = x.iter().map(|v| v * v).sum();
            if norm_sq > self.tau_sq {
                out.iter_mut().for_each(|v| *v = 0.0);
                return;
            }
        }
        self.form.eval(x, excess, out);
    }
}

impl FastForm {
    #[inline(always)]
    fn eval(&self, x: &[f64], excess: &[f64], out: &mut [f64]) {
        match self {
            FastForm::Linear { gain, offset } => {
                let l = x.len();
                for (i, o) in out.iter_mut().enumerate() {
                    let mut acc = offset[i];
                    for j in 0..l {
                        acc += gain[i * l + j] * x[j];
                    }
                    *o = acc;
                }
            }
            FastForm::Table(t) => t.eval(x[0], out),
            FastForm::Kelly { c_inv } => {
                let n = out.len();
                for (i, o) in out.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for j in 0..n {
                        acc += c_inv[i * n + j] * excess[j];
                    }
                    *o = acc;
                }
            }
            FastForm::Zero => out.iter_mut().for_each(|v| *v = 0.0),
        }
    }
}

enum FastGradient {
    Affine { p: Vec<f64>, p2: Vec<f64> },
    Table(Table),
}

impl FastGradient {
    fn new(g: &GradientForm) -> Self {
        match g {
            GradientForm::Affine { p, p2 } => FastGradient::Affine { p: row_major(p), p2: p2.iter().copied().collect() },
            GradientForm::Tabulated { xs, values } => FastGradient::Table(Table::new(xs, values.iter().copied(), 1)),
        }
    }

    #[inline(always)]
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        match self {
            FastGradient::Affine { p, p2 } => {
                let l = x.len();
                for (i, o) in out.iter_mut().enumerate() {
                    let mut acc = p2[i];
                    for j in 0..l {
                        acc += p[i * l + j] * x[j];
                    }
                    *o = acc;
                }
            }
            FastGradient::Table(t) => t.eval(x[0], out),
        }
    }
}

struct FastTilt {
    lambda: f64,
    policy: FastPolicy,
    gradient: FastGradient,
}

/// Scenario, tilt and portfolios flattened for the inner loop.
struct Kernel {
    n: usize,
    l: usize,
    k: usize,
    /// `b` row-major, `n x k`.
    b: Vec<f64>,
    /// `sigma` row-major, `l x k`.
    sigma: Vec<f64>,
    beta: Vec<f64>,
    half_beta_sq: f64,
    x0: Vec<f64>,
    drift: FastDrift,
    tilt: Option<FastTilt>,
    /// Distinct untruncated feedback forms among the portfolios.
    forms: Vec<FastForm>,
    /// Per portfolio: index into `forms` and squared truncation radius.
    policies: Vec<(usize, f64)>,
    /// Form whose feedback is already evaluated by an untruncated tilt.
    tilt_form: Option<usize>,
}

impl Kernel {
    fn new(s: &MarketScenario, measure: &Measure, policies: &[PortfolioPolicy]) -> Self {
        let tilt = match measure {
            Measure::Physical => None,
            Measure::Tilted(t) => Some(FastTilt {
                lambda: t.lambda,
                policy: FastPolicy::new(&t.policy, s),
                gradient: FastGradient::new(&t.gradient),
            }),
        };
        let mut distinct: Vec<&PolicyForm> = Vec::new();
        let mut members = Vec::with_capacity(policies.len());
        for p in policies {
            let g = match distinct.iter().position(|f| **f == p.form) {
                Some(g) => g,
                None => {
                    distinct.push(&p.form);
                    distinct.len() - 1
                }
            };
            members.push((g, p.tau.map_or(f64::INFINITY, |t| t * t)));
        }
        let tilt_form = match measure {
            Measure::Tilted(t) if t.policy.tau.is_none() => distinct.iter().position(|f| **f == t.policy.form),
            _ => None,
        };
        Kernel {
            n: s.dims.n,
            l: s.dims.l,
            k: s.dims.k,
            b: row_major(&s.b),
            sigma: row_major(&s.sigma),
            beta: s.beta.iter().copied().collect(),
            half_beta_sq: 0.5 * s.beta.norm_squared(),
            x0: s.x0.iter().copied().collect(),
            drift: FastDrift::new(s),
            tilt,
            forms: distinct.iter().map(|f| FastForm::new(f, s)).collect(),
            policies: members,
            tilt_form,
        }
    }

    /// `out = b^T u`.
    #[inline(always)]
    fn bt_times(&self, u: &[f64], out: &mut [f64]) {
        let k = self.k;
        for (j, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (i, ui) in u.iter().enumerate() {
                acc += self.b[i * k + j] * ui;
            }
            *o = acc;
        }
    }

    /// Drift change `d(x)` of the tilt, written into `ws.d`.
    #[inline(always)]
    fn tilt_drift(&self, tilt: &FastTilt, ws: &mut Scratch) {
        let (l, k) = (self.l, self.k);
        tilt.policy.eval(&ws.x, &ws.excess, &mut ws.tilt_u);
        self.bt_times(&ws.tilt_u, &mut ws.tilt_btu);
        tilt.gradient.eval(&ws.x, &mut ws.grad);
        for j in 0..k {
            let mut st_grad = 0.0;
            for i in 0..l {
                st_grad += self.sigma[i * k + j] * ws.grad[i];
            }
            ws.d[j] = -tilt.lambda * (ws.tilt_btu[j] - self.beta[j]) + st_grad;
        }
    }
}

/// Scratch buffers for one worker.
struct Scratch {
    x: Vec<f64>,
    theta: Vec<f64>,
    excess: Vec<f64>,
    u: Vec<f64>,
    btu: Vec<f64>,
    grad: Vec<f64>,
    d: Vec<f64>,
    dw: Vec<f64>,
    tilt_u: Vec<f64>,
    tilt_btu: Vec<f64>,
    acc: Vec<f64>,
    form_inc: Vec<f64>,
}

impl Scratch {
    fn new(kr: &Kernel) -> Self {
        Scratch {
            x: vec![0.0; kr.l],
            theta: vec![0.0; kr.l],
            excess: vec![0.0; kr.n],
            u: vec![0.0; kr.n],
            btu: vec![0.0; kr.k],
            grad: vec![0.0; kr.l],
            d: vec![0.0; kr.k],
            dw: vec![0.0; kr.k],
            tilt_u: vec![0.0; kr.n],
            tilt_btu: vec![0.0; kr.k],
            acc: vec![0.0; kr.policies.len()],
            form_inc: vec![0.0; kr.forms.len()],
        }
    }
}

fn run_path(kr: &Kernel, steps: &[usize], dt: f64, rng: &mut ChaCha8Rng, ws: &mut Scratch, out: &mut [f64]) {
    let (l, k) = (kr.l, kr.k);
    let hs = 1 + l + kr.policies.len();
    let sqdt = dt.sqrt();
    ws.x.copy_from_slice(&kr.x0);
    ws.acc.iter_mut().for_each(|v| *v = 0.0);
    let mut logw = 0.0;
    let mut step = 0usize;
    out[0] = 0.0;
    for (h, &target) in steps.iter().enumerate() {
        while step < target {
            let r_minus_alpha = kr.drift.eval(&ws.x, &mut ws.excess, &mut ws.theta);
            for dw in ws.dw.iter_mut() {
                *dw = sqdt * rng.sample::<f64, _>(StandardNormal);
            }
            if let Some(tilt) = &kr.tilt {
                kr.tilt_drift(tilt, ws);
                let mut d_sq = 0.0;
                let mut d_dw = 0.0;
                for j in 0..k {
                    d_sq += ws.d[j] * ws.d[j];
                    d_dw += ws.d[j] * ws.dw[j];
                    ws.dw[j] += ws.d[j] * dt;
                }
                logw += -d_dw - 0.5 * d_sq * dt;
            }
            let base = r_minus_alpha + kr.half_beta_sq;
            let mut beta_dw = 0.0;
            for j in 0..k {
                beta_dw += kr.beta[j] * ws.dw[j];
            }
            let zero_inc = base * dt - beta_dw;
            for (g, form) in kr.forms.iter().enumerate() {
                let (u, btu) = if kr.tilt_form == Some(g) {
                    (&ws.tilt_u, &ws.tilt_btu)
                } else {
                    form.eval(&ws.x, &ws.excess, &mut ws.u);
                    kr.bt_times(&ws.u, &mut ws.btu);
                    (&ws.u, &ws.btu)
                };
                let mut ue = 0.0;
                for i in 0..kr.n {
                    ue += u[i] * ws.excess[i];
                }
                let mut ucu = 0.0;
                let mut u_dw = 0.0;
                for j in 0..k {
                    ucu += btu[j] * btu[j];
                    u_dw += btu[j] * ws.dw[j];
                }
                ws.form_inc[g] = (ue - 0.5 * ucu) * dt + u_dw + zero_inc;
            }
            let x_sq: f64 = ws.x.iter().map(|v| v * v).sum();
            for (acc, &(g, tau_sq)) in ws.acc.iter_mut().zip(&kr.policies) {
                *acc += if x_sq > tau_sq { zero_inc } else { ws.form_inc[g] };
            }
            let mut norm_sq = 0.0;
            for i in 0..l {
                let mut noise = 0.0;
                for j in 0..k {
                    noise += kr.sigma[i * k + j] * ws.dw[j];
                }
                ws.x[i] += ws.theta[i] * dt + noise;
                norm_sq += ws.x[i] * ws.x[i];
            }
            step += 1;
            if !(norm_sq <= EXPLOSION_BOUND * EXPLOSION_BOUND) {
                out[0] = 1.0;
                out[1..].iter_mut().for_each(|v| *v = f64::NAN);
                return;
            }
        }
        let t = target as f64 * dt;
        let o = 1 + h * hs;
        out[o] = logw;
        out[o + 1..o + 1 + l].copy_from_slice(&ws.x);
        for (j, v) in ws.acc.iter().enumerate() {
            out[o + 1 + l + j] = v / t;
        }
    }
}

/// Simulates `cfg.n_paths` paths of the factor and of `L_t` for every policy
/// in `policies`, all driven by the same noise, under `measure`.
pub fn simulate_paths(
    s: &MarketScenario,
    cfg: &SimConfig,
    measure: &Measure,
    policies: &[PortfolioPolicy],
) -> Result<SimOutput> {
    let steps = cfg.validate()?;
    if let Measure::Tilted(t) = measure {
        if matches!(t.gradient, GradientForm::Tabulated { .. }) && s.dims.l != 1 {
            return Err(Error::InvalidConfig("tabulated gradients need a scalar factor".into()));
        }
    }
    let kr = Kernel::new(s, measure, policies);
    let mut out = SimOutput {
        horizons: cfg.horizons.clone(),
        n_paths: cfg.n_paths,
        n_policies: policies.len(),
        l: kr.l,
        flagged: 0,
        records: Vec::new(),
    };
    let stride = out.stride();
    let mut records = vec![0.0; stride * cfg.n_paths];
    records.par_chunks_mut(stride * CHUNK).enumerate().for_each(|(chunk, block)| {
        let mut ws = Scratch::new(&kr);
        for (offset, rec) in block.chunks_mut(stride).enumerate() {
            let path = chunk * CHUNK + offset;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(path as u64);
            run_path(&kr, &steps, cfg.dt, &mut rng, &mut ws, rec);
        }
    });
    out.records = records;
    out.flagged = (0..cfg.n_paths).filter(|&p| out.is_flagged(p)).count();
    if out.flagged as f64 > EXPLOSION_FRACTION * cfg.n_paths as f64 {
        return Err(Error::PathExplosion { flagged: out.flagged, total: cfg.n_paths });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MCEstimate {
    pub t: f64,
    pub p_hat: f64,
    pub stderr: f64,
    /// `ln(p_hat)` computed in the log domain, finite even when `p_hat`
    /// underflows; `-inf` when no path hit the event.
    pub log_p_hat: f64,
    /// `stderr / p_hat`, also computed in the log domain.
    pub rel_stderr: f64,
    /// `-ln(p_hat) / t`; infinite when no path hit the event.
    pub log_decay: f64,
    pub ess: f64,
    /// One-sided 95% upper bound on the probability: the rule of three when
    /// `p_hat = 0`, otherwise `p_hat + 1.645 stderr`.
    pub upper_95: f64,
}

impl MCEstimate {
    /// Standard error of `log_decay` by the delta method.
    pub fn log_decay_stderr(&self) -> f64 {
        self.rel_stderr / self.t
    }

    pub fn hit(&self) -> bool {
        self.log_p_hat.is_finite()
    }
}

/// Scaled sums `sum exp(v - shift)` and `sum exp(2 (v - shift))`.
fn scaled_sums(logs: &[f64]) -> (f64, f64, f64) {
    let shift = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (mut s1, mut s2) = (0.0, 0.0);
    for v in logs {
        let w = (v - shift).exp();
        s1 += w;
        s2 += w * w;
    }
    (shift, s1, s2)
}

/// Estimates `P(L_t <= q)` for policy `j` at every horizon. Exploded paths
/// are dropped from the sample.
pub fn aggregate(out: &SimOutput, j: usize, q: f64) -> Vec<MCEstimate> {
    (0..out.horizons.len())
        .map(|h| {
            let mut all = Vec::with_capacity(out.n_paths);
            let mut hits = Vec::new();
            for p in 0..out.n_paths {
                if out.is_flagged(p) {
                    continue;
                }
                let lw = out.log_weight(p, h);
                all.push(lw);
                if out.log_return(p, h, j) <= q {
                    hits.push(lw);
                }
            }
            let n = all.len() as f64;
            let t = out.horizons[h];
            let (_, sw, sw2) = scaled_sums(&all);
            let ess = if sw2 > 0.0 { sw * sw / sw2 } else { 0.0 };
            if hits.is_empty() {
                return MCEstimate {
                    t,
                    p_hat: 0.0,
                    stderr: 0.0,
                    log_p_hat: f64::NEG_INFINITY,
                    rel_stderr: f64::INFINITY,
                    log_decay: f64::INFINITY,
                    ess,
                    upper_95: 3.0 / n,
                };
            }
            // with m = sy / n (scaled), var = sy2 / n - m^2 (same scale squared)
            let (shift, sy, sy2) = scaled_sums(&hits);
            let mean = sy / n;
            let var = (sy2 / n - mean * mean).max(0.0);
            let rel_stderr = (var / (n - 1.0)).sqrt() / mean;
            let log_p_hat = shift + mean.ln();
            let p_hat = log_p_hat.exp();
            let stderr = p_hat * rel_stderr;
            MCEstimate {
                t,
                p_hat,
                stderr,
                log_p_hat,
                rel_stderr,
                log_decay: -log_p_hat / t,
                ess,
                upper_95: p_hat + 1.645 * stderr,
            }
        })
        .collect()
}

/// Simulates and aggregates every policy: one estimate list per policy.
pub fn estimate_shortfall(
    s: &MarketScenario,
    cfg: &SimConfig,
    measure: &Measure,
    policies: &[PortfolioPolicy],
    q: f64,
) -> Result<Vec<Vec<MCEstimate>>> {
    let out = simulate_paths(s, cfg, measure, policies)?;
    Ok((0..policies.len()).map(|j| aggregate(&out, j, q)).collect())
}

/// Sample mean of the likelihood ratio at horizon `h` and its standard error.
pub fn weight_mean(out: &SimOutput, h: usize) -> (f64, f64) {
    let ws: Vec<f64> = (0..out.n_paths)
        .filter(|&p| !out.is_flagged(p))
        .map(|p| out.log_weight(p, h).exp())
        .collect();
    let n = ws.len() as f64;
    let mean = ws.iter().sum::<f64>() / n;
    let var = ws.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    /// True when the fit used the estimators' own standard errors as weights.
    pub weighted: bool,
}

/// Weighted least squares of `-ln p_hat` against `t`, with weights from the
/// delta-method variances `(stderr / p_hat)^2`. Falls back to ordinary least
/// squares with a residual-based error when some variance is zero.
pub fn estimate_decay_rate(estimates: &[MCEstimate]) -> Result<DecayFit> {
    let pts: Vec<&MCEstimate> = estimates.iter().filter(|e| e.hit()).collect();
    if pts.len() < 3 {
        return Err(Error::Insufficient(format!(
            "{} horizons with a positive estimate, at least 3 needed",
            pts.len()
        )));
    }
    let ts: Vec<f64> = pts.iter().map(|e| e.t).collect();
    let ys: Vec<f64> = pts.iter().map(|e| -e.log_p_hat).collect();
    let vars: Vec<f64> = pts.iter().map(|e| e.rel_stderr.powi(2)).collect();
    let weighted = vars.iter().all(|&v| v > 0.0 && v.is_finite());
    let w: Vec<f64> = if weighted { vars.iter().map(|v| 1.0 / v).collect() } else { vec![1.0; pts.len()] };
    let sw: f64 = w.iter().sum();
    let swt: f64 = w.iter().zip(&ts).map(|(w, t)| w * t).sum();
    let swy: f64 = w.iter().zip(&ys).map(|(w, y)| w * y).sum();
    let swtt: f64 = w.iter().zip(&ts).map(|(w, t)| w * t * t).sum();
    let swty: f64 = w.iter().zip(&ts).zip(&ys).map(|((w, t), y)| w * t * y).sum();
    let det = sw * swtt - swt * swt;
    let slope = (sw * swty - swt * swy) / det;
    let intercept = (swy - slope * swt) / sw;
    let slope_stderr = if weighted {
        (sw / det).sqrt()
    } else {
        let rss: f64 = ts.iter().zip(&ys).map(|(t, y)| (y - intercept - slope * t).powi(2)).sum();
        (rss / (pts.len() as f64 - 2.0) * sw / det).sqrt()
    };
    Ok(DecayFit { slope, intercept, slope_stderr, weighted })
}

/// Time average of a test function along one long tilted path with its
/// batch-means standard error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErgodicDiagnostic {
    pub horizon: f64,
    pub batches: usize,
    /// Time average of `g = 1`.
    pub constant: f64,
    pub mean: DVector<f64>,
    pub mean_stderr: DVector<f64>,
    /// Time average of `x x^T`.
    pub second_moment: DMatrix<f64>,
    pub second_moment_stderr: DMatrix<f64>,
}

/// Runs the tilted factor dynamics alone (no wealth) for `horizon` and
/// reports the time averages of `1`, `x` and `x x^T`.
pub fn ergodic_average_diagnostic(
    s: &MarketScenario,
    tilt: &Tilt,
    horizon: f64,
    dt: f64,
    seed: u64,
    batches: usize,
) -> Result<ErgodicDiagnostic> {
    let total = (horizon / dt).round() as usize;
    if batches < 2 || total < batches {
        return Err(Error::InvalidConfig(format!("{total} steps cannot form {batches} batches")));
    }
    let per = total / batches;
    let kr = Kernel::new(s, &Measure::Tilted(tilt.clone()), &[]);
    let fast = kr.tilt.as_ref().expect("tilted kernel");
    let (l, k) = (kr.l, kr.k);
    let mut ws = Scratch::new(&kr);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ws.x.copy_from_slice(&kr.x0);
    let sqdt = dt.sqrt();
    let mut batch_first = vec![DVector::<f64>::zeros(l); batches];
    let mut batch_second = vec![DMatrix::<f64>::zeros(l, l); batches];
    let mut counted = 0usize;
    for b in 0..batches {
        for _ in 0..per {
            kr.drift.eval(&ws.x, &mut ws.excess, &mut ws.theta);
            // left-point rule for the time integral
            counted += 1;
            for i in 0..l {
                batch_first[b][i] += ws.x[i] * dt;
                for j in 0..l {
                    batch_second[b][(i, j)] += ws.x[i] * ws.x[j] * dt;
                }
            }
            kr.tilt_drift(fast, &mut ws);
            for j in 0..k {
                ws.dw[j] = sqdt * rng.sample::<f64, _>(StandardNormal) + ws.d[j] * dt;
            }
            for i in 0..l {
                let mut noise = 0.0;
                for j in 0..k {
                    noise += kr.sigma[i * k + j] * ws.dw[j];
                }
                ws.x[i] += ws.theta[i] * dt + noise;
            }
            if !ws.x.iter().all(|v| v.abs() <= EXPLOSION_BOUND) {
                return Err(Error::PathExplosion { flagged: 1, total: 1 });
            }
        }
    }
    let span = per as f64 * dt;
    let t = span * batches as f64;
    let bm: Vec<DVector<f64>> = batch_first.iter().map(|v| v / span).collect();
    let bs: Vec<DMatrix<f64>> = batch_second.iter().map(|m| m / span).collect();
    let nb = batches as f64;
    let mean = bm.iter().fold(DVector::zeros(l), |a, v| a + v) / nb;
    let second = bs.iter().fold(DMatrix::zeros(l, l), |a, m| a + m) / nb;
    let mean_stderr = DVector::from_fn(l, |i, _| {
        let v = bm.iter().map(|b| (b[i] - mean[i]).powi(2)).sum::<f64>() / (nb - 1.0);
        (v / nb).sqrt()
    });
    let second_moment_stderr = DMatrix::from_fn(l, l, |i, j| {
        let v = bs.iter().map(|b| (b[(i, j)] - second[(i, j)]).powi(2)).sum::<f64>() / (nb - 1.0);
        (v / nb).sqrt()
    });
    Ok(ErgodicDiagnostic {
        horizon: t,
        batches,
        constant: counted as f64 * dt / t,
        mean,
        mean_stderr,
        second_moment: second,
        second_moment_stderr,
    })
}
