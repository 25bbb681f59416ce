//! One function per subcommand. Each prints its primary output to stdout and
//! optionally writes the full run report with timing metadata.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, ValueEnum};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde_json::{json, Value};

use shortfall_core::bellman1d::{self, GridConfig};
use shortfall_core::conditions;
use shortfall_core::dual::{self, Artifacts, DualSolution, PolicyForm, PortfolioPolicy};
use shortfall_core::gaussian;
use shortfall_core::linalg;
use shortfall_core::model::MarketScenario;
use shortfall_core::simulate::{self, Measure, SimConfig, Tilt};

use crate::report::{self, LoadedScenario, Metadata, RunReport, Table};
use crate::CliError;

#[derive(Debug, Clone, Args)]
pub struct Output {
    /// Write the full run report, including wall time, to FILE.
    #[arg(long, value_name = "FILE")]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct PlotOutput {
    /// Also write whitespace-separated columns for gnuplot to FILE.
    #[arg(long, value_name = "FILE")]
    pub emit_plot_data: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct GridArgs {
    /// Half-width of the grid; defaults to six stationary standard deviations.
    #[arg(long)]
    pub radius: Option<f64>,
    /// Number of grid nodes (odd, at least 201).
    #[arg(long, default_value_t = 2001)]
    pub nodes: usize,
}

impl GridArgs {
    fn config(&self, s: &MarketScenario) -> Result<GridConfig, CliError> {
        let radius = match self.radius {
            Some(r) => r,
            None => bellman1d::default_radius(s)?,
        };
        Ok(GridConfig::new(radius, self.nodes))
    }
}

fn finish(report: RunReport, out: &Output, started: Instant) -> Result<(), CliError> {
    if let Some(path) = &out.report {
        let mut full = report;
        full.metadata =
            Some(Metadata { wall_time_seconds: started.elapsed().as_secs_f64(), threads: rayon::current_num_threads() });
        report::write_report(path, &full)?;
    }
    Ok(())
}

fn write_plot(plot: &PlotOutput, table: &Table) -> Result<(), CliError> {
    match &plot.emit_plot_data {
        Some(path) => report::write_file(path, &table.plot_data()),
        None => Ok(()),
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn entries(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

/// Portfolio as `{K, k0}` for linear feedback or a node table otherwise.
fn policy_json(p: &PortfolioPolicy) -> Value {
    let form = match &p.form {
        PolicyForm::Linear { gain, offset } => json!({ "K": rows(gain), "k0": entries(offset) }),
        PolicyForm::Tabulated { xs, values } => json!({ "table": { "x": xs, "u": values } }),
        PolicyForm::Kelly => json!("kelly"),
        PolicyForm::Zero => json!("zero"),
    };
    json!({ "lambda_hat": p.lambda_hat, "tau": p.tau, "form": form })
}

fn path_string(p: &Path) -> String {
    p.display().to_string()
}

// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Scenario file, TOML or JSON by extension.
    pub scenario: PathBuf,
    /// Radius of the shell on which the stability margin is probed.
    #[arg(long, default_value_t = conditions::DEFAULT_SHELL_RADIUS)]
    pub shell_radius: f64,
    #[command(flatten)]
    pub out: Output,
}

pub fn validate(args: &ValidateArgs) -> Result<u8, CliError> {
    let started = Instant::now();
    let LoadedScenario { scenario: s, digest } = report::load(&args.scenario)?;
    let cr = conditions::check_all(&s, &conditions::default_probe(&s), args.shell_radius);
    let passed = cr.all_passed();
    let rr = RunReport::new(
        "validate",
        &digest,
        json!({ "scenario": path_string(&args.scenario), "shell_radius": args.shell_radius }),
        json!({ "all_passed": passed, "report": cr }),
    );
    report::print_stdout(&(rr.primary_pretty() + "\n"))?;
    finish(rr, &args.out, started)?;
    Ok(if passed { 0 } else { 1 })
}

// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct RateArgs {
    /// Scenario file, TOML or JSON by extension.
    pub scenario: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    pub lmin: f64,
    #[arg(long, default_value_t = 5.0)]
    pub lmax: f64,
    /// Number of grid points, endpoints included.
    #[arg(long, default_value_t = 51)]
    pub steps: usize,
    /// Use the grid solver even when a closed form exists.
    #[arg(long)]
    pub grid: bool,
    #[command(flatten)]
    pub grid_args: GridArgs,
    #[command(flatten)]
    pub plot: PlotOutput,
    #[command(flatten)]
    pub out: Output,
}

fn closed_form_twin(s: &MarketScenario) -> Option<MarketScenario> {
    if s.linear().is_some() {
        Some(s.clone())
    } else {
        s.affine_equivalent()
    }
}

pub fn rate(args: &RateArgs) -> Result<u8, CliError> {
    let started = Instant::now();
    let LoadedScenario { scenario: s, digest } = report::load(&args.scenario)?;
    if args.steps < 2 || !(args.lmin >= 0.0) || !(args.lmax > args.lmin) || !args.lmax.is_finite() {
        return Err(CliError::Input("need 0 <= lmin < lmax and at least 2 steps".into()));
    }
    let lams: Vec<f64> = (0..args.steps)
        .map(|i| args.lmin + (args.lmax - args.lmin) * i as f64 / (args.steps - 1) as f64)
        .collect();
    let use_grid = args.grid || s.linear().is_none();
    let grid_cfg = if use_grid { Some(args.grid_args.config(&s)?) } else { None };
    let rows: Vec<Vec<f64>> = if let Some(cfg) = grid_cfg {
        lams.par_iter()
            .map(|&l| {
                let sol = bellman1d::solve_ergodic_hjb(l, &s, &cfg)?;
                Ok(vec![l, sol.ergodic_constant, bellman1d::rate_derivative_grid(&sol, &s), f64::NAN, f64::NAN])
            })
            .collect::<Result<_, shortfall_core::Error>>()?
    } else {
        lams.par_iter()
            .map(|&l| {
                let (sol, fp) = gaussian::rate_point(l, &s)?;
                Ok(vec![l, sol.f, fp, sol.p.norm(), sol.d_max_re()])
            })
            .collect::<Result<_, shortfall_core::Error>>()?
    };
    let min_second = rows.windows(3).map(|w| w[0][1] - 2.0 * w[1][1] + w[2][1]).fold(f64::INFINITY, f64::min);
    let crosscheck = match (use_grid, closed_form_twin(&s)) {
        (true, Some(lin)) => {
            let gaps = lams
                .par_iter()
                .zip(rows.par_iter())
                .map(|(&l, row)| Ok((gaussian::rate_f(l, &lin)?.f - row[1]).abs()))
                .collect::<Result<Vec<f64>, shortfall_core::Error>>()?;
            let max_gap = gaps.iter().cloned().fold(0.0, f64::max);
            json!({ "max_gap": max_gap, "passed": max_gap <= 1e-4 })
        }
        _ => Value::Null,
    };
    let mut table = Table::new(&["lambda", "F", "Fprime", "P_fro", "D_maxRe"]);
    table.rows = rows;
    let rr = RunReport::new(
        "rate",
        &digest,
        json!({
            "scenario": path_string(&args.scenario), "lmin": args.lmin, "lmax": args.lmax,
            "steps": args.steps, "method": if use_grid { "grid" } else { "closed_form" },
            "grid": grid_cfg,
        }),
        json!({
            "convex": min_second >= -1e-8,
            "min_second_difference": if min_second.is_finite() { json!(min_second) } else { Value::Null },
            "grid_closed_form_crosscheck": crosscheck,
        }),
    );
    report::print_stdout(&format!("{}# {}\n", table.csv(), rr.primary_line()))?;
    write_plot(&args.plot, &table)?;
    finish(rr, &args.out, started)?;
    Ok(0)
}

// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Scenario file, TOML or JSON by extension.
    pub scenario: PathBuf,
    /// Shortfall threshold on the time-averaged log relative return.
    #[arg(short = 'q', long = "q", allow_hyphen_values = true)]
    pub q: f64,
    /// Use the grid solver even when a closed form exists.
    #[arg(long)]
    pub grid: bool,
    #[command(flatten)]
    pub grid_args: GridArgs,
    #[command(flatten)]
    pub out: Output,
}

fn dual_solution(
    s: &MarketScenario,
    q: f64,
    force_grid: bool,
    grid_args: &GridArgs,
) -> Result<(DualSolution, Option<GridConfig>), CliError> {
    if force_grid || s.linear().is_none() {
        let cfg = grid_args.config(s)?;
        Ok((dual::solve_grid(s, q, &cfg)?, Some(cfg)))
    } else {
        Ok((dual::solve_linear(s, q)?, None))
    }
}

/// Largest standard deviation of the tilted stationary law.
fn tilted_sd(sol: &DualSolution) -> f64 {
    match &sol.artifacts {
        Artifacts::Linear(r) => linalg::max_sym_eig(&r.sigma_stat).max(0.0).sqrt(),
        Artifacts::LinearPolicy(r) => linalg::max_sym_eig(&r.sigma_stat).max(0.0).sqrt(),
        Artifacts::Grid(g) | Artifacts::GridPolicy(g) => {
            let dx = g.spacing();
            let mean = bellman1d::trapezoid(&g.xs.iter().zip(&g.m).map(|(x, m)| x * m).collect::<Vec<_>>(), dx);
            let var = bellman1d::trapezoid(
                &g.xs.iter().zip(&g.m).map(|(x, m)| (x - mean).powi(2) * m).collect::<Vec<_>>(),
                dx,
            );
            var.max(0.0).sqrt()
        }
    }
}

fn stationary_law(sol: &DualSolution) -> Value {
    match &sol.artifacts {
        Artifacts::Linear(r) => json!({ "mean": entries(&r.mstar), "covariance": rows(&r.sigma_stat) }),
        _ => json!({ "sd": tilted_sd(sol) }),
    }
}

fn truncation_radii(sol: &DualSolution) -> Vec<f64> {
    match &sol.artifacts {
        Artifacts::Grid(g) | Artifacts::GridPolicy(g) => [0.2, 0.4, 0.6, 0.8, 1.0].iter().map(|f| f * g.radius).collect(),
        _ => {
            let sd = tilted_sd(sol).max(1e-3);
            [2.0, 4.0, 8.0, 16.0, 32.0].iter().map(|m| m * sd).collect()
        }
    }
}

pub fn solve(args: &SolveArgs) -> Result<u8, CliError> {
    let started = Instant::now();
    let LoadedScenario { scenario: s, digest } = report::load(&args.scenario)?;
    let (sol, cfg) = dual_solution(&s, args.q, args.grid, &args.grid_args)?;
    let policy = dual::build_policy(&sol, &s)?;
    let saddle = dual::check_saddle(&sol, &s)?;
    let truncation = dual::check_truncation_conditions(&sol, &s, &truncation_radii(&sol));
    let rr = RunReport::new(
        "solve",
        &digest,
        json!({
            "scenario": path_string(&args.scenario), "q": args.q,
            "method": if cfg.is_some() { "grid" } else { "closed_form" }, "grid": cfg,
        }),
        json!({
            "q": sol.q,
            "lambda_hat": sol.lambda_hat,
            "J": sol.j,
            "boundary": sol.boundary,
            "bracket": sol.bracket,
            "F_hat": sol.f_hat,
            "Fprime_hat": sol.fprime_hat,
            "saddle_residual": sol.saddle_residual,
            "saddle_check": saddle,
            "policy": policy_json(&policy),
            "stationary_law": stationary_law(&sol),
            "truncation_report": truncation,
        }),
    );
    report::print_stdout(&(rr.primary_pretty() + "\n"))?;
    finish(rr, &args.out, started)?;
    Ok(0)
}

// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct PolicyArgs {
    /// Scenario file, TOML or JSON by extension.
    pub scenario: PathBuf,
    #[arg(short = 'q', long = "q", allow_hyphen_values = true)]
    pub q: f64,
    /// Truncation radius; the portfolio is zero outside the closed ball.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Factor point as comma-separated coordinates; repeatable. Defaults to
    /// a sweep of four tilted standard deviations around the origin.
    #[arg(long = "x", value_name = "X1,X2,..", allow_hyphen_values = true)]
    pub points: Vec<String>,
    #[arg(long)]
    pub grid: bool,
    #[command(flatten)]
    pub grid_args: GridArgs,
    #[command(flatten)]
    pub plot: PlotOutput,
    #[command(flatten)]
    pub out: Output,
}

fn parse_point(raw: &str, l: usize) -> Result<DVector<f64>, CliError> {
    let vals: Vec<f64> = raw
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| CliError::Input(format!("bad coordinate {v:?} in --x {raw}"))))
        .collect::<Result<_, _>>()?;
    if vals.len() != l {
        return Err(CliError::Input(format!("--x {raw} has {} coordinates, the factor has {l}", vals.len())));
    }
    Ok(DVector::from_vec(vals))
}

fn default_points(l: usize, sd: f64) -> Vec<DVector<f64>> {
    if l == 1 {
        return (0..=40).map(|i| DVector::from_element(1, sd * (-4.0 + 0.2 * i as f64))).collect();
    }
    let mut pts = vec![DVector::zeros(l)];
    for i in 0..l {
        for sign in [-1.0, 1.0] {
            let mut e = DVector::zeros(l);
            e[i] = sign * sd;
            pts.push(e);
        }
    }
    pts
}

pub fn policy(args: &PolicyArgs) -> Result<u8, CliError> {
    let started = Instant::now();
    let LoadedScenario { scenario: s, digest } = report::load(&args.scenario)?;
    let (sol, cfg) = dual_solution(&s, args.q, args.grid, &args.grid_args)?;
    let mut pol = dual::build_policy(&sol, &s)?;
    if let Some(tau) = args.tau {
        if !(tau > 0.0) {
            return Err(CliError::Input(format!("--tau must be positive, got {tau}")));
        }
        pol = dual::truncate_policy(&pol, tau);
    }
    let (l, n) = (s.dims.l, s.dims.n);
    let points = if args.points.is_empty() {
        default_points(l, tilted_sd(&sol))
    } else {
        args.points.iter().map(|p| parse_point(p, l)).collect::<Result<_, _>>()?
    };
    let mut cols: Vec<String> = (1..=l).map(|i| format!("x{i}")).collect();
    cols.extend((1..=n).map(|i| format!("u{i}")));
    let mut table = Table::new(&cols.iter().map(String::as_str).collect::<Vec<_>>());
    for x in &points {
        let u = pol.eval(&s, x);
        table.rows.push(x.iter().chain(u.iter()).copied().collect());
    }
    let form = match &pol.form {
        PolicyForm::Tabulated { xs, .. } => json!({ "table_nodes": xs.len() }),
        _ => policy_json(&pol)["form"].clone(),
    };
    let rr = RunReport::new(
        "policy",
        &digest,
        json!({
            "scenario": path_string(&args.scenario), "q": args.q, "tau": args.tau,
            "method": if cfg.is_some() { "grid" } else { "closed_form" }, "grid": cfg,
        }),
        json!({ "lambda_hat": sol.lambda_hat, "J": sol.j, "boundary": sol.boundary, "policy": form }),
    );
    report::print_stdout(&format!("# {}\n{}", rr.primary_line(), table.csv()))?;
    write_plot(&args.plot, &table)?;
    finish(rr, &args.out, started)?;
    Ok(0)
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyChoice {
    Optimal,
    Kelly,
    None,
}

impl PolicyChoice {
    fn name(self) -> &'static str {
        match self {
            PolicyChoice::Optimal => "optimal",
            PolicyChoice::Kelly => "kelly",
            PolicyChoice::None => "none",
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario file, TOML or JSON by extension.
    pub scenario: PathBuf,
    #[arg(short = 'q', long = "q", allow_hyphen_values = true)]
    pub q: f64,
    /// Horizons, comma-separated and increasing.
    #[arg(long = "t", value_delimiter = ',', default_values_t = [50.0, 100.0, 200.0, 400.0])]
    pub horizons: Vec<f64>,
    #[arg(long, default_value_t = 0.01)]
    pub dt: f64,
    #[arg(long, default_value_t = 200_000)]
    pub paths: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Sample under the tilted measure of the simulated portfolio.
    #[arg(long)]
    pub tilted: bool,
    /// Truncation radii, comma-separated: a number, `<m>sd` for multiples of
    /// the tilted stationary standard deviation, or `inf`.
    #[arg(long, value_delimiter = ',')]
    pub tau: Vec<String>,
    #[arg(long, value_enum, default_value_t = PolicyChoice::Optimal)]
    pub policy: PolicyChoice,
    #[arg(long)]
    pub grid: bool,
    #[command(flatten)]
    pub grid_args: GridArgs,
    #[command(flatten)]
    pub plot: PlotOutput,
    #[command(flatten)]
    pub out: Output,
}

fn parse_tau(raw: &str, sd: f64) -> Result<f64, CliError> {
    let raw = raw.trim();
    let bad = || CliError::Input(format!("bad truncation radius {raw:?}"));
    let v = if raw == "inf" {
        f64::INFINITY
    } else if let Some(m) = raw.strip_suffix("sd") {
        m.parse::<f64>().map_err(|_| bad())? * sd
    } else {
        raw.parse::<f64>().map_err(|_| bad())?
    };
    if v > 0.0 {
        Ok(v)
    } else {
        Err(bad())
    }
}

fn base_policy(choice: PolicyChoice, sol: &DualSolution, s: &MarketScenario) -> Result<PortfolioPolicy, CliError> {
    Ok(match (choice, s.linear().is_some()) {
        (PolicyChoice::Optimal, _) => dual::build_policy(sol, s)?,
        (PolicyChoice::Kelly, true) => PortfolioPolicy::kelly_linear(s)?,
        (PolicyChoice::Kelly, false) => PortfolioPolicy::kelly(),
        (PolicyChoice::None, true) => PortfolioPolicy {
            lambda_hat: 0.0,
            form: PolicyForm::Linear { gain: DMatrix::zeros(s.dims.n, s.dims.l), offset: DVector::zeros(s.dims.n) },
            tau: None,
        },
        (PolicyChoice::None, false) => PortfolioPolicy::zero(),
    })
}

pub fn simulate(args: &SimulateArgs) -> Result<u8, CliError> {
    let started = Instant::now();
    let LoadedScenario { scenario: s, digest } = report::load(&args.scenario)?;
    let (sol, cfg) = dual_solution(&s, args.q, args.grid, &args.grid_args)?;
    let base = base_policy(args.policy, &sol, &s)?;
    let sd = tilted_sd(&sol);
    let taus: Vec<f64> = args.tau.iter().map(|t| parse_tau(t, sd)).collect::<Result<_, _>>()?;
    let policies: Vec<PortfolioPolicy> = if taus.is_empty() {
        vec![base.clone()]
    } else {
        taus.iter().map(|&t| dual::truncate_policy(&base, t)).collect()
    };
    // the frozen portfolio's own rate, and its tilt when sampling under it
    let own = match args.policy {
        PolicyChoice::Optimal => None,
        _ => Some(dual::policy_shortfall_rate(&s, args.q, &base, cfg.as_ref())?),
    };
    let measure = match (args.tilted, &own) {
        (false, _) => Measure::Physical,
        (true, None) => Measure::Tilted(Tilt::optimal(&sol, &s)?),
        (true, Some(o)) => Measure::Tilted(Tilt::for_policy(o, &base)?),
    };
    let sim_cfg = SimConfig { horizons: args.horizons.clone(), dt: args.dt, n_paths: args.paths, seed: args.seed };
    let out = simulate::simulate_paths(&s, &sim_cfg, &measure, &policies)?;

    let with_tau = !taus.is_empty();
    let mut cols = vec!["t", "p_hat", "stderr", "log_decay", "ess"];
    if with_tau {
        cols.insert(0, "tau");
    }
    let mut table = Table::new(&cols);
    let mut plot = Table::new(&["tau", "t", "log_decay", "log_decay_stderr", "log_p_hat"]);
    let mut fits = Vec::new();
    for (j, pol) in policies.iter().enumerate() {
        let tau = pol.tau.unwrap_or(f64::INFINITY);
        let ests = simulate::aggregate(&out, j, args.q);
        for e in &ests {
            let mut row = vec![e.t, e.p_hat, e.stderr, e.log_decay, e.ess];
            if with_tau {
                row.insert(0, tau);
            }
            table.rows.push(row);
            plot.rows.push(vec![tau, e.t, e.log_decay, e.log_decay_stderr(), e.log_p_hat]);
        }
        let fit = match simulate::estimate_decay_rate(&ests) {
            Ok(f) => json!({ "tau": if tau.is_finite() { json!(tau) } else { json!("inf") }, "fit": f }),
            Err(e) => json!({ "tau": if tau.is_finite() { json!(tau) } else { json!("inf") }, "fit": Value::Null, "reason": e.to_string() }),
        };
        fits.push(json!({ "estimates": ests, "regression": fit }));
    }
    let weight_mean = match measure {
        Measure::Tilted(_) => {
            let (m, se) = simulate::weight_mean(&out, 0);
            json!({ "t": args.horizons[0], "mean": m, "stderr": se })
        }
        Measure::Physical => Value::Null,
    };
    let rr = RunReport::new(
        "simulate",
        &digest,
        json!({
            "scenario": path_string(&args.scenario), "q": args.q, "t": args.horizons, "dt": args.dt,
            "paths": args.paths, "seed": args.seed, "tilted": args.tilted, "policy": args.policy.name(),
            "tau": taus.iter().map(|t| if t.is_finite() { json!(t) } else { json!("inf") }).collect::<Vec<_>>(),
            "method": if cfg.is_some() { "grid" } else { "closed_form" }, "grid": cfg,
        }),
        json!({
            "J": sol.j,
            "lambda_hat": sol.lambda_hat,
            "boundary": sol.boundary,
            "policy_J": own.as_ref().map(|o| o.j),
            "policy_lambda_hat": own.as_ref().map(|o| o.lambda_hat),
            "tilted_sd": sd,
            "flagged_paths": out.flagged,
            "weight_mean": weight_mean,
            "policies": fits,
        }),
    );
    report::print_stdout(&format!("{}# {}\n", table.csv(), rr.primary_line()))?;
    write_plot(&args.plot, &plot)?;
    finish(rr, &args.out, started)?;
    Ok(0)
}

// ---------------------------------------------------------------------------

#[derive(Debug, Args)]
pub struct BellmanArgs {
    /// Scenario file, TOML or JSON by extension.
    pub scenario: PathBuf,
    #[arg(long = "lambda")]
    pub lambda: f64,
    #[command(flatten)]
    pub grid_args: GridArgs,
    #[command(flatten)]
    pub plot: PlotOutput,
    #[command(flatten)]
    pub out: Output,
}

pub fn bellman(args: &BellmanArgs) -> Result<u8, CliError> {
    let started = Instant::now();
    let LoadedScenario { scenario: s, digest } = report::load(&args.scenario)?;
    if !(args.lambda >= 0.0) || !args.lambda.is_finite() {
        return Err(CliError::Input(format!("--lambda must be a finite nonnegative number, got {}", args.lambda)));
    }
    let cfg = args.grid_args.config(&s)?;
    let sol = bellman1d::solve_ergodic_hjb(args.lambda, &s, &cfg)?;
    let sensitivity = bellman1d::boundary_sensitivity(args.lambda, &s, &cfg)?;
    let mut table = Table::new(&["x", "f", "fprime", "m"]);
    for i in 0..sol.xs.len() {
        table.rows.push(vec![sol.xs[i], sol.f[i], sol.fprime[i], sol.m[i]]);
    }
    let rr = RunReport::new(
        "bellman",
        &digest,
        json!({ "scenario": path_string(&args.scenario), "lambda": args.lambda, "grid": cfg }),
        json!({
            "Lambda": sol.ergodic_constant,
            "Fprime": bellman1d::rate_derivative_grid(&sol, &s),
            "residual_inf": sol.residual_inf,
            "iterations": sol.iterations,
            "density_crosscheck": sol.density_crosscheck,
            "boundary_sensitivity": sensitivity,
        }),
    );
    report::print_stdout(&format!("# {}\n{}", rr.primary_line(), table.csv()))?;
    write_plot(&args.plot, &table)?;
    finish(rr, &args.out, started)?;
    Ok(0)
}
