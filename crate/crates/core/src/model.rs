//! Market scenarios: factor dynamics, risky assets, the safe rate and the
//! benchmark, together with the scenario file format.
//!
//! Two coefficient families are supported. `linear_gaussian` scenarios have
//! affine drifts `a(x) = A1 x + a2`, `r(x) = r1.x + r2`, `alpha(x) = alpha1.x +
//! alpha2`, `theta(x) = Theta1 x + theta2`. `parametric_1d` scenarios have a
//! scalar factor and every drift component of the form
//! `c0 + c1 x + c2 tanh(c3 x)`. Volatilities `b`, `beta`, `sigma` are
//! constant in both families.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub n: usize,
    pub l: usize,
    pub k: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    LinearGaussian,
    #[serde(rename = "parametric_1d")]
    Parametric1d,
}

impl ScenarioKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioKind::LinearGaussian => "linear_gaussian",
            ScenarioKind::Parametric1d => "parametric_1d",
        }
    }
}

/// Affine-plus-saturation coefficient `c0 + c1 x + c2 tanh(c3 x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct Saturated {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

impl From<[f64; 4]> for Saturated {
    fn from(c: [f64; 4]) -> Self {
        Saturated { c0: c[0], c1: c[1], c2: c[2], c3: c[3] }
    }
}

impl From<Saturated> for [f64; 4] {
    fn from(s: Saturated) -> Self {
        [s.c0, s.c1, s.c2, s.c3]
    }
}

impl Saturated {
    pub fn affine(c0: f64, c1: f64) -> Self {
        Saturated { c0, c1, c2: 0.0, c3: 0.0 }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        self.c0 + self.c1 * x + self.c2 * (self.c3 * x).tanh()
    }

    /// True when the saturating term vanishes identically.
    pub fn is_affine(&self) -> bool {
        self.c2 == 0.0 || self.c3 == 0.0
    }

    fn is_finite(&self) -> bool {
        self.c0.is_finite() && self.c1.is_finite() && self.c2.is_finite() && self.c3.is_finite()
    }
}

/// Affine drift coefficients of a linear-Gaussian scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearDrift {
    pub a1: DMatrix<f64>,
    pub a2: DVector<f64>,
    pub r1: DVector<f64>,
    pub r2: f64,
    pub alpha1: DVector<f64>,
    pub alpha2: f64,
    pub theta1: DMatrix<f64>,
    pub theta2: DVector<f64>,
}

impl LinearDrift {
    /// `A1 - 1 r1^T`, the slope of the excess return `a(x) - r(x) 1`.
    pub fn excess_slope(&self) -> DMatrix<f64> {
        let mut g = self.a1.clone();
        for i in 0..g.nrows() {
            for j in 0..g.ncols() {
                g[(i, j)] -= self.r1[j];
            }
        }
        g
    }

    /// `a2 - r2 1`.
    pub fn excess_offset(&self) -> DVector<f64> {
        self.a2.map(|v| v - self.r2)
    }
}

/// Scalar-factor drift coefficients in the affine-plus-tanh family.
#[derive(Debug, Clone, PartialEq)]
pub struct ParametricDrift {
    pub a: Vec<Saturated>,
    pub r: Saturated,
    pub alpha: Saturated,
    pub theta: Saturated,
}

impl ParametricDrift {
    pub fn is_affine(&self) -> bool {
        self.a.iter().all(Saturated::is_affine)
            && self.r.is_affine()
            && self.alpha.is_affine()
            && self.theta.is_affine()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Drift {
    Linear(LinearDrift),
    Parametric1d(ParametricDrift),
}

/// A validated problem instance.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketScenario {
    pub dims: Dims,
    pub drift: Drift,
    pub b: DMatrix<f64>,
    pub beta: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub x0: DVector<f64>,
    c: DMatrix<f64>,
    c_inv: DMatrix<f64>,
}

/// Model coefficients evaluated at one factor point.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientFrame {
    pub x: DVector<f64>,
    pub a: DVector<f64>,
    pub r: f64,
    pub alpha: f64,
    pub theta: DVector<f64>,
    pub b: DMatrix<f64>,
    pub beta: DVector<f64>,
    pub sigma: DMatrix<f64>,
    /// `b b^T`.
    pub c: DMatrix<f64>,
    pub c_inv: DMatrix<f64>,
}

impl CoefficientFrame {
    /// `a(x) - r(x) 1`.
    pub fn excess(&self) -> DVector<f64> {
        self.a.map(|v| v - self.r)
    }

    pub fn beta_sq(&self) -> f64 {
        self.beta.norm_squared()
    }
}

impl MarketScenario {
    pub fn new(
        dims: Dims,
        drift: Drift,
        b: DMatrix<f64>,
        beta: DVector<f64>,
        sigma: DMatrix<f64>,
        x0: DVector<f64>,
    ) -> Result<Self> {
        let s = Self::new_unchecked_benchmark(dims, drift, b, beta, sigma, x0)?;
        if s.beta.norm_squared() <= 0.0 {
            return Err(Error::DegenerateBenchmark);
        }
        Ok(s)
    }

    /// Validates everything except `|beta|^2 > 0`. Only the degenerate
    /// benchmark feasibility check should build scenarios this way.
    pub fn new_unchecked_benchmark(
        dims: Dims,
        drift: Drift,
        b: DMatrix<f64>,
        beta: DVector<f64>,
        sigma: DMatrix<f64>,
        x0: DVector<f64>,
    ) -> Result<Self> {
        let Dims { n, l, k } = dims;
        if n == 0 || l == 0 || k == 0 {
            return Err(Error::Dimension("n, l, k must all be at least 1".into()));
        }
        check_shape("b", b.nrows(), b.ncols(), n, k)?;
        check_shape("sigma", sigma.nrows(), sigma.ncols(), l, k)?;
        check_len("beta", beta.len(), k)?;
        check_len("x0", x0.len(), l)?;
        match &drift {
            Drift::Linear(lin) => {
                check_shape("A1", lin.a1.nrows(), lin.a1.ncols(), n, l)?;
                check_len("a2", lin.a2.len(), n)?;
                check_len("r1", lin.r1.len(), l)?;
                check_len("alpha1", lin.alpha1.len(), l)?;
                check_shape("Theta1", lin.theta1.nrows(), lin.theta1.ncols(), l, l)?;
                check_len("theta2", lin.theta2.len(), l)?;
                let finite = lin.a1.iter().chain(lin.a2.iter()).chain(lin.r1.iter())
                    .chain(lin.alpha1.iter()).chain(lin.theta1.iter()).chain(lin.theta2.iter())
                    .all(|v| v.is_finite())
                    && lin.r2.is_finite()
                    && lin.alpha2.is_finite();
                if !finite {
                    return Err(Error::Parse("non-finite linear coefficient".into()));
                }
            }
            Drift::Parametric1d(par) => {
                if l != 1 {
                    return Err(Error::Dimension(format!(
                        "parametric_1d requires l = 1, got l = {l}"
                    )));
                }
                check_len("parametric a", par.a.len(), n)?;
                let finite = par.a.iter().all(Saturated::is_finite)
                    && par.r.is_finite()
                    && par.alpha.is_finite()
                    && par.theta.is_finite();
                if !finite {
                    return Err(Error::Parse("non-finite parametric coefficient".into()));
                }
            }
        }
        let finite = b.iter().chain(beta.iter()).chain(sigma.iter()).chain(x0.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Parse("non-finite volatility or initial value".into()));
        }

        let c = &b * b.transpose();
        let min_c = linalg::min_sym_eig(&c);
        if min_c <= f64::EPSILON * c.norm().max(1e-300) {
            return Err(Error::Definiteness(format!(
                "b b^T is not positive definite (min eigenvalue {min_c:.3e})"
            )));
        }
        let ss = &sigma * sigma.transpose();
        let min_ss = linalg::min_sym_eig(&ss);
        if min_ss <= f64::EPSILON * ss.norm().max(1e-300) {
            return Err(Error::Definiteness(format!(
                "sigma sigma^T is not positive definite (min eigenvalue {min_ss:.3e})"
            )));
        }
        let c_inv = linalg::spd_inverse(&c).ok_or(Error::Singular("b b^T"))?;
        Ok(MarketScenario { dims, drift, b, beta, sigma, x0, c, c_inv })
    }

    pub fn kind(&self) -> ScenarioKind {
        match self.drift {
            Drift::Linear(_) => ScenarioKind::LinearGaussian,
            Drift::Parametric1d(_) => ScenarioKind::Parametric1d,
        }
    }

    pub fn linear(&self) -> Option<&LinearDrift> {
        match &self.drift {
            Drift::Linear(lin) => Some(lin),
            Drift::Parametric1d(_) => None,
        }
    }

    pub fn require_linear(&self) -> Result<&LinearDrift> {
        self.linear().ok_or(Error::WrongKind { expected: "linear_gaussian" })
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn c_inv(&self) -> &DMatrix<f64> {
        &self.c_inv
    }

    pub fn sigma_sigma_t(&self) -> DMatrix<f64> {
        &self.sigma * self.sigma.transpose()
    }

    /// Evaluates the drift coefficients at `x` into caller-owned buffers.
    /// Returns `(r, alpha)`.
    pub fn eval_drift_into(&self, x: &[f64], a: &mut [f64], theta: &mut [f64]) -> (f64, f64) {
        match &self.drift {
            Drift::Linear(lin) => {
                let (n, l) = (self.dims.n, self.dims.l);
                for i in 0..n {
                    let mut acc = lin.a2[i];
                    for j in 0..l {
                        acc += lin.a1[(i, j)] * x[j];
                    }
                    a[i] = acc;
                }
                for i in 0..l {
                    let mut acc = lin.theta2[i];
                    for j in 0..l {
                        acc += lin.theta1[(i, j)] * x[j];
                    }
                    theta[i] = acc;
                }
                let mut r = lin.r2;
                let mut alpha = lin.alpha2;
                for j in 0..l {
                    r += lin.r1[j] * x[j];
                    alpha += lin.alpha1[j] * x[j];
                }
                (r, alpha)
            }
            Drift::Parametric1d(par) => {
                let x = x[0];
                for (ai, coef) in a.iter_mut().zip(&par.a) {
                    *ai = coef.eval(x);
                }
                theta[0] = par.theta.eval(x);
                (par.r.eval(x), par.alpha.eval(x))
            }
        }
    }

    pub fn eval(&self, x: &DVector<f64>) -> CoefficientFrame {
        let mut a = DVector::zeros(self.dims.n);
        let mut theta = DVector::zeros(self.dims.l);
        let (r, alpha) = self.eval_drift_into(x.as_slice(), a.as_mut_slice(), theta.as_mut_slice());
        CoefficientFrame {
            x: x.clone(),
            a,
            r,
            alpha,
            theta,
            b: self.b.clone(),
            beta: self.beta.clone(),
            sigma: self.sigma.clone(),
            c: self.c.clone(),
            c_inv: self.c_inv.clone(),
        }
    }

    pub fn eval_scalar(&self, x: f64) -> CoefficientFrame {
        self.eval(&DVector::from_element(1, x))
    }

    /// For parametric scenarios whose saturating terms all vanish, the
    /// equivalent linear-Gaussian scenario.
    pub fn affine_equivalent(&self) -> Option<MarketScenario> {
        match &self.drift {
            Drift::Linear(_) => Some(self.clone()),
            Drift::Parametric1d(par) if par.is_affine() => {
                let lin = LinearDrift {
                    a1: DMatrix::from_iterator(self.dims.n, 1, par.a.iter().map(|c| c.c1)),
                    a2: DVector::from_iterator(self.dims.n, par.a.iter().map(|c| c.c0)),
                    r1: DVector::from_element(1, par.r.c1),
                    r2: par.r.c0,
                    alpha1: DVector::from_element(1, par.alpha.c1),
                    alpha2: par.alpha.c0,
                    theta1: DMatrix::from_element(1, 1, par.theta.c1),
                    theta2: DVector::from_element(1, par.theta.c0),
                };
                let mut s = self.clone();
                s.drift = Drift::Linear(lin);
                Some(s)
            }
            Drift::Parametric1d(_) => None,
        }
    }

    /// `inf_x (r(x) - alpha(x))`, `-inf` when the difference is unbounded below.
    pub fn inf_rate_minus_dividend(&self) -> f64 {
        match &self.drift {
            Drift::Linear(lin) => {
                if lin.r1.iter().zip(lin.alpha1.iter()).any(|(r, a)| r != a) {
                    f64::NEG_INFINITY
                } else {
                    lin.r2 - lin.alpha2
                }
            }
            Drift::Parametric1d(par) => {
                if par.r.c1 != par.alpha.c1 {
                    return f64::NEG_INFINITY;
                }
                let diff = |x: f64| par.r.eval(x) - par.alpha.eval(x);
                // the tanh terms saturate; scan a wide window and the two limits
                let tails = [
                    par.r.c0 - par.alpha.c0 + par.r.c2 * par.r.c3.signum()
                        - par.alpha.c2 * par.alpha.c3.signum(),
                    par.r.c0 - par.alpha.c0 - par.r.c2 * par.r.c3.signum()
                        + par.alpha.c2 * par.alpha.c3.signum(),
                ];
                let scale = 1.0 / par.r.c3.abs().max(par.alpha.c3.abs()).max(1e-6);
                let window = 20.0 * scale;
                (0..=20_000)
                    .map(|i| diff(-window + 2.0 * window * i as f64 / 20_000.0))
                    .chain(tails)
                    .fold(f64::INFINITY, f64::min)
            }
        }
    }
}

fn check_shape(name: &str, rows: usize, cols: usize, er: usize, ec: usize) -> Result<()> {
    if rows != er || cols != ec {
        return Err(Error::Dimension(format!(
            "{name} has shape {rows}x{cols}, expected {er}x{ec}"
        )));
    }
    Ok(())
}

fn check_len(name: &str, len: usize, expected: usize) -> Result<()> {
    if len != expected {
        return Err(Error::Dimension(format!("{name} has length {len}, expected {expected}")));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// File format
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearSection {
    #[serde(rename = "A1")]
    pub a1: Vec<Vec<f64>>,
    pub a2: Vec<f64>,
    pub r1: Vec<f64>,
    pub r2: f64,
    pub alpha1: Vec<f64>,
    pub alpha2: f64,
    #[serde(rename = "Theta1")]
    pub theta1: Vec<Vec<f64>>,
    pub theta2: Vec<f64>,
    pub b: Vec<Vec<f64>>,
    pub beta: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParametricSection {
    /// One `[c0, c1, c2, c3]` row per risky asset.
    pub a: Vec<Saturated>,
    pub r: Saturated,
    pub alpha: Saturated,
    pub theta: Saturated,
    pub b: Vec<Vec<f64>>,
    pub beta: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
}

/// On-disk scenario schema (TOML or JSON).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub dims: Dims,
    pub kind: ScenarioKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub linear: Option<LinearSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parametric_1d: Option<ParametricSection>,
    pub x0: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Toml,
    Json,
}

impl Format {
    pub fn from_path(path: &Path) -> Option<Format> {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("toml") => Some(Format::Toml),
            Some(e) if e.eq_ignore_ascii_case("json") => Some(Format::Json),
            _ => None,
        }
    }
}

fn matrix_from_rows(name: &str, rows: &[Vec<f64>], er: usize, ec: usize) -> Result<DMatrix<f64>> {
    if rows.len() != er || rows.iter().any(|r| r.len() != ec) {
        let got_cols = rows.first().map_or(0, Vec::len);
        return Err(Error::Dimension(format!(
            "{name} has shape {}x{got_cols}, expected {er}x{ec}",
            rows.len()
        )));
    }
    Ok(DMatrix::from_fn(er, ec, |i, j| rows[i][j]))
}

fn rows_from_matrix(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn vector(name: &str, v: &[f64], expected: usize) -> Result<DVector<f64>> {
    check_len(name, v.len(), expected)?;
    Ok(DVector::from_column_slice(v))
}

impl ScenarioFile {
    pub fn parse(text: &str, format: Format) -> Result<ScenarioFile> {
        match format {
            Format::Toml => toml::from_str(text).map_err(|e| Error::Parse(e.to_string())),
            Format::Json => serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string())),
        }
    }

    pub fn render(&self, format: Format) -> Result<String> {
        match format {
            Format::Toml => toml::to_string(self).map_err(|e| Error::Parse(e.to_string())),
            Format::Json => {
                serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
            }
        }
    }

    pub fn into_scenario(self) -> Result<MarketScenario> {
        self.build(false)
    }

    pub fn into_scenario_allow_degenerate(self) -> Result<MarketScenario> {
        self.build(true)
    }

    fn build(self, allow_degenerate: bool) -> Result<MarketScenario> {
        let Dims { n, l, k } = self.dims;
        let (drift, b, beta, sigma) = match self.kind {
            ScenarioKind::LinearGaussian => {
                let sec = self
                    .linear
                    .ok_or_else(|| Error::Parse("kind linear_gaussian needs a [linear] section".into()))?;
                let drift = LinearDrift {
                    a1: matrix_from_rows("A1", &sec.a1, n, l)?,
                    a2: vector("a2", &sec.a2, n)?,
                    r1: vector("r1", &sec.r1, l)?,
                    r2: sec.r2,
                    alpha1: vector("alpha1", &sec.alpha1, l)?,
                    alpha2: sec.alpha2,
                    theta1: matrix_from_rows("Theta1", &sec.theta1, l, l)?,
                    theta2: vector("theta2", &sec.theta2, l)?,
                };
                (
                    Drift::Linear(drift),
                    matrix_from_rows("b", &sec.b, n, k)?,
                    vector("beta", &sec.beta, k)?,
                    matrix_from_rows("sigma", &sec.sigma, l, k)?,
                )
            }
            ScenarioKind::Parametric1d => {
                let sec = self.parametric_1d.ok_or_else(|| {
                    Error::Parse("kind parametric_1d needs a [parametric_1d] section".into())
                })?;
                if l != 1 {
                    return Err(Error::Dimension(format!("parametric_1d requires l = 1, got {l}")));
                }
                check_len("parametric a", sec.a.len(), n)?;
                let drift = ParametricDrift { a: sec.a, r: sec.r, alpha: sec.alpha, theta: sec.theta };
                (
                    Drift::Parametric1d(drift),
                    matrix_from_rows("b", &sec.b, n, k)?,
                    vector("beta", &sec.beta, k)?,
                    matrix_from_rows("sigma", &sec.sigma, l, k)?,
                )
            }
        };
        let x0 = vector("x0", &self.x0, l)?;
        if allow_degenerate {
            MarketScenario::new_unchecked_benchmark(self.dims, drift, b, beta, sigma, x0)
        } else {
            MarketScenario::new(self.dims, drift, b, beta, sigma, x0)
        }
    }

    pub fn from_scenario(s: &MarketScenario) -> ScenarioFile {
        let (linear, parametric_1d) = match &s.drift {
            Drift::Linear(lin) => (
                Some(LinearSection {
                    a1: rows_from_matrix(&lin.a1),
                    a2: lin.a2.iter().copied().collect(),
                    r1: lin.r1.iter().copied().collect(),
                    r2: lin.r2,
                    alpha1: lin.alpha1.iter().copied().collect(),
                    alpha2: lin.alpha2,
                    theta1: rows_from_matrix(&lin.theta1),
                    theta2: lin.theta2.iter().copied().collect(),
                    b: rows_from_matrix(&s.b),
                    beta: s.beta.iter().copied().collect(),
                    sigma: rows_from_matrix(&s.sigma),
                }),
                None,
            ),
            Drift::Parametric1d(par) => (
                None,
                Some(ParametricSection {
                    a: par.a.clone(),
                    r: par.r,
                    alpha: par.alpha,
                    theta: par.theta,
                    b: rows_from_matrix(&s.b),
                    beta: s.beta.iter().copied().collect(),
                    sigma: rows_from_matrix(&s.sigma),
                }),
            ),
        };
        ScenarioFile {
            dims: s.dims,
            kind: s.kind(),
            linear,
            parametric_1d,
            x0: s.x0.iter().copied().collect(),
        }
    }

    /// Compact JSON with fixed field order, used for digests.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("scenario file serializes")
    }
}

pub fn read_scenario_file(path: &Path) -> Result<ScenarioFile> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| Error::Io { path: path.display().to_string(), source })?;
    match Format::from_path(path) {
        Some(f) => ScenarioFile::parse(&text, f),
        None => ScenarioFile::parse(&text, Format::Json)
            .or_else(|_| ScenarioFile::parse(&text, Format::Toml)),
    }
}

pub fn load_scenario(path: &Path) -> Result<MarketScenario> {
    read_scenario_file(path)?.into_scenario()
}

pub fn save_scenario(s: &MarketScenario, path: &Path) -> Result<()> {
    let format = Format::from_path(path).unwrap_or(Format::Json);
    let text = ScenarioFile::from_scenario(s).render(format)?;
    std::fs::write(path, text).map_err(|source| Error::Io { path: path.display().to_string(), source })
}

/// The reference single-asset, single-factor instance used throughout the
/// tests: `n = 1`, `l = 1`, `k = 3`.
pub fn reference_scenario() -> MarketScenario {
    let drift = LinearDrift {
        a1: DMatrix::from_element(1, 1, 0.4),
        a2: DVector::from_element(1, 0.07),
        r1: DVector::from_element(1, 0.0),
        r2: 0.03,
        alpha1: DVector::from_element(1, 0.0),
        alpha2: 0.04,
        theta1: DMatrix::from_element(1, 1, -0.5),
        theta2: DVector::from_element(1, 0.0),
    };
    MarketScenario::new(
        Dims { n: 1, l: 1, k: 3 },
        Drift::Linear(drift),
        DMatrix::from_row_slice(1, 3, &[0.2, 0.0, 0.0]),
        DVector::from_column_slice(&[0.05, 0.0, 0.15]),
        DMatrix::from_row_slice(1, 3, &[0.06, 0.08, 0.0]),
        DVector::from_element(1, 0.0),
    )
    .expect("reference scenario is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const S1_TOML: &str = r#"
kind = "linear_gaussian"
x0 = [0.0]

[dims]
n = 1
l = 1
k = 3

[linear]
A1 = [[0.4]]
a2 = [0.07]
r1 = [0.0]
r2 = 0.03
alpha1 = [0.0]
alpha2 = 0.04
Theta1 = [[-0.5]]
theta2 = [0.0]
b = [[0.2, 0.0, 0.0]]
beta = [0.05, 0.0, 0.15]
sigma = [[0.06, 0.08, 0.0]]
"#;

    #[test]
    fn parses_reference_file() {
        let s = ScenarioFile::parse(S1_TOML, Format::Toml).unwrap().into_scenario().unwrap();
        assert_eq!(s, reference_scenario());
        assert_abs_diff_eq!(s.c()[(0, 0)], 0.04, epsilon = 1e-15);
    }

    #[test]
    fn parses_parametric_file() {
        let text = r#"
kind = "parametric_1d"
x0 = [0.0]

[dims]
n = 1
l = 1
k = 3

[parametric_1d]
a = [[0.07, 0.25, 0.03, 5.0]]
r = [0.03, 0.0, 0.005, 3.0]
alpha = [0.04, 0.0, 0.0, 0.0]
theta = [0.0, -0.4, -0.02, 4.0]
b = [[0.2, 0.0, 0.0]]
beta = [0.05, 0.0, 0.15]
sigma = [[0.06, 0.08, 0.0]]
"#;
        let file = ScenarioFile::parse(text, Format::Toml).unwrap();
        assert_eq!(file.kind.as_str(), "parametric_1d");
        let s = file.into_scenario().unwrap();
        assert_eq!(s, crate::fixtures::reference_parametric_saturated());
        let back = ScenarioFile::from_scenario(&s).render(Format::Json).unwrap();
        assert!(back.contains("\"parametric_1d\""));
    }

    #[test]
    fn zero_b_is_definiteness_error() {
        let text = S1_TOML.replace("b = [[0.2, 0.0, 0.0]]", "b = [[0.0, 0.0, 0.0]]");
        let err = ScenarioFile::parse(&text, Format::Toml).unwrap().into_scenario().unwrap_err();
        assert!(matches!(err, Error::Definiteness(_)), "{err}");
    }

    #[test]
    fn misshapen_a1_is_dimension_error() {
        let text = S1_TOML.replace("A1 = [[0.4]]", "A1 = [[0.4], [0.1]]");
        let err = ScenarioFile::parse(&text, Format::Toml).unwrap().into_scenario().unwrap_err();
        assert!(matches!(err, Error::Dimension(_)), "{err}");
    }

    #[test]
    fn malformed_file_is_parse_error() {
        let err = ScenarioFile::parse("kind = [", Format::Toml).unwrap_err();
        assert!(matches!(err, Error::Parse(_)));
    }

    #[test]
    fn zero_beta_rejected_unless_allowed() {
        let text = S1_TOML.replace("beta = [0.05, 0.0, 0.15]", "beta = [0.0, 0.0, 0.0]");
        let file = ScenarioFile::parse(&text, Format::Toml).unwrap();
        assert!(matches!(file.clone().into_scenario(), Err(Error::DegenerateBenchmark)));
        assert!(file.into_scenario_allow_degenerate().is_ok());
    }

    #[test]
    fn eval_reference_points() {
        let s = reference_scenario();
        let f0 = s.eval_scalar(0.0);
        assert_abs_diff_eq!(f0.a[0], 0.07, epsilon = 1e-15);
        assert_abs_diff_eq!(f0.r, 0.03, epsilon = 1e-15);
        assert_abs_diff_eq!(f0.alpha, 0.04, epsilon = 1e-15);
        assert_abs_diff_eq!(f0.theta[0], 0.0, epsilon = 1e-15);
        let f1 = s.eval_scalar(1.0);
        assert_abs_diff_eq!(f1.a[0], 0.47, epsilon = 1e-15);
        assert_abs_diff_eq!(f1.theta[0], -0.5, epsilon = 1e-15);
        let fm2 = s.eval_scalar(-2.0);
        assert_abs_diff_eq!(fm2.theta[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn affine_parametric_maps_to_linear() {
        let s = reference_scenario();
        let par = ParametricDrift {
            a: vec![Saturated::affine(0.07, 0.4)],
            r: Saturated::affine(0.03, 0.0),
            alpha: Saturated::affine(0.04, 0.0),
            theta: Saturated::affine(0.0, -0.5),
        };
        let p = MarketScenario::new(s.dims, Drift::Parametric1d(par), s.b.clone(), s.beta.clone(),
            s.sigma.clone(), s.x0.clone()).unwrap();
        assert_eq!(p.affine_equivalent().unwrap(), s);
        for x in [-1.3, 0.0, 0.7] {
            assert_eq!(p.eval_scalar(x).a, s.eval_scalar(x).a);
        }
    }

    #[test]
    fn inf_rate_minus_dividend() {
        let s = reference_scenario();
        assert_abs_diff_eq!(s.inf_rate_minus_dividend(), -0.01, epsilon = 1e-15);
        let par = ParametricDrift {
            a: vec![Saturated::affine(0.07, 0.4)],
            r: Saturated { c0: 0.03, c1: 0.0, c2: 0.01, c3: 2.0 },
            alpha: Saturated::affine(0.02, 0.0),
            theta: Saturated::affine(0.0, -0.5),
        };
        let p = MarketScenario::new(s.dims, Drift::Parametric1d(par), s.b.clone(), s.beta.clone(),
            s.sigma.clone(), s.x0.clone()).unwrap();
        assert_abs_diff_eq!(p.inf_rate_minus_dividend(), 0.0, epsilon = 1e-12);
    }
}
