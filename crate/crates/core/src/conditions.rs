//! Numerical checks of the standing hypotheses: uniform ellipticity of `c`
//! and `sigma sigma^T`, the nondegeneracy condition (N), and the Has'minskii
//! drift condition `limsup theta(x).x / |x|^2 < 0`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{Drift, MarketScenario};

/// `Q1 = I_k - b^T c^{-1} b`, the orthogonal projector onto `null(b)`.
pub fn projection_q1(b: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let c_inv = c.clone().try_inverse().ok_or(Error::Singular("c"))?;
    let k = b.ncols();
    let q1 = DMatrix::identity(k, k) - b.transpose() * c_inv * b;
    Ok(linalg::symmetrize(&q1))
}

/// `Q2 = Q1 (I_k - sigma^T (sigma Q1 sigma^T)^{-1} sigma) Q1`.
pub fn projection_q2(b: &DMatrix<f64>, c: &DMatrix<f64>, sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let q1 = projection_q1(b, c)?;
    let inner = sigma * &q1 * sigma.transpose();
    let scale = (sigma * sigma.transpose()).norm().max(1e-300);
    if linalg::min_sym_eig(&inner) <= 1e-13 * scale {
        return Err(Error::ConditionN1);
    }
    let inner_inv = linalg::spd_inverse(&inner).ok_or(Error::ConditionN1)?;
    let k = b.ncols();
    let mid = DMatrix::identity(k, k) - sigma.transpose() * inner_inv * sigma;
    Ok(linalg::symmetrize(&(&q1 * mid * &q1)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub ellipticity: f64,
    pub n1: f64,
    pub n2: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds { ellipticity: 1e-10, n1: 1e-10, n2: 1e-10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionFlags {
    pub ellipticity_c: bool,
    pub ellipticity_ss: bool,
    pub n1: bool,
    pub n2: bool,
    pub stability: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub ellipticity_min_eig_c: f64,
    pub ellipticity_min_eig_ss: f64,
    /// Min over the probe set of the smallest eigenvalue of `sigma Q1 sigma^T`.
    pub n1_min_eig: f64,
    /// Min over the probe set of `beta^T Q2 beta`.
    pub n2_min_value: f64,
    /// Linear scenarios: spectral abscissa of `Theta1`. Parametric
    /// scenarios: max over the shell of `theta(x).x / |x|^2`.
    pub stability_margin: f64,
    pub passed: ConditionFlags,
}

impl ConditionReport {
    pub fn all_passed(&self) -> bool {
        let p = self.passed;
        p.ellipticity_c && p.ellipticity_ss && p.n1 && p.n2 && p.stability
    }
}

pub fn check_all(s: &MarketScenario, probe: &[DVector<f64>], shell_radius: f64) -> ConditionReport {
    check_all_with(s, probe, shell_radius, Thresholds::default())
}

pub fn check_all_with(
    s: &MarketScenario,
    probe: &[DVector<f64>],
    shell_radius: f64,
    thresholds: Thresholds,
) -> ConditionReport {
    let mut min_c = f64::INFINITY;
    let mut min_ss = f64::INFINITY;
    let mut min_n1 = f64::INFINITY;
    let mut min_n2 = f64::INFINITY;
    // volatilities are constant, but the probe loop keeps the report honest
    // should x-dependent volatilities ever be admitted
    let points: Vec<DVector<f64>> = if probe.is_empty() { vec![s.x0.clone()] } else { probe.to_vec() };
    for x in &points {
        let frame = s.eval(x);
        min_c = min_c.min(linalg::min_sym_eig(&frame.c));
        let ss = &frame.sigma * frame.sigma.transpose();
        min_ss = min_ss.min(linalg::min_sym_eig(&ss));
        let (n1, n2) = match projection_q1(&frame.b, &frame.c) {
            Ok(q1) => {
                let n1 = linalg::min_sym_eig(&(&frame.sigma * &q1 * frame.sigma.transpose()));
                let n2 = match projection_q2(&frame.b, &frame.c, &frame.sigma) {
                    Ok(q2) => frame.beta.dot(&(&q2 * &frame.beta)),
                    Err(_) => f64::NEG_INFINITY,
                };
                (n1, n2)
            }
            Err(_) => (f64::NEG_INFINITY, f64::NEG_INFINITY),
        };
        min_n1 = min_n1.min(n1);
        min_n2 = min_n2.min(n2);
    }
    let stability_margin = stability_margin(s, shell_radius);
    ConditionReport {
        ellipticity_min_eig_c: min_c,
        ellipticity_min_eig_ss: min_ss,
        n1_min_eig: min_n1,
        n2_min_value: min_n2,
        stability_margin,
        passed: ConditionFlags {
            ellipticity_c: min_c > thresholds.ellipticity,
            ellipticity_ss: min_ss > thresholds.ellipticity,
            n1: min_n1 > thresholds.n1,
            n2: min_n2 > thresholds.n2,
            stability: stability_margin < 0.0,
        },
    }
}

/// Spectral abscissa of `Theta1` (linear) or the worst value of
/// `theta(x) x / x^2` on `{|x| = shell_radius}` (scalar parametric factor).
pub fn stability_margin(s: &MarketScenario, shell_radius: f64) -> f64 {
    match &s.drift {
        Drift::Linear(lin) => linalg::spectral_abscissa(&lin.theta1),
        Drift::Parametric1d(par) => [shell_radius, -shell_radius]
            .iter()
            .map(|&x| par.theta.eval(x) * x / (x * x))
            .fold(f64::NEG_INFINITY, f64::max),
    }
}

/// Default probe set: the initial value and the origin.
pub fn default_probe(s: &MarketScenario) -> Vec<DVector<f64>> {
    vec![s.x0.clone(), DVector::zeros(s.dims.l)]
}

pub const DEFAULT_SHELL_RADIUS: f64 = 100.0;

/// Outcome of the feasibility check for scenarios with a zero benchmark
/// volatility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegenerateBenchmarkVerdict {
    pub inf_rate_minus_dividend: f64,
    pub n1_passed: bool,
    /// `q <= inf (r - alpha)`: holding only the safe security is optimal.
    pub safe_only_optimal: bool,
    pub message: String,
}

pub fn check_degenerate_benchmark(s: &MarketScenario, q: f64) -> DegenerateBenchmarkVerdict {
    let inf = s.inf_rate_minus_dividend();
    let report = check_all(s, &default_probe(s), DEFAULT_SHELL_RADIUS);
    let n1_passed = report.passed.n1;
    let safe_only_optimal = inf >= q;
    let message = if safe_only_optimal {
        format!(
            "beta = 0 and q = {q} <= inf(r - alpha) = {inf}: investing in the safe security only is optimal; the rate is not computed"
        )
    } else if !n1_passed {
        "beta = 0 and part 1 of condition (N) fails: no rate can be computed".to_string()
    } else {
        format!(
            "beta = 0 with q = {q} > inf(r - alpha) = {inf}: the degenerate benchmark is outside the solver's supported scope"
        )
    };
    DegenerateBenchmarkVerdict { inf_rate_minus_dividend: inf, n1_passed, safe_only_optimal, message }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{reference_scenario, Dims, LinearDrift};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn q1_reference() {
        let s = reference_scenario();
        let q1 = projection_q1(&s.b, s.c()).unwrap();
        let expected = DMatrix::from_diagonal(&DVector::from_column_slice(&[0.0, 1.0, 1.0]));
        assert!((&q1 - expected).amax() < 1e-15);
    }

    #[test]
    fn q1_unit_vector() {
        let b = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let c = &b * b.transpose();
        let q1 = projection_q1(&b, &c).unwrap();
        assert!((q1 - DMatrix::from_diagonal(&DVector::from_column_slice(&[0.0, 1.0]))).amax() < 1e-15);
    }

    #[test]
    fn q2_reference_value() {
        let s = reference_scenario();
        let q2 = projection_q2(&s.b, s.c(), &s.sigma).unwrap();
        assert_abs_diff_eq!(s.beta.dot(&(&q2 * &s.beta)), 0.0225, epsilon = 1e-15);
    }

    #[test]
    fn q2_annihilates_ranges() {
        let s = reference_scenario();
        let q2 = projection_q2(&s.b, s.c(), &s.sigma).unwrap();
        // beta in range(b^T)
        let beta = s.b.transpose() * DVector::from_element(1, 0.3);
        assert!(beta.dot(&(&q2 * &beta)).abs() < 1e-15);
        // beta in range(sigma^T) restricted to null(b)
        let q1 = projection_q1(&s.b, s.c()).unwrap();
        let beta = &q1 * s.sigma.transpose() * DVector::from_element(1, 1.7);
        assert!(beta.dot(&(&q2 * &beta)).abs() < 1e-15);
    }

    #[test]
    fn reference_passes_all() {
        let s = reference_scenario();
        let r = check_all(&s, &default_probe(&s), 10.0);
        assert!(r.all_passed(), "{r:?}");
        assert_abs_diff_eq!(r.n1_min_eig, 0.0064, epsilon = 1e-15);
        assert_abs_diff_eq!(r.n2_min_value, 0.0225, epsilon = 1e-15);
        assert_abs_diff_eq!(r.stability_margin, -0.5, epsilon = 1e-15);
    }

    #[test]
    fn unstable_factor_fails() {
        let mut s = reference_scenario();
        if let Drift::Linear(lin) = &mut s.drift {
            lin.theta1[(0, 0)] = 0.1;
        }
        let r = check_all(&s, &default_probe(&s), 10.0);
        assert!(!r.passed.stability);
        assert!(!r.all_passed());
    }

    #[test]
    fn too_few_noise_sources_fail_n2() {
        // k = n + l = 2
        let drift = LinearDrift {
            a1: DMatrix::from_element(1, 1, 0.4),
            a2: DVector::from_element(1, 0.07),
            r1: DVector::zeros(1),
            r2: 0.03,
            alpha1: DVector::zeros(1),
            alpha2: 0.04,
            theta1: DMatrix::from_element(1, 1, -0.5),
            theta2: DVector::zeros(1),
        };
        let s = MarketScenario::new(
            Dims { n: 1, l: 1, k: 2 },
            Drift::Linear(drift),
            DMatrix::from_row_slice(1, 2, &[0.2, 0.0]),
            DVector::from_column_slice(&[0.05, 0.1]),
            DMatrix::from_row_slice(1, 2, &[0.06, 0.08]),
            DVector::zeros(1),
        )
        .unwrap();
        let r = check_all(&s, &default_probe(&s), 10.0);
        assert!(r.passed.n1);
        assert!(!r.passed.n2, "{r:?}");
    }

    #[test]
    fn report_is_deterministic() {
        let s = reference_scenario();
        let a = check_all(&s, &default_probe(&s), 10.0);
        let b = check_all(&s, &default_probe(&s), 10.0);
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn degenerate_benchmark_verdicts() {
        let mut s = reference_scenario();
        s.beta = DVector::zeros(3);
        let low = check_degenerate_benchmark(&s, -0.05);
        assert!(low.safe_only_optimal);
        assert!(low.message.contains("safe security only"));
        let high = check_degenerate_benchmark(&s, 0.02);
        assert!(!high.safe_only_optimal);
    }

    proptest! {
        #[test]
        fn projector_identities(vals in proptest::collection::vec(-1.0f64..1.0, 2 * 6 + 2 * 6)) {
            let b = DMatrix::from_row_slice(2, 6, &vals[0..12]);
            let sigma = DMatrix::from_row_slice(2, 6, &vals[12..24]);
            let c = &b * b.transpose();
            prop_assume!(linalg::min_sym_eig(&c) > 1e-3);
            let q1 = projection_q1(&b, &c).unwrap();
            prop_assert!((&q1 * &q1 - &q1).amax() < 1e-10);
            prop_assert!((&q1 - q1.transpose()).amax() < 1e-12);
            let inner = &sigma * &q1 * sigma.transpose();
            prop_assume!(linalg::min_sym_eig(&inner) > 1e-3);
            let q2 = projection_q2(&b, &c, &sigma).unwrap();
            prop_assert!((&q2 - q2.transpose()).amax() < 1e-12);
            prop_assert!((&q1 * &q2 * &q1 - &q2).amax() < 1e-10);
            prop_assert!(linalg::min_sym_eig(&q2) > -1e-10);
        }

        #[test]
        fn n1_equivalent_characterization(vals in proptest::collection::vec(-1.0f64..1.0, 2 * 4 + 2 * 4), rank_cut in proptest::bool::ANY) {
            let b = DMatrix::from_row_slice(2, 4, &vals[0..8]);
            let mut sigma = DMatrix::from_row_slice(2, 4, &vals[8..16]);
            if rank_cut {
                // put one row of sigma inside range(b^T) so the condition fails
                let row = b.row(0).into_owned();
                sigma.set_row(1, &row);
            }
            let c = &b * b.transpose();
            let ss = &sigma * sigma.transpose();
            prop_assume!(linalg::min_sym_eig(&c) > 1e-3 && linalg::min_sym_eig(&ss) > 1e-3);
            let q1 = projection_q1(&b, &c).unwrap();
            let lhs = linalg::min_sym_eig(&(&sigma * &q1 * sigma.transpose()));
            let ss_inv = ss.clone().try_inverse().unwrap();
            let rhs = linalg::min_sym_eig(&(&c - &b * sigma.transpose() * ss_inv * &sigma * b.transpose()));
            let tol = 1e-9;
            prop_assert_eq!(lhs > tol, rhs > tol, "lhs {} rhs {}", lhs, rhs);
        }
    }
}
