//! Scenario generators shared by tests, examples and the acceptance suite.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::linalg;
use crate::model::{Dims, Drift, LinearDrift, MarketScenario, ParametricDrift, Saturated};

pub use crate::model::reference_scenario;

/// Random linear-Gaussian scenario with `k = n + l + 1` and a Hurwitz
/// `Theta1`. Condition (N) holds generically for such draws.
pub fn random_linear_scenario<R: Rng>(rng: &mut R, n: usize, l: usize) -> MarketScenario {
    let k = n + l + 1;
    loop {
        let mut m = |r: usize, c: usize, scale: f64| {
            DMatrix::from_fn(r, c, |_, _| scale * rng.random_range(-1.0..1.0))
        };
        let b = m(n, k, 0.3);
        let sigma = m(l, k, 0.2);
        let raw_theta = m(l, l, 0.5);
        let a1 = m(n, l, 0.3);
        let beta_m = m(k, 1, 0.15);
        let a2m = m(n, 1, 0.05);
        let shift = linalg::spectral_abscissa(&raw_theta) + rng.random_range(0.2..1.0);
        let theta1 = raw_theta - DMatrix::identity(l, l) * shift;
        let drift = LinearDrift {
            a1,
            a2: a2m.column(0).into_owned().add_scalar(0.05),
            r1: DVector::from_fn(l, |_, _| 0.02 * rng.random_range(-1.0..1.0)),
            r2: 0.03,
            alpha1: DVector::from_fn(l, |_, _| 0.02 * rng.random_range(-1.0..1.0)),
            alpha2: 0.04,
            theta1,
            theta2: DVector::from_fn(l, |_, _| 0.05 * rng.random_range(-1.0..1.0)),
        };
        let beta = beta_m.column(0).into_owned();
        let x0 = DVector::zeros(l);
        if let Ok(s) = MarketScenario::new(Dims { n, l, k }, Drift::Linear(drift), b, beta, sigma, x0) {
            let c = s.c();
            if linalg::min_sym_eig(c) > 1e-3 && linalg::min_sym_eig(&s.sigma_sigma_t()) > 1e-4 {
                let report = crate::conditions::check_all(&s, &crate::conditions::default_probe(&s), 10.0);
                if report.all_passed() && report.n1_min_eig > 1e-5 && report.n2_min_value > 1e-5 {
                    return s;
                }
            }
        }
    }
}

/// The reference instance re-expressed in the parametric family (all
/// saturating terms zero), so the grid solver can be checked against the
/// closed form.
pub fn reference_parametric_affine() -> MarketScenario {
    let s = reference_scenario();
    let par = ParametricDrift {
        a: vec![Saturated::affine(0.07, 0.4)],
        r: Saturated::affine(0.03, 0.0),
        alpha: Saturated::affine(0.04, 0.0),
        theta: Saturated::affine(0.0, -0.5),
    };
    MarketScenario::new(s.dims, Drift::Parametric1d(par), s.b, s.beta, s.sigma, s.x0)
        .expect("valid parametric scenario")
}

/// A genuinely nonlinear scalar-factor instance: saturating excess returns
/// and a mean-reverting factor with a tanh restoring term.
pub fn reference_parametric_saturated() -> MarketScenario {
    let s = reference_scenario();
    let par = ParametricDrift {
        a: vec![Saturated { c0: 0.07, c1: 0.25, c2: 0.03, c3: 5.0 }],
        r: Saturated { c0: 0.03, c1: 0.0, c2: 0.005, c3: 3.0 },
        alpha: Saturated::affine(0.04, 0.0),
        theta: Saturated { c0: 0.0, c1: -0.4, c2: -0.02, c3: 4.0 },
    };
    MarketScenario::new(s.dims, Drift::Parametric1d(par), s.b, s.beta, s.sigma, s.x0)
        .expect("valid parametric scenario")
}
