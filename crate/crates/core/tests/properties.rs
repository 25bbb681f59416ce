//! Property tests over randomly drawn scenarios.

use nalgebra::DVector;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use shortfall_core::bellman1d::{self, GridConfig};
use shortfall_core::dual;
use shortfall_core::fixtures::{random_linear_scenario, reference_parametric_saturated};
use shortfall_core::gaussian;
use shortfall_core::hamiltonian;
use shortfall_core::model::{load_scenario, save_scenario, Drift, MarketScenario};

fn scenario(seed: u64, n: usize, l: usize) -> MarketScenario {
    random_linear_scenario(&mut ChaCha8Rng::seed_from_u64(seed), n, l)
}

fn point(l: usize, raw: &[f64]) -> DVector<f64> {
    DVector::from_fn(l, |i, _| raw[i])
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, ..ProptestConfig::default() })]

    #[test]
    fn coefficients_are_affine(
        seed in any::<u64>(), n in 1usize..=3, l in 1usize..=3,
        xr in prop::collection::vec(-3.0f64..3.0, 3), yr in prop::collection::vec(-3.0f64..3.0, 3), t in 0.0f64..=1.0,
    ) {
        let s = scenario(seed, n, l);
        let (x, y) = (point(l, &xr), point(l, &yr));
        let mid = s.eval(&(&x * t + &y * (1.0 - t)));
        let (fx, fy) = (s.eval(&x), s.eval(&y));
        let scale = 1.0 + x.norm() + y.norm();
        prop_assert!((&mid.a - (&fx.a * t + &fy.a * (1.0 - t))).amax() <= 1e-13 * scale);
        prop_assert!((&mid.theta - (&fx.theta * t + &fy.theta * (1.0 - t))).amax() <= 1e-13 * scale);
        prop_assert!((mid.r - (t * fx.r + (1.0 - t) * fy.r)).abs() <= 1e-13 * scale);
        prop_assert!((mid.alpha - (t * fx.alpha + (1.0 - t) * fy.alpha)).abs() <= 1e-13 * scale);
    }

    #[test]
    fn frame_covariance_is_b_b_transpose(seed in any::<u64>(), n in 1usize..=3, l in 1usize..=3,
                                         xr in prop::collection::vec(-5.0f64..5.0, 3)) {
        let s = scenario(seed, n, l);
        let f = s.eval(&point(l, &xr));
        let bbt = &f.b * f.b.transpose();
        prop_assert!((&f.c - &bbt).amax() <= f64::EPSILON * bbt.amax());
        prop_assert!(f.c == f.c.transpose());
    }

    #[test]
    fn save_load_round_trip(seed in any::<u64>(), n in 1usize..=3, l in 1usize..=3, json in any::<bool>()) {
        let s = scenario(seed, n, l);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(if json { "s.json" } else { "s.toml" });
        save_scenario(&s, &path).unwrap();
        prop_assert_eq!(load_scenario(&path).unwrap(), s);
    }

    #[test]
    fn quadratic_value_solves_bellman(seed in any::<u64>(), n in 1usize..=3, l in 1usize..=3,
                                      lambda in 0.05f64..4.0,
                                      xs in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 3), 10)) {
        let s = scenario(seed, n, l);
        let sol = match gaussian::rate_f(lambda, &s) {
            Ok(sol) => sol,
            Err(_) => return Ok(()),
        };
        for raw in &xs {
            let x = point(l, raw);
            let grad = &sol.p * &x + &sol.p2;
            let h = hamiltonian::bellman_operator(&s.eval(&x), lambda, &grad, &sol.p);
            prop_assert!((h - sol.f).abs() <= 1e-8 * (1.0 + x.norm_squared()), "H {} vs F {}", h, sol.f);
        }
    }

    #[test]
    fn rate_is_convex_and_vanishes_at_zero(seed in any::<u64>(), n in 1usize..=3, l in 1usize..=3, h in 0.02f64..0.3) {
        let s = scenario(seed, n, l);
        let f0 = gaussian::rate_f(0.0, &s).unwrap().f;
        prop_assert!(f0.abs() <= 1e-12, "F(0) = {}", f0);
        let fs: Vec<f64> = (0..12).map_while(|i| gaussian::rate_f(i as f64 * h, &s).ok().map(|r| r.f)).collect();
        for w in fs.windows(3) {
            prop_assert!(w[0] - 2.0 * w[1] + w[2] >= -1e-8);
        }
    }

    #[test]
    fn dual_value_is_the_maximum(seed in any::<u64>(), n in 1usize..=3, l in 1usize..=3, q in -0.3f64..0.1,
                                 probes in prop::collection::vec(0.0f64..1.0, 20)) {
        let s = scenario(seed, n, l);
        let sol = match dual::solve_linear(&s, q) {
            Ok(sol) => sol,
            Err(_) => return Ok(()),
        };
        let f_hat = gaussian::rate_f(sol.lambda_hat, &s).unwrap().f;
        prop_assert!((sol.j - (-sol.lambda_hat * q - f_hat)).abs() <= 1e-12);
        let lmax = 2.0 * sol.bracket.1.max(1.0);
        for u in probes {
            let lambda = u * lmax;
            if let Ok(r) = gaussian::rate_f(lambda, &s) {
                prop_assert!(-lambda * q - r.f <= sol.j + 1e-10, "lambda {} beats lambda_hat {}", lambda, sol.lambda_hat);
            }
        }
    }

    #[test]
    fn rate_is_lipschitz_in_threshold(seed in any::<u64>(), q in -0.2f64..0.05, dq in 1e-4f64..1e-2) {
        let s = scenario(seed, 1, 1);
        if let (Ok(a), Ok(b)) = (dual::solve_linear(&s, q), dual::solve_linear(&s, q + dq)) {
            let lip = a.lambda_hat.max(b.lambda_hat);
            prop_assert!(b.j <= a.j + 1e-12);
            prop_assert!(a.j - b.j <= lip * dq + 1e-10);
        }
    }

    #[test]
    fn constant_shift_leaves_tabulated_policy(shift in -10.0f64..10.0,
                                              xr in -0.5f64..0.5) {
        // the tabulated portfolio reads only the gradient, so rebuilding it
        // from f + c must give the same values
        let s = reference_parametric_saturated();
        let cfg = GridConfig::new(0.8, 201);
        let mut sol = dual::solve_grid(&s, -0.02, &cfg).unwrap();
        let before = dual::build_policy(&sol, &s).unwrap();
        if let dual::Artifacts::Grid(g) = &mut sol.artifacts {
            g.f.iter_mut().for_each(|v| *v += shift);
        }
        let after = dual::build_policy(&sol, &s).unwrap();
        let x = DVector::from_element(1, xr);
        prop_assert_eq!(before.eval(&s, &x), after.eval(&s, &x));
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 8, ..ProptestConfig::default() })]

    #[test]
    fn policy_iteration_gain_and_density(lambda in 0.1f64..3.0, tilt in -0.05f64..0.05) {
        let mut s = reference_parametric_saturated();
        if let Drift::Parametric1d(par) = &mut s.drift {
            par.theta.c0 = tilt;
        }
        let sol = bellman1d::solve_ergodic_hjb(lambda, &s, &GridConfig::new(0.8, 401)).unwrap();
        prop_assert!(sol.residual_inf <= 1e-8);
        for w in sol.history.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-12, "{:?}", sol.history);
        }
        prop_assert!(sol.m.iter().all(|&v| v > 0.0));
        let dx = sol.xs[1] - sol.xs[0];
        let n = sol.m.len();
        let mass = dx * (sol.m.iter().sum::<f64>() - 0.5 * (sol.m[0] + sol.m[n - 1]));
        prop_assert!((mass - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn grid_matches_closed_form_on_affine_instances(lambda in 0.2f64..2.5, a1 in 0.1f64..0.6, theta1 in -0.9f64..-0.3) {
        let mut s = reference_parametric_saturated();
        if let Drift::Parametric1d(par) = &mut s.drift {
            for c in par.a.iter_mut().chain([&mut par.r, &mut par.alpha, &mut par.theta]) {
                c.c2 = 0.0;
            }
            par.a[0].c1 = a1;
            par.theta.c1 = theta1;
        }
        let lin = s.affine_equivalent().unwrap();
        let cf = gaussian::rate_f(lambda, &lin).unwrap();
        let radius = 6.0 * cf.sigma_stat[(0, 0)].sqrt() + cf.mstar[0].abs();
        let g = bellman1d::solve_ergodic_hjb(lambda, &s, &GridConfig::new(radius, 2001)).unwrap();
        prop_assert!((g.ergodic_constant - cf.f).abs() <= 1e-6, "{} vs {}", g.ergodic_constant, cf.f);
    }
}
