//! Pointwise algebra at a single factor point: the log-growth drift `M`, the
//! volatility `N` of the relative log-wealth, the maximizing portfolio, the
//! optimized Hamiltonian and the policy-evaluation Hamiltonian.

use nalgebra::{DMatrix, DVector};

use crate::model::CoefficientFrame;

/// `lambda / (1 + lambda)`, equal to 1 at `lambda = inf`.
#[inline]
pub fn lambda_fraction(lambda: f64) -> f64 {
    if lambda.is_infinite() {
        1.0
    } else {
        lambda / (1.0 + lambda)
    }
}

/// Drift of the relative log-wealth under portfolio `u`:
/// `u.(a - r 1) - |u|_c^2 / 2 + r - alpha + |beta|^2 / 2`.
pub fn drift_m(u: &DVector<f64>, frame: &CoefficientFrame) -> f64 {
    u.dot(&frame.excess()) - 0.5 * u.dot(&(&frame.c * u)) + frame.r - frame.alpha
        + 0.5 * frame.beta_sq()
}

/// Volatility of the relative log-wealth: `b^T u - beta`.
pub fn vol_n(u: &DVector<f64>, frame: &CoefficientFrame) -> DVector<f64> {
    frame.b.transpose() * u - &frame.beta
}

/// Maximizer over `u` of `M - lambda |N|^2 / 2 + p^T sigma N`:
/// `c^{-1}(a - r 1 + lambda b beta + b sigma^T p) / (1 + lambda)`.
pub fn optimal_u(lambda: f64, p: &DVector<f64>, frame: &CoefficientFrame) -> DVector<f64> {
    let rhs = frame.excess() + &frame.b * (&frame.beta * lambda + frame.sigma.transpose() * p);
    &frame.c_inv * rhs / (1.0 + lambda)
}

/// The objective maximized inside the optimized Hamiltonian, evaluated at an
/// arbitrary `u`.
pub fn sup_objective(lambda: f64, p: &DVector<f64>, u: &DVector<f64>, frame: &CoefficientFrame) -> f64 {
    let n = vol_n(u, frame);
    drift_m(u, frame) - 0.5 * lambda * n.norm_squared() + p.dot(&(&frame.sigma * n))
}

/// `T_lambda = sigma sigma^T - lambda/(1+lambda) sigma b^T c^{-1} b sigma^T`.
pub fn t_lambda(lambda: f64, frame: &CoefficientFrame) -> DMatrix<f64> {
    let kappa = lambda_fraction(lambda);
    let sb = &frame.sigma * frame.b.transpose();
    let t = &frame.sigma * frame.sigma.transpose() - &sb * &frame.c_inv * sb.transpose() * kappa;
    (&t + t.transpose()) * 0.5
}

/// Coefficients of the optimized Hamiltonian as a quadratic in `p`:
/// `H(p) = p^T t p / 2 + g1^T p + g0`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticInP {
    pub t: DMatrix<f64>,
    pub g1: DVector<f64>,
    pub g0: f64,
}

impl QuadraticInP {
    pub fn eval(&self, p: &DVector<f64>) -> f64 {
        0.5 * p.dot(&(&self.t * p)) + self.g1.dot(p) + self.g0
    }
}

pub fn hamiltonian_coefficients(lambda: f64, frame: &CoefficientFrame) -> QuadraticInP {
    let kappa = lambda_fraction(lambda);
    let v = frame.excess() + &frame.b * &frame.beta * lambda;
    let cv = &frame.c_inv * &v;
    let sigma_b = &frame.sigma * frame.b.transpose();
    let g1 = -(&sigma_b * &cv) * kappa + &frame.sigma * &frame.beta * lambda + &frame.theta;
    let beta_sq = frame.beta_sq();
    let g0 = -0.5 * kappa * v.dot(&cv) - lambda * (frame.r - frame.alpha + 0.5 * beta_sq)
        + 0.5 * lambda * lambda * beta_sq;
    QuadraticInP { t: t_lambda(lambda, frame), g1, g0 }
}

/// Optimized Hamiltonian `H^(x; lambda, p)` from its expanded closed form.
pub fn hamiltonian_hat(lambda: f64, p: &DVector<f64>, frame: &CoefficientFrame) -> f64 {
    hamiltonian_coefficients(lambda, frame).eval(p)
}

/// Policy-evaluation Hamiltonian for a fixed portfolio `v` at this point:
/// `-lambda M(v) + |-lambda N(v) + sigma^T grad|^2 / 2 + grad.theta
///  + tr(sigma sigma^T hess) / 2`.
pub fn breve_h(
    frame: &CoefficientFrame,
    lambda: f64,
    grad: &DVector<f64>,
    hess: &DMatrix<f64>,
    v: &DVector<f64>,
) -> f64 {
    let tilt = -vol_n(v, frame) * lambda + frame.sigma.transpose() * grad;
    let ss = &frame.sigma * frame.sigma.transpose();
    -lambda * drift_m(v, frame) + 0.5 * tilt.norm_squared() + grad.dot(&frame.theta)
        + 0.5 * (ss * hess).trace()
}

/// Full Bellman operator `H^(x; lambda, grad) + tr(sigma sigma^T hess) / 2`.
pub fn bellman_operator(
    frame: &CoefficientFrame,
    lambda: f64,
    grad: &DVector<f64>,
    hess: &DMatrix<f64>,
) -> f64 {
    let ss = &frame.sigma * frame.sigma.transpose();
    hamiltonian_hat(lambda, grad, frame) + 0.5 * (ss * hess).trace()
}

/// The integrand of the rate derivative:
/// `-M(u) + lambda |N(u)|^2 - grad^T sigma N(u)`.
pub fn rate_derivative_integrand(
    lambda: f64,
    grad: &DVector<f64>,
    u: &DVector<f64>,
    frame: &CoefficientFrame,
) -> f64 {
    let n = vol_n(u, frame);
    -drift_m(u, frame) + lambda * n.norm_squared() - grad.dot(&(&frame.sigma * n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::reference_scenario;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn s1_frame(x: f64) -> CoefficientFrame {
        reference_scenario().eval_scalar(x)
    }

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn drift_at_zero_portfolio() {
        let f = s1_frame(0.0);
        assert_abs_diff_eq!(drift_m(&v(&[0.0]), &f), 0.0025, epsilon = 1e-15);
    }

    #[test]
    fn drift_at_kelly_completes_square() {
        let f = s1_frame(0.3);
        let ex = f.excess();
        let kelly = &f.c_inv * &ex;
        let expected = 0.5 * ex.dot(&(&f.c_inv * &ex)) + f.r - f.alpha + 0.5 * f.beta_sq();
        assert_abs_diff_eq!(drift_m(&kelly, &f), expected, epsilon = 1e-14);
    }

    #[test]
    fn vol_examples() {
        let f = s1_frame(0.0);
        assert_eq!(vol_n(&v(&[0.0]), &f), -f.beta.clone());
        let n = vol_n(&v(&[1.0]), &f);
        assert_abs_diff_eq!(n[0], 0.15, epsilon = 1e-15);
        assert_abs_diff_eq!(n[1], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(n[2], -0.15, epsilon = 1e-15);
    }

    #[test]
    fn optimal_u_examples() {
        let f = s1_frame(0.0);
        assert_abs_diff_eq!(optimal_u(0.0, &v(&[0.0]), &f)[0], 1.0, epsilon = 1e-14);
        // lambda -> inf tends to c^{-1} b beta
        let limit = (&f.c_inv * &f.b * &f.beta)[0];
        assert_abs_diff_eq!(optimal_u(1e9, &v(&[0.7]), &f)[0], limit, epsilon = 1e-7);
    }

    #[test]
    fn hamiltonian_at_zero_lambda() {
        let f = s1_frame(0.4);
        let p = v(&[1.7]);
        let expected = p.dot(&f.theta) + 0.5 * (f.sigma.transpose() * &p).norm_squared();
        assert_abs_diff_eq!(hamiltonian_hat(0.0, &p, &f), expected, epsilon = 1e-15);
    }

    #[test]
    fn hamiltonian_s1_lambda_one() {
        let f = s1_frame(0.0);
        // direct evaluation of the closed-form terms at p = 0
        let w = f.excess() + &f.b * &f.beta;
        let norm = w.dot(&(&f.c_inv * &w));
        let b2 = f.beta_sq();
        let expected = -0.25 * norm - (f.r - f.alpha + 0.5 * b2) + 0.5 * b2;
        assert_abs_diff_eq!(hamiltonian_hat(1.0, &v(&[0.0]), &f), expected, epsilon = 1e-15);
    }

    #[test]
    fn t_lambda_limits() {
        let f = s1_frame(0.0);
        assert_abs_diff_eq!(t_lambda(0.0, &f)[(0, 0)], 0.01, epsilon = 1e-15);
        assert_abs_diff_eq!(t_lambda(f64::INFINITY, &f)[(0, 0)], 0.0064, epsilon = 1e-15);
        for lam in [0.1, 1.0, 10.0, 1e3] {
            assert!(t_lambda(lam, &f)[(0, 0)] >= 0.0064 - 1e-15);
        }
    }

    #[test]
    fn breve_h_examples() {
        let f = s1_frame(0.2);
        let zero = v(&[0.0]);
        let h0 = DMatrix::zeros(1, 1);
        assert_abs_diff_eq!(breve_h(&f, 0.0, &zero, &h0, &zero), 0.0, epsilon = 1e-15);
        let lam = 0.8;
        let b2 = f.beta_sq();
        let expected = -lam * (f.r - f.alpha + 0.5 * b2) + 0.5 * lam * lam * b2;
        assert_abs_diff_eq!(breve_h(&f, lam, &zero, &h0, &zero), expected, epsilon = 1e-15);
    }

    fn random_frame(vals: &[f64]) -> CoefficientFrame {
        // n = 2, l = 2, k = 5 frame built from raw numbers
        let b = DMatrix::from_row_slice(2, 5, &vals[0..10]) + DMatrix::from_row_slice(2, 5,
            &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        let c = &b * b.transpose();
        let c_inv = c.clone().try_inverse().unwrap();
        CoefficientFrame {
            x: DVector::from_column_slice(&vals[10..12]),
            a: DVector::from_column_slice(&vals[12..14]),
            r: vals[14],
            alpha: vals[15],
            theta: DVector::from_column_slice(&vals[16..18]),
            sigma: DMatrix::from_row_slice(2, 5, &vals[18..28]) + DMatrix::from_row_slice(2, 5,
                &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0]),
            beta: DVector::from_column_slice(&vals[28..33]),
            b,
            c,
            c_inv,
        }
    }

    proptest! {
        #[test]
        fn closed_form_matches_maximization(
            vals in proptest::collection::vec(-0.4f64..0.4, 33),
            lam in 0.0f64..5.0,
            p in proptest::collection::vec(-2.0f64..2.0, 2),
            probe in proptest::collection::vec(-3.0f64..3.0, 2),
        ) {
            let f = random_frame(&vals);
            let p = DVector::from_vec(p);
            let u = optimal_u(lam, &p, &f);
            let via_sup = -lam * sup_objective(lam, &p, &u, &f) + p.dot(&f.theta)
                + 0.5 * (f.sigma.transpose() * &p).norm_squared();
            let h = hamiltonian_hat(lam, &p, &f);
            prop_assert!((via_sup - h).abs() <= 1e-8 * (1.0 + h.abs()));
            // envelope: any other u gives a larger value of the minimized expression
            let other = DVector::from_vec(probe);
            let at_other = -lam * sup_objective(lam, &p, &other, &f) + p.dot(&f.theta)
                + 0.5 * (f.sigma.transpose() * &p).norm_squared();
            prop_assert!(at_other >= h - 1e-10);
        }

        #[test]
        fn hamiltonian_jointly_convex(
            vals in proptest::collection::vec(-0.4f64..0.4, 33),
            l1 in 0.0f64..4.0, l2 in 0.0f64..4.0,
            p1 in proptest::collection::vec(-2.0f64..2.0, 2),
            p2 in proptest::collection::vec(-2.0f64..2.0, 2),
        ) {
            let f = random_frame(&vals);
            let (p1, p2) = (DVector::from_vec(p1), DVector::from_vec(p2));
            let mid = hamiltonian_hat(0.5 * (l1 + l2), &((&p1 + &p2) * 0.5), &f);
            let avg = 0.5 * (hamiltonian_hat(l1, &p1, &f) + hamiltonian_hat(l2, &p2, &f));
            prop_assert!(mid <= avg + 1e-10 * (1.0 + avg.abs()));
        }

        #[test]
        fn quadratic_structure_in_p(
            vals in proptest::collection::vec(-0.4f64..0.4, 33),
            lam in 0.0f64..5.0,
            p in proptest::collection::vec(-2.0f64..2.0, 2),
        ) {
            let f = random_frame(&vals);
            let p = DVector::from_vec(p);
            let zero = DVector::zeros(2);
            let coeffs = hamiltonian_coefficients(lam, &f);
            let lhs = hamiltonian_hat(lam, &p, &f) - hamiltonian_hat(lam, &zero, &f) - coeffs.g1.dot(&p);
            let rhs = 0.5 * p.dot(&(t_lambda(lam, &f) * &p));
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
        }

        #[test]
        fn envelope_identity_for_breve_h(
            vals in proptest::collection::vec(-0.4f64..0.4, 33),
            lam in 0.0f64..5.0,
            g in proptest::collection::vec(-2.0f64..2.0, 2),
            h in proptest::collection::vec(-2.0f64..2.0, 4),
        ) {
            let f = random_frame(&vals);
            let g = DVector::from_vec(g);
            let hess = DMatrix::from_row_slice(2, 2, &h);
            let hess = (&hess + hess.transpose()) * 0.5;
            let u = optimal_u(lam, &g, &f);
            let lhs = breve_h(&f, lam, &g, &hess, &u);
            let rhs = bellman_operator(&f, lam, &g, &hess);
            prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + rhs.abs()));
        }
    }
}
