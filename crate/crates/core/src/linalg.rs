//! Small dense kernels: ordered complex Schur form, continuous Lyapunov
//! equations (Bartels-Stewart) and the continuous algebraic Riccati equation
//! (Hamiltonian Schur method with Newton-Kleinman polishing).
//!
//! Dimensions here are tiny (the factor dimension), so everything works on
//! complexified dense matrices and favours clarity over blocking.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub fn min_sym_eig(m: &DMatrix<f64>) -> f64 {
    let sym = symmetrize(m);
    sym.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
}

pub fn max_sym_eig(m: &DMatrix<f64>) -> f64 {
    let sym = symmetrize(m);
    sym.symmetric_eigenvalues().iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn spd_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let inv = m.clone().cholesky()?.inverse();
    Some(symmetrize(&inv))
}

pub fn complexify(m: &DMatrix<f64>) -> DMatrix<Complex64> {
    m.map(|v| Complex64::new(v, 0.0))
}

/// Eigenvalues of a real square matrix.
pub fn eigenvalues(m: &DMatrix<f64>) -> Vec<Complex64> {
    let (_, t) = complexify(m).schur().unpack();
    (0..t.nrows()).map(|i| t[(i, i)]).collect()
}

/// Largest real part among the eigenvalues.
pub fn spectral_abscissa(m: &DMatrix<f64>) -> f64 {
    eigenvalues(m).iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
}

pub fn is_hurwitz(m: &DMatrix<f64>) -> bool {
    spectral_abscissa(m) < 0.0
}

/// Complex Schur form `m = q t q^H` with the eigenvalues satisfying `select`
/// moved to the leading diagonal positions. Returns `(q, t, count)`.
pub fn ordered_schur<F>(m: &DMatrix<f64>, select: F) -> (DMatrix<Complex64>, DMatrix<Complex64>, usize)
where
    F: Fn(Complex64) -> bool,
{
    let (mut q, mut t) = complexify(m).schur().unpack();
    let dim = t.nrows();
    let mut placed = 0;
    for _ in 0..dim {
        let next = (placed..dim).find(|&i| select(t[(i, i)]));
        let Some(mut pos) = next else { break };
        while pos > placed {
            swap_adjacent(&mut q, &mut t, pos - 1);
            pos -= 1;
        }
        placed += 1;
    }
    (q, t, placed)
}

/// Exchanges diagonal entries `k` and `k + 1` of an upper triangular `t` by a
/// Givens rotation, updating the accumulated unitary `q`.
fn swap_adjacent(q: &mut DMatrix<Complex64>, t: &mut DMatrix<Complex64>, k: usize) {
    let a = t[(k, k)];
    let b = t[(k + 1, k + 1)];
    let off = t[(k, k + 1)];
    let diff = b - a;
    let r = (off.norm_sqr() + diff.norm_sqr()).sqrt();
    if r == 0.0 {
        return;
    }
    // first column of the rotation is the eigenvector of the 2x2 block for b
    let c = off / r;
    let s = diff / r;
    let dim = t.nrows();
    for j in 0..dim {
        let x = t[(k, j)];
        let y = t[(k + 1, j)];
        t[(k, j)] = c.conj() * x + s.conj() * y;
        t[(k + 1, j)] = -s * x + c * y;
    }
    for i in 0..dim {
        let x = t[(i, k)];
        let y = t[(i, k + 1)];
        t[(i, k)] = x * c + y * s;
        t[(i, k + 1)] = -x * s.conj() + y * c.conj();
        let x = q[(i, k)];
        let y = q[(i, k + 1)];
        q[(i, k)] = x * c + y * s;
        q[(i, k + 1)] = -x * s.conj() + y * c.conj();
    }
    t[(k + 1, k)] = Complex64::new(0.0, 0.0);
}

/// Solves `a x + x a^T + q = 0` by Bartels-Stewart on the complex Schur form
/// of `a`. Requires `lambda_i + conj(lambda_j) != 0` for all eigenvalue
/// pairs, which holds whenever `a` is Hurwitz.
pub fn solve_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let m = a.nrows();
    let (u, t) = complexify(a).schur().unpack();
    let rhs = -(u.adjoint() * complexify(q) * &u);
    let mut y = DMatrix::<Complex64>::zeros(m, m);
    let scale = t.norm().max(1e-300);
    for j in (0..m).rev() {
        let mut col: DVector<Complex64> = rhs.column(j).into_owned();
        for k in (j + 1)..m {
            let coef = t[(j, k)].conj();
            for i in 0..m {
                col[i] -= coef * y[(i, k)];
            }
        }
        let shift = t[(j, j)].conj();
        // back substitution with (t + shift I)
        for i in (0..m).rev() {
            let mut acc = col[i];
            for p in (i + 1)..m {
                acc -= t[(i, p)] * y[(p, j)];
            }
            let piv = t[(i, i)] + shift;
            if piv.norm() <= 1e-14 * scale {
                return Err(Error::Singular("Lyapunov operator"));
            }
            y[(i, j)] = acc / piv;
        }
    }
    let x = &u * y * u.adjoint();
    let xr = x.map(|z| z.re);
    Ok(if is_symmetric(q, 0.0) { symmetrize(&xr) } else { xr })
}

fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    m.nrows() == m.ncols() && (m - m.transpose()).amax() <= tol
}

#[derive(Debug, Clone)]
pub struct CareSolution {
    pub x: DMatrix<f64>,
    /// Frobenius norm of `a^T x + x a - x g x + q`.
    pub residual: f64,
    pub newton_steps: usize,
    /// Eigenvalues of the Hamiltonian matrix, for diagnostics.
    pub hamiltonian_eigs: Vec<Complex64>,
}

pub fn care_residual(a: &DMatrix<f64>, g: &DMatrix<f64>, q: &DMatrix<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    a.transpose() * x + x * a - x * g * x + q
}

/// Stabilizing solution of `a^T x + x a - x g x + q = 0` with `g` symmetric
/// positive semidefinite and `q` symmetric. The closed loop `a - g x` is
/// Hurwitz on success.
pub fn solve_care(a: &DMatrix<f64>, g: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<CareSolution> {
    let l = a.nrows();
    let mut h = DMatrix::<f64>::zeros(2 * l, 2 * l);
    h.view_mut((0, 0), (l, l)).copy_from(a);
    h.view_mut((0, l), (l, l)).copy_from(&(-g));
    h.view_mut((l, 0), (l, l)).copy_from(&(-q));
    h.view_mut((l, l), (l, l)).copy_from(&(-a.transpose()));

    let hnorm = h.norm().max(1e-300);
    let axis_tol = 1e-12 * hnorm;
    let (qs, t, stable) = ordered_schur(&h, |z| z.re < -axis_tol);
    let eigs: Vec<Complex64> = (0..2 * l).map(|i| t[(i, i)]).collect();
    if stable != l {
        return Err(Error::NoStabilizingSolution(format!(
            "Hamiltonian has {stable} stable eigenvalues, expected {l}; eigenvalues {}",
            fmt_eigs(&eigs)
        )));
    }
    let u1 = qs.view((0, 0), (l, l)).into_owned();
    let u2 = qs.view((l, 0), (l, l)).into_owned();
    // x = u2 u1^{-1}  <=>  u1^T x^T = u2^T
    let lu = u1.transpose().lu();
    let xt = lu.solve(&u2.transpose()).ok_or_else(|| {
        Error::NoStabilizingSolution(format!(
            "stable subspace basis block is singular; eigenvalues {}",
            fmt_eigs(&eigs)
        ))
    })?;
    let xc = xt.transpose();
    let imag = xc.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    let mut x = symmetrize(&xc.map(|z| z.re));
    if imag > 1e-6 * (1.0 + x.norm()) {
        return Err(Error::NoStabilizingSolution(format!(
            "stable subspace yields a complex solution (|imag| = {imag:.3e})"
        )));
    }

    let mut residual = care_residual(a, g, q, &x).norm();
    let mut newton_steps = 0;
    for _ in 0..3 {
        if residual <= 1e-11 * (1.0 + x.norm()) {
            break;
        }
        let closed = a - g * &x;
        if !is_hurwitz(&closed) {
            break;
        }
        let rhs = q + &x * g * &x;
        let Ok(next) = solve_lyapunov(&closed.transpose(), &rhs) else { break };
        let next_res = care_residual(a, g, q, &next).norm();
        if next_res < residual {
            x = next;
            residual = next_res;
            newton_steps += 1;
        } else {
            break;
        }
    }
    let closed = a - g * &x;
    if !is_hurwitz(&closed) {
        return Err(Error::NoStabilizingSolution(format!(
            "closed loop is not Hurwitz (abscissa {:.3e})",
            spectral_abscissa(&closed)
        )));
    }
    Ok(CareSolution { x, residual, newton_steps, hamiltonian_eigs: eigs })
}

fn fmt_eigs(eigs: &[Complex64]) -> String {
    let parts: Vec<String> = eigs.iter().map(|z| format!("{:.4e}{:+.4e}i", z.re, z.im)).collect();
    format!("[{}]", parts.join(", "))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_hurwitz(rng: &mut ChaCha8Rng, m: usize) -> DMatrix<f64> {
        let a = random_matrix(rng, m, m);
        let shift = spectral_abscissa(&a) + 0.3;
        a - DMatrix::identity(m, m) * shift
    }

    #[test]
    fn ordered_schur_moves_selected_block_first() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let m = random_matrix(&mut rng, 6, 6);
            let (q, t, count) = ordered_schur(&m, |z| z.re < 0.0);
            let back = &q * &t * q.adjoint();
            assert!((back.map(|z| z.re) - &m).amax() < 1e-10);
            for i in 0..6 {
                assert_eq!(t[(i, i)].re < 0.0, i < count);
                for j in 0..i {
                    assert!(t[(i, j)].norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn lyapunov_residual_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for m in 1..=5 {
            let a = random_hurwitz(&mut rng, m);
            let s = random_matrix(&mut rng, m, m);
            let q = &s * s.transpose();
            let x = solve_lyapunov(&a, &q).unwrap();
            let res = &a * &x + &x * a.transpose() + &q;
            assert!(res.norm() < 1e-10 * (1.0 + x.norm()), "m={m} res={}", res.norm());
            assert!(min_sym_eig(&x) > -1e-12);
        }
    }

    #[test]
    fn care_scalar_matches_quadratic_formula() {
        // a^T x + x a - x g x + q = 0 with scalars: -g x^2 + 2 a x + q = 0
        let (a, g, q) = (0.3, 2.0, 1.5);
        let sol = solve_care(
            &DMatrix::from_element(1, 1, a),
            &DMatrix::from_element(1, 1, g),
            &DMatrix::from_element(1, 1, q),
        )
        .unwrap();
        let expected = (a + (a * a + g * q).sqrt()) / g;
        assert!((sol.x[(0, 0)] - expected).abs() < 1e-13);
    }

    #[test]
    fn care_random_stabilizing() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for m in 1..=4 {
            let a = random_matrix(&mut rng, m, m);
            let bm = random_matrix(&mut rng, m, m);
            let cm = random_matrix(&mut rng, m, m);
            let g = &bm * bm.transpose() + DMatrix::identity(m, m) * 0.1;
            let q = &cm * cm.transpose();
            let sol = solve_care(&a, &g, &q).unwrap();
            assert!(sol.residual < 1e-10 * (1.0 + sol.x.norm()));
            assert!(is_hurwitz(&(&a - &g * &sol.x)));
            assert!(min_sym_eig(&sol.x) > -1e-10);
        }
    }

    #[test]
    fn care_without_stabilizing_solution_errors() {
        // -x^2 + 2 a x + q = 0 has no real root when a^2 + q < 0
        let err = solve_care(
            &DMatrix::from_element(1, 1, -0.1),
            &DMatrix::from_element(1, 1, 1.0),
            &DMatrix::from_element(1, 1, -1.0),
        )
        .unwrap_err();
        assert!(matches!(err, Error::NoStabilizingSolution(_)));
    }
}
