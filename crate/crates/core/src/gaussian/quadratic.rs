//! Affine maps and quadratic forms in the factor variable, with exact
//! Gaussian expectations.

use nalgebra::{DMatrix, DVector};

/// `x -> mat x + off`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub mat: DMatrix<f64>,
    pub off: DVector<f64>,
}

impl Affine {
    pub fn new(mat: DMatrix<f64>, off: DVector<f64>) -> Self {
        debug_assert_eq!(mat.nrows(), off.len());
        Affine { mat, off }
    }

    pub fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.mat * x + &self.off
    }

    /// `m * self`.
    pub fn left_mul(&self, m: &DMatrix<f64>) -> Affine {
        Affine { mat: m * &self.mat, off: m * &self.off }
    }

    pub fn sub_const(&self, v: &DVector<f64>) -> Affine {
        Affine { mat: self.mat.clone(), off: &self.off - v }
    }
}

/// `x -> x^T quad x + lin^T x + constant`, with `quad` symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadratic {
    pub quad: DMatrix<f64>,
    pub lin: DVector<f64>,
    pub constant: f64,
}

impl Quadratic {
    pub fn zero(l: usize) -> Self {
        Quadratic { quad: DMatrix::zeros(l, l), lin: DVector::zeros(l), constant: 0.0 }
    }

    pub fn constant(l: usize, c: f64) -> Self {
        Quadratic { constant: c, ..Quadratic::zero(l) }
    }

    pub fn linear(lin: DVector<f64>, c: f64) -> Self {
        let l = lin.len();
        Quadratic { quad: DMatrix::zeros(l, l), lin, constant: c }
    }

    /// `(A x + a)^T W (B x + b)`.
    pub fn weighted_dot(a: &Affine, w: &DMatrix<f64>, b: &Affine) -> Quadratic {
        let wb = b.left_mul(w);
        Quadratic::dot(a, &wb)
    }

    /// `(A x + a)^T (B x + b)`.
    pub fn dot(a: &Affine, b: &Affine) -> Quadratic {
        let m = a.mat.transpose() * &b.mat;
        Quadratic {
            quad: (&m + m.transpose()) * 0.5,
            lin: a.mat.transpose() * &b.off + b.mat.transpose() * &a.off,
            constant: a.off.dot(&b.off),
        }
    }

    pub fn scale(mut self, s: f64) -> Quadratic {
        self.quad *= s;
        self.lin *= s;
        self.constant *= s;
        self
    }

    pub fn add(mut self, other: &Quadratic) -> Quadratic {
        self.quad += &other.quad;
        self.lin += &other.lin;
        self.constant += other.constant;
        self
    }

    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.quad * x)) + self.lin.dot(x) + self.constant
    }

    /// `E[q(X)]` for `X ~ Normal(mean, cov)`.
    pub fn gaussian_mean(&self, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
        mean.dot(&(&self.quad * mean)) + (&self.quad * cov).trace() + self.lin.dot(mean) + self.constant
    }
}
