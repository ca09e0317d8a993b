//! Internal dense linear-algebra helpers: real/complex conversions and
//! positive-definite solvers shared by the model and FIM modules.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use num_complex::Complex64;

pub(crate) fn to_complex(m: &DMatrix<f64>) -> DMatrix<Complex64> {
    m.map(|x| Complex64::new(x, 0.0))
}

pub(crate) fn real_part(m: &DMatrix<Complex64>) -> DMatrix<f64> {
    m.map(|z| z.re)
}

pub(crate) fn imag_part(m: &DMatrix<Complex64>) -> DMatrix<f64> {
    m.map(|z| z.im)
}

pub(crate) fn from_parts(re: &DMatrix<f64>, im: &DMatrix<f64>) -> DMatrix<Complex64> {
    re.zip_map(im, Complex64::new)
}

/// `(M + M^H) / 2`; suppresses round-off asymmetry so downstream
/// eigen-checks see an exactly Hermitian matrix.
pub(crate) fn hermitian_part(m: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    (m + m.adjoint()).scale(0.5)
}

/// `(M + M^T) / 2` for real matrices.
pub(crate) fn symmetric_part(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()).scale(0.5)
}

/// Relative Frobenius distance `||a - reference|| / ||reference||`.
pub(crate) fn rel_frobenius(a: &DMatrix<f64>, reference: &DMatrix<f64>) -> f64 {
    let denom = reference.norm();
    if denom == 0.0 {
        return a.norm();
    }
    (a - reference).norm() / denom
}

/// Cholesky-backed solver for a real symmetric positive-definite matrix.
///
/// Complex right-hand sides are handled by solving the real and imaginary
/// parts separately; the factorization stays real.
pub(crate) struct SpdSolver {
    chol: Cholesky<f64, Dyn>,
}

impl SpdSolver {
    pub fn new(m: &DMatrix<f64>) -> Option<Self> {
        Cholesky::new(m.clone()).map(|chol| Self { chol })
    }

    /// `ln|M|` as twice the sum of log pivots; no determinant overflow.
    pub fn log_det(&self) -> f64 {
        self.chol
            .l_dirty()
            .diagonal()
            .iter()
            .map(|d| d.ln())
            .sum::<f64>()
            * 2.0
    }

    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    pub fn solve_complex(&self, b: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        let re = self.chol.solve(&real_part(b));
        let im = self.chol.solve(&imag_part(b));
        from_parts(&re, &im)
    }

    pub fn solve_complex_vec(&self, b: &DVector<Complex64>) -> DVector<Complex64> {
        let re = self.chol.solve(&b.map(|z| z.re));
        let im = self.chol.solve(&b.map(|z| z.im));
        re.zip_map(&im, Complex64::new)
    }
}

/// Cholesky-backed solver for a complex Hermitian positive-definite matrix.
pub(crate) struct HpdSolver {
    chol: Cholesky<Complex64, Dyn>,
}

impl HpdSolver {
    pub fn new(m: &DMatrix<Complex64>) -> Option<Self> {
        Cholesky::new(m.clone()).map(|chol| Self { chol })
    }

    pub fn solve(&self, b: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        self.chol.solve(b)
    }
}
