//! Cholesky factorization with diagonal jitter and a few dense helpers.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Relative diagonal jitter schedule: start at `initial`, multiply by ten on
/// each factorization failure, give up beyond `max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NuggetPolicy {
    pub initial: f64,
    pub max: f64,
}

impl Default for NuggetPolicy {
    fn default() -> Self {
        Self {
            initial: 1e-8,
            max: 1e-4,
        }
    }
}

impl NuggetPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial > 0.0 && self.max >= self.initial && self.max.is_finite()) {
            return Err(Error::Config(format!(
                "nugget policy needs 0 < initial <= max, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// A factorization of `A + nugget * I`.
#[derive(Debug, Clone)]
pub struct Jittered {
    pub chol: Cholesky<f64, Dyn>,
    /// Absolute value added to the diagonal.
    pub nugget: f64,
}

impl Jittered {
    pub fn log_det(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    /// `L^{-1} b` for the lower factor `L`.
    pub fn solve_lower(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        self.chol.l_dirty().solve_lower_triangular_mut(&mut x);
        x
    }

    /// `b^T (A + nugget I)^{-1} b`.
    pub fn quad_form(&self, b: &DVector<f64>) -> f64 {
        self.solve_lower(b).norm_squared()
    }

    pub fn lower(&self) -> DMatrix<f64> {
        self.chol.l()
    }
}

/// Factorizes `a + nugget * I` with `nugget = scale * policy.initial`,
/// escalating by factors of ten up to `scale * policy.max`.
pub fn cholesky_jittered(a: &DMatrix<f64>, scale: f64, policy: NuggetPolicy) -> Result<Jittered> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("matrix has non-finite entries"));
    }
    let mut rel = policy.initial;
    while rel <= policy.max * (1.0 + 1e-12) {
        let nugget = rel * scale;
        if let Some(j) = cholesky_with(a, nugget) {
            return Ok(j);
        }
        rel *= 10.0;
    }
    Err(Error::numeric(format!(
        "Cholesky failed with jitter up to {:e} (scale {scale:e})",
        policy.max
    )))
}

/// Factorizes `a + nugget * I` with exactly the given nugget.
pub fn cholesky_with(a: &DMatrix<f64>, nugget: f64) -> Option<Jittered> {
    let mut m = a.clone();
    for i in 0..m.nrows() {
        m[(i, i)] += nugget;
    }
    Cholesky::new(m).map(|chol| Jittered { chol, nugget })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn escalates_on_singular_matrix() {
        let a = DMatrix::from_element(4, 4, 1.0);
        let j = cholesky_jittered(&a, 1.0, NuggetPolicy::default()).unwrap();
        assert!(j.nugget >= 1e-8 && j.nugget <= 1e-4);
        let recon = j.lower() * j.lower().transpose();
        let mut expected = a.clone();
        for i in 0..4 {
            expected[(i, i)] += j.nugget;
        }
        assert!((recon - expected).abs().max() < 1e-12);
    }

    #[test]
    fn gives_up_on_indefinite() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(
            cholesky_jittered(&a, 1.0, NuggetPolicy::default()),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn log_det_and_quad_form() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let j = cholesky_with(&a, 0.0).unwrap();
        assert!((j.log_det() - 11f64.ln()).abs() < 1e-14);
        let b = DVector::from_vec(vec![1.0, 2.0]);
        let direct = b.dot(&(a.clone().try_inverse().unwrap() * &b));
        assert!((j.quad_form(&b) - direct).abs() < 1e-14);
    }
}
