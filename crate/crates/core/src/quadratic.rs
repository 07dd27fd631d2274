//! Dense quadratic objectives `½ βᵀAβ − bᵀβ` and their jittered solves.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Quadratic in the dictionary coefficients, minimized by `(A + εI)β = b`.
#[derive(Debug, Clone)]
pub struct QuadraticProblem {
    /// Symmetric Hessian `A`.
    pub hessian: DMatrix<f64>,
    /// Linear term `b`.
    pub linear: DVector<f64>,
    /// Diagonal jitter `ε` added before factorization.
    pub jitter: f64,
}

/// `ε = rel · trace(G)/L`, the jitter scale for a feature second-moment matrix.
pub(crate) fn jitter_for(second_moment: &DMatrix<f64>, rel: f64) -> f64 {
    let l = second_moment.nrows().max(1) as f64;
    let scale = second_moment.trace() / l;
    if scale > 0.0 {
        rel * scale
    } else {
        rel
    }
}

/// Symmetrize in place: `(M + Mᵀ)/2`.
pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub(crate) fn add_diagonal(m: &DMatrix<f64>, eps: f64) -> DMatrix<f64> {
    let mut out = m.clone();
    for i in 0..out.nrows() {
        out[(i, i)] += eps;
    }
    out
}

/// Cholesky factorization or a numerical error carrying `advice`.
pub(crate) fn factor(m: DMatrix<f64>, advice: &str) -> Result<Cholesky<f64, Dyn>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("system matrix has non-finite entries; {advice}")));
    }
    Cholesky::new(m).ok_or_else(|| Error::Numerical(format!("system matrix is not positive definite; {advice}")))
}

/// Smallest eigenvalue of `Q` relative to `G + εI`, i.e. `min_β βᵀQβ / βᵀ(G + εI)β`.
pub fn min_generalized_eigenvalue(q: &DMatrix<f64>, g: &DMatrix<f64>, eps: f64) -> Result<f64> {
    let chol = factor(add_diagonal(g, eps), "the feature second moment is singular")?;
    let l = chol.l();
    let x = l.solve_lower_triangular(q).ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
    let mut w = l
        .solve_lower_triangular(&x.transpose())
        .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
    symmetrize(&mut w);
    Ok(w.symmetric_eigen().eigenvalues.min())
}

/// Tikhonov level for `Q + 2·level·G`: `level` itself, or with `floor` the
/// smallest of `max(level, −e_min)` that leaves the system positive definite
/// (`e_min` from [`min_generalized_eigenvalue`]).
pub fn floored_level(q: &DMatrix<f64>, g: &DMatrix<f64>, eps: f64, level: f64, floor: bool) -> Result<f64> {
    if !floor {
        return Ok(level);
    }
    let e = min_generalized_eigenvalue(q, g, eps)?;
    if -e > level {
        log::debug!("raising regularization from {level:e} to {:e}", -e);
        Ok(-e)
    } else {
        Ok(level)
    }
}

impl QuadraticProblem {
    pub fn new(hessian: DMatrix<f64>, linear: DVector<f64>, jitter: f64) -> Self {
        Self { hessian, linear, jitter }
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    /// `½ βᵀAβ − bᵀβ` (without jitter).
    pub fn value(&self, beta: &DVector<f64>) -> f64 {
        0.5 * beta.dot(&(&self.hessian * beta)) - self.linear.dot(beta)
    }

    /// Gradient `(A + εI)β − b` of the objective actually minimized.
    pub fn gradient(&self, beta: &DVector<f64>) -> DVector<f64> {
        &self.hessian * beta + beta * self.jitter - &self.linear
    }

    /// `‖∇‖ / (1 + ‖b‖)` at `beta`.
    pub fn relative_gradient(&self, beta: &DVector<f64>) -> f64 {
        self.gradient(beta).norm() / (1.0 + self.linear.norm())
    }

    pub fn solve(&self, advice: &str) -> Result<DVector<f64>> {
        let chol = factor(add_diagonal(&self.hessian, self.jitter), advice)?;
        let mut beta = chol.solve(&self.linear);
        // one step of iterative refinement against the jittered system
        let r = self.gradient(&beta);
        beta -= chol.solve(&r);
        if beta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("solution is not finite; {advice}")));
        }
        Ok(beta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_spd_system() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let b = DVector::from_vec(vec![1.0, -1.0]);
        let p = QuadraticProblem::new(a, b, 0.0);
        let beta = p.solve("").unwrap();
        assert!(p.relative_gradient(&beta) < 1e-14);
    }

    #[test]
    fn indefinite_is_reported_with_advice() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let p = QuadraticProblem::new(a, DVector::zeros(2), 1e-8);
        let err = p.solve("increase lambda").unwrap_err();
        assert!(err.to_string().contains("increase lambda"));
    }

    #[test]
    fn floor_restores_definiteness() {
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.3]);
        let g = DMatrix::identity(2, 2);
        assert!((min_generalized_eigenvalue(&q, &g, 0.0).unwrap() + 0.3).abs() < 1e-12);
        let level = floored_level(&q, &g, 0.0, 0.01, true).unwrap();
        assert!((level - 0.3).abs() < 1e-12);
        assert_eq!(floored_level(&q, &g, 0.0, 0.01, false).unwrap(), 0.01);
        let a = &q + &g * (2.0 * level);
        assert!(a.symmetric_eigen().eigenvalues.min() > 0.0);
    }

    #[test]
    fn symmetrize_averages() {
        let mut m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 4.0, 3.0]);
        symmetrize(&mut m);
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 3.0, 3.0]));
    }
}
