//! Dense Newton iteration shared by the field, circuit and monolithic solvers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Absolute residual tolerance (max norm) for every Newton solve.
pub const NEWTON_TOL: f64 = 1e-10;
/// Iteration cap for every Newton solve.
pub const NEWTON_MAX_ITER: usize = 50;

#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: NEWTON_TOL,
            max_iter: NEWTON_MAX_ITER,
        }
    }
}

/// Solve `A x = b` by LU with partial pivoting.
pub fn solve_dense(a: DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let x = a.lu().solve(b)?;
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Newton iteration on `F(x) = 0`.
///
/// `eval` returns the residual and its Jacobian at `x`. `step` is only used
/// to label failures with the time step they occurred at.
pub fn newton<F>(mut x: DVector<f64>, opts: NewtonOptions, step: usize, mut eval: F) -> Result<DVector<f64>>
where
    F: FnMut(&DVector<f64>) -> (DVector<f64>, DMatrix<f64>),
{
    let mut residual = f64::INFINITY;
    for _ in 0..=opts.max_iter {
        let (r, jac) = eval(&x);
        residual = r.amax();
        if !residual.is_finite() {
            break;
        }
        if residual <= opts.tol {
            return Ok(x);
        }
        let dx = solve_dense(jac, &r).ok_or(Error::SingularMatrix { step })?;
        x -= dx;
    }
    Err(Error::NewtonFailed { step, residual })
}
