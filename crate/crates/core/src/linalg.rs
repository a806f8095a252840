//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Solves `m x = rhs` by LU, rejecting singular or non-finite results.
pub fn solve(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let lu = m.clone().lu();
    let x = lu
        .solve(rhs)
        .ok_or_else(|| Error::Solver(format!("singular {}x{} system", m.nrows(), m.ncols())))?;
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(Error::Solver("non-finite solution".into()))
    }
}

/// Solves `m X = rhs` column-wise.
pub fn solve_matrix(m: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let lu = m.clone().lu();
    let x = lu
        .solve(rhs)
        .ok_or_else(|| Error::Solver(format!("singular {}x{} system", m.nrows(), m.ncols())))?;
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(Error::Solver("non-finite solution".into()))
    }
}

pub fn sup_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// `sqrt(sum_i d_i v_i^2)`.
pub fn weighted_norm(v: &DVector<f64>, d: &DVector<f64>) -> f64 {
    v.iter().zip(d.iter()).map(|(x, w)| w * x * x).sum::<f64>().sqrt()
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}
