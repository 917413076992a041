//! Small dense solvers.

use crate::error::{Error, Result};
use crate::tensor::{dot, Matrix};

pub const POWER_TOL: f64 = 1e-10;
pub const POWER_MAX_ITER: usize = 10_000;

/// Largest singular value by power iteration on WᵀW.
pub fn operator_norm(w: &Matrix) -> Result<f64> {
    operator_norm_with(w, POWER_TOL, POWER_MAX_ITER)
}

pub fn operator_norm_with(w: &Matrix, tol: f64, max_iter: usize) -> Result<f64> {
    let n = w.cols();
    if n == 0 || w.rows() == 0 || w.max_abs() == 0.0 {
        return Ok(0.0);
    }
    let gram = w.t_matmul(w)?;
    // Fixed, non-symmetric start so no coordinate direction is favoured.
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.37 * i as f64 + 0.11 * ((i * i) % 7) as f64).collect();
    let nv = dot(&v, &v).sqrt();
    v.iter_mut().for_each(|x| *x /= nv);

    let mut prev = f64::NAN;
    for _ in 0..max_iter {
        let mut next = vec![0.0; n];
        for (r, o) in next.iter_mut().enumerate() {
            *o = dot(gram.row(r), &v);
        }
        let rayleigh = dot(&v, &next);
        let norm = dot(&next, &next).sqrt();
        if norm == 0.0 {
            return Ok(0.0);
        }
        next.iter_mut().for_each(|x| *x /= norm);
        v = next;
        if (rayleigh - prev).abs() <= tol * rayleigh.abs().max(f64::MIN_POSITIVE) {
            return Ok(rayleigh.max(0.0).sqrt());
        }
        prev = rayleigh;
    }
    Err(Error::Numeric(format!(
        "power iteration did not converge in {max_iter} iterations"
    )))
}

/// Solves the square system `a x = b` by Gaussian elimination with partial pivoting.
pub fn solve(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    let n = a.rows();
    if a.cols() != n || b.len() != n {
        return Err(Error::Shape {
            op: "solve",
            left: a.shape(),
            right: (b.len(), 1),
        });
    }
    let mut m = a.clone();
    let mut rhs = b.to_vec();
    let scale = a.max_abs().max(f64::MIN_POSITIVE);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m.get(i, col).abs().total_cmp(&m.get(j, col).abs()))
            .unwrap_or(col);
        if m.get(pivot, col).abs() <= 1e-13 * scale {
            return Err(Error::Numeric(format!("singular system (column {col})")));
        }
        if pivot != col {
            for c in 0..n {
                let tmp = m.get(col, c);
                m.set(col, c, m.get(pivot, c));
                m.set(pivot, c, tmp);
            }
            rhs.swap(col, pivot);
        }
        for r in col + 1..n {
            let f = m.get(r, col) / m.get(col, col);
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                let v = m.get(r, c) - f * m.get(col, c);
                m.set(r, c, v);
            }
            rhs[r] -= f * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| m.get(r, c) * x[c]).sum();
        x[r] = (rhs[r] - s) / m.get(r, r);
    }
    Ok(x)
}

/// Minimum-norm solution of the underdetermined system `a x = b` (full row rank).
pub fn least_norm_solve(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    let aat = a.matmul_t(a)?;
    let lambda = solve(&aat, b)?;
    let x = a.t_matmul(&Matrix::column(&lambda))?;
    Ok(x.into_data())
}
