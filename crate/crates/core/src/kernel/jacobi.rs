//! Cyclic Jacobi eigenvalue iteration for small dense symmetric matrices.

use crate::{Error, Matrix, Result};

pub const MAX_SWEEPS: usize = 100;
/// Convergence: every off-diagonal magnitude below `OFF_DIAG_TOL · ‖A‖_F`.
pub const OFF_DIAG_TOL: f64 = 1e-12;

/// All eigenvalues of a symmetric matrix, ascending.
pub fn symmetric_eigenvalues(a: &Matrix) -> Result<Vec<f64>> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::dim("eigenvalue input (square)", n, a.cols()));
    }
    if n == 0 {
        return Err(Error::InvalidInput("eigenvalues of an empty matrix".into()));
    }
    let norm = a.frobenius();
    if !norm.is_finite() {
        return Err(Error::InvalidInput("non-finite matrix entry".into()));
    }
    let sym_tol = 1e-12 * norm.max(1.0);
    for i in 0..n {
        for j in i + 1..n {
            if (a[(i, j)] - a[(j, i)]).abs() > sym_tol {
                return Err(Error::InvalidInput(format!(
                    "matrix is not symmetric at ({i}, {j}): {} vs {}",
                    a[(i, j)],
                    a[(j, i)]
                )));
            }
        }
    }

    let mut m = a.clone();
    let threshold = OFF_DIAG_TOL * norm;
    for _ in 0..MAX_SWEEPS {
        let max_off = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)].abs())
            .fold(0.0, f64::max);
        if max_off <= threshold {
            let mut eig: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();
            eig.sort_by(f64::total_cmp);
            return Ok(eig);
        }
        for p in 0..n {
            for q in p + 1..n {
                rotate(&mut m, p, q);
            }
        }
    }
    Err(Error::Numerical(format!(
        "Jacobi iteration did not converge in {MAX_SWEEPS} sweeps"
    )))
}

/// Zeroes `m[p][q]` with a two-sided Givens rotation.
fn rotate(m: &mut Matrix, p: usize, q: usize) {
    let apq = m[(p, q)];
    if apq == 0.0 {
        return;
    }
    let (app, aqq) = (m[(p, p)], m[(q, q)]);
    let theta = (aqq - app) / (2.0 * apq);
    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
    let t = if theta == 0.0 { 1.0 } else { t };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;
    let n = m.rows();
    for k in 0..n {
        if k == p || k == q {
            continue;
        }
        let (akp, akq) = (m[(k, p)], m[(k, q)]);
        let new_kp = c * akp - s * akq;
        let new_kq = s * akp + c * akq;
        m[(k, p)] = new_kp;
        m[(p, k)] = new_kp;
        m[(k, q)] = new_kq;
        m[(q, k)] = new_kq;
    }
    m[(p, p)] = app - t * apq;
    m[(q, q)] = aqq + t * apq;
    m[(p, q)] = 0.0;
    m[(q, p)] = 0.0;
}
