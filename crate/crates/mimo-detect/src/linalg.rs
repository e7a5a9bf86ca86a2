//! Small dense linear algebra helpers: thin QR, triangular solves, and a
//! Jacobi eigensolver for symmetric matrices.
//!
//! Problem sizes in this crate stay below ~60 rows, so simple textbook
//! routines are both fast enough and easy to keep deterministic.

use crate::{Error, Result};
use ndarray::{Array1, Array2};

/// Thin QR factorization `a = q * r` via modified Gram-Schmidt with one
/// re-orthogonalization pass. `q` is m-by-n with orthonormal columns, `r` is
/// n-by-n upper triangular with non-negative diagonal.
///
/// Fails when a column is (numerically) linearly dependent on earlier ones.
pub fn qr_thin(a: &Array2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
    let (m, n) = a.dim();
    if m < n {
        return Err(Error::Domain(format!(
            "qr_thin requires rows >= cols, got {m}x{n}"
        )));
    }
    let mut q = a.clone();
    let mut r = Array2::<f64>::zeros((n, n));
    let scale = a.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1.0);
    for j in 0..n {
        // two orthogonalization passes keep q orthonormal to ~1e-14
        for _ in 0..2 {
            for i in 0..j {
                let dot = {
                    let qi = q.column(i);
                    let qj = q.column(j);
                    qi.dot(&qj)
                };
                r[[i, j]] += dot;
                let qi = q.column(i).to_owned();
                let mut qj = q.column_mut(j);
                qj.scaled_add(-dot, &qi);
            }
        }
        let norm = q.column(j).dot(&q.column(j)).sqrt();
        if norm <= 1e-13 * scale * (m as f64).sqrt() {
            return Err(Error::Numerical(format!(
                "rank-deficient matrix: column {j} collapsed in QR"
            )));
        }
        r[[j, j]] = norm;
        q.column_mut(j).mapv_inplace(|v| v / norm);
    }
    Ok((q, r))
}

/// Solve `r x = b` for upper-triangular `r`.
pub fn solve_upper(r: &Array2<f64>, b: &Array1<f64>) -> Result<Array1<f64>> {
    let n = r.nrows();
    if r.ncols() != n || b.len() != n {
        return Err(Error::Domain("solve_upper: shape mismatch".into()));
    }
    let mut x = b.clone();
    for i in (0..n).rev() {
        let mut s = x[i];
        for j in (i + 1)..n {
            s -= r[[i, j]] * x[j];
        }
        let d = r[[i, i]];
        if d.abs() < 1e-300 {
            return Err(Error::Numerical("solve_upper: zero pivot".into()));
        }
        x[i] = s / d;
    }
    Ok(x)
}

/// Eigendecomposition of a symmetric matrix by the cyclic Jacobi method.
/// Returns `(eigenvalues, v)` with `a = v * diag(eigenvalues) * v^T`,
/// eigenvalues in ascending order.
pub fn sym_eig(a: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Domain("sym_eig: matrix not square".into()));
    }
    let mut m = a.clone();
    let mut v = Array2::<f64>::eye(n);
    for sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[[i, j]] * m[[i, j]];
            }
        }
        if off.sqrt() <= 1e-14 * (1.0 + m.diag().iter().fold(0.0f64, |a, b| a.max(b.abs()))) {
            break;
        }
        if sweep == 99 {
            return Err(Error::Internal("sym_eig: Jacobi did not converge".into()));
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = m[[p, p]];
                let aqq = m[[q, q]];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[[i, i]].partial_cmp(&m[[j, j]]).unwrap());
    let vals = Array1::from_iter(order.iter().map(|&i| m[[i, i]]));
    let mut vecs = Array2::<f64>::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        vecs.column_mut(dst).assign(&v.column(src));
    }
    Ok((vals, vecs))
}

/// Symmetric positive-semidefinite square root: `s` with `s * s = a`.
pub fn sym_sqrt(a: &Array2<f64>) -> Result<Array2<f64>> {
    let (vals, vecs) = sym_eig(a)?;
    let n = a.nrows();
    if let Some(min) = vals.iter().cloned().reduce(f64::min) {
        if min < -1e-9 {
            return Err(Error::Internal(format!(
                "sym_sqrt: matrix not PSD (min eigenvalue {min:.3e})"
            )));
        }
    }
    let mut s = Array2::<f64>::zeros((n, n));
    for k in 0..n {
        let lk = vals[k].max(0.0).sqrt();
        let col = vecs.column(k);
        for i in 0..n {
            for j in 0..n {
                s[[i, j]] += lk * col[i] * col[j];
            }
        }
    }
    Ok(s)
}
