//! Dense symmetric helpers that avoid iterative failures on structured input.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Eigen-decomposition of a symmetric matrix. nalgebra's implicit QR can
/// produce NaN on very sparse input; when it does the decomposition is
/// recomputed by cyclic Jacobi rotations.
pub(crate) fn symmetric_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m.clone());
    if eig
        .eigenvalues
        .iter()
        .chain(eig.eigenvectors.iter())
        .all(|v| v.is_finite())
    {
        return (eig.eigenvalues, eig.eigenvectors);
    }
    jacobi_eigen(m)
}

pub(crate) fn symmetric_eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    symmetric_eigen(m).0
}

fn jacobi_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let mut a = (m + m.transpose()) * 0.5;
    let mut v = DMatrix::identity(n, n);
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum();
        if off <= f64::EPSILON * f64::EPSILON * a.norm_squared().max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    (a.diagonal(), v)
}

/// Orthonormal basis of the orthogonal complement of the row space of
/// `rows`, assumed to have full row rank. Householder QR of `[rows' | I]`
/// yields a full orthogonal factor whose trailing columns span it.
pub(crate) fn null_space(rows: &DMatrix<f64>) -> DMatrix<f64> {
    let (k, n) = rows.shape();
    if k == 0 {
        return DMatrix::identity(n, n);
    }
    let mut aug = DMatrix::zeros(n, k + n);
    aug.view_mut((0, 0), (n, k)).copy_from(&rows.transpose());
    aug.view_mut((0, k), (n, n)).fill_with_identity();
    let q = aug.qr().q();
    let dim = n.saturating_sub(k);
    q.columns(n - dim, dim).into_owned()
}

/// Rank with `|R_kk|` below `rel_tol * |R_11|` treated as zero, from a
/// column-pivoted QR.
pub(crate) fn numerical_rank(a: &DMatrix<f64>, rel_tol: f64) -> usize {
    if a.is_empty() {
        return 0;
    }
    let r = a.clone().col_piv_qr().r();
    let d = r.nrows().min(r.ncols());
    let lead = (0..d).map(|k| r[(k, k)].abs()).fold(0.0, f64::max);
    if lead == 0.0 {
        return 0;
    }
    (0..d).filter(|&k| r[(k, k)].abs() > rel_tol * lead).count()
}
