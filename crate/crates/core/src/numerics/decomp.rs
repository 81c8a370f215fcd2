use super::{symmetric_eigen, DenseMatrix, NumericsError};

const MAX_SVD_SWEEPS: usize = 80;

/// Solves `A X = B` by LU factorization with partial pivoting.
pub fn lu_solve(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix, NumericsError> {
    a.require_square()?;
    let n = a.rows();
    if b.rows() != n {
        return Err(NumericsError::DimensionMismatch {
            expected: format!("right-hand side with {n} rows"),
            actual: format!("{} rows", b.rows()),
        });
    }
    let mut lu = a.clone();
    let mut x = b.clone();
    let scale = a.max_abs();
    for k in 0..n {
        let pivot_row = (k..n)
            .max_by(|&i, &j| lu[(i, k)].abs().total_cmp(&lu[(j, k)].abs()))
            .unwrap_or(k);
        let pivot = lu[(pivot_row, k)];
        if pivot.abs() <= f64::EPSILON * scale * n as f64 || pivot == 0.0 {
            return Err(NumericsError::Singular);
        }
        if pivot_row != k {
            for j in 0..n {
                let tmp = lu[(k, j)];
                lu[(k, j)] = lu[(pivot_row, j)];
                lu[(pivot_row, j)] = tmp;
            }
            for j in 0..x.cols() {
                let tmp = x[(k, j)];
                x[(k, j)] = x[(pivot_row, j)];
                x[(pivot_row, j)] = tmp;
            }
        }
        for i in (k + 1)..n {
            let factor = lu[(i, k)] / pivot;
            lu[(i, k)] = factor;
            for j in (k + 1)..n {
                lu[(i, j)] -= factor * lu[(k, j)];
            }
            for j in 0..x.cols() {
                x[(i, j)] -= factor * x[(k, j)];
            }
        }
    }
    for j in 0..x.cols() {
        for i in (0..n).rev() {
            let mut acc = x[(i, j)];
            for k in (i + 1)..n {
                acc -= lu[(i, k)] * x[(k, j)];
            }
            x[(i, j)] = acc / lu[(i, i)];
        }
    }
    x.require_finite()?;
    Ok(x)
}

/// Singular values in descending order, by one-sided (Hestenes) Jacobi
/// orthogonalization of the columns. Accurate to high relative precision,
/// which the rank test relies on.
pub fn singular_values(m: &DenseMatrix) -> Result<Vec<f64>, NumericsError> {
    m.require_finite()?;
    let work = if m.rows() >= m.cols() { m.clone() } else { m.transpose() };
    let (rows, cols) = (work.rows(), work.cols());
    let mut cols_data: Vec<Vec<f64>> = (0..cols)
        .map(|j| (0..rows).map(|i| work[(i, j)]).collect())
        .collect();

    let mut converged = cols < 2;
    let mut sweep = 0;
    while !converged && sweep < MAX_SVD_SWEEPS {
        sweep += 1;
        let mut rotated = false;
        for p in 0..cols {
            for q in (p + 1)..cols {
                let alpha: f64 = cols_data[p].iter().map(|v| v * v).sum();
                let beta: f64 = cols_data[q].iter().map(|v| v * v).sum();
                let gamma: f64 = cols_data[p].iter().zip(&cols_data[q]).map(|(a, b)| a * b).sum();
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..rows {
                    let a = cols_data[p][i];
                    let b = cols_data[q][i];
                    cols_data[p][i] = c * a - s * b;
                    cols_data[q][i] = s * a + c * b;
                }
            }
        }
        converged = !rotated;
    }
    if !converged {
        return Err(NumericsError::NoConvergence {
            routine: "one-sided jacobi svd",
            iterations: MAX_SVD_SWEEPS,
        });
    }
    let mut values: Vec<f64> = cols_data.iter().map(|c| super::norm2(c)).collect();
    values.sort_by(|a, b| b.total_cmp(a));
    Ok(values)
}

/// Numerical rank: singular values above `tol` times the largest one.
pub fn rank(m: &DenseMatrix, tol: f64) -> Result<usize, NumericsError> {
    let sv = singular_values(m)?;
    let Some(&largest) = sv.first() else {
        return Ok(0);
    };
    if largest == 0.0 {
        return Ok(0);
    }
    Ok(sv.iter().filter(|&&s| s > tol * largest).count())
}

/// Nearest positive-semidefinite matrix in Frobenius norm: negative
/// eigenvalues clamped to zero.
pub fn project_to_psd(m: &DenseMatrix) -> Result<DenseMatrix, NumericsError> {
    let eig = symmetric_eigen(m)?;
    if eig.values.iter().all(|&v| v >= 0.0) {
        return m.symmetrized();
    }
    let out = eig.reconstruct_with(|v| v.max(0.0));
    // exact symmetry of the output
    Ok(DenseMatrix::from_fn(out.rows(), out.cols(), |i, j| {
        0.5 * (out[(i, j)] + out[(j, i)])
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{symmetric_eigenvalues, RANK_TOL};

    fn mat(rows: &[&[f64]]) -> DenseMatrix {
        DenseMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn rank_examples() {
        assert_eq!(rank(&DenseMatrix::identity(2), RANK_TOL).unwrap(), 2);
        assert_eq!(rank(&mat(&[&[0.4, 0.3], &[0.32, 0.24]]), RANK_TOL).unwrap(), 1);
        // det = 0.4*0.18 - 0.3*0.32 = -0.024
        assert_eq!(rank(&mat(&[&[0.4, 0.3], &[0.32, 0.18]]), RANK_TOL).unwrap(), 2);
        assert_eq!(rank(&DenseMatrix::zeros(3, 2), RANK_TOL).unwrap(), 0);
        assert_eq!(rank(&mat(&[&[1.0, 2.0, 3.0]]), RANK_TOL).unwrap(), 1);
    }

    #[test]
    fn lu_solves_and_detects_singularity() {
        let a = mat(&[&[2.0, 1.0], &[1.0, 3.0]]);
        let b = mat(&[&[3.0], &[5.0]]);
        let x = lu_solve(&a, &b).unwrap();
        assert!((x[(0, 0)] - 0.8).abs() < 1e-14);
        assert!((x[(1, 0)] - 1.4).abs() < 1e-14);
        let s = mat(&[&[1.0, 2.0], &[2.0, 4.0]]);
        assert_eq!(lu_solve(&s, &b), Err(NumericsError::Singular));
    }

    #[test]
    fn psd_projection_examples() {
        let out = project_to_psd(&DenseMatrix::from_diag(&[2.0, -3.0])).unwrap();
        assert!(out.sub(&DenseMatrix::from_diag(&[2.0, 0.0])).unwrap().max_abs() < 1e-14);

        let psd = mat(&[&[2.0, 1.0], &[1.0, 2.0]]);
        let same = project_to_psd(&psd).unwrap();
        assert!(same.sub(&psd).unwrap().max_abs() <= 1e-10);
    }

    #[test]
    fn psd_projection_distance_matches_clipped_eigenvalues() {
        let m = mat(&[&[1.0, 2.0, 0.5], &[2.0, -1.0, 0.3], &[0.5, 0.3, -2.0]]);
        let ev = symmetric_eigenvalues(&m).unwrap();
        let expected: f64 = ev.iter().filter(|&&v| v < 0.0).map(|v| v * v).sum::<f64>().sqrt();
        let out = project_to_psd(&m).unwrap();
        let dist = out.sub(&m).unwrap().frobenius_norm();
        assert!((dist - expected).abs() < 1e-10, "{dist} vs {expected}");
        assert!(symmetric_eigenvalues(&out).unwrap()[0] >= -1e-10);
    }

    #[test]
    fn psd_rejects_asymmetric() {
        let m = mat(&[&[1.0, 2.0], &[0.0, 1.0]]);
        assert!(matches!(project_to_psd(&m), Err(NumericsError::NotSymmetric { .. })));
    }
}
