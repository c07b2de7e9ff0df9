//! Dense linear algebra helpers.
//!
//! Small systems are handled with a hand-written pivoted LU; large
//! eigenproblems are delegated to `faer`.

use crate::{Error, Result};
use faer::Mat;
use num_complex::Complex64;

/// Solves `a x = b` in place for a row-major `n × n` complex matrix.
///
/// `a` is overwritten by its LU factors, `b` by the solution. A pivot whose
/// modulus falls below `pivot_floor` times the largest entry is reported as
/// [`Error::NearSingular`].
pub fn solve_in_place(
    a: &mut [Complex64],
    n: usize,
    b: &mut [Complex64],
    pivot_floor: f64,
) -> Result<()> {
    debug_assert_eq!(a.len(), n * n);
    debug_assert_eq!(b.len(), n);
    let scale = a.iter().map(|x| x.norm()).fold(0.0_f64, f64::max);
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::NearSingular("zero or non-finite matrix".into()));
    }
    for col in 0..n {
        let (piv, pmax) = (col..n)
            .map(|r| (r, a[r * n + col].norm()))
            .max_by(|x, y| x.1.total_cmp(&y.1))
            .expect("non-empty range");
        if pmax <= pivot_floor * scale {
            return Err(Error::NearSingular(format!(
                "pivot {pmax:.3e} in column {col} relative to scale {scale:.3e}"
            )));
        }
        if piv != col {
            for k in 0..n {
                a.swap(col * n + k, piv * n + k);
            }
            b.swap(col, piv);
        }
        let d = a[col * n + col];
        for r in col + 1..n {
            let f = a[r * n + col] / d;
            if f == Complex64::new(0.0, 0.0) {
                continue;
            }
            a[r * n + col] = f;
            for k in col + 1..n {
                let v = a[col * n + k];
                a[r * n + k] -= f * v;
            }
            let bc = b[col];
            b[r] -= f * bc;
        }
    }
    for r in (0..n).rev() {
        let mut acc = b[r];
        for k in r + 1..n {
            acc -= a[r * n + k] * b[k];
        }
        b[r] = acc / a[r * n + r];
    }
    Ok(())
}

/// Convenience wrapper that leaves its inputs untouched.
pub fn solve(a: &[Complex64], n: usize, b: &[Complex64]) -> Result<Vec<Complex64>> {
    let mut lu = a.to_vec();
    let mut x = b.to_vec();
    solve_in_place(&mut lu, n, &mut x, 1e-14)?;
    Ok(x)
}

/// Row-major slice to a `faer` matrix.
pub fn to_mat(a: &[Complex64], n: usize) -> Mat<Complex64> {
    Mat::from_fn(n, n, |i, j| a[i * n + j])
}

/// Eigenvalues and right eigenvectors (columns) of a general complex matrix.
pub fn eigen_general(a: &[Complex64], n: usize) -> Result<(Vec<Complex64>, Mat<Complex64>)> {
    let m = to_mat(a, n);
    let evd = m
        .eigen()
        .map_err(|e| Error::NearSingular(format!("eigendecomposition failed: {e:?}")))?;
    let vals = (0..n).map(|i| evd.S()[i]).collect();
    Ok((vals, evd.U().to_owned()))
}

/// Eigenvalues of a general complex matrix.
pub fn eigenvalues_general(a: &[Complex64], n: usize) -> Result<Vec<Complex64>> {
    to_mat(a, n)
        .eigenvalues()
        .map_err(|e| Error::NearSingular(format!("eigenvalue computation failed: {e:?}")))
}

/// Ascending eigenvalues of a Hermitian matrix (lower triangle is read).
pub fn hermitian_eigenvalues(h: &Mat<Complex64>) -> Result<Vec<f64>> {
    let mut v = h
        .self_adjoint_eigenvalues(faer::Side::Lower)
        .map_err(|e| Error::NearSingular(format!("Hermitian eigensolver failed: {e:?}")))?;
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// Eigenvalues (ascending) and orthonormal eigenvectors of a Hermitian matrix.
pub fn hermitian_eigen(h: &Mat<Complex64>) -> Result<(Vec<f64>, Mat<Complex64>)> {
    let evd = h
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|e| Error::NearSingular(format!("Hermitian eigensolver failed: {e:?}")))?;
    let n = h.nrows();
    let vals: Vec<f64> = (0..n).map(|i| evd.S()[i].re).collect();
    Ok((vals, evd.U().to_owned()))
}

/// Inverse of a general complex matrix via LU.
pub fn inverse(m: &Mat<Complex64>) -> Mat<Complex64> {
    use faer::linalg::solvers::Solve;
    let n = m.nrows();
    let lu = m.partial_piv_lu();
    lu.solve(Mat::<Complex64>::identity(n, n))
}

/// Determinant of a real row-major `n × n` matrix by partial-pivot elimination.
pub fn determinant(a: &[f64], n: usize) -> f64 {
    debug_assert_eq!(a.len(), n * n);
    let mut m = a.to_vec();
    let mut det = 1.0;
    for k in 0..n {
        let p = (k..n)
            .max_by(|&i, &j| m[i * n + k].abs().total_cmp(&m[j * n + k].abs()))
            .unwrap_or(k);
        if m[p * n + k] == 0.0 {
            return 0.0;
        }
        if p != k {
            for c in 0..n {
                m.swap(k * n + c, p * n + c);
            }
            det = -det;
        }
        let pivot = m[k * n + k];
        det *= pivot;
        for i in k + 1..n {
            let f = m[i * n + k] / pivot;
            for c in k..n {
                m[i * n + c] -= f * m[k * n + c];
            }
        }
    }
    det
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn small_solve_matches_hand_computation() {
        let a = [c(0.0, 1.0), c(2.0, 0.0), c(1.0, 0.0), c(1.0, -1.0)];
        let b = [c(1.0, 0.0), c(0.0, 1.0)];
        let x = solve(&a, 2, &b).unwrap();
        let r0 = a[0] * x[0] + a[1] * x[1] - b[0];
        let r1 = a[2] * x[0] + a[3] * x[1] - b[1];
        assert!(r0.norm() < 1e-14 && r1.norm() < 1e-14);
    }

    #[test]
    fn singular_matrix_is_reported() {
        let a = [c(1.0, 0.0), c(2.0, 0.0), c(2.0, 0.0), c(4.0, 0.0)];
        assert!(matches!(
            solve(&a, 2, &[c(1.0, 0.0); 2]),
            Err(Error::NearSingular(_))
        ));
    }

    #[test]
    fn general_eigenvalues_of_triangular_matrix() {
        let a = [c(1.0, 0.0), c(5.0, 0.0), c(0.0, 0.0), c(0.0, 2.0)];
        let mut v = eigenvalues_general(&a, 2).unwrap();
        v.sort_by(|x, y| x.norm().total_cmp(&y.norm()));
        assert!((v[0] - c(1.0, 0.0)).norm() < 1e-12);
        assert!((v[1] - c(0.0, 2.0)).norm() < 1e-12);
    }

    #[test]
    fn determinant_of_permuted_diagonal() {
        let a = [0.0, 2.0, 0.0, 3.0, 0.0, 0.0, 0.0, 0.0, 5.0];
        assert!((determinant(&a, 3) + 30.0).abs() < 1e-12);
        assert_eq!(determinant(&[1.0, 2.0, 2.0, 4.0], 2), 0.0);
    }
}
