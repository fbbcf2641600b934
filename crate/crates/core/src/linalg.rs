//! Dense symmetric eigendecomposition and small SPD helpers.
//!
//! The matrices handled here are the K x K transform inverses and the
//! N_x x N_x covariance matrices of the diagnostics module, all of modest
//! size, so a cyclic Jacobi sweep is accurate, deterministic, and fast
//! enough. Jacobi also stays fully generic over the scalar type, which a
//! LAPACK binding would not.

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Eigendecomposition `A = V diag(w) V^T` of a symmetric matrix.
///
/// Eigenvalues are sorted in descending order; `eigenvectors` holds the
/// corresponding orthonormal eigenvectors as columns.
#[derive(Debug, Clone)]
pub struct SymmetricEigen<S> {
    pub eigenvalues: Array1<S>,
    pub eigenvectors: Array2<S>,
}

const MAX_SWEEPS: usize = 100;

/// Computes the eigendecomposition of a symmetric matrix by cyclic Jacobi
/// rotations. The input is symmetrized as `(A + A^T)/2` before iteration, so
/// mild floating-point asymmetry is tolerated.
pub fn symmetric_eigen<S: Scalar>(matrix: &ArrayView2<S>) -> Result<SymmetricEigen<S>> {
    let n = matrix.nrows();
    if matrix.ncols() != n {
        return Err(Error::DimensionMismatch {
            context: "symmetric_eigen",
            expected: format!("{n} x {n}"),
            actual: format!("{} x {}", matrix.nrows(), matrix.ncols()),
        });
    }
    if n == 0 {
        return Ok(SymmetricEigen {
            eigenvalues: Array1::zeros(0),
            eigenvectors: Array2::zeros((0, 0)),
        });
    }

    // Flat row-major working copies; the rotation kernel is index-heavy and
    // this keeps it branch-light.
    let mut a: Vec<S> = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let m = (matrix[[i, j]] + matrix[[j, i]]) / S::cast(2.0);
            if !m.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("symmetric_eigen input at ({i}, {j})"),
                });
            }
            a.push(m);
        }
    }
    let mut v: Vec<S> = vec![S::zero(); n * n];
    for i in 0..n {
        v[i * n + i] = S::one();
    }

    let idx = |i: usize, j: usize| i * n + j;
    let two = S::cast(2.0);
    let hundred = S::cast(100.0);

    let mut converged = false;
    for sweep in 0..MAX_SWEEPS {
        let mut off = S::zero();
        for p in 0..n - 1 {
            for q in p + 1..n {
                off += a[idx(p, q)].abs();
            }
        }
        if off == S::zero() {
            converged = true;
            break;
        }
        // Early sweeps skip tiny pivots; later sweeps annihilate everything.
        let thresh = if sweep < 3 {
            S::cast(0.2) * off / S::cast_usize(n * n)
        } else {
            S::zero()
        };

        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = a[idx(p, q)];
                let g = hundred * apq.abs();
                // Off-diagonal entries that no longer perturb the diagonal at
                // working precision are set to zero outright.
                if sweep > 3
                    && a[idx(p, p)].abs() + g == a[idx(p, p)].abs()
                    && a[idx(q, q)].abs() + g == a[idx(q, q)].abs()
                {
                    a[idx(p, q)] = S::zero();
                    a[idx(q, p)] = S::zero();
                    continue;
                }
                if apq.abs() <= thresh {
                    continue;
                }

                let h = a[idx(q, q)] - a[idx(p, p)];
                let t = if h.abs() + g == h.abs() {
                    apq / h
                } else {
                    let theta = h / (two * apq);
                    let mut t = S::one() / (theta.abs() + (S::one() + theta * theta).sqrt());
                    if theta < S::zero() {
                        t = -t;
                    }
                    t
                };
                let c = S::one() / (S::one() + t * t).sqrt();
                let s = t * c;

                let app = a[idx(p, p)];
                let aqq = a[idx(q, q)];
                a[idx(p, p)] = app - t * apq;
                a[idx(q, q)] = aqq + t * apq;
                a[idx(p, q)] = S::zero();
                a[idx(q, p)] = S::zero();
                for j in 0..n {
                    if j == p || j == q {
                        continue;
                    }
                    let ajp = a[idx(j, p)];
                    let ajq = a[idx(j, q)];
                    let njp = c * ajp - s * ajq;
                    let njq = s * ajp + c * ajq;
                    a[idx(j, p)] = njp;
                    a[idx(p, j)] = njp;
                    a[idx(j, q)] = njq;
                    a[idx(q, j)] = njq;
                }
                for j in 0..n {
                    let vjp = v[idx(j, p)];
                    let vjq = v[idx(j, q)];
                    v[idx(j, p)] = c * vjp - s * vjq;
                    v[idx(j, q)] = s * vjp + c * vjq;
                }
            }
        }
    }
    if !converged {
        return Err(Error::EigenNoConvergence(MAX_SWEEPS));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        a[idx(j, j)]
            .partial_cmp(&a[idx(i, i)])
            .expect("finite eigenvalues")
    });

    let mut eigenvalues = Array1::zeros(n);
    let mut eigenvectors = Array2::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        eigenvalues[dst] = a[idx(src, src)];
        for row in 0..n {
            eigenvectors[[row, dst]] = v[idx(row, src)];
        }
    }
    Ok(SymmetricEigen {
        eigenvalues,
        eigenvectors,
    })
}

/// Inverse of a symmetric positive-definite matrix via its eigendecomposition.
///
/// Fails with [`Error::NotSpd`] if any eigenvalue is non-positive.
pub fn spd_inverse<S: Scalar>(matrix: &ArrayView2<S>) -> Result<Array2<S>> {
    let eig = symmetric_eigen(matrix)?;
    let n = eig.eigenvalues.len();
    if let Some(min) = eig.eigenvalues.iter().cloned().reduce(S::min) {
        if min <= S::zero() {
            return Err(Error::NotSpd(format!(
                "min eigenvalue {:e} is not positive",
                min.as_f64()
            )));
        }
    }
    let mut scaled = eig.eigenvectors.clone();
    for j in 0..n {
        let inv = S::one() / eig.eigenvalues[j];
        scaled.column_mut(j).mapv_inplace(|x| x * inv);
    }
    Ok(scaled.dot(&eig.eigenvectors.t()))
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue<S: Scalar>(matrix: &ArrayView2<S>) -> Result<S> {
    let eig = symmetric_eigen(matrix)?;
    Ok(eig
        .eigenvalues
        .iter()
        .cloned()
        .reduce(S::min)
        .unwrap_or_else(S::zero))
}

/// Frobenius norm.
pub fn frobenius_norm<S: Scalar>(matrix: &ArrayView2<S>) -> S {
    matrix.iter().map(|&x| x * x).sum::<S>().sqrt()
}
