//! Eigen-decomposition of a real symmetric tridiagonal matrix by the QL
//! algorithm with implicit Wilkinson shifts.

use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 60;

/// Eigenvalues and eigenvectors of a symmetric tridiagonal matrix.
#[derive(Debug, Clone)]
pub struct TridiagEigen {
    /// Eigenvalues in ascending order.
    pub values: Vec<f64>,
    /// Column-major eigenvectors: `vectors[k]` is the unit eigenvector for `values[k]`.
    pub vectors: Vec<Vec<f64>>,
}

/// Decomposes the matrix with diagonal `diag` (length n) and off-diagonal
/// `off` (length n - 1).
pub fn symmetric_tridiagonal_eigen(diag: &[f64], off: &[f64]) -> Result<TridiagEigen> {
    let n = diag.len();
    if n == 0 || off.len() + 1 != n {
        return Err(crate::error::invalid(format!(
            "tridiagonal shape mismatch: {} diagonal, {} off-diagonal entries",
            n,
            off.len()
        )));
    }
    let mut d = diag.to_vec();
    // e[i] couples rows i and i + 1; the trailing slot is scratch.
    let mut e = off.to_vec();
    e.push(0.0);
    // z[row][col], starts as the identity.
    let mut z = vec![vec![0.0; n]; n];
    for (i, row) in z.iter_mut().enumerate() {
        row[i] = 1.0;
    }

    for l in 0..n {
        let mut iter = 0;
        loop {
            // Look for a negligible off-diagonal element to split the matrix.
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > MAX_SWEEPS {
                return Err(Error::EigenNoConvergence);
            }
            // Wilkinson shift from the leading 2x2 block.
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let mut s = 1.0;
            let mut c = 1.0;
            let mut p = 0.0;
            let mut i = m;
            let mut underflow = false;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                for row in z.iter_mut() {
                    let zf = row[i + 1];
                    row[i + 1] = s * row[i] + c * zf;
                    row[i] = c * row[i] - s * zf;
                }
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| d[a].total_cmp(&d[b]));
    let values = order.iter().map(|&k| d[k]).collect();
    let vectors = order
        .iter()
        .map(|&k| z.iter().map(|row| row[k]).collect())
        .collect();
    Ok(TridiagEigen { values, vectors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn residual(diag: &[f64], off: &[f64], lambda: f64, v: &[f64]) -> f64 {
        let n = diag.len();
        (0..n)
            .map(|i| {
                let mut acc = diag[i] * v[i];
                if i > 0 {
                    acc += off[i - 1] * v[i - 1];
                }
                if i + 1 < n {
                    acc += off[i] * v[i + 1];
                }
                (acc - lambda * v[i]).abs()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn two_by_two() {
        let eig = symmetric_tridiagonal_eigen(&[0.0, 0.0], &[1.0]).unwrap();
        assert_abs_diff_eq!(eig.values[0], -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(eig.values[1], 1.0, epsilon = 1e-15);
        for v in &eig.vectors {
            assert_abs_diff_eq!(v[0] * v[0], 0.5, epsilon = 1e-15);
        }
    }

    #[test]
    fn one_by_one() {
        let eig = symmetric_tridiagonal_eigen(&[3.5], &[]).unwrap();
        assert_eq!(eig.values, vec![3.5]);
        assert_eq!(eig.vectors, vec![vec![1.0]]);
    }

    #[test]
    fn discrete_laplacian_has_known_spectrum() {
        // tridiag(-1, 2, -1) of size n has eigenvalues 2 - 2 cos(k pi / (n + 1)).
        let n = 9;
        let diag = vec![2.0; n];
        let off = vec![-1.0; n - 1];
        let eig = symmetric_tridiagonal_eigen(&diag, &off).unwrap();
        for (k, &lambda) in eig.values.iter().enumerate() {
            let exact = 2.0 - 2.0 * ((k + 1) as f64 * std::f64::consts::PI / (n + 1) as f64).cos();
            assert_abs_diff_eq!(lambda, exact, epsilon = 1e-13);
            assert!(residual(&diag, &off, lambda, &eig.vectors[k]) < 1e-13);
            let norm: f64 = eig.vectors[k].iter().map(|x| x * x).sum();
            assert_abs_diff_eq!(norm, 1.0, epsilon = 1e-13);
        }
    }

    #[test]
    fn split_matrix_with_zero_coupling() {
        let diag = [1.0, 5.0, -2.0];
        let off = [0.0, 0.5];
        let eig = symmetric_tridiagonal_eigen(&diag, &off).unwrap();
        assert!(eig.values.iter().any(|&v| (v - 1.0).abs() < 1e-15));
        for (k, &lambda) in eig.values.iter().enumerate() {
            assert!(residual(&diag, &off, lambda, &eig.vectors[k]) < 1e-13);
        }
    }

    #[test]
    fn rejects_shape_mismatch() {
        assert!(symmetric_tridiagonal_eigen(&[1.0, 2.0], &[]).is_err());
    }
}
