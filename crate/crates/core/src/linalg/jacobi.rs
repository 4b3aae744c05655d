//! Cyclic Jacobi eigendecomposition for small symmetric matrices.
//!
//! Used on the |Y| x |Y| Gram matrix of centered class means, where |Y|
//! is a handful of classes; unconditionally convergent and accurate for
//! symmetric PSD input.

use ndarray::{Array1, Array2};

use crate::scalar::Scalar;

/// Eigenvalues (ascending) and matching orthonormal eigenvectors
/// (columns of `vectors`) of a symmetric matrix.
pub struct SymmetricEigen<F> {
    pub values: Array1<F>,
    pub vectors: Array2<F>,
}

/// Decompose symmetric `a` by cyclic Jacobi rotations.
///
/// Panics if `a` is not square. Symmetry is assumed; only the given
/// entries are read.
pub fn symmetric_eigen<F: Scalar>(a: &Array2<F>) -> SymmetricEigen<F> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "jacobi needs a square matrix");
    let mut m = a.clone();
    let mut v = Array2::eye(n);
    if n <= 1 {
        return SymmetricEigen {
            values: m.diag().to_owned(),
            vectors: v,
        };
    }

    let eps = F::epsilon();
    let max_sweeps = 64;
    for _ in 0..max_sweeps {
        let mut off = F::zero();
        for p in 0..n {
            for q in (p + 1)..n {
                off = off + m[(p, q)] * m[(p, q)];
            }
        }
        let scale: F = m.diag().iter().map(|&d| d * d).sum::<F>() + off + off;
        if off + off <= eps * eps * scale || scale == F::zero() {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == F::zero() {
                    continue;
                }
                let app = m[(p, p)];
                let aqq = m[(q, q)];
                // rotation angle from tan(2θ) = 2apq / (app - aqq)
                let theta = (aqq - app) / ((F::one() + F::one()) * apq);
                let t = {
                    let sign = if theta >= F::zero() { F::one() } else { -F::one() };
                    sign / (theta.abs() + (F::one() + theta * theta).sqrt())
                };
                let c = F::one() / (F::one() + t * t).sqrt();
                let s = t * c;

                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
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

    // sort ascending by eigenvalue
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        m[(i, i)]
            .partial_cmp(&m[(j, j)])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let values = Array1::from_iter(order.iter().map(|&i| m[(i, i)]));
    let mut vectors = Array2::zeros((n, n));
    for (new_col, &old_col) in order.iter().enumerate() {
        for k in 0..n {
            vectors[(k, new_col)] = v[(k, old_col)];
        }
    }
    SymmetricEigen { values, vectors }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    #[test]
    fn diagonal_matrix_is_fixed_point() {
        let a = array![[3.0, 0.0], [0.0, 1.0]];
        let e = symmetric_eigen(&a);
        assert_relative_eq!(e.values[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(e.values[1], 3.0, epsilon = 1e-14);
    }

    #[test]
    fn known_two_by_two() {
        // eigenvalues of [[2,1],[1,2]] are 1 and 3
        let a = array![[2.0, 1.0], [1.0, 2.0]];
        let e = symmetric_eigen(&a);
        assert_relative_eq!(e.values[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(e.values[1], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn reconstructs_random_symmetric() {
        use rand::Rng;
        let mut rng = crate::rng::rng_from_seed(5);
        let n = 6;
        let mut a = Array2::zeros((n, n));
        for i in 0..n {
            for j in i..n {
                let v: f64 = rng.gen_range(-1.0..1.0);
                a[(i, j)] = v;
                a[(j, i)] = v;
            }
        }
        let e = symmetric_eigen(&a);
        // V diag(w) V^T == A
        let mut recon = Array2::<f64>::zeros((n, n));
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    recon[(i, j)] += e.values[k] * e.vectors[(i, k)] * e.vectors[(j, k)];
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                assert_relative_eq!(recon[(i, j)], a[(i, j)], epsilon = 1e-10);
            }
        }
        // columns orthonormal
        for p in 0..n {
            for q in 0..n {
                let dot: f64 = (0..n).map(|k| e.vectors[(k, p)] * e.vectors[(k, q)]).sum();
                let want = if p == q { 1.0 } else { 0.0 };
                assert_relative_eq!(dot, want, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn zero_matrix_gives_zero_eigenvalues() {
        let a = Array2::<f64>::zeros((3, 3));
        let e = symmetric_eigen(&a);
        assert!(e.values.iter().all(|&v| v == 0.0));
    }
}
