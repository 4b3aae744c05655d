//! Dense pseudo-inverse, the exact-metric and test-oracle path.
//!
//! Both covariance operators are symmetric PSD, so their SVD coincides
//! with the symmetric eigendecomposition; nalgebra's symmetric solver is
//! used because its general bidiagonalization SVD occasionally loses
//! precision on rank-deficient input. Everything here is `O(n^3)` and
//! guarded by the dense limit, unlike the streaming operators in the
//! parent module.

use nalgebra::{DMatrix, RealField};
use ndarray::Array2;

use crate::scalar::Scalar;

fn to_na<F: Scalar + RealField>(a: &Array2<F>) -> DMatrix<F> {
    DMatrix::from_row_iterator(a.nrows(), a.ncols(), a.iter().cloned())
}

fn from_na<F: Scalar + RealField>(a: &DMatrix<F>) -> Array2<F> {
    Array2::from_shape_fn((a.nrows(), a.ncols()), |(i, j)| a[(i, j)].clone())
}

/// Moore-Penrose pseudo-inverse of a symmetric PSD matrix: invert the
/// spectrum above `rel_eps` times the largest singular value, zero the
/// rest.
pub fn svd_pinv<F: Scalar + RealField>(a: &Array2<F>, rel_eps: F) -> Array2<F> {
    let n = a.nrows();
    debug_assert_eq!(n, a.ncols());
    let eig = to_na(a).symmetric_eigen();
    let smax = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(F::zero(), |acc, v| if v > acc { v } else { acc });
    let cutoff = rel_eps * smax;
    let mut out = DMatrix::<F>::zeros(n, n);
    for e in 0..n {
        let lambda = eig.eigenvalues[e].clone();
        if lambda > cutoff && lambda > F::zero() {
            let v = eig.eigenvectors.column(e);
            for i in 0..n {
                for j in 0..n {
                    out[(i, j)] += v[i].clone() * v[j].clone() / lambda.clone();
                }
            }
        }
    }
    from_na(&out)
}

/// Orthogonal projector onto the range of symmetric PSD `a`: `a a^†`.
pub fn svd_range_projector<F: Scalar + RealField>(a: &Array2<F>, rel_eps: F) -> Array2<F> {
    let pinv = svd_pinv(a, rel_eps);
    let prod = to_na(a) * to_na(&pinv);
    from_na(&prod)
}

/// `tr(a · b)` without forming the product.
pub fn trace_of_product<F: Scalar>(a: &Array2<F>, b: &Array2<F>) -> F {
    debug_assert_eq!(a.ncols(), b.nrows());
    debug_assert_eq!(a.nrows(), b.ncols());
    let mut tr = F::zero();
    for i in 0..a.nrows() {
        tr = tr + a.row(i).dot(&b.column(i));
    }
    tr
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    #[test]
    fn pinv_of_rank_deficient_diagonal() {
        let a = array![[2.0, 0.0], [0.0, 0.0]];
        let p = svd_pinv(&a, 1e-10);
        assert_relative_eq!(p[(0, 0)], 0.5, epsilon = 1e-14);
        assert_relative_eq!(p[(1, 1)], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn pinv_of_zero_matrix_is_zero() {
        let a = Array2::<f64>::zeros((3, 3));
        let p = svd_pinv(&a, 1e-10);
        assert!(p.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pinv_satisfies_moore_penrose_on_random_low_rank() {
        use rand::Rng;
        let mut rng = crate::rng::rng_from_seed(9);
        for _ in 0..20 {
            let n = rng.gen_range(4..60);
            let r = rng.gen_range(1..4.min(n));
            // a = sum of r random rank-one terms
            let mut a = Array2::<f64>::zeros((n, n));
            for _ in 0..r {
                let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                for i in 0..n {
                    for j in 0..n {
                        a[(i, j)] += v[i] * v[j];
                    }
                }
            }
            let p = svd_pinv(&a, 1e-10);
            let apa = a.dot(&p).dot(&a);
            let norm: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
            let err: f64 = (&apa - &a).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(err <= 1e-11 * norm.max(1.0), "moore-penrose residual {err}");
        }
    }

    #[test]
    fn projector_squares_to_itself() {
        let a = array![[1.0, 1.0], [1.0, 1.0]]; // rank one
        let p = svd_range_projector(&a, 1e-10);
        let pp = p.dot(&p);
        for i in 0..2 {
            for j in 0..2 {
                assert_relative_eq!(pp[(i, j)], p[(i, j)], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn trace_of_product_matches_full_product() {
        let a = array![[1.0, 2.0], [3.0, 4.0]];
        let b = array![[5.0, 6.0], [7.0, 8.0]];
        let full = a.dot(&b);
        assert_relative_eq!(
            trace_of_product(&a, &b),
            full[(0, 0)] + full[(1, 1)],
            epsilon = 1e-14
        );
    }
}
