//! Matrix-free covariance operators over an embedding dataset.
//!
//! Two symmetric PSD operators are exposed without ever materializing an
//! `n x n` matrix:
//!
//! * within-class covariance: `(1/m) Σ_y Σ_{i in y} (f_i - μ_y)(f_i - μ_y)^T`,
//!   applied by streaming over the data one row at a time;
//! * between-class covariance: `(1/|Y|) Σ_y (μ_y - μ_G)(μ_y - μ_G)^T`,
//!   applied from the cached class means in `O(|Y| n)`.
//!
//! The between-class operator has rank at most `|Y| - 1` (centered class
//! means sum to zero), so its pseudo-inverse is available exactly through
//! an eigendecomposition of the small `|Y| x |Y|` Gram matrix of centered
//! means, or approximately through a conjugate-gradient least-squares
//! iteration that only touches the operator via matvecs. Both yield the
//! minimum-norm least-squares solution.

pub mod dense;
mod jacobi;

pub use jacobi::{symmetric_eigen, SymmetricEigen};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::Serialize;

use crate::dataset::EmbeddingDataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Relative eigenvalue cutoff for numerical rank decisions.
pub const RANK_EPS: f64 = 1e-10;
/// Default relative tolerance on the projected residual of iterative solves.
pub const DEFAULT_SOLVE_TOL: f64 = 1e-8;
/// Largest feature dimension for which dense construction is permitted.
pub const DENSE_LIMIT: usize = 2048;

/// Which covariance operator to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovKind {
    /// Intra-class feature covariance (data pass per application).
    WithinClass,
    /// Covariance of the class means around their unweighted mean.
    BetweenClass,
}

/// How to apply the between-class pseudo-inverse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    /// Exact low-rank route through the Gram matrix of centered means.
    GramExact,
    /// Conjugate gradient on the normal equations (min-norm least squares).
    Iterative,
}

/// Per-class means, their unweighted mean, and class counts.
#[derive(Debug, Clone)]
pub struct ClassStatistics<F> {
    /// Row `y` is the mean feature vector of class `y`.
    pub class_means: Array2<F>,
    /// Unweighted mean of the class means.
    pub global_mean: Array1<F>,
    /// Examples per class.
    pub class_counts: Vec<usize>,
}

/// Exact class means in one streaming pass; the global mean is the
/// unweighted mean over class means.
pub fn compute_class_statistics<F: Scalar>(
    d: &EmbeddingDataset<F>,
) -> Result<ClassStatistics<F>> {
    let (m, n, k) = (d.len(), d.dim(), d.n_classes());
    let mut sums: Array2<F> = Array2::zeros((k, n));
    let mut counts = vec![0usize; k];
    for i in 0..m {
        let y = d.class_labels()[i] as usize;
        let mut row = sums.row_mut(y);
        row += &d.row(i);
        counts[y] += 1;
    }
    for (y, &c) in counts.iter().enumerate() {
        if c == 0 {
            return Err(Error::EmptyClass(y));
        }
        let inv = F::one() / F::from_f64_lossy(c as f64);
        sums.row_mut(y).mapv_inplace(|v| v * inv);
    }
    let class_means = sums;
    let inv_k = F::one() / F::from_f64_lossy(k as f64);
    let mut global_mean = Array1::zeros(n);
    for y in 0..k {
        global_mean += &class_means.row(y);
    }
    global_mean.mapv_inplace(|v| v * inv_k);
    Ok(ClassStatistics {
        class_means,
        global_mean,
        class_counts: counts,
    })
}

/// Solution of a pseudo-inverse application `x ≈ Σ_between^† z`.
#[derive(Debug, Clone)]
pub struct SolveReport<F> {
    pub solution: Array1<F>,
    /// `‖Σ_between x - z_range‖` where `z_range` is the projection of `z`
    /// onto the operator's range.
    pub residual_norm: F,
    pub iterations: usize,
    pub converged: bool,
    /// Set when the operator is identically zero (all class means equal);
    /// the pseudo-inverse then maps everything to zero.
    pub degenerate: bool,
}

/// Matrix-free handle over a dataset: cached class statistics plus
/// application of either covariance operator.
pub struct CovOperators<'a, F> {
    data: &'a EmbeddingDataset<F>,
    stats: ClassStatistics<F>,
    /// Rows are the centered class means `μ_y - μ_G`.
    centered: Array2<F>,
}

impl<'a, F: Scalar> CovOperators<'a, F> {
    pub fn new(data: &'a EmbeddingDataset<F>) -> Result<Self> {
        let stats = compute_class_statistics(data)?;
        Ok(Self::with_stats(data, stats))
    }

    pub(crate) fn with_stats(data: &'a EmbeddingDataset<F>, stats: ClassStatistics<F>) -> Self {
        let k = stats.class_means.nrows();
        let n = stats.class_means.ncols();
        let mut centered = Array2::zeros((k, n));
        for y in 0..k {
            let mut row = centered.row_mut(y);
            row.assign(&stats.class_means.row(y));
            row -= &stats.global_mean;
        }
        Self {
            data,
            stats,
            centered,
        }
    }

    pub fn stats(&self) -> &ClassStatistics<F> {
        &self.stats
    }

    /// Centered class means, one row per class.
    pub fn centered_means(&self) -> ArrayView2<'_, F> {
        self.centered.view()
    }

    pub fn dim(&self) -> usize {
        self.data.dim()
    }

    fn n_classes(&self) -> usize {
        self.stats.class_means.nrows()
    }

    /// Apply the operator to a single vector.
    pub fn apply(&self, kind: CovKind, x: ArrayView1<'_, F>) -> Result<Array1<F>> {
        let block = self.apply_block(kind, x.insert_axis(ndarray::Axis(0)))?;
        Ok(block.row(0).to_owned())
    }

    /// Apply the operator to `K` vectors (rows of `xs`) in one data pass.
    ///
    /// Peak extra memory is one length-`n` centering buffer plus the
    /// `K x n` output; the operator matrix itself is never formed.
    pub fn apply_block(&self, kind: CovKind, xs: ArrayView2<'_, F>) -> Result<Array2<F>> {
        let n = self.dim();
        if xs.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: xs.ncols(),
                context: "operator input".into(),
            });
        }
        for &v in xs.iter() {
            if !v.is_finite() {
                return Err(Error::InvalidArg("non-finite operator input".into()));
            }
        }
        match kind {
            CovKind::WithinClass => Ok(self.within_block(xs)),
            CovKind::BetweenClass => Ok(self.between_block(xs)),
        }
    }

    fn within_block(&self, xs: ArrayView2<'_, F>) -> Array2<F> {
        let (m, n) = (self.data.len(), self.dim());
        let kk = xs.nrows();
        let mut out: Array2<F> = Array2::zeros((kk, n));
        let mut dev: Array1<F> = Array1::zeros(n);
        for i in 0..m {
            let y = self.data.class_labels()[i] as usize;
            dev.assign(&self.data.row(i));
            dev -= &self.stats.class_means.row(y);
            for j in 0..kk {
                let coef = dev.dot(&xs.row(j));
                let mut row = out.row_mut(j);
                row.scaled_add(coef, &dev);
            }
        }
        let inv_m = F::one() / F::from_f64_lossy(m as f64);
        out.mapv_inplace(|v| v * inv_m);
        out
    }

    fn between_block(&self, xs: ArrayView2<'_, F>) -> Array2<F> {
        let (k, n) = (self.n_classes(), self.dim());
        let kk = xs.nrows();
        let inv_k = F::one() / F::from_f64_lossy(k as f64);
        let mut out: Array2<F> = Array2::zeros((kk, n));
        for j in 0..kk {
            let x = xs.row(j);
            let mut row = out.row_mut(j);
            for y in 0..k {
                let c = self.centered.row(y);
                let coef = c.dot(&x) * inv_k;
                row.scaled_add(coef, &c);
            }
        }
        out
    }

    /// Materialize the operator; test oracle and exact-metric path only.
    pub fn dense(&self, kind: CovKind) -> Result<Array2<F>> {
        self.dense_with_limit(kind, DENSE_LIMIT)
    }

    pub fn dense_with_limit(&self, kind: CovKind, limit: usize) -> Result<Array2<F>> {
        let n = self.dim();
        if n > limit {
            return Err(Error::DenseLimit { n, limit });
        }
        let mut out: Array2<F> = Array2::zeros((n, n));
        match kind {
            CovKind::WithinClass => {
                let m = self.data.len();
                let mut dev: Array1<F> = Array1::zeros(n);
                for i in 0..m {
                    let y = self.data.class_labels()[i] as usize;
                    dev.assign(&self.data.row(i));
                    dev -= &self.stats.class_means.row(y);
                    for a in 0..n {
                        let da = dev[a];
                        if da == F::zero() {
                            continue;
                        }
                        let mut row = out.row_mut(a);
                        row.scaled_add(da, &dev);
                    }
                }
                let inv_m = F::one() / F::from_f64_lossy(m as f64);
                out.mapv_inplace(|v| v * inv_m);
            }
            CovKind::BetweenClass => {
                let k = self.n_classes();
                let inv_k = F::one() / F::from_f64_lossy(k as f64);
                for y in 0..k {
                    let c = self.centered.row(y);
                    for a in 0..n {
                        let ca = c[a] * inv_k;
                        if ca == F::zero() {
                            continue;
                        }
                        let mut row = out.row_mut(a);
                        row.scaled_add(ca, &c);
                    }
                }
            }
        }
        Ok(out)
    }

    /// Minimum-norm least-squares application of the between-class
    /// pseudo-inverse: `x = Σ_between^† z`.
    pub fn between_pinv_apply(
        &self,
        z: ArrayView1<'_, F>,
        method: SolveMethod,
        tol: F,
        max_iter: usize,
    ) -> Result<SolveReport<F>> {
        let n = self.dim();
        if z.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: z.len(),
                context: "pseudo-inverse input".into(),
            });
        }
        match method {
            SolveMethod::GramExact => Ok(self.gram_pinv(z)),
            SolveMethod::Iterative => Ok(self.cgls(z, tol, max_iter)),
        }
    }

    /// Exact route: with centered means as columns of `M` (so that
    /// `Σ_between = (1/|Y|) M M^T`) and `G = M^T M`, the pseudo-inverse is
    /// `|Y| · M (G^†)² M^T`, computed from the eigendecomposition of the
    /// small Gram matrix with relative cutoff [`RANK_EPS`].
    fn gram_pinv(&self, z: ArrayView1<'_, F>) -> SolveReport<F> {
        let k = self.n_classes();
        let kf = F::from_f64_lossy(k as f64);
        let mut gram: Array2<F> = Array2::zeros((k, k));
        for a in 0..k {
            for b in a..k {
                let v = self.centered.row(a).dot(&self.centered.row(b));
                gram[(a, b)] = v;
                gram[(b, a)] = v;
            }
        }
        let eig = symmetric_eigen(&gram);
        let lambda_max = eig
            .values
            .iter()
            .cloned()
            .fold(F::zero(), |acc, v| if v > acc { v } else { acc });
        let cutoff = F::from_f64_lossy(RANK_EPS) * lambda_max;

        let mut solution: Array1<F> = Array1::zeros(self.dim());
        if lambda_max > F::zero() {
            // w = M^T z expressed through rows of the centered matrix
            let w: Array1<F> =
                Array1::from_iter((0..k).map(|y| self.centered.row(y).dot(&z)));
            // u = (G^†)² w over the retained spectrum
            let mut u: Array1<F> = Array1::zeros(k);
            for e in 0..k {
                let lambda = eig.values[e];
                if lambda <= cutoff {
                    continue;
                }
                let vcol = eig.vectors.column(e);
                let proj = vcol.dot(&w) / (lambda * lambda);
                u.scaled_add(proj, &vcol);
            }
            // x = |Y| · M u
            for y in 0..k {
                solution.scaled_add(kf * u[y], &self.centered.row(y));
            }
        }
        let degenerate = lambda_max <= F::zero();
        let residual_norm = self.projected_residual(z, solution.view());
        SolveReport {
            solution,
            residual_norm,
            iterations: 0,
            converged: true,
            degenerate,
        }
    }

    /// `‖Σ_between x - z_range‖` with the range projection taken from a
    /// Gram-Schmidt basis of the centered means (independent of the
    /// eigendecomposition route).
    fn projected_residual(&self, z: ArrayView1<'_, F>, x: ArrayView1<'_, F>) -> F {
        let ax = self.between_block(x.insert_axis(ndarray::Axis(0)));
        let basis = self.range_basis();
        let mut diff = ax.row(0).to_owned();
        for q in basis.iter() {
            let coef = q.dot(&z);
            diff.scaled_add(-coef, q);
        }
        diff.dot(&diff).sqrt()
    }

    /// Orthonormal basis of span{μ_y - μ_G} by modified Gram-Schmidt.
    fn range_basis(&self) -> Vec<Array1<F>> {
        let k = self.n_classes();
        let max_norm = (0..k)
            .map(|y| self.centered.row(y).dot(&self.centered.row(y)).sqrt())
            .fold(F::zero(), |acc, v| if v > acc { v } else { acc });
        let drop_tol = max_norm * F::from_f64_lossy(1e-12);
        let mut basis: Vec<Array1<F>> = Vec::new();
        for y in 0..k {
            let mut v = self.centered.row(y).to_owned();
            for q in &basis {
                let coef = q.dot(&v);
                v.scaled_add(-coef, q);
            }
            let norm = v.dot(&v).sqrt();
            if norm > drop_tol && norm > F::zero() {
                v.mapv_inplace(|e| e / norm);
                basis.push(v);
            }
        }
        basis
    }

    /// Iterative route: CGLS (conjugate gradient on the normal equations)
    /// starting from zero, which keeps iterates in the operator's range and
    /// therefore converges to the minimum-norm least-squares solution.
    /// Stops when the projected residual falls below `tol` relative to
    /// `‖z_range‖`.
    fn cgls(&self, z: ArrayView1<'_, F>, tol: F, max_iter: usize) -> SolveReport<F> {
        let n = self.dim();
        let basis = self.range_basis();
        let degenerate = basis.is_empty();
        let z_range_norm = {
            let sq: F = basis.iter().map(|q| q.dot(&z) * q.dot(&z)).sum();
            sq.sqrt()
        };
        let threshold = tol * z_range_norm;

        let apply = |v: ArrayView1<'_, F>| -> Array1<F> {
            self.between_block(v.insert_axis(ndarray::Axis(0)))
                .row(0)
                .to_owned()
        };

        let mut x: Array1<F> = Array1::zeros(n);
        let mut r = z.to_owned();
        let mut s = apply(r.view());
        let mut p = s.clone();
        let mut gamma = s.dot(&s);
        let mut iterations = 0usize;
        let mut converged = degenerate || z_range_norm == F::zero();

        let proj_norm = |r: &Array1<F>| -> F {
            let sq: F = basis.iter().map(|q| q.dot(r) * q.dot(r)).sum();
            sq.sqrt()
        };

        let mut residual_norm = proj_norm(&r);
        if residual_norm <= threshold {
            converged = true;
        }
        while !converged && iterations < max_iter {
            if gamma == F::zero() {
                // normal equations satisfied exactly
                converged = true;
                break;
            }
            let q = apply(p.view());
            let delta = q.dot(&q);
            if delta == F::zero() {
                converged = true;
                break;
            }
            let alpha = gamma / delta;
            x.scaled_add(alpha, &p);
            r.scaled_add(-alpha, &q);
            iterations += 1;
            residual_norm = proj_norm(&r);
            if residual_norm <= threshold {
                converged = true;
                break;
            }
            s = apply(r.view());
            let gamma_new = s.dot(&s);
            let beta = gamma_new / gamma;
            p.mapv_inplace(|v| v * beta);
            p += &s;
            gamma = gamma_new;
        }
        SolveReport {
            solution: x,
            residual_norm,
            iterations,
            converged,
            degenerate,
        }
    }
}
