//! Hard-margin SVM reference solution and the directional-error metric.
//!
//! The solver runs sequential minimal optimization on the dual, selecting
//! the maximal violating pair each iteration and stopping on the KKT gap.
//! Hard margin leaves the multipliers unbounded above, so non-separable
//! input shows up as dual divergence; a bounded perceptron pass runs first
//! as a fast separability certificate. A soft-margin mode with an explicit
//! penalty exists for non-separable feature sets and is reported as such.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::retrain::{mean_loss, LinearClassifier, TrainConfig};
use crate::scalar::Scalar;

/// Maximum-margin separator with its certificate data.
#[derive(Debug, Clone)]
pub struct SvmSolution<F> {
    pub weights: Array1<F>,
    pub bias: F,
    pub support_indices: Vec<usize>,
    /// `1 / ‖θ‖`: the distance from the separating plane to the margin.
    pub geometric_margin: F,
    pub iterations: usize,
    /// Penalty used, `None` for the hard-margin solve.
    pub soft_penalty: Option<F>,
}

/// One point of a gradient-descent-vs-SVM convergence trace.
#[derive(Debug, Clone, Serialize)]
#[serde(bound = "F: Serialize")]
pub struct TracePoint<F> {
    pub step: usize,
    pub directional_error: F,
    pub train_loss: F,
}

fn check_inputs<F: Scalar>(x: ArrayView2<'_, F>, y: &[i8]) -> Result<()> {
    if x.nrows() == 0 {
        return Err(Error::EmptyDataset);
    }
    if x.nrows() != y.len() {
        return Err(Error::PlanMismatch {
            plan: y.len(),
            data: x.nrows(),
        });
    }
    if !y.iter().all(|&l| l == 1 || l == -1) {
        return Err(Error::InvalidArg("labels must be +1 or -1".into()));
    }
    if !(y.contains(&1) && y.contains(&-1)) {
        return Err(Error::InvalidArg("both label signs required".into()));
    }
    Ok(())
}

/// Bounded perceptron run; `true` means a separator was found, which
/// certifies separability. `false` is inconclusive.
fn perceptron_certificate<F: Scalar>(x: ArrayView2<'_, F>, y: &[i8], max_updates: usize) -> bool {
    let (n_rows, dim) = (x.nrows(), x.ncols());
    let mut w: Array1<F> = Array1::zeros(dim);
    let mut b = F::zero();
    let mut updates = 0usize;
    loop {
        let mut clean = true;
        for i in 0..n_rows {
            let yi = F::from_f64_lossy(y[i] as f64);
            if yi * (w.dot(&x.row(i)) + b) <= F::zero() {
                w.scaled_add(yi, &x.row(i));
                b += yi;
                clean = false;
                updates += 1;
                if updates >= max_updates {
                    return false;
                }
            }
        }
        if clean {
            return true;
        }
    }
}

/// Solve the hard-margin problem
/// `min ½‖θ‖²  s.t.  y_i (θ^T x_i + b) >= 1`
/// to tolerance `tol` on the KKT gap; the result is certified by a
/// constraint check. Non-separable input raises an explicit infeasibility
/// error, never a silent soft-margin fallback.
pub fn fit_hard_margin<F: Scalar>(
    x: ArrayView2<'_, F>,
    y: &[i8],
    tol: F,
) -> Result<SvmSolution<F>> {
    smo(x, y, tol, None)
}

/// Soft-margin variant with declared penalty `c`; always feasible.
pub fn fit_soft_margin<F: Scalar>(
    x: ArrayView2<'_, F>,
    y: &[i8],
    c: F,
    tol: F,
) -> Result<SvmSolution<F>> {
    if !(c > F::zero()) {
        return Err(Error::InvalidArg("penalty must be positive".into()));
    }
    smo(x, y, tol, Some(c))
}

fn smo<F: Scalar>(
    x: ArrayView2<'_, F>,
    y: &[i8],
    tol: F,
    penalty: Option<F>,
) -> Result<SvmSolution<F>> {
    check_inputs(x, y)?;
    let n_rows = x.nrows();
    let certified = penalty.is_some() || perceptron_certificate(x, y, 200 * n_rows.max(50));

    let ys: Vec<F> = y.iter().map(|&l| F::from_f64_lossy(l as f64)).collect();
    let upper = penalty.unwrap_or_else(F::infinity);
    // gradient of ½αᵀQα - eᵀα with Q_ij = y_i y_j x_i·x_j
    let mut alpha: Vec<F> = vec![F::zero(); n_rows];
    let mut grad: Vec<F> = vec![-F::one(); n_rows];
    let tau = F::from_f64_lossy(1e-12);

    // dual divergence guard for uncertified hard-margin runs
    let feature_scale: F = (0..n_rows)
        .map(|i| x.row(i).dot(&x.row(i)))
        .fold(F::zero(), |acc, v| if v > acc { v } else { acc })
        .max(F::from_f64_lossy(1e-30));
    let alpha_cap = F::from_f64_lossy(1e12) / feature_scale;

    let max_iter = 200_000usize.max(100 * n_rows);
    let mut iterations = 0usize;
    loop {
        // maximal violating pair over I_up / I_low
        let mut i_sel: Option<usize> = None;
        let mut j_sel: Option<usize> = None;
        let mut g_max = F::neg_infinity();
        let mut g_min = F::infinity();
        for t in 0..n_rows {
            let v = -ys[t] * grad[t];
            let in_up = (ys[t] > F::zero() && alpha[t] < upper)
                || (ys[t] < F::zero() && alpha[t] > F::zero());
            let in_low = (ys[t] < F::zero() && alpha[t] < upper)
                || (ys[t] > F::zero() && alpha[t] > F::zero());
            if in_up && v > g_max {
                g_max = v;
                i_sel = Some(t);
            }
            if in_low && v < g_min {
                g_min = v;
                j_sel = Some(t);
            }
        }
        let (Some(i), Some(j)) = (i_sel, j_sel) else {
            break;
        };
        if g_max - g_min <= tol {
            break;
        }
        if iterations >= max_iter {
            if certified {
                return Err(Error::SolverDidNotConverge {
                    residual: (g_max - g_min).as_f64(),
                    iterations,
                });
            }
            return Err(Error::NonSeparable);
        }
        iterations += 1;

        let kii = x.row(i).dot(&x.row(i));
        let kjj = x.row(j).dot(&x.row(j));
        let kij = x.row(i).dot(&x.row(j));
        let old_ai = alpha[i];
        let old_aj = alpha[j];

        if ys[i] != ys[j] {
            let quad = (kii + kjj - kij - kij).max(tau);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > F::zero() && alpha[j] < F::zero() {
                alpha[j] = F::zero();
                alpha[i] = diff;
            } else if diff <= F::zero() && alpha[i] < F::zero() {
                alpha[i] = F::zero();
                alpha[j] = -diff;
            }
            if upper.is_finite() {
                if diff > F::zero() && alpha[i] > upper {
                    alpha[i] = upper;
                    alpha[j] = upper - diff;
                } else if diff <= F::zero() && alpha[j] > upper {
                    alpha[j] = upper;
                    alpha[i] = upper + diff;
                }
            }
        } else {
            let quad = (kii + kjj - kij - kij).max(tau);
            let delta = (grad[i] - grad[j]) / quad;
            let total = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if alpha[i] < F::zero() {
                alpha[i] = F::zero();
                alpha[j] = total;
            } else if alpha[j] < F::zero() {
                alpha[j] = F::zero();
                alpha[i] = total;
            }
            if upper.is_finite() {
                if alpha[i] > upper {
                    alpha[i] = upper;
                    alpha[j] = total - upper;
                } else if alpha[j] > upper {
                    alpha[j] = upper;
                    alpha[i] = total - upper;
                }
            }
        }

        let dai = alpha[i] - old_ai;
        let daj = alpha[j] - old_aj;
        if dai == F::zero() && daj == F::zero() {
            // numerically stuck pair; KKT gap will re-select next round
            return if certified {
                finish(x, y, &ys, &alpha, iterations, penalty, tol)
            } else {
                Err(Error::NonSeparable)
            };
        }
        for t in 0..n_rows {
            let kti = x.row(t).dot(&x.row(i));
            let ktj = x.row(t).dot(&x.row(j));
            grad[t] += ys[t] * ys[i] * kti * dai + ys[t] * ys[j] * ktj * daj;
        }

        if !certified {
            let total: F = alpha.iter().cloned().sum();
            if total > alpha_cap {
                return Err(Error::NonSeparable);
            }
        }
    }

    finish(x, y, &ys, &alpha, iterations, penalty, tol)
}

fn finish<F: Scalar>(
    x: ArrayView2<'_, F>,
    y: &[i8],
    ys: &[F],
    alpha: &[F],
    iterations: usize,
    penalty: Option<F>,
    tol: F,
) -> Result<SvmSolution<F>> {
    let n_rows = x.nrows();
    let dim = x.ncols();
    let mut weights: Array1<F> = Array1::zeros(dim);
    for t in 0..n_rows {
        if alpha[t] > F::zero() {
            weights.scaled_add(alpha[t] * ys[t], &x.row(t));
        }
    }
    let norm = weights.dot(&weights).sqrt();
    if norm == F::zero() {
        if penalty.is_none() {
            return Err(Error::NonSeparable);
        }
        // a fully symmetric non-separable set can have a zero soft-margin
        // optimum; report it as-is
        return Ok(SvmSolution {
            weights,
            bias: F::zero(),
            support_indices: Vec::new(),
            geometric_margin: F::infinity(),
            iterations,
            soft_penalty: penalty,
        });
    }

    // bias from the KKT midpoint of the tightest points on each side
    let mut pos_min = F::infinity();
    let mut neg_max = F::neg_infinity();
    for t in 0..n_rows {
        let s = weights.dot(&x.row(t));
        if y[t] == 1 && s < pos_min {
            pos_min = s;
        }
        if y[t] == -1 && s > neg_max {
            neg_max = s;
        }
    }
    let two = F::one() + F::one();
    let bias = -(pos_min + neg_max) / two;

    let alpha_max = alpha
        .iter()
        .cloned()
        .fold(F::zero(), |acc, a| if a > acc { a } else { acc });
    let support_indices: Vec<usize> = (0..n_rows)
        .filter(|&t| alpha[t] > alpha_max * F::from_f64_lossy(1e-8))
        .collect();

    // certify the constraints for the hard margin
    if penalty.is_none() {
        let slack = F::from_f64_lossy(1e-6).max(tol * F::from_f64_lossy(10.0));
        for t in 0..n_rows {
            let margin = ys[t] * (weights.dot(&x.row(t)) + bias);
            if margin < F::one() - slack {
                return Err(Error::NonSeparable);
            }
        }
    }

    Ok(SvmSolution {
        geometric_margin: F::one() / norm,
        weights,
        bias,
        support_indices,
        iterations,
        soft_penalty: penalty,
    })
}

/// `‖ a/‖a‖ - b/‖b‖ ‖₂`, the distance between unit-normalized weight
/// vectors; always in [0, 2].
pub fn directional_error<F: Scalar>(a: ArrayView1<'_, F>, b: ArrayView1<'_, F>) -> Result<F> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
            context: "directional error".into(),
        });
    }
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == F::zero() || nb == F::zero() {
        return Err(Error::ZeroVector);
    }
    let mut sq = F::zero();
    for i in 0..a.len() {
        let d = a[i] / na - b[i] / nb;
        sq += d * d;
    }
    Ok(sq.sqrt())
}

/// Train the unregularized logistic classifier on `(x, y)` and record the
/// directional error of its weight vector (bias excluded, recorded via the
/// loss column instead) against the hard-margin solution at each
/// checkpoint step. Binary tasks only; checkpoints must be increasing and
/// start at 1 or later.
pub fn implicit_bias_trace<F: Scalar>(
    x: ArrayView2<'_, F>,
    y: &[i8],
    cfg: &TrainConfig<F>,
    checkpoints: &[usize],
) -> Result<Vec<TracePoint<F>>> {
    check_inputs(x, y)?;
    if checkpoints.is_empty() {
        return Err(Error::InvalidArg("at least one checkpoint required".into()));
    }
    if checkpoints[0] == 0 {
        return Err(Error::InvalidArg(
            "first checkpoint must be at least one step".into(),
        ));
    }
    if !checkpoints.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::InvalidArg("checkpoints must be increasing".into()));
    }
    let svm = fit_hard_margin(x, y, F::from_f64_lossy(1e-10))?;
    let labels: Vec<u32> = y.iter().map(|&l| if l == 1 { 1 } else { 0 }).collect();

    let mut out = Vec::with_capacity(checkpoints.len());
    let mut done = 0usize;
    let mut clf: Option<LinearClassifier<F>> = None;
    for &step in checkpoints {
        // continue training from the previous checkpoint; full-batch GD is
        // deterministic so this equals one uninterrupted run
        let chunk = TrainConfig {
            steps: step - done,
            ..cfg.clone()
        };
        let warm = clf.take();
        let trained = train_from(x, &labels, 2, &chunk, warm)?;
        let (theta, _) = trained.binary_form()?;
        let err = directional_error(theta.view(), svm.weights.view())?;
        let loss = mean_loss(&trained, x, &labels);
        out.push(TracePoint {
            step,
            directional_error: err,
            train_loss: loss,
        });
        clf = Some(trained);
        done = step;
    }
    Ok(out)
}

/// Full-batch gradient descent continuation used by the trace: same update
/// rule as [`train_linear`] without plans, resuming from `warm`.
fn train_from<F: Scalar>(
    x: ArrayView2<'_, F>,
    labels: &[u32],
    n_classes: usize,
    cfg: &TrainConfig<F>,
    warm: Option<LinearClassifier<F>>,
) -> Result<LinearClassifier<F>> {
    let m = x.nrows();
    let n = x.ncols();
    let mut clf = warm.unwrap_or_else(|| LinearClassifier::zeros(n_classes, n));
    let denom = F::from_f64_lossy(m as f64);
    let mut grad_w: Array2<F> = Array2::zeros((n_classes, n));
    let mut grad_b: Array1<F> = Array1::zeros(n_classes);
    for step in 0..cfg.steps {
        grad_w.fill(F::zero());
        grad_b.fill(F::zero());
        let mut loss_ok = true;
        for i in 0..m {
            let xi = x.row(i);
            let yi = labels[i] as usize;
            let s = clf.scores(xi);
            let max = s.iter().cloned().fold(F::neg_infinity(), F::max);
            let exps: Array1<F> = s.mapv(|v| (v - max).exp());
            let total: F = exps.iter().cloned().sum();
            if !total.is_finite() {
                loss_ok = false;
                break;
            }
            for c in 0..n_classes {
                let p = exps[c] / total;
                let indicator = if c == yi { F::one() } else { F::zero() };
                let coef = (p - indicator) / denom;
                let mut row = grad_w.row_mut(c);
                row.scaled_add(coef, &xi);
                grad_b[c] += coef;
            }
        }
        if !loss_ok {
            return Err(Error::TrainDiverged {
                step,
                loss: f64::NAN,
            });
        }
        grad_w.mapv_inplace(|g| g * cfg.learning_rate);
        grad_b.mapv_inplace(|g| g * cfg.learning_rate);
        clf.weights -= &grad_w;
        clf.bias -= &grad_b;
    }
    Ok(clf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn symmetric_two_point_problem() {
        let x = array![[1.0, 0.0], [-1.0, 0.0]];
        let y = [1i8, -1];
        let s = fit_hard_margin(x.view(), &y, 1e-10).unwrap();
        assert_relative_eq!(s.weights[0], 1.0, epsilon = 1e-8);
        assert_relative_eq!(s.weights[1], 0.0, epsilon = 1e-8);
        assert_relative_eq!(s.bias, 0.0, epsilon = 1e-8);
        assert_relative_eq!(s.geometric_margin, 1.0, epsilon = 1e-8);
    }

    #[test]
    fn asymmetric_two_point_problem() {
        // (2,0)+1, (-1,0)-1: midpoint 0.5, θ = (2/3, 0), b = -1/3
        let x = array![[2.0, 0.0], [-1.0, 0.0]];
        let y = [1i8, -1];
        let s = fit_hard_margin(x.view(), &y, 1e-10).unwrap();
        assert_relative_eq!(s.weights[0], 2.0 / 3.0, epsilon = 1e-8);
        assert_relative_eq!(s.bias, -1.0 / 3.0, epsilon = 1e-8);
        assert_relative_eq!(s.geometric_margin, 1.5, epsilon = 1e-8);
        assert_eq!(s.support_indices, vec![0, 1]);
    }

    #[test]
    fn xor_is_infeasible() {
        let x = array![[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]];
        let y = [-1i8, -1, 1, 1];
        assert!(matches!(
            fit_hard_margin(x.view(), &y, 1e-8),
            Err(Error::NonSeparable)
        ));
    }

    #[test]
    fn soft_margin_handles_xor() {
        let x = array![[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]];
        let y = [-1i8, -1, 1, 1];
        let s = fit_soft_margin(x.view(), &y, 1.0, 1e-8).unwrap();
        assert_eq!(s.soft_penalty, Some(1.0));
    }

    #[test]
    fn constraints_certified_on_random_separable_data() {
        let mut rng = crate::rng::rng_from_seed(61);
        for trial in 0..20 {
            let n = 30;
            let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let u = [angle.cos(), angle.sin()];
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for _ in 0..n {
                let sign: f64 = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                let along = rng.gen_range(0.15..2.0) * sign;
                let ortho = rng.gen_range(-2.0..2.0);
                xs.push([
                    along * u[0] - ortho * u[1],
                    along * u[1] + ortho * u[0],
                ]);
                ys.push(if sign > 0.0 { 1i8 } else { -1 });
            }
            let x = Array2::from_shape_fn((n, 2), |(i, j)| xs[i][j]);
            let s = fit_hard_margin(x.view(), &ys, 1e-10)
                .unwrap_or_else(|e| panic!("trial {trial}: {e}"));
            for i in 0..n {
                let margin =
                    ys[i] as f64 * (s.weights.dot(&x.row(i)) + s.bias);
                assert!(margin >= 1.0 - 1e-6, "violated constraint: {margin}");
            }
            // support vectors sit on the margin
            for &i in &s.support_indices {
                let margin = ys[i] as f64 * (s.weights.dot(&x.row(i)) + s.bias);
                assert!((margin - 1.0).abs() < 1e-4, "support not tight: {margin}");
            }
        }
    }

    #[test]
    fn max_margin_dominates_random_directions() {
        let mut rng = crate::rng::rng_from_seed(62);
        let x = array![
            [1.2, 0.3],
            [2.0, -0.4],
            [1.5, 1.0],
            [-0.8, 0.2],
            [-1.5, -0.6],
            [-1.1, 0.9]
        ];
        let y = [1i8, 1, 1, -1, -1, -1];
        let s = fit_hard_margin(x.view(), &y, 1e-10).unwrap();
        for _ in 0..100 {
            let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let u = array![angle.cos(), angle.sin()];
            // best bias for this direction puts the plane midway
            let pos_min = (0..3).map(|i| u.dot(&x.row(i))).fold(f64::INFINITY, f64::min);
            let neg_max = (3..6)
                .map(|i| u.dot(&x.row(i)))
                .fold(f64::NEG_INFINITY, f64::max);
            let margin_u = (pos_min - neg_max) / 2.0;
            assert!(s.geometric_margin >= margin_u - 1e-6);
        }
    }

    #[test]
    fn directional_error_trivial_cases() {
        let a = array![1.0, 0.0];
        assert_eq!(directional_error(a.view(), a.view()).unwrap(), 0.0);
        let b = array![-1.0, 0.0];
        assert_eq!(directional_error(a.view(), b.view()).unwrap(), 2.0);
        // (1,0) vs (1,1): sqrt(2 - sqrt(2))
        let c = array![1.0, 1.0];
        assert_relative_eq!(
            directional_error(a.view(), c.view()).unwrap(),
            (2.0 - 2.0f64.sqrt()).sqrt(),
            epsilon = 1e-14
        );
        assert_relative_eq!(
            directional_error(a.view(), c.view()).unwrap(),
            0.7653668647301795,
            epsilon = 1e-12
        );
    }

    #[test]
    fn directional_error_rejects_zero_vectors() {
        let a = array![1.0, 0.0];
        let z = array![0.0, 0.0];
        assert!(matches!(
            directional_error(a.view(), z.view()),
            Err(Error::ZeroVector)
        ));
    }

    #[test]
    fn directional_error_scale_invariant() {
        let a = array![0.3, -0.7, 0.1];
        let b = array![-0.2, 0.5, 0.9];
        let base = directional_error(a.view(), b.view()).unwrap();
        for c in [0.5, 2.0, 4.0] {
            let scaled = a.mapv(|v| v * c);
            assert_eq!(directional_error(scaled.view(), b.view()).unwrap(), base);
        }
        let scaled = a.mapv(|v| v * 3.0);
        assert_relative_eq!(
            directional_error(scaled.view(), b.view()).unwrap(),
            base,
            epsilon = 1e-14
        );
    }

    #[test]
    fn trace_on_symmetric_pair_is_monotone_to_zero() {
        let x = array![[0.6, 0.8], [-0.6, -0.8]];
        let y = [1i8, -1];
        let cfg = TrainConfig {
            learning_rate: 0.5,
            steps: 0,
            batch_size: 0,
            seed: 0,
        };
        let trace = implicit_bias_trace(x.view(), &y, &cfg, &[1, 10, 100, 1000]).unwrap();
        for w in trace.windows(2) {
            assert!(w[1].directional_error <= w[0].directional_error + 1e-12);
        }
        // gradient direction equals the svm direction from the first step
        assert!(trace.last().unwrap().directional_error < 1e-7);
    }

    #[test]
    fn trace_rejects_zero_checkpoint() {
        let x = array![[1.0, 0.0], [-1.0, 0.0]];
        let y = [1i8, -1];
        let cfg = TrainConfig::default();
        assert!(implicit_bias_trace(x.view(), &y, &cfg, &[0, 10]).is_err());
        assert!(implicit_bias_trace(x.view(), &y, &cfg, &[10, 5]).is_err());
    }

    proptest! {
        #[test]
        fn directional_error_in_unit_sphere_bound(
            a in proptest::collection::vec(-10.0f64..10.0, 3),
            b in proptest::collection::vec(-10.0f64..10.0, 3),
        ) {
            let av = Array1::from_vec(a);
            let bv = Array1::from_vec(b);
            if let Ok(e) = directional_error(av.view(), bv.view()) {
                prop_assert!((0.0..=2.0 + 1e-12).contains(&e));
            }
        }
    }
}
