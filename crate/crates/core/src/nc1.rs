//! The within/between collapse metric: `tr(Σ_w Σ_b^†) / |Y|`.
//!
//! Two routes are provided. The exact route materializes both operators
//! and applies a dense SVD pseudo-inverse, needing two `n x n` matrices.
//! The streaming route estimates the same trace stochastically: for
//! isotropic probes `z` with `E[z z^T] = I`,
//!
//! ```text
//! tr(A) = E[z^T A z] ≈ (1/K) Σ_j z_j^T A z_j,
//! ```
//!
//! so sampling `z_j`, solving `x_j = Σ_b^† z_j`, applying `y_j = Σ_w x_j`
//! and averaging `s_j = z_j^T y_j` estimates the metric with a constant
//! number of length-`n` vectors (or an `n x K` block) instead of `O(n²)`
//! storage. Probe solves are exact through the Gram route or iterative
//! per the solver choice; both error sources shrink with more compute.

use nalgebra::RealField;
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::dataset::EmbeddingDataset;
use crate::error::{Error, Result};
use crate::linalg::{dense, CovKind, CovOperators, SolveMethod, RANK_EPS};
use crate::rng::rng_substream;
use crate::scalar::Scalar;

/// Probe distribution for the stochastic estimator. Both are isotropic;
/// sign probes have lower variance for trace estimation and are the
/// default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeDist {
    Rademacher,
    Gaussian,
}

/// How the estimate was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Nc1Mode {
    Exact,
    Hutchinson,
}

/// Aggregated diagnostics over the per-probe pseudo-inverse solves.
#[derive(Debug, Clone, Default, Serialize)]
pub struct SolveDiagnostics {
    pub solves: usize,
    pub converged: usize,
    pub max_iterations: usize,
    pub max_residual: f64,
    pub degenerate: bool,
}

/// Result of a collapse-metric computation.
#[derive(Debug, Clone, Serialize)]
#[serde(bound = "F: Serialize")]
pub struct Nc1Report<F> {
    pub value: F,
    pub mode: Nc1Mode,
    pub probe_count: usize,
    pub probe_distribution: Option<ProbeDist>,
    /// Raw probe samples `s_j = z_j^T Σ_w Σ_b^† z_j`; the reported value
    /// is `mean(s_j) / |Y|`.
    pub per_probe_samples: Vec<F>,
    /// Sample standard deviation of `s_j / |Y|` divided by `sqrt(K)`.
    pub std_error: F,
    pub solver: Option<SolveDiagnostics>,
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub warnings: Vec<String>,
}

/// Options for the stochastic estimate.
#[derive(Debug, Clone)]
pub struct HutchinsonOptions<F> {
    pub probes: usize,
    pub dist: ProbeDist,
    pub seed: u64,
    pub method: SolveMethod,
    pub tol: F,
    pub max_iter: usize,
    /// Push all probes through one data pass (`O(nK)` extra memory)
    /// instead of one pass per probe (`O(n)`).
    pub block: bool,
}

impl<F: Scalar> HutchinsonOptions<F> {
    pub fn new(probes: usize, seed: u64) -> Self {
        Self {
            probes,
            dist: ProbeDist::Rademacher,
            seed,
            method: SolveMethod::GramExact,
            tol: F::from_f64_lossy(crate::linalg::DEFAULT_SOLVE_TOL),
            max_iter: 0, // resolved against |Y| at run time
            block: true,
        }
    }
}

/// Sample probe `j` of the seed's substream.
fn sample_probe<F: Scalar>(n: usize, dist: ProbeDist, seed: u64, j: u64) -> Array1<F> {
    let mut rng = rng_substream(seed, j);
    match dist {
        ProbeDist::Rademacher => Array1::from_shape_fn(n, |_| {
            if rng.gen::<bool>() {
                F::one()
            } else {
                -F::one()
            }
        }),
        ProbeDist::Gaussian => {
            Array1::from_shape_fn(n, |_| F::from_f64_lossy(rng.sample(StandardNormal)))
        }
    }
}

/// Generic stochastic trace estimate of a linear operator given only its
/// matvec. Returns the raw probe samples `z_j^T A z_j`.
pub fn hutchinson_samples<F: Scalar>(
    mut apply: impl FnMut(&Array1<F>) -> Array1<F>,
    n: usize,
    probes: usize,
    dist: ProbeDist,
    seed: u64,
) -> Result<Vec<F>> {
    if probes == 0 {
        return Err(Error::ZeroProbes);
    }
    let mut samples = Vec::with_capacity(probes);
    for j in 0..probes {
        let z = sample_probe::<F>(n, dist, seed, j as u64);
        let az = apply(&z);
        samples.push(z.dot(&az));
    }
    Ok(samples)
}

fn mean_and_std_error<F: Scalar>(samples: &[F], classes: usize) -> (F, F) {
    let k = samples.len();
    let kf = F::from_f64_lossy(k as f64);
    let cf = F::from_f64_lossy(classes as f64);
    let mean: F = samples.iter().cloned().sum::<F>() / kf;
    let value = mean / cf;
    let std_error = if k > 1 {
        let var: F = samples
            .iter()
            .map(|&s| {
                let d = s / cf - value;
                d * d
            })
            .sum::<F>()
            / F::from_f64_lossy((k - 1) as f64);
        (var / kf).sqrt()
    } else {
        F::zero()
    };
    (value, std_error)
}

/// Exact metric through dense construction: both operators materialized,
/// pseudo-inverse by SVD with relative cutoff [`RANK_EPS`]. Requires
/// `n` within the dense limit.
pub fn nc1_exact<F: Scalar + RealField>(d: &EmbeddingDataset<F>) -> Result<Nc1Report<F>> {
    let ops = CovOperators::new(d)?;
    let within = ops.dense(CovKind::WithinClass)?;
    let between = ops.dense(CovKind::BetweenClass)?;
    let mut warnings = Vec::new();
    let degenerate = between.iter().all(|&v| v == F::zero());
    if degenerate {
        warnings.push(
            "all class means equal: between-class operator is zero, metric degenerate".into(),
        );
    }
    let pinv = dense::svd_pinv(&between, F::from_f64_lossy(RANK_EPS));
    let trace = dense::trace_of_product(&within, &pinv);
    let value = trace / F::from_f64_lossy(d.n_classes() as f64);
    Ok(Nc1Report {
        value,
        mode: Nc1Mode::Exact,
        probe_count: 0,
        probe_distribution: None,
        per_probe_samples: Vec::new(),
        std_error: F::zero(),
        solver: None,
        seed: None,
        warnings,
    })
}

/// Streaming stochastic estimate: sample probes, solve the between-class
/// system per probe, apply the within-class operator, average
/// `z_j^T y_j / |Y|`. Never allocates an `n x n` matrix.
pub fn nc1_hutchinson<F: Scalar>(
    d: &EmbeddingDataset<F>,
    opts: &HutchinsonOptions<F>,
) -> Result<Nc1Report<F>> {
    if opts.probes == 0 {
        return Err(Error::ZeroProbes);
    }
    let ops = CovOperators::new(d)?;
    let n = d.dim();
    let k = opts.probes;
    let max_iter = if opts.max_iter == 0 {
        10 * d.n_classes() + 50
    } else {
        opts.max_iter
    };

    let mut diagnostics = SolveDiagnostics::default();
    let mut solutions: Array2<F> = Array2::zeros((k, n));
    let mut probes: Array2<F> = Array2::zeros((k, n));
    for j in 0..k {
        let z = sample_probe::<F>(n, opts.dist, opts.seed, j as u64);
        let report = ops.between_pinv_apply(z.view(), opts.method, opts.tol, max_iter)?;
        diagnostics.solves += 1;
        if report.converged {
            diagnostics.converged += 1;
        }
        diagnostics.max_iterations = diagnostics.max_iterations.max(report.iterations);
        diagnostics.max_residual = diagnostics.max_residual.max(report.residual_norm.as_f64());
        diagnostics.degenerate |= report.degenerate;
        solutions.row_mut(j).assign(&report.solution);
        probes.row_mut(j).assign(&z);
    }

    let samples: Vec<F> = if opts.block {
        let ys = ops.apply_block(CovKind::WithinClass, solutions.view())?;
        (0..k).map(|j| probes.row(j).dot(&ys.row(j))).collect()
    } else {
        let mut out = Vec::with_capacity(k);
        for j in 0..k {
            let y = ops.apply(CovKind::WithinClass, solutions.row(j))?;
            out.push(probes.row(j).dot(&y));
        }
        out
    };

    let mut warnings = Vec::new();
    if diagnostics.degenerate {
        warnings.push(
            "all class means equal: between-class operator is zero, metric degenerate".into(),
        );
    }
    if diagnostics.converged < diagnostics.solves {
        warnings.push(format!(
            "{} of {} probe solves did not converge",
            diagnostics.solves - diagnostics.converged,
            diagnostics.solves
        ));
    }
    let (value, std_error) = mean_and_std_error(&samples, d.n_classes());
    Ok(Nc1Report {
        value,
        mode: Nc1Mode::Hutchinson,
        probe_count: k,
        probe_distribution: Some(opts.dist),
        per_probe_samples: samples,
        std_error,
        solver: Some(diagnostics),
        seed: Some(opts.seed),
        warnings,
    })
}

/// Memory accounting for the exact versus streaming computation at
/// feature dimension `n`: two dense `n x n` double-precision matrices
/// against three length-`n` double-precision vectors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MemoryEstimate {
    pub feature_dim: u64,
    pub exact_bytes: u128,
    pub streaming_bytes: u128,
    pub exact_display: String,
    pub streaming_display: String,
}

pub fn memory_requirements(n: u64) -> MemoryEstimate {
    let n = n as u128;
    let exact_bytes = 2 * n * n * 8;
    let streaming_bytes = 3 * n * 8;
    MemoryEstimate {
        feature_dim: n as u64,
        exact_bytes,
        streaming_bytes,
        exact_display: format!("{} GiB", shortest_decimal(exact_bytes as f64 / f64::powi(2.0, 30))),
        streaming_display: format!(
            "{} MiB",
            shortest_decimal(streaming_bytes as f64 / f64::powi(2.0, 20))
        ),
    }
}

/// Shortest fixed-point rendering of `v` that stays within 1e-4 relative
/// error, scanning 0 to 12 decimal places.
fn shortest_decimal(v: f64) -> String {
    for decimals in 0..=12usize {
        let scale = 10f64.powi(decimals as i32);
        let rounded = (v * scale).round() / scale;
        let rel = if v == 0.0 {
            0.0
        } else {
            ((rounded - v) / v).abs()
        };
        if rel <= 1e-4 {
            return format!("{rounded:.decimals$}");
        }
    }
    format!("{v:.12}")
}
