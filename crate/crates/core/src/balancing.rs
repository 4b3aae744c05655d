//! Class- and group-balancing strategies.
//!
//! Three plans rebalance a dataset along either the class or the group
//! axis:
//!
//! * subsetting: truncate every partition to the smallest one, drawn once;
//! * upsampling: keep all data, reweight the sampling distribution so a
//!   batch is balanced in expectation (draw a partition uniformly, then an
//!   example uniformly within it);
//! * upweighting: keep all data, scale each example's loss by
//!   `largest partition / own partition` (the two-partition imbalance
//!   ratio, generalized).
//!
//! Upweighting equals upsampling in expectation: the sampling probability
//! of an example is proportional to its loss weight with constant
//! `1 / (num_partitions * largest_partition)`.
//!
//! Loss-based example weighting over a held-out set is also provided:
//! weights proportional to `β_y · exp(-γ p̂)` with `β_y` the inverse class
//! frequency, `p̂` the upstream model's probability of the true class and
//! `γ ≥ 0` an inverse temperature. `γ = 0` reduces to normalized
//! class-balanced upweighting. The inverse temperature is distinct from
//! the class-imbalance ratio also conventionally written gamma.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::dataset::EmbeddingDataset;
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::scalar::Scalar;

/// Axis a plan balances over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BalanceAxis {
    Class,
    Group,
}

/// A balancing plan: either a static subset, per-example sampling
/// probabilities, or per-example loss weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[serde(bound(serialize = "F: Serialize", deserialize = "F: serde::de::DeserializeOwned"))]
pub enum BalancePlan<F> {
    SubsetIndices {
        axis: BalanceAxis,
        seed: u64,
        indices: Vec<usize>,
    },
    SamplingProbabilities {
        axis: BalanceAxis,
        probabilities: Vec<F>,
    },
    LossWeights {
        axis: BalanceAxis,
        weights: Vec<F>,
    },
}

impl<F: Scalar> BalancePlan<F> {
    pub fn axis(&self) -> BalanceAxis {
        match self {
            BalancePlan::SubsetIndices { axis, .. }
            | BalancePlan::SamplingProbabilities { axis, .. }
            | BalancePlan::LossWeights { axis, .. } => *axis,
        }
    }
}

fn partition_labels<F: Scalar>(d: &EmbeddingDataset<F>, axis: BalanceAxis) -> (&[u32], usize) {
    match axis {
        BalanceAxis::Class => (d.class_labels(), d.n_classes()),
        BalanceAxis::Group => (d.group_labels(), d.n_groups()),
    }
}

/// Populated partitions with member indices in row order.
fn partitions<F: Scalar>(
    d: &EmbeddingDataset<F>,
    axis: BalanceAxis,
) -> Result<Vec<Vec<usize>>> {
    let (labels, count) = partition_labels(d, axis);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); count];
    for (i, &l) in labels.iter().enumerate() {
        members[l as usize].push(i);
    }
    let populated: Vec<Vec<usize>> = members.into_iter().filter(|m| !m.is_empty()).collect();
    if populated.is_empty() {
        return Err(Error::EmptyPartition(match axis {
            BalanceAxis::Class => "class",
            BalanceAxis::Group => "group",
        }));
    }
    Ok(populated)
}

/// Uniform without-replacement subsample of every partition down to the
/// smallest partition's size. Generated once; deterministic for a seed.
pub fn plan_subsetting<F: Scalar>(
    d: &EmbeddingDataset<F>,
    axis: BalanceAxis,
    seed: u64,
) -> Result<BalancePlan<F>> {
    let parts = partitions(d, axis)?;
    let target = parts.iter().map(|p| p.len()).min().expect("non-empty");
    let mut rng = rng_from_seed(seed);
    let mut indices = Vec::with_capacity(target * parts.len());
    for part in &parts {
        if part.len() == target {
            indices.extend_from_slice(part);
        } else {
            let mut picks: Vec<usize> = sample(&mut rng, part.len(), target)
                .into_iter()
                .map(|j| part[j])
                .collect();
            picks.sort_unstable();
            indices.extend(picks);
        }
    }
    indices.sort_unstable();
    Ok(BalancePlan::SubsetIndices { axis, seed, indices })
}

/// Per-example probability `1 / (num_partitions * partition_size)`:
/// the two-step draw of a partition uniformly, then a member uniformly.
pub fn plan_upsampling<F: Scalar>(
    d: &EmbeddingDataset<F>,
    axis: BalanceAxis,
) -> Result<BalancePlan<F>> {
    let parts = partitions(d, axis)?;
    let p_count = F::from_f64_lossy(parts.len() as f64);
    let mut probabilities = vec![F::zero(); d.len()];
    for part in &parts {
        let p = F::one() / (p_count * F::from_f64_lossy(part.len() as f64));
        for &i in part {
            probabilities[i] = p;
        }
    }
    Ok(BalancePlan::SamplingProbabilities {
        axis,
        probabilities,
    })
}

/// Per-example loss weight `largest partition / own partition`; the
/// largest partition gets weight one.
pub fn plan_upweighting<F: Scalar>(
    d: &EmbeddingDataset<F>,
    axis: BalanceAxis,
) -> Result<BalancePlan<F>> {
    let parts = partitions(d, axis)?;
    let largest = parts.iter().map(|p| p.len()).max().expect("non-empty") as f64;
    let mut weights = vec![F::zero(); d.len()];
    for part in &parts {
        let w = F::from_f64_lossy(largest / part.len() as f64);
        for &i in part {
            weights[i] = w;
        }
    }
    Ok(BalancePlan::LossWeights { axis, weights })
}

/// Loss-based example weights over a held-out set.
#[derive(Debug, Clone, Serialize)]
#[serde(bound = "F: Serialize")]
pub struct AfrWeights<F> {
    /// Normalized per-example weights, summing to one.
    pub weights: Vec<F>,
    /// Inverse temperature; zero recovers class-balanced upweighting.
    pub gamma: F,
    /// Inverse class frequencies `1 / |class y|` indexed by class id.
    pub beta: Vec<F>,
}

/// Weights `ω_i ∝ β_{y_i} exp(-γ p̂_i)` normalized to sum one, with
/// `β_y = 1 / count(y)` over the provided labels.
///
/// Exponentials are computed as `exp(-γ (p̂_i - min p̂))`, which cancels in
/// the normalization but avoids underflow at large `γ`.
pub fn afr_weights<F: Scalar>(
    correct_class_probs: &[F],
    class_labels: &[u32],
    n_classes: usize,
    gamma: F,
) -> Result<AfrWeights<F>> {
    let m = correct_class_probs.len();
    if m == 0 {
        return Err(Error::EmptyDataset);
    }
    if class_labels.len() != m {
        return Err(Error::PlanMismatch {
            plan: class_labels.len(),
            data: m,
        });
    }
    if gamma < F::zero() || !gamma.is_finite() {
        return Err(Error::InvalidArg(format!(
            "inverse temperature must be finite and >= 0, got {gamma}"
        )));
    }
    for (i, &p) in correct_class_probs.iter().enumerate() {
        if !(p > F::zero() && p <= F::one()) {
            return Err(Error::BadProbability {
                index: i,
                value: p.as_f64(),
            });
        }
    }
    let mut counts = vec![0usize; n_classes];
    for (i, &y) in class_labels.iter().enumerate() {
        if y as usize >= n_classes {
            return Err(Error::LabelOutOfRange {
                row: i,
                kind: "class",
                value: y,
                limit: n_classes as u32,
            });
        }
        counts[y as usize] += 1;
    }
    if let Some(missing) = counts.iter().position(|&c| c == 0) {
        return Err(Error::EmptyClass(missing));
    }
    let beta: Vec<F> = counts
        .iter()
        .map(|&c| F::one() / F::from_f64_lossy(c as f64))
        .collect();

    let p_min = correct_class_probs
        .iter()
        .cloned()
        .fold(F::one(), |acc, p| if p < acc { p } else { acc });
    let mut weights: Vec<F> = correct_class_probs
        .iter()
        .zip(class_labels)
        .map(|(&p, &y)| beta[y as usize] * (-(gamma * (p - p_min))).exp())
        .collect();
    let total: F = weights.iter().cloned().sum();
    for w in weights.iter_mut() {
        *w = *w / total;
    }
    Ok(AfrWeights {
        weights,
        gamma,
        beta,
    })
}
