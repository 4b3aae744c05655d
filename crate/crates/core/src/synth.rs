//! Synthetic embedding generators for desk-scale experiments.
//!
//! The spurious-correlation testbed draws Gaussian clusters whose means
//! combine a core direction (carrying the label) with a spurious
//! direction (carrying the group). Majority groups have the spurious
//! coordinate aligned with their class, so an unconstrained classifier
//! leans on the spurious axis and loses accuracy on minority groups.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::EmbeddingDataset;
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::scalar::Scalar;

/// How many examples each group gets.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroupSizing {
    /// Explicit per-group counts, indexed `class * groups_per_class + s`.
    Counts { counts: Vec<usize> },
    /// Majority size per class with the minority scaled by `ratio`
    /// (rounded, at least one example).
    Ratio { majority: usize, ratio: f64 },
}

/// Specification of the spurious-correlation testbed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpuriousSpec {
    pub dim: usize,
    pub classes: usize,
    pub groups_per_class: usize,
    pub core_strength: f64,
    pub spurious_strength: f64,
    pub sizing: GroupSizing,
    pub noise: f64,
    pub seed: u64,
}

impl SpuriousSpec {
    /// Defaults chosen so the qualitative group-balance trends reproduce
    /// in seconds: 64 dims, two classes with two groups each, spurious
    /// signal three times the core signal, unit noise, majority 500.
    pub fn testbed(ratio: f64, seed: u64) -> Self {
        Self {
            dim: 64,
            classes: 2,
            groups_per_class: 2,
            core_strength: 1.0,
            spurious_strength: 3.0,
            sizing: GroupSizing::Ratio {
                majority: 500,
                ratio,
            },
            noise: 1.0,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::InvalidArg(
                "spurious testbed needs at least 2 dimensions".into(),
            ));
        }
        if self.classes < 2 {
            return Err(Error::InvalidArg("at least 2 classes required".into()));
        }
        if self.groups_per_class < 1 {
            return Err(Error::InvalidArg("at least 1 group per class".into()));
        }
        if self.core_strength < 0.0 || self.spurious_strength < 0.0 {
            return Err(Error::InvalidArg("signal strengths must be >= 0".into()));
        }
        if !(self.noise > 0.0) {
            return Err(Error::InvalidArg("noise scale must be positive".into()));
        }
        match &self.sizing {
            GroupSizing::Counts { counts } => {
                if counts.len() != self.classes * self.groups_per_class {
                    return Err(Error::DimensionMismatch {
                        expected: self.classes * self.groups_per_class,
                        got: counts.len(),
                        context: "per-group counts".into(),
                    });
                }
                if counts.iter().any(|&c| c == 0) {
                    return Err(Error::InvalidArg("group counts must be >= 1".into()));
                }
            }
            GroupSizing::Ratio { majority, ratio } => {
                if *majority == 0 {
                    return Err(Error::InvalidArg("majority count must be >= 1".into()));
                }
                if !(*ratio > 0.0 && *ratio <= 1.0) {
                    return Err(Error::InvalidArg(format!(
                        "group ratio {ratio} not in (0, 1]"
                    )));
                }
            }
        }
        Ok(())
    }

    fn group_counts(&self) -> Vec<usize> {
        match &self.sizing {
            GroupSizing::Counts { counts } => counts.clone(),
            GroupSizing::Ratio { majority, ratio } => {
                let minority = ((*majority as f64 * ratio).round() as usize).max(1);
                let mut counts = Vec::with_capacity(self.classes * self.groups_per_class);
                for y in 0..self.classes {
                    for s in 0..self.groups_per_class {
                        // the aligned spurious value is the majority
                        counts.push(if s == y % self.groups_per_class {
                            *majority
                        } else {
                            minority
                        });
                    }
                }
                counts
            }
        }
    }
}

/// Gaussian mixture with mean `y * core * e_core + s * spurious * e_spur`
/// and isotropic noise; group ids are `y * groups_per_class + s`.
/// Deterministic for a given spec and seed.
pub fn generate_spurious<F: Scalar>(spec: &SpuriousSpec) -> Result<EmbeddingDataset<F>> {
    spec.validate()?;
    let counts = spec.group_counts();
    let m: usize = counts.iter().sum();
    let n = spec.dim;
    let mut rng = rng_from_seed(spec.seed);
    let mut features: Array2<F> = Array2::zeros((m, n));
    let mut class_labels = Vec::with_capacity(m);
    let mut group_labels = Vec::with_capacity(m);
    let mut group_to_class = Vec::with_capacity(counts.len());
    let mut row = 0usize;
    for y in 0..spec.classes {
        for s in 0..spec.groups_per_class {
            let g = y * spec.groups_per_class + s;
            group_to_class.push(y as u32);
            let core = y as f64 * spec.core_strength;
            let spur = s as f64 * spec.spurious_strength;
            for _ in 0..counts[g] {
                for j in 0..n {
                    let noise: f64 = rng.sample::<f64, _>(StandardNormal) * spec.noise;
                    let mean = match j {
                        0 => core,
                        1 => spur,
                        _ => 0.0,
                    };
                    features[(row, j)] = F::from_f64_lossy(mean + noise);
                }
                class_labels.push(y as u32);
                group_labels.push(g as u32);
                row += 1;
            }
        }
    }
    EmbeddingDataset::new(
        features,
        class_labels,
        group_labels,
        group_to_class,
        spec.classes,
        format!("spurious-seed{}", spec.seed),
    )
}

/// Features equal to orthogonal class-mean vectors plus uniform jitter of
/// magnitude `epsilon`; zero jitter gives exact collapse.
pub fn generate_collapsed<F: Scalar>(
    dim: usize,
    classes: usize,
    per_class: usize,
    epsilon: f64,
    seed: u64,
) -> Result<EmbeddingDataset<F>> {
    if classes < 2 {
        return Err(Error::InvalidArg("at least 2 classes required".into()));
    }
    if dim < classes {
        return Err(Error::InvalidArg(format!(
            "need dim >= classes for orthogonal means, got {dim} < {classes}"
        )));
    }
    if per_class == 0 {
        return Err(Error::InvalidArg("per-class count must be >= 1".into()));
    }
    if epsilon < 0.0 {
        return Err(Error::InvalidArg("jitter must be >= 0".into()));
    }
    let m = classes * per_class;
    let mut rng = rng_from_seed(seed);
    let mut features: Array2<F> = Array2::zeros((m, dim));
    let mut class_labels = Vec::with_capacity(m);
    for y in 0..classes {
        for i in 0..per_class {
            let row = y * per_class + i;
            for j in 0..dim {
                let mean = if j == y { 1.0 } else { 0.0 };
                let jitter = if epsilon > 0.0 {
                    rng.gen_range(-epsilon..epsilon)
                } else {
                    0.0
                };
                features[(row, j)] = F::from_f64_lossy(mean + jitter);
            }
            class_labels.push(y as u32);
        }
    }
    let group_labels = class_labels.clone();
    EmbeddingDataset::new(
        features,
        class_labels,
        group_labels,
        (0..classes as u32).collect(),
        classes,
        format!("collapsed-eps{epsilon}-seed{seed}"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::group_stats;
    use crate::linalg::{CovKind, CovOperators};
    use ndarray::Array1;
    use rand::Rng;

    #[test]
    fn counts_match_request_exactly() {
        let spec = SpuriousSpec {
            sizing: GroupSizing::Counts {
                counts: vec![10, 3, 7, 20],
            },
            ..SpuriousSpec::testbed(1.0, 0)
        };
        let d: EmbeddingDataset<f64> = generate_spurious(&spec).unwrap();
        assert_eq!(d.len(), 40);
        let s = group_stats(&d);
        assert_eq!(s.group_counts, vec![10, 3, 7, 20]);
    }

    #[test]
    fn ratio_sizing_marks_aligned_group_majority() {
        let spec = SpuriousSpec::testbed(0.1, 3);
        let d: EmbeddingDataset<f64> = generate_spurious(&spec).unwrap();
        let s = group_stats(&d);
        // class 0 aligned with s=0, class 1 with s=1
        assert_eq!(s.group_counts, vec![500, 50, 50, 500]);
        assert!((s.class_group_ratio[0] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn seeded_generation_is_deterministic() {
        let spec = SpuriousSpec::testbed(0.5, 11);
        let a: EmbeddingDataset<f64> = generate_spurious(&spec).unwrap();
        let b: EmbeddingDataset<f64> = generate_spurious(&spec).unwrap();
        assert_eq!(a.features(), b.features());
        let c: EmbeddingDataset<f64> =
            generate_spurious(&SpuriousSpec::testbed(0.5, 12)).unwrap();
        assert!(a.features() != c.features());
    }

    #[test]
    fn empirical_group_means_near_specified() {
        let spec = SpuriousSpec {
            sizing: GroupSizing::Counts {
                counts: vec![400, 400, 400, 400],
            },
            ..SpuriousSpec::testbed(1.0, 7)
        };
        let d: EmbeddingDataset<f64> = generate_spurious(&spec).unwrap();
        // 4σ bound on the mean of `count` samples
        let bound = 4.0 * spec.noise / (400f64).sqrt();
        let mut sums = vec![[0.0f64; 2]; 4];
        for i in 0..d.len() {
            let g = d.group_labels()[i] as usize;
            sums[g][0] += d.row(i)[0];
            sums[g][1] += d.row(i)[1];
        }
        for (g, sum) in sums.iter().enumerate() {
            let y = (g / 2) as f64;
            let s = (g % 2) as f64;
            let mean0 = sum[0] / 400.0;
            let mean1 = sum[1] / 400.0;
            assert!((mean0 - y * spec.core_strength).abs() < bound);
            assert!((mean1 - s * spec.spurious_strength).abs() < bound);
        }
    }

    #[test]
    fn collapsed_zero_jitter_kills_within_operator() {
        let d: EmbeddingDataset<f64> = generate_collapsed(8, 3, 5, 0.0, 1).unwrap();
        let ops = CovOperators::new(&d).unwrap();
        let mut rng = crate::rng::rng_from_seed(2);
        for _ in 0..10 {
            let v = Array1::from_shape_fn(8, |_| rng.gen_range(-1.0..1.0f64));
            let out = ops.apply(CovKind::WithinClass, v.view()).unwrap();
            assert!(out.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn collapsed_with_jitter_has_positive_metric() {
        let d: EmbeddingDataset<f64> = generate_collapsed(64, 2, 30, 0.1, 5).unwrap();
        let exact = crate::nc1::nc1_exact(&d).unwrap();
        assert!(exact.value > 0.0);
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(generate_collapsed::<f64>(2, 3, 5, 0.0, 1).is_err());
        assert!(generate_collapsed::<f64>(8, 2, 0, 0.0, 1).is_err());
        let mut spec = SpuriousSpec::testbed(1.0, 0);
        spec.noise = 0.0;
        assert!(generate_spurious::<f64>(&spec).is_err());
        let mut spec = SpuriousSpec::testbed(1.0, 0);
        spec.sizing = GroupSizing::Ratio {
            majority: 10,
            ratio: 1.5,
        };
        assert!(generate_spurious::<f64>(&spec).is_err());
    }
}
