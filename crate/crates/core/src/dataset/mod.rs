//! Labeled embedding datasets.
//!
//! A dataset is an `m x n` feature matrix plus per-example class and group
//! labels, where groups refine classes: every group belongs to exactly one
//! class. Datasets are immutable after construction and safe to share
//! across threads.

mod io;

pub use io::{load_dataset, write_dataset, Manifest};

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::seq::index::sample;

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::scalar::Scalar;

/// Feature matrix with class labels, group labels and the group-to-class map.
#[derive(Debug, Clone)]
pub struct EmbeddingDataset<F> {
    features: Array2<F>,
    class_labels: Vec<u32>,
    group_labels: Vec<u32>,
    group_to_class: Vec<u32>,
    n_classes: usize,
    name: String,
}

impl<F: Scalar> EmbeddingDataset<F> {
    /// Build a validated dataset.
    ///
    /// Checks every invariant: non-empty, at least two classes, labels in
    /// range, groups consistent with classes, features finite.
    pub fn new(
        features: Array2<F>,
        class_labels: Vec<u32>,
        group_labels: Vec<u32>,
        group_to_class: Vec<u32>,
        n_classes: usize,
        name: impl Into<String>,
    ) -> Result<Self> {
        let d = Self {
            features,
            class_labels,
            group_labels,
            group_to_class,
            n_classes,
            name: name.into(),
        };
        d.validate()?;
        Ok(d)
    }

    /// Construction bypassing validation, for internal test fixtures that
    /// need degenerate shapes (e.g. a single class).
    #[cfg(test)]
    pub(crate) fn new_unvalidated(
        features: Array2<F>,
        class_labels: Vec<u32>,
        group_labels: Vec<u32>,
        group_to_class: Vec<u32>,
        n_classes: usize,
        name: impl Into<String>,
    ) -> Self {
        Self {
            features,
            class_labels,
            group_labels,
            group_to_class,
            n_classes,
            name: name.into(),
        }
    }

    fn validate(&self) -> Result<()> {
        let m = self.features.nrows();
        if m == 0 {
            return Err(Error::EmptyDataset);
        }
        if self.features.ncols() == 0 {
            return Err(Error::Manifest("feature dimension must be at least 1".into()));
        }
        if self.n_classes < 2 {
            return Err(Error::Manifest("at least 2 classes required".into()));
        }
        if self.class_labels.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: self.class_labels.len(),
                context: "class labels".into(),
            });
        }
        if self.group_labels.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: self.group_labels.len(),
                context: "group labels".into(),
            });
        }
        let n_groups = self.group_to_class.len() as u32;
        let n_classes = self.n_classes as u32;
        for (g, &c) in self.group_to_class.iter().enumerate() {
            if c >= n_classes {
                return Err(Error::Manifest(format!(
                    "group_to_class[{g}] = {c} not in [0, {n_classes})"
                )));
            }
        }
        for i in 0..m {
            let y = self.class_labels[i];
            let g = self.group_labels[i];
            if y >= n_classes {
                return Err(Error::LabelOutOfRange {
                    row: i,
                    kind: "class",
                    value: y,
                    limit: n_classes,
                });
            }
            if g >= n_groups {
                return Err(Error::LabelOutOfRange {
                    row: i,
                    kind: "group",
                    value: g,
                    limit: n_groups,
                });
            }
            let mapped = self.group_to_class[g as usize];
            if mapped != y {
                return Err(Error::GroupClassMismatch {
                    row: i,
                    group: g,
                    mapped,
                    label: y,
                });
            }
        }
        for ((i, j), &v) in self.features.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::NonFinite { row: i, col: j });
            }
        }
        Ok(())
    }

    /// Number of examples.
    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Feature dimension.
    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_groups(&self) -> usize {
        self.group_to_class.len()
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn features(&self) -> ArrayView2<'_, F> {
        self.features.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, F> {
        self.features.row(i)
    }

    pub fn class_labels(&self) -> &[u32] {
        &self.class_labels
    }

    pub fn group_labels(&self) -> &[u32] {
        &self.group_labels
    }

    pub fn group_to_class(&self) -> &[u32] {
        &self.group_to_class
    }

    /// Group ids belonging to class `y`.
    pub fn groups_of_class(&self, y: usize) -> Vec<usize> {
        self.group_to_class
            .iter()
            .enumerate()
            .filter(|(_, &c)| c as usize == y)
            .map(|(g, _)| g)
            .collect()
    }

    /// New dataset containing the given rows, labels carried over.
    ///
    /// Indices may repeat (upsampling); each must be in range.
    pub fn select(&self, indices: &[usize], name: impl Into<String>) -> Result<Self> {
        let m = self.len();
        for &i in indices {
            if i >= m {
                return Err(Error::InvalidArg(format!("index {i} out of range 0..{m}")));
            }
        }
        if indices.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut features = Array2::zeros((indices.len(), self.dim()));
        for (r, &i) in indices.iter().enumerate() {
            features.row_mut(r).assign(&self.features.row(i));
        }
        Ok(Self {
            features,
            class_labels: indices.iter().map(|&i| self.class_labels[i]).collect(),
            group_labels: indices.iter().map(|&i| self.group_labels[i]).collect(),
            group_to_class: self.group_to_class.clone(),
            n_classes: self.n_classes,
            name: name.into(),
        })
    }
}

/// Per-group and per-class counts with the per-class group ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupStats {
    /// Examples per group id.
    pub group_counts: Vec<usize>,
    /// Examples per class id.
    pub class_counts: Vec<usize>,
    /// Per class: smallest group count divided by largest group count,
    /// over the groups mapped to that class. A class with a single group
    /// (or none populated) has ratio 1.0 by convention.
    pub class_group_ratio: Vec<f64>,
}

/// Exact group/class counts and per-class minority/majority ratios.
pub fn group_stats<F: Scalar>(d: &EmbeddingDataset<F>) -> GroupStats {
    let mut group_counts = vec![0usize; d.n_groups()];
    let mut class_counts = vec![0usize; d.n_classes()];
    for i in 0..d.len() {
        group_counts[d.group_labels()[i] as usize] += 1;
        class_counts[d.class_labels()[i] as usize] += 1;
    }
    let class_group_ratio = (0..d.n_classes())
        .map(|y| {
            let counts: Vec<usize> = d
                .groups_of_class(y)
                .into_iter()
                .map(|g| group_counts[g])
                .filter(|&c| c > 0)
                .collect();
            match (counts.iter().min(), counts.iter().max()) {
                (Some(&lo), Some(&hi)) if counts.len() > 1 => lo as f64 / hi as f64,
                _ => 1.0,
            }
        })
        .collect();
    GroupStats {
        group_counts,
        class_counts,
        class_group_ratio,
    }
}

/// Subsample majority groups so each class reaches `target_ratio`.
///
/// Within each class, every group larger than `round(min_count /
/// target_ratio)` is uniformly subsampled without replacement down to that
/// cap; smaller groups (in particular the minority) are untouched. The
/// achieved ratio is within one example of the target. Deterministic for a
/// given seed; selections come from the crate's fixed generator.
pub fn subsample_to_group_ratio<F: Scalar>(
    d: &EmbeddingDataset<F>,
    target_ratio: f64,
    seed: u64,
) -> Result<EmbeddingDataset<F>> {
    subsample_to_group_ratio_with_cap(d, target_ratio, seed, None)
}

/// [`subsample_to_group_ratio`] with an optional cap on the total retained
/// examples. When the ratio-adjusted total exceeds `max_total`, every group
/// is further scaled down proportionally (floor, minimum one example).
pub fn subsample_to_group_ratio_with_cap<F: Scalar>(
    d: &EmbeddingDataset<F>,
    target_ratio: f64,
    seed: u64,
    max_total: Option<usize>,
) -> Result<EmbeddingDataset<F>> {
    if !(target_ratio > 0.0 && target_ratio <= 1.0) {
        return Err(Error::InvalidArg(format!(
            "target ratio {target_ratio} not in (0, 1]"
        )));
    }
    let stats = group_stats(d);
    let mut keep_per_group: Vec<usize> = stats.group_counts.clone();

    for y in 0..d.n_classes() {
        if stats.class_counts[y] == 0 {
            return Err(Error::EmptyClass(y));
        }
        let groups = d.groups_of_class(y);
        let counts: Vec<usize> = groups
            .iter()
            .map(|&g| stats.group_counts[g])
            .filter(|&c| c > 0)
            .collect();
        if counts.len() < 2 {
            continue; // single populated group: no imbalance expressible
        }
        let min_count = *counts.iter().min().unwrap();
        let max_count = *counts.iter().max().unwrap();
        let cap = ((min_count as f64 / target_ratio).round() as usize).max(1);
        if cap > max_count {
            return Err(Error::RatioUnachievable {
                class: y,
                target: target_ratio,
                min_count,
                max_count,
            });
        }
        for &g in &groups {
            if keep_per_group[g] > cap {
                keep_per_group[g] = cap;
            }
        }
    }

    if let Some(cap_total) = max_total {
        let total: usize = keep_per_group.iter().sum();
        if total > cap_total {
            let scale = cap_total as f64 / total as f64;
            for k in keep_per_group.iter_mut() {
                if *k > 0 {
                    *k = ((*k as f64 * scale).floor() as usize).max(1);
                }
            }
        }
    }

    // Gather group member indices in row order, then draw each group's
    // subset with the seeded generator, iterating groups by id so the
    // selection is a pure function of (dataset, target, seed).
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); d.n_groups()];
    for i in 0..d.len() {
        members[d.group_labels()[i] as usize].push(i);
    }
    let mut rng = rng_from_seed(seed);
    let mut selected: Vec<usize> = Vec::new();
    for g in 0..d.n_groups() {
        let keep = keep_per_group[g];
        let group = &members[g];
        if keep >= group.len() {
            selected.extend_from_slice(group);
        } else {
            let mut picks: Vec<usize> = sample(&mut rng, group.len(), keep)
                .into_iter()
                .map(|j| group[j])
                .collect();
            picks.sort_unstable();
            selected.extend(picks);
        }
    }
    selected.sort_unstable();
    d.select(&selected, format!("{}@ratio{}", d.name(), target_ratio))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn toy(counts: &[usize], group_to_class: &[u32], n_classes: usize) -> EmbeddingDataset<f64> {
        let m: usize = counts.iter().sum();
        let mut class_labels = Vec::with_capacity(m);
        let mut group_labels = Vec::with_capacity(m);
        for (g, &c) in counts.iter().enumerate() {
            for _ in 0..c {
                group_labels.push(g as u32);
                class_labels.push(group_to_class[g]);
            }
        }
        let features = Array2::from_shape_fn((m, 3), |(i, j)| (i * 3 + j) as f64);
        EmbeddingDataset::new(
            features,
            class_labels,
            group_labels,
            group_to_class.to_vec(),
            n_classes,
            "toy",
        )
        .unwrap()
    }

    #[test]
    fn waterbirds_shaped_counts_and_ratios() {
        let d = toy(&[3498, 184, 56, 1057], &[0, 0, 1, 1], 2);
        assert_eq!(d.len(), 4795);
        assert_eq!(d.n_groups(), 4);
        assert_eq!(d.n_classes(), 2);
        let s = group_stats(&d);
        assert_eq!(s.group_counts, vec![3498, 184, 56, 1057]);
        assert_eq!(s.class_counts, vec![3682, 1113]);
        assert!((s.class_group_ratio[0] - 184.0 / 3498.0).abs() < 1e-15);
        assert!((s.class_group_ratio[1] - 56.0 / 1057.0).abs() < 1e-15);
        // displayed to 4 decimals these are the 0.0526 / 0.0530 ratios
        assert!((s.class_group_ratio[0] - 0.0526).abs() < 5e-5);
        assert!((s.class_group_ratio[1] - 0.0530).abs() < 5e-5);
    }

    #[test]
    fn equal_groups_have_unit_ratio() {
        let d = toy(&[10, 10, 10, 10], &[0, 0, 1, 1], 2);
        let s = group_stats(&d);
        assert_eq!(s.class_group_ratio, vec![1.0, 1.0]);
    }

    #[test]
    fn single_group_per_class_ratio_is_one() {
        let d = toy(&[7, 13], &[0, 1], 2);
        let s = group_stats(&d);
        assert_eq!(s.class_group_ratio, vec![1.0, 1.0]);
    }

    #[test]
    fn empty_dataset_rejected() {
        let r = EmbeddingDataset::<f64>::new(
            Array2::zeros((0, 3)),
            vec![],
            vec![],
            vec![0, 1],
            2,
            "x",
        );
        assert!(matches!(r, Err(Error::EmptyDataset)));
    }

    #[test]
    fn group_class_inconsistency_rejected() {
        // group 1 maps to class 0 but the example carries class label 1
        let r = EmbeddingDataset::new(
            array![[1.0, 0.0], [0.0, 1.0]],
            vec![0, 1],
            vec![0, 1],
            vec![0, 0],
            2,
            "x",
        );
        assert!(matches!(r, Err(Error::GroupClassMismatch { row: 1, .. })));
    }

    #[test]
    fn nan_features_rejected() {
        let r = EmbeddingDataset::new(
            array![[1.0, f64::NAN], [0.0, 1.0]],
            vec![0, 1],
            vec![0, 1],
            vec![0, 1],
            2,
            "x",
        );
        assert!(matches!(r, Err(Error::NonFinite { row: 0, col: 1 })));
    }

    #[test]
    fn subsample_already_at_target_keeps_majority() {
        let d = toy(&[100, 5, 100, 5], &[0, 0, 1, 1], 2);
        let out = subsample_to_group_ratio(&d, 0.05, 7).unwrap();
        let s = group_stats(&out);
        assert_eq!(s.group_counts, vec![100, 5, 100, 5]);
    }

    #[test]
    fn subsample_majority_to_twenty() {
        let d = toy(&[100, 10, 30, 15], &[0, 0, 1, 1], 2);
        let out = subsample_to_group_ratio(&d, 0.5, 7).unwrap();
        let s = group_stats(&out);
        assert_eq!(s.group_counts[0], 20); // round(10 / 0.5)
        assert_eq!(s.group_counts[1], 10);
        assert_eq!(s.group_counts[2], 30); // round(15 / 0.5) = 30, untouched
    }

    #[test]
    fn subsample_is_deterministic() {
        let d = toy(&[100, 10, 30, 15], &[0, 0, 1, 1], 2);
        let a = subsample_to_group_ratio(&d, 0.6, 42).unwrap();
        let b = subsample_to_group_ratio(&d, 0.6, 42).unwrap();
        assert_eq!(a.class_labels(), b.class_labels());
        assert_eq!(a.group_labels(), b.group_labels());
        assert_eq!(a.features(), b.features());
        let c = subsample_to_group_ratio(&d, 0.6, 43).unwrap();
        assert!(a.features() != c.features());
    }

    #[test]
    fn subsample_unachievable_target_errors() {
        // ratio already 0.5; lowering it would require removing minority points
        let d = toy(&[20, 10, 30, 30], &[0, 0, 1, 1], 2);
        let r = subsample_to_group_ratio(&d, 0.05, 7);
        assert!(matches!(r, Err(Error::RatioUnachievable { class: 0, .. })));
    }

    #[test]
    fn max_total_cap_scales_groups_down() {
        let d = toy(&[100, 100, 100, 100], &[0, 0, 1, 1], 2);
        let out = subsample_to_group_ratio_with_cap(&d, 1.0, 7, Some(100)).unwrap();
        assert_eq!(out.len(), 100);
        let s = group_stats(&out);
        assert_eq!(s.group_counts, vec![25, 25, 25, 25]);
    }

    proptest! {
        #[test]
        fn subsample_ratio_within_one_example(
            maj in 2usize..200,
            min_frac in 0.02f64..1.0,
            target in 0.02f64..1.0,
            seed in 0u64..1000,
        ) {
            let min = ((maj as f64 * min_frac) as usize).max(1);
            let (lo, hi) = (min.min(maj), min.max(maj));
            let d = toy(&[hi, lo, 10], &[0, 0, 1], 2);
            match subsample_to_group_ratio(&d, target, seed) {
                Ok(out) => {
                    let s = group_stats(&out);
                    // minority untouched
                    prop_assert_eq!(s.group_counts[1].min(s.group_counts[0]), lo);
                    let after_min = s.group_counts[0].min(s.group_counts[1]) as f64;
                    let after_maj = s.group_counts[0].max(s.group_counts[1]) as f64;
                    let achieved = after_min / after_maj;
                    prop_assert!((achieved - target).abs() <= 1.0 / after_maj + 1e-12);
                    // counts sum to the new m
                    prop_assert_eq!(s.group_counts.iter().sum::<usize>(), out.len());
                }
                Err(Error::RatioUnachievable { .. }) => {
                    let cap = ((lo as f64 / target).round() as usize).max(1);
                    prop_assert!(cap > hi);
                }
                Err(e) => return Err(TestCaseError::fail(format!("unexpected error {e}"))),
            }
        }
    }
}
