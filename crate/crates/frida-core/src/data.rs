//! Datasets, domain identifiers, label encodings, and splits.
//!
//! A `FeatureDataset` is a batch of d-dimensional feature vectors tagged
//! with a domain time stamp, optionally carrying class labels. Targets in
//! the incremental loop are handled through `UnlabeledDataset`, a view that
//! physically cannot carry labels, so hidden evaluation labels can never
//! leak into training.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{FridaError, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor2;

/// A domain's position in the episode sequence plus its binary code.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainId {
    tau: usize,
    code: Vec<f64>,
}

impl DomainId {
    /// Identifier for time stamp `tau` under a `width`-bit code.
    pub fn new(tau: usize, width: usize) -> Result<Self> {
        Ok(DomainId {
            tau,
            code: encode_domain(tau, width)?,
        })
    }

    pub fn tau(&self) -> usize {
        self.tau
    }

    /// The 0/1 code as floats, ready to concatenate into network inputs.
    pub fn code(&self) -> &[f64] {
        &self.code
    }

    pub fn width(&self) -> usize {
        self.code.len()
    }
}

/// Little-endian binary code of `tau` as 0/1 floats.
///
/// Errors when `tau` does not fit, instructing the caller to configure a
/// larger width; silent wraparound would quietly merge domains.
pub fn encode_domain(tau: usize, width: usize) -> Result<Vec<f64>> {
    if width < usize::BITS as usize && tau >= (1usize << width) {
        return Err(FridaError::Capacity { tau, width });
    }
    Ok((0..width)
        .map(|b| {
            if b < usize::BITS as usize {
                ((tau >> b) & 1) as f64
            } else {
                0.0
            }
        })
        .collect())
}

/// Unit vector of length `c` with a 1 at `y`.
pub fn one_hot(y: usize, c: usize) -> Result<Vec<f64>> {
    if y >= c {
        return Err(FridaError::Index {
            context: "one_hot",
            index: y,
            bound: c,
        });
    }
    let mut v = vec![0.0; c];
    v[y] = 1.0;
    Ok(v)
}

/// Feature vectors from one domain, with optional class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDataset {
    features: Tensor2,
    labels: Option<Vec<usize>>,
    domain: DomainId,
    class_count: usize,
}

impl FeatureDataset {
    pub fn new(
        features: Tensor2,
        labels: Option<Vec<usize>>,
        domain: DomainId,
        class_count: usize,
    ) -> Result<Self> {
        if features.rows() == 0 {
            return Err(FridaError::Contract(
                "dataset must contain at least one sample".into(),
            ));
        }
        if !features.all_finite() {
            return Err(FridaError::NonFinite {
                context: "dataset features",
            });
        }
        if let Some(ref l) = labels {
            if l.len() != features.rows() {
                return Err(FridaError::Contract(format!(
                    "label count {} does not match sample count {}",
                    l.len(),
                    features.rows()
                )));
            }
            for &y in l {
                if y >= class_count {
                    return Err(FridaError::Index {
                        context: "dataset label",
                        index: y,
                        bound: class_count,
                    });
                }
            }
        }
        Ok(FeatureDataset {
            features,
            labels,
            domain,
            class_count,
        })
    }

    pub fn n(&self) -> usize {
        self.features.rows()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn features(&self) -> &Tensor2 {
        &self.features
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn domain(&self) -> &DomainId {
        &self.domain
    }

    pub fn is_labeled(&self) -> bool {
        self.labels.is_some()
    }

    /// Copy with labels removed.
    pub fn without_labels(&self) -> FeatureDataset {
        FeatureDataset {
            features: self.features.clone(),
            labels: None,
            domain: self.domain.clone(),
            class_count: self.class_count,
        }
    }

    /// Subset holding the listed rows, in order.
    pub fn select(&self, indices: &[usize]) -> Result<FeatureDataset> {
        if indices.is_empty() {
            return Err(FridaError::Contract("empty selection".into()));
        }
        for &i in indices {
            if i >= self.n() {
                return Err(FridaError::Index {
                    context: "select",
                    index: i,
                    bound: self.n(),
                });
            }
        }
        Ok(FeatureDataset {
            features: self.features.select_rows(indices),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            domain: self.domain.clone(),
            class_count: self.class_count,
        })
    }

    /// Per-class sample counts (labeled datasets only).
    pub fn class_histogram(&self) -> Option<Vec<usize>> {
        self.labels.as_ref().map(|l| {
            let mut h = vec![0usize; self.class_count];
            for &y in l {
                h[y] += 1;
            }
            h
        })
    }
}

/// A dataset view guaranteed label-free. The only way in strips labels.
#[derive(Debug, Clone)]
pub struct UnlabeledDataset(FeatureDataset);

impl UnlabeledDataset {
    pub fn from_dataset(ds: &FeatureDataset) -> Self {
        UnlabeledDataset(ds.without_labels())
    }

    pub fn dataset(&self) -> &FeatureDataset {
        &self.0
    }

    pub fn features(&self) -> &Tensor2 {
        self.0.features()
    }

    pub fn domain(&self) -> &DomainId {
        self.0.domain()
    }

    pub fn n(&self) -> usize {
        self.0.n()
    }
}

/// Plan for an incremental run: one labeled source then unlabeled targets,
/// all sharing the same feature dim and closed label set.
#[derive(Debug, Clone)]
pub struct EpisodeSpec {
    pub datasets: Vec<FeatureDataset>,
    pub class_count: usize,
    pub dim: usize,
    pub seed: u64,
}

impl EpisodeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.datasets.is_empty() {
            return Err(FridaError::Contract(
                "episode needs at least a source dataset".into(),
            ));
        }
        if !self.datasets[0].is_labeled() {
            return Err(FridaError::Contract(
                "the first (source) dataset must be labeled".into(),
            ));
        }
        for (i, ds) in self.datasets.iter().enumerate() {
            if i > 0 && ds.is_labeled() {
                return Err(FridaError::Contract(format!(
                    "target dataset {i} must be unlabeled"
                )));
            }
            if ds.dim() != self.dim || ds.class_count() != self.class_count {
                return Err(FridaError::Contract(format!(
                    "dataset {i} does not share the episode's dim/class count"
                )));
            }
        }
        Ok(())
    }
}

/// Result of a train/test split.
#[derive(Debug, Clone)]
pub struct SplitOutcome {
    pub train: FeatureDataset,
    pub test: FeatureDataset,
    /// Classes that had a single sample; that sample went to train.
    pub singleton_classes: Vec<usize>,
}

/// Split a dataset into disjoint, exhaustive train/test parts.
///
/// Stratified by class when labels exist: each class contributes
/// `floor(count * test_fraction)` test samples, so small classes stay
/// represented on both sides. Deterministic under the stream seed. Row
/// order in each part follows the original dataset.
pub fn split(
    dataset: &FeatureDataset,
    test_fraction: f64,
    rng: &mut RngStream,
) -> Result<SplitOutcome> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(FridaError::Contract(format!(
            "test_fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    if dataset.n() < 2 {
        return Err(FridaError::Contract(
            "split needs at least two samples".into(),
        ));
    }
    let mut test_marks = vec![false; dataset.n()];
    let mut singleton_classes = Vec::new();
    match dataset.labels() {
        Some(labels) => {
            for class in 0..dataset.class_count() {
                let mut members: Vec<usize> =
                    (0..dataset.n()).filter(|&i| labels[i] == class).collect();
                if members.is_empty() {
                    continue;
                }
                if members.len() == 1 {
                    singleton_classes.push(class);
                    continue;
                }
                let take = ((members.len() as f64) * test_fraction) as usize;
                rng.shuffle(&mut members);
                for &i in members.iter().take(take) {
                    test_marks[i] = true;
                }
            }
        }
        None => {
            let mut order: Vec<usize> = (0..dataset.n()).collect();
            let take = ((dataset.n() as f64) * test_fraction) as usize;
            rng.shuffle(&mut order);
            for &i in order.iter().take(take) {
                test_marks[i] = true;
            }
        }
    }
    let test_idx: Vec<usize> = (0..dataset.n()).filter(|&i| test_marks[i]).collect();
    let train_idx: Vec<usize> = (0..dataset.n()).filter(|&i| !test_marks[i]).collect();
    if train_idx.is_empty() || test_idx.is_empty() {
        return Err(FridaError::Contract(
            "split produced an empty side; adjust test_fraction or dataset size".into(),
        ));
    }
    Ok(SplitOutcome {
        train: dataset.select(&train_idx)?,
        test: dataset.select(&test_idx)?,
        singleton_classes,
    })
}

/// Concatenate labeled datasets into one (used to assemble the auxiliary
/// source for adaptation). Keeps the first dataset's domain id.
pub fn concat_labeled(parts: &[&FeatureDataset]) -> Result<FeatureDataset> {
    if parts.is_empty() {
        return Err(FridaError::Contract("concat of zero datasets".into()));
    }
    let dim = parts[0].dim();
    let class_count = parts[0].class_count();
    let mut features = parts[0].features().clone();
    let mut labels: Vec<usize> = parts[0]
        .labels()
        .ok_or_else(|| FridaError::Contract("concat_labeled requires labels".into()))?
        .to_vec();
    for ds in &parts[1..] {
        if ds.dim() != dim || ds.class_count() != class_count {
            return Err(FridaError::Contract(
                "concat of incompatible datasets".into(),
            ));
        }
        features = features.vcat(ds.features())?;
        labels.extend_from_slice(
            ds.labels()
                .ok_or_else(|| FridaError::Contract("concat_labeled requires labels".into()))?,
        );
    }
    FeatureDataset::new(
        features,
        Some(labels),
        parts[0].domain().clone(),
        class_count,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::gauss_sample;

    fn toy_labeled(n_per_class: usize, classes: usize, dim: usize, seed: u64) -> FeatureDataset {
        let mut rng = RngStream::new(seed);
        let features = gauss_sample(&mut rng, n_per_class * classes, dim);
        let labels: Vec<usize> = (0..n_per_class * classes).map(|i| i % classes).collect();
        FeatureDataset::new(
            features,
            Some(labels),
            DomainId::new(0, 3).unwrap(),
            classes,
        )
        .unwrap()
    }

    #[test]
    fn encode_domain_examples() {
        assert_eq!(encode_domain(0, 3).unwrap(), vec![0.0, 0.0, 0.0]);
        assert_eq!(encode_domain(5, 3).unwrap(), vec![1.0, 0.0, 1.0]);
        assert!(matches!(
            encode_domain(8, 3),
            Err(FridaError::Capacity { tau: 8, width: 3 })
        ));
    }

    #[test]
    fn one_hot_examples() {
        assert_eq!(one_hot(0, 3).unwrap(), vec![1.0, 0.0, 0.0]);
        assert_eq!(one_hot(2, 3).unwrap(), vec![0.0, 0.0, 1.0]);
        assert!(one_hot(3, 3).is_err());
    }

    #[test]
    fn split_sizes_and_disjointness() {
        let ds = toy_labeled(10, 1, 4, 1);
        let mut rng = RngStream::new(2);
        let out = split(&ds, 0.3, &mut rng).unwrap();
        assert_eq!(out.test.n(), 3);
        assert_eq!(out.train.n(), 7);
    }

    #[test]
    fn split_deterministic_under_seed() {
        let ds = toy_labeled(10, 4, 4, 1);
        let a = split(&ds, 0.3, &mut RngStream::new(9)).unwrap();
        let b = split(&ds, 0.3, &mut RngStream::new(9)).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
    }

    #[test]
    fn split_stratified_per_class() {
        let ds = toy_labeled(10, 4, 4, 3);
        let out = split(&ds, 0.3, &mut RngStream::new(5)).unwrap();
        let hist = out.test.class_histogram().unwrap();
        assert_eq!(hist, vec![3, 3, 3, 3]);
    }

    #[test]
    fn singleton_class_goes_to_train_with_warning() {
        let mut rng = RngStream::new(4);
        let features = gauss_sample(&mut rng, 5, 3);
        let ds = FeatureDataset::new(
            features,
            Some(vec![0, 0, 0, 0, 1]),
            DomainId::new(0, 3).unwrap(),
            2,
        )
        .unwrap();
        let out = split(&ds, 0.3, &mut RngStream::new(6)).unwrap();
        assert_eq!(out.singleton_classes, vec![1]);
        assert!(out.train.labels().unwrap().contains(&1));
        assert!(!out.test.labels().unwrap().contains(&1));
    }

    #[test]
    fn unlabeled_view_strips_labels() {
        let ds = toy_labeled(3, 2, 4, 8);
        let view = UnlabeledDataset::from_dataset(&ds);
        assert!(!view.dataset().is_labeled());
        assert_eq!(view.features(), ds.features());
    }

    #[test]
    fn episode_spec_validation() {
        let src = toy_labeled(3, 2, 4, 8);
        let tgt = toy_labeled(3, 2, 4, 9).without_labels();
        let good = EpisodeSpec {
            datasets: vec![src.clone(), tgt.clone()],
            class_count: 2,
            dim: 4,
            seed: 0,
        };
        good.validate().unwrap();
        let bad = EpisodeSpec {
            datasets: vec![src.without_labels(), tgt],
            class_count: 2,
            dim: 4,
            seed: 0,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn label_out_of_range_rejected() {
        let mut rng = RngStream::new(4);
        let features = gauss_sample(&mut rng, 2, 3);
        let err = FeatureDataset::new(features, Some(vec![0, 2]), DomainId::new(0, 3).unwrap(), 2);
        assert!(matches!(err, Err(FridaError::Index { .. })));
    }
}
