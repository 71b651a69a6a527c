//! Accuracy/forgetting accounting and 2-D projections.
//!
//! `AccuracyMatrix` stores `A[k][tau]`: the accuracy of the model at time
//! `k` on the test set of domain `tau`, defined only for `k >= tau` (a
//! domain cannot be tested before it exists). Forgetting telescopes the
//! per-step accuracy deltas; per-domain averages and the dataset-level
//! source/target rows reproduce the usual report layout.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::dannib::{classify, DannIbModel};
use crate::data::FeatureDataset;
use crate::error::{FridaError, Result};
use crate::tensor::Tensor2;

/// Triangular per-(time, domain) accuracy store.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyMatrix {
    t_final: usize,
    /// `cells[k][tau]`, present only for `tau <= k`.
    cells: Vec<Vec<Option<f64>>>,
}

impl AccuracyMatrix {
    /// Empty matrix covering times and domains `0..=t_final`.
    pub fn new(t_final: usize) -> Self {
        AccuracyMatrix {
            t_final,
            cells: vec![vec![None; t_final + 1]; t_final + 1],
        }
    }

    pub fn t_final(&self) -> usize {
        self.t_final
    }

    /// Record `A[time][domain]`. Cells with `time < domain` stay undefined.
    pub fn set(&mut self, time: usize, domain: usize, accuracy: f64) -> Result<()> {
        if time > self.t_final || domain > self.t_final {
            return Err(FridaError::Index {
                context: "AccuracyMatrix::set",
                index: time.max(domain),
                bound: self.t_final + 1,
            });
        }
        if time < domain {
            return Err(FridaError::UndefinedEntry { time, domain });
        }
        if !(0.0..=1.0).contains(&accuracy) {
            return Err(FridaError::Contract(format!(
                "accuracy must lie in [0, 1], got {accuracy}"
            )));
        }
        self.cells[time][domain] = Some(accuracy);
        Ok(())
    }

    pub fn get(&self, time: usize, domain: usize) -> Option<f64> {
        self.cells
            .get(time)
            .and_then(|row| row.get(domain).copied().flatten())
    }

    /// First time at which `domain` has an entry.
    fn first_time(&self, domain: usize) -> Option<usize> {
        (domain..=self.t_final).find(|&k| self.get(k, domain).is_some())
    }

    /// All `(time, domain, accuracy)` entries in row-major order.
    pub fn entries(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for k in 0..=self.t_final {
            for tau in 0..=k {
                if let Some(a) = self.get(k, tau) {
                    out.push((k, tau, a));
                }
            }
        }
        out
    }
}

/// Which forgetting formula to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForgettingMode {
    /// Telescoped from the domain's first recorded evaluation:
    /// `(A[T] - A[first]) / (T - first)`, zero when evaluated once.
    FirstSeen,
    /// The literal printed sum, telescoping to
    /// `(A[T][tau] - A[tau-1][tau]) / (T - tau + 1)`. Its starting index
    /// references an accuracy before the domain exists, so it errors on any
    /// matrix this crate can build; kept for completeness behind this flag.
    PaperLiteral,
}

/// Average forgetting of `domain` across the matrix's time span. Negative
/// means the domain's accuracy dropped.
pub fn forgetting(matrix: &AccuracyMatrix, domain: usize, mode: ForgettingMode) -> Result<f64> {
    let t = matrix.t_final();
    match mode {
        ForgettingMode::FirstSeen => {
            let first = matrix
                .first_time(domain)
                .ok_or(FridaError::UndefinedEntry {
                    time: domain,
                    domain,
                })?;
            let last = matrix
                .get(t, domain)
                .ok_or(FridaError::UndefinedEntry { time: t, domain })?;
            if t == first {
                return Ok(0.0);
            }
            // telescoped mean of per-step deltas; interior cells must exist
            for k in first..=t {
                if matrix.get(k, domain).is_none() {
                    return Err(FridaError::UndefinedEntry { time: k, domain });
                }
            }
            let start = matrix.get(first, domain).expect("checked");
            Ok((last - start) / (t - first) as f64)
        }
        ForgettingMode::PaperLiteral => {
            if domain == 0 {
                return Err(FridaError::UndefinedEntry { time: 0, domain });
            }
            let prev = matrix
                .get(domain - 1, domain)
                .ok_or(FridaError::UndefinedEntry {
                    time: domain - 1,
                    domain,
                })?;
            let last = matrix
                .get(t, domain)
                .ok_or(FridaError::UndefinedEntry { time: t, domain })?;
            Ok((last - prev) / (t - domain + 1) as f64)
        }
    }
}

/// Per-domain summary row.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainMetrics {
    pub domain: usize,
    /// Mean accuracy over the times the domain was evaluated.
    pub avg_accuracy: f64,
    /// First-seen forgetting; 0 for a domain evaluated once.
    pub forgetting: f64,
    /// Accuracy at the final time.
    pub final_accuracy: f64,
    /// Number of evaluations that went into the averages.
    pub evaluations: usize,
}

/// Full report: per-domain rows plus source/target dataset-level averages.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub domains: Vec<DomainMetrics>,
    pub source_avg_accuracy: f64,
    pub source_forgetting: f64,
    pub target_avg_accuracy: Option<f64>,
    /// Mean forgetting over target domains evaluated at least twice; absent
    /// when no target has two evaluations.
    pub target_forgetting: Option<f64>,
}

/// Build the report. Every domain must have a contiguous run of entries
/// from its first evaluation through the final time.
///
/// The forgetting averages skip domains evaluated only once (their
/// forgetting is identically zero and the usual tables leave them blank).
pub fn report(matrix: &AccuracyMatrix) -> Result<MetricsReport> {
    let t = matrix.t_final();
    let mut domains = Vec::with_capacity(t + 1);
    for tau in 0..=t {
        let first = matrix.first_time(tau).ok_or(FridaError::Contract(format!(
            "incomplete matrix: domain {tau} never evaluated"
        )))?;
        let mut sum = 0.0;
        let mut count = 0usize;
        for k in first..=t {
            let a = matrix.get(k, tau).ok_or(FridaError::Contract(format!(
                "incomplete matrix: domain {tau} missing at time {k}"
            )))?;
            sum += a;
            count += 1;
        }
        domains.push(DomainMetrics {
            domain: tau,
            avg_accuracy: sum / count as f64,
            forgetting: forgetting(matrix, tau, ForgettingMode::FirstSeen)?,
            final_accuracy: matrix.get(t, tau).expect("checked"),
            evaluations: count,
        });
    }
    let source = &domains[0];
    let targets = &domains[1..];
    let target_avg_accuracy = if targets.is_empty() {
        None
    } else {
        Some(targets.iter().map(|d| d.avg_accuracy).sum::<f64>() / targets.len() as f64)
    };
    let multi: Vec<&DomainMetrics> = targets.iter().filter(|d| d.evaluations >= 2).collect();
    let target_forgetting = if multi.is_empty() {
        None
    } else {
        Some(multi.iter().map(|d| d.forgetting).sum::<f64>() / multi.len() as f64)
    };
    Ok(MetricsReport {
        source_avg_accuracy: source.avg_accuracy,
        source_forgetting: source.forgetting,
        target_avg_accuracy,
        target_forgetting,
        domains,
    })
}

/// Accuracy of the solver on each test set, in the given order. The
/// classify path never sees a domain identity.
pub fn evaluate(model: &DannIbModel, test_sets: &[&FeatureDataset]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(test_sets.len());
    for ds in test_sets {
        out.push(accuracy_of(model, ds)?);
    }
    Ok(out)
}

/// Accuracy of the solver on one labeled set.
pub fn accuracy_of(model: &DannIbModel, ds: &FeatureDataset) -> Result<f64> {
    let labels = ds
        .labels()
        .ok_or_else(|| FridaError::Contract("evaluation requires a labeled test set".into()))?;
    let (preds, _) = classify(model, ds.features())?;
    let correct = preds
        .iter()
        .zip(labels.iter())
        .filter(|(p, y)| p == y)
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Outcome of a 2-D principal component projection.
#[derive(Debug, Clone)]
pub struct Projection {
    /// `n x 2` coordinates of the centered data in the top-2 eigenbasis.
    pub coords: Tensor2,
    /// `d x 2` component matrix (columns are the principal directions).
    pub components: Tensor2,
    /// Top two eigenvalues of the covariance (second is 0 when padded).
    pub eigenvalues: (f64, f64),
    /// Second axis was zero-padded because the data had rank < 2.
    pub rank_deficient: bool,
}

/// Project features onto their top-2 principal components.
///
/// Covariance eigendecomposition (cyclic Jacobi), deterministic sign
/// convention: each component's largest-magnitude loading is positive.
/// Rank-deficient data keeps a zero second axis and flags it.
pub fn project2d(features: &Tensor2) -> Result<Projection> {
    let n = features.rows();
    let d = features.cols();
    if n < 3 {
        return Err(FridaError::Contract(format!(
            "projection needs at least 3 rows, got {n}"
        )));
    }
    if !features.all_finite() {
        return Err(FridaError::NonFinite {
            context: "project2d features",
        });
    }
    // center
    let mut centered = features.clone();
    let mut means = vec![0.0; d];
    for r in 0..n {
        for (c, m) in means.iter_mut().enumerate() {
            *m += features.get(r, c);
        }
    }
    for m in means.iter_mut() {
        *m /= n as f64;
    }
    for r in 0..n {
        for (c, m) in means.iter().enumerate() {
            let v = centered.get(r, c) - m;
            centered.set(r, c, v);
        }
    }
    let mut cov = centered.t_matmul(&centered)?;
    cov.scale(1.0 / n as f64);
    let (eigvals, eigvecs) = jacobi_eigh(&cov);

    // top-2 by eigenvalue, ties toward the lower index
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eigvals[b]
            .partial_cmp(&eigvals[a])
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let scale = eigvals
        .iter()
        .fold(0.0f64, |m, &v| m.max(libm::fabs(v)))
        .max(1.0);
    let lead = order[0];
    let second = if d >= 2 { Some(order[1]) } else { None };
    let rank_deficient = match second {
        Some(s) => eigvals[s] <= 1e-12 * scale,
        None => true,
    };

    let mut components = Tensor2::zeros(d, 2);
    let mut eig1 = eigvals[lead];
    let mut eig2 = 0.0;
    copy_component(&eigvecs, lead, &mut components, 0);
    if let Some(s) = second {
        if !rank_deficient {
            copy_component(&eigvecs, s, &mut components, 1);
            eig2 = eigvals[s];
        }
    }
    if eig1 < 0.0 {
        // numerically tiny negative curvature means rank 0
        eig1 = 0.0;
    }
    let coords = centered.matmul(&components)?;
    Ok(Projection {
        coords,
        components,
        eigenvalues: (eig1, eig2),
        rank_deficient,
    })
}

/// Copy eigenvector `col` of `vecs` into `out[:, out_col]`, flipping sign so
/// the largest-magnitude loading is positive (first index wins ties).
fn copy_component(vecs: &Tensor2, col: usize, out: &mut Tensor2, out_col: usize) {
    let d = vecs.rows();
    let mut lead = 0usize;
    for r in 0..d {
        if libm::fabs(vecs.get(r, col)) > libm::fabs(vecs.get(lead, col)) {
            lead = r;
        }
    }
    let flip = if vecs.get(lead, col) < 0.0 { -1.0 } else { 1.0 };
    for r in 0..d {
        out.set(r, out_col, flip * vecs.get(r, col));
    }
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// eigenvalues and the matrix whose columns are eigenvectors.
fn jacobi_eigh(a: &Tensor2) -> (Vec<f64>, Tensor2) {
    let d = a.rows();
    let mut m = a.clone();
    let mut v = Tensor2::zeros(d, d);
    for i in 0..d {
        v.set(i, i, 1.0);
    }
    let norm: f64 = libm::sqrt(a.sq_norm()).max(1e-300);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..d {
            for q in (p + 1)..d {
                off += m.get(p, q) * m.get(p, q);
            }
        }
        if libm::sqrt(2.0 * off) <= 1e-14 * norm {
            break;
        }
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = m.get(p, q);
                if libm::fabs(apq) <= 1e-300 {
                    continue;
                }
                let app = m.get(p, p);
                let aqq = m.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + libm::sqrt(1.0 + theta * theta))
                } else {
                    1.0 / (theta - libm::sqrt(1.0 + theta * theta))
                };
                let c = 1.0 / libm::sqrt(1.0 + t * t);
                let s = t * c;
                for k in 0..d {
                    let mkp = m.get(k, p);
                    let mkq = m.get(k, q);
                    m.set(k, p, c * mkp - s * mkq);
                    m.set(k, q, s * mkp + c * mkq);
                }
                for k in 0..d {
                    let mpk = m.get(p, k);
                    let mqk = m.get(q, k);
                    m.set(p, k, c * mpk - s * mqk);
                    m.set(q, k, s * mpk + c * mqk);
                }
                for k in 0..d {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    let eig: Vec<f64> = (0..d).map(|i| m.get(i, i)).collect();
    (eig, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dannib::{DannArch, DannMode};
    use crate::data::DomainId;
    use crate::net::{Activation, DenseLayer, DenseNet};
    use crate::rng::{gauss_sample, RngStream};
    use alloc::vec::Vec;

    /// Solver whose task logits are exactly the first two input coordinates.
    fn passthrough_model() -> DannIbModel {
        let encoder = DenseNet::from_layers(vec![DenseLayer {
            w: Tensor2::from_vec(2, 4, vec![1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap(),
            b: Tensor2::zeros(1, 4),
            act: Activation::Identity,
        }])
        .unwrap();
        let head_task = DenseNet::from_layers(vec![DenseLayer {
            w: Tensor2::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            b: Tensor2::zeros(1, 2),
            act: Activation::Identity,
        }])
        .unwrap();
        let head_dom = DenseNet::from_layers(vec![DenseLayer {
            w: Tensor2::zeros(2, 3),
            b: Tensor2::zeros(1, 3),
            act: Activation::Identity,
        }])
        .unwrap();
        DannIbModel::from_parts(encoder, head_task, head_dom, 2, 2, 2, DannMode::Multiclass)
            .unwrap()
    }

    #[test]
    fn perfect_classifier_scores_one() {
        let model = passthrough_model();
        // label = coordinate argmax, which the passthrough model recovers
        let features =
            Tensor2::from_vec(4, 2, vec![3.0, 1.0, 0.5, 2.0, -1.0, 1.5, 9.0, 2.0]).unwrap();
        let labels = vec![0, 1, 1, 0];
        let ds =
            FeatureDataset::new(features, Some(labels), DomainId::new(0, 3).unwrap(), 2).unwrap();
        assert_eq!(evaluate(&model, &[&ds]).unwrap(), vec![1.0]);
    }

    #[test]
    fn majority_only_classifier_scores_chance_on_balanced_set() {
        // zero weights give uniform posteriors; ties resolve to class 0
        let mut rng = RngStream::new(3);
        let arch = DannArch {
            latent_dim: 3,
            enc_hidden: alloc::vec![4],
        };
        let mut model = DannIbModel::init(&arch, DannMode::Multiclass, 4, 2, &mut rng).unwrap();
        for p in [
            model.encoder.params_mut(),
            model.head_task.params_mut(),
            model.head_dom.params_mut(),
        ]
        .into_iter()
        .flatten()
        {
            p.data_mut().fill(0.0);
        }
        let features = gauss_sample(&mut rng, 40, 2);
        let labels: Vec<usize> = (0..40).map(|i| i % 4).collect();
        let ds =
            FeatureDataset::new(features, Some(labels), DomainId::new(0, 3).unwrap(), 4).unwrap();
        assert_eq!(evaluate(&model, &[&ds]).unwrap(), vec![0.25]);
    }

    #[test]
    fn accuracy_matches_a_naive_recount() {
        let mut rng = RngStream::new(17);
        let arch = DannArch {
            latent_dim: 3,
            enc_hidden: alloc::vec![5],
        };
        let model = DannIbModel::init(&arch, DannMode::Ib, 3, 4, &mut rng).unwrap();
        let features = gauss_sample(&mut rng, 50, 4);
        let labels: Vec<usize> = (0..50).map(|_| rng.next_index(3)).collect();
        let ds = FeatureDataset::new(
            features.clone(),
            Some(labels.clone()),
            DomainId::new(0, 3).unwrap(),
            3,
        )
        .unwrap();
        let fast = evaluate(&model, &[&ds]).unwrap()[0];
        // the oracle: classify row by row and count by hand
        let mut correct = 0usize;
        for (r, &label) in labels.iter().enumerate() {
            let row = features.select_rows(&[r]);
            let (pred, _) = crate::dannib::classify(&model, &row).unwrap();
            if pred[0] == label {
                correct += 1;
            }
        }
        assert_eq!(fast, correct as f64 / 50.0);
    }

    #[test]
    fn unlabeled_test_set_rejected() {
        let model = passthrough_model();
        let mut rng = RngStream::new(3);
        let ds = FeatureDataset::new(
            gauss_sample(&mut rng, 5, 2),
            None,
            DomainId::new(0, 3).unwrap(),
            2,
        )
        .unwrap();
        assert!(evaluate(&model, &[&ds]).is_err());
    }

    fn filled_matrix(rows: &[&[f64]]) -> AccuracyMatrix {
        let t = rows.len() - 1;
        let mut m = AccuracyMatrix::new(t);
        for (k, row) in rows.iter().enumerate() {
            for (tau, &a) in row.iter().enumerate() {
                m.set(k, tau, a).unwrap();
            }
        }
        m
    }

    #[test]
    fn matrix_rejects_future_entries() {
        let mut m = AccuracyMatrix::new(2);
        assert!(matches!(
            m.set(0, 1, 0.5),
            Err(FridaError::UndefinedEntry { .. })
        ));
        m.set(1, 1, 0.5).unwrap();
        assert_eq!(m.get(1, 1), Some(0.5));
        assert_eq!(m.get(0, 1), None);
    }

    #[test]
    fn constant_sequence_has_zero_forgetting() {
        let m = filled_matrix(&[&[0.7], &[0.7, 0.9], &[0.7, 0.9, 0.4]]);
        assert_eq!(forgetting(&m, 0, ForgettingMode::FirstSeen).unwrap(), 0.0);
    }

    #[test]
    fn telescoped_forgetting_by_hand() {
        // accuracies 0.8, 0.7, 0.9 for a domain first seen at time 0
        let m = filled_matrix(&[&[0.8], &[0.7, 1.0], &[0.9, 1.0, 1.0]]);
        let f = forgetting(&m, 0, ForgettingMode::FirstSeen).unwrap();
        assert!((f - 0.05).abs() < 1e-15);
    }

    #[test]
    fn monotone_decreasing_sequence_is_negative() {
        let m = filled_matrix(&[&[0.9], &[0.8, 1.0], &[0.6, 1.0, 1.0]]);
        assert!(forgetting(&m, 0, ForgettingMode::FirstSeen).unwrap() < 0.0);
    }

    #[test]
    fn single_evaluation_forgets_nothing() {
        let m = filled_matrix(&[&[0.9], &[0.8, 1.0], &[0.6, 1.0, 0.77]]);
        assert_eq!(forgetting(&m, 2, ForgettingMode::FirstSeen).unwrap(), 0.0);
    }

    #[test]
    fn paper_literal_mode_reports_the_undefined_index() {
        let m = filled_matrix(&[&[0.9], &[0.8, 1.0], &[0.6, 1.0, 0.77]]);
        assert!(matches!(
            forgetting(&m, 1, ForgettingMode::PaperLiteral),
            Err(FridaError::UndefinedEntry { time: 0, domain: 1 })
        ));
        assert!(forgetting(&m, 0, ForgettingMode::PaperLiteral).is_err());
    }

    #[test]
    fn single_episode_report() {
        let m = filled_matrix(&[&[0.85]]);
        let r = report(&m).unwrap();
        assert_eq!(r.source_avg_accuracy, 0.85);
        assert_eq!(r.source_forgetting, 0.0);
        assert!(r.target_avg_accuracy.is_none());
    }

    #[test]
    fn incomplete_matrix_rejected() {
        let mut m = AccuracyMatrix::new(1);
        m.set(0, 0, 0.5).unwrap();
        m.set(1, 1, 0.5).unwrap();
        // domain 0 missing at time 1
        assert!(report(&m).is_err());
    }

    #[test]
    fn projection_of_axis_aligned_2d_data_is_identity_up_to_centering() {
        // x spread 3, y spread 1, already axis-aligned
        let data =
            Tensor2::from_vec(4, 2, vec![3.0, 1.0, -3.0, -1.0, 3.0, -1.0, -3.0, 1.0]).unwrap();
        let p = project2d(&data).unwrap();
        assert!(!p.rank_deficient);
        for r in 0..4 {
            assert!((p.coords.get(r, 0) - data.get(r, 0)).abs() < 1e-9);
            assert!((p.coords.get(r, 1) - data.get(r, 1)).abs() < 1e-9);
        }
    }

    #[test]
    fn eigenvalues_come_out_ordered() {
        let mut rng = RngStream::new(5);
        let data = gauss_sample(&mut rng, 40, 6);
        let p = project2d(&data).unwrap();
        assert!(p.eigenvalues.0 >= p.eigenvalues.1);
        assert!(p.eigenvalues.1 > 0.0);
    }

    #[test]
    fn rank_deficient_data_pads_second_axis() {
        // all rows on a line
        let mut data = Tensor2::zeros(5, 3);
        for r in 0..5 {
            let t = r as f64;
            data.set(r, 0, 2.0 * t);
            data.set(r, 1, -t);
            data.set(r, 2, 0.5 * t);
        }
        let p = project2d(&data).unwrap();
        assert!(p.rank_deficient);
        for r in 0..5 {
            assert_eq!(p.coords.get(r, 1), 0.0);
        }
    }

    #[test]
    fn too_few_rows_rejected() {
        let data = Tensor2::zeros(2, 3);
        assert!(project2d(&data).is_err());
    }
}
