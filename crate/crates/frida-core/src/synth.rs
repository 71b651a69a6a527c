//! Reproducible multi-domain synthetic feature benchmarks.
//!
//! Each class is a Gaussian blob around a prototype on a sphere; each domain
//! applies an affine shift (rotation in a 2-plane, translation, scale) to
//! the prototypes before sampling. The domain gap grows with the rotation
//! angle and translation, which gives the incremental pipeline a controlled
//! stand-in for real multi-domain data.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::{DomainId, FeatureDataset};
use crate::error::{FridaError, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor2;

const PROTO_RADIUS: f64 = 4.0;
const PROTO_MIN_DIST: f64 = 2.0;
const PROTO_MAX_TRIES: usize = 10_000;

/// Affine shift defining one domain's deviation from the prototypes.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftSpec {
    /// Rotation angle in radians, applied in a random 2-plane.
    pub rotation_angle: f64,
    /// Translation added after rotation and scaling.
    pub translation: Vec<f64>,
    /// Isotropic scale, must be positive.
    pub scale: f64,
    /// Standard deviation of the per-sample Gaussian noise.
    pub noise_sigma: f64,
}

impl ShiftSpec {
    /// The identity shift with the given noise level.
    pub fn identity(dim: usize, noise_sigma: f64) -> Self {
        ShiftSpec {
            rotation_angle: 0.0,
            translation: vec![0.0; dim],
            scale: 1.0,
            noise_sigma,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.scale <= 0.0 {
            return Err(FridaError::Spec(format!(
                "scale must be positive, got {}",
                self.scale
            )));
        }
        if self.noise_sigma < 0.0 {
            return Err(FridaError::Spec(format!(
                "noise_sigma must be nonnegative, got {}",
                self.noise_sigma
            )));
        }
        if self.translation.len() != dim {
            return Err(FridaError::Spec(format!(
                "translation has {} entries, feature dim is {dim}",
                self.translation.len()
            )));
        }
        Ok(())
    }
}

/// Full benchmark description: classes, dims, counts, and one shift per
/// domain (source first).
#[derive(Debug, Clone)]
pub struct BenchmarkSpec {
    pub class_count: usize,
    pub dim: usize,
    pub n_per_class: usize,
    /// One shift per domain, index 0 being the source.
    pub shifts: Vec<ShiftSpec>,
    pub code_width: usize,
    pub seed: u64,
}

impl BenchmarkSpec {
    /// Number of target domains.
    pub fn target_count(&self) -> usize {
        self.shifts.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_count < 2 {
            return Err(FridaError::Spec("need at least two classes".into()));
        }
        if self.dim < 2 {
            return Err(FridaError::Spec("need feature dim of at least two".into()));
        }
        if self.n_per_class == 0 {
            return Err(FridaError::Spec("n_per_class must be positive".into()));
        }
        if self.shifts.is_empty() {
            return Err(FridaError::Spec(
                "need at least the source domain shift".into(),
            ));
        }
        if self.code_width < usize::BITS as usize && self.shifts.len() > (1usize << self.code_width)
        {
            return Err(FridaError::Spec(format!(
                "{} domains exceed the {}-bit domain code",
                self.shifts.len(),
                self.code_width
            )));
        }
        for (i, s) in self.shifts.iter().enumerate() {
            s.validate(self.dim)
                .map_err(|e| FridaError::Spec(format!("domain {i}: {e}")))?;
        }
        Ok(())
    }
}

/// An orthonormal pair of vectors spanning a rotation plane.
#[derive(Debug, Clone)]
pub struct OrthoPlane {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl OrthoPlane {
    /// Draw a random plane by Gram-Schmidt on two Gaussian vectors.
    pub fn draw(rng: &mut RngStream, dim: usize) -> Self {
        loop {
            let mut u: Vec<f64> = (0..dim).map(|_| rng.next_gauss()).collect();
            let nu = libm::sqrt(u.iter().map(|x| x * x).sum::<f64>());
            if nu < 1e-9 {
                continue;
            }
            for x in u.iter_mut() {
                *x /= nu;
            }
            let mut v: Vec<f64> = (0..dim).map(|_| rng.next_gauss()).collect();
            let dot: f64 = u.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
            for (x, &ux) in v.iter_mut().zip(u.iter()) {
                *x -= dot * ux;
            }
            let nv = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
            if nv < 1e-9 {
                continue;
            }
            for x in v.iter_mut() {
                *x /= nv;
            }
            return OrthoPlane { u, v };
        }
    }

    /// Rotate `x` by `angle` within the plane, leaving the orthogonal
    /// complement untouched.
    pub fn rotate(&self, x: &[f64], angle: f64) -> Vec<f64> {
        let a: f64 = self.u.iter().zip(x.iter()).map(|(u, x)| u * x).sum();
        let b: f64 = self.v.iter().zip(x.iter()).map(|(v, x)| v * x).sum();
        let (sin, cos) = (libm::sin(angle), libm::cos(angle));
        let (ra, rb) = (a * cos - b * sin, a * sin + b * cos);
        x.iter()
            .enumerate()
            .map(|(i, &xi)| xi + (ra - a) * self.u[i] + (rb - b) * self.v[i])
            .collect()
    }
}

/// Draw `class_count` prototypes on the radius-4 sphere with pairwise
/// distance at least 2, by rejection.
pub fn make_prototypes(class_count: usize, dim: usize, rng: &mut RngStream) -> Result<Tensor2> {
    if class_count < 2 || dim < 2 {
        return Err(FridaError::Spec(
            "make_prototypes needs C >= 2 and d >= 2".into(),
        ));
    }
    let mut protos: Vec<Vec<f64>> = Vec::with_capacity(class_count);
    let mut tries = 0usize;
    while protos.len() < class_count {
        tries += 1;
        if tries > PROTO_MAX_TRIES {
            return Err(FridaError::Spec(format!(
                "could not place {class_count} prototypes in {dim} dimensions after \
                 {PROTO_MAX_TRIES} draws; reduce the class count or raise the dim"
            )));
        }
        let mut p: Vec<f64> = (0..dim).map(|_| rng.next_gauss()).collect();
        let norm = libm::sqrt(p.iter().map(|x| x * x).sum::<f64>());
        if norm < 1e-9 {
            continue;
        }
        for x in p.iter_mut() {
            *x *= PROTO_RADIUS / norm;
        }
        let ok = protos.iter().all(|q| {
            let d2: f64 = p.iter().zip(q.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
            d2 >= PROTO_MIN_DIST * PROTO_MIN_DIST
        });
        if ok {
            protos.push(p);
        }
    }
    let mut data = Vec::with_capacity(class_count * dim);
    for p in protos {
        data.extend_from_slice(&p);
    }
    Tensor2::from_vec(class_count, dim, data)
}

/// Sample one domain: class `c` draws from
/// `N(shift(prototype_c), noise_sigma^2 I)`, labels attached.
///
/// The rotation plane is the first thing drawn from `rng`, so callers can
/// reproduce it with `OrthoPlane::draw` on an identically seeded stream.
pub fn make_domain(
    prototypes: &Tensor2,
    shift: &ShiftSpec,
    n_per_class: usize,
    tau: usize,
    code_width: usize,
    rng: &mut RngStream,
) -> Result<FeatureDataset> {
    shift.validate(prototypes.cols())?;
    if n_per_class == 0 {
        return Err(FridaError::Spec("n_per_class must be positive".into()));
    }
    let dim = prototypes.cols();
    let plane = OrthoPlane::draw(rng, dim);
    let class_count = prototypes.rows();
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(class_count);
    for c in 0..class_count {
        let mut m = plane.rotate(prototypes.row(c), shift.rotation_angle);
        for (x, &t) in m.iter_mut().zip(shift.translation.iter()) {
            *x = *x * shift.scale + t;
        }
        means.push(m);
    }
    let n = n_per_class * class_count;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for (c, mean) in means.iter().enumerate() {
        for _ in 0..n_per_class {
            for &m in mean.iter() {
                data.push(m + shift.noise_sigma * rng.next_gauss());
            }
            labels.push(c);
        }
    }
    FeatureDataset::new(
        Tensor2::from_vec(n, dim, data)?,
        Some(labels),
        DomainId::new(tau, code_width)?,
        class_count,
    )
}

/// Generate the full benchmark: source first, then targets in order.
///
/// Every dataset comes back labeled; the harness strips target labels
/// (via [`crate::data::UnlabeledDataset`]) before training and keeps them
/// only for evaluation.
pub fn make_benchmark(spec: &BenchmarkSpec) -> Result<Vec<FeatureDataset>> {
    spec.validate()?;
    let base = RngStream::new(spec.seed);
    let mut proto_rng = base.substream(0x70726f74); // "prot"
    let prototypes = make_prototypes(spec.class_count, spec.dim, &mut proto_rng)?;
    let mut out = Vec::with_capacity(spec.shifts.len());
    for (tau, shift) in spec.shifts.iter().enumerate() {
        let mut domain_rng = base.substream(0x646f6d00 ^ tau as u64); // "dom" ^ tau
        out.push(make_domain(
            &prototypes,
            shift,
            spec.n_per_class,
            tau,
            spec.code_width,
            &mut domain_rng,
        )?);
    }
    Ok(out)
}

/// Nearest-prototype classification accuracy of a labeled dataset against
/// explicit class means. Shared oracle for sanity floors and probes.
pub fn nearest_mean_accuracy(means: &Tensor2, ds: &FeatureDataset) -> Result<f64> {
    let labels = ds
        .labels()
        .ok_or_else(|| FridaError::Contract("nearest_mean_accuracy needs labels".into()))?;
    let mut correct = 0usize;
    for (r, &y) in labels.iter().enumerate() {
        let x = ds.features().row(r);
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for c in 0..means.rows() {
            let m = means.row(c);
            let d2: f64 = x.iter().zip(m.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
            if d2 < best_d {
                best_d = d2;
                best = c;
            }
        }
        if best == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / labels.len() as f64)
}

/// Per-class means of a labeled dataset. Classes with no samples get the
/// zero vector.
pub fn class_means(ds: &FeatureDataset) -> Result<Tensor2> {
    let labels = ds
        .labels()
        .ok_or_else(|| FridaError::Contract("class_means needs labels".into()))?;
    let mut sums = Tensor2::zeros(ds.class_count(), ds.dim());
    let mut counts = vec![0usize; ds.class_count()];
    for (r, &y) in labels.iter().enumerate() {
        counts[y] += 1;
        let row = ds.features().row(r);
        for (c, &v) in row.iter().enumerate() {
            let cur = sums.get(y, c);
            sums.set(y, c, cur + v);
        }
    }
    for (y, &count) in counts.iter().enumerate() {
        if count > 0 {
            for c in 0..ds.dim() {
                let cur = sums.get(y, c);
                sums.set(y, c, cur / count as f64);
            }
        }
    }
    Ok(sums)
}
