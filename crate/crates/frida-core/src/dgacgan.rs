//! DGAC-GAN: the replay memory.
//!
//! A feature GAN conditioned on both class label and domain identifier. The
//! generator maps `[z | one_hot(y) | domain_code(tau)]` to a feature vector;
//! a shared discriminator trunk consumes `[x | domain_code(tau)]` and feeds
//! two heads, one real/fake logit and one C-class auxiliary classifier.
//! Trained incrementally over episodes, it can synthesize labeled feature
//! vectors for every domain it has seen, which is what stands in for the
//! unavailable past data.
//!
//! Losses, as minimized here:
//! - discriminator: binary cross-entropy on real-vs-fake plus class
//!   cross-entropy on real and fake, both averaged over the combined batch;
//! - generator: an adversarial term (non-saturating by default, the literal
//!   saturating form behind a flag), the class term on fakes, and an L2
//!   overlap regularizer pulling each fake toward a real sample with the
//!   same `(tau, y)`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::{encode_domain, one_hot, FeatureDataset};
use crate::error::{FridaError, Result};
use crate::loss::{bce_logits, softmax_xent};
use crate::net::{Activation, DenseNet, NetGrads};
use crate::opt::AdamState;
use crate::rng::{gauss_sample, RngStream};
use crate::tensor::Tensor2;

/// How fakes are matched to real samples for the overlap regularizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairingMode {
    /// Uniformly random same-`(tau, y)` real sample from the batch.
    Uniform,
    /// The mean of the batch's same-`(tau, y)` real samples.
    ClassMean,
}

/// Architecture knobs for [`GanModel::init`].
#[derive(Debug, Clone, PartialEq)]
pub struct GanArch {
    pub z_dim: usize,
    pub gen_hidden: Vec<usize>,
    pub trunk_hidden: Vec<usize>,
}

impl Default for GanArch {
    fn default() -> Self {
        GanArch {
            z_dim: 2000,
            gen_hidden: vec![1024, 1024],
            trunk_hidden: vec![512, 256, 128],
        }
    }
}

/// Training hyperparameters for [`train_gan`].
#[derive(Debug, Clone, PartialEq)]
pub struct GanTrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Use the literal saturating generator objective instead of the
    /// non-saturating default.
    pub saturating: bool,
    pub pairing: PairingMode,
}

impl Default for GanTrainConfig {
    fn default() -> Self {
        GanTrainConfig {
            epochs: 200,
            batch: 64,
            lr: 0.001,
            beta1: 0.5,
            beta2: 0.9,
            saturating: false,
            pairing: PairingMode::Uniform,
        }
    }
}

/// Per-batch (or per-epoch mean) loss terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GanBatchLoss {
    /// Real-as-real plus fake-as-fake binary cross-entropy, mean over the
    /// combined batch.
    pub l_source: f64,
    /// Class cross-entropy on real plus fake, mean over the combined batch.
    pub l_class: f64,
    /// Mean squared distance between fakes and their paired real samples.
    pub r_gan: f64,
    /// Fakes whose `(tau, y)` had no real counterpart in the batch.
    pub unpaired: usize,
}

/// Generator, shared discriminator trunk, and the two heads.
#[derive(Debug, Clone, PartialEq)]
pub struct GanModel {
    pub generator: DenseNet,
    pub trunk: DenseNet,
    pub head_rf: DenseNet,
    pub head_cls: DenseNet,
    z_dim: usize,
    class_count: usize,
    dim: usize,
    code_width: usize,
    trained_through: Option<usize>,
}

impl GanModel {
    /// Random initialization. Generator hiddens are ReLU with an identity
    /// output layer; the trunk is leaky ReLU throughout; heads are single
    /// identity dense layers.
    pub fn init(
        arch: &GanArch,
        class_count: usize,
        dim: usize,
        code_width: usize,
        rng: &mut RngStream,
    ) -> Result<Self> {
        if arch.z_dim == 0 || class_count == 0 || dim == 0 {
            return Err(FridaError::Contract("GAN dims must be positive".into()));
        }
        if arch.gen_hidden.is_empty() || arch.trunk_hidden.is_empty() {
            return Err(FridaError::Contract(
                "GAN needs at least one hidden layer".into(),
            ));
        }
        let mut gen_dims = vec![arch.z_dim + class_count + code_width];
        gen_dims.extend_from_slice(&arch.gen_hidden);
        gen_dims.push(dim);
        let mut gen_acts = vec![Activation::Relu; arch.gen_hidden.len()];
        gen_acts.push(Activation::Identity);
        let generator = DenseNet::init(&gen_dims, &gen_acts, rng)?;

        let mut trunk_dims = vec![dim + code_width];
        trunk_dims.extend_from_slice(&arch.trunk_hidden);
        let trunk_acts = vec![Activation::LeakyRelu; arch.trunk_hidden.len()];
        let trunk = DenseNet::init(&trunk_dims, &trunk_acts, rng)?;

        let trunk_out = *arch.trunk_hidden.last().expect("nonempty");
        let head_rf = DenseNet::init(&[trunk_out, 1], &[Activation::Identity], rng)?;
        let head_cls = DenseNet::init(&[trunk_out, class_count], &[Activation::Identity], rng)?;
        Ok(GanModel {
            generator,
            trunk,
            head_rf,
            head_cls,
            z_dim: arch.z_dim,
            class_count,
            dim,
            code_width,
            trained_through: None,
        })
    }

    /// Rebuild a model from explicit networks (checkpoint restore).
    /// Validates the dimension chain against the stated sizes.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        generator: DenseNet,
        trunk: DenseNet,
        head_rf: DenseNet,
        head_cls: DenseNet,
        z_dim: usize,
        class_count: usize,
        dim: usize,
        code_width: usize,
        trained_through: Option<usize>,
    ) -> Result<Self> {
        let expect = |cond: bool, what: &str| -> Result<()> {
            if cond {
                Ok(())
            } else {
                Err(FridaError::Format(format!(
                    "GAN checkpoint inconsistent: {what}"
                )))
            }
        };
        expect(
            generator.input_dim() == z_dim + class_count + code_width,
            "generator input",
        )?;
        expect(generator.output_dim() == dim, "generator output")?;
        expect(trunk.input_dim() == dim + code_width, "trunk input")?;
        expect(
            head_rf.input_dim() == trunk.output_dim(),
            "real/fake head input",
        )?;
        expect(head_rf.output_dim() == 1, "real/fake head output")?;
        expect(
            head_cls.input_dim() == trunk.output_dim(),
            "class head input",
        )?;
        expect(head_cls.output_dim() == class_count, "class head output")?;
        Ok(GanModel {
            generator,
            trunk,
            head_rf,
            head_cls,
            z_dim,
            class_count,
            dim,
            code_width,
            trained_through,
        })
    }

    pub fn z_dim(&self) -> usize {
        self.z_dim
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn code_width(&self) -> usize {
        self.code_width
    }

    /// Highest domain time stamp this model has been trained on.
    pub fn trained_through(&self) -> Option<usize> {
        self.trained_through
    }

    /// Used by checkpoint restore.
    pub fn set_trained_through(&mut self, tau: Option<usize>) {
        self.trained_through = tau;
    }

    /// All parameter tensors: generator, trunk, head_rf, head_cls.
    pub fn params(&self) -> Vec<&Tensor2> {
        let mut out = self.generator.params();
        out.extend(self.trunk.params());
        out.extend(self.head_rf.params());
        out.extend(self.head_cls.params());
        out
    }

    fn disc_params_mut(&mut self) -> Vec<&mut Tensor2> {
        let mut out = self.trunk.params_mut();
        out.extend(self.head_rf.params_mut());
        out.extend(self.head_cls.params_mut());
        out
    }

    /// Build the generator input `[z | one_hot(y) | code(tau)]`.
    fn gen_input(&self, z: &Tensor2, y: &[usize], tau: usize) -> Result<Tensor2> {
        if z.cols() != self.z_dim {
            return Err(FridaError::Shape {
                context: "gen_forward z",
                expected: (z.rows(), self.z_dim),
                got: (z.rows(), z.cols()),
            });
        }
        if y.len() != z.rows() {
            return Err(FridaError::Contract(
                "one conditioning label per noise row".into(),
            ));
        }
        let code = encode_domain(tau, self.code_width)?;
        let cols = self.z_dim + self.class_count + self.code_width;
        let mut data = Vec::with_capacity(z.rows() * cols);
        for (r, &label) in y.iter().enumerate() {
            data.extend_from_slice(z.row(r));
            data.extend_from_slice(&one_hot(label, self.class_count)?);
            data.extend_from_slice(&code);
        }
        Tensor2::from_vec(z.rows(), cols, data)
    }

    /// Synthesize features for noise `z` conditioned on labels and domain.
    pub fn gen_forward(&self, z: &Tensor2, y: &[usize], tau: usize) -> Result<Tensor2> {
        self.generator.forward(&self.gen_input(z, y, tau)?)
    }

    /// Discriminator pass: trunk on `[x | code(tau)]`, then both heads.
    /// Returns `(rf_logit, cls_logits)`.
    pub fn disc_forward(&self, x: &Tensor2, tau: usize) -> Result<(Tensor2, Tensor2)> {
        if x.cols() != self.dim {
            return Err(FridaError::Shape {
                context: "disc_forward x",
                expected: (x.rows(), self.dim),
                got: (x.rows(), x.cols()),
            });
        }
        let code = encode_domain(tau, self.code_width)?;
        let a = x.hcat(&Tensor2::from_vec(
            x.rows(),
            self.code_width,
            code.iter()
                .cycle()
                .take(x.rows() * self.code_width)
                .cloned()
                .collect(),
        )?)?;
        let h = self.trunk.forward(&a)?;
        Ok((self.head_rf.forward(&h)?, self.head_cls.forward(&h)?))
    }

    fn disc_input(&self, x: &Tensor2, tau: usize) -> Result<Tensor2> {
        let code = encode_domain(tau, self.code_width)?;
        let mut data = Vec::with_capacity(x.rows() * (self.dim + self.code_width));
        for r in 0..x.rows() {
            data.extend_from_slice(x.row(r));
            data.extend_from_slice(&code);
        }
        Tensor2::from_vec(x.rows(), self.dim + self.code_width, data)
    }
}

/// Pairing of fake rows to real targets for the overlap regularizer.
#[derive(Debug, Clone)]
pub struct PairingPlan {
    /// Per fake row: the real feature vector to match, when one exists.
    pub targets: Vec<Option<Vec<f64>>>,
    pub unpaired: usize,
}

/// Build a pairing plan within a batch. Fakes whose `(tau, y)` has no real
/// counterpart are left unpaired and counted.
pub fn pair_fakes(
    real: &FeatureDataset,
    y_fake: &[usize],
    tau_fake: usize,
    mode: PairingMode,
    rng: &mut RngStream,
) -> Result<PairingPlan> {
    let labels = real
        .labels()
        .ok_or_else(|| FridaError::Contract("pairing requires a labeled real batch".into()))?;
    let same_domain = real.domain().tau() == tau_fake;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); real.class_count()];
    if same_domain {
        for (i, &y) in labels.iter().enumerate() {
            by_class[y].push(i);
        }
    }
    let mut targets = Vec::with_capacity(y_fake.len());
    let mut unpaired = 0usize;
    for &y in y_fake {
        if y >= real.class_count() {
            return Err(FridaError::Index {
                context: "pair_fakes label",
                index: y,
                bound: real.class_count(),
            });
        }
        let candidates = &by_class[y];
        if candidates.is_empty() {
            unpaired += 1;
            targets.push(None);
            continue;
        }
        match mode {
            PairingMode::Uniform => {
                let pick = candidates[rng.next_index(candidates.len())];
                targets.push(Some(real.features().row(pick).to_vec()));
            }
            PairingMode::ClassMean => {
                let mut mean = vec![0.0; real.dim()];
                for &i in candidates {
                    for (m, v) in mean.iter_mut().zip(real.features().row(i).iter()) {
                        *m += v;
                    }
                }
                for m in mean.iter_mut() {
                    *m /= candidates.len() as f64;
                }
                targets.push(Some(mean));
            }
        }
    }
    Ok(PairingPlan { targets, unpaired })
}

/// Mean squared distance between fakes and their paired targets, with the
/// gradient w.r.t. the fakes. Unpaired fakes are excluded from the mean.
fn overlap_term(fake: &Tensor2, plan: &PairingPlan) -> (f64, Tensor2) {
    let paired = plan.targets.iter().filter(|t| t.is_some()).count();
    let mut grad = Tensor2::zeros(fake.rows(), fake.cols());
    if paired == 0 {
        return (0.0, grad);
    }
    let mut total = 0.0;
    for (i, target) in plan.targets.iter().enumerate() {
        if let Some(t) = target {
            let row = fake.row(i);
            let mut d2 = 0.0;
            for (j, (&f, &x)) in row.iter().zip(t.iter()).enumerate() {
                let diff = f - x;
                d2 += diff * diff;
                grad.set(i, j, 2.0 * diff / paired as f64);
            }
            total += d2;
        }
    }
    (total / paired as f64, grad)
}

/// Evaluate the three loss terms on a real batch plus a generated batch.
///
/// `l_source` and `l_class` are the discriminator-side quantities (means over
/// the combined real+fake batch); `r_gan` pairs each fake with a same-
/// `(tau, y)` real sample per `mode`.
pub fn gan_losses(
    model: &GanModel,
    real: &FeatureDataset,
    z: &Tensor2,
    y_fake: &[usize],
    tau_fake: usize,
    mode: PairingMode,
    rng: &mut RngStream,
) -> Result<GanBatchLoss> {
    let labels = real
        .labels()
        .ok_or_else(|| FridaError::Contract("gan_losses requires a labeled real batch".into()))?;
    if real.n() == 0 || z.rows() == 0 {
        return Err(FridaError::Contract(
            "gan_losses requires non-empty batches".into(),
        ));
    }
    let fake = model.gen_forward(z, y_fake, tau_fake)?;
    let (rf_r, cls_r) = model.disc_forward(real.features(), real.domain().tau())?;
    let (rf_f, cls_f) = model.disc_forward(&fake, tau_fake)?;
    let rf_all = rf_r.vcat(&rf_f)?;
    let mut bce_targets = vec![1.0; real.n()];
    bce_targets.extend(core::iter::repeat_n(0.0, fake.rows()));
    let (l_source, _) = bce_logits(&rf_all, &bce_targets)?;
    let cls_all = cls_r.vcat(&cls_f)?;
    let mut cls_targets = labels.to_vec();
    cls_targets.extend_from_slice(y_fake);
    let (l_class, _) = softmax_xent(&cls_all, &cls_targets)?;
    let plan = pair_fakes(real, y_fake, tau_fake, mode, rng)?;
    let (r_gan, _) = overlap_term(&fake, &plan);
    Ok(GanBatchLoss {
        l_source,
        l_class,
        r_gan,
        unpaired: plan.unpaired,
    })
}

/// Discriminator gradients on one batch (generator output treated as
/// constant). Returns the loss terms and gradients for trunk and heads.
pub fn disc_grads(
    model: &GanModel,
    real_x: &Tensor2,
    real_y: &[usize],
    tau_real: usize,
    fake_x: &Tensor2,
    y_fake: &[usize],
    tau_fake: usize,
) -> Result<(GanBatchLoss, NetGrads, NetGrads, NetGrads)> {
    let n_r = real_x.rows();
    let n_f = fake_x.rows();
    let n_all = (n_r + n_f) as f64;

    let a_r = model.disc_input(real_x, tau_real)?;
    let a_f = model.disc_input(fake_x, tau_fake)?;
    let cache_tr = model.trunk.forward_cached(&a_r)?;
    let cache_tf = model.trunk.forward_cached(&a_f)?;
    let cache_rf_r = model.head_rf.forward_cached(cache_tr.output())?;
    let cache_rf_f = model.head_rf.forward_cached(cache_tf.output())?;
    let cache_cls_r = model.head_cls.forward_cached(cache_tr.output())?;
    let cache_cls_f = model.head_cls.forward_cached(cache_tf.output())?;

    // real/fake head: targets 1 for real, 0 for fake, mean over the union
    let (bce_r, mut g_rf_r) = bce_logits(cache_rf_r.output(), &vec![1.0; n_r])?;
    let (bce_f, mut g_rf_f) = bce_logits(cache_rf_f.output(), &vec![0.0; n_f])?;
    g_rf_r.scale(n_r as f64 / n_all);
    g_rf_f.scale(n_f as f64 / n_all);
    let l_source = (bce_r * n_r as f64 + bce_f * n_f as f64) / n_all;

    // class head: conditioning labels on both halves
    let (ce_r, mut g_cls_r) = softmax_xent(cache_cls_r.output(), real_y)?;
    let (ce_f, mut g_cls_f) = softmax_xent(cache_cls_f.output(), y_fake)?;
    g_cls_r.scale(n_r as f64 / n_all);
    g_cls_f.scale(n_f as f64 / n_all);
    let l_class = (ce_r * n_r as f64 + ce_f * n_f as f64) / n_all;

    let (rf_grads_r, dh_rf_r) = model.head_rf.backward(&cache_rf_r, &g_rf_r)?;
    let (rf_grads_f, dh_rf_f) = model.head_rf.backward(&cache_rf_f, &g_rf_f)?;
    let (cls_grads_r, dh_cls_r) = model.head_cls.backward(&cache_cls_r, &g_cls_r)?;
    let (cls_grads_f, dh_cls_f) = model.head_cls.backward(&cache_cls_f, &g_cls_f)?;

    let mut rf_grads = rf_grads_r;
    rf_grads.add_assign(&rf_grads_f)?;
    let mut cls_grads = cls_grads_r;
    cls_grads.add_assign(&cls_grads_f)?;

    let mut dh_r = dh_rf_r;
    dh_r.add_assign(&dh_cls_r)?;
    let mut dh_f = dh_rf_f;
    dh_f.add_assign(&dh_cls_f)?;
    let (trunk_grads_r, _) = model.trunk.backward(&cache_tr, &dh_r)?;
    let (trunk_grads_f, _) = model.trunk.backward(&cache_tf, &dh_f)?;
    let mut trunk_grads = trunk_grads_r;
    trunk_grads.add_assign(&trunk_grads_f)?;

    Ok((
        GanBatchLoss {
            l_source,
            l_class,
            r_gan: 0.0,
            unpaired: 0,
        },
        trunk_grads,
        rf_grads,
        cls_grads,
    ))
}

/// Generator loss value and gradients on one batch.
///
/// The generator minimizes `adv + class + overlap`, where `adv` is
/// `-log sigma(rf(fake))` by default or the literal `log(1 - sigma(rf(fake)))`
/// when `saturating` is set.
pub fn gen_grads(
    model: &GanModel,
    z: &Tensor2,
    y_fake: &[usize],
    tau_fake: usize,
    plan: &PairingPlan,
    saturating: bool,
) -> Result<(f64, f64, f64, NetGrads)> {
    let input = model.gen_input(z, y_fake, tau_fake)?;
    let cache_g = model.generator.forward_cached(&input)?;
    let fake = cache_g.output();

    let a_f = model.disc_input(fake, tau_fake)?;
    let cache_t = model.trunk.forward_cached(&a_f)?;
    let cache_rf = model.head_rf.forward_cached(cache_t.output())?;
    let cache_cls = model.head_cls.forward_cached(cache_t.output())?;

    let n_f = fake.rows();
    let (adv, g_rf) = if saturating {
        // minimize log(1 - sigma(r)); gradient is the negated bce-to-zero one
        let (l, mut g) = bce_logits(cache_rf.output(), &vec![0.0; n_f])?;
        g.scale(-1.0);
        (-l, g)
    } else {
        bce_logits(cache_rf.output(), &vec![1.0; n_f])?
    };
    let (ce_fake, g_cls) = softmax_xent(cache_cls.output(), y_fake)?;

    let (_, dh_rf) = model.head_rf.backward(&cache_rf, &g_rf)?;
    let (_, dh_cls) = model.head_cls.backward(&cache_cls, &g_cls)?;
    let mut dh = dh_rf;
    dh.add_assign(&dh_cls)?;
    let (_, da) = model.trunk.backward(&cache_t, &dh)?;
    let mut d_fake = da.col_slice(0, model.dim);

    let (r_gan, overlap_grad) = overlap_term(fake, plan);
    d_fake.add_assign(&overlap_grad)?;

    let (gen_g, _) = model.generator.backward(&cache_g, &d_fake)?;
    Ok((adv, ce_fake, r_gan, gen_g))
}

fn check_coverage(real_data: &[&FeatureDataset]) -> Result<()> {
    if real_data.is_empty() {
        return Err(FridaError::Contract(
            "train_gan needs at least one domain".into(),
        ));
    }
    let dim = real_data[0].dim();
    let c = real_data[0].class_count();
    for ds in real_data {
        if ds.dim() != dim || ds.class_count() != c {
            return Err(FridaError::Contract(
                "train_gan datasets disagree on dim/classes".into(),
            ));
        }
        let hist = ds
            .class_histogram()
            .ok_or_else(|| FridaError::Contract("train_gan requires labeled data".into()))?;
        for (class, &count) in hist.iter().enumerate() {
            if count == 0 {
                return Err(FridaError::Contract(format!(
                    "domain {} has no samples of class {class}",
                    ds.domain().tau()
                )));
            }
        }
    }
    Ok(())
}

/// Train the GAN on a collection of labeled per-domain datasets.
///
/// Alternates one discriminator step and one generator step per batch;
/// batches round-robin across domains each epoch. Returns per-epoch mean
/// losses. Aborts with the epoch index if any loss turns non-finite.
pub fn train_gan(
    model: &mut GanModel,
    real_data: &[&FeatureDataset],
    cfg: &GanTrainConfig,
    rng: &mut RngStream,
) -> Result<Vec<GanBatchLoss>> {
    check_coverage(real_data)?;
    if cfg.batch == 0 || cfg.epochs == 0 {
        return Err(FridaError::Contract(
            "train_gan needs positive epochs and batch".into(),
        ));
    }
    for ds in real_data {
        if ds.dim() != model.dim || ds.class_count() != model.class_count {
            return Err(FridaError::Contract(
                "dataset does not match the GAN's dims".into(),
            ));
        }
        // fail early instead of mid-epoch
        encode_domain(ds.domain().tau(), model.code_width)?;
    }

    let mut gen_adam = AdamState::new(&model.generator.params(), cfg.lr, cfg.beta1, cfg.beta2)?;
    let mut disc_adam = {
        let mut refs = model.trunk.params();
        refs.extend(model.head_rf.params());
        refs.extend(model.head_cls.params());
        AdamState::new(&refs, cfg.lr, cfg.beta1, cfg.beta2)?
    };

    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        // per-domain shuffled batch schedules, interleaved round-robin
        let mut schedules: Vec<Vec<usize>> = Vec::with_capacity(real_data.len());
        for ds in real_data {
            let mut idx: Vec<usize> = (0..ds.n()).collect();
            rng.shuffle(&mut idx);
            schedules.push(idx);
        }
        let max_batches = schedules
            .iter()
            .map(|s| s.len().div_ceil(cfg.batch))
            .max()
            .unwrap_or(0);

        let mut sums = (0.0f64, 0.0f64, 0.0f64);
        let mut unpaired = 0usize;
        let mut batches = 0usize;
        for b in 0..max_batches {
            for (dom, ds) in real_data.iter().enumerate() {
                let sched = &schedules[dom];
                let lo = b * cfg.batch;
                if lo >= sched.len() {
                    continue;
                }
                let hi = (lo + cfg.batch).min(sched.len());
                let rows = &sched[lo..hi];
                let real_x = ds.features().select_rows(rows);
                let labels = ds.labels().expect("validated");
                let real_y: Vec<usize> = rows.iter().map(|&i| labels[i]).collect();
                let tau = ds.domain().tau();

                // discriminator step on a fresh fake batch
                let z1 = gauss_sample(rng, rows.len(), model.z_dim);
                let fake = model.gen_forward(&z1, &real_y, tau)?;
                let (loss, trunk_g, rf_g, cls_g) =
                    disc_grads(model, &real_x, &real_y, tau, &fake, &real_y, tau)?;
                if !loss.l_source.is_finite() || !loss.l_class.is_finite() {
                    return Err(FridaError::Contract(format!(
                        "GAN training diverged: non-finite discriminator loss at epoch {epoch}"
                    )));
                }
                {
                    let grads: Vec<&Tensor2> = trunk_g
                        .tensors()
                        .into_iter()
                        .chain(rf_g.tensors())
                        .chain(cls_g.tensors())
                        .collect();
                    disc_adam.step(&mut model.disc_params_mut(), &grads)?;
                }

                // generator step
                let z2 = gauss_sample(rng, rows.len(), model.z_dim);
                let batch_real = ds.select(rows)?;
                let plan = pair_fakes(&batch_real, &real_y, tau, cfg.pairing, rng)?;
                let (adv, ce_fake, r_gan, gen_g) =
                    gen_grads(model, &z2, &real_y, tau, &plan, cfg.saturating)?;
                if !adv.is_finite() || !ce_fake.is_finite() || !r_gan.is_finite() {
                    return Err(FridaError::Contract(format!(
                        "GAN training diverged: non-finite generator loss at epoch {epoch}"
                    )));
                }
                gen_adam.step(&mut model.generator.params_mut(), &gen_g.tensors())?;

                sums.0 += loss.l_source;
                sums.1 += loss.l_class;
                sums.2 += r_gan;
                unpaired += plan.unpaired;
                batches += 1;
            }
        }
        let denom = batches.max(1) as f64;
        history.push(GanBatchLoss {
            l_source: sums.0 / denom,
            l_class: sums.1 / denom,
            r_gan: sums.2 / denom,
            unpaired,
        });
    }
    let max_tau = real_data
        .iter()
        .map(|d| d.domain().tau())
        .max()
        .unwrap_or(0);
    model.trained_through = Some(match model.trained_through {
        Some(t) => t.max(max_tau),
        None => max_tau,
    });
    Ok(history)
}

/// Draw `per_class` labeled synthetic samples for every class of domain
/// `tau`. Labels are the conditioning labels; rows are grouped by class.
pub fn sample_features(
    model: &GanModel,
    tau: usize,
    per_class: usize,
    rng: &mut RngStream,
) -> Result<FeatureDataset> {
    if per_class == 0 {
        return Err(FridaError::Contract("per_class must be positive".into()));
    }
    match model.trained_through {
        Some(t) if tau <= t => {}
        _ => {
            return Err(FridaError::Contract(format!(
                "cannot sample domain {tau}: model trained through {:?}",
                model.trained_through
            )))
        }
    }
    let n = per_class * model.class_count;
    let z = gauss_sample(rng, n, model.z_dim);
    let labels: Vec<usize> = (0..model.class_count)
        .flat_map(|c| core::iter::repeat_n(c, per_class))
        .collect();
    let features = model.gen_forward(&z, &labels, tau)?;
    FeatureDataset::new(
        features,
        Some(labels),
        crate::data::DomainId::new(tau, model.code_width)?,
        model.class_count,
    )
}
