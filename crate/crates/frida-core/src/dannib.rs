//! DANN-IB: the adaptation solver, plus plain-DANN ablation modes and
//! threshold pseudo-labeling.
//!
//! A stochastic encoder maps features to a Gaussian latent (mean and
//! log-variance); a C-class task head classifies source latents; a domain
//! head is trained adversarially against the encoder. Three modes:
//!
//! - `Binary`: 2-class source-vs-target domain head, deterministic encoding,
//!   no bottleneck term (the classic plain-adversarial objective);
//! - `Multiclass`: (C+1)-class domain head where source samples keep their
//!   class label and target samples get the extra index, still deterministic;
//! - `Ib`: the multiclass head plus reparameterized sampling and a KL
//!   regularizer pulling the latent toward the standard normal.
//!
//! The min-max is realized in a single backward pass: the domain head
//! receives plain minimizing gradients while the encoder receives the domain
//! gradients sign-flipped and scaled by the schedule weight, so the encoder
//! descends `l_task - lambda * l_dom + beta * r_ib`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::{FeatureDataset, UnlabeledDataset};
use crate::error::{FridaError, Result};
use crate::loss::{argmax_rows, softmax, softmax_xent};
use crate::net::{Activation, DenseNet, NetGrads};
use crate::opt::AdamState;
use crate::rng::{gauss_sample, RngStream};
use crate::tensor::Tensor2;

/// Discriminator flavour and bottleneck switch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DannMode {
    Binary,
    Multiclass,
    Ib,
}

impl DannMode {
    /// Width of the domain head for a C-class problem.
    pub fn domain_head_width(self, class_count: usize) -> usize {
        match self {
            DannMode::Binary => 2,
            DannMode::Multiclass | DannMode::Ib => class_count + 1,
        }
    }

    pub fn stochastic(self) -> bool {
        matches!(self, DannMode::Ib)
    }
}

/// Architecture knobs for [`DannIbModel::init`].
#[derive(Debug, Clone, PartialEq)]
pub struct DannArch {
    pub latent_dim: usize,
    pub enc_hidden: Vec<usize>,
}

impl Default for DannArch {
    fn default() -> Self {
        DannArch {
            latent_dim: 256,
            enc_hidden: vec![512, 512],
        }
    }
}

/// Training hyperparameters for [`train_dannib`].
#[derive(Debug, Clone, PartialEq)]
pub struct DannTrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Weight on the bottleneck KL term (`Ib` mode only).
    pub beta_ib: f64,
}

impl Default for DannTrainConfig {
    fn default() -> Self {
        DannTrainConfig {
            epochs: 200,
            batch: 64,
            lr: 0.001,
            beta1: 0.5,
            beta2: 0.9,
            beta_ib: 0.01,
        }
    }
}

/// Loss breakdown for one batch or one epoch mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DannLossReport {
    pub l_task: f64,
    pub l_dom: f64,
    /// Raw KL value in `Ib` mode, 0 otherwise.
    pub r_ib: f64,
    pub lambda: f64,
    /// `l_task - lambda * l_dom + beta * r_ib`.
    pub total: f64,
}

/// Encoder plus the two heads.
#[derive(Debug, Clone, PartialEq)]
pub struct DannIbModel {
    pub encoder: DenseNet,
    pub head_task: DenseNet,
    pub head_dom: DenseNet,
    latent_dim: usize,
    class_count: usize,
    dim: usize,
    mode: DannMode,
}

impl DannIbModel {
    /// Random initialization. The encoder ends in an identity layer of width
    /// `2 * latent_dim`, read as `[mean | log-variance]`.
    pub fn init(
        arch: &DannArch,
        mode: DannMode,
        class_count: usize,
        dim: usize,
        rng: &mut RngStream,
    ) -> Result<Self> {
        if arch.latent_dim == 0 || class_count == 0 || dim == 0 {
            return Err(FridaError::Contract("DANN dims must be positive".into()));
        }
        let mut enc_dims = vec![dim];
        enc_dims.extend_from_slice(&arch.enc_hidden);
        enc_dims.push(2 * arch.latent_dim);
        let mut enc_acts = vec![Activation::Relu; arch.enc_hidden.len()];
        enc_acts.push(Activation::Identity);
        let mut encoder = DenseNet::init(&enc_dims, &enc_acts, rng)?;
        // start the latent nearly deterministic: log-variance bias at -4
        // keeps early reparameterization noise from drowning the task signal
        let last = enc_acts.len() - 1;
        if let Some(layer) = encoder.layer_mut(last) {
            for c in arch.latent_dim..2 * arch.latent_dim {
                layer.b.set(0, c, -4.0);
            }
        }
        let head_task = DenseNet::init(
            &[arch.latent_dim, class_count],
            &[Activation::Identity],
            rng,
        )?;
        let head_dom = DenseNet::init(
            &[arch.latent_dim, mode.domain_head_width(class_count)],
            &[Activation::Identity],
            rng,
        )?;
        Ok(DannIbModel {
            encoder,
            head_task,
            head_dom,
            latent_dim: arch.latent_dim,
            class_count,
            dim,
            mode,
        })
    }

    /// Rebuild a model from explicit networks (checkpoint restore).
    pub fn from_parts(
        encoder: DenseNet,
        head_task: DenseNet,
        head_dom: DenseNet,
        latent_dim: usize,
        class_count: usize,
        dim: usize,
        mode: DannMode,
    ) -> Result<Self> {
        let expect = |cond: bool, what: &str| -> Result<()> {
            if cond {
                Ok(())
            } else {
                Err(FridaError::Format(format!(
                    "DANN checkpoint inconsistent: {what}"
                )))
            }
        };
        expect(encoder.input_dim() == dim, "encoder input")?;
        expect(encoder.output_dim() == 2 * latent_dim, "encoder output")?;
        expect(head_task.input_dim() == latent_dim, "task head input")?;
        expect(head_task.output_dim() == class_count, "task head output")?;
        expect(head_dom.input_dim() == latent_dim, "domain head input")?;
        expect(
            head_dom.output_dim() == mode.domain_head_width(class_count),
            "domain head output",
        )?;
        Ok(DannIbModel {
            encoder,
            head_task,
            head_dom,
            latent_dim,
            class_count,
            dim,
            mode,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mode(&self) -> DannMode {
        self.mode
    }

    pub fn params(&self) -> Vec<&Tensor2> {
        let mut out = self.encoder.params();
        out.extend(self.head_task.params());
        out.extend(self.head_dom.params());
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor2> {
        let mut out = self.encoder.params_mut();
        out.extend(self.head_task.params_mut());
        out.extend(self.head_dom.params_mut());
        out
    }

    fn split_encoding(&self, out: &Tensor2) -> (Tensor2, Tensor2) {
        (
            out.col_slice(0, self.latent_dim),
            out.col_slice(self.latent_dim, 2 * self.latent_dim),
        )
    }
}

/// Encode a batch: returns `(mu, logvar, sample)`.
///
/// With `stochastic` set the sample is `mu + exp(logvar/2) .* eps` with
/// fresh standard-normal `eps` from the stream; otherwise it is `mu`.
pub fn encode(
    model: &DannIbModel,
    x: &Tensor2,
    rng: &mut RngStream,
    stochastic: bool,
) -> Result<(Tensor2, Tensor2, Tensor2)> {
    let out = model.encoder.forward(x)?;
    if !out.all_finite() {
        return Err(FridaError::NonFinite {
            context: "encoder output",
        });
    }
    let (mu, logvar) = model.split_encoding(&out);
    let sample = if stochastic {
        let eps = gauss_sample(rng, mu.rows(), mu.cols());
        let mut s = mu.clone();
        for i in 0..s.data().len() {
            s.data_mut()[i] += libm::exp(0.5 * logvar.data()[i]) * eps.data()[i];
        }
        s
    } else {
        mu.clone()
    };
    Ok((mu, logvar, sample))
}

/// Mean KL divergence from `N(mu, diag(exp(logvar)))` to the standard
/// normal: `mean over rows of 0.5 * sum_j (exp(lv) + mu^2 - 1 - lv)`.
pub fn kl_regularizer(mu: &Tensor2, logvar: &Tensor2) -> Result<f64> {
    if mu.rows() != logvar.rows() || mu.cols() != logvar.cols() {
        return Err(FridaError::Shape {
            context: "kl_regularizer",
            expected: (mu.rows(), mu.cols()),
            got: (logvar.rows(), logvar.cols()),
        });
    }
    let mut total = 0.0;
    for (m, lv) in mu.data().iter().zip(logvar.data().iter()) {
        total += 0.5 * (libm::exp(*lv) + m * m - 1.0 - lv);
    }
    Ok(total / mu.rows() as f64)
}

/// Adaptive trade-off schedule: `2 / (1 + exp(-10 p)) - 1` for progress
/// `p` clamped into [0, 1]. Starts at 0, saturates toward 1.
pub fn lambda_schedule(progress: f64) -> f64 {
    let p = progress.clamp(0.0, 1.0);
    2.0 / (1.0 + libm::exp(-10.0 * p)) - 1.0
}

/// Gradients for the three parameter groups.
#[derive(Debug, Clone)]
pub struct DannGrads {
    pub encoder: NetGrads,
    pub head_task: NetGrads,
    pub head_dom: NetGrads,
}

/// One batch of the adversarial objective, with gradients.
///
/// `l_task` is the task-head cross-entropy on source latents; `l_dom` is the
/// domain-head cross-entropy over the combined source+target batch (labels
/// per mode); `r_ib` is the bottleneck KL (sum of the per-batch means) in
/// `Ib` mode. The domain head's gradients minimize `l_dom`; the encoder's
/// gradients descend `l_task - lambda * l_dom + beta * r_ib`.
pub fn dannib_loss(
    model: &DannIbModel,
    src_x: &Tensor2,
    src_y: &[usize],
    tgt_x: &Tensor2,
    lambda: f64,
    beta: f64,
    rng: &mut RngStream,
) -> Result<(DannLossReport, DannGrads)> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(FridaError::Contract(format!(
            "lambda must lie in [0, 1], got {lambda}"
        )));
    }
    if src_x.rows() == 0 || tgt_x.rows() == 0 {
        return Err(FridaError::Contract(
            "dannib_loss requires non-empty batches".into(),
        ));
    }
    if src_y.len() != src_x.rows() {
        return Err(FridaError::Contract(
            "one source label per source row required".into(),
        ));
    }
    let stochastic = model.mode.stochastic();
    let n_s = src_x.rows();
    let n_t = tgt_x.rows();

    let cache_es = model.encoder.forward_cached(src_x)?;
    let cache_et = model.encoder.forward_cached(tgt_x)?;
    if !cache_es.output().all_finite() || !cache_et.output().all_finite() {
        return Err(FridaError::NonFinite {
            context: "encoder output",
        });
    }
    let (mu_s, lv_s) = model.split_encoding(cache_es.output());
    let (mu_t, lv_t) = model.split_encoding(cache_et.output());

    let (eps_s, eps_t) = if stochastic {
        (
            Some(gauss_sample(rng, n_s, model.latent_dim)),
            Some(gauss_sample(rng, n_t, model.latent_dim)),
        )
    } else {
        (None, None)
    };
    let sample_of = |mu: &Tensor2, lv: &Tensor2, eps: &Option<Tensor2>| -> Tensor2 {
        match eps {
            Some(e) => {
                let mut s = mu.clone();
                for i in 0..s.data().len() {
                    s.data_mut()[i] += libm::exp(0.5 * lv.data()[i]) * e.data()[i];
                }
                s
            }
            None => mu.clone(),
        }
    };
    let s_s = sample_of(&mu_s, &lv_s, &eps_s);
    let s_t = sample_of(&mu_t, &lv_t, &eps_t);

    // task head on source latents
    let cache_task = model.head_task.forward_cached(&s_s)?;
    let (l_task, g_task_logits) = softmax_xent(cache_task.output(), src_y)?;
    let (task_grads, d_s_task) = model.head_task.backward(&cache_task, &g_task_logits)?;

    // domain head on the combined batch
    let dom_labels: Vec<usize> = match model.mode {
        DannMode::Binary => {
            let mut l = vec![0usize; n_s];
            l.extend(core::iter::repeat_n(1usize, n_t));
            l
        }
        DannMode::Multiclass | DannMode::Ib => {
            let mut l = src_y.to_vec();
            l.extend(core::iter::repeat_n(model.class_count, n_t));
            l
        }
    };
    let cache_dom_s = model.head_dom.forward_cached(&s_s)?;
    let cache_dom_t = model.head_dom.forward_cached(&s_t)?;
    let logits_union = cache_dom_s.output().vcat(cache_dom_t.output())?;
    let (l_dom, g_dom_union) = softmax_xent(&logits_union, &dom_labels)?;
    let g_dom_s = g_dom_union.select_rows(&(0..n_s).collect::<Vec<_>>());
    let g_dom_t = g_dom_union.select_rows(&(n_s..n_s + n_t).collect::<Vec<_>>());
    let (dom_grads_s, d_s_dom_s) = model.head_dom.backward(&cache_dom_s, &g_dom_s)?;
    let (dom_grads_t, d_s_dom_t) = model.head_dom.backward(&cache_dom_t, &g_dom_t)?;
    let mut dom_grads = dom_grads_s;
    dom_grads.add_assign(&dom_grads_t)?;

    // bottleneck term
    let r_ib = if stochastic {
        kl_regularizer(&mu_s, &lv_s)? + kl_regularizer(&mu_t, &lv_t)?
    } else {
        0.0
    };

    // assemble latent gradients: task pull, reversed domain push
    let mut d_s_src = d_s_task;
    {
        let mut rev = d_s_dom_s;
        rev.scale(-lambda);
        d_s_src.add_assign(&rev)?;
    }
    let mut d_s_tgt = d_s_dom_t;
    d_s_tgt.scale(-lambda);

    // back through the reparameterization into [mu | logvar]
    let enc_grad_for = |d_sample: &Tensor2,
                        mu: &Tensor2,
                        lv: &Tensor2,
                        eps: &Option<Tensor2>,
                        n: usize|
     -> Result<Tensor2> {
        let l = model.latent_dim;
        let mut d_out = Tensor2::zeros(d_sample.rows(), 2 * l);
        for r in 0..d_sample.rows() {
            for c in 0..l {
                let ds = d_sample.get(r, c);
                // d sample / d mu = 1
                let mut dmu = ds;
                let mut dlv = match eps {
                    Some(e) => ds * 0.5 * libm::exp(0.5 * lv.get(r, c)) * e.get(r, c),
                    None => 0.0,
                };
                if stochastic && beta != 0.0 {
                    dmu += beta * mu.get(r, c) / n as f64;
                    dlv += beta * 0.5 * (libm::exp(lv.get(r, c)) - 1.0) / n as f64;
                }
                d_out.set(r, c, dmu);
                d_out.set(r, l + c, dlv);
            }
        }
        Ok(d_out)
    };
    let d_out_s = enc_grad_for(&d_s_src, &mu_s, &lv_s, &eps_s, n_s)?;
    let d_out_t = enc_grad_for(&d_s_tgt, &mu_t, &lv_t, &eps_t, n_t)?;
    let (enc_grads_s, _) = model.encoder.backward(&cache_es, &d_out_s)?;
    let (enc_grads_t, _) = model.encoder.backward(&cache_et, &d_out_t)?;
    let mut enc_grads = enc_grads_s;
    enc_grads.add_assign(&enc_grads_t)?;

    let total = l_task - lambda * l_dom + if stochastic { beta * r_ib } else { 0.0 };
    if !total.is_finite() {
        return Err(FridaError::NonFinite {
            context: "dannib_loss total",
        });
    }
    Ok((
        DannLossReport {
            l_task,
            l_dom,
            r_ib,
            lambda,
            total,
        },
        DannGrads {
            encoder: enc_grads,
            head_task: task_grads,
            head_dom: dom_grads,
        },
    ))
}

/// Train on a labeled source and an unlabeled target.
///
/// Epoch `e` of `E` uses `lambda = lambda_schedule(e / E)`. Returns the
/// per-epoch mean loss reports. Aborts with the epoch index if the loss
/// turns non-finite.
pub fn train_dannib(
    model: &mut DannIbModel,
    src: &FeatureDataset,
    tgt: &UnlabeledDataset,
    cfg: &DannTrainConfig,
    rng: &mut RngStream,
) -> Result<Vec<DannLossReport>> {
    let src_labels = src
        .labels()
        .ok_or_else(|| FridaError::Contract("train_dannib requires a labeled source".into()))?;
    if src.dim() != model.dim || tgt.dataset().dim() != model.dim {
        return Err(FridaError::Contract(
            "dataset dim does not match the model".into(),
        ));
    }
    if src.class_count() != model.class_count {
        return Err(FridaError::Contract(
            "class count does not match the model".into(),
        ));
    }
    if cfg.epochs == 0 || cfg.batch == 0 {
        return Err(FridaError::Contract(
            "train_dannib needs positive epochs and batch".into(),
        ));
    }
    let mut adam = AdamState::new(&model.params(), cfg.lr, cfg.beta1, cfg.beta2)?;
    let n_s = src.n();
    let n_t = tgt.n();
    let steps = n_s.max(n_t).div_ceil(cfg.batch);

    let mut src_order: Vec<usize> = (0..n_s).collect();
    let mut tgt_order: Vec<usize> = (0..n_t).collect();
    let mut src_pos = n_s; // force an initial shuffle
    let mut tgt_pos = n_t;
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lambda = lambda_schedule(epoch as f64 / cfg.epochs as f64);
        let mut sums = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for _ in 0..steps {
            let src_rows = next_batch(&mut src_order, &mut src_pos, cfg.batch, rng);
            let tgt_rows = next_batch(&mut tgt_order, &mut tgt_pos, cfg.batch, rng);
            let sx = src.features().select_rows(&src_rows);
            let sy: Vec<usize> = src_rows.iter().map(|&i| src_labels[i]).collect();
            let tx = tgt.features().select_rows(&tgt_rows);
            let (report, grads) = dannib_loss(model, &sx, &sy, &tx, lambda, cfg.beta_ib, rng)?;
            if !report.total.is_finite() {
                return Err(FridaError::Contract(format!(
                    "DANN training diverged: non-finite loss at epoch {epoch}"
                )));
            }
            let flat: Vec<&Tensor2> = grads
                .encoder
                .tensors()
                .into_iter()
                .chain(grads.head_task.tensors())
                .chain(grads.head_dom.tensors())
                .collect();
            adam.step(&mut model.params_mut(), &flat)?;
            sums.0 += report.l_task;
            sums.1 += report.l_dom;
            sums.2 += report.r_ib;
            sums.3 += report.total;
        }
        let d = steps.max(1) as f64;
        history.push(DannLossReport {
            l_task: sums.0 / d,
            l_dom: sums.1 / d,
            r_ib: sums.2 / d,
            lambda,
            total: sums.3 / d,
        });
    }
    Ok(history)
}

/// Supervised training of encoder and task head only (no target domain).
/// Used for the time-0 classifier of the no-replay ablation.
pub fn train_supervised(
    model: &mut DannIbModel,
    src: &FeatureDataset,
    cfg: &DannTrainConfig,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    let labels = src
        .labels()
        .ok_or_else(|| FridaError::Contract("train_supervised requires labels".into()))?;
    if src.dim() != model.dim {
        return Err(FridaError::Contract(
            "dataset dim does not match the model".into(),
        ));
    }
    let mut params: Vec<&Tensor2> = model.encoder.params();
    params.extend(model.head_task.params());
    let mut adam = AdamState::new(&params, cfg.lr, cfg.beta1, cfg.beta2)?;
    drop(params);
    let mut order: Vec<usize> = (0..src.n()).collect();
    let mut pos = src.n();
    let steps = src.n().div_ceil(cfg.batch);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut sum = 0.0;
        for _ in 0..steps {
            let rows = next_batch(&mut order, &mut pos, cfg.batch, rng);
            let x = src.features().select_rows(&rows);
            let y: Vec<usize> = rows.iter().map(|&i| labels[i]).collect();
            let cache_e = model.encoder.forward_cached(&x)?;
            let (mu, _) = model.split_encoding(cache_e.output());
            let cache_t = model.head_task.forward_cached(&mu)?;
            let (loss, g_logits) = softmax_xent(cache_t.output(), &y)?;
            if !loss.is_finite() {
                return Err(FridaError::Contract(format!(
                    "supervised training diverged at epoch {epoch}"
                )));
            }
            let (task_grads, d_mu) = model.head_task.backward(&cache_t, &g_logits)?;
            let mut d_out = Tensor2::zeros(d_mu.rows(), 2 * model.latent_dim);
            for r in 0..d_mu.rows() {
                for c in 0..model.latent_dim {
                    d_out.set(r, c, d_mu.get(r, c));
                }
            }
            let (enc_grads, _) = model.encoder.backward(&cache_e, &d_out)?;
            let flat: Vec<&Tensor2> = enc_grads
                .tensors()
                .into_iter()
                .chain(task_grads.tensors())
                .collect();
            let mut pm: Vec<&mut Tensor2> = model.encoder.params_mut();
            pm.extend(model.head_task.params_mut());
            adam.step(&mut pm, &flat)?;
            sum += loss;
        }
        history.push(sum / steps.max(1) as f64);
    }
    Ok(history)
}

fn next_batch(
    order: &mut [usize],
    pos: &mut usize,
    batch: usize,
    rng: &mut RngStream,
) -> Vec<usize> {
    let n = order.len();
    let take = batch.min(n);
    let mut rows = Vec::with_capacity(take);
    for _ in 0..take {
        if *pos >= n {
            rng.shuffle(order);
            *pos = 0;
        }
        rows.push(order[*pos]);
        *pos += 1;
    }
    rows
}

/// Deterministic classification: latent mean, task-head softmax, argmax with
/// ties broken toward the lower class index. Returns `(classes, posteriors)`.
pub fn classify(model: &DannIbModel, x: &Tensor2) -> Result<(Vec<usize>, Tensor2)> {
    let out = model.encoder.forward(x)?;
    if !out.all_finite() {
        return Err(FridaError::NonFinite {
            context: "encoder output",
        });
    }
    let (mu, _) = model.split_encoding(&out);
    let logits = model.head_task.forward(&mu)?;
    let posteriors = softmax(&logits)?;
    Ok((argmax_rows(&posteriors), posteriors))
}

/// Pseudo-labeling outcome.
#[derive(Debug, Clone)]
pub struct PseudoLabelReport {
    /// Samples whose confidence cleared the threshold (plus fallback picks),
    /// labeled by argmax. `None` when nothing was selected.
    pub selected: Option<FeatureDataset>,
    /// Selected count per class.
    pub per_class: Vec<usize>,
    /// Samples left unselected by the threshold rule.
    pub rejected: usize,
    pub threshold: f64,
    /// Entries added by the per-class fallback.
    pub fallback_added: usize,
}

/// Select confident samples: max posterior `>= threshold`, labeled by
/// argmax. With `fallback` set, any class that ends up empty receives its
/// single highest-posterior sample so every class stays representable.
pub fn pseudo_label(
    model: &DannIbModel,
    data: &UnlabeledDataset,
    threshold: f64,
    fallback: bool,
) -> Result<PseudoLabelReport> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(FridaError::Contract(format!(
            "threshold must lie in (0, 1], got {threshold}"
        )));
    }
    let (preds, posteriors) = classify(model, data.features())?;
    let n = data.n();
    let c = model.class_count;
    let mut picked: Vec<(usize, usize)> = Vec::new(); // (row, label)
    let mut taken = vec![false; n];
    for r in 0..n {
        let conf = posteriors.get(r, preds[r]);
        if conf >= threshold {
            picked.push((r, preds[r]));
            taken[r] = true;
        }
    }
    let rejected = n - picked.len();
    let mut per_class = vec![0usize; c];
    for &(_, y) in &picked {
        per_class[y] += 1;
    }
    let mut fallback_added = 0usize;
    if fallback {
        let empty: Vec<usize> = per_class
            .iter()
            .enumerate()
            .filter(|(_, &n)| n == 0)
            .map(|(c, _)| c)
            .collect();
        for class in empty {
            // best unselected row for this class; fall back to the global
            // best if everything is already selected
            let highest = |pool: &mut dyn Iterator<Item = usize>| -> Option<usize> {
                pool.max_by(|&a, &b| {
                    posteriors
                        .get(a, class)
                        .partial_cmp(&posteriors.get(b, class))
                        .expect("posteriors are finite")
                        .then(b.cmp(&a))
                })
            };
            let best = highest(&mut (0..n).filter(|&r| !taken[r])).or_else(|| highest(&mut (0..n)));
            if let Some(r) = best {
                picked.push((r, class));
                per_class[class] += 1;
                fallback_added += 1;
            }
        }
    }
    let selected = if picked.is_empty() {
        None
    } else {
        let rows: Vec<usize> = picked.iter().map(|&(r, _)| r).collect();
        let labels: Vec<usize> = picked.iter().map(|&(_, y)| y).collect();
        Some(FeatureDataset::new(
            data.features().select_rows(&rows),
            Some(labels),
            data.domain().clone(),
            c,
        )?)
    };
    Ok(PseudoLabelReport {
        selected,
        per_class,
        rejected,
        threshold,
        fallback_added,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DomainId;
    use crate::loss::{finite_difference, grad_rel_error};

    fn small_arch() -> DannArch {
        DannArch {
            latent_dim: 3,
            enc_hidden: vec![5],
        }
    }

    fn zeroed(mode: DannMode) -> DannIbModel {
        let mut rng = RngStream::new(1);
        let mut m = DannIbModel::init(&small_arch(), mode, 4, 2, &mut rng).unwrap();
        for p in m.params_mut() {
            p.data_mut().fill(0.0);
        }
        m
    }

    #[test]
    fn zero_encoder_gives_standard_normal_latent() {
        let m = zeroed(DannMode::Ib);
        let mut rng = RngStream::new(2);
        let x = gauss_sample(&mut rng, 200, 2);
        let (mu, lv, sample) = encode(&m, &x, &mut rng, true).unwrap();
        assert!(mu.data().iter().all(|&v| v == 0.0));
        assert!(lv.data().iter().all(|&v| v == 0.0));
        let mean: f64 = sample.data().iter().sum::<f64>() / sample.data().len() as f64;
        let var: f64 =
            sample.data().iter().map(|v| v * v).sum::<f64>() / sample.data().len() as f64;
        assert!(mean.abs() < 0.1);
        assert!((var - 1.0).abs() < 0.2);
    }

    #[test]
    fn deterministic_encode_returns_mean() {
        let mut rng = RngStream::new(3);
        let m = DannIbModel::init(&small_arch(), DannMode::Ib, 4, 2, &mut rng).unwrap();
        let x = gauss_sample(&mut rng, 5, 2);
        let (mu, _, sample) = encode(&m, &x, &mut rng, false).unwrap();
        assert_eq!(mu, sample);
    }

    #[test]
    fn kl_closed_form_values() {
        let zero = Tensor2::zeros(1, 2);
        assert_eq!(kl_regularizer(&zero, &zero).unwrap(), 0.0);
        let mu = Tensor2::from_vec(1, 2, vec![1.0, 0.0]).unwrap();
        let lv = Tensor2::zeros(1, 2);
        assert!((kl_regularizer(&mu, &lv).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn kl_nonnegative_on_random_inputs() {
        let mut rng = RngStream::new(4);
        for _ in 0..1000 {
            let mu = gauss_sample(&mut rng, 2, 3);
            let lv = gauss_sample(&mut rng, 2, 3);
            assert!(kl_regularizer(&mu, &lv).unwrap() >= 0.0);
        }
    }

    #[test]
    fn kl_batch_order_invariant() {
        let mut rng = RngStream::new(14);
        let mu = gauss_sample(&mut rng, 6, 3);
        let lv = gauss_sample(&mut rng, 6, 3);
        let base = kl_regularizer(&mu, &lv).unwrap();
        let perm = [5usize, 2, 0, 4, 1, 3];
        let kl_perm = kl_regularizer(&mu.select_rows(&perm), &lv.select_rows(&perm)).unwrap();
        assert!((base - kl_perm).abs() < 1e-12);
    }

    #[test]
    fn lambda_schedule_endpoints_and_monotonicity() {
        assert_eq!(lambda_schedule(0.0), 0.0);
        let at_one = lambda_schedule(1.0);
        assert!((at_one - (2.0 / (1.0 + libm::exp(-10.0)) - 1.0)).abs() < 1e-15);
        assert!((at_one - 0.9999).abs() < 1e-3);
        let mut prev = -1.0;
        for i in 0..=100 {
            let v = lambda_schedule(i as f64 / 100.0);
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn zero_weights_hit_uniform_baselines() {
        let m = zeroed(DannMode::Ib);
        let mut rng = RngStream::new(5);
        let sx = gauss_sample(&mut rng, 6, 2);
        let sy = vec![0usize, 1, 2, 3, 0, 1];
        let tx = gauss_sample(&mut rng, 6, 2);
        let (report, _) = dannib_loss(&m, &sx, &sy, &tx, 0.5, 0.01, &mut rng).unwrap();
        assert!((report.l_task - libm::log(4.0)).abs() < 1e-12);
        assert!((report.l_dom - libm::log(5.0)).abs() < 1e-12);
        assert_eq!(report.r_ib, 0.0);
    }

    #[test]
    fn lambda_zero_reduces_to_supervised_gradient() {
        let mut rng = RngStream::new(6);
        let m = DannIbModel::init(&small_arch(), DannMode::Binary, 3, 2, &mut rng).unwrap();
        let sx = gauss_sample(&mut rng, 5, 2);
        let sy = vec![0usize, 1, 2, 0, 1];
        let tx = gauss_sample(&mut rng, 4, 2);
        let (report, grads) = dannib_loss(&m, &sx, &sy, &tx, 0.0, 0.0, &mut rng).unwrap();
        assert!((report.total - report.l_task).abs() < 1e-15);
        // encoder gradient equals the plain supervised gradient
        let fd = |t: &Tensor2| -> f64 {
            let mut probe = m.clone();
            *probe.encoder.params_mut()[0] = t.clone();
            let out = probe.encoder.forward(&sx).unwrap();
            let (mu, _) = probe.split_encoding(&out);
            let logits = probe.head_task.forward(&mu).unwrap();
            softmax_xent(&logits, &sy).unwrap().0
        };
        let w0 = m.encoder.params()[0].clone();
        let numeric = finite_difference(&w0, 1e-5, |t| Ok(fd(t))).unwrap();
        let err = grad_rel_error(&grads.encoder.layers[0].0, &numeric);
        assert!(err < 1e-6, "rel err {err}");
    }

    #[test]
    fn out_of_range_lambda_rejected() {
        let m = zeroed(DannMode::Binary);
        let mut rng = RngStream::new(7);
        let sx = gauss_sample(&mut rng, 2, 2);
        let tx = gauss_sample(&mut rng, 2, 2);
        assert!(dannib_loss(&m, &sx, &[0, 1], &tx, 1.5, 0.0, &mut rng).is_err());
    }

    #[test]
    fn classify_tie_break_and_posterior_sum() {
        let m = zeroed(DannMode::Multiclass);
        let mut rng = RngStream::new(8);
        let x = gauss_sample(&mut rng, 7, 2);
        let (classes, posteriors) = classify(&m, &x).unwrap();
        // zero weights give uniform logits; ties break toward class 0
        assert!(classes.iter().all(|&c| c == 0));
        for r in 0..posteriors.rows() {
            let s: f64 = posteriors.row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pseudo_label_uniform_posteriors_select_nothing() {
        let m = zeroed(DannMode::Multiclass);
        let mut rng = RngStream::new(9);
        let x = gauss_sample(&mut rng, 10, 2);
        let ds = FeatureDataset::new(x, None, DomainId::new(1, 3).unwrap(), 4).unwrap();
        let view = UnlabeledDataset::from_dataset(&ds);
        let report = pseudo_label(&m, &view, 0.26, false).unwrap();
        assert!(report.selected.is_none());
        assert_eq!(report.rejected, 10);
    }

    #[test]
    fn pseudo_label_fallback_covers_every_class() {
        let m = zeroed(DannMode::Multiclass);
        let mut rng = RngStream::new(10);
        let x = gauss_sample(&mut rng, 10, 2);
        let ds = FeatureDataset::new(x, None, DomainId::new(1, 3).unwrap(), 4).unwrap();
        let view = UnlabeledDataset::from_dataset(&ds);
        let report = pseudo_label(&m, &view, 0.99, true).unwrap();
        assert!(report.per_class.iter().all(|&c| c >= 1));
        assert_eq!(report.fallback_added, 4);
        let selected = report.selected.unwrap();
        assert_eq!(selected.n(), 4);
    }

    #[test]
    fn pseudo_label_selection_is_monotone_in_threshold() {
        let mut rng = RngStream::new(11);
        let m = DannIbModel::init(&small_arch(), DannMode::Ib, 4, 2, &mut rng).unwrap();
        let x = gauss_sample(&mut rng, 50, 2);
        let ds = FeatureDataset::new(x, None, DomainId::new(1, 3).unwrap(), 4).unwrap();
        let view = UnlabeledDataset::from_dataset(&ds);
        let mut prev = usize::MAX;
        for th in [0.25, 0.3, 0.5, 0.7, 0.9, 0.99, 1.0] {
            let r = pseudo_label(&m, &view, th, false).unwrap();
            let count = r.selected.as_ref().map_or(0, |s| s.n());
            assert!(count <= prev, "raising the threshold added samples");
            prev = count;
        }
    }

    #[test]
    fn lr_zero_training_is_identity() {
        let mut rng = RngStream::new(12);
        let mut m = DannIbModel::init(&small_arch(), DannMode::Ib, 3, 2, &mut rng).unwrap();
        let before = m.clone();
        let sx = gauss_sample(&mut rng, 9, 2);
        let sy: Vec<usize> = (0..9).map(|i| i % 3).collect();
        let src = FeatureDataset::new(sx, Some(sy), DomainId::new(0, 3).unwrap(), 3).unwrap();
        let tx = gauss_sample(&mut rng, 9, 2);
        let tgt = UnlabeledDataset::from_dataset(
            &FeatureDataset::new(tx, None, DomainId::new(1, 3).unwrap(), 3).unwrap(),
        );
        let cfg = DannTrainConfig {
            epochs: 2,
            batch: 4,
            lr: 0.0,
            ..DannTrainConfig::default()
        };
        train_dannib(&mut m, &src, &tgt, &cfg, &mut rng).unwrap();
        assert_eq!(m, before);
    }
}
