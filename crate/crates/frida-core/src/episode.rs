//! The incremental episode loop.
//!
//! Episode 0 trains the replay GAN on the labeled source. Every later
//! episode receives exactly one new unlabeled dataset and, in order:
//! synthesizes replay sets for all past domains from the previous GAN,
//! adapts a warm-started solver against the new domain with the replay
//! union as its labeled source, pseudo-labels the new domain, and re-trains
//! a warm-started GAN on replay-plus-pseudo-labeled data. Past raw data is
//! never touched again; the episode input is the one new dataset handle.

use alloc::format;
use alloc::vec::Vec;

use crate::dannib::{
    pseudo_label, train_dannib, train_supervised, DannArch, DannIbModel, DannLossReport, DannMode,
    DannTrainConfig, PseudoLabelReport,
};
use crate::data::{concat_labeled, DomainId, FeatureDataset, UnlabeledDataset};
use crate::dgacgan::{sample_features, train_gan, GanArch, GanBatchLoss, GanModel, GanTrainConfig};
use crate::error::{FridaError, Result};
use crate::rng::RngStream;

/// Everything an episode needs to know about the run.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeConfig {
    pub class_count: usize,
    pub dim: usize,
    pub code_width: usize,
    /// Synthetic samples per class per past domain when building replay sets.
    pub per_class_replay: usize,
    /// Pseudo-label confidence threshold.
    pub threshold: f64,
    /// Guarantee one pseudo-label per class when the threshold yields none.
    pub fallback: bool,
    pub mode: DannMode,
    pub gan_arch: GanArch,
    pub dann_arch: DannArch,
    pub gan: GanTrainConfig,
    pub dann: DannTrainConfig,
    /// Hash of the run configuration, carried through states for resume
    /// validation.
    pub config_hash: u64,
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.class_count == 0 || self.dim == 0 {
            return Err(FridaError::Contract(
                "class count and dim must be positive".into(),
            ));
        }
        if self.per_class_replay == 0 {
            return Err(FridaError::Contract(
                "per_class_replay must be positive".into(),
            ));
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(FridaError::Contract(format!(
                "threshold must lie in (0, 1], got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// Snapshot of the whole pipeline after an episode.
#[derive(Debug, Clone)]
pub struct EpisodeState {
    pub tau: usize,
    pub gan: GanModel,
    /// Absent only at time 0 (no adaptation has happened yet).
    pub da: Option<DannIbModel>,
    pub registry: Vec<DomainId>,
    pub rng: RngStream,
    pub config_hash: u64,
}

/// Training traces of one episode, for diagnostics and tests.
#[derive(Debug, Clone)]
pub struct EpisodeReport {
    pub gan_history: Vec<GanBatchLoss>,
    pub da_history: Vec<DannLossReport>,
    pub pseudo_selected: usize,
    pub pseudo_rejected: usize,
    pub pseudo_fallback: usize,
    /// Replay samples synthesized this episode (before the pseudo union).
    pub replay_total: usize,
}

/// Episode 0: train the replay GAN on the labeled source.
pub fn run_episode_0(
    cfg: &EpisodeConfig,
    source: &FeatureDataset,
    seed: u64,
) -> Result<(EpisodeState, Vec<GanBatchLoss>)> {
    cfg.validate()?;
    if !source.is_labeled() {
        return Err(FridaError::Contract(
            "episode 0 requires a labeled source dataset".into(),
        ));
    }
    if source.domain().tau() != 0 {
        return Err(FridaError::Contract(format!(
            "source dataset must carry time stamp 0, got {}",
            source.domain().tau()
        )));
    }
    if source.dim() != cfg.dim || source.class_count() != cfg.class_count {
        return Err(FridaError::Contract(
            "source does not match the configured dims".into(),
        ));
    }
    let mut rng = RngStream::new(seed);
    let mut gan = GanModel::init(
        &cfg.gan_arch,
        cfg.class_count,
        cfg.dim,
        cfg.code_width,
        &mut rng,
    )?;
    let history = train_gan(&mut gan, &[source], &cfg.gan, &mut rng)?;
    let state = EpisodeState {
        tau: 0,
        gan,
        da: None,
        registry: alloc::vec![DomainId::new(0, cfg.code_width)?],
        rng,
        config_hash: cfg.config_hash,
    };
    Ok((state, history))
}

/// One incremental episode: adapt to `target`, pseudo-label it, refresh the
/// replay GAN. Consumes only the previous state and the one new dataset.
pub fn run_episode(
    state: &EpisodeState,
    target: &UnlabeledDataset,
    cfg: &EpisodeConfig,
) -> Result<(EpisodeState, EpisodeReport)> {
    cfg.validate()?;
    if state.config_hash != cfg.config_hash {
        return Err(FridaError::Contract(
            "config hash mismatch: state comes from a different configuration".into(),
        ));
    }
    let tau = state.tau + 1;
    // fails fast when the code width runs out of room
    let new_domain = DomainId::new(tau, cfg.code_width)?;
    if target.domain().tau() != tau {
        return Err(FridaError::Contract(format!(
            "expected dataset for time stamp {tau}, got {}",
            target.domain().tau()
        )));
    }
    if target.dataset().dim() != cfg.dim {
        return Err(FridaError::Contract(
            "target does not match the configured dims".into(),
        ));
    }
    let mut rng = state.rng.clone();

    // replay sets for every past domain, synthesized fresh from the last GAN
    let mut replay: Vec<FeatureDataset> = Vec::with_capacity(tau);
    for k in 0..tau {
        replay.push(sample_features(
            &state.gan,
            k,
            cfg.per_class_replay,
            &mut rng,
        )?);
    }
    let replay_total: usize = replay.iter().map(|d| d.n()).sum();

    // adapt: warm start when a previous solver exists, otherwise fresh
    let mut da = match &state.da {
        Some(previous) => previous.clone(),
        None => DannIbModel::init(&cfg.dann_arch, cfg.mode, cfg.class_count, cfg.dim, &mut rng)?,
    };
    let aux_source = concat_labeled(&replay.iter().collect::<Vec<_>>())?;
    let da_history = train_dannib(&mut da, &aux_source, target, &cfg.dann, &mut rng)?;

    // pseudo-label the new domain
    let pseudo: PseudoLabelReport = pseudo_label(&da, target, cfg.threshold, cfg.fallback)?;
    let selected = match &pseudo.selected {
        Some(s) => s,
        None => {
            return Err(FridaError::Contract(format!(
                "episode {tau}: pseudo-labeling selected nothing at threshold {} and the \
                 fallback is disabled",
                cfg.threshold
            )))
        }
    };
    if let Some(missing) = pseudo.per_class.iter().position(|&c| c == 0) {
        return Err(FridaError::Contract(format!(
            "episode {tau}: class {missing} received no pseudo-labels and the fallback is \
             disabled; the replay GAN would lose that (domain, class) cell"
        )));
    }

    // refresh the replay memory on replay union plus pseudo-labeled data
    let mut gan = state.gan.clone();
    let mut real: Vec<&FeatureDataset> = replay.iter().collect();
    real.push(selected);
    let gan_history = train_gan(&mut gan, &real, &cfg.gan, &mut rng)?;

    let mut registry = state.registry.clone();
    registry.push(new_domain);
    let next = EpisodeState {
        tau,
        gan,
        da: Some(da),
        registry,
        rng,
        config_hash: cfg.config_hash,
    };
    let report = EpisodeReport {
        gan_history,
        da_history,
        pseudo_selected: selected.n(),
        pseudo_rejected: pseudo.rejected,
        pseudo_fallback: pseudo.fallback_added,
        replay_total,
    };
    Ok((next, report))
}

/// State of the no-replay ablation: a solver chain without any GAN.
#[derive(Debug, Clone)]
pub struct NoReplayState {
    pub tau: usize,
    pub da: DannIbModel,
    pub rng: RngStream,
}

/// Ablation episode 0: supervised training of the solver on the source.
pub fn no_replay_episode_0(
    cfg: &EpisodeConfig,
    source: &FeatureDataset,
    seed: u64,
) -> Result<NoReplayState> {
    cfg.validate()?;
    if !source.is_labeled() {
        return Err(FridaError::Contract(
            "episode 0 requires a labeled source dataset".into(),
        ));
    }
    let mut rng = RngStream::new(seed);
    let mut da = DannIbModel::init(&cfg.dann_arch, cfg.mode, cfg.class_count, cfg.dim, &mut rng)?;
    train_supervised(&mut da, source, &cfg.dann, &mut rng)?;
    Ok(NoReplayState { tau: 0, da, rng })
}

/// Ablation episode: the replay union is replaced by nothing, so the solver
/// self-trains on its own pseudo-labels for the current domain only.
pub fn no_replay_episode(
    state: &NoReplayState,
    target: &UnlabeledDataset,
    cfg: &EpisodeConfig,
) -> Result<NoReplayState> {
    cfg.validate()?;
    let tau = state.tau + 1;
    let mut rng = state.rng.clone();
    let pseudo = pseudo_label(&state.da, target, cfg.threshold, cfg.fallback)?;
    let selected = pseudo.selected.ok_or_else(|| {
        FridaError::Contract(format!(
            "no-replay episode {tau}: pseudo-labeling selected nothing"
        ))
    })?;
    let mut da = state.da.clone();
    train_dannib(&mut da, &selected, target, &cfg.dann, &mut rng)?;
    Ok(NoReplayState { tau, da, rng })
}
