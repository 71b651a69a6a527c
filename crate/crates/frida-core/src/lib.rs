//! FRIDA core: feature replay for incremental domain adaptation.
//!
//! A labeled source domain arrives first, then a sequence of unlabeled target
//! domains, with only the current domain's data accessible at any time. This
//! crate holds everything needed to run that loop on precomputed feature
//! vectors:
//!
//! - a small deterministic numeric kernel ([`tensor`], [`net`], [`opt`],
//!   [`loss`], [`rng`]),
//! - dataset and domain bookkeeping ([`data`]),
//! - a synthetic multi-domain benchmark generator ([`synth`]),
//! - the DGAC-GAN replay memory ([`dgacgan`]),
//! - the DANN-IB adaptation solver with pseudo-labeling ([`dannib`]),
//! - the episode orchestrator ([`episode`]),
//! - accuracy/forgetting accounting and 2-D projections ([`metrics`]).
//!
//! The crate is `no_std` (with `alloc`); all transcendental math goes through
//! `libm` so results are bit-identical across platforms. File formats, the
//! CLI, and everything that touches the filesystem live in the companion
//! `frida` crate.

#![no_std]

extern crate alloc;

pub mod dannib;
pub mod data;
pub mod dgacgan;
pub mod episode;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod net;
pub mod opt;
pub mod rng;
pub mod synth;
pub mod tensor;

pub use dannib::{DannIbModel, DannLossReport, DannMode, PseudoLabelReport};
pub use data::{DomainId, EpisodeSpec, FeatureDataset, UnlabeledDataset};
pub use dgacgan::{GanBatchLoss, GanModel};
pub use episode::{EpisodeConfig, EpisodeState};
pub use error::{FridaError, Result};
pub use metrics::{AccuracyMatrix, ForgettingMode, MetricsReport};
pub use net::{Activation, DenseNet};
pub use opt::AdamState;
pub use rng::RngStream;
pub use synth::{BenchmarkSpec, ShiftSpec};
pub use tensor::Tensor2;
