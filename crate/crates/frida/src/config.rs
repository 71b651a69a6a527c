//! Run configuration: a flat `key=value` text format with section-prefixed
//! keys (`gan.epochs`, `da.beta`, ...), diff-friendly and dependency-free.
//!
//! Every key has a default; the canonical serialization lists every
//! effective key sorted, and its FNV-1a hash identifies the run. States
//! embed the canonical text so `resume` needs no external config file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use frida_core::dannib::{DannArch, DannMode, DannTrainConfig};
use frida_core::dgacgan::{GanArch, GanTrainConfig, PairingMode};
use frida_core::episode::EpisodeConfig;
use frida_core::error::{FridaError, Result};
use frida_core::metrics::ForgettingMode;
use frida_core::rng::RngStream;
use frida_core::synth::{BenchmarkSpec, ShiftSpec};

use crate::fnv1a64;

/// Where the run's domains come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// Generate the synthetic benchmark in-process.
    Benchmark(BenchmarkConfig),
    /// Load dataset files: one labeled source, then targets in episode
    /// order. Target labels are hidden from training and kept for
    /// evaluation.
    Files {
        source: PathBuf,
        targets: Vec<PathBuf>,
    },
}

/// Synthetic benchmark knobs.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkConfig {
    pub classes: usize,
    pub dim: usize,
    pub n_per_class: usize,
    pub targets: usize,
    /// Rotation angle per target domain, radians.
    pub rotations: Vec<f64>,
    /// Translation norm per target domain; directions come from the seed.
    pub translations: Vec<f64>,
    /// Scale per target domain.
    pub scales: Vec<f64>,
    pub sigma: f64,
    /// Defaults to the run seed.
    pub seed: Option<u64>,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            classes: 4,
            dim: 16,
            n_per_class: 150,
            targets: 2,
            rotations: vec![0.3, 0.6],
            translations: vec![1.0, 2.0],
            scales: vec![1.0, 1.0],
            sigma: 0.5,
            seed: None,
        }
    }
}

/// Full run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub code_width: usize,
    pub test_fraction: f64,
    pub forgetting: ForgettingMode,
    pub data: DataSource,
    pub per_class_replay: usize,
    pub threshold: f64,
    pub fallback: bool,
    pub mode: DannMode,
    pub paper_literal: bool,
    pub gan_arch: GanArch,
    pub gan: GanTrainConfig,
    pub dann_arch: DannArch,
    pub dann: DannTrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            code_width: 3,
            test_fraction: 0.3,
            forgetting: ForgettingMode::FirstSeen,
            data: DataSource::Benchmark(BenchmarkConfig::default()),
            per_class_replay: 100,
            threshold: 0.95,
            fallback: true,
            mode: DannMode::Ib,
            paper_literal: false,
            gan_arch: GanArch::default(),
            gan: GanTrainConfig::default(),
            dann_arch: DannArch::default(),
            dann: DannTrainConfig::default(),
        }
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(FridaError::Parse {
            line: 0,
            message: format!("{key}: expected true/false, got '{v}'"),
        }),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| FridaError::Parse {
        line: 0,
        message: format!("{key}: cannot parse '{v}'"),
    })
}

fn parse_list_f64(key: &str, v: &str) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|x| parse_num(key, x.trim())).collect()
}

fn parse_list_usize(key: &str, v: &str) -> Result<Vec<usize>> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|x| parse_num(key, x.trim())).collect()
}

fn join_f64(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| format!("{v}"))
        .collect::<Vec<_>>()
        .join(",")
}

fn join_usize(values: &[usize]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn mode_name(mode: DannMode) -> &'static str {
    match mode {
        DannMode::Binary => "dann_binary",
        DannMode::Multiclass => "dann_multiclass",
        DannMode::Ib => "dann_ib",
    }
}

/// Parse a mode flag value (also used by the CLI `--mode` flag).
pub fn parse_mode(v: &str) -> Result<DannMode> {
    match v {
        "dann_binary" => Ok(DannMode::Binary),
        "dann_multiclass" => Ok(DannMode::Multiclass),
        "dann_ib" => Ok(DannMode::Ib),
        _ => Err(FridaError::Parse {
            line: 0,
            message: format!("mode must be dann_binary, dann_multiclass, or dann_ib, got '{v}'"),
        }),
    }
}

impl RunConfig {
    /// Parse the flat key=value text. Unknown or duplicate keys are errors
    /// that name the offending key and line.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut bench = BenchmarkConfig::default();
        let mut bench_touched = false;
        let mut source: Option<PathBuf> = None;
        let mut targets: Vec<PathBuf> = Vec::new();
        let mut seen = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| FridaError::Parse {
                line: line_no,
                message: format!("expected key=value, found '{line}'"),
            })?;
            let key = key.trim();
            let value = value.trim();
            if let Some(prev) = seen.insert(key.to_string(), line_no) {
                return Err(FridaError::Parse {
                    line: line_no,
                    message: format!("duplicate key '{key}' (first at line {prev})"),
                });
            }
            let at = |e: FridaError| match e {
                FridaError::Parse { message, .. } => FridaError::Parse {
                    line: line_no,
                    message,
                },
                other => other,
            };
            match key {
                "seed" => cfg.seed = parse_num(key, value).map_err(at)?,
                "code_width" => cfg.code_width = parse_num(key, value).map_err(at)?,
                "test_fraction" => cfg.test_fraction = parse_num(key, value).map_err(at)?,
                "forgetting" => {
                    cfg.forgetting = match value {
                        "first_seen" => ForgettingMode::FirstSeen,
                        "paper_literal" => ForgettingMode::PaperLiteral,
                        _ => {
                            return Err(FridaError::Parse {
                                line: line_no,
                                message: format!(
                                    "forgetting must be first_seen or paper_literal, got '{value}'"
                                ),
                            })
                        }
                    }
                }
                "paper_literal" => cfg.paper_literal = parse_bool(key, value).map_err(at)?,
                "data.source" => source = Some(PathBuf::from(value)),
                "data.targets" => {
                    targets = value
                        .split(',')
                        .filter(|s| !s.trim().is_empty())
                        .map(|s| PathBuf::from(s.trim()))
                        .collect()
                }
                "benchmark.classes" => {
                    bench.classes = parse_num(key, value).map_err(at)?;
                    bench_touched = true;
                }
                "benchmark.dim" => {
                    bench.dim = parse_num(key, value).map_err(at)?;
                    bench_touched = true;
                }
                "benchmark.n_per_class" => {
                    bench.n_per_class = parse_num(key, value).map_err(at)?;
                    bench_touched = true;
                }
                "benchmark.targets" => {
                    bench.targets = parse_num(key, value).map_err(at)?;
                    bench_touched = true;
                }
                "benchmark.rotations" => {
                    bench.rotations = parse_list_f64(key, value).map_err(at)?;
                    bench_touched = true;
                }
                "benchmark.translations" => {
                    bench.translations = parse_list_f64(key, value).map_err(at)?;
                    bench_touched = true;
                }
                "benchmark.scales" => {
                    bench.scales = parse_list_f64(key, value).map_err(at)?;
                    bench_touched = true;
                }
                "benchmark.sigma" => {
                    bench.sigma = parse_num(key, value).map_err(at)?;
                    bench_touched = true;
                }
                "benchmark.seed" => {
                    bench.seed = Some(parse_num(key, value).map_err(at)?);
                    bench_touched = true;
                }
                "replay.per_class" => cfg.per_class_replay = parse_num(key, value).map_err(at)?,
                "pseudo.threshold" => cfg.threshold = parse_num(key, value).map_err(at)?,
                "pseudo.fallback" => cfg.fallback = parse_bool(key, value).map_err(at)?,
                "gan.epochs" => cfg.gan.epochs = parse_num(key, value).map_err(at)?,
                "gan.batch" => cfg.gan.batch = parse_num(key, value).map_err(at)?,
                "gan.lr" => cfg.gan.lr = parse_num(key, value).map_err(at)?,
                "gan.beta1" => cfg.gan.beta1 = parse_num(key, value).map_err(at)?,
                "gan.beta2" => cfg.gan.beta2 = parse_num(key, value).map_err(at)?,
                "gan.z_dim" => cfg.gan_arch.z_dim = parse_num(key, value).map_err(at)?,
                "gan.hidden" => {
                    cfg.gan_arch.gen_hidden = parse_list_usize(key, value).map_err(at)?
                }
                "gan.trunk" => {
                    cfg.gan_arch.trunk_hidden = parse_list_usize(key, value).map_err(at)?
                }
                "gan.saturating" => cfg.gan.saturating = parse_bool(key, value).map_err(at)?,
                "gan.pairing" => {
                    cfg.gan.pairing = match value {
                        "uniform" => PairingMode::Uniform,
                        "class_mean" => PairingMode::ClassMean,
                        _ => {
                            return Err(FridaError::Parse {
                                line: line_no,
                                message: format!(
                                    "gan.pairing must be uniform or class_mean, got '{value}'"
                                ),
                            })
                        }
                    }
                }
                "da.epochs" => cfg.dann.epochs = parse_num(key, value).map_err(at)?,
                "da.batch" => cfg.dann.batch = parse_num(key, value).map_err(at)?,
                "da.lr" => cfg.dann.lr = parse_num(key, value).map_err(at)?,
                "da.beta1" => cfg.dann.beta1 = parse_num(key, value).map_err(at)?,
                "da.beta2" => cfg.dann.beta2 = parse_num(key, value).map_err(at)?,
                "da.beta" => cfg.dann.beta_ib = parse_num(key, value).map_err(at)?,
                "da.latent" => cfg.dann_arch.latent_dim = parse_num(key, value).map_err(at)?,
                "da.hidden" => {
                    cfg.dann_arch.enc_hidden = parse_list_usize(key, value).map_err(at)?
                }
                "da.mode" => cfg.mode = parse_mode(value).map_err(at)?,
                other => {
                    return Err(FridaError::Parse {
                        line: line_no,
                        message: format!("unknown key '{other}'"),
                    })
                }
            }
        }
        cfg.data = match (source, targets.is_empty(), bench_touched) {
            (Some(_), _, true) => {
                return Err(FridaError::Parse {
                    line: 0,
                    message: "config mixes data.* and benchmark.* sources".into(),
                })
            }
            (Some(src), _, false) => DataSource::Files {
                source: src,
                targets,
            },
            (None, false, _) => {
                return Err(FridaError::Parse {
                    line: 0,
                    message: "data.targets given without data.source".into(),
                })
            }
            (None, true, _) => DataSource::Benchmark(bench),
        };
        if cfg.paper_literal {
            cfg.apply_paper_literal();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// The literal-objective switch: unweighted bottleneck term and the
    /// saturating generator loss.
    pub fn apply_paper_literal(&mut self) {
        self.paper_literal = true;
        self.dann.beta_ib = 1.0;
        self.gan.saturating = true;
    }

    /// Structural validation (no filesystem access).
    pub fn validate(&self) -> Result<()> {
        let fail =
            |item: &str, why: String| Err(FridaError::Contract(format!("config {item}: {why}")));
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return fail(
                "test_fraction",
                format!("must lie in (0, 1), got {}", self.test_fraction),
            );
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return fail(
                "pseudo.threshold",
                format!("must lie in (0, 1], got {}", self.threshold),
            );
        }
        if self.per_class_replay == 0 {
            return fail("replay.per_class", "must be positive".into());
        }
        if self.code_width == 0 {
            return fail("code_width", "must be positive".into());
        }
        for (name, v) in [
            ("gan.epochs", self.gan.epochs),
            ("gan.batch", self.gan.batch),
            ("gan.z_dim", self.gan_arch.z_dim),
            ("da.epochs", self.dann.epochs),
            ("da.batch", self.dann.batch),
            ("da.latent", self.dann_arch.latent_dim),
        ] {
            if v == 0 {
                return fail(name, "must be positive".into());
            }
        }
        if self.gan_arch.gen_hidden.is_empty() || self.gan_arch.trunk_hidden.is_empty() {
            return fail(
                "gan.hidden/gan.trunk",
                "need at least one hidden width".into(),
            );
        }
        if self.dann_arch.enc_hidden.is_empty() {
            return fail("da.hidden", "need at least one hidden width".into());
        }
        if let DataSource::Benchmark(b) = &self.data {
            if b.rotations.len() != b.targets
                || b.translations.len() != b.targets
                || b.scales.len() != b.targets
            {
                return fail(
                    "benchmark.rotations/translations/scales",
                    format!("need exactly {} entries (one per target)", b.targets),
                );
            }
            if b.targets + 1 > (1usize << self.code_width.min(63)) {
                return fail(
                    "benchmark.targets",
                    format!(
                        "{} domains exceed the {}-bit code",
                        b.targets + 1,
                        self.code_width
                    ),
                );
            }
        }
        Ok(())
    }

    /// Filesystem validation for commands that will read the files.
    pub fn validate_files(&self) -> Result<()> {
        if let DataSource::Files { source, targets } = &self.data {
            for path in std::iter::once(source).chain(targets.iter()) {
                if !path.exists() {
                    return Err(FridaError::Contract(format!(
                        "config data file does not exist: {}",
                        path.display()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Canonical serialization: every effective key, sorted. Parsing the
    /// canonical text reproduces the config exactly.
    pub fn to_canonical(&self) -> String {
        let mut kv: Vec<(String, String)> = vec![
            ("seed".into(), self.seed.to_string()),
            ("code_width".into(), self.code_width.to_string()),
            ("test_fraction".into(), format!("{}", self.test_fraction)),
            (
                "forgetting".into(),
                match self.forgetting {
                    ForgettingMode::FirstSeen => "first_seen".into(),
                    ForgettingMode::PaperLiteral => "paper_literal".into(),
                },
            ),
            ("paper_literal".into(), self.paper_literal.to_string()),
            ("replay.per_class".into(), self.per_class_replay.to_string()),
            ("pseudo.threshold".into(), format!("{}", self.threshold)),
            ("pseudo.fallback".into(), self.fallback.to_string()),
            ("gan.epochs".into(), self.gan.epochs.to_string()),
            ("gan.batch".into(), self.gan.batch.to_string()),
            ("gan.lr".into(), format!("{}", self.gan.lr)),
            ("gan.beta1".into(), format!("{}", self.gan.beta1)),
            ("gan.beta2".into(), format!("{}", self.gan.beta2)),
            ("gan.z_dim".into(), self.gan_arch.z_dim.to_string()),
            ("gan.hidden".into(), join_usize(&self.gan_arch.gen_hidden)),
            ("gan.trunk".into(), join_usize(&self.gan_arch.trunk_hidden)),
            ("gan.saturating".into(), self.gan.saturating.to_string()),
            (
                "gan.pairing".into(),
                match self.gan.pairing {
                    PairingMode::Uniform => "uniform".into(),
                    PairingMode::ClassMean => "class_mean".into(),
                },
            ),
            ("da.epochs".into(), self.dann.epochs.to_string()),
            ("da.batch".into(), self.dann.batch.to_string()),
            ("da.lr".into(), format!("{}", self.dann.lr)),
            ("da.beta1".into(), format!("{}", self.dann.beta1)),
            ("da.beta2".into(), format!("{}", self.dann.beta2)),
            ("da.beta".into(), format!("{}", self.dann.beta_ib)),
            ("da.latent".into(), self.dann_arch.latent_dim.to_string()),
            ("da.hidden".into(), join_usize(&self.dann_arch.enc_hidden)),
            ("da.mode".into(), mode_name(self.mode).into()),
        ];
        match &self.data {
            DataSource::Benchmark(b) => {
                kv.push(("benchmark.classes".into(), b.classes.to_string()));
                kv.push(("benchmark.dim".into(), b.dim.to_string()));
                kv.push(("benchmark.n_per_class".into(), b.n_per_class.to_string()));
                kv.push(("benchmark.targets".into(), b.targets.to_string()));
                kv.push(("benchmark.rotations".into(), join_f64(&b.rotations)));
                kv.push(("benchmark.translations".into(), join_f64(&b.translations)));
                kv.push(("benchmark.scales".into(), join_f64(&b.scales)));
                kv.push(("benchmark.sigma".into(), format!("{}", b.sigma)));
                if let Some(s) = b.seed {
                    kv.push(("benchmark.seed".into(), s.to_string()));
                }
            }
            DataSource::Files { source, targets } => {
                kv.push(("data.source".into(), source.display().to_string()));
                kv.push((
                    "data.targets".into(),
                    targets
                        .iter()
                        .map(|p| p.display().to_string())
                        .collect::<Vec<_>>()
                        .join(","),
                ));
            }
        }
        kv.sort();
        let mut out = String::new();
        for (k, v) in kv {
            out.push_str(&k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        }
        out
    }

    /// FNV-1a hash of the canonical text.
    pub fn hash(&self) -> u64 {
        fnv1a64(self.to_canonical().as_bytes())
    }

    /// Build the benchmark spec, drawing translation directions from the
    /// benchmark seed. Only valid for benchmark data sources.
    pub fn benchmark_spec(&self) -> Result<BenchmarkSpec> {
        let bench = match &self.data {
            DataSource::Benchmark(b) => b,
            DataSource::Files { .. } => {
                return Err(FridaError::Contract(
                    "this config loads dataset files; no benchmark to generate".into(),
                ))
            }
        };
        let seed = bench.seed.unwrap_or(self.seed);
        let mut shifts = vec![ShiftSpec::identity(bench.dim, bench.sigma)];
        for t in 0..bench.targets {
            let mut dir_rng = RngStream::new(seed).substream(0x7472616e ^ (t as u64 + 1));
            let mut dir: Vec<f64> = (0..bench.dim).map(|_| dir_rng.next_gauss()).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            let len = bench.translations[t];
            for v in dir.iter_mut() {
                *v *= len / norm;
            }
            shifts.push(ShiftSpec {
                rotation_angle: bench.rotations[t],
                translation: dir,
                scale: bench.scales[t],
                noise_sigma: bench.sigma,
            });
        }
        Ok(BenchmarkSpec {
            class_count: bench.classes,
            dim: bench.dim,
            n_per_class: bench.n_per_class,
            shifts,
            code_width: self.code_width,
            seed,
        })
    }

    /// Episode-level configuration for datasets with the given shape.
    pub fn episode_config(&self, class_count: usize, dim: usize) -> EpisodeConfig {
        EpisodeConfig {
            class_count,
            dim,
            code_width: self.code_width,
            per_class_replay: self.per_class_replay,
            threshold: self.threshold,
            fallback: self.fallback,
            mode: self.mode,
            gan_arch: self.gan_arch.clone(),
            dann_arch: self.dann_arch.clone(),
            gan: self.gan.clone(),
            dann: self.dann.clone(),
            config_hash: self.hash(),
        }
    }

    /// Load and parse a config file.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            FridaError::Contract(format!("cannot read config {}: {e}", path.display()))
        })?;
        RunConfig::parse(&text)
    }
}
