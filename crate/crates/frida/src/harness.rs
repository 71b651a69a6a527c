//! The run harness: domain preparation, the episode loop with per-episode
//! evaluation and artifact emission, resumption, the mode-ablation driver,
//! and the no-replay ablation pipeline.
//!
//! Every piece of randomness derives from the config seed: the episode
//! chain advances the state's own stream, while splits, projections, and
//! CLI sampling use substreams derived from `(seed, purpose, tau)` so a
//! resumed run reproduces an uninterrupted one exactly.

use std::fs;
use std::path::{Path, PathBuf};

use frida_core::dannib::{classify, DannMode};
use frida_core::data::{split, FeatureDataset, UnlabeledDataset};
use frida_core::dgacgan::sample_features;
use frida_core::episode::{
    no_replay_episode, no_replay_episode_0, run_episode, run_episode_0, EpisodeReport,
    EpisodeState, NoReplayState,
};
use frida_core::error::{FridaError, Result};
use frida_core::loss::argmax_rows;
use frida_core::metrics::{project2d, report, AccuracyMatrix, MetricsReport};
use frida_core::rng::RngStream;
use frida_core::synth::make_benchmark;
use frida_core::tensor::Tensor2;

use crate::ckpt::{load_state, save_state};
use crate::config::{DataSource, RunConfig};
use crate::dsio::{read_dataset, render_dataset, write_dataset};
use crate::report::{
    parse_metrics_csv, render_metrics_csv, render_projection_csv, render_report_json, ProjPoint,
};

const SPLIT_TAG: u64 = 0x73706c69; // "spli"
const PROJ_TAG: u64 = 0x70726f6a; // "proj"
const SAMPLE_TAG: u64 = 0x73616d70; // "samp"

/// One domain after the train/test split. `train` keeps its labels; for
/// targets those labels are hidden from training and used only by
/// evaluation-side checks.
#[derive(Debug, Clone)]
pub struct PreparedDomain {
    pub tau: usize,
    pub train: FeatureDataset,
    pub test: FeatureDataset,
}

/// Load or generate the full labeled domain sequence (source first).
pub fn load_domains(cfg: &RunConfig) -> Result<Vec<FeatureDataset>> {
    match &cfg.data {
        DataSource::Benchmark(_) => make_benchmark(&cfg.benchmark_spec()?),
        DataSource::Files { source, targets } => {
            let mut out = Vec::with_capacity(targets.len() + 1);
            for (tau, path) in std::iter::once(source).chain(targets.iter()).enumerate() {
                let ds = read_dataset(path, cfg.code_width)?;
                if ds.domain().tau() != tau {
                    return Err(FridaError::Contract(format!(
                        "{} declares domain {} but arrives at episode position {tau}",
                        path.display(),
                        ds.domain().tau()
                    )));
                }
                if !ds.is_labeled() {
                    return Err(FridaError::Contract(format!(
                        "{} carries no labels; labels are required (targets' labels stay \
                         hidden from training and drive evaluation only)",
                        path.display()
                    )));
                }
                out.push(ds);
            }
            Ok(out)
        }
    }
}

/// Split one domain with the seed-and-tau-derived stream, so any path that
/// reproduces the split (fresh run or resume) gets identical parts.
pub fn split_domain(cfg: &RunConfig, ds: &FeatureDataset) -> Result<PreparedDomain> {
    let tau = ds.domain().tau();
    let mut rng = RngStream::new(cfg.seed).substream(SPLIT_TAG ^ tau as u64);
    let outcome = split(ds, cfg.test_fraction, &mut rng)?;
    for class in &outcome.singleton_classes {
        eprintln!("warning: domain {tau} class {class} has a single sample; kept in train");
    }
    Ok(PreparedDomain {
        tau,
        train: outcome.train,
        test: outcome.test,
    })
}

fn eval_threads() -> Result<usize> {
    match std::env::var("FRIDA_THREADS") {
        Err(_) => Ok(1),
        Ok(v) => v.parse::<usize>().ok().filter(|&t| t >= 1).ok_or_else(|| {
            FridaError::Contract(format!(
                "FRIDA_THREADS must be a positive integer, got '{v}'"
            ))
        }),
    }
}

/// Count correct predictions over row chunks, optionally in parallel.
/// The reduction is an integer sum, so the thread count never changes the
/// result.
fn chunked_correct<F>(features: &Tensor2, labels: &[usize], predict: F) -> Result<usize>
where
    F: Fn(&Tensor2) -> Result<Vec<usize>> + Sync,
{
    let threads = eval_threads()?.min(labels.len().max(1));
    if threads <= 1 {
        let preds = predict(features)?;
        return Ok(preds
            .iter()
            .zip(labels.iter())
            .filter(|(p, y)| p == y)
            .count());
    }
    let n = labels.len();
    let chunk = n.div_ceil(threads);
    let results: Vec<Result<usize>> = std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for t in 0..threads {
            let lo = t * chunk;
            let hi = ((t + 1) * chunk).min(n);
            if lo >= hi {
                break;
            }
            let predict = &predict;
            handles.push(scope.spawn(move || -> Result<usize> {
                let rows: Vec<usize> = (lo..hi).collect();
                let sub = features.select_rows(&rows);
                let preds = predict(&sub)?;
                Ok(preds
                    .iter()
                    .zip(labels[lo..hi].iter())
                    .filter(|(p, y)| p == y)
                    .count())
            }));
        }
        handles
            .into_iter()
            .map(|h| h.join().expect("evaluation thread panicked"))
            .collect()
    });
    let mut total = 0;
    for r in results {
        total += r?;
    }
    Ok(total)
}

/// Accuracy of the episode state's classifier on one labeled test set.
///
/// From episode 1 on this is the adaptation solver (domain identity never
/// reaches it). At time 0 no solver exists yet; the replay GAN's auxiliary
/// class head, the only trained classifier, answers for the lone source
/// domain.
pub fn state_accuracy(state: &EpisodeState, test: &FeatureDataset) -> Result<f64> {
    let labels = test
        .labels()
        .ok_or_else(|| FridaError::Contract("evaluation requires a labeled test set".into()))?;
    let correct = match &state.da {
        Some(da) => chunked_correct(test.features(), labels, |x| Ok(classify(da, x)?.0))?,
        None => chunked_correct(test.features(), labels, |x| {
            let (_, cls_logits) = state.gan.disc_forward(x, 0)?;
            Ok(argmax_rows(&frida_core::loss::softmax(&cls_logits)?))
        })?,
    };
    Ok(correct as f64 / labels.len() as f64)
}

/// Evaluate the state on every seen domain's test set, returning the
/// accuracy row for the state's time stamp.
pub fn evaluate_state(state: &EpisodeState, tests: &[&FeatureDataset]) -> Result<Vec<f64>> {
    if state.da.is_none() && tests.len() != 1 {
        return Err(FridaError::Contract(
            "time-0 state evaluates the source domain only".into(),
        ));
    }
    tests.iter().map(|t| state_accuracy(state, t)).collect()
}

/// An in-memory run: everything the acceptance checks need.
pub struct MemoryRun {
    pub matrix: AccuracyMatrix,
    pub report: MetricsReport,
    pub states: Vec<EpisodeState>,
    pub episode_reports: Vec<EpisodeReport>,
    pub prepared: Vec<PreparedDomain>,
}

/// Run the full pipeline without touching the filesystem.
pub fn run_in_memory(cfg: &RunConfig) -> Result<MemoryRun> {
    cfg.validate()?;
    let domains = load_domains(cfg)?;
    let prepared: Vec<PreparedDomain> = domains
        .iter()
        .map(|d| split_domain(cfg, d))
        .collect::<Result<_>>()?;
    let t_final = prepared.len() - 1;
    let ecfg = cfg.episode_config(domains[0].class_count(), domains[0].dim());

    let mut matrix = AccuracyMatrix::new(t_final);
    let mut states = Vec::with_capacity(prepared.len());
    let mut episode_reports = Vec::new();

    let (state0, _) = run_episode_0(&ecfg, &prepared[0].train, cfg.seed)?;
    matrix.set(0, 0, state_accuracy(&state0, &prepared[0].test)?)?;
    states.push(state0);

    for tau in 1..=t_final {
        let view = UnlabeledDataset::from_dataset(&prepared[tau].train);
        let (state, ereport) = run_episode(states.last().expect("nonempty"), &view, &ecfg)?;
        for (k, p) in prepared.iter().take(tau + 1).enumerate() {
            matrix.set(tau, k, state_accuracy(&state, &p.test)?)?;
        }
        states.push(state);
        episode_reports.push(ereport);
    }
    let report = report(&matrix)?;
    Ok(MemoryRun {
        matrix,
        report,
        states,
        episode_reports,
        prepared,
    })
}

/// The no-replay ablation, in memory: a supervised time-0 classifier, then
/// pure self-training on each new domain's pseudo-labels.
pub struct NoReplayRun {
    pub matrix: AccuracyMatrix,
    pub report: MetricsReport,
    pub states: Vec<NoReplayState>,
}

pub fn run_no_replay_in_memory(cfg: &RunConfig) -> Result<NoReplayRun> {
    cfg.validate()?;
    let domains = load_domains(cfg)?;
    let prepared: Vec<PreparedDomain> = domains
        .iter()
        .map(|d| split_domain(cfg, d))
        .collect::<Result<_>>()?;
    let t_final = prepared.len() - 1;
    let ecfg = cfg.episode_config(domains[0].class_count(), domains[0].dim());

    let mut matrix = AccuracyMatrix::new(t_final);
    let mut states = Vec::with_capacity(prepared.len());
    let s0 = no_replay_episode_0(&ecfg, &prepared[0].train, cfg.seed)?;
    matrix.set(0, 0, da_accuracy(&s0, &prepared[0].test)?)?;
    states.push(s0);
    for tau in 1..=t_final {
        let view = UnlabeledDataset::from_dataset(&prepared[tau].train);
        let state = no_replay_episode(states.last().expect("nonempty"), &view, &ecfg)?;
        for (k, p) in prepared.iter().take(tau + 1).enumerate() {
            matrix.set(tau, k, da_accuracy(&state, &p.test)?)?;
        }
        states.push(state);
    }
    let report = report(&matrix)?;
    Ok(NoReplayRun {
        matrix,
        report,
        states,
    })
}

fn da_accuracy(state: &NoReplayState, test: &FeatureDataset) -> Result<f64> {
    let labels = test
        .labels()
        .ok_or_else(|| FridaError::Contract("evaluation requires a labeled test set".into()))?;
    let correct = chunked_correct(test.features(), labels, |x| Ok(classify(&state.da, x)?.0))?;
    Ok(correct as f64 / labels.len() as f64)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)
        .map_err(|e| FridaError::Format(format!("cannot write {}: {e}", path.display())))
}

fn state_file(out: &Path, tau: usize) -> PathBuf {
    out.join(format!("state_{tau}.ckpt"))
}

fn test_file(out: &Path, tau: usize) -> PathBuf {
    out.join("test").join(format!("domain_{tau}.ds"))
}

/// Emit metrics.csv, report.json, and the replay projection for the rows
/// accumulated so far.
fn emit_artifacts(
    out: &Path,
    cfg: &RunConfig,
    entries: &[(usize, usize, f64)],
    state: &EpisodeState,
    tests: &[FeatureDataset],
) -> Result<()> {
    let t_seen = entries.iter().map(|&(t, _, _)| t).max().unwrap_or(0);
    let mut matrix = AccuracyMatrix::new(t_seen);
    for &(time, domain, acc) in entries {
        matrix.set(time, domain, acc)?;
    }
    write_text(&out.join("metrics.csv"), &render_metrics_csv(&matrix))?;
    write_text(
        &out.join("report.json"),
        &render_report_json(&report(&matrix)?),
    )?;

    // replay projection: real test features plus synthetic samples for
    // every seen domain, projected together
    let mut stacked: Option<Tensor2> = None;
    let mut meta: Vec<(i64, usize, bool)> = Vec::new();
    let mut proj_rng = RngStream::new(cfg.seed).substream(PROJ_TAG ^ state.tau as u64);
    for test in tests {
        let tau = test.domain().tau();
        for r in 0..test.n() {
            meta.push((test.labels().map_or(-1, |l| l[r] as i64), tau, false));
        }
        stacked = Some(match stacked {
            None => test.features().clone(),
            Some(acc) => acc.vcat(test.features())?,
        });
        let synth = sample_features(&state.gan, tau, cfg.per_class_replay, &mut proj_rng)?;
        for r in 0..synth.n() {
            meta.push((synth.labels().map_or(-1, |l| l[r] as i64), tau, true));
        }
        stacked = Some(match stacked {
            None => synth.features().clone(),
            Some(acc) => acc.vcat(synth.features())?,
        });
    }
    let stacked = stacked.ok_or_else(|| FridaError::Contract("no test sets to project".into()))?;
    let projection = project2d(&stacked)?;
    if projection.rank_deficient {
        eprintln!("warning: projection data has rank < 2; second axis padded with zeros");
    }
    let points: Vec<ProjPoint> = meta
        .iter()
        .enumerate()
        .map(|(i, &(label, domain, synthetic))| ProjPoint {
            x: projection.coords.get(i, 0),
            y: projection.coords.get(i, 1),
            label,
            domain,
            synthetic,
        })
        .collect();
    write_text(
        &out.join("proj_replay.csv"),
        &render_projection_csv(&points),
    )
}

fn append_manifest(out: &Path, line: &str) -> Result<()> {
    use std::io::Write;
    let path = out.join("manifest.txt");
    let mut file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| FridaError::Format(format!("cannot open {}: {e}", path.display())))?;
    file.write_all(line.as_bytes())
        .map_err(|e| FridaError::Format(format!("cannot write {}: {e}", path.display())))
}

/// Run the full pipeline into an output directory: per-episode state
/// checkpoints, test splits, accumulated metrics, report, projection, and
/// a manifest tying them together.
pub fn run_to_dir(cfg: &RunConfig, out: &Path) -> Result<()> {
    cfg.validate()?;
    cfg.validate_files()?;
    fs::create_dir_all(out.join("test"))
        .map_err(|e| FridaError::Format(format!("cannot create {}: {e}", out.display())))?;
    let canonical = cfg.to_canonical();

    let domains = load_domains(cfg)?;
    if let DataSource::Benchmark(_) = &cfg.data {
        let data_dir = out.join("data");
        fs::create_dir_all(&data_dir).map_err(|e| {
            FridaError::Format(format!("cannot create {}: {e}", data_dir.display()))
        })?;
        for d in &domains {
            write_dataset(d, &data_dir.join(format!("domain_{}.ds", d.domain().tau())))?;
        }
    }
    let prepared: Vec<PreparedDomain> = domains
        .iter()
        .map(|d| split_domain(cfg, d))
        .collect::<Result<_>>()?;
    for p in &prepared {
        write_dataset(&p.test, &test_file(out, p.tau))?;
    }
    let ecfg = cfg.episode_config(domains[0].class_count(), domains[0].dim());

    append_manifest(
        out,
        &format!(
            "FRIDA-RUN v1\nconfig_hash={:016x}\nseed={}\n",
            cfg.hash(),
            cfg.seed
        ),
    )?;

    let mut entries: Vec<(usize, usize, f64)> = Vec::new();
    let (state0, _) = run_episode_0(&ecfg, &prepared[0].train, cfg.seed)?;
    save_state(&state0, &canonical, &state_file(out, 0))?;
    entries.push((0, 0, state_accuracy(&state0, &prepared[0].test)?));
    emit_artifacts(out, cfg, &entries, &state0, &[prepared[0].test.clone()])?;
    append_manifest(out, "episode 0 state_0.ckpt\n")?;

    let mut state = state0;
    for tau in 1..prepared.len() {
        let view = UnlabeledDataset::from_dataset(&prepared[tau].train);
        let (next, _) = run_episode(&state, &view, &ecfg)?;
        save_state(&next, &canonical, &state_file(out, tau))?;
        for (k, p) in prepared.iter().take(tau + 1).enumerate() {
            entries.push((tau, k, state_accuracy(&next, &p.test)?));
        }
        let tests: Vec<FeatureDataset> = prepared
            .iter()
            .take(tau + 1)
            .map(|p| p.test.clone())
            .collect();
        emit_artifacts(out, cfg, &entries, &next, &tests)?;
        append_manifest(out, &format!("episode {tau} state_{tau}.ckpt\n"))?;
        state = next;
    }
    Ok(())
}

/// Continue a run from a saved state with one new dataset file. The output
/// directory is the state file's parent; artifacts there are extended
/// exactly as an uninterrupted run would have.
pub fn resume_in_dir(state_path: &Path, data_path: &Path) -> Result<()> {
    let (state, canonical) = load_state(state_path)?;
    let cfg = RunConfig::parse(&canonical)?;
    if cfg.hash() != state.config_hash {
        return Err(FridaError::Format(
            "embedded config does not hash to the state's config hash".into(),
        ));
    }
    let out = state_path
        .parent()
        .ok_or_else(|| FridaError::Contract("state file has no parent directory".into()))?;
    let tau = state.tau + 1;
    let raw = read_dataset(data_path, cfg.code_width)?;
    if raw.domain().tau() != tau {
        return Err(FridaError::Contract(format!(
            "{} declares domain {}, expected {tau}",
            data_path.display(),
            raw.domain().tau()
        )));
    }
    if !raw.is_labeled() {
        return Err(FridaError::Contract(format!(
            "{} carries no labels; labels are required for evaluation",
            data_path.display()
        )));
    }
    let prepared = split_domain(&cfg, &raw)?;
    write_dataset(&prepared.test, &test_file(out, tau))?;

    let metrics_text = fs::read_to_string(out.join("metrics.csv")).map_err(|e| {
        FridaError::Format(format!(
            "cannot read {}: {e}",
            out.join("metrics.csv").display()
        ))
    })?;
    let existing = parse_metrics_csv(&metrics_text)?;
    let mut entries = existing.entries();
    if existing.t_final() != state.tau {
        return Err(FridaError::Contract(format!(
            "metrics.csv covers time {} but the state is at {}",
            existing.t_final(),
            state.tau
        )));
    }

    let mut tests: Vec<FeatureDataset> = Vec::with_capacity(tau + 1);
    for k in 0..tau {
        tests.push(read_dataset(&test_file(out, k), cfg.code_width)?);
    }
    tests.push(prepared.test.clone());

    let ecfg = cfg.episode_config(state.gan.class_count(), state.gan.dim());
    let view = UnlabeledDataset::from_dataset(&prepared.train);
    let (next, _) = run_episode(&state, &view, &ecfg)?;
    save_state(&next, &canonical, &state_file(out, tau))?;
    for (k, t) in tests.iter().enumerate() {
        entries.push((tau, k, state_accuracy(&next, t)?));
    }
    emit_artifacts(out, &cfg, &entries, &next, &tests)?;
    append_manifest(out, &format!("episode {tau} state_{tau}.ckpt\n"))?;
    Ok(())
}

/// Evaluate a saved state against a directory of test sets
/// (`domain_<tau>.ds` for every seen domain). Returns
/// `(domain, time, accuracy)` rows.
pub fn eval_state_against_dir(
    state_path: &Path,
    testdir: &Path,
) -> Result<Vec<(usize, usize, f64)>> {
    let (state, canonical) = load_state(state_path)?;
    let cfg = RunConfig::parse(&canonical)?;
    let mut rows = Vec::new();
    for id in &state.registry {
        let path = testdir.join(format!("domain_{}.ds", id.tau()));
        if !path.exists() {
            return Err(FridaError::Contract(format!(
                "missing test set for domain {}: {}",
                id.tau(),
                path.display()
            )));
        }
        let test = read_dataset(&path, cfg.code_width)?;
        rows.push((id.tau(), state.tau, state_accuracy(&state, &test)?));
    }
    Ok(rows)
}

/// Draw labeled synthetic features for one seen domain of a saved state.
pub fn sample_from_state(
    state_path: &Path,
    tau: usize,
    per_class: usize,
) -> Result<FeatureDataset> {
    let (state, _) = load_state(state_path)?;
    let mut rng = state
        .rng
        .substream(SAMPLE_TAG ^ ((tau as u64) << 16) ^ per_class as u64);
    sample_features(&state.gan, tau, per_class, &mut rng)
}

/// Render a sampled dataset for stdout.
pub fn render_sample(ds: &FeatureDataset) -> String {
    render_dataset(ds)
}

/// One row of the mode-ablation comparison.
#[derive(Debug, Clone)]
pub struct AblateRow {
    pub mode: DannMode,
    pub target_avg_accuracy: Option<f64>,
    pub source_avg_accuracy: f64,
    pub source_forgetting: f64,
}

/// Run the full pipeline once per discriminator mode and collect the
/// comparison table (binary, multiclass, bottleneck).
pub fn ablate(cfg: &RunConfig) -> Result<Vec<AblateRow>> {
    let mut rows = Vec::with_capacity(3);
    for mode in [DannMode::Binary, DannMode::Multiclass, DannMode::Ib] {
        let mut variant = cfg.clone();
        variant.mode = mode;
        let run = run_in_memory(&variant)?;
        rows.push(AblateRow {
            mode,
            target_avg_accuracy: run.report.target_avg_accuracy,
            source_avg_accuracy: run.report.source_avg_accuracy,
            source_forgetting: run.report.source_forgetting,
        });
    }
    Ok(rows)
}
