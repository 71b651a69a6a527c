//! Checkpoint formats.
//!
//! Model blocks share one layout: a header line
//! `FRIDA-CKPT v1 <component> tau=<tau>` followed by per-tensor records of
//! `name_len: u32 LE | name | rows: u64 LE | cols: u64 LE | data: f64 LE`.
//! A `meta` record carries the scalar sizes. Round trips are bit-exact.
//!
//! Episode state files wrap the model blocks in a `FRIDA-STATE` envelope
//! holding the time stamp, the RNG position, the domain registry, the full
//! canonical run configuration (so `resume` is self-contained), and a
//! trailing FNV-1a checksum that turns any tampered or truncated byte into
//! a load error instead of silent corruption.

use std::fs;
use std::path::Path;

use frida_core::dannib::{DannIbModel, DannMode};
use frida_core::data::DomainId;
use frida_core::dgacgan::GanModel;
use frida_core::episode::EpisodeState;
use frida_core::error::{FridaError, Result};
use frida_core::net::{Activation, DenseLayer, DenseNet};
use frida_core::rng::RngStream;
use frida_core::tensor::Tensor2;

use crate::fnv1a64;

fn push_record(buf: &mut Vec<u8>, name: &str, t: &Tensor2) {
    buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
    buf.extend_from_slice(&(t.rows() as u64).to_le_bytes());
    buf.extend_from_slice(&(t.cols() as u64).to_le_bytes());
    for v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn read_record(bytes: &[u8], pos: &mut usize) -> Result<(String, Tensor2)> {
    let take = |pos: &mut usize, len: usize| -> Result<&[u8]> {
        if *pos + len > bytes.len() {
            return Err(FridaError::Format("checkpoint truncated mid-record".into()));
        }
        let out = &bytes[*pos..*pos + len];
        *pos += len;
        Ok(out)
    };
    let name_len = u32::from_le_bytes(take(pos, 4)?.try_into().unwrap()) as usize;
    if name_len > 4096 {
        return Err(FridaError::Format("implausible record name length".into()));
    }
    let name = String::from_utf8(take(pos, name_len)?.to_vec())
        .map_err(|_| FridaError::Format("record name is not UTF-8".into()))?;
    let rows = u64::from_le_bytes(take(pos, 8)?.try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(take(pos, 8)?.try_into().unwrap()) as usize;
    let count = rows
        .checked_mul(cols)
        .ok_or_else(|| FridaError::Format("record size overflow".into()))?;
    let raw = take(pos, count * 8)?;
    let mut data = Vec::with_capacity(count);
    for chunk in raw.chunks_exact(8) {
        data.push(f64::from_le_bytes(chunk.try_into().unwrap()));
    }
    Ok((name, Tensor2::from_vec(rows, cols, data)?))
}

fn block_header(component: &str, tau: usize) -> String {
    format!("FRIDA-CKPT v1 {component} tau={tau}\n")
}

fn parse_block_header<'a>(bytes: &'a [u8], component: &str) -> Result<(usize, &'a [u8])> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| FridaError::Format("checkpoint missing header line".into()))?;
    let line = std::str::from_utf8(&bytes[..nl])
        .map_err(|_| FridaError::Format("checkpoint header is not UTF-8".into()))?;
    let mut parts = line.split_whitespace();
    if parts.next() != Some("FRIDA-CKPT") {
        return Err(FridaError::Format("not a FRIDA-CKPT block".into()));
    }
    match parts.next() {
        Some("v1") => {}
        Some(other) => {
            return Err(FridaError::Format(format!(
                "unsupported checkpoint version '{other}'"
            )))
        }
        None => return Err(FridaError::Format("checkpoint header too short".into())),
    }
    if parts.next() != Some(component) {
        return Err(FridaError::Format(format!(
            "expected a '{component}' checkpoint block"
        )));
    }
    let tau_field = parts
        .next()
        .ok_or_else(|| FridaError::Format("checkpoint header missing tau".into()))?;
    let tau: usize = tau_field
        .strip_prefix("tau=")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| FridaError::Format(format!("malformed tau field '{tau_field}'")))?;
    Ok((tau, &bytes[nl + 1..]))
}

fn read_all_records(bytes: &[u8]) -> Result<Vec<(String, Tensor2)>> {
    let mut pos = 0;
    let mut out = Vec::new();
    while pos < bytes.len() {
        out.push(read_record(bytes, &mut pos)?);
    }
    Ok(out)
}

fn net_records(buf: &mut Vec<u8>, prefix: &str, net: &DenseNet) {
    for (i, layer) in net.layers().iter().enumerate() {
        push_record(buf, &format!("{prefix}.l{i}.w"), &layer.w);
        push_record(buf, &format!("{prefix}.l{i}.b"), &layer.b);
    }
}

/// Rebuild a dense net from records named `<prefix>.l<i>.w` / `.b`.
/// `acts` picks each layer's activation given `(index, layer_count)`.
fn net_from_records(
    records: &[(String, Tensor2)],
    prefix: &str,
    acts: impl Fn(usize, usize) -> Activation,
) -> Result<DenseNet> {
    let mut ws: Vec<(usize, &Tensor2)> = Vec::new();
    let mut bs: Vec<(usize, &Tensor2)> = Vec::new();
    for (name, tensor) in records {
        if let Some(rest) = name.strip_prefix(prefix) {
            let rest = rest
                .strip_prefix(".l")
                .ok_or_else(|| FridaError::Format(format!("bad record name '{name}'")))?;
            let (idx, kind) = rest
                .split_once('.')
                .ok_or_else(|| FridaError::Format(format!("bad record name '{name}'")))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| FridaError::Format(format!("bad layer index in '{name}'")))?;
            match kind {
                "w" => ws.push((idx, tensor)),
                "b" => bs.push((idx, tensor)),
                _ => return Err(FridaError::Format(format!("bad record name '{name}'"))),
            }
        }
    }
    if ws.is_empty() || ws.len() != bs.len() {
        return Err(FridaError::Format(format!("incomplete '{prefix}' records")));
    }
    ws.sort_by_key(|(i, _)| *i);
    bs.sort_by_key(|(i, _)| *i);
    let count = ws.len();
    let mut layers = Vec::with_capacity(count);
    for (i, ((wi, w), (bi, b))) in ws.into_iter().zip(bs).enumerate() {
        if wi != i || bi != i {
            return Err(FridaError::Format(format!(
                "non-contiguous layers under '{prefix}'"
            )));
        }
        layers.push(DenseLayer {
            w: (*w).clone(),
            b: (*b).clone(),
            act: acts(i, count),
        });
    }
    DenseNet::from_layers(layers)
}

fn meta_of(records: &[(String, Tensor2)], expected_len: usize) -> Result<Vec<usize>> {
    let meta = records
        .iter()
        .find(|(n, _)| n == "meta")
        .ok_or_else(|| FridaError::Format("checkpoint missing meta record".into()))?;
    if meta.1.rows() != 1 || meta.1.cols() != expected_len {
        return Err(FridaError::Format("meta record has the wrong shape".into()));
    }
    Ok(meta.1.data().iter().map(|&v| v as usize).collect())
}

/// Serialize a GAN model block. `tau` is the episode time stamp.
pub fn encode_gan(model: &GanModel, tau: usize) -> Vec<u8> {
    let mut buf = block_header("gan", tau).into_bytes();
    let meta = Tensor2::row_vector(&[
        model.z_dim() as f64,
        model.class_count() as f64,
        model.dim() as f64,
        model.code_width() as f64,
    ]);
    push_record(&mut buf, "meta", &meta);
    net_records(&mut buf, "gen", &model.generator);
    net_records(&mut buf, "trunk", &model.trunk);
    net_records(&mut buf, "head_rf", &model.head_rf);
    net_records(&mut buf, "head_cls", &model.head_cls);
    buf
}

/// Decode a GAN model block; returns the model and the header time stamp.
pub fn decode_gan(bytes: &[u8]) -> Result<(GanModel, usize)> {
    let (tau, body) = parse_block_header(bytes, "gan")?;
    let records = read_all_records(body)?;
    let meta = meta_of(&records, 4)?;
    let (z_dim, c, d, w) = (meta[0], meta[1], meta[2], meta[3]);
    let generator = net_from_records(&records, "gen", |i, n| {
        if i + 1 == n {
            Activation::Identity
        } else {
            Activation::Relu
        }
    })?;
    let trunk = net_from_records(&records, "trunk", |_, _| Activation::LeakyRelu)?;
    let head_rf = net_from_records(&records, "head_rf", |_, _| Activation::Identity)?;
    let head_cls = net_from_records(&records, "head_cls", |_, _| Activation::Identity)?;
    let model = GanModel::from_parts(
        generator,
        trunk,
        head_rf,
        head_cls,
        z_dim,
        c,
        d,
        w,
        Some(tau),
    )?;
    Ok((model, tau))
}

fn mode_code(mode: DannMode) -> f64 {
    match mode {
        DannMode::Binary => 0.0,
        DannMode::Multiclass => 1.0,
        DannMode::Ib => 2.0,
    }
}

fn mode_from_code(code: usize) -> Result<DannMode> {
    match code {
        0 => Ok(DannMode::Binary),
        1 => Ok(DannMode::Multiclass),
        2 => Ok(DannMode::Ib),
        other => Err(FridaError::Format(format!(
            "unknown adapter mode code {other}"
        ))),
    }
}

/// Serialize an adaptation-model block.
pub fn encode_dann(model: &DannIbModel, tau: usize) -> Vec<u8> {
    let mut buf = block_header("dannib", tau).into_bytes();
    let meta = Tensor2::row_vector(&[
        model.latent_dim() as f64,
        model.class_count() as f64,
        model.dim() as f64,
        mode_code(model.mode()),
    ]);
    push_record(&mut buf, "meta", &meta);
    net_records(&mut buf, "enc", &model.encoder);
    net_records(&mut buf, "head_task", &model.head_task);
    net_records(&mut buf, "head_dom", &model.head_dom);
    buf
}

/// Decode an adaptation-model block.
pub fn decode_dann(bytes: &[u8]) -> Result<(DannIbModel, usize)> {
    let (tau, body) = parse_block_header(bytes, "dannib")?;
    let records = read_all_records(body)?;
    let meta = meta_of(&records, 4)?;
    let (latent, c, d, mode) = (meta[0], meta[1], meta[2], mode_from_code(meta[3])?);
    let encoder = net_from_records(&records, "enc", |i, n| {
        if i + 1 == n {
            Activation::Identity
        } else {
            Activation::Relu
        }
    })?;
    let head_task = net_from_records(&records, "head_task", |_, _| Activation::Identity)?;
    let head_dom = net_from_records(&records, "head_dom", |_, _| Activation::Identity)?;
    let model = DannIbModel::from_parts(encoder, head_task, head_dom, latent, c, d, mode)?;
    Ok((model, tau))
}

const CRC_LINE_LEN: usize = 4 + 16 + 1; // "crc " + 16 hex + newline

/// Serialize an episode state with its canonical configuration text.
pub fn render_state(state: &EpisodeState, config_text: &str) -> Vec<u8> {
    let (seed, counter) = state.rng.parts();
    let width = state.registry.first().map_or(0, |d| d.width());
    let taus: Vec<String> = state.registry.iter().map(|d| d.tau().to_string()).collect();
    let mut buf = format!(
        "FRIDA-STATE v1 tau={} seed={} counter={} cfg={:016x} da={} registry={}:{}\n",
        state.tau,
        seed,
        counter,
        state.config_hash,
        state.da.is_some() as u8,
        width,
        taus.join(","),
    )
    .into_bytes();
    buf.extend_from_slice(format!("config {}\n", config_text.len()).as_bytes());
    buf.extend_from_slice(config_text.as_bytes());
    buf.push(b'\n');
    let gan_block = encode_gan(&state.gan, state.tau);
    buf.extend_from_slice(format!("block gan {}\n", gan_block.len()).as_bytes());
    buf.extend_from_slice(&gan_block);
    if let Some(da) = &state.da {
        let da_block = encode_dann(da, state.tau);
        buf.extend_from_slice(format!("block dannib {}\n", da_block.len()).as_bytes());
        buf.extend_from_slice(&da_block);
    }
    let crc = fnv1a64(&buf);
    buf.extend_from_slice(format!("crc {crc:016x}\n").as_bytes());
    buf
}

/// Parse an episode state; returns the state and the embedded config text.
pub fn parse_state(bytes: &[u8]) -> Result<(EpisodeState, String)> {
    if bytes.len() < CRC_LINE_LEN {
        return Err(FridaError::Format("state file truncated".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - CRC_LINE_LEN);
    let tail_str = std::str::from_utf8(tail)
        .map_err(|_| FridaError::Format("state checksum line is not UTF-8".into()))?;
    let stored = tail_str
        .strip_prefix("crc ")
        .and_then(|s| s.strip_suffix('\n'))
        .and_then(|s| u64::from_str_radix(s, 16).ok())
        .ok_or_else(|| FridaError::Format("state checksum line malformed or truncated".into()))?;
    let actual = fnv1a64(body);
    if stored != actual {
        return Err(FridaError::Format(format!(
            "state checksum mismatch: stored {stored:016x}, computed {actual:016x}"
        )));
    }

    let mut pos = 0usize;
    let header = take_line(body, &mut pos)?;
    let fields = parse_state_header(&header)?;
    let config_line = take_line(body, &mut pos)?;
    let config_len: usize = config_line
        .strip_prefix("config ")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| FridaError::Format("malformed config length line".into()))?;
    if pos + config_len + 1 > body.len() {
        return Err(FridaError::Format(
            "state file truncated inside config".into(),
        ));
    }
    let config_text = String::from_utf8(body[pos..pos + config_len].to_vec())
        .map_err(|_| FridaError::Format("embedded config is not UTF-8".into()))?;
    pos += config_len;
    if body[pos] != b'\n' {
        return Err(FridaError::Format(
            "missing newline after embedded config".into(),
        ));
    }
    pos += 1;

    let recomputed = fnv1a64(config_text.as_bytes());
    if recomputed != fields.cfg {
        return Err(FridaError::Format(format!(
            "config hash mismatch: header says {:016x}, embedded config hashes to {recomputed:016x}",
            fields.cfg
        )));
    }

    let gan_bytes = take_block(body, &mut pos, "gan")?;
    let (mut gan, gan_tau) = decode_gan(gan_bytes)?;
    if gan_tau != fields.tau {
        return Err(FridaError::Format(format!(
            "gan block time stamp {gan_tau} disagrees with state time stamp {}",
            fields.tau
        )));
    }
    gan.set_trained_through(Some(fields.tau));
    let da = if fields.has_da {
        let da_bytes = take_block(body, &mut pos, "dannib")?;
        let (model, da_tau) = decode_dann(da_bytes)?;
        if da_tau != fields.tau {
            return Err(FridaError::Format(
                "dannib block time stamp mismatch".into(),
            ));
        }
        Some(model)
    } else {
        None
    };
    if pos != body.len() {
        return Err(FridaError::Format(
            "trailing bytes after the last block".into(),
        ));
    }

    if fields.registry.len() != fields.tau + 1 {
        return Err(FridaError::Format(format!(
            "registry lists {} domains for time stamp {}",
            fields.registry.len(),
            fields.tau
        )));
    }
    let mut registry = Vec::with_capacity(fields.registry.len());
    for &tau in &fields.registry {
        registry.push(DomainId::new(tau, fields.width)?);
    }
    let state = EpisodeState {
        tau: fields.tau,
        gan,
        da,
        registry,
        rng: RngStream::from_parts(fields.seed, fields.counter),
        config_hash: fields.cfg,
    };
    Ok((state, config_text))
}

struct StateHeader {
    tau: usize,
    seed: u64,
    counter: u64,
    cfg: u64,
    has_da: bool,
    width: usize,
    registry: Vec<usize>,
}

fn parse_state_header(line: &str) -> Result<StateHeader> {
    let bad = |msg: &str| FridaError::Format(format!("state header: {msg}"));
    let mut parts = line.split_whitespace();
    if parts.next() != Some("FRIDA-STATE") {
        return Err(bad("not a FRIDA-STATE file"));
    }
    match parts.next() {
        Some("v1") => {}
        Some(v) => {
            return Err(FridaError::Format(format!(
                "unsupported state version '{v}'"
            )))
        }
        None => return Err(bad("missing version")),
    }
    let mut tau = None;
    let mut seed = None;
    let mut counter = None;
    let mut cfg = None;
    let mut has_da = None;
    let mut registry = None;
    let mut width = None;
    for field in parts {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| bad(&format!("malformed field '{field}'")))?;
        match key {
            "tau" => tau = value.parse().ok(),
            "seed" => seed = value.parse().ok(),
            "counter" => counter = value.parse().ok(),
            "cfg" => cfg = u64::from_str_radix(value, 16).ok(),
            "da" => {
                has_da = match value {
                    "0" => Some(false),
                    "1" => Some(true),
                    _ => None,
                }
            }
            "registry" => {
                let (w, taus) = value
                    .split_once(':')
                    .ok_or_else(|| bad("malformed registry"))?;
                width = w.parse().ok();
                let parsed: Option<Vec<usize>> = taus.split(',').map(|t| t.parse().ok()).collect();
                registry = parsed;
            }
            other => return Err(bad(&format!("unknown field '{other}'"))),
        }
    }
    Ok(StateHeader {
        tau: tau.ok_or_else(|| bad("missing tau"))?,
        seed: seed.ok_or_else(|| bad("missing seed"))?,
        counter: counter.ok_or_else(|| bad("missing counter"))?,
        cfg: cfg.ok_or_else(|| bad("missing cfg"))?,
        has_da: has_da.ok_or_else(|| bad("missing da flag"))?,
        width: width.ok_or_else(|| bad("missing registry width"))?,
        registry: registry.ok_or_else(|| bad("missing registry"))?,
    })
}

fn take_line(bytes: &[u8], pos: &mut usize) -> Result<String> {
    let rest = &bytes[*pos..];
    let nl = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| FridaError::Format("state file truncated mid-line".into()))?;
    let line = std::str::from_utf8(&rest[..nl])
        .map_err(|_| FridaError::Format("state line is not UTF-8".into()))?
        .to_string();
    *pos += nl + 1;
    Ok(line)
}

fn take_block<'a>(bytes: &'a [u8], pos: &mut usize, component: &str) -> Result<&'a [u8]> {
    let line = take_line(bytes, pos)?;
    let len: usize = line
        .strip_prefix(&format!("block {component} "))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| {
            FridaError::Format(format!(
                "expected 'block {component} <len>', found '{line}'"
            ))
        })?;
    if *pos + len > bytes.len() {
        return Err(FridaError::Format(format!(
            "state file truncated inside {component} block"
        )));
    }
    let out = &bytes[*pos..*pos + len];
    *pos += len;
    Ok(out)
}

/// Write an episode state file.
pub fn save_state(state: &EpisodeState, config_text: &str, path: &Path) -> Result<()> {
    fs::write(path, render_state(state, config_text))
        .map_err(|e| FridaError::Format(format!("cannot write {}: {e}", path.display())))
}

/// Read an episode state file; returns the state and embedded config text.
pub fn load_state(path: &Path) -> Result<(EpisodeState, String)> {
    let bytes = fs::read(path)
        .map_err(|e| FridaError::Format(format!("cannot read {}: {e}", path.display())))?;
    parse_state(&bytes)
}
