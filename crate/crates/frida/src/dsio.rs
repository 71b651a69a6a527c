//! Dataset file format (text, UTF-8).
//!
//! Line 1: `FRIDA-DS v1 n=<n> d=<d> C=<C> domain=<tau>`. Each following
//! line holds `d` decimal floats then one integer label, space-separated;
//! label `-1` marks an unlabeled row. Floats are serialized with 17
//! significant digits so a write/read round trip is bit-exact.

use std::fs;
use std::io::Write;
use std::path::Path;

use frida_core::data::{DomainId, FeatureDataset};
use frida_core::error::{FridaError, Result};
use frida_core::tensor::Tensor2;

/// Render a float with 17 significant digits.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Serialize a dataset to the text format.
pub fn render_dataset(ds: &FeatureDataset) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "FRIDA-DS v1 n={} d={} C={} domain={}\n",
        ds.n(),
        ds.dim(),
        ds.class_count(),
        ds.domain().tau()
    ));
    for r in 0..ds.n() {
        let mut line = String::new();
        for (i, v) in ds.features().row(r).iter().enumerate() {
            if i > 0 {
                line.push(' ');
            }
            line.push_str(&format_f64(*v));
        }
        match ds.labels() {
            Some(labels) => line.push_str(&format!(" {}", labels[r] as i64)),
            None => line.push_str(" -1"),
        }
        out.push_str(&line);
        out.push('\n');
    }
    out
}

/// Parse the text format. `code_width` sizes the in-memory domain code.
pub fn parse_dataset(text: &str, code_width: usize) -> Result<FeatureDataset> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| FridaError::Parse {
        line: 1,
        message: "empty file".into(),
    })?;
    let (n, d, c, tau) = parse_header(header)?;
    let mut data = Vec::with_capacity(n * d);
    let mut labels: Vec<i64> = Vec::with_capacity(n);
    let mut rows = 0usize;
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        if rows == n {
            return Err(FridaError::Parse {
                line: line_no,
                message: format!("more than the declared n={n} rows"),
            });
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != d + 1 {
            return Err(FridaError::Parse {
                line: line_no,
                message: format!("expected {} values then a label, found {}", d, fields.len()),
            });
        }
        for f in &fields[..d] {
            let v: f64 = f.parse().map_err(|_| FridaError::Parse {
                line: line_no,
                message: format!("'{f}' is not a float"),
            })?;
            if !v.is_finite() {
                return Err(FridaError::Parse {
                    line: line_no,
                    message: "non-finite feature value".into(),
                });
            }
            data.push(v);
        }
        let label: i64 = fields[d].parse().map_err(|_| FridaError::Parse {
            line: line_no,
            message: format!("'{}' is not an integer label", fields[d]),
        })?;
        if label != -1 && (label < 0 || label as usize >= c) {
            return Err(FridaError::Parse {
                line: line_no,
                message: format!("label {label} outside [0, {c}) and not the -1 sentinel"),
            });
        }
        labels.push(label);
        rows += 1;
    }
    if rows != n {
        return Err(FridaError::Parse {
            line: rows + 1,
            message: format!("declared n={n} but found {rows} rows"),
        });
    }
    let unlabeled = labels.iter().all(|&l| l == -1);
    let fully_labeled = labels.iter().all(|&l| l >= 0);
    if !unlabeled && !fully_labeled {
        let first_bad = labels.iter().position(|&l| l == -1).unwrap_or(0);
        return Err(FridaError::Parse {
            line: first_bad + 2,
            message: "file mixes labeled rows with the -1 sentinel".into(),
        });
    }
    let features = Tensor2::from_vec(n, d, data)?;
    let label_vec = if unlabeled {
        None
    } else {
        Some(labels.iter().map(|&l| l as usize).collect())
    };
    FeatureDataset::new(features, label_vec, DomainId::new(tau, code_width)?, c)
}

fn parse_header(header: &str) -> Result<(usize, usize, usize, usize)> {
    let bad = |message: String| FridaError::Parse { line: 1, message };
    let mut parts = header.split_whitespace();
    if parts.next() != Some("FRIDA-DS") || parts.next() != Some("v1") {
        return Err(bad("header must start with 'FRIDA-DS v1'".into()));
    }
    let mut n = None;
    let mut d = None;
    let mut c = None;
    let mut tau = None;
    for field in parts {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| bad(format!("malformed header field '{field}'")))?;
        let parsed: usize = value
            .parse()
            .map_err(|_| bad(format!("'{value}' is not a count in '{field}'")))?;
        match key {
            "n" => n = Some(parsed),
            "d" => d = Some(parsed),
            "C" => c = Some(parsed),
            "domain" => tau = Some(parsed),
            other => return Err(bad(format!("unknown header field '{other}'"))),
        }
    }
    match (n, d, c, tau) {
        (Some(n), Some(d), Some(c), Some(tau)) => Ok((n, d, c, tau)),
        _ => Err(bad("header needs n=, d=, C=, domain=".into())),
    }
}

/// Write a dataset file.
pub fn write_dataset(ds: &FeatureDataset, path: &Path) -> Result<()> {
    let text = render_dataset(ds);
    let mut file = fs::File::create(path)
        .map_err(|e| FridaError::Format(format!("cannot create {}: {e}", path.display())))?;
    file.write_all(text.as_bytes())
        .map_err(|e| FridaError::Format(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

/// Read a dataset file.
pub fn read_dataset(path: &Path, code_width: usize) -> Result<FeatureDataset> {
    let text = fs::read_to_string(path)
        .map_err(|e| FridaError::Format(format!("cannot read {}: {e}", path.display())))?;
    parse_dataset(&text, code_width)
}

#[cfg(test)]
mod tests {
    use super::*;
    use frida_core::rng::{gauss_sample, RngStream};

    fn sample(labeled: bool) -> FeatureDataset {
        let mut rng = RngStream::new(3);
        let features = gauss_sample(&mut rng, 7, 4);
        let labels = labeled.then(|| (0..7).map(|i| i % 3).collect());
        FeatureDataset::new(features, labels, DomainId::new(2, 3).unwrap(), 3).unwrap()
    }

    #[test]
    fn round_trip_is_lossless() {
        for labeled in [true, false] {
            let ds = sample(labeled);
            let parsed = parse_dataset(&render_dataset(&ds), 3).unwrap();
            assert_eq!(parsed, ds);
            // and the text itself is a fixed point
            assert_eq!(render_dataset(&parsed), render_dataset(&ds));
        }
    }

    #[test]
    fn sentinel_column_reads_as_unlabeled() {
        let text = "FRIDA-DS v1 n=2 d=2 C=4 domain=0\n1.0 2.0 -1\n3.0 4.0 -1\n";
        let ds = parse_dataset(text, 3).unwrap();
        assert!(!ds.is_labeled());
        assert_eq!(ds.n(), 2);
    }

    #[test]
    fn short_row_names_its_line() {
        let text = "FRIDA-DS v1 n=2 d=3 C=2 domain=0\n1.0 2.0 3.0 0\n1.0 2.0 1\n";
        match parse_dataset(text, 3) {
            Err(FridaError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn label_out_of_range_names_its_line() {
        let text = "FRIDA-DS v1 n=1 d=2 C=2 domain=0\n1.0 2.0 5\n";
        match parse_dataset(text, 3) {
            Err(FridaError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_header_is_line_one() {
        match parse_dataset("FRIDA-DS v2 n=1 d=1 C=1 domain=0\n0.0 -1\n", 3) {
            Err(FridaError::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn mixed_labels_rejected() {
        let text = "FRIDA-DS v1 n=2 d=1 C=2 domain=0\n1.0 0\n2.0 -1\n";
        assert!(matches!(
            parse_dataset(text, 3),
            Err(FridaError::Parse { .. })
        ));
    }

    #[test]
    fn domain_beyond_code_width_is_capacity_error() {
        let text = "FRIDA-DS v1 n=1 d=1 C=2 domain=9\n1.0 -1\n";
        assert!(matches!(
            parse_dataset(text, 3),
            Err(FridaError::Capacity { .. })
        ));
    }

    #[test]
    fn file_round_trip() {
        let dir = std::env::temp_dir().join("frida_dsio_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("ds.txt");
        let ds = sample(true);
        write_dataset(&ds, &path).unwrap();
        let back = read_dataset(&path, 3).unwrap();
        assert_eq!(back, ds);
        std::fs::remove_dir_all(&dir).ok();
    }
}
