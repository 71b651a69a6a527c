//! Metrics and projection emission: `metrics.csv`, `report.json`, and
//! `proj_<tag>.csv`. The CSV is also parseable so a resumed run can rebuild
//! its accuracy matrix from disk; floats round-trip exactly through the
//! shortest decimal representation.

use frida_core::error::{FridaError, Result};
use frida_core::metrics::{AccuracyMatrix, MetricsReport};

/// Render `metrics.csv`: one row per (domain, time) accuracy entry,
/// ordered by time then domain.
pub fn render_metrics_csv(matrix: &AccuracyMatrix) -> String {
    let mut out = String::from("domain,time,accuracy\n");
    for (time, domain, acc) in matrix.entries() {
        out.push_str(&format!("{domain},{time},{acc}\n"));
    }
    out
}

/// Parse `metrics.csv` back into a matrix sized by the largest time.
pub fn parse_metrics_csv(text: &str) -> Result<AccuracyMatrix> {
    let mut rows: Vec<(usize, usize, f64)> = Vec::new();
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "domain,time,accuracy")) => {}
        _ => {
            return Err(FridaError::Parse {
                line: 1,
                message: "metrics.csv must start with 'domain,time,accuracy'".into(),
            })
        }
    }
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(FridaError::Parse {
                line: line_no,
                message: format!("expected 3 fields, found {}", fields.len()),
            });
        }
        let domain: usize = fields[0].parse().map_err(|_| FridaError::Parse {
            line: line_no,
            message: format!("bad domain '{}'", fields[0]),
        })?;
        let time: usize = fields[1].parse().map_err(|_| FridaError::Parse {
            line: line_no,
            message: format!("bad time '{}'", fields[1]),
        })?;
        let acc: f64 = fields[2].parse().map_err(|_| FridaError::Parse {
            line: line_no,
            message: format!("bad accuracy '{}'", fields[2]),
        })?;
        rows.push((time, domain, acc));
    }
    let t_final = rows.iter().map(|&(t, _, _)| t).max().unwrap_or(0);
    let mut matrix = AccuracyMatrix::new(t_final);
    for (time, domain, acc) in rows {
        matrix.set(time, domain, acc)?;
    }
    Ok(matrix)
}

fn json_f64(v: f64) -> String {
    // f64 Display never emits exponents or non-finite tokens for the values
    // that reach a report (accuracies and their differences)
    format!("{v}")
}

fn json_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => json_f64(x),
        None => "null".into(),
    }
}

/// Render `report.json` mirroring the metrics report.
pub fn render_report_json(report: &MetricsReport) -> String {
    let mut out = String::from("{\n  \"domains\": [\n");
    for (i, d) in report.domains.iter().enumerate() {
        out.push_str(&format!(
            "    {{\"domain\": {}, \"avg_accuracy\": {}, \"forgetting\": {}, \
             \"final_accuracy\": {}, \"evaluations\": {}}}{}\n",
            d.domain,
            json_f64(d.avg_accuracy),
            json_f64(d.forgetting),
            json_f64(d.final_accuracy),
            d.evaluations,
            if i + 1 < report.domains.len() {
                ","
            } else {
                ""
            },
        ));
    }
    out.push_str("  ],\n");
    out.push_str(&format!(
        "  \"source\": {{\"avg_accuracy\": {}, \"forgetting\": {}}},\n",
        json_f64(report.source_avg_accuracy),
        json_f64(report.source_forgetting),
    ));
    out.push_str(&format!(
        "  \"targets\": {{\"avg_accuracy\": {}, \"forgetting\": {}}}\n",
        json_opt(report.target_avg_accuracy),
        json_opt(report.target_forgetting),
    ));
    out.push_str("}\n");
    out
}

/// One point of a 2-D projection dump.
#[derive(Debug, Clone, Copy)]
pub struct ProjPoint {
    pub x: f64,
    pub y: f64,
    /// Class label, -1 when unknown.
    pub label: i64,
    pub domain: usize,
    pub synthetic: bool,
}

/// Render `proj_<tag>.csv`.
pub fn render_projection_csv(points: &[ProjPoint]) -> String {
    let mut out = String::from("x,y,label,domain,real_or_synth\n");
    for p in points {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            p.x,
            p.y,
            p.label,
            p.domain,
            if p.synthetic { "synth" } else { "real" }
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use frida_core::metrics::report;

    #[test]
    fn metrics_csv_round_trips() {
        let mut m = AccuracyMatrix::new(2);
        m.set(0, 0, 0.75).unwrap();
        m.set(1, 0, 0.5).unwrap();
        m.set(1, 1, 1.0 / 3.0).unwrap();
        m.set(2, 0, 0.25).unwrap();
        m.set(2, 1, 0.9).unwrap();
        m.set(2, 2, 0.125).unwrap();
        let text = render_metrics_csv(&m);
        let back = parse_metrics_csv(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(render_metrics_csv(&back), text);
    }

    #[test]
    fn csv_and_json_agree() {
        let mut m = AccuracyMatrix::new(1);
        m.set(0, 0, 0.8).unwrap();
        m.set(1, 0, 0.7).unwrap();
        m.set(1, 1, 0.6).unwrap();
        let json_direct = render_report_json(&report(&m).unwrap());
        let reparsed = parse_metrics_csv(&render_metrics_csv(&m)).unwrap();
        let json_via_csv = render_report_json(&report(&reparsed).unwrap());
        assert_eq!(json_direct, json_via_csv);
    }

    #[test]
    fn bad_csv_lines_are_located() {
        let text = "domain,time,accuracy\n0,0,0.5\nnope\n";
        match parse_metrics_csv(text) {
            Err(FridaError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn projection_csv_format() {
        let points = vec![
            ProjPoint {
                x: 1.5,
                y: -2.0,
                label: 0,
                domain: 0,
                synthetic: false,
            },
            ProjPoint {
                x: 0.25,
                y: 0.0,
                label: -1,
                domain: 1,
                synthetic: true,
            },
        ];
        let text = render_projection_csv(&points);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "x,y,label,domain,real_or_synth");
        assert_eq!(lines[1], "1.5,-2,0,0,real");
        assert_eq!(lines[2], "0.25,0,-1,1,synth");
    }
}
