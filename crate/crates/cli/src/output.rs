//! CSV and JSON writers. Every file is written through a temp file and a
//! rename, so readers never see a half-written table.

use std::path::Path;

use defend_core::graph::io::write_atomic;
use defend_core::LossReport;
use serde::Serialize;

use crate::error::CliResult;

pub fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| std::io::Error::other(e.to_string()))?;
    write_atomic(path, &bytes)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)?;
    Ok(())
}

pub const HISTORY_HEADER: [&str; 10] = [
    "phase", "epoch", "rec_x", "rec_a", "kl", "dis", "pre", "adv", "corr", "total",
];

pub fn history_rows(phase: &str, history: &[LossReport]) -> Vec<Vec<String>> {
    history
        .iter()
        .enumerate()
        .map(|(e, r)| {
            vec![
                phase.to_string(),
                e.to_string(),
                cell(r.rec_x),
                cell(r.rec_a),
                cell(r.kl),
                cell(r.dis),
                cell(r.pre),
                cell(r.adv),
                cell(r.corr),
                r.total.to_string(),
            ]
        })
        .collect()
}

pub fn write_scores(path: &Path, scores: &[f64]) -> CliResult<()> {
    let rows: Vec<Vec<String>> = scores
        .iter()
        .enumerate()
        .map(|(i, s)| vec![i.to_string(), s.to_string()])
        .collect();
    write_csv(path, &["id", "score"], &rows)
}

pub fn read_scores(path: &Path) -> CliResult<Vec<f64>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let id: usize = rec.get(0).and_then(|v| v.parse().ok()).ok_or_else(|| {
            crate::error::CliError::Input(format!("{}: bad id on row {}", path.display(), row + 2))
        })?;
        let score: f64 = rec.get(1).and_then(|v| v.parse().ok()).ok_or_else(|| {
            crate::error::CliError::Input(format!(
                "{}: bad score on row {}",
                path.display(),
                row + 2
            ))
        })?;
        if id != out.len() {
            return Err(crate::error::CliError::Input(format!(
                "{}: ids must run 0..n in order",
                path.display()
            )));
        }
        out.push(score);
    }
    Ok(out)
}

/// Rows on the upper-left front: no other row has at least the same
/// `auc` and at most the same `gap`, with one of the two strictly better.
pub fn pareto_front(points: &[(f64, f64)]) -> Vec<usize> {
    (0..points.len())
        .filter(|&i| {
            let (a, g) = points[i];
            !points
                .iter()
                .any(|&(b, h)| b >= a && h <= g && (b > a || h < g))
        })
        .collect()
}
