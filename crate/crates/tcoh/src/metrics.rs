//! Per-epoch training metrics as CSV.
//!
//! Header: `epoch,ul_grad_norm_0,...,ul_grad_norm_{k-1},eval_metric,seconds`.
//! A missing eval metric is an empty cell. Floats use Rust's shortest
//! round-trip formatting, so parsing a file gives back the exact rows.

use std::fmt::Write as _;

use thiserror::Error;

use crate::dataset_io::format_f64;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    /// Mean local-gradient norm per UL layer, bottom to top.
    pub ul_grad_norms: Vec<f64>,
    /// Total absolute decoding error or centroid correlation, depending on the eval spec.
    pub eval_metric: Option<f64>,
    /// Wall-clock seconds spent on the epoch, including evaluation.
    pub seconds: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("metrics file is empty")]
    Empty,
    #[error("unexpected header {0:?}")]
    Header(String),
    #[error("line {line}: {msg}")]
    Row { line: usize, msg: String },
}

pub fn header(ul_layers: usize) -> String {
    let mut h = String::from("epoch");
    for i in 0..ul_layers {
        write!(h, ",ul_grad_norm_{i}").expect("string write");
    }
    h.push_str(",eval_metric,seconds");
    h
}

pub fn format_row(row: &MetricsRow) -> String {
    let mut s = row.epoch.to_string();
    for v in &row.ul_grad_norms {
        write!(s, ",{}", format_f64(*v)).expect("string write");
    }
    s.push(',');
    if let Some(m) = row.eval_metric {
        s.push_str(&format_f64(m));
    }
    write!(s, ",{}", format_f64(row.seconds)).expect("string write");
    s
}

pub fn to_csv(ul_layers: usize, rows: &[MetricsRow]) -> String {
    let mut out = header(ul_layers);
    out.push('\n');
    for r in rows {
        out.push_str(&format_row(r));
        out.push('\n');
    }
    out
}

pub fn parse(text: &str) -> Result<Vec<MetricsRow>, MetricsError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, head) = lines.next().ok_or(MetricsError::Empty)?;
    let cols: Vec<&str> = head.split(',').collect();
    let ul_layers = cols.len().saturating_sub(3);
    if cols.len() < 3 || head != header(ul_layers) {
        return Err(MetricsError::Header(head.to_string()));
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let err = |msg: String| MetricsError::Row { line: i + 1, msg };
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != cols.len() {
            return Err(err(format!("{} cells, expected {}", cells.len(), cols.len())));
        }
        let num = |c: &str| c.parse::<f64>().map_err(|e| err(format!("{c:?}: {e}")));
        let epoch = cells[0].parse().map_err(|e| err(format!("epoch {:?}: {e}", cells[0])))?;
        let ul_grad_norms = cells[1..=ul_layers].iter().map(|c| num(c)).collect::<Result<_, _>>()?;
        let eval = cells[ul_layers + 1];
        let eval_metric = if eval.is_empty() { None } else { Some(num(eval)?) };
        rows.push(MetricsRow {
            epoch,
            ul_grad_norms,
            eval_metric,
            seconds: num(cells[ul_layers + 2])?,
        });
    }
    Ok(rows)
}

/// The CSV with the wall-clock column blanked, for comparing runs.
pub fn without_timing(text: &str) -> String {
    text.lines()
        .map(|l| match l.rfind(',') {
            Some(i) if !l.starts_with("epoch") => &l[..i],
            _ => l,
        })
        .collect::<Vec<_>>()
        .join("\n")
}
