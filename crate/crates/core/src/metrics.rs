//! Error metrics, per-iteration aggregates and PGM previews.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::ScalarField2D;

/// Mean over pixels of `|a - b|`.
pub fn compute_mae(a: &ScalarField2D, b: &ScalarField2D) -> Result<f64> {
    a.check_same_grid(b, "MAE")?;
    let s: f64 = a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()).sum();
    Ok(s / a.values().len() as f64)
}

/// Mean and population standard deviation (divide by `n`).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// One row of `metrics.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub sample_id: String,
    /// Iteration label: a stage number, or `final`.
    pub iter: String,
    pub mae_p0: f64,
    pub mae_c: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterSummary {
    pub iter: String,
    pub count: usize,
    pub mean_p0: f64,
    pub std_p0: f64,
    pub mean_c: f64,
    pub std_c: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsRecord {
    pub rows: Vec<MetricsRow>,
}

impl MetricsRecord {
    pub fn push(&mut self, sample_id: impl Into<String>, iter: impl Into<String>, mae_p0: f64, mae_c: f64) {
        self.rows.push(MetricsRow {
            sample_id: sample_id.into(),
            iter: iter.into(),
            mae_p0,
            mae_c,
        });
    }

    /// Mean ± population std per iteration label, in first-seen order.
    pub fn summary(&self) -> Vec<IterSummary> {
        let mut labels: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !labels.contains(&r.iter.as_str()) {
                labels.push(&r.iter);
            }
        }
        labels
            .into_iter()
            .map(|label| {
                let sel: Vec<&MetricsRow> = self.rows.iter().filter(|r| r.iter == label).collect();
                let (mean_p0, std_p0) = mean_std(&sel.iter().map(|r| r.mae_p0).collect::<Vec<_>>());
                let (mean_c, std_c) = mean_std(&sel.iter().map(|r| r.mae_c).collect::<Vec<_>>());
                IterSummary {
                    iter: label.to_string(),
                    count: sel.len(),
                    mean_p0,
                    std_p0,
                    mean_c,
                    std_c,
                }
            })
            .collect()
    }

    /// `sample_id,iter,mae_p0,mae_c`, one row per sample and iteration,
    /// then `mean` and `std` footer rows per iteration.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("sample_id,iter,mae_p0,mae_c\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{:e},{:e}", r.sample_id, r.iter, r.mae_p0, r.mae_c);
        }
        for t in self.summary() {
            let _ = writeln!(s, "mean,{},{:e},{:e}", t.iter, t.mean_p0, t.mean_c);
            let _ = writeln!(s, "std,{},{:e},{:e}", t.iter, t.std_p0, t.std_c);
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// 8-bit gray levels `round(255 · clamp((v - lo) / (hi - lo), 0, 1))`.
pub fn window_bytes(values: &[f64], lo: f64, hi: f64) -> Result<Vec<u8>> {
    if !lo.is_finite() || !hi.is_finite() || lo >= hi {
        return Err(Error::InvalidConfig(format!("display window [{lo}, {hi}] is empty")));
    }
    Ok(values
        .iter()
        .map(|v| (255.0 * ((v - lo) / (hi - lo)).clamp(0.0, 1.0)).round() as u8)
        .collect())
}

/// Binary (`P5`) PGM of a `rows × cols` array, row 0 at the top.
pub fn encode_pgm(rows: usize, cols: usize, values: &[f64], lo: f64, hi: f64) -> Result<Vec<u8>> {
    if values.len() != rows * cols {
        return Err(Error::ShapeMismatch(format!(
            "{} values for a {rows}x{cols} image",
            values.len()
        )));
    }
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend(window_bytes(values, lo, hi)?);
    Ok(out)
}

pub fn export_pgm(field: &ScalarField2D, lo: f64, hi: f64, out: &Path) -> Result<()> {
    let g = field.grid();
    let bytes = encode_pgm(g.ny(), g.nx(), field.values(), lo, hi)?;
    fs::write(out, bytes).map_err(|e| Error::io(out, e))
}
