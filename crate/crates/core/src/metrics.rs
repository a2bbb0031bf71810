//! Evaluation metrics and report files.

use std::fs;
use std::path::Path;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::student::PredictMode;
use crate::teacher::LN_2PI;

fn same_len(what: &str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::InvalidInput(format!("{what}: lengths {a} and {b} differ")));
    }
    if a == 0 {
        return Err(Error::InvalidInput(format!("{what}: empty series")));
    }
    Ok(())
}

/// `sqrt(mean((y - ŷ)²))`.
pub fn rmse(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    same_len("rmse", y_true.len(), y_pred.len())?;
    let ss: f64 = y_true.iter().zip(y_pred).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((ss / y_true.len() as f64).sqrt())
}

/// Mean Gaussian negative log-density of `y_true` under `N(mean, var)`.
pub fn nll_metric(y_true: &[f64], mean: &[f64], var: &[f64]) -> Result<f64> {
    same_len("nll", y_true.len(), mean.len())?;
    same_len("nll", y_true.len(), var.len())?;
    if let Some(v) = var.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::InvalidInput(format!("nll: variance {v} is not positive")));
    }
    let total: f64 = y_true
        .iter()
        .zip(mean)
        .zip(var)
        .map(|((y, m), v)| 0.5 * (LN_2PI + v.ln() + (y - m) * (y - m) / v))
        .sum();
    Ok(total / y_true.len() as f64)
}

/// Pearson correlations between the columns of two representation series.
#[derive(Clone, Debug, PartialEq)]
pub struct Correlation {
    /// `dim_a × dim_b`.
    pub matrix: Array2<f64>,
    /// Zero-variance columns of A; their rows are 0.
    pub degenerate_a: Vec<bool>,
    pub degenerate_b: Vec<bool>,
    /// Mean over A-columns of the largest absolute correlation in the row.
    pub summary: f64,
}

/// `a` and `b` hold one time step per row.
pub fn correlation_matrix(a: &Array2<f64>, b: &Array2<f64>) -> Result<Correlation> {
    same_len("correlation", a.nrows(), b.nrows())?;
    if a.ncols() == 0 || b.ncols() == 0 {
        return Err(Error::InvalidInput("correlation: no units".into()));
    }
    let centre = |x: &Array2<f64>| {
        let mean = x.mean_axis(Axis(0)).expect("nonempty");
        let c = x - &mean;
        let norms: Vec<f64> = c.columns().into_iter().map(|col| col.dot(&col).sqrt()).collect();
        (c, norms)
    };
    let (ca, na) = centre(a);
    let (cb, nb) = centre(b);
    // constant up to rounding, relative to the column's magnitude
    let dead = |x: &Array2<f64>, norms: &[f64]| -> Vec<bool> {
        let root_t = (x.nrows() as f64).sqrt();
        x.columns()
            .into_iter()
            .zip(norms)
            .map(|(col, &n)| n <= 1e-10 * root_t * col.iter().fold(0.0f64, |m, v| m.max(v.abs())))
            .collect()
    };
    let degenerate_a = dead(a, &na);
    let degenerate_b = dead(b, &nb);
    let mut matrix = ca.t().dot(&cb);
    for ((i, j), v) in matrix.indexed_iter_mut() {
        *v = if degenerate_a[i] || degenerate_b[j] {
            0.0
        } else {
            (*v / (na[i] * nb[j])).clamp(-1.0, 1.0)
        };
    }
    let summary = matrix
        .rows()
        .into_iter()
        .map(|row| row.iter().fold(0.0f64, |m, v| m.max(v.abs())))
        .sum::<f64>()
        / matrix.nrows() as f64;
    Ok(Correlation {
        matrix,
        degenerate_a,
        degenerate_b,
        summary,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reference {
    Noisy,
    Clean,
}

impl Reference {
    pub fn as_str(self) -> &'static str {
        match self {
            Reference::Noisy => "noisy",
            Reference::Clean => "clean",
        }
    }
}

/// One scored prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub experiment: String,
    pub model: String,
    pub rmse: f64,
    pub nll: f64,
    pub architecture: Vec<usize>,
    pub params_count: usize,
    pub mode: PredictMode,
    pub reference: Reference,
    pub seed: u64,
    /// `y_t - ŷ_t` over the scored steps.
    pub residuals: Vec<f64>,
}

impl EvalReport {
    pub fn row(&self) -> ReportRow {
        ReportRow {
            experiment: self.experiment.clone(),
            model: self.model.clone(),
            rmse: self.rmse,
            nll: self.nll,
            architecture: format_tuple(&self.architecture),
            params_count: self.params_count,
            mode: self.mode,
            reference: self.reference,
            seed: self.seed,
        }
    }
}

/// `(15, 30, 1)`.
pub fn format_tuple(t: &[usize]) -> String {
    let parts: Vec<String> = t.iter().map(usize::to_string).collect();
    format!("({})", parts.join(", "))
}

/// A line of the report CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub experiment: String,
    pub model: String,
    pub rmse: f64,
    pub nll: f64,
    pub architecture: String,
    pub params_count: usize,
    pub mode: PredictMode,
    pub reference: Reference,
    pub seed: u64,
}

pub const REPORT_COLUMNS: [&str; 9] = [
    "experiment",
    "model",
    "rmse",
    "nll",
    "architecture",
    "params_count",
    "mode",
    "reference",
    "seed",
];

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Parse {
        path: path.to_owned(),
        line: e.position().map_or(0, |p| p.line() as usize),
        msg: e.to_string(),
    }
}

pub fn emit_report(reports: &[EvalReport], path: &Path) -> Result<()> {
    let rows: Vec<ReportRow> = reports.iter().map(EvalReport::row).collect();
    write_rows(&rows, path)
}

pub fn write_rows(rows: &[ReportRow], path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(REPORT_COLUMNS).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_report(path: &Path) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header: Vec<String> = r.headers().map_err(|e| csv_err(path, e))?.iter().map(str::to_owned).collect();
    if header != REPORT_COLUMNS {
        return Err(Error::Parse {
            path: path.to_owned(),
            line: 1,
            msg: format!("unexpected report header {}", header.join(",")),
        });
    }
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}

/// Plot-ready `t,y_true,y_pred,var` table.
pub fn emit_series(path: &Path, start: usize, y_true: &[f64], mean: &[f64], var: &[f64]) -> Result<()> {
    same_len("series", y_true.len(), mean.len())?;
    same_len("series", y_true.len(), var.len())?;
    let mut out = String::from("t,y_true,y_pred,var\n");
    for i in 0..y_true.len() {
        out.push_str(&format!("{},{},{},{}\n", start + i, y_true[i], mean[i], var[i]));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Correlation matrix as CSV, one row per A-unit.
pub fn emit_matrix(path: &Path, m: &Array2<f64>) -> Result<()> {
    let mut out = String::new();
    for row in m.rows() {
        let cells: Vec<String> = row.iter().map(f64::to_string).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
