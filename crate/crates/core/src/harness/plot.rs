//! Long-format plot data from an aggregate sweep CSV.
//!
//! Two panels per metric and mode: `x_var = omega` at the smallest `dim_w`,
//! and `x_var = dim_w` at the smallest `ω`. Each row averages the
//! replications of one `(x_value, β)` group; NaN entries from failed runs
//! are dropped.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::dataset::fmt_f64;
use crate::error::{Error, Result};
use crate::harness::sweep::AGGREGATE_HEADER;

pub const PLOT_HEADER: &str = "x_var,x_value,beta,mean,stderr";
pub const PLOT_METRICS: [&str; 4] = ["eps_ate", "root_pehe", "r2_pooled", "d_mean"];
pub const PLOT_MODES: [&str; 2] = ["post", "pre"];

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub dgp_seed: u64,
    pub dim_w: usize,
    pub omega: f64,
    pub beta: f64,
    pub mode: String,
    /// In [`PLOT_METRICS`] order; `None` for blank cells.
    pub metrics: [Option<f64>; 4],
}

pub fn parse_aggregate(text: &str, source: &str) -> Result<Vec<AggregateRow>> {
    let malformed = |message: String| Error::Malformed {
        file: source.to_string(),
        message,
    };
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == AGGREGATE_HEADER => {}
        Some(h) => return Err(malformed(format!("unexpected header {h:?}"))),
        None => return Ok(Vec::new()),
    }
    let names: Vec<&str> = AGGREGATE_HEADER.split(',').collect();
    let mut rows = Vec::new();
    for (k, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != names.len() {
            return Err(malformed(format!(
                "line {}: {} fields, expected {}",
                k + 2,
                f.len(),
                names.len()
            )));
        }
        let bad = |j: usize| {
            malformed(format!(
                "line {}: column {} has invalid value {:?}",
                k + 2,
                names[j],
                f[j]
            ))
        };
        let num = |j: usize| -> Result<Option<f64>> {
            if f[j].is_empty() {
                Ok(None)
            } else {
                f[j].parse().map(Some).map_err(|_| bad(j))
            }
        };
        rows.push(AggregateRow {
            dgp_seed: f[0].parse().map_err(|_| bad(0))?,
            dim_w: f[1].parse().map_err(|_| bad(1))?,
            omega: num(2)?.ok_or_else(|| bad(2))?,
            beta: num(3)?.ok_or_else(|| bad(3))?,
            mode: f[4].to_string(),
            metrics: [num(5)?, num(6)?, num(7)?, num(8)?],
        });
    }
    Ok(rows)
}

/// `(mean, stderr)`; stderr is `sd/√n` with the `n − 1` sample deviation and
/// absent for a single value.
pub fn mean_stderr(values: &[f64]) -> Option<(f64, Option<f64>)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let se = (values.len() > 1).then(|| {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        var.sqrt() / n.sqrt()
    });
    Some((mean, se))
}

/// Panel rows for one metric and mode: `(x_var, x_value, beta, mean, stderr)`.
pub fn panel_rows(
    rows: &[AggregateRow],
    metric: usize,
    mode: &str,
) -> Vec<(String, f64, f64, f64, Option<f64>)> {
    let rows: Vec<&AggregateRow> = rows.iter().filter(|r| r.mode == mode).collect();
    let Some(min_dim) = rows.iter().map(|r| r.dim_w).min() else {
        return Vec::new();
    };
    let min_omega = rows.iter().map(|r| r.omega).fold(f64::INFINITY, f64::min);
    let mut out = Vec::new();
    for x_var in ["omega", "dim_w"] {
        // keys are bit patterns so equal floats group together in numeric order
        let mut groups: BTreeMap<(u64, u64), Vec<f64>> = BTreeMap::new();
        for r in &rows {
            let (keep, x) = match x_var {
                "omega" => (r.dim_w == min_dim, r.omega),
                _ => (r.omega == min_omega, r.dim_w as f64),
            };
            if !keep {
                continue;
            }
            let entry = groups.entry((x.to_bits(), r.beta.to_bits())).or_default();
            if let Some(v) = r.metrics[metric].filter(|v| !v.is_nan()) {
                entry.push(v);
            }
        }
        for ((x, b), values) in groups {
            if let Some((mean, se)) = mean_stderr(&values) {
                out.push((
                    x_var.to_string(),
                    f64::from_bits(x),
                    f64::from_bits(b),
                    mean,
                    se,
                ));
            }
        }
    }
    out
}

/// Writes `plot_{metric}_{mode}.csv` for every metric and mode into `dir`.
pub fn emit_plot_data(aggregate: &Path, dir: &Path) -> Result<Vec<PathBuf>> {
    let text = fs::read_to_string(aggregate).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingData(aggregate.to_path_buf()),
        _ => Error::Io(e),
    })?;
    let rows = parse_aggregate(&text, &aggregate.display().to_string())?;
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for (m, metric) in PLOT_METRICS.iter().enumerate() {
        for mode in PLOT_MODES {
            let path = dir.join(format!("plot_{metric}_{mode}.csv"));
            let mut out = std::io::BufWriter::new(fs::File::create(&path)?);
            writeln!(out, "{PLOT_HEADER}")?;
            for (x_var, x, beta, mean, se) in panel_rows(&rows, m, mode) {
                let x = if x_var == "dim_w" {
                    format!("{}", x as usize)
                } else {
                    fmt_f64(x)
                };
                let se = se.map(fmt_f64).unwrap_or_default();
                writeln!(out, "{x_var},{x},{},{},{se}", fmt_f64(beta), fmt_f64(mean))?;
            }
            out.flush()?;
            written.push(path);
        }
    }
    Ok(written)
}
