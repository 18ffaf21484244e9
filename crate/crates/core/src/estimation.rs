//! Potential-outcome, CATE and ATE estimates from a trained model.
//!
//! `μ̂_t̂(x_i)` averages the decoder mean `f_t̂(z)` over `L` latent samples.
//! Post-treatment mode samples `z` from the encoder at the unit's factual
//! triple `(x_i, y_i, t_i)`; the counterfactual assignment `t̂` reaches only
//! the decoder. Pre-treatment mode samples from the prior `p(z | x_i)` and
//! needs no outcome.
//!
//! Both `t̂ = 0` and `t̂ = 1` reuse the same latent draws, so `τ̂` carries no
//! extra sampling noise from independent draws. Each unit's draws come from
//! its own stream keyed by the run seed and the unit's observed values,
//! which makes the estimates independent of row order.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{fmt_f64, Dataset};
use crate::error::{Error, Result};
use crate::model::IntactVaeModel;
use crate::numerics::{derive_seed, Rng, Tensor2};

/// Default number of latent samples per unit.
pub const DEFAULT_MC_SAMPLES: usize = 30;

const UNITS_PER_CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimationMode {
    Post,
    Pre,
}

impl FromStr for EstimationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "post" => Ok(EstimationMode::Post),
            "pre" => Ok(EstimationMode::Pre),
            other => Err(Error::Config(format!("unknown estimation mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for EstimationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EstimationMode::Post => "post",
            EstimationMode::Pre => "pre",
        })
    }
}

/// Per-unit estimates; each matrix is `units × d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CateEstimates {
    pub mu0_hat: Tensor2,
    pub mu1_hat: Tensor2,
    pub tau_hat: Tensor2,
    pub mode: EstimationMode,
    pub mc_samples: usize,
}

impl CateEstimates {
    pub fn len(&self) -> usize {
        self.tau_hat.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `τ̂` of the first outcome coordinate.
    pub fn tau(&self) -> Vec<f64> {
        self.tau_hat.column(0)
    }

    /// `unit,mu0_hat,mu1_hat,tau_hat`; coordinates beyond the first get a
    /// `_j` suffix.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(fs::File::create(path)?);
        let d = self.tau_hat.cols();
        let names = |base: &str| -> Vec<String> {
            if d == 1 {
                vec![base.to_string()]
            } else {
                (0..d).map(|j| format!("{base}_{j}")).collect()
            }
        };
        let mut header = vec!["unit".to_string()];
        for base in ["mu0_hat", "mu1_hat", "tau_hat"] {
            header.extend(names(base));
        }
        writeln!(out, "{}", header.join(","))?;
        for i in 0..self.len() {
            let mut row = vec![i.to_string()];
            for m in [&self.mu0_hat, &self.mu1_hat, &self.tau_hat] {
                row.extend(m.row(i).iter().map(|&v| fmt_f64(v)));
            }
            writeln!(out, "{}", row.join(","))?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads a single-outcome file written by [`CateEstimates::write_csv`].
    pub fn read_csv(path: &Path, mode: EstimationMode, mc_samples: usize) -> Result<Self> {
        let source = path.display().to_string();
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingData(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        let malformed = |message: String| Error::Malformed {
            file: source.clone(),
            message,
        };
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        if header.trim() != "unit,mu0_hat,mu1_hat,tau_hat" {
            return Err(malformed(format!("unexpected header {header:?}")));
        }
        let names = ["unit", "mu0_hat", "mu1_hat", "tau_hat"];
        let mut cols: [Vec<f64>; 3] = Default::default();
        for (k, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(malformed(format!(
                    "line {}: {} fields, expected 4",
                    k + 2,
                    f.len()
                )));
            }
            for j in 1..4 {
                let v = f[j].trim().parse().map_err(|_| {
                    malformed(format!(
                        "line {}: column {} is not a number",
                        k + 2,
                        names[j]
                    ))
                })?;
                cols[j - 1].push(v);
            }
        }
        let [mu0, mu1, tau] = cols.map(|c| Tensor2::column_vector(&c));
        Ok(Self {
            mu0_hat: mu0,
            mu1_hat: mu1,
            tau_hat: tau,
            mode,
            mc_samples,
        })
    }
}

/// Stream key for a unit, a function of its observed values only.
fn unit_key(seed: u64, x: &[f64], y: Option<&[f64]>, t: Option<u8>) -> u64 {
    let mut h = derive_seed(seed, 0x5eed);
    for v in x.iter().chain(y.unwrap_or(&[])) {
        h = derive_seed(h, v.to_bits());
    }
    if let Some(t) = t {
        h = derive_seed(h, 2 + t as u64);
    }
    h
}

/// Latent draws for one unit from `N(mean, diag(var))`, `L × n`.
fn draw_latents(mean: &[f64], var: &[f64], samples: usize, key: u64) -> Vec<f64> {
    let mut rng = Rng::new(key);
    let n = mean.len();
    let eps = rng.normals(samples * n);
    let sd: Vec<f64> = var.iter().map(|v| v.sqrt()).collect();
    eps.chunks(n)
        .flat_map(|e| (0..n).map(|j| mean[j] + sd[j] * e[j]).collect::<Vec<_>>())
        .collect()
}

/// `(μ̂_0, μ̂_1)` for a block of units given their latent Gaussians.
fn decode_means(
    model: &IntactVaeModel,
    means: &Tensor2,
    vars: &Tensor2,
    keys: &[u64],
    samples: usize,
) -> Result<(Tensor2, Tensor2)> {
    let units = keys.len();
    let n = model.dims().z;
    let d = model.dims().y;
    let mut z = Vec::with_capacity(units * samples * n);
    for (i, &key) in keys.iter().enumerate() {
        z.extend(draw_latents(means.row(i), vars.row(i), samples, key));
    }
    let z = Tensor2::from_vec(units * samples, n, z)?;
    let mut outs = Vec::with_capacity(2);
    for t_hat in [0.0, 1.0] {
        let t = Tensor2::filled(units * samples, 1, t_hat);
        let (f, _) = model.decode_batch(&z, &t)?;
        let mut mu = Tensor2::zeros(units, d);
        for i in 0..units {
            let acc = mu.row_mut(i);
            for s in 0..samples {
                for (a, v) in acc.iter_mut().zip(f.row(i * samples + s)) {
                    *a += v;
                }
            }
            for a in acc.iter_mut() {
                *a /= samples as f64;
            }
        }
        outs.push(mu);
    }
    let mu1 = outs.pop().expect("two heads");
    let mu0 = outs.pop().expect("two heads");
    Ok((mu0, mu1))
}

fn check_samples(samples: usize) -> Result<()> {
    if samples == 0 {
        return Err(Error::Config("need at least one Monte Carlo sample".into()));
    }
    Ok(())
}

fn check_t_hat(t_hat: u8) -> Result<()> {
    if t_hat > 1 {
        return Err(Error::InvalidTreatment(t_hat as f64));
    }
    Ok(())
}

/// Post-treatment `μ̂_t̂(x_i)` for unit `i` of `data`.
pub fn estimate_po_post(
    model: &IntactVaeModel,
    data: &Dataset,
    i: usize,
    t_hat: u8,
    samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    check_t_hat(t_hat)?;
    check_samples(samples)?;
    if i >= data.len() {
        return Err(Error::InvalidInput(format!(
            "unit index {i} out of range for {} units",
            data.len()
        )));
    }
    let est = cate_rows(model, data, EstimationMode::Post, samples, seed, &[i])?;
    let m = if t_hat == 0 { est.0 } else { est.1 };
    Ok(m.row(0).to_vec())
}

/// Pre-treatment `μ̂_t̂(x)`, sampling from the prior.
pub fn estimate_po_pre(
    model: &IntactVaeModel,
    x: &[f64],
    t_hat: u8,
    samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    check_t_hat(t_hat)?;
    check_samples(samples)?;
    let (means, vars) = model.prior_batch(&Tensor2::row_vector(x))?;
    let key = unit_key(seed, x, None, None);
    let (mu0, mu1) = decode_means(model, &means, &vars, &[key], samples)?;
    Ok(if t_hat == 0 { mu0 } else { mu1 }.row(0).to_vec())
}

fn cate_rows(
    model: &IntactVaeModel,
    data: &Dataset,
    mode: EstimationMode,
    samples: usize,
    seed: u64,
    rows: &[usize],
) -> Result<(Tensor2, Tensor2)> {
    let sub = data.subset(rows);
    let (means, vars) = match mode {
        EstimationMode::Post => model.encode_batch(&sub.x, &sub.y, &sub.treatment_column())?,
        EstimationMode::Pre => model.prior_batch(&sub.x)?,
    };
    let keys: Vec<u64> = (0..sub.len())
        .map(|i| match mode {
            EstimationMode::Post => {
                unit_key(seed, sub.x.row(i), Some(sub.y.row(i)), Some(sub.t[i]))
            }
            EstimationMode::Pre => unit_key(seed, sub.x.row(i), None, None),
        })
        .collect();
    decode_means(model, &means, &vars, &keys, samples)
}

/// Both potential-outcome means and `τ̂` for every unit of `data`.
pub fn cate(
    model: &IntactVaeModel,
    data: &Dataset,
    mode: EstimationMode,
    samples: usize,
    seed: u64,
) -> Result<CateEstimates> {
    check_samples(samples)?;
    if data.is_empty() {
        return Err(Error::InvalidInput(
            "cannot estimate effects on an empty dataset".into(),
        ));
    }
    if data.dim_x() != model.dims().x
        || (mode == EstimationMode::Post && data.dim_y() != model.dims().y)
    {
        return Err(Error::Shape(format!(
            "dataset widths x={} y={} do not match the model",
            data.dim_x(),
            data.dim_y()
        )));
    }
    let indices: Vec<usize> = (0..data.len()).collect();
    let parts: Vec<(Tensor2, Tensor2)> = indices
        .par_chunks(UNITS_PER_CHUNK)
        .map(|rows| cate_rows(model, data, mode, samples, seed, rows))
        .collect::<Result<_>>()?;
    let mu0 = Tensor2::concat_rows(&parts.iter().map(|p| &p.0).collect::<Vec<_>>())?;
    let mu1 = Tensor2::concat_rows(&parts.iter().map(|p| &p.1).collect::<Vec<_>>())?;
    let tau = mu1.zip_map(&mu0, |a, b| a - b);
    Ok(CateEstimates {
        mu0_hat: mu0,
        mu1_hat: mu1,
        tau_hat: tau,
        mode,
        mc_samples: samples,
    })
}

/// Mean of `τ̂`, one entry per outcome coordinate.
pub fn ate(estimates: &CateEstimates) -> Result<Vec<f64>> {
    if estimates.is_empty() {
        return Err(Error::InvalidInput("ate of zero units".into()));
    }
    Ok(estimates.tau_hat.column_means().into_data())
}
