//! IHDP benchmark ingestion and evaluation.
//!
//! Expected layout: a directory of `ihdp_npci_{i}.csv` files, `i` starting
//! at 1, without a header. Columns: treatment, factual outcome,
//! counterfactual outcome, `mu0`, `mu1`, then 25 covariates of which the
//! first 6 are continuous. A binary covariate coded `{1, 2}` is shifted to
//! `{0, 1}`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{fmt_f64, split, Dataset, SplitRatios};
use crate::error::{Error, Result};
use crate::estimation::{cate, EstimationMode};
use crate::harness::config::ExperimentConfig;
use crate::metrics::{EffectReference, LatentSource, MetricsReport};
use crate::model::ModelDims;
use crate::numerics::{derive_seed, Rng, Tensor2};
use crate::training::{init_model, train};

pub const IHDP_COVARIATES: usize = 25;
pub const IHDP_CONTINUOUS: usize = 6;
/// Environment variable consulted when no data directory is given.
pub const IHDP_DIR_ENV: &str = "IHDP_DIR";

pub fn replication_path(dir: &Path, replication: usize) -> PathBuf {
    dir.join(format!("ihdp_npci_{replication}.csv"))
}

const COLUMN_NAMES: [&str; 5] = ["treatment", "y_factual", "y_cfactual", "mu0", "mu1"];

fn column_name(j: usize) -> String {
    COLUMN_NAMES
        .get(j)
        .map(|s| s.to_string())
        .unwrap_or_else(|| format!("x{}", j - 4))
}

/// Parses one replication file (covariates untransformed except the
/// `{1, 2}` recoding).
pub fn parse_ihdp(text: &str, source: &str) -> Result<Dataset> {
    let width = COLUMN_NAMES.len() + IHDP_COVARIATES;
    let malformed = |message: String| Error::Malformed {
        file: source.to_string(),
        message,
    };
    let mut t = Vec::new();
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); width];
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != width {
            return Err(malformed(format!(
                "line {}: {} fields, expected {width}",
                line_no + 1,
                fields.len()
            )));
        }
        for (j, f) in fields.iter().enumerate() {
            let v: f64 = f.parse().map_err(|_| {
                malformed(format!(
                    "line {}: column {} is not a number: {f:?}",
                    line_no + 1,
                    column_name(j)
                ))
            })?;
            if !v.is_finite() {
                return Err(malformed(format!(
                    "line {}: column {} is not finite",
                    line_no + 1,
                    column_name(j)
                )));
            }
            cols[j].push(v);
        }
        let tv = cols[0][cols[0].len() - 1];
        if tv != 0.0 && tv != 1.0 {
            return Err(malformed(format!(
                "line {}: column treatment is {tv}, expected 0 or 1",
                line_no + 1
            )));
        }
        t.push(tv as u8);
    }
    let n = t.len();
    if n == 0 {
        return Err(malformed("no rows".into()));
    }
    for col in cols.iter_mut().skip(COLUMN_NAMES.len() + IHDP_CONTINUOUS) {
        if col.iter().all(|&v| v == 1.0 || v == 2.0) && col.contains(&2.0) {
            col.iter_mut().for_each(|v| *v -= 1.0);
        }
    }
    let mut x = Tensor2::zeros(n, IHDP_COVARIATES);
    for j in 0..IHDP_COVARIATES {
        for (i, &v) in cols[COLUMN_NAMES.len() + j].iter().enumerate() {
            x.set(i, j, v);
        }
    }
    let (yf, ycf) = (&cols[1], &cols[2]);
    let y0: Vec<f64> = (0..n)
        .map(|i| if t[i] == 1 { ycf[i] } else { yf[i] })
        .collect();
    let y1: Vec<f64> = (0..n)
        .map(|i| if t[i] == 1 { yf[i] } else { ycf[i] })
        .collect();
    let mut data = Dataset::new(x, t, Tensor2::column_vector(yf))?;
    data.y0 = Some(Tensor2::column_vector(&y0));
    data.y1 = Some(Tensor2::column_vector(&y1));
    data.mu0 = Some(Tensor2::column_vector(&cols[3]));
    data.mu1 = Some(Tensor2::column_vector(&cols[4]));
    data.validate()?;
    Ok(data)
}

/// Loads replication `replication` (1-based) from `dir`.
pub fn load_ihdp(dir: &Path, replication: usize) -> Result<Dataset> {
    let path = replication_path(dir, replication);
    let text = fs::read_to_string(&path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingData(path.clone()),
        _ => Error::Io(e),
    })?;
    parse_ihdp(&text, &path.display().to_string())
}

/// Z-scores the continuous covariates of every split with training-split
/// statistics.
pub fn standardize(train: &mut Dataset, others: &mut [&mut Dataset]) {
    let n = train.len() as f64;
    for j in 0..IHDP_CONTINUOUS.min(train.dim_x()) {
        let col = train.x.column(j);
        let mean = col.iter().sum::<f64>() / n;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
        for d in std::iter::once(&mut *train).chain(others.iter_mut().map(|d| &mut **d)) {
            for i in 0..d.len() {
                let v = d.x.get(i, j);
                d.x.set(i, j, (v - mean) / sd);
            }
        }
    }
}

/// Split 63:27:10 and standardized.
pub fn prepare(data: &Dataset, rng: &mut Rng) -> Result<(Dataset, Dataset, Dataset)> {
    let (mut tr, mut va, mut te) = split(data, SplitRatios::IHDP, rng)?;
    standardize(&mut tr, &mut [&mut va, &mut te]);
    Ok((tr, va, te))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IhdpRun {
    pub replication: usize,
    pub reports: Vec<MetricsReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    /// `None` for a single replication.
    pub se: Option<f64>,
}

pub fn mean_se(values: &[f64]) -> Option<MeanSe> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let se = (values.len() > 1).then(|| {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    });
    Some(MeanSe { mean, se })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IhdpModeSummary {
    pub mode: EstimationMode,
    pub eps_ate: MeanSe,
    pub root_pehe: MeanSe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IhdpReport {
    pub replications: usize,
    pub reference: EffectReference,
    pub summaries: Vec<IhdpModeSummary>,
    pub runs: Vec<IhdpRun>,
}

/// Trains and evaluates one replication. Post-treatment metrics use
/// train ∪ validation, pre-treatment the test split; effect errors are
/// against the noiseless `mu0`, `mu1`.
pub fn run_ihdp_replication(
    cfg: &ExperimentConfig,
    dir: &Path,
    replication: usize,
) -> Result<IhdpRun> {
    let data = load_ihdp(dir, replication)?;
    let seed = derive_seed(cfg.seed, replication as u64);
    let mut rng = Rng::new(seed);
    let (tr, va, te) = prepare(&data, &mut rng)?;
    let dims = ModelDims {
        x: tr.dim_x(),
        z: cfg.ihdp_dim_z,
        y: tr.dim_y(),
    };
    let model = init_model(&mut rng, dims, cfg.net_preset, cfg.heads, cfg.ihdp_beta)?;
    let outcome = train(
        &model,
        &tr,
        &va,
        &cfg.train_config(cfg.ihdp_beta, seed),
        &mut rng,
    )?;
    let joint = Dataset::concat(&[&tr, &va])?;
    let mut reports = Vec::new();
    for &mode in &cfg.modes {
        let eval = match mode {
            EstimationMode::Post => &joint,
            EstimationMode::Pre => &te,
        };
        let est = cate(&outcome.model, eval, mode, cfg.mc_samples, seed)?;
        reports.push(MetricsReport::evaluate(
            &outcome.model,
            eval,
            &est,
            EffectReference::Noiseless,
            LatentSource::PriorMean,
        )?);
    }
    Ok(IhdpRun {
        replication,
        reports,
    })
}

/// Runs replications `1..=n`. A missing first file is reported as
/// [`Error::MissingData`] before any training starts.
pub fn run_ihdp(cfg: &ExperimentConfig, dir: &Path, n: usize) -> Result<IhdpReport> {
    if n == 0 {
        return Err(Error::Config("need at least one IHDP replication".into()));
    }
    for i in 1..=n {
        let p = replication_path(dir, i);
        if !p.is_file() {
            return Err(Error::MissingData(p));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let runs: Vec<IhdpRun> = pool.install(|| {
        (1..=n)
            .into_par_iter()
            .map(|i| run_ihdp_replication(cfg, dir, i))
            .collect::<Result<_>>()
    })?;
    let summaries = cfg
        .modes
        .iter()
        .filter_map(|&mode| {
            let pick = |f: fn(&MetricsReport) -> f64| -> Vec<f64> {
                runs.iter()
                    .filter_map(|r| r.reports.iter().find(|m| m.mode == mode).map(f))
                    .collect()
            };
            Some(IhdpModeSummary {
                mode,
                eps_ate: mean_se(&pick(|m| m.eps_ate))?,
                root_pehe: mean_se(&pick(|m| m.root_pehe))?,
            })
        })
        .collect();
    Ok(IhdpReport {
        replications: n,
        reference: EffectReference::Noiseless,
        summaries,
        runs,
    })
}

impl IhdpReport {
    /// `ihdp_runs.csv` (`replication,mode,eps_ate,root_pehe`) and
    /// `ihdp_summary.json` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut out = std::io::BufWriter::new(fs::File::create(dir.join("ihdp_runs.csv"))?);
        writeln!(out, "replication,mode,eps_ate,root_pehe")?;
        for run in &self.runs {
            for r in &run.reports {
                writeln!(
                    out,
                    "{},{},{},{}",
                    run.replication,
                    r.mode,
                    fmt_f64(r.eps_ate),
                    fmt_f64(r.root_pehe)
                )?;
            }
        }
        out.flush()?;
        fs::write(
            dir.join("ihdp_summary.json"),
            serde_json::to_string_pretty(self)?,
        )?;
        Ok(())
    }
}
