//! Observational datasets, minibatches, splitting and CSV interchange.
//!
//! CSV layout: header `x_0..x_{m-1},t,y` optionally followed by
//! `y0,y1,mu0,mu1,propensity,w_0..w_{k-1}` when ground truth is known. Floats are
//! written with 17 significant digits so a write/read cycle is bit-exact.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor2};

/// Covariates, factual treatment and outcome, plus optional ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub x: Tensor2,
    pub t: Vec<u8>,
    pub y: Tensor2,
    pub y0: Option<Tensor2>,
    pub y1: Option<Tensor2>,
    /// Noiseless expected outcomes `E[Y(t) | X]`, when the source publishes them.
    pub mu0: Option<Tensor2>,
    pub mu1: Option<Tensor2>,
    pub w: Option<Tensor2>,
    pub propensity: Option<Vec<f64>>,
}

/// A minibatch in tape-ready form; `t` is a `B×1` column of 0/1.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub x: Tensor2,
    pub y: Tensor2,
    pub t: Tensor2,
}

impl Batch {
    pub fn new(x: Tensor2, y: Tensor2, t: Tensor2) -> Result<Self> {
        if x.rows() != y.rows() || x.rows() != t.rows() || t.cols() != 1 {
            return Err(Error::Shape(format!(
                "batch: x has {} rows, y {}, t is {}x{}",
                x.rows(),
                y.rows(),
                t.rows(),
                t.cols()
            )));
        }
        if x.rows() == 0 {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        if let Some(&bad) = t.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidTreatment(bad));
        }
        Ok(Self { x, y, t })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }
}

impl Dataset {
    /// Factual data only.
    pub fn new(x: Tensor2, t: Vec<u8>, y: Tensor2) -> Result<Self> {
        let ds = Self {
            x,
            t,
            y,
            y0: None,
            y1: None,
            mu0: None,
            mu1: None,
            w: None,
            propensity: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    pub fn dim_x(&self) -> usize {
        self.x.cols()
    }

    pub fn dim_y(&self) -> usize {
        self.y.cols()
    }

    /// Checks row counts, treatment values and consistency of counterfactuals
    /// (`y = y(t)`) when potential outcomes are present.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        let check_rows = |name: &str, rows: usize| {
            if rows != n {
                Err(Error::Shape(format!(
                    "dataset column {name} has {rows} rows, expected {n}"
                )))
            } else {
                Ok(())
            }
        };
        check_rows("t", self.t.len())?;
        check_rows("y", self.y.rows())?;
        if let Some(&bad) = self.t.iter().find(|&&t| t > 1) {
            return Err(Error::InvalidTreatment(f64::from(bad)));
        }
        for (name, col) in [
            ("y0", &self.y0),
            ("y1", &self.y1),
            ("mu0", &self.mu0),
            ("mu1", &self.mu1),
        ] {
            if let Some(c) = col {
                check_rows(name, c.rows())?;
                if c.cols() != self.dim_y() {
                    return Err(Error::Shape(format!(
                        "dataset column {name} width differs from y"
                    )));
                }
            }
        }
        if let Some(w) = &self.w {
            check_rows("w", w.rows())?;
        }
        if let Some(p) = &self.propensity {
            check_rows("propensity", p.len())?;
        }
        if let (Some(y0), Some(y1)) = (&self.y0, &self.y1) {
            for i in 0..n {
                let selected = if self.t[i] == 1 { y1.row(i) } else { y0.row(i) };
                if selected != self.y.row(i) {
                    return Err(Error::InvalidInput(format!(
                        "row {i}: factual y does not equal the potential outcome selected by t"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn treatment_column(&self) -> Tensor2 {
        Tensor2::column_vector(&self.t.iter().map(|&t| f64::from(t)).collect::<Vec<_>>())
    }

    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        let t: Vec<f64> = indices.iter().map(|&i| f64::from(self.t[i])).collect();
        Batch::new(
            self.x.select_rows(indices),
            self.y.select_rows(indices),
            Tensor2::column_vector(&t),
        )
    }

    pub fn full_batch(&self) -> Result<Batch> {
        Batch::new(self.x.clone(), self.y.clone(), self.treatment_column())
    }

    /// Rows by index, ground-truth columns carried along.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let sel = |t: &Option<Tensor2>| t.as_ref().map(|t| t.select_rows(indices));
        Self {
            x: self.x.select_rows(indices),
            t: indices.iter().map(|&i| self.t[i]).collect(),
            y: self.y.select_rows(indices),
            y0: sel(&self.y0),
            y1: sel(&self.y1),
            mu0: sel(&self.mu0),
            mu1: sel(&self.mu1),
            w: sel(&self.w),
            propensity: self
                .propensity
                .as_ref()
                .map(|p| indices.iter().map(|&i| p[i]).collect()),
        }
    }

    /// Row-wise concatenation of datasets sharing the same columns.
    pub fn concat(parts: &[&Dataset]) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::InvalidInput("concat of zero datasets".into()));
        }
        let cat = |get: &dyn Fn(&Dataset) -> Option<&Tensor2>| -> Result<Option<Tensor2>> {
            let cols: Option<Vec<&Tensor2>> = parts.iter().map(|p| get(p)).collect();
            cols.map(|c| Tensor2::concat_rows(&c)).transpose()
        };
        let x = Tensor2::concat_rows(&parts.iter().map(|p| &p.x).collect::<Vec<_>>())?;
        let y = Tensor2::concat_rows(&parts.iter().map(|p| &p.y).collect::<Vec<_>>())?;
        let ds = Self {
            x,
            t: parts.iter().flat_map(|p| p.t.iter().copied()).collect(),
            y,
            y0: cat(&|d| d.y0.as_ref())?,
            y1: cat(&|d| d.y1.as_ref())?,
            mu0: cat(&|d| d.mu0.as_ref())?,
            mu1: cat(&|d| d.mu1.as_ref())?,
            w: cat(&|d| d.w.as_ref())?,
            propensity: parts
                .iter()
                .map(|p| p.propensity.clone())
                .collect::<Option<Vec<_>>>()
                .map(|v| v.concat()),
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Writes the CSV interchange format. Only univariate outcomes are supported.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        self.write_csv_to(&mut out)?;
        fs::write(path, out)?;
        Ok(())
    }

    pub fn write_csv_to(&self, out: &mut impl Write) -> Result<()> {
        if self.dim_y() != 1 {
            return Err(Error::InvalidInput(
                "CSV export supports univariate y only".into(),
            ));
        }
        let has_po = self.y0.is_some() && self.y1.is_some();
        let mut header: Vec<String> = (0..self.dim_x()).map(|j| format!("x_{j}")).collect();
        header.push("t".into());
        header.push("y".into());
        if has_po {
            header.extend(["y0".into(), "y1".into()]);
        }
        let has_mu = self.mu0.is_some() && self.mu1.is_some();
        if has_mu {
            header.extend(["mu0".into(), "mu1".into()]);
        }
        if self.propensity.is_some() {
            header.push("propensity".into());
        }
        if let Some(w) = &self.w {
            header.extend((0..w.cols()).map(|j| format!("w_{j}")));
        }
        writeln!(out, "{}", header.join(","))?;
        for i in 0..self.len() {
            let mut fields: Vec<String> = self.x.row(i).iter().map(|v| fmt_f64(*v)).collect();
            fields.push(self.t[i].to_string());
            fields.push(fmt_f64(self.y.get(i, 0)));
            if let (true, Some(y0), Some(y1)) = (has_po, &self.y0, &self.y1) {
                fields.push(fmt_f64(y0.get(i, 0)));
                fields.push(fmt_f64(y1.get(i, 0)));
            }
            if let (true, Some(m0), Some(m1)) = (has_mu, &self.mu0, &self.mu1) {
                fields.push(fmt_f64(m0.get(i, 0)));
                fields.push(fmt_f64(m1.get(i, 0)));
            }
            if let Some(p) = &self.propensity {
                fields.push(fmt_f64(p[i]));
            }
            if let Some(w) = &self.w {
                fields.extend(w.row(i).iter().map(|v| fmt_f64(*v)));
            }
            writeln!(out, "{}", fields.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingData(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        Self::parse_csv(&text, &path.display().to_string())
    }

    pub fn parse_csv(text: &str, source: &str) -> Result<Self> {
        let malformed = |message: String| Error::Malformed {
            file: source.to_string(),
            message,
        };
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<&str> = lines
            .next()
            .ok_or_else(|| malformed("missing header".into()))?
            .split(',')
            .map(str::trim)
            .collect();
        let find = |name: &str| header.iter().position(|h| *h == name);
        let x_cols: Vec<usize> = (0..).map_while(|j| find(&format!("x_{j}"))).collect();
        let w_cols: Vec<usize> = (0..).map_while(|j| find(&format!("w_{j}"))).collect();
        if x_cols.is_empty() {
            return Err(malformed("no x_0 column".into()));
        }
        let t_col = find("t").ok_or_else(|| malformed("missing column t".into()))?;
        let y_col = find("y").ok_or_else(|| malformed("missing column y".into()))?;
        let po_cols = find("y0").zip(find("y1"));
        let mu_cols = find("mu0").zip(find("mu1"));
        let p_col = find("propensity");

        let (mut x, mut t, mut y) = (Vec::new(), Vec::new(), Vec::new());
        let (mut y0, mut y1, mut prop, mut w) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        let (mut mu0, mut mu1) = (Vec::new(), Vec::new());
        for (line_no, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != header.len() {
                return Err(malformed(format!(
                    "data row {line_no} has {} fields, header has {}",
                    fields.len(),
                    header.len()
                )));
            }
            let num = |c: usize| -> Result<f64> {
                fields[c].parse::<f64>().map_err(|_| {
                    malformed(format!(
                        "column {} row {line_no}: cannot parse {:?}",
                        header[c], fields[c]
                    ))
                })
            };
            for &c in &x_cols {
                x.push(num(c)?);
            }
            let tv = num(t_col)?;
            if tv != 0.0 && tv != 1.0 {
                return Err(malformed(format!(
                    "column t row {line_no}: {tv} is not 0 or 1"
                )));
            }
            t.push(tv as u8);
            y.push(num(y_col)?);
            if let Some((a, b)) = po_cols {
                y0.push(num(a)?);
                y1.push(num(b)?);
            }
            if let Some((a, b)) = mu_cols {
                mu0.push(num(a)?);
                mu1.push(num(b)?);
            }
            if let Some(c) = p_col {
                prop.push(num(c)?);
            }
            for &c in &w_cols {
                w.push(num(c)?);
            }
        }
        let n = t.len();
        let col = |v: Vec<f64>| Tensor2::column_vector(&v);
        let ds = Self {
            x: Tensor2::from_vec(n, x_cols.len(), x)?,
            t,
            y: col(y),
            y0: po_cols.map(|_| col(std::mem::take(&mut y0))),
            y1: po_cols.map(|_| col(std::mem::take(&mut y1))),
            mu0: mu_cols.map(|_| col(std::mem::take(&mut mu0))),
            mu1: mu_cols.map(|_| col(std::mem::take(&mut mu1))),
            w: (!w_cols.is_empty())
                .then(|| Tensor2::from_vec(n, w_cols.len(), w))
                .transpose()?,
            propensity: p_col.map(|_| prop),
        };
        ds.validate().map_err(|e| malformed(e.to_string()))?;
        Ok(ds)
    }
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Split proportions for [`split`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitRatios {
    pub const THIRDS: SplitRatios = SplitRatios {
        train: 1.0 / 3.0,
        val: 1.0 / 3.0,
        test: 1.0 / 3.0,
    };
    pub const IHDP: SplitRatios = SplitRatios {
        train: 0.63,
        val: 0.27,
        test: 0.10,
    };
}

/// Split sizes: train and validation rounded, test takes the remainder.
pub fn split_sizes(n: usize, ratios: SplitRatios) -> Result<(usize, usize, usize)> {
    let SplitRatios { train, val, test } = ratios;
    if [train, val, test]
        .iter()
        .any(|r| !r.is_finite() || *r < 0.0)
    {
        return Err(Error::Config(
            "split ratios must be finite and non-negative".into(),
        ));
    }
    if ((train + val + test) - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split ratios sum to {}, expected 1",
            train + val + test
        )));
    }
    if train == 0.0 || val == 0.0 {
        return Err(Error::Config(
            "train and validation ratios must be positive".into(),
        ));
    }
    let n_train = (train * n as f64).round() as usize;
    let n_val = ((val * n as f64).round() as usize).min(n - n_train.min(n));
    let n_train = n_train.min(n);
    let n_test = n - n_train - n_val;
    if n_train == 0 || n_val == 0 {
        return Err(Error::Config(format!("{n} rows is too few for the split")));
    }
    Ok((n_train, n_val, n_test))
}

/// Disjoint train/validation/test partition by a shuffled permutation.
/// Also returns the row indices of each part.
pub fn split_with_indices(
    data: &Dataset,
    ratios: SplitRatios,
    rng: &mut Rng,
) -> Result<([Dataset; 3], [Vec<usize>; 3])> {
    let (n_train, n_val, _) = split_sizes(data.len(), ratios)?;
    let perm = rng.permutation(data.len());
    let train_idx = perm[..n_train].to_vec();
    let val_idx = perm[n_train..n_train + n_val].to_vec();
    let test_idx = perm[n_train + n_val..].to_vec();
    Ok((
        [
            data.subset(&train_idx),
            data.subset(&val_idx),
            data.subset(&test_idx),
        ],
        [train_idx, val_idx, test_idx],
    ))
}

pub fn split(
    data: &Dataset,
    ratios: SplitRatios,
    rng: &mut Rng,
) -> Result<(Dataset, Dataset, Dataset)> {
    let ([a, b, c], _) = split_with_indices(data, ratios, rng)?;
    Ok((a, b, c))
}
