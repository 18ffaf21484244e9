//! Effect-estimation errors and identification diagnostics.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::estimation::{CateEstimates, EstimationMode};
use crate::model::IntactVaeModel;
use crate::numerics::{kl_diag_gaussians, DiagonalGaussian, Tensor2};

fn check_lengths(y0: &[f64], y1: &[f64], tau_hat: &[f64]) -> Result<()> {
    if y0.is_empty() {
        return Err(Error::InvalidInput("metrics need at least one unit".into()));
    }
    if y0.len() != y1.len() || y0.len() != tau_hat.len() {
        return Err(Error::Shape(format!(
            "metric inputs have lengths {}, {}, {}",
            y0.len(),
            y1.len(),
            tau_hat.len()
        )));
    }
    Ok(())
}

/// `|mean(y1 − y0) − mean(τ̂)|`.
pub fn eps_ate(y0: &[f64], y1: &[f64], tau_hat: &[f64]) -> Result<f64> {
    check_lengths(y0, y1, tau_hat)?;
    let n = y0.len() as f64;
    let truth = y0.iter().zip(y1).map(|(a, b)| b - a).sum::<f64>() / n;
    let est = tau_hat.iter().sum::<f64>() / n;
    Ok((truth - est).abs())
}

/// `mean(((y1 − y0) − τ̂)²)`.
pub fn pehe(y0: &[f64], y1: &[f64], tau_hat: &[f64]) -> Result<f64> {
    check_lengths(y0, y1, tau_hat)?;
    let sum: f64 = y0
        .iter()
        .zip(y1)
        .zip(tau_hat)
        .map(|((a, b), t)| ((b - a) - t).powi(2))
        .sum();
    Ok(sum / y0.len() as f64)
}

pub fn root_pehe(y0: &[f64], y1: &[f64], tau_hat: &[f64]) -> Result<f64> {
    Ok(pehe(y0, y1, tau_hat)?.sqrt())
}

/// Which potential outcomes the effect metrics compare against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectReference {
    /// Sampled `y(0), y(1)`; includes outcome noise in PEHE.
    #[default]
    Sampled,
    /// Noiseless `μ_0(x), μ_1(x)`.
    Noiseless,
}

/// First-coordinate reference outcomes `(y0, y1)` of `data`.
pub fn reference_outcomes(
    data: &Dataset,
    reference: EffectReference,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (a, b, what) = match reference {
        EffectReference::Sampled => (&data.y0, &data.y1, "potential outcomes"),
        EffectReference::Noiseless => (&data.mu0, &data.mu1, "noiseless outcome means"),
    };
    match (a, b) {
        (Some(a), Some(b)) => Ok((a.column(0), b.column(0))),
        _ => Err(Error::InvalidInput(format!("dataset carries no {what}"))),
    }
}

/// Per-coordinate affine fit quality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineRecovery {
    /// Slopes of the diagonal fit; empty for the full-linear fit.
    pub slope: Vec<f64>,
    pub intercept: Vec<f64>,
    pub r2_pooled: f64,
    /// R² in each treatment group under the pooled map; `None` for an empty
    /// or degenerate group.
    pub r2_group: [Option<f64>; 2],
    pub full_linear: bool,
}

fn column_stats(m: &Tensor2, rows: &[usize], j: usize) -> (f64, f64) {
    let n = rows.len() as f64;
    let mean = rows.iter().map(|&i| m.get(i, j)).sum::<f64>() / n;
    let ss = rows
        .iter()
        .map(|&i| (m.get(i, j) - mean).powi(2))
        .sum::<f64>();
    (mean, ss)
}

fn diag_r2(z: &Tensor2, pred: &Tensor2, rows: &[usize]) -> Option<f64> {
    if rows.len() < 2 {
        return None;
    }
    let k = z.cols();
    let mut total = 0.0;
    for j in 0..k {
        let (_, ss_tot) = column_stats(z, rows, j);
        if ss_tot <= 0.0 {
            return None;
        }
        let ss_res: f64 = rows
            .iter()
            .map(|&i| (z.get(i, j) - pred.get(i, j)).powi(2))
            .sum();
        total += (1.0 - ss_res / ss_tot).clamp(0.0, 1.0);
    }
    Some(total / k as f64)
}

fn to_matrix(m: &Tensor2, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.cols(), |r, c| m.get(rows[r], c))
}

/// `1 − tr(Σ_tot⁻¹ Σ_res) / k`, invariant to invertible affine maps of `z`.
fn full_r2(z: &Tensor2, pred: &Tensor2, rows: &[usize]) -> Option<f64> {
    if rows.len() < 2 {
        return None;
    }
    let zm = to_matrix(z, rows);
    let res = zm.clone() - to_matrix(pred, rows);
    let centered = {
        let mean = zm.row_mean();
        let mut c = zm;
        for mut r in c.row_iter_mut() {
            r -= &mean;
        }
        c
    };
    let s_tot = centered.transpose() * &centered;
    let s_res = res.transpose() * &res;
    let inv = s_tot.try_inverse()?;
    let k = z.cols() as f64;
    Some((1.0 - (inv * s_res).trace() / k).clamp(0.0, 1.0))
}

/// Fits `z_rec ≈ diag(a)·w + b` (or a full affine map when `full_linear`)
/// on all units, then scores the pooled map overall and per treatment group.
pub fn affine_recovery(
    z_rec: &Tensor2,
    w_true: &Tensor2,
    t: &[u8],
    full_linear: bool,
) -> Result<AffineRecovery> {
    let (n, k) = z_rec.shape();
    if w_true.shape() != (n, k) || t.len() != n {
        return Err(Error::Shape(format!(
            "affine recovery needs matching shapes: z is {n}x{k}, w is {}x{}, t has {}",
            w_true.rows(),
            w_true.cols(),
            t.len()
        )));
    }
    if n < 2 {
        return Err(Error::InvalidInput(
            "affine recovery needs at least two units".into(),
        ));
    }
    let all: Vec<usize> = (0..n).collect();
    let groups = [0u8, 1].map(|arm| (0..n).filter(|&i| t[i] == arm).collect::<Vec<_>>());

    let (pred, slope, intercept) = if full_linear {
        // [w, 1] · B = z by least squares
        let design = DMatrix::from_fn(n, k + 1, |r, c| if c < k { w_true.get(r, c) } else { 1.0 });
        let target = to_matrix(z_rec, &all);
        let coef = design
            .clone()
            .svd(true, true)
            .solve(&target, 1e-12)
            .map_err(|e| Error::InvalidInput(format!("affine fit failed: {e}")))?;
        let fitted = design * &coef;
        let pred = Tensor2::from_vec(
            n,
            k,
            (0..n)
                .flat_map(|r| (0..k).map(move |c| (r, c)))
                .map(|(r, c)| fitted[(r, c)])
                .collect(),
        )?;
        let intercept = (0..k).map(|c| coef[(k, c)]).collect();
        (pred, Vec::new(), intercept)
    } else {
        let mut pred = Tensor2::zeros(n, k);
        let mut slope = Vec::with_capacity(k);
        let mut intercept = Vec::with_capacity(k);
        for j in 0..k {
            let (wm, ss_w) = column_stats(w_true, &all, j);
            let (zm, _) = column_stats(z_rec, &all, j);
            let cov: f64 = (0..n)
                .map(|i| (w_true.get(i, j) - wm) * (z_rec.get(i, j) - zm))
                .sum();
            let a = if ss_w > 0.0 { cov / ss_w } else { 0.0 };
            let b = zm - a * wm;
            for i in 0..n {
                pred.set(i, j, a * w_true.get(i, j) + b);
            }
            slope.push(a);
            intercept.push(b);
        }
        (pred, slope, intercept)
    };

    let score = |rows: &[usize]| {
        if full_linear {
            full_r2(z_rec, &pred, rows)
        } else {
            diag_r2(z_rec, &pred, rows)
        }
    };
    Ok(AffineRecovery {
        slope,
        intercept,
        r2_pooled: score(&all).unwrap_or(0.0),
        r2_group: [score(&groups[0]), score(&groups[1])],
        full_linear,
    })
}

/// Which latent summary stands in for the recovered representation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentSource {
    /// Prior mean `h(x)`.
    #[default]
    PriorMean,
    /// Encoder mean at the factual triple.
    PosteriorMean,
}

pub fn recovered_latent(
    model: &IntactVaeModel,
    data: &Dataset,
    source: LatentSource,
) -> Result<Tensor2> {
    Ok(match source {
        LatentSource::PriorMean => model.prior_batch(&data.x)?.0,
        LatentSource::PosteriorMean => {
            model
                .encode_batch(&data.x, &data.y, &data.treatment_column())?
                .0
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImbalanceSummary {
    pub mean: f64,
    pub median: f64,
    pub max: f64,
}

/// `D(x) = Σ_t sqrt(KL(q_t ‖ q_{1−t}) / 2)` for one pair of latent Gaussians.
pub fn imbalance_between(q0: &DiagonalGaussian, q1: &DiagonalGaussian) -> Result<f64> {
    let a = kl_diag_gaussians(q0, q1)?;
    let b = kl_diag_gaussians(q1, q0)?;
    Ok((a / 2.0).sqrt() + (b / 2.0).sqrt())
}

/// Per-unit `D(x_i)` with `q_t` approximated by the encoder at `(x_i, y_i, t)`
/// using the factual outcome for both arms.
pub fn conditional_imbalance(model: &IntactVaeModel, data: &Dataset) -> Result<Vec<f64>> {
    let n = data.len();
    let arms = [0.0, 1.0].map(|t| model.encode_batch(&data.x, &data.y, &Tensor2::filled(n, 1, t)));
    let [a0, a1] = arms;
    let ((m0, v0), (m1, v1)) = (a0?, a1?);
    (0..n)
        .map(|i| {
            let q0 = DiagonalGaussian::new(m0.row(i).to_vec(), v0.row(i).to_vec())?;
            let q1 = DiagonalGaussian::new(m1.row(i).to_vec(), v1.row(i).to_vec())?;
            imbalance_between(&q0, &q1)
        })
        .collect()
}

pub fn summarize(values: &[f64]) -> Option<ImbalanceSummary> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    Some(ImbalanceSummary {
        mean: sorted.iter().sum::<f64>() / n as f64,
        median,
        max: sorted[n - 1],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mode: EstimationMode,
    pub reference: EffectReference,
    pub eps_ate: f64,
    pub pehe: f64,
    pub root_pehe: f64,
    pub recovery: Option<AffineRecovery>,
    /// Factual-outcome approximation of the encoder imbalance.
    pub imbalance: Option<ImbalanceSummary>,
}

impl MetricsReport {
    /// Effect errors of `est` against `data`, plus the optional diagnostics.
    pub fn evaluate(
        model: &IntactVaeModel,
        data: &Dataset,
        est: &CateEstimates,
        reference: EffectReference,
        latent: LatentSource,
    ) -> Result<Self> {
        let (y0, y1) = reference_outcomes(data, reference)?;
        let tau = est.tau();
        let p = pehe(&y0, &y1, &tau)?;
        let recovery = match &data.w {
            Some(w) if w.cols() == model.dims().z => Some(affine_recovery(
                &recovered_latent(model, data, latent)?,
                w,
                &data.t,
                false,
            )?),
            _ => None,
        };
        Ok(Self {
            mode: est.mode,
            reference,
            eps_ate: eps_ate(&y0, &y1, &tau)?,
            pehe: p,
            root_pehe: p.sqrt(),
            recovery,
            imbalance: summarize(&conditional_imbalance(model, data)?),
        })
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    #[test]
    fn effect_errors_on_hand_inputs() {
        let y0 = [0.0, 1.0, 2.0, -1.0];
        let y1 = [1.0, 1.0, 5.0, 1.0];
        let ite = [1.0, 0.0, 3.0, 2.0];
        assert_eq!(eps_ate(&y0, &y1, &ite).unwrap(), 0.0);
        assert_eq!(pehe(&y0, &y1, &ite).unwrap(), 0.0);
        let shifted = ite.map(|v| v - 0.5);
        assert_eq!(eps_ate(&y0, &y1, &shifted).unwrap(), 0.5);
        assert_eq!(pehe(&y0, &y1, &shifted).unwrap(), 0.25);
        assert!(eps_ate(&[], &[], &[]).is_err());
        assert!(pehe(&y0, &y1, &[1.0]).is_err());
    }

    #[test]
    fn exact_affine_map_is_recovered() {
        let mut rng = Rng::new(3);
        let w: Vec<f64> = rng.normals(200);
        let z: Vec<f64> = w.iter().map(|v| 2.0 * v + 3.0).collect();
        let t: Vec<u8> = (0..200).map(|i| (i % 2) as u8).collect();
        let rec = affine_recovery(
            &Tensor2::column_vector(&z),
            &Tensor2::column_vector(&w),
            &t,
            false,
        )
        .unwrap();
        assert!((rec.slope[0] - 2.0).abs() < 1e-12);
        assert!((rec.intercept[0] - 3.0).abs() < 1e-12);
        assert!((rec.r2_pooled - 1.0).abs() < 1e-12);
        for g in rec.r2_group {
            assert!((g.unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn independent_latent_has_low_r2() {
        let mut rng = Rng::new(8);
        let w = Tensor2::from_vec(500, 1, rng.normals(500)).unwrap();
        let z = Tensor2::from_vec(500, 1, rng.normals(500)).unwrap();
        let t = vec![0; 500];
        for full in [false, true] {
            assert!(affine_recovery(&z, &w, &t, full).unwrap().r2_pooled < 0.1);
        }
    }

    #[test]
    fn full_fit_matches_diag_fit_in_one_dimension() {
        let mut rng = Rng::new(9);
        let w: Vec<f64> = rng.normals(300);
        let z: Vec<f64> = w.iter().map(|v| -v + 0.5 * rng.standard_normal()).collect();
        let t: Vec<u8> = (0..300).map(|i| (i % 3 == 0) as u8).collect();
        let (z, w) = (Tensor2::column_vector(&z), Tensor2::column_vector(&w));
        let d = affine_recovery(&z, &w, &t, false).unwrap();
        let f = affine_recovery(&z, &w, &t, true).unwrap();
        assert!((d.r2_pooled - f.r2_pooled).abs() < 1e-10);
    }

    #[test]
    fn imbalance_closed_form() {
        let q0 = DiagonalGaussian::new(vec![0.0], vec![1.0]).unwrap();
        let q1 = DiagonalGaussian::new(vec![1.0], vec![1.0]).unwrap();
        assert!((imbalance_between(&q0, &q1).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(
            imbalance_between(&q0, &q1).unwrap(),
            imbalance_between(&q1, &q0).unwrap()
        );
        assert_eq!(imbalance_between(&q0, &q0).unwrap(), 0.0);
    }

    #[test]
    fn summary_statistics() {
        let s = summarize(&[3.0, 1.0, 2.0, 10.0]).unwrap();
        assert_eq!((s.mean, s.median, s.max), (4.0, 2.5, 10.0));
        assert!(summarize(&[]).is_none());
    }
}
