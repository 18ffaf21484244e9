//! Diagonal Gaussian algebra, scalar and on-tape.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::rng::Rng;
use crate::numerics::tape::{softplus, Tape, Var};

/// Lower bound added to every learned variance.
pub const VAR_FLOOR: f64 = 1e-4;

/// Maps an unconstrained network output to a variance: `softplus(raw) + VAR_FLOOR`.
pub fn variance_from_raw(raw: f64) -> f64 {
    softplus(raw) + VAR_FLOOR
}

/// `N(mean, diag(var))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagonalGaussian {
    mean: Vec<f64>,
    var: Vec<f64>,
}

impl DiagonalGaussian {
    pub fn new(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        if mean.len() != var.len() {
            return Err(Error::Shape(format!(
                "gaussian mean has {} entries, var has {}",
                mean.len(),
                var.len()
            )));
        }
        if let Some(i) = mean.iter().position(|m| !m.is_finite()) {
            return Err(Error::NonFinite(format!("gaussian mean[{i}]")));
        }
        if let Some(i) = var.iter().position(|v| !v.is_finite() || *v < VAR_FLOOR) {
            return Err(Error::InvalidInput(format!(
                "gaussian var[{i}] = {} is below the floor {VAR_FLOOR}",
                var[i]
            )));
        }
        Ok(Self { mean, var })
    }

    /// Variance heads: `var = softplus(raw) + VAR_FLOOR`.
    pub fn from_raw(mean: Vec<f64>, raw_var: &[f64]) -> Result<Self> {
        Self::new(
            mean,
            raw_var.iter().map(|&r| variance_from_raw(r)).collect(),
        )
    }

    /// `N(0, I)` of dimension `n`.
    pub fn standard(n: usize) -> Self {
        Self {
            mean: vec![0.0; n],
            var: vec![1.0; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn var(&self) -> &[f64] {
        &self.var
    }

    /// `mean + sqrt(var) ⊙ eps` for caller-supplied standard-normal noise.
    pub fn reparameterize(&self, eps: &[f64]) -> Vec<f64> {
        debug_assert_eq!(eps.len(), self.dim());
        self.mean
            .iter()
            .zip(&self.var)
            .zip(eps)
            .map(|((m, v), e)| m + v.sqrt() * e)
            .collect()
    }

    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        let eps = rng.normals(self.dim());
        self.reparameterize(&eps)
    }

    /// Exact log density, summed over coordinates.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::Shape(format!(
                "log_density: point has {} entries, gaussian has {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(self
            .mean
            .iter()
            .zip(&self.var)
            .zip(x)
            .map(|((m, v), xi)| -0.5 * (2.0 * PI * v).ln() - (xi - m).powi(2) / (2.0 * v))
            .sum())
    }
}

/// Closed-form `KL(q ‖ p)` between diagonal Gaussians.
pub fn kl_diag_gaussians(q: &DiagonalGaussian, p: &DiagonalGaussian) -> Result<f64> {
    if q.dim() != p.dim() {
        return Err(Error::Shape(format!(
            "kl: dimensions {} and {} differ",
            q.dim(),
            p.dim()
        )));
    }
    let kl: f64 = (0..q.dim())
        .map(|j| {
            let (qm, qv, pm, pv) = (q.mean[j], q.var[j], p.mean[j], p.var[j]);
            0.5 * ((pv / qv).ln() + (qv + (qm - pm).powi(2)) / pv - 1.0)
        })
        .sum();
    Ok(kl.max(0.0))
}

/// Head of a network output split into `(mean, var)` nodes, var through
/// softplus plus the floor.
pub fn split_gaussian_head(tape: &mut Tape, out: Var, dim: usize) -> (Var, Var) {
    let mean = tape.slice_cols(out, 0, dim);
    let raw = tape.slice_cols(out, dim, 2 * dim);
    let sp = tape.softplus(raw);
    let var = tape.add_scalar(sp, VAR_FLOOR);
    (mean, var)
}

/// Reparameterized sample `mean + sqrt(var) ⊙ eps` on the tape.
pub fn reparameterize_on_tape(tape: &mut Tape, mean: Var, var: Var, eps: Var) -> Var {
    let std = tape.sqrt(var);
    let noise = tape.mul(std, eps);
    tape.add(mean, noise)
}

/// Per-row `KL(q ‖ p)` (a `B×1` node).
pub fn kl_rows_on_tape(tape: &mut Tape, q_mean: Var, q_var: Var, p_mean: Var, p_var: Var) -> Var {
    let ratio = tape.div(p_var, q_var);
    let log_ratio = tape.log(ratio);
    let diff = tape.sub(q_mean, p_mean);
    let diff2 = tape.square(diff);
    let num = tape.add(q_var, diff2);
    let quad = tape.div(num, p_var);
    let inner = tape.add(log_ratio, quad);
    let inner = tape.add_scalar(inner, -1.0);
    let half = tape.scale(inner, 0.5);
    tape.row_sum(half)
}
