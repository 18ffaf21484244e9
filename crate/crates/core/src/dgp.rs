//! Randomized synthetic data-generating processes with a tunable degree of
//! covariate overlap.
//!
//! ```text
//! X ~ N(μ, diag(σ²))
//! W | X ~ N(h(X), diag(exp k(X)))
//! T | X ~ Bernoulli(logistic(ω·l(X)))
//! Y(t) | W ~ N(f_t(W) / C_t, g_t(W)²)
//! ```
//!
//! `h`, `k`, `l` are linear with standard-normal weights. Each `f_t` is a
//! bias-free leaky-ReLU chain of width `dim_w` whose weights all lie in
//! `(−1.1, −0.9)`; `C_t` is the standard deviation of `f_t(W)` over the
//! generated group `T = t`, so each normalized group has unit variance.
//! In heteroscedastic mode `g_t = 2·softplus(f_t(W)/C_t) / max`, the max
//! taken over the generated sample, so `g_t ∈ (0, 2]`.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::numerics::{sigmoid, softplus, Rng, Tensor2};

pub const DEFAULT_DIM_X: usize = 30;
pub const LEAKY_ALPHA: f64 = 0.5;
/// Propensity bound below which a unit counts as lacking overlap.
pub const OVERLAP_THRESHOLD: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// `g_t ≡ 1`.
    #[default]
    Unit,
    /// Outcome standard deviation depends on `W`.
    Heteroscedastic,
}

impl std::str::FromStr for NoiseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unit" => Ok(NoiseMode::Unit),
            "heteroscedastic" => Ok(NoiseMode::Heteroscedastic),
            other => Err(Error::Config(format!("unknown noise mode {other:?}"))),
        }
    }
}

/// Outcome scale constants, computed on a generated sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalizers {
    /// `C_0, C_1`.
    pub c: [f64; 2],
    /// Max of `softplus(f_t/C_t)` per arm; unused in unit-noise mode.
    pub g_max: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub dim_x: usize,
    pub dim_w: usize,
    pub mu: Vec<f64>,
    /// Standard deviations of `X`.
    pub sigma: Vec<f64>,
    /// `dim_x × dim_w`.
    pub h_w: Tensor2,
    pub k_w: Tensor2,
    /// `dim_x × 1`.
    pub l_w: Tensor2,
    pub omega: f64,
    /// Layer weights of `f_0` and `f_1`, each `dim_w × dim_w` except the last
    /// (`dim_w × 1`).
    pub f: [Vec<Tensor2>; 2],
    pub noise_mode: NoiseMode,
    /// Fixed normalizers; `None` means compute them from each generated sample.
    pub normalizers: Option<Normalizers>,
}

/// Draws a random spec. `dim_x` is [`DEFAULT_DIM_X`].
pub fn sample_dgp_spec(
    rng: &mut Rng,
    dim_w: usize,
    omega: f64,
    noise_mode: NoiseMode,
) -> Result<DgpSpec> {
    sample_dgp_spec_with_dim_x(rng, DEFAULT_DIM_X, dim_w, omega, noise_mode)
}

pub fn sample_dgp_spec_with_dim_x(
    rng: &mut Rng,
    dim_x: usize,
    dim_w: usize,
    omega: f64,
    noise_mode: NoiseMode,
) -> Result<DgpSpec> {
    if dim_x == 0 || dim_w == 0 {
        return Err(Error::Config("dim_x and dim_w must be positive".into()));
    }
    if !(omega >= 0.0 && omega.is_finite()) {
        return Err(Error::Config(format!(
            "omega must be non-negative, got {omega}"
        )));
    }
    let mu = (0..dim_x).map(|_| rng.uniform_open(-0.2, 0.2)).collect();
    let sigma = (0..dim_x).map(|_| rng.uniform_open(0.0, 0.2)).collect();
    let mut normal_matrix =
        |r: usize, c: usize| Tensor2::from_vec(r, c, rng.normals(r * c)).expect("consistent shape");
    let h_w = normal_matrix(dim_x, dim_w);
    let k_w = normal_matrix(dim_x, dim_w);
    let l_w = normal_matrix(dim_x, 1);
    let outcome_net = |rng: &mut Rng| {
        let depth = rng.int_inclusive(3, 8);
        (0..depth)
            .map(|i| {
                let cols = if i + 1 == depth { 1 } else { dim_w };
                let w = (0..dim_w * cols)
                    .map(|_| rng.uniform_open(-1.1, -0.9))
                    .collect();
                Tensor2::from_vec(dim_w, cols, w).expect("consistent shape")
            })
            .collect::<Vec<_>>()
    };
    let f0 = outcome_net(rng);
    let f1 = outcome_net(rng);
    Ok(DgpSpec {
        dim_x,
        dim_w,
        mu,
        sigma,
        h_w,
        k_w,
        l_w,
        omega,
        f: [f0, f1],
        noise_mode,
        normalizers: None,
    })
}

impl DgpSpec {
    /// Unnormalized `f_t(W)` for every row of `w`.
    pub fn raw_outcome(&self, t: usize, w: &Tensor2) -> Result<Vec<f64>> {
        let layers = &self.f[t];
        let last = layers.len() - 1;
        let mut a = w.clone();
        for (i, layer) in layers.iter().enumerate() {
            a = a.matmul(layer)?;
            if i < last {
                a = a.map(|v| if v > 0.0 { v } else { LEAKY_ALPHA * v });
            }
        }
        Ok(a.into_data())
    }

    /// `p(T = 1 | x)` per row.
    pub fn propensity(&self, x: &Tensor2) -> Result<Vec<f64>> {
        Ok(x.matmul(&self.l_w)?
            .data()
            .iter()
            .map(|&v| sigmoid(self.omega * v))
            .collect())
    }

    /// Mean outcome `f_t(w)/C_t` under the given normalizers.
    pub fn outcome_mean(&self, t: usize, w: &Tensor2, norm: &Normalizers) -> Result<Vec<f64>> {
        Ok(self
            .raw_outcome(t, w)?
            .into_iter()
            .map(|v| v / norm.c[t])
            .collect())
    }

    /// Outcome standard deviation `g_t(w)`.
    pub fn outcome_std(&self, t: usize, mean: &[f64], norm: &Normalizers) -> Vec<f64> {
        match self.noise_mode {
            NoiseMode::Unit => vec![1.0; mean.len()],
            NoiseMode::Heteroscedastic => mean
                .iter()
                .map(|&m| 2.0 * softplus(m) / norm.g_max[t])
                .collect(),
        }
    }

    pub fn check(&self) -> Result<()> {
        let ok = self.mu.len() == self.dim_x
            && self.sigma.len() == self.dim_x
            && self.h_w.shape() == (self.dim_x, self.dim_w)
            && self.k_w.shape() == (self.dim_x, self.dim_w)
            && self.l_w.shape() == (self.dim_x, 1)
            && self.f.iter().all(|net| {
                !net.is_empty()
                    && net.iter().enumerate().all(|(i, l)| {
                        l.rows() == self.dim_w
                            && l.cols() == if i + 1 == net.len() { 1 } else { self.dim_w }
                    })
            });
        if ok {
            Ok(())
        } else {
            Err(Error::Shape("DGP parameter shapes are inconsistent".into()))
        }
    }
}

fn group_std(values: &[f64], t: &[u8], arm: u8) -> f64 {
    let group: Vec<f64> = values
        .iter()
        .zip(t)
        .filter(|(_, &ti)| ti == arm)
        .map(|(&v, _)| v)
        .collect();
    if group.len() < 2 {
        return 1.0;
    }
    let mean = group.iter().sum::<f64>() / group.len() as f64;
    let var = group.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (group.len() - 1) as f64;
    if var > 0.0 {
        var.sqrt()
    } else {
        1.0
    }
}

/// Samples `n` units. Draw order: X, W, T, Y(0) noise, Y(1) noise.
pub fn generate(spec: &DgpSpec, n: usize, rng: &mut Rng) -> Result<Dataset> {
    Ok(generate_with_normalizers(spec, n, rng)?.0)
}

/// As [`generate`], also returning the normalizers that were applied.
pub fn generate_with_normalizers(
    spec: &DgpSpec,
    n: usize,
    rng: &mut Rng,
) -> Result<(Dataset, Normalizers)> {
    spec.check()?;
    if n == 0 {
        return Err(Error::Config("cannot generate zero units".into()));
    }
    let (m, k) = (spec.dim_x, spec.dim_w);

    let mut x = Tensor2::zeros(n, m);
    for i in 0..n {
        for (j, v) in x.row_mut(i).iter_mut().enumerate() {
            *v = spec.mu[j] + spec.sigma[j] * rng.standard_normal();
        }
    }

    let h = x.matmul(&spec.h_w)?;
    let log_var = x.matmul(&spec.k_w)?;
    let mut w = Tensor2::zeros(n, k);
    for i in 0..n {
        for j in 0..k {
            let sd = (0.5 * log_var.get(i, j)).exp();
            w.set(i, j, h.get(i, j) + sd * rng.standard_normal());
        }
    }

    let propensity = spec.propensity(&x)?;
    let t: Vec<u8> = propensity.iter().map(|&p| rng.bernoulli(p) as u8).collect();

    let raw = [spec.raw_outcome(0, &w)?, spec.raw_outcome(1, &w)?];
    let norm = match spec.normalizers {
        Some(fixed) => fixed,
        None => {
            let c = [group_std(&raw[0], &t, 0), group_std(&raw[1], &t, 1)];
            let g_max = [0, 1].map(|a| {
                raw[a]
                    .iter()
                    .map(|&v| softplus(v / c[a]))
                    .fold(f64::MIN_POSITIVE, f64::max)
            });
            Normalizers { c, g_max }
        }
    };

    let mut potential = Vec::with_capacity(2);
    let mut means = Vec::with_capacity(2);
    for arm in 0..2 {
        let mean: Vec<f64> = raw[arm].iter().map(|v| v / norm.c[arm]).collect();
        let sd = spec.outcome_std(arm, &mean, &norm);
        let y: Vec<f64> = mean
            .iter()
            .zip(&sd)
            .map(|(mu, s)| mu + s * rng.standard_normal())
            .collect();
        potential.push(Tensor2::column_vector(&y));
        means.push(Tensor2::column_vector(&mean));
    }
    let y1 = potential.pop().expect("two arms");
    let y0 = potential.pop().expect("two arms");
    let y: Vec<f64> = (0..n)
        .map(|i| {
            if t[i] == 1 {
                y1.get(i, 0)
            } else {
                y0.get(i, 0)
            }
        })
        .collect();

    let mut data = Dataset::new(x, t, Tensor2::column_vector(&y))?;
    data.y0 = Some(y0);
    data.y1 = Some(y1);
    data.mu1 = means.pop();
    data.mu0 = means.pop();
    data.w = Some(w);
    data.propensity = Some(propensity);
    data.validate()?;
    Ok((data, norm))
}

/// Fraction of units with `min(p, 1 − p) < threshold`.
pub fn overlap_degree(data: &Dataset, threshold: f64) -> Result<f64> {
    let p = data
        .propensity
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("overlap degree needs known propensities".into()))?;
    if p.is_empty() {
        return Err(Error::InvalidInput(
            "overlap degree of an empty dataset".into(),
        ));
    }
    let limited = p.iter().filter(|&&q| q.min(1.0 - q) < threshold).count();
    Ok(limited as f64 / p.len() as f64)
}
