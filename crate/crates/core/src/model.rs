//! The generative prognostic model and its β-weighted ELBO.
//!
//! Three networks:
//!
//! * prior `x ↦ (h(x), k(x))`, a function of covariates only, so the prior is
//!   balanced across treatment groups by construction;
//! * encoder `(x, y, t) ↦ (r_t(x, y), s_t(x, y))`;
//! * decoder `(z, t) ↦ (f_t(z), g_t(z))`.
//!
//! Every variance head passes through `softplus(·) + VAR_FLOOR`. The decoder
//! variance is `g²` in the objective below, so `log|g| = ½ log var`.
//!
//! Loss convention (per row, averaged over the batch, Gaussian constant
//! `(d/2) log 2π` dropped):
//!
//! ```text
//! loss = β·KL(q ‖ p) + Σ_j (y_j − f_j(z))² / (2 var_j) + ½ Σ_j log var_j
//! ```
//!
//! and [`ElboBreakdown::total`] is `−loss`, the β-ELBO.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Batch;
use crate::error::{Error, Result};
use crate::numerics::{
    kl_rows_on_tape, reparameterize_on_tape, split_gaussian_head, variance_from_raw, Activation,
    DiagonalGaussian, MlpParams, MlpVars, Rng, Tape, Tensor2, Var,
};

/// Format tag written into every checkpoint.
pub const CHECKPOINT_FORMAT: &str = "intact-vae-checkpoint/v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Covariate width `m`.
    pub x: usize,
    /// Latent width `n`.
    pub z: usize,
    /// Outcome width `d`.
    pub y: usize,
}

/// Hidden-layer layout shared by all three networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetPreset {
    /// Three hidden layers of 200 units.
    Paper,
    /// Two hidden layers of 64 units.
    Small,
}

impl NetPreset {
    pub fn hidden_widths(self) -> Vec<usize> {
        match self {
            NetPreset::Paper => vec![200; 3],
            NetPreset::Small => vec![64; 2],
        }
    }
}

impl std::str::FromStr for NetPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(NetPreset::Paper),
            "small" => Ok(NetPreset::Small),
            other => Err(Error::Config(format!("unknown net preset {other:?}"))),
        }
    }
}

/// How the treatment enters the encoder and decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadMode {
    /// One network per role with `t` appended as an input feature.
    #[default]
    Shared,
    /// One network per role and treatment value.
    Split,
}

impl std::str::FromStr for HeadMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shared" => Ok(HeadMode::Shared),
            "split" => Ok(HeadMode::Split),
            other => Err(Error::Config(format!("unknown head mode {other:?}"))),
        }
    }
}

/// A treatment-conditioned network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreatmentNet {
    Shared(MlpParams),
    Split([MlpParams; 2]),
}

#[derive(Debug, Clone)]
enum TreatmentVars {
    Shared(MlpVars),
    Split([MlpVars; 2]),
}

impl TreatmentNet {
    /// Random network mapping `input_dim` (without `t`) to `output_dim`.
    pub fn init(
        rng: &mut Rng,
        mode: HeadMode,
        input_dim: usize,
        hidden: &[usize],
        output_dim: usize,
    ) -> Self {
        let sizes = |extra: usize| {
            let mut s = vec![input_dim + extra];
            s.extend_from_slice(hidden);
            s.push(output_dim);
            s
        };
        match mode {
            HeadMode::Shared => {
                TreatmentNet::Shared(MlpParams::init(rng, &sizes(1), Activation::Relu))
            }
            HeadMode::Split => TreatmentNet::Split([
                MlpParams::init(rng, &sizes(0), Activation::Relu),
                MlpParams::init(rng, &sizes(0), Activation::Relu),
            ]),
        }
    }

    pub fn mode(&self) -> HeadMode {
        match self {
            TreatmentNet::Shared(_) => HeadMode::Shared,
            TreatmentNet::Split(_) => HeadMode::Split,
        }
    }

    pub fn nets(&self) -> Vec<&MlpParams> {
        match self {
            TreatmentNet::Shared(n) => vec![n],
            TreatmentNet::Split([a, b]) => vec![a, b],
        }
    }

    fn nets_mut(&mut self) -> Vec<&mut MlpParams> {
        match self {
            TreatmentNet::Shared(n) => vec![n],
            TreatmentNet::Split([a, b]) => vec![a, b],
        }
    }

    /// Input width excluding the treatment slot.
    fn base_input_dim(&self) -> usize {
        match self {
            TreatmentNet::Shared(n) => n.input_dim().saturating_sub(1),
            TreatmentNet::Split([a, _]) => a.input_dim(),
        }
    }

    fn output_dim(&self) -> usize {
        self.nets()[0].output_dim()
    }

    fn forward_batch(&self, input: &Tensor2, t: &Tensor2) -> Result<Tensor2> {
        match self {
            TreatmentNet::Shared(net) => net.forward_batch(&Tensor2::concat_cols(&[input, t])?),
            TreatmentNet::Split([n0, n1]) => {
                let o0 = n0.forward_batch(input)?;
                let o1 = n1.forward_batch(input)?;
                let mut out = o0;
                for r in 0..out.rows() {
                    if t.get(r, 0) == 1.0 {
                        out.row_mut(r).copy_from_slice(o1.row(r));
                    }
                }
                Ok(out)
            }
        }
    }

    fn bind(&self, tape: &mut Tape) -> TreatmentVars {
        match self {
            TreatmentNet::Shared(n) => TreatmentVars::Shared(n.bind(tape)),
            TreatmentNet::Split([a, b]) => TreatmentVars::Split([a.bind(tape), b.bind(tape)]),
        }
    }

    fn forward_on_tape(
        &self,
        tape: &mut Tape,
        vars: &TreatmentVars,
        input: Var,
        t: Var,
    ) -> Result<Var> {
        match (self, vars) {
            (TreatmentNet::Shared(net), TreatmentVars::Shared(v)) => {
                let joined = tape.concat_cols(&[input, t]);
                net.forward_on_tape(tape, v, joined)
            }
            (TreatmentNet::Split([n0, n1]), TreatmentVars::Split([v0, v1])) => {
                let o0 = n0.forward_on_tape(tape, v0, input)?;
                let o1 = n1.forward_on_tape(tape, v1, input)?;
                let neg_t = tape.scale(t, -1.0);
                let not_t = tape.add_scalar(neg_t, 1.0);
                let a = tape.mul_col(o0, not_t);
                let b = tape.mul_col(o1, t);
                Ok(tape.add(a, b))
            }
            _ => unreachable!("tape bindings always mirror the network layout"),
        }
    }
}

impl TreatmentVars {
    fn vars(&self) -> Vec<Var> {
        match self {
            TreatmentVars::Shared(v) => v.vars().collect(),
            TreatmentVars::Split([a, b]) => a.vars().chain(b.vars()).collect(),
        }
    }
}

/// The three-network VAE plus its KL weight β.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntactVaeModel {
    dims: ModelDims,
    beta: f64,
    prior_net: MlpParams,
    encoder: TreatmentNet,
    decoder: TreatmentNet,
}

/// Batch means of the three objective terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElboBreakdown {
    /// `KL(q ‖ p)`, unweighted.
    pub kl_term: f64,
    /// `Σ (y − f)² / (2 var)`.
    pub recon_term: f64,
    /// `½ Σ log var`, i.e. `Σ log|g|`.
    pub log_g_term: f64,
    /// `−β·kl_term − recon_term − log_g_term`.
    pub total: f64,
}

/// Loss, terms and gradients (aligned with [`IntactVaeModel::tensors`]).
#[derive(Debug, Clone)]
pub struct ElboEvaluation {
    pub loss: f64,
    pub breakdown: ElboBreakdown,
    pub grads: Vec<Tensor2>,
}

struct Bound {
    prior: MlpVars,
    encoder: TreatmentVars,
    decoder: TreatmentVars,
}

struct ElboNodes {
    loss: Var,
    kl_rows: Var,
    recon_rows: Var,
    log_g_rows: Var,
}

fn check_treatment(t: f64) -> Result<()> {
    if t == 0.0 || t == 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidTreatment(t))
    }
}

fn gaussian_rows(out: &Tensor2, dim: usize) -> (Tensor2, Tensor2) {
    let mean = out.slice_cols(0, dim);
    let var = out.slice_cols(dim, 2 * dim).map(variance_from_raw);
    (mean, var)
}

impl IntactVaeModel {
    pub fn new(
        dims: ModelDims,
        beta: f64,
        prior_net: MlpParams,
        encoder: TreatmentNet,
        decoder: TreatmentNet,
    ) -> Result<Self> {
        let model = Self {
            dims,
            beta,
            prior_net,
            encoder,
            decoder,
        };
        model.validate()?;
        Ok(model)
    }

    /// Randomly initialized model; see [`MlpParams::init`].
    pub fn init(
        rng: &mut Rng,
        dims: ModelDims,
        hidden: &[usize],
        heads: HeadMode,
        beta: f64,
    ) -> Result<Self> {
        let mut prior_sizes = vec![dims.x];
        prior_sizes.extend_from_slice(hidden);
        prior_sizes.push(2 * dims.z);
        let prior_net = MlpParams::init(rng, &prior_sizes, Activation::Relu);
        let encoder = TreatmentNet::init(rng, heads, dims.x + dims.y, hidden, 2 * dims.z);
        let decoder = TreatmentNet::init(rng, heads, dims.z, hidden, 2 * dims.y);
        Self::new(dims, beta, prior_net, encoder, decoder)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dims;
        if d.x == 0 || d.z == 0 || d.y == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!(
                "beta must be positive, got {}",
                self.beta
            )));
        }
        let expect = |what: &str, got: usize, want: usize| {
            if got == want {
                Ok(())
            } else {
                Err(Error::Shape(format!(
                    "{what}: width {got}, expected {want}"
                )))
            }
        };
        expect("prior input", self.prior_net.input_dim(), d.x)?;
        expect("prior output", self.prior_net.output_dim(), 2 * d.z)?;
        expect("encoder input", self.encoder.base_input_dim(), d.x + d.y)?;
        expect("encoder output", self.encoder.output_dim(), 2 * d.z)?;
        expect("decoder input", self.decoder.base_input_dim(), d.z)?;
        expect("decoder output", self.decoder.output_dim(), 2 * d.y)?;
        if self.encoder.mode() != self.decoder.mode() {
            return Err(Error::Config(
                "encoder and decoder head modes differ".into(),
            ));
        }
        for (name, net) in self.named_nets() {
            // re-run the layer-chain checks on deserialized networks
            MlpParams::new(net.layers().to_vec(), net.hidden_activation())
                .map_err(|e| Error::Shape(format!("{name}: {e}")))?;
        }
        Ok(())
    }

    fn named_nets(&self) -> Vec<(String, &MlpParams)> {
        let mut out = vec![("prior".to_string(), &self.prior_net)];
        for (role, net) in [("encoder", &self.encoder), ("decoder", &self.decoder)] {
            match net {
                TreatmentNet::Shared(n) => out.push((role.to_string(), n)),
                TreatmentNet::Split([a, b]) => {
                    out.push((format!("{role}.t0"), a));
                    out.push((format!("{role}.t1"), b));
                }
            }
        }
        out
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn set_beta(&mut self, beta: f64) -> Result<()> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::Config(format!("beta must be positive, got {beta}")));
        }
        self.beta = beta;
        Ok(())
    }

    pub fn heads(&self) -> HeadMode {
        self.encoder.mode()
    }

    pub fn prior_net(&self) -> &MlpParams {
        &self.prior_net
    }

    pub fn prior_net_mut(&mut self) -> &mut MlpParams {
        &mut self.prior_net
    }

    pub fn encoder(&self) -> &TreatmentNet {
        &self.encoder
    }

    pub fn encoder_mut(&mut self) -> &mut TreatmentNet {
        &mut self.encoder
    }

    pub fn decoder(&self) -> &TreatmentNet {
        &self.decoder
    }

    pub fn decoder_mut(&mut self) -> &mut TreatmentNet {
        &mut self.decoder
    }

    /// All parameter tensors: prior, then encoder, then decoder.
    pub fn tensors(&self) -> Vec<&Tensor2> {
        let mut out = self.prior_net.tensors();
        for net in self.encoder.nets().into_iter().chain(self.decoder.nets()) {
            out.extend(net.tensors());
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor2> {
        let mut out = self.prior_net.tensors_mut();
        for net in self
            .encoder
            .nets_mut()
            .into_iter()
            .chain(self.decoder.nets_mut())
        {
            out.extend(net.tensors_mut());
        }
        out
    }

    /// Parameter paths aligned with [`IntactVaeModel::tensors`].
    pub fn tensor_names(&self) -> Vec<String> {
        self.named_nets()
            .into_iter()
            .flat_map(|(name, net)| net.tensor_names(&name))
            .collect()
    }

    /// Number of prior-network tensors at the front of [`IntactVaeModel::tensors`].
    pub fn prior_tensor_count(&self) -> usize {
        self.prior_net.tensors().len()
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    // ---- evaluation without a tape ----

    /// `p(z | x)`, independent of treatment.
    pub fn prior(&self, x: &[f64]) -> Result<DiagonalGaussian> {
        let (m, v) = self.prior_batch(&Tensor2::row_vector(x))?;
        DiagonalGaussian::new(m.into_data(), v.into_data())
    }

    /// `q(z | x, y, t)`.
    pub fn encode(&self, x: &[f64], y: &[f64], t: f64) -> Result<DiagonalGaussian> {
        check_treatment(t)?;
        let (m, v) = self.encode_batch(
            &Tensor2::row_vector(x),
            &Tensor2::row_vector(y),
            &Tensor2::scalar(t),
        )?;
        DiagonalGaussian::new(m.into_data(), v.into_data())
    }

    /// `p(y | z, t)`.
    pub fn decode(&self, z: &[f64], t: f64) -> Result<DiagonalGaussian> {
        check_treatment(t)?;
        let (m, v) = self.decode_batch(&Tensor2::row_vector(z), &Tensor2::scalar(t))?;
        DiagonalGaussian::new(m.into_data(), v.into_data())
    }

    /// Row-wise prior means and variances.
    pub fn prior_batch(&self, x: &Tensor2) -> Result<(Tensor2, Tensor2)> {
        if x.cols() != self.dims.x {
            return Err(Error::Shape(format!(
                "prior: covariates have width {}, model expects {}",
                x.cols(),
                self.dims.x
            )));
        }
        Ok(gaussian_rows(
            &self.prior_net.forward_batch(x)?,
            self.dims.z,
        ))
    }

    pub fn encode_batch(
        &self,
        x: &Tensor2,
        y: &Tensor2,
        t: &Tensor2,
    ) -> Result<(Tensor2, Tensor2)> {
        if let Some(&bad) = t.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidTreatment(bad));
        }
        if x.cols() != self.dims.x || y.cols() != self.dims.y {
            return Err(Error::Shape(format!(
                "encode: got x width {} and y width {}, model expects {} and {}",
                x.cols(),
                y.cols(),
                self.dims.x,
                self.dims.y
            )));
        }
        let input = Tensor2::concat_cols(&[x, y])?;
        Ok(gaussian_rows(
            &self.encoder.forward_batch(&input, t)?,
            self.dims.z,
        ))
    }

    pub fn decode_batch(&self, z: &Tensor2, t: &Tensor2) -> Result<(Tensor2, Tensor2)> {
        if let Some(&bad) = t.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidTreatment(bad));
        }
        if z.cols() != self.dims.z {
            return Err(Error::Shape(format!(
                "decode: latent width {}, model expects {}",
                z.cols(),
                self.dims.z
            )));
        }
        Ok(gaussian_rows(
            &self.decoder.forward_batch(z, t)?,
            self.dims.y,
        ))
    }

    // ---- objective ----

    fn bind(&self, tape: &mut Tape) -> Bound {
        Bound {
            prior: self.prior_net.bind(tape),
            encoder: self.encoder.bind(tape),
            decoder: self.decoder.bind(tape),
        }
    }

    fn param_vars(bound: &Bound) -> Vec<Var> {
        bound
            .prior
            .vars()
            .chain(bound.encoder.vars())
            .chain(bound.decoder.vars())
            .collect()
    }

    fn record_elbo(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        batch: &Batch,
        eps: &Tensor2,
        beta: f64,
    ) -> Result<ElboNodes> {
        let (n, d) = (self.dims.z, self.dims.y);
        if batch.x.cols() != self.dims.x || batch.y.cols() != d {
            return Err(Error::Shape(format!(
                "batch has x width {} and y width {}, model expects {} and {d}",
                batch.x.cols(),
                batch.y.cols(),
                self.dims.x
            )));
        }
        if eps.shape() != (batch.len(), n) {
            return Err(Error::Shape(format!(
                "noise is {}x{}, expected {}x{n}",
                eps.rows(),
                eps.cols(),
                batch.len()
            )));
        }
        let x = tape.leaf(batch.x.clone());
        let y = tape.leaf(batch.y.clone());
        let t = tape.leaf(batch.t.clone());
        let eps = tape.leaf(eps.clone());

        let prior_out = self.prior_net.forward_on_tape(tape, &bound.prior, x)?;
        let (p_mean, p_var) = split_gaussian_head(tape, prior_out, n);

        let xy = tape.concat_cols(&[x, y]);
        let enc_out = self.encoder.forward_on_tape(tape, &bound.encoder, xy, t)?;
        let (q_mean, q_var) = split_gaussian_head(tape, enc_out, n);

        let z = reparameterize_on_tape(tape, q_mean, q_var, eps);
        let dec_out = self.decoder.forward_on_tape(tape, &bound.decoder, z, t)?;
        let (f, g_var) = split_gaussian_head(tape, dec_out, d);

        let kl_rows = kl_rows_on_tape(tape, q_mean, q_var, p_mean, p_var);

        let resid = tape.sub(y, f);
        let resid2 = tape.square(resid);
        let two_var = tape.scale(g_var, 2.0);
        let weighted = tape.div(resid2, two_var);
        let recon_rows = tape.row_sum(weighted);

        let log_var = tape.log(g_var);
        let half_log = tape.scale(log_var, 0.5);
        let log_g_rows = tape.row_sum(half_log);

        let weighted_kl = tape.scale(kl_rows, beta);
        let partial = tape.add(weighted_kl, recon_rows);
        let rows = tape.add(partial, log_g_rows);
        let total = tape.sum_all(rows);
        let loss = tape.scale(total, 1.0 / batch.len() as f64);

        if !tape.value(loss).get(0, 0).is_finite() {
            let row = tape
                .value(rows)
                .data()
                .iter()
                .position(|v| !v.is_finite())
                .unwrap_or(0);
            return Err(Error::NonFinite(format!("ELBO loss at batch row {row}")));
        }
        Ok(ElboNodes {
            loss,
            kl_rows,
            recon_rows,
            log_g_rows,
        })
    }

    fn breakdown(&self, tape: &Tape, nodes: &ElboNodes, beta: f64) -> ElboBreakdown {
        let mean = |v: Var| {
            let t = tape.value(v);
            t.sum() / t.rows() as f64
        };
        let kl_term = mean(nodes.kl_rows);
        let recon_term = mean(nodes.recon_rows);
        let log_g_term = mean(nodes.log_g_rows);
        ElboBreakdown {
            kl_term,
            recon_term,
            log_g_term,
            total: -(beta * kl_term + recon_term + log_g_term),
        }
    }

    /// Standard-normal reparameterization noise for a batch.
    pub fn draw_noise(&self, rows: usize, rng: &mut Rng) -> Tensor2 {
        Tensor2::from_vec(rows, self.dims.z, rng.normals(rows * self.dims.z))
            .expect("noise shape is consistent")
    }

    /// β-ELBO loss and gradients with one reparameterized sample per row.
    pub fn elbo_beta(&self, batch: &Batch, rng: &mut Rng) -> Result<ElboEvaluation> {
        let eps = self.draw_noise(batch.len(), rng);
        self.elbo_beta_with_noise(batch, &eps)
    }

    /// As [`IntactVaeModel::elbo_beta`] with caller-fixed noise (`B × n`).
    pub fn elbo_beta_with_noise(&self, batch: &Batch, eps: &Tensor2) -> Result<ElboEvaluation> {
        self.elbo_with_beta(batch, eps, self.beta)
    }

    /// Objective with an explicit β (the model's own β is ignored).
    pub fn elbo_with_beta(
        &self,
        batch: &Batch,
        eps: &Tensor2,
        beta: f64,
    ) -> Result<ElboEvaluation> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let nodes = self.record_elbo(&mut tape, &bound, batch, eps, beta)?;
        let mut grads = tape.backward(nodes.loss)?;
        let params = Self::param_vars(&bound);
        let tensors = self.tensors();
        let grads = params
            .iter()
            .zip(&tensors)
            .map(|(&v, like)| {
                grads
                    .take(v)
                    .unwrap_or_else(|| Tensor2::zeros(like.rows(), like.cols()))
            })
            .collect();
        Ok(ElboEvaluation {
            loss: tape.value(nodes.loss).get(0, 0),
            breakdown: self.breakdown(&tape, &nodes, beta),
            grads,
        })
    }

    /// Objective value only, no gradients.
    pub fn elbo_value_with_noise(&self, batch: &Batch, eps: &Tensor2) -> Result<ElboBreakdown> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let nodes = self.record_elbo(&mut tape, &bound, batch, eps, self.beta)?;
        Ok(self.breakdown(&tape, &nodes, self.beta))
    }

    // ---- checkpoints ----

    pub fn save(&self, path: &Path) -> Result<()> {
        let doc = Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            model: self.clone(),
        };
        fs::write(path, serde_json::to_string(&doc)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingData(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        Self::from_checkpoint_json(&text)
    }

    pub fn from_checkpoint_json(text: &str) -> Result<Self> {
        let doc: Checkpoint = serde_json::from_str(text)?;
        if doc.format != CHECKPOINT_FORMAT {
            return Err(Error::InvalidInput(format!(
                "checkpoint format {:?}, expected {CHECKPOINT_FORMAT:?}",
                doc.format
            )));
        }
        doc.model.validate()?;
        for (name, t) in doc.model.tensor_names().iter().zip(doc.model.tensors()) {
            Tensor2::from_vec(t.rows(), t.cols(), t.data().to_vec())
                .map_err(|e| Error::Shape(format!("{name}: {e}")))?;
        }
        Ok(doc.model)
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    model: IntactVaeModel,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(heads: HeadMode, seed: u64) -> IntactVaeModel {
        let dims = ModelDims { x: 3, z: 2, y: 1 };
        IntactVaeModel::init(&mut Rng::new(seed), dims, &[8, 8], heads, 1.0).unwrap()
    }

    fn zero_model(dims: ModelDims, heads: HeadMode) -> IntactVaeModel {
        let hidden = [4];
        let prior = MlpParams::zeros(&[dims.x, 4, 2 * dims.z], Activation::Relu);
        let mk = |input: usize, out: usize| match heads {
            HeadMode::Shared => TreatmentNet::Shared(MlpParams::zeros(
                &[input + 1, hidden[0], out],
                Activation::Relu,
            )),
            HeadMode::Split => TreatmentNet::Split([
                MlpParams::zeros(&[input, hidden[0], out], Activation::Relu),
                MlpParams::zeros(&[input, hidden[0], out], Activation::Relu),
            ]),
        };
        IntactVaeModel::new(
            dims,
            1.0,
            prior,
            mk(dims.x + dims.y, 2 * dims.z),
            mk(dims.z, 2 * dims.y),
        )
        .unwrap()
    }

    #[test]
    fn zero_weight_prior_returns_bias() {
        let dims = ModelDims { x: 3, z: 2, y: 1 };
        let mut m = zero_model(dims, HeadMode::Shared);
        m.prior_net_mut().layers_mut()[1].bias = Tensor2::row_vector(&[0.5, -2.0, 0.0, 1.0]);
        for x in [[0.0, 0.0, 0.0], [10.0, -3.0, 2.0]] {
            let p = m.prior(&x).unwrap();
            assert_eq!(p.mean(), &[0.5, -2.0]);
            assert_eq!(p.var()[0], variance_from_raw(0.0));
            assert_eq!(p.var()[1], variance_from_raw(1.0));
        }
    }

    #[test]
    fn zero_weight_encoder_and_decoder_are_constant() {
        for heads in [HeadMode::Shared, HeadMode::Split] {
            let m = zero_model(ModelDims { x: 2, z: 1, y: 1 }, heads);
            let a = m.encode(&[1.0, 2.0], &[3.0], 0.0).unwrap();
            let b = m.encode(&[-5.0, 0.1], &[-1.0], 1.0).unwrap();
            assert_eq!(a, b);
            assert_eq!(
                m.decode(&[0.3], 0.0).unwrap(),
                m.decode(&[9.0], 1.0).unwrap()
            );
        }
    }

    #[test]
    fn invalid_treatment_rejected() {
        let m = small(HeadMode::Shared, 1);
        assert!(matches!(
            m.encode(&[0.0; 3], &[0.0], 0.5),
            Err(Error::InvalidTreatment(_))
        ));
        assert!(matches!(
            m.decode(&[0.0; 2], 2.0),
            Err(Error::InvalidTreatment(_))
        ));
    }

    #[test]
    fn variance_floor_holds_for_extreme_inputs() {
        let m = small(HeadMode::Shared, 2);
        for s in [1e3, -1e3] {
            let q = m.encode(&[s, -s, s], &[s], 1.0).unwrap();
            assert!(q.var().iter().all(|&v| v >= crate::numerics::VAR_FLOOR));
        }
    }

    #[test]
    fn counterfactual_decoder_head_differs() {
        for heads in [HeadMode::Shared, HeadMode::Split] {
            let m = small(heads, 3);
            let z = [0.4, -0.7];
            assert_ne!(m.decode(&z, 0.0).unwrap(), m.decode(&z, 1.0).unwrap());
        }
    }

    #[test]
    fn linear_decoder_hand_set() {
        // f_t(z) = z + t through a ReLU hidden layer: hidden = [relu(z), relu(-z)],
        // output = hidden·[1, -1] + t.
        let dims = ModelDims { x: 1, z: 1, y: 1 };
        let mut m = zero_model(dims, HeadMode::Shared);
        let hidden =
            Tensor2::from_rows(&[vec![1.0, -1.0, 0.0, 0.0], vec![0.0, 0.0, 0.0, 0.0]]).unwrap();
        let out = Tensor2::from_rows(&[
            vec![1.0, 0.0],
            vec![-1.0, 0.0],
            vec![0.0, 0.0],
            vec![0.0, 0.0],
        ])
        .unwrap();
        let TreatmentNet::Shared(dec) = m.decoder_mut() else {
            unreachable!()
        };
        dec.layers_mut()[0].weight = hidden;
        dec.layers_mut()[1].weight = out;
        // t passes straight through as a second hidden unit
        dec.layers_mut()[0].weight.set(1, 2, 1.0);
        dec.layers_mut()[1].weight.set(2, 0, 1.0);
        for z in [-2.5, 0.0, 1.75] {
            for t in [0.0, 1.0] {
                assert_eq!(m.decode(&[z], t).unwrap().mean(), &[z + t]);
            }
        }
    }

    #[test]
    fn tensors_and_names_align() {
        for heads in [HeadMode::Shared, HeadMode::Split] {
            let m = small(heads, 4);
            assert_eq!(m.tensors().len(), m.tensor_names().len());
            let ev = m
                .elbo_beta(
                    &Batch::new(
                        Tensor2::zeros(2, 3),
                        Tensor2::zeros(2, 1),
                        Tensor2::column_vector(&[0.0, 1.0]),
                    )
                    .unwrap(),
                    &mut Rng::new(0),
                )
                .unwrap();
            for (g, p) in ev.grads.iter().zip(m.tensors()) {
                assert_eq!(g.shape(), p.shape());
            }
        }
    }

    #[test]
    fn checkpoint_round_trip_and_format_tag() {
        let m = small(HeadMode::Split, 5);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        m.save(&path).unwrap();
        assert_eq!(IntactVaeModel::load(&path).unwrap(), m);
        let text = std::fs::read_to_string(&path)
            .unwrap()
            .replace("/v1", "/v0");
        assert!(IntactVaeModel::from_checkpoint_json(&text).is_err());
    }
}
