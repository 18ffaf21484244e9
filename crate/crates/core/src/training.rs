//! Minibatch Adam on the β-ELBO with validation-based early stopping.
//!
//! RNG draw order inside [`train`]: validation noise (once), then per epoch a
//! shuffle permutation followed by the reparameterization noise of each
//! batch. Validation uses the same fixed noise at every evaluation, so the
//! validation curve moves only when the parameters do.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{fmt_f64, Batch, Dataset};
use crate::error::{Error, Result};
use crate::model::{HeadMode, IntactVaeModel, ModelDims, NetPreset};
use crate::numerics::{AdamState, Rng, Tensor2};

/// Minimum absolute increase of the validation ELBO that counts as progress.
pub const MIN_IMPROVEMENT: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Evaluations without improvement before stopping.
    pub patience: usize,
    pub eval_every: usize,
    pub beta: f64,
    pub seed: u64,
    pub net_preset: NetPreset,
    pub heads: HeadMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            batch_size: 100,
            max_epochs: 500,
            patience: 10,
            eval_every: 1,
            beta: 1.0,
            seed: 0,
            net_preset: NetPreset::Paper,
            heads: HeadMode::Shared,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!(
                "beta must be positive, got {}",
                self.beta
            )));
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("patience", self.patience),
            ("eval_every", self.eval_every),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    EarlyStopping,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::MaxEpochs => "max_epochs",
            StopReason::EarlyStopping => "early_stopping",
        })
    }
}

/// One row of the training log. Epoch 0 is the untrained model and has no
/// training loss; `val_elbo` is absent between evaluation boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: Option<f64>,
    pub val_elbo: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_elbo: f64,
    pub stop_reason: StopReason,
}

impl TrainHistory {
    pub fn last_epoch(&self) -> usize {
        self.records.last().map_or(0, |r| r.epoch)
    }

    /// Mean training loss per epoch, skipping epoch 0.
    pub fn train_losses(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.train_loss).collect()
    }

    pub fn val_elbos(&self) -> Vec<(usize, f64)> {
        self.records
            .iter()
            .filter_map(|r| r.val_elbo.map(|v| (r.epoch, v)))
            .collect()
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// `epoch,train_loss,val_elbo`; missing values are left blank.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(fs::File::create(path)?);
        writeln!(out, "epoch,train_loss,val_elbo")?;
        let cell = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        for r in &self.records {
            writeln!(
                out,
                "{},{},{}",
                r.epoch,
                cell(r.train_loss),
                cell(r.val_elbo)
            )?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters at the best validation epoch.
    pub model: IntactVaeModel,
    pub history: TrainHistory,
}

/// Random model for the preset's hidden layout.
pub fn init_model(
    rng: &mut Rng,
    dims: ModelDims,
    preset: NetPreset,
    heads: HeadMode,
    beta: f64,
) -> Result<IntactVaeModel> {
    IntactVaeModel::init(rng, dims, &preset.hidden_widths(), heads, beta)
}

fn check_split(name: &str, data: &Dataset, dims: ModelDims) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Config(format!("{name} split is empty")));
    }
    if data.dim_x() != dims.x || data.dim_y() != dims.y {
        return Err(Error::Shape(format!(
            "{name} split has x width {} and y width {}, model expects {} and {}",
            data.dim_x(),
            data.dim_y(),
            dims.x,
            dims.y
        )));
    }
    Ok(())
}

/// β-ELBO on `batch` under fixed noise (higher is better).
fn validation_elbo(model: &IntactVaeModel, batch: &Batch, eps: &Tensor2) -> Result<f64> {
    Ok(model.elbo_value_with_noise(batch, eps)?.total)
}

/// Trains `init` in place of a copy and returns the best snapshot.
///
/// `cfg.beta` overrides the model's β. `rng` drives shuffling and noise;
/// initialization is the caller's business.
pub fn train(
    init: &IntactVaeModel,
    train_set: &Dataset,
    val_set: &Dataset,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut model = init.clone();
    model.set_beta(cfg.beta)?;
    let dims = model.dims();
    check_split("train", train_set, dims)?;
    check_split("validation", val_set, dims)?;

    let val_batch = val_set.full_batch()?;
    let val_eps = model.draw_noise(val_batch.len(), rng);

    let mut best_val = validation_elbo(&model, &val_batch, &val_eps)?;
    let mut best_model = model.clone();
    let mut best_epoch = 0;
    let mut records = vec![EpochRecord {
        epoch: 0,
        train_loss: None,
        val_elbo: Some(best_val),
    }];

    let names = model.tensor_names();
    let mut adam = AdamState::new(&model.tensors(), cfg.lr);
    let mut stale = 0;
    let mut stop_reason = StopReason::MaxEpochs;

    for epoch in 1..=cfg.max_epochs {
        let order = rng.permutation(train_set.len());
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = train_set.batch(chunk)?;
            let ev = model.elbo_beta(&batch, rng).map_err(|e| match e {
                Error::NonFinite(msg) => Error::NonFinite(format!("epoch {epoch}: {msg}")),
                other => other,
            })?;
            loss_sum += ev.loss * chunk.len() as f64;
            adam.step(model.tensors_mut(), &ev.grads, &names)?;
        }
        let train_loss = loss_sum / train_set.len() as f64;

        let mut record = EpochRecord {
            epoch,
            train_loss: Some(train_loss),
            val_elbo: None,
        };
        if epoch % cfg.eval_every == 0 {
            let val = validation_elbo(&model, &val_batch, &val_eps)?;
            record.val_elbo = Some(val);
            if val >= best_val + MIN_IMPROVEMENT {
                best_val = val;
                best_model = model.clone();
                best_epoch = epoch;
                stale = 0;
            } else {
                stale += 1;
            }
        }
        records.push(record);
        if stale >= cfg.patience {
            stop_reason = StopReason::EarlyStopping;
            break;
        }
    }

    Ok(TrainOutcome {
        model: best_model,
        history: TrainHistory {
            records,
            best_epoch,
            best_val_elbo: best_val,
            stop_reason,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize, seed: u64) -> Dataset {
        let mut rng = Rng::new(seed);
        let mut x = Vec::with_capacity(2 * n);
        let mut y = Vec::with_capacity(n);
        let mut t = Vec::with_capacity(n);
        for _ in 0..n {
            let a = rng.standard_normal();
            let b = rng.standard_normal();
            let ti = rng.bernoulli(0.5) as u8;
            x.extend([a, b]);
            t.push(ti);
            y.push(a - b + ti as f64 + 0.1 * rng.standard_normal());
        }
        Dataset::new(
            Tensor2::from_vec(n, 2, x).unwrap(),
            t,
            Tensor2::column_vector(&y),
        )
        .unwrap()
    }

    fn setup(cfg: &TrainConfig) -> (IntactVaeModel, Dataset, Dataset) {
        let dims = ModelDims { x: 2, z: 1, y: 1 };
        let model = init_model(
            &mut Rng::new(cfg.seed),
            dims,
            NetPreset::Small,
            cfg.heads,
            cfg.beta,
        )
        .unwrap();
        (model, toy(120, 1), toy(40, 2))
    }

    fn cfg(max_epochs: usize) -> TrainConfig {
        TrainConfig {
            lr: 1e-3,
            batch_size: 32,
            max_epochs,
            patience: 3,
            net_preset: NetPreset::Small,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_returns_init() {
        let c = cfg(0);
        let (model, tr, va) = setup(&c);
        let out = train(&model, &tr, &va, &c, &mut Rng::new(0)).unwrap();
        assert_eq!(out.model, model);
        assert_eq!(out.history.stop_reason, StopReason::MaxEpochs);
        assert_eq!(out.history.best_epoch, 0);
        assert_eq!(out.history.stop_reason.to_string(), "max_epochs");
    }

    #[test]
    fn same_seed_same_history() {
        let c = cfg(5);
        let (model, tr, va) = setup(&c);
        let a = train(&model, &tr, &va, &c, &mut Rng::new(9)).unwrap();
        let b = train(&model, &tr, &va, &c, &mut Rng::new(9)).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn invalid_config_and_empty_split() {
        let mut c = cfg(1);
        let (model, tr, va) = setup(&c);
        c.batch_size = 0;
        assert!(matches!(
            train(&model, &tr, &va, &c, &mut Rng::new(0)),
            Err(Error::Config(_))
        ));
        let c = cfg(1);
        let empty = tr.subset(&[]);
        assert!(matches!(
            train(&model, &empty, &va, &c, &mut Rng::new(0)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn eval_every_controls_recorded_elbo() {
        let mut c = cfg(6);
        c.eval_every = 3;
        c.patience = 100;
        let (model, tr, va) = setup(&c);
        let out = train(&model, &tr, &va, &c, &mut Rng::new(0)).unwrap();
        let epochs: Vec<usize> = out.history.val_elbos().iter().map(|e| e.0).collect();
        assert_eq!(epochs, vec![0, 3, 6]);
        assert_eq!(out.history.train_losses().len(), 6);
    }

    #[test]
    fn csv_log_has_header_and_rows() {
        let c = cfg(2);
        let (model, tr, va) = setup(&c);
        let out = train(&model, &tr, &va, &c, &mut Rng::new(0)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.csv");
        out.history.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "epoch,train_loss,val_elbo");
        assert!(lines[1].starts_with("0,,"));
        assert_eq!(lines.len(), 4);
    }
}
