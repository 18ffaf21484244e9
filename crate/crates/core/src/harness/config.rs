//! Experiment configuration: a flat TOML file plus command-line overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dgp::NoiseMode;
use crate::error::{Error, Result};
use crate::estimation::{EstimationMode, DEFAULT_MC_SAMPLES};
use crate::metrics::LatentSource;
use crate::model::{HeadMode, NetPreset};
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; every derived seed is a function of it.
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Worker threads for sweeps; 0 picks the machine's parallelism.
    pub jobs: usize,

    // synthetic data
    pub dim_w: Vec<usize>,
    pub omega: Vec<f64>,
    pub n: usize,
    pub replications: usize,
    pub noise_mode: NoiseMode,

    // model
    /// Latent width; `None` matches each cell's `dim_w`.
    pub dim_z: Option<usize>,
    pub beta: Vec<f64>,
    pub net_preset: NetPreset,
    pub heads: HeadMode,

    // training
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub eval_every: usize,

    // estimation and metrics
    pub modes: Vec<EstimationMode>,
    pub mc_samples: usize,
    pub latent_source: LatentSource,

    // IHDP
    pub ihdp_dir: Option<PathBuf>,
    pub ihdp_replications: usize,
    pub ihdp_dim_z: usize,
    pub ihdp_beta: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        Self {
            seed: 0,
            out_dir: PathBuf::from("out"),
            jobs: 0,
            dim_w: vec![1],
            omega: vec![0.0, 6.0, 11.0, 16.0, 22.0],
            n: 1500,
            replications: 10,
            noise_mode: NoiseMode::Unit,
            dim_z: None,
            beta: vec![1.0],
            net_preset: NetPreset::Paper,
            heads: HeadMode::Shared,
            lr: train.lr,
            batch_size: train.batch_size,
            max_epochs: train.max_epochs,
            patience: train.patience,
            eval_every: train.eval_every,
            modes: vec![EstimationMode::Post, EstimationMode::Pre],
            mc_samples: DEFAULT_MC_SAMPLES,
            latent_source: LatentSource::PriorMean,
            ihdp_dir: None,
            ihdp_replications: 100,
            ihdp_dim_z: 10,
            ihdp_beta: 1.0,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config fields are TOML-representable")
    }

    pub fn validate(&self) -> Result<()> {
        let nonempty = |name: &str, len: usize| {
            if len == 0 {
                Err(Error::Config(format!("{name} must not be empty")))
            } else {
                Ok(())
            }
        };
        nonempty("dim_w", self.dim_w.len())?;
        nonempty("omega", self.omega.len())?;
        nonempty("beta", self.beta.len())?;
        nonempty("modes", self.modes.len())?;
        if self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if self.n < 3 {
            return Err(Error::Config(
                "n must be at least 3 to split three ways".into(),
            ));
        }
        if self.mc_samples == 0 {
            return Err(Error::Config("mc_samples must be at least 1".into()));
        }
        if self.dim_w.contains(&0) || self.dim_z == Some(0) || self.ihdp_dim_z == 0 {
            return Err(Error::Config("latent widths must be positive".into()));
        }
        if self.omega.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config(
                "omega values must be finite and non-negative".into(),
            ));
        }
        for b in self.beta.iter().chain([&self.ihdp_beta]) {
            self.train_config(*b, 0).validate()?;
        }
        Ok(())
    }

    pub fn train_config(&self, beta: f64, seed: u64) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            eval_every: self.eval_every,
            beta,
            seed,
            net_preset: self.net_preset,
            heads: self.heads,
        }
    }

    /// SHA-256 over the settings that influence results (not `out_dir`,
    /// `jobs` or `ihdp_dir`).
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.out_dir = PathBuf::new();
        canonical.jobs = 0;
        canonical.ihdp_dir = None;
        let digest = Sha256::digest(canonical.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Writes the fully resolved configuration into `out_dir`.
    pub fn write_resolved(&self) -> Result<PathBuf> {
        fs::create_dir_all(&self.out_dir)?;
        let path = self.out_dir.join("config.resolved.toml");
        fs::write(&path, self.to_toml())?;
        Ok(path)
    }
}
