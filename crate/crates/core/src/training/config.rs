//! Loss weights and training configuration.
//!
//! Config files are TOML: top-level `key = value` pairs plus optional
//! `[weights]` and `[net]` tables. Unknown keys are rejected.
//!
//! ```text
//! batch_size = 8
//! max_steps = 20000
//! [weights]
//! lambda_r = 10.0
//! [net]
//! generator_width = 32
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::nn::NetConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_a: f64,
    pub lambda_r: f64,
    pub lambda_s: f64,
    pub alpha: f64,
    pub beta: f64,
    pub eta: f64,
    pub r1_gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_a: 1.0,
            lambda_r: 10.0,
            lambda_s: 10.0,
            alpha: 0.5,
            beta: 0.5,
            eta: 2.0 / 3.0,
            r1_gamma: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_a", self.lambda_a),
            ("lambda_r", self.lambda_r),
            ("lambda_s", self.lambda_s),
            ("r1_gamma", self.r1_gamma),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("`{name}` must be finite and non-negative, got {v}")));
            }
        }
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("eta", self.eta)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("`{name}` must lie in [0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// ω, samples per batch.
    pub batch_size: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Decoupled weight decay.
    pub weight_decay: f64,
    /// Linearly decay both learning rates to zero at `max_steps`.
    pub lr_decay: bool,
    pub max_steps: u64,
    pub seed: u64,
    pub checkpoint_interval: u64,
    /// Apply R1 every k-th step, scaled by k.
    pub r1_interval: u64,
    /// Power iterations per spectral-norm refresh after each update.
    pub spectral_iters: usize,
    /// Random horizontal flips (left/right labels swap).
    pub flip: bool,
    /// Batches buffered ahead of the training loop.
    pub prefetch: usize,
    /// Stop early after this many seconds of wall time.
    pub time_budget_secs: Option<u64>,
    /// Dataset directory or manifest path.
    pub data: PathBuf,
    pub out_dir: PathBuf,
    pub weights: LossWeights,
    pub net: NetConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            lr_g: 1e-4,
            lr_d: 3e-4,
            adam_beta1: 0.0,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 1e-4,
            lr_decay: false,
            max_steps: 20_000,
            seed: 0,
            checkpoint_interval: 1000,
            r1_interval: 1,
            spectral_iters: 1,
            flip: false,
            prefetch: 2,
            time_budget_secs: None,
            data: PathBuf::from("data/toy"),
            out_dir: PathBuf::from("runs/toy"),
            weights: LossWeights::default(),
            net: NetConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "`batch_size` must be at least 2 (random compositions need two sources), got {}",
                self.batch_size
            )));
        }
        for (name, v) in [("lr_g", self.lr_g), ("lr_d", self.lr_d), ("weight_decay", self.weight_decay)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("`{name}` must be finite and non-negative, got {v}")));
            }
        }
        for (name, v) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("`{name}` must lie in [0, 1), got {v}")));
            }
        }
        if !(self.adam_eps.is_finite() && self.adam_eps > 0.0) {
            return Err(Error::Config("`adam_eps` must be positive".into()));
        }
        if self.checkpoint_interval == 0 || self.r1_interval == 0 {
            return Err(Error::Config("`checkpoint_interval` and `r1_interval` must be positive".into()));
        }
        self.weights.validate()?;
        self.net.validate()
    }
}
