use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::koopman::AugmentConfig;

/// Training and inference hyperparameters. Every field has a default, so a
/// TOML file only needs the values it changes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Chunk length `l`.
    pub chunk_len: usize,
    /// Executed horizon `h`, also the frame gap of the Koopman pairs.
    pub horizon: usize,
    /// Diffusion step count `K`.
    pub diffusion_steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    /// Probability `p` of conditioning on the latent action.
    pub switch_prob: f64,
    /// Weight `μ` of the clean-pair Koopman term.
    pub dko_weight: f64,
    /// Weight `λ` of the operator regularizer.
    pub reg_weight: f64,
    /// Temporal decay `η`.
    pub eta: f64,
    pub learning_rate: f64,
    pub seed: u64,
    pub latent_dim: usize,
    pub denoiser_hidden: usize,
    pub denoiser_layers: usize,
    pub step_embed: usize,
    pub latent_blocks: usize,
    /// Monte-Carlo samples `M` of the test-time loss; 0 means `K`.
    pub test_samples: usize,
    pub sg_window: usize,
    pub sg_polyorder: usize,
    /// Save a checkpoint every this many epochs (0 disables).
    pub checkpoint_every: usize,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 64,
            chunk_len: 16,
            horizon: 4,
            diffusion_steps: 30,
            beta_min: 1e-4,
            beta_max: 0.02,
            switch_prob: 0.6,
            dko_weight: 0.3,
            reg_weight: 1e-4,
            eta: 0.97,
            learning_rate: 1e-3,
            seed: 0,
            latent_dim: 64,
            denoiser_hidden: 256,
            denoiser_layers: 3,
            step_embed: 32,
            latent_blocks: 2,
            test_samples: 0,
            sg_window: 7,
            sg_polyorder: 3,
            checkpoint_every: 25,
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Effective test-time sample count.
    pub fn samples(&self) -> usize {
        if self.test_samples == 0 {
            self.diffusion_steps
        } else {
            self.test_samples
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.chunk_len == 0 || self.horizon == 0 || self.horizon > self.chunk_len {
            return fail(format!(
                "need 1 <= horizon ({}) <= chunk_len ({})",
                self.horizon, self.chunk_len
            ));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.diffusion_steps == 0 {
            return fail("epochs, batch_size and diffusion_steps must be positive".into());
        }
        for (name, v) in [("switch_prob", self.switch_prob), ("dko_weight", self.dko_weight)] {
            if !(0.0..=1.0).contains(&v) {
                return fail(format!("{name} = {v} outside [0, 1]"));
            }
        }
        for (name, v) in [
            ("reg_weight", self.reg_weight),
            ("eta", self.eta),
            ("learning_rate", self.learning_rate),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return fail(format!("{name} = {v} must be positive"));
            }
        }
        if !(self.beta_min > 0.0 && self.beta_min <= self.beta_max && self.beta_max < 1.0) {
            return fail(format!("invalid beta range [{}, {}]", self.beta_min, self.beta_max));
        }
        if self.latent_dim == 0 || self.denoiser_hidden == 0 || self.denoiser_layers == 0 {
            return fail("network widths and depths must be positive".into());
        }
        if self.step_embed < 2 || self.step_embed % 2 != 0 {
            return fail(format!("step_embed {} must be even and at least 2", self.step_embed));
        }
        if self.sg_window < 3 || self.sg_window % 2 == 0 || self.sg_window <= self.sg_polyorder {
            return fail(format!(
                "Savitzky-Golay window {} / polyorder {} invalid",
                self.sg_window, self.sg_polyorder
            ));
        }
        self.augment.validate().map_err(|e| Error::Config(e.to_string()))
    }
}
