use std::path::Path;

use benchsim::demos::{ACTION_DIM, PROPRIO_DIM};
use benchsim::{DemoDataset, Observation, TaskId};
use numgraph::checkpoint::{self, Manifest};
use numgraph::{ParamStore, Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use crate::diffusion::{build_schedule, BoundDenoiser, Denoiser, DenoiserConfig, NoiseSchedule};
use crate::error::{contract, Error, Result};
use crate::koopman::{DkoModules, Fusion, KoopmanParams, LatentPolicy, VisualEncoder};

/// Per-dimension affine map of actions and proprioception onto `[-1, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub action_min: Vec<f64>,
    pub action_max: Vec<f64>,
    pub proprio_min: Vec<f64>,
    pub proprio_max: Vec<f64>,
}

fn span(lo: f64, hi: f64) -> f64 {
    if hi - lo > 1e-6 {
        hi - lo
    } else {
        1.0
    }
}

fn bounds(values: impl Iterator<Item = f64>, dims: usize) -> (Vec<f64>, Vec<f64>) {
    let mut lo = vec![f64::INFINITY; dims];
    let mut hi = vec![f64::NEG_INFINITY; dims];
    for (i, v) in values.enumerate() {
        let d = i % dims;
        lo[d] = lo[d].min(v);
        hi[d] = hi[d].max(v);
    }
    (lo, hi)
}

impl Normalizer {
    pub fn fit(dataset: &DemoDataset) -> Self {
        let (action_min, action_max) = bounds(
            dataset.episodes.iter().flat_map(|e| e.actions.iter().copied()),
            ACTION_DIM,
        );
        let (proprio_min, proprio_max) = bounds(
            dataset.episodes.iter().flat_map(|e| e.proprio.iter().copied()),
            PROPRIO_DIM,
        );
        Self {
            action_min,
            action_max,
            proprio_min,
            proprio_max,
        }
    }

    fn forward(x: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(i, v)| {
                let d = i % lo.len();
                2.0 * (v - lo[d]) / span(lo[d], hi[d]) - 1.0
            })
            .collect()
    }

    fn inverse(x: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(i, v)| {
                let d = i % lo.len();
                (v + 1.0) / 2.0 * span(lo[d], hi[d]) + lo[d]
            })
            .collect()
    }

    /// Normalizes a row-major block of action rows.
    pub fn actions(&self, x: &[f64]) -> Vec<f64> {
        Self::forward(x, &self.action_min, &self.action_max)
    }

    pub fn actions_inverse(&self, x: &[f64]) -> Vec<f64> {
        Self::inverse(x, &self.action_min, &self.action_max)
    }

    pub fn proprio(&self, x: &[f64]) -> Vec<f64> {
        Self::forward(x, &self.proprio_min, &self.proprio_max)
    }
}

/// Handles into the parameter store for every sub-network.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyNets {
    pub encoder: VisualEncoder,
    pub fusion: Fusion,
    pub latent: LatentPolicy,
    pub koopman: KoopmanParams,
    pub denoiser: Denoiser,
}

/// Representations of one or more observations.
#[derive(Clone, Debug, PartialEq)]
pub struct Latents {
    pub f_v: Tensor,
    pub f_u: Tensor,
    pub f_f: Tensor,
    pub gates: Tensor,
}

/// Trained parameters together with everything needed to run them.
#[derive(Clone, Debug)]
pub struct PolicyBundle {
    pub config: TrainConfig,
    pub task: TaskId,
    pub image_size: usize,
    pub normalizer: Normalizer,
    pub params: ParamStore,
    pub nets: PolicyNets,
    pub schedule: NoiseSchedule,
}

#[derive(Serialize, Deserialize)]
struct BundleMeta {
    config: TrainConfig,
    task: TaskId,
    image_size: usize,
    normalizer: Normalizer,
}

impl PolicyBundle {
    /// Freshly initialized networks; initialization is seeded by `config.seed`.
    pub fn init(config: TrainConfig, task: TaskId, image_size: usize, normalizer: Normalizer) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let c = config.latent_dim;
        let encoder = VisualEncoder::new(&mut params, image_size * image_size, c, &mut rng);
        let fusion = Fusion::new(&mut params, PROPRIO_DIM, c, &mut rng);
        let latent = LatentPolicy::new(&mut params, c, config.latent_blocks, &mut rng);
        let koopman = KoopmanParams::new(&mut params, c, &mut rng);
        let denoiser = Denoiser::new(
            &mut params,
            "denoiser",
            DenoiserConfig {
                chunk_len: config.chunk_len,
                action_dim: ACTION_DIM,
                cond_dim: c,
                hidden: config.denoiser_hidden,
                layers: config.denoiser_layers,
                step_embed: config.step_embed,
            },
            &mut rng,
        );
        let schedule = build_schedule(config.diffusion_steps, config.beta_min, config.beta_max)?;
        Ok(Self {
            config,
            task,
            image_size,
            normalizer,
            params,
            nets: PolicyNets {
                encoder,
                fusion,
                latent,
                koopman,
                denoiser,
            },
            schedule,
        })
    }

    pub fn denoiser(&self) -> BoundDenoiser<'_> {
        self.nets.denoiser.bind(&self.params)
    }

    pub fn dko_modules(&self) -> DkoModules<'_> {
        DkoModules {
            encoder: &self.nets.encoder,
            latent: &self.nets.latent,
            koopman: &self.nets.koopman,
            params: &self.params,
        }
    }

    /// Copy that executes `h` actions per round instead of the trained horizon.
    pub fn with_horizon(&self, h: usize) -> Result<Self> {
        let mut out = self.clone();
        out.config.horizon = h;
        out.config.validate()?;
        Ok(out)
    }

    pub fn chunk_size(&self) -> usize {
        self.config.chunk_len * ACTION_DIM
    }

    /// Inference-time representations of a batch of observations.
    pub fn latents(&self, observations: &[&Observation], visual_gate: Option<f64>) -> Result<Latents> {
        let pixels = self.image_size * self.image_size;
        let rows = observations.len();
        let (mut front, mut wrist, mut q) = (Vec::new(), Vec::new(), Vec::new());
        for obs in observations {
            if obs.front.pixels.len() != pixels || obs.wrist.pixels.len() != pixels {
                return Err(contract(format!(
                    "observation resolution does not match the policy's {}x{}",
                    self.image_size, self.image_size
                )));
            }
            front.extend_from_slice(&obs.front.pixels);
            wrist.extend_from_slice(&obs.wrist.pixels);
            q.extend(self.normalizer.proprio(&obs.proprio));
        }
        let tape = Tape::no_grad();
        let front = tape.constant(Tensor::new(vec![rows, pixels], front)?);
        let wrist = tape.constant(Tensor::new(vec![rows, pixels], wrist)?);
        let q = tape.constant(Tensor::new(vec![rows, PROPRIO_DIM], q)?);
        let f_v = self.nets.encoder.encode(&tape, &self.params, front, wrist)?;
        let f_u = self.nets.latent.forward(&tape, &self.params, f_v)?;
        let fused = self.nets.fusion.fuse(&tape, &self.params, f_v, q, visual_gate)?;
        Ok(Latents {
            f_v: (*f_v.value()).clone(),
            f_u: (*f_u.value()).clone(),
            f_f: (*fused.f_f.value()).clone(),
            gates: (*fused.gates.value()).clone(),
        })
    }

    /// Writes the parameter container to `path` and the manifest next to it.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut manifest = Manifest::new();
        manifest.dims.insert("latent_dim".into(), self.config.latent_dim);
        manifest.dims.insert("chunk_len".into(), self.config.chunk_len);
        manifest.dims.insert("action_dim".into(), ACTION_DIM);
        manifest.dims.insert("image_size".into(), self.image_size);
        manifest.dims.insert("diffusion_steps".into(), self.config.diffusion_steps);
        manifest.seeds.insert("master".into(), self.config.seed);
        manifest.metadata = serde_json::to_value(BundleMeta {
            config: self.config.clone(),
            task: self.task,
            image_size: self.image_size,
            normalizer: self.normalizer.clone(),
        })?;
        checkpoint::save(path, &self.params, &manifest)?;
        Ok(())
    }

    /// Loads a bundle, verifying the checksum and that every parameter
    /// matches the architecture described by the stored configuration.
    pub fn load(path: &Path) -> Result<Self> {
        let (stored, manifest) = checkpoint::load(path)?;
        let meta: BundleMeta = serde_json::from_value(manifest.metadata)
            .map_err(|e| Error::Config(format!("bundle metadata: {e}")))?;
        let mut bundle = Self::init(meta.config, meta.task, meta.image_size, meta.normalizer)?;
        if stored.len() != bundle.params.len() {
            return Err(contract(format!(
                "checkpoint holds {} tensors, architecture expects {}",
                stored.len(),
                bundle.params.len()
            )));
        }
        bundle.params.load_from(&stored)?;
        Ok(bundle)
    }
}
