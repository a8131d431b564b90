//! Expert demonstration datasets: generation, training-tuple indexing and
//! on-disk storage.
//!
//! On disk a dataset is a directory holding one binary file per episode plus
//! `index.json`. An episode file is the magic `DEMOEP01`, a little-endian u32
//! header length, a JSON header, then little-endian f64 blocks in this order:
//! front images `[T+1, H, W]`, wrist images `[T+1, H, W]`, proprio `[T+1, 3]`,
//! actions `[T, d]`.

use std::fs;
use std::path::Path;

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::{env_reset, env_step, Observation};
use crate::error::{BenchError, Result};
use crate::expert::ScriptedExpert;
use crate::task::{TaskConfig, TaskId};

const EPISODE_MAGIC: &[u8; 8] = b"DEMOEP01";
pub const INDEX_FILE: &str = "index.json";
pub const ACTION_DIM: usize = 3;
pub const PROPRIO_DIM: usize = 3;

/// One successful expert episode with `T` actions and `T + 1` observations.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub seed: u64,
    pub disabled_grasps: u32,
    pub image_size: usize,
    pub front: Vec<f64>,
    pub wrist: Vec<f64>,
    pub proprio: Vec<f64>,
    pub actions: Vec<f64>,
}

impl Episode {
    pub fn steps(&self) -> usize {
        self.actions.len() / ACTION_DIM
    }

    fn pixels(&self) -> usize {
        self.image_size * self.image_size
    }

    pub fn front_at(&self, t: usize) -> &[f64] {
        let p = self.pixels();
        &self.front[t * p..(t + 1) * p]
    }

    pub fn wrist_at(&self, t: usize) -> &[f64] {
        let p = self.pixels();
        &self.wrist[t * p..(t + 1) * p]
    }

    pub fn proprio_at(&self, t: usize) -> &[f64] {
        &self.proprio[t * PROPRIO_DIM..(t + 1) * PROPRIO_DIM]
    }

    pub fn action_at(&self, t: usize) -> &[f64] {
        &self.actions[t * ACTION_DIM..(t + 1) * ACTION_DIM]
    }
}

/// Observation and action indices of the training tuple anchored at step `t`
/// of an episode with `steps` actions. Indices past the end repeat the final
/// observation or action.
pub fn tuple_indices(steps: usize, t: usize, horizon: usize, chunk: usize) -> (usize, Vec<usize>) {
    assert!(steps >= 1 && t < steps, "anchor {t} outside an episode of {steps} steps");
    let future = (t + horizon).min(steps);
    let actions = (0..chunk).map(|i| (t + i).min(steps - 1)).collect();
    (future, actions)
}

/// A training tuple borrowed from a dataset.
#[derive(Clone, Debug)]
pub struct TupleRef<'a> {
    pub front: &'a [f64],
    pub wrist: &'a [f64],
    pub front_future: &'a [f64],
    pub wrist_future: &'a [f64],
    pub proprio: &'a [f64],
    /// `chunk × d` row-major action chunk.
    pub actions: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DemoDataset {
    pub task: TaskId,
    pub image_size: usize,
    pub episodes: Vec<Episode>,
}

/// Options beyond the task configuration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemoOptions {
    /// Fraction of episodes whose first grasp is forced to fail, so the data
    /// contains retry behavior. Only grasping tasks are affected.
    pub retry_fraction: f64,
}

impl Default for DemoOptions {
    fn default() -> Self {
        Self { retry_fraction: 0.0 }
    }
}

/// Records one expert episode, or `None` if it did not succeed.
pub fn record_episode(cfg: &TaskConfig, seed: u64) -> Result<Option<Episode>> {
    let (mut state, obs) = env_reset(cfg, seed);
    let mut expert = ScriptedExpert::new(seed);
    let mut ep = Episode {
        seed,
        disabled_grasps: cfg.disabled_grasps,
        image_size: cfg.image_size,
        front: Vec::new(),
        wrist: Vec::new(),
        proprio: Vec::new(),
        actions: Vec::new(),
    };
    let push = |ep: &mut Episode, obs: &Observation| {
        ep.front.extend_from_slice(&obs.front.pixels);
        ep.wrist.extend_from_slice(&obs.wrist.pixels);
        ep.proprio.extend_from_slice(&obs.proprio);
    };
    push(&mut ep, &obs);
    loop {
        let action = expert.act(&state, cfg)?;
        let outcome = env_step(cfg, &mut state, &action)?;
        ep.actions.extend_from_slice(&action);
        push(&mut ep, &Observation::of(&state, cfg));
        if outcome.done {
            return Ok(outcome.success.then_some(ep));
        }
    }
}

pub fn generate_demos(cfg: &TaskConfig, n: usize, seed: u64) -> Result<DemoDataset> {
    generate_demos_with(cfg, n, seed, DemoOptions::default())
}

/// Collects `n` successful expert episodes. Failed or unreachable episodes
/// are replaced with fresh seeds; more than `10 n` attempts aborts.
pub fn generate_demos_with(
    cfg: &TaskConfig,
    n: usize,
    seed: u64,
    options: DemoOptions,
) -> Result<DemoDataset> {
    if n == 0 {
        return Err(BenchError::InvalidConfig("n must be at least 1".into()));
    }
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut episodes = Vec::with_capacity(n);
    let mut attempts = 0;
    let mut rejected = 0;
    while episodes.len() < n {
        if attempts >= 10 * n {
            return Err(BenchError::GenerationFailed {
                attempts,
                successes: episodes.len(),
                wanted: n,
            });
        }
        attempts += 1;
        let episode_seed: u64 = rng.random();
        let retry = rng.random::<f64>() < options.retry_fraction;
        let mut episode_cfg = cfg.clone();
        if retry && cfg.task != TaskId::PressButton {
            episode_cfg.disabled_grasps = episode_cfg.disabled_grasps.max(1);
        }
        match record_episode(&episode_cfg, episode_seed) {
            Ok(Some(ep)) => episodes.push(ep),
            Ok(None) => rejected += 1,
            Err(BenchError::Unreachable(p)) => {
                warn!("episode seed {episode_seed}: target {p:?} unreachable");
                rejected += 1;
            }
            Err(e) => return Err(e),
        }
    }
    if rejected > 0 {
        info!("{}: regenerated {rejected} failed episodes", cfg.task);
    }
    Ok(DemoDataset {
        task: cfg.task,
        image_size: cfg.image_size,
        episodes,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct EpisodeHeader {
    task: TaskId,
    seed: u64,
    steps: usize,
    image_size: usize,
    action_dim: usize,
    disabled_grasps: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub file: String,
    pub seed: u64,
    pub steps: usize,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub task: TaskId,
    pub image_size: usize,
    pub action_dim: usize,
    pub episodes: Vec<IndexEntry>,
}

fn put_block(out: &mut Vec<u8>, data: &[f64]) {
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn take_block(bytes: &[u8], at: &mut usize, len: usize) -> Result<Vec<f64>> {
    let end = *at + len * 8;
    let chunk = bytes
        .get(*at..end)
        .ok_or_else(|| BenchError::Format("episode payload truncated".into()))?;
    *at = end;
    Ok(chunk
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
        .collect())
}

fn encode_episode(task: TaskId, ep: &Episode) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&EpisodeHeader {
        task,
        seed: ep.seed,
        steps: ep.steps(),
        image_size: ep.image_size,
        action_dim: ACTION_DIM,
        disabled_grasps: ep.disabled_grasps,
    })?;
    let mut out = Vec::new();
    out.extend_from_slice(EPISODE_MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    put_block(&mut out, &ep.front);
    put_block(&mut out, &ep.wrist);
    put_block(&mut out, &ep.proprio);
    put_block(&mut out, &ep.actions);
    Ok(out)
}

fn decode_episode(bytes: &[u8]) -> Result<(TaskId, Episode)> {
    if bytes.len() < 12 || &bytes[..8] != EPISODE_MAGIC {
        return Err(BenchError::Format("missing episode magic".into()));
    }
    let len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let header: EpisodeHeader = serde_json::from_slice(
        bytes
            .get(12..12 + len)
            .ok_or_else(|| BenchError::Format("episode header truncated".into()))?,
    )?;
    if header.action_dim != ACTION_DIM {
        return Err(BenchError::Format(format!(
            "action dimension {} unsupported",
            header.action_dim
        )));
    }
    let frames = header.steps + 1;
    let pixels = header.image_size * header.image_size;
    let mut at = 12 + len;
    let front = take_block(bytes, &mut at, frames * pixels)?;
    let wrist = take_block(bytes, &mut at, frames * pixels)?;
    let proprio = take_block(bytes, &mut at, frames * PROPRIO_DIM)?;
    let actions = take_block(bytes, &mut at, header.steps * ACTION_DIM)?;
    if at != bytes.len() {
        return Err(BenchError::Format("trailing bytes after episode".into()));
    }
    let ep = Episode {
        seed: header.seed,
        disabled_grasps: header.disabled_grasps,
        image_size: header.image_size,
        front,
        wrist,
        proprio,
        actions,
    };
    Ok((header.task, ep))
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl DemoDataset {
    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    /// Every `(episode, anchor step)` pair, in order.
    pub fn anchors(&self) -> Vec<(usize, usize)> {
        self.episodes
            .iter()
            .enumerate()
            .flat_map(|(e, ep)| (0..ep.steps()).map(move |t| (e, t)))
            .collect()
    }

    pub fn tuple(&self, episode: usize, t: usize, horizon: usize, chunk: usize) -> TupleRef<'_> {
        let ep = &self.episodes[episode];
        let (future, idx) = tuple_indices(ep.steps(), t, horizon, chunk);
        let mut actions = Vec::with_capacity(chunk * ACTION_DIM);
        for i in idx {
            actions.extend_from_slice(ep.action_at(i));
        }
        TupleRef {
            front: ep.front_at(t),
            wrist: ep.wrist_at(t),
            front_future: ep.front_at(future),
            wrist_future: ep.wrist_at(future),
            proprio: ep.proprio_at(t),
            actions,
        }
    }

    /// Writes the episode files and `index.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut entries = Vec::with_capacity(self.len());
        for (i, ep) in self.episodes.iter().enumerate() {
            let file = format!("episode_{i:04}.bin");
            let bytes = encode_episode(self.task, ep)?;
            fs::write(dir.join(&file), &bytes)?;
            entries.push(IndexEntry {
                file,
                seed: ep.seed,
                steps: ep.steps(),
                sha256: sha256_hex(&bytes),
            });
        }
        let index = DatasetIndex {
            task: self.task,
            image_size: self.image_size,
            action_dim: ACTION_DIM,
            episodes: entries,
        };
        fs::write(dir.join(INDEX_FILE), serde_json::to_vec_pretty(&index)?)?;
        Ok(())
    }

    /// Loads a dataset written by [`DemoDataset::save`], verifying checksums.
    pub fn load(dir: &Path) -> Result<Self> {
        let index: DatasetIndex = serde_json::from_slice(&fs::read(dir.join(INDEX_FILE))?)?;
        let mut episodes = Vec::with_capacity(index.episodes.len());
        for entry in &index.episodes {
            let bytes = fs::read(dir.join(&entry.file))?;
            if sha256_hex(&bytes) != entry.sha256 {
                return Err(BenchError::Format(format!("checksum mismatch in {}", entry.file)));
            }
            let (task, ep) = decode_episode(&bytes)?;
            if task != index.task || ep.image_size != index.image_size {
                return Err(BenchError::Format(format!("{} disagrees with the index", entry.file)));
            }
            episodes.push(ep);
        }
        if episodes.is_empty() {
            return Err(BenchError::Format("dataset has no episodes".into()));
        }
        Ok(Self {
            task: index.task,
            image_size: index.image_size,
            episodes,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tuple_indices_pad_with_last_action() {
        let (future, idx) = tuple_indices(10, 8, 4, 5);
        assert_eq!(future, 10);
        assert_eq!(idx, vec![8, 9, 9, 9, 9]);
        let (future, idx) = tuple_indices(10, 0, 4, 3);
        assert_eq!(future, 4);
        assert_eq!(idx, vec![0, 1, 2]);
    }

    #[test]
    fn episode_codec_roundtrip() {
        let cfg = TaskConfig::new(TaskId::PressButton);
        let ep = record_episode(&cfg, 3).unwrap().unwrap();
        let bytes = encode_episode(cfg.task, &ep).unwrap();
        let (task, back) = decode_episode(&bytes).unwrap();
        assert_eq!(task, cfg.task);
        assert_eq!(back, ep);
        assert!(decode_episode(&bytes[..bytes.len() - 1]).is_err());
    }
}
