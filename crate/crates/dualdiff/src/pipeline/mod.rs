//! Training, closed-loop inference, evaluation and saliency export.

pub mod config;
pub mod eval;
pub mod infer;
pub mod model;
pub mod saliency;
pub mod train;

use sha2::{Digest, Sha256};

pub use config::TrainConfig;
pub use eval::{evaluate, reapproached, CellResult, EpisodeSummary, EvalReport, EvalSpec};
pub use infer::{
    clip_command, infer_round, infer_round_with_latents, rollout, smooth_with_context, InferenceState, Rollout,
    RoundOutput, Variant,
};
pub use model::{Latents, Normalizer, PolicyBundle, PolicyNets};
pub use saliency::{saliency, SaliencyMaps};
pub use train::{assemble_batch, batch_losses, train, train_with_checkpoints, Batch, EpochStats, LossParts, TrainReport};

/// Mixes seed parts into one 64-bit seed; the result depends only on the
/// parts and their order.
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut hasher = Sha256::new();
    for p in parts {
        hasher.update(p.to_le_bytes());
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}
