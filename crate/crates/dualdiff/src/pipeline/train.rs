use std::path::Path;

use benchsim::demos::PROPRIO_DIM;
use benchsim::DemoDataset;
use log::info;
use numgraph::{AdamConfig, OptimState, Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::model::{Normalizer, PolicyBundle};
use crate::diffusion::{ddpm_loss, select_rows, switch_draw, Branch};
use crate::error::{contract, Error, Result};
use crate::koopman::{combine_terms, dko_terms, reg_loss, AugmentParams, DkoBatch};

/// Tensors of one training batch. Images are `[batch, H·W]`, proprio is
/// normalized `[batch, 3]`, actions are normalized `[batch, l·d]`.
pub struct Batch {
    pub images: DkoBatch,
    pub proprio: Tensor,
    pub actions: Tensor,
}

/// Assembles the batch for the given `(episode, step)` anchors. Each sample
/// augments its front and wrist views with transforms seeded from one draw
/// of `rng`, applied identically to the current and future frame.
pub fn assemble_batch<R: Rng + ?Sized>(
    dataset: &DemoDataset,
    anchors: &[(usize, usize)],
    cfg: &TrainConfig,
    normalizer: &Normalizer,
    rng: &mut R,
) -> Result<Batch> {
    let side = dataset.image_size;
    let pixels = side * side;
    let rows = anchors.len();
    let mut cols: [Vec<f64>; 8] = Default::default();
    let mut proprio = Vec::with_capacity(rows * PROPRIO_DIM);
    let mut actions = Vec::new();
    for &(e, t) in anchors {
        let sample_seed: u64 = rng.random();
        let mut local = ChaCha8Rng::seed_from_u64(sample_seed);
        let tuple = dataset.tuple(e, t, cfg.horizon, cfg.chunk_len);
        let views = [
            (tuple.front, tuple.front_future),
            (tuple.wrist, tuple.wrist_future),
        ];
        for (v, (now, next)) in views.into_iter().enumerate() {
            let aug = AugmentParams::sample(&cfg.augment, side, &mut local);
            cols[v].extend_from_slice(now);
            cols[2 + v].extend_from_slice(next);
            cols[4 + v].extend(aug.apply(now, side));
            cols[6 + v].extend(aug.apply(next, side));
        }
        proprio.extend(normalizer.proprio(tuple.proprio));
        actions.extend(normalizer.actions(&tuple.actions));
    }
    let [f, w, fn_, wn, fa, wa, fna, wna] = cols.map(|c| Tensor::new(vec![rows, pixels], c));
    let n = actions.len() / rows;
    Ok(Batch {
        images: DkoBatch {
            current: (f?, w?),
            future: (fn_?, wn?),
            current_aug: (fa?, wa?),
            future_aug: (fna?, wna?),
        },
        proprio: Tensor::new(vec![rows, PROPRIO_DIM], proprio)?,
        actions: Tensor::new(vec![rows, n], actions)?,
    })
}

/// The loss of one batch split into its parts.
pub struct LossParts<'t> {
    pub total: Var<'t>,
    pub ddpm: Var<'t>,
    pub dko: Var<'t>,
    pub reg: Var<'t>,
    pub branches: Vec<Branch>,
}

/// `L = L_ddpm + L_dko + λ L_reg` for one batch. Draws the per-sample branch
/// switches first, then the diffusion steps and noise, all from `rng`.
pub fn batch_losses<'t, R: Rng + ?Sized>(
    tape: &'t Tape,
    policy: &PolicyBundle,
    batch: &Batch,
    rng: &mut R,
) -> Result<LossParts<'t>> {
    let cfg = &policy.config;
    let params = &policy.params;
    let terms = dko_terms(tape, &policy.dko_modules(), &batch.images)?;
    let dko = combine_terms(terms.term1, terms.term2, cfg.dko_weight);
    let reg = reg_loss(tape, params, &policy.nets.koopman);

    let f_v = terms.f_v;
    let f_u = policy.nets.latent.forward(tape, params, f_v)?;
    let q = tape.constant(batch.proprio.clone());
    let f_f = policy.nets.fusion.fuse(tape, params, f_v, q, None)?.f_f;
    let branches: Vec<Branch> = (0..batch.actions.rows())
        .map(|_| switch_draw(cfg.switch_prob, rng))
        .collect();
    let cond = select_rows(f_u, f_f, &branches)?;
    let ddpm = ddpm_loss(&policy.denoiser(), cond, &batch.actions, &policy.schedule, rng)?;
    let total = ddpm.add(dko)?.add(reg.scale(cfg.reg_weight))?;
    Ok(LossParts {
        total,
        ddpm,
        dko,
        reg,
        branches,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub ddpm: f64,
    pub dko: f64,
    pub reg: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub optimizer_steps: u64,
    /// Fraction of samples conditioned on the latent action.
    pub visual_fraction: f64,
}

pub fn train(dataset: &DemoDataset, cfg: &TrainConfig) -> Result<(PolicyBundle, TrainReport)> {
    train_with_checkpoints(dataset, cfg, None)
}

/// Trains a policy. When `checkpoint_dir` is given, a bundle is written every
/// `checkpoint_every` epochs and after the final epoch.
pub fn train_with_checkpoints(
    dataset: &DemoDataset,
    cfg: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<(PolicyBundle, TrainReport)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(contract("cannot train on an empty dataset"));
    }
    let normalizer = Normalizer::fit(dataset);
    let mut policy = PolicyBundle::init(cfg.clone(), dataset.task, dataset.image_size, normalizer)?;
    let adam = AdamConfig {
        lr: cfg.learning_rate,
        ..AdamConfig::default()
    };
    let mut optim = OptimState::new(adam, &policy.params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_7a1e);
    let mut anchors = dataset.anchors();
    let mut report = TrainReport::default();
    let (mut visual, mut drawn) = (0usize, 0usize);

    for epoch in 1..=cfg.epochs {
        anchors.shuffle(&mut rng);
        let mut sums = [0.0; 4];
        let mut batches = 0;
        for (b, chunk) in anchors.chunks(cfg.batch_size).enumerate() {
            let batch = assemble_batch(dataset, chunk, cfg, &policy.normalizer, &mut rng)?;
            let tape = Tape::new();
            let parts = batch_losses(&tape, &policy, &batch, &mut rng)?;
            let loss = parts.total.item();
            if !loss.is_finite() {
                return Err(Error::Numerical(format!("non-finite loss at epoch {epoch}, batch {b}")));
            }
            visual += parts.branches.iter().filter(|x| **x == Branch::Visual).count();
            drawn += parts.branches.len();
            for (s, v) in sums.iter_mut().zip([loss, parts.ddpm.item(), parts.dko.item(), parts.reg.item()]) {
                *s += v;
            }
            batches += 1;
            let grads = tape.backward(parts.total)?;
            optim.step(&mut policy.params, &grads).map_err(|e| match e {
                numgraph::NumError::NonFiniteGradient(name) => {
                    Error::Numerical(format!("non-finite gradient for `{name}` at epoch {epoch}, batch {b}"))
                }
                other => other.into(),
            })?;
        }
        let mean = sums.map(|s| s / batches as f64);
        info!(
            "epoch {epoch}: loss {:.5} (ddpm {:.5}, dko {:.5}, reg {:.3})",
            mean[0], mean[1], mean[2], mean[3]
        );
        report.epochs.push(EpochStats {
            epoch,
            loss: mean[0],
            ddpm: mean[1],
            dko: mean[2],
            reg: mean[3],
        });
        if let Some(dir) = checkpoint_dir {
            let periodic = cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0;
            if periodic && epoch != cfg.epochs {
                policy.save(&dir.join(format!("epoch_{epoch:04}.ckpt")))?;
            }
        }
    }
    if let Some(dir) = checkpoint_dir {
        policy.save(&dir.join("policy.ckpt"))?;
    }
    report.optimizer_steps = optim.steps_taken();
    report.visual_fraction = visual as f64 / drawn.max(1) as f64;
    Ok((policy, report))
}
