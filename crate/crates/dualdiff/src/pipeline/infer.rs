use std::fmt;
use std::str::FromStr;

use benchsim::demos::ACTION_DIM;
use benchsim::{ActionSource, Env, EpisodeTrace, Observation, TaskConfig};
use numgraph::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::derive_seed;
use super::model::PolicyBundle;
use crate::aggregator::{aggregate, build_pool, savgol, trace_rows, Aggregation, AggregationRow, ChunkRecord, OverlapPool};
use crate::aggregator::test_time_losses;
use crate::diffusion::{denoise_chunk, normal_tensor, Branch};
use crate::error::{contract, Error, Result};

/// Which chunks a policy generates and aggregates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Dual,
    VisualOnly,
    FusedOnly,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Dual, Variant::VisualOnly, Variant::FusedOnly];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Dual => "dual",
            Variant::VisualOnly => "visual-only",
            Variant::FusedOnly => "fused-only",
        }
    }

    pub fn branches(self) -> &'static [Branch] {
        match self {
            Variant::Dual => &[Branch::Visual, Branch::Fused],
            Variant::VisualOnly => &[Branch::Visual],
            Variant::FusedOnly => &[Branch::Fused],
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

/// Chunk history and already executed commands of one episode.
#[derive(Clone, Debug, Default)]
pub struct InferenceState {
    pub history: Vec<ChunkRecord>,
    /// Commands executed so far, in environment units.
    pub committed: Vec<[f64; 3]>,
    pub round: usize,
}

/// Output of one inference round.
#[derive(Clone, Debug)]
pub struct RoundOutput {
    /// `h` smoothed commands in environment units.
    pub actions: Vec<[f64; 3]>,
    /// Aggregated commands before smoothing.
    pub raw: Vec<[f64; 3]>,
    pub records: Vec<ChunkRecord>,
    pub pool: OverlapPool,
    pub aggregation: Aggregation,
}

impl RoundOutput {
    pub fn trace_rows(&self) -> Vec<AggregationRow> {
        trace_rows(&self.pool, &self.aggregation)
    }
}

/// Runs one round from an observation: representations, both chunks from a
/// shared initial noise, test-time losses, pooling, selection and smoothing.
pub fn infer_round(
    policy: &PolicyBundle,
    obs: &Observation,
    state: &mut InferenceState,
    t: usize,
    variant: Variant,
    seed: u64,
) -> Result<RoundOutput> {
    let lat = policy.latents(&[obs], None)?;
    infer_round_with_latents(policy, lat.f_u.row(0), lat.f_f.row(0), state, t, variant, seed)
}

/// [`infer_round`] with the two conditioning vectors supplied directly.
pub fn infer_round_with_latents(
    policy: &PolicyBundle,
    f_u: &[f64],
    f_f: &[f64],
    state: &mut InferenceState,
    t: usize,
    variant: Variant,
    seed: u64,
) -> Result<RoundOutput> {
    let cfg = &policy.config;
    let (l, n) = (cfg.chunk_len, policy.chunk_size());
    let round_seed = derive_seed(&[seed, state.round as u64]);
    let mut rng = ChaCha8Rng::seed_from_u64(round_seed);
    let noise = normal_tensor(&mut rng, 1, n).map(|v| v * policy.schedule.terminal_noise_std());

    let branches = variant.branches();
    let conds: Vec<&[f64]> = branches
        .iter()
        .map(|b| match b {
            Branch::Visual => f_u,
            Branch::Fused => f_f,
        })
        .collect();
    let rows = branches.len();
    let cond = Tensor::new(vec![rows, f_u.len()], conds.concat())?;
    let init = Tensor::new(vec![rows, n], noise.data().repeat(rows))?;
    let chunks = denoise_chunk(&policy.denoiser(), &cond, &policy.schedule, &init)?.map(|v| v.clamp(-1.0, 1.0));
    let chunk_rows: Vec<&[f64]> = (0..rows).map(|r| chunks.row(r)).collect();
    let losses = test_time_losses(
        &policy.denoiser(),
        &conds,
        &chunk_rows,
        &policy.schedule,
        cfg.samples(),
        derive_seed(&[round_seed, 1]),
    )?;

    let records: Vec<ChunkRecord> = branches
        .iter()
        .zip(chunk_rows.iter().zip(&losses))
        .map(|(&branch, (chunk, &test_loss))| ChunkRecord {
            actions: chunk.to_vec(),
            chunk_len: l,
            action_dim: ACTION_DIM,
            birth_step: t,
            branch,
            test_loss,
        })
        .collect();
    state.history.extend(records.iter().cloned());
    let pool = build_pool(&mut state.history, t, cfg.horizon, cfg.eta)?;
    let aggregation = aggregate(&pool)?;

    let raw: Vec<[f64; 3]> = aggregation
        .actions
        .iter()
        .map(|row| to_command(&policy.normalizer.actions_inverse(row)))
        .collect();
    let actions = smooth_with_context(&state.committed, &raw, cfg.sg_window, cfg.sg_polyorder)?;
    state.round += 1;
    Ok(RoundOutput {
        actions,
        raw,
        records,
        pool,
        aggregation,
    })
}

fn to_command(row: &[f64]) -> [f64; 3] {
    [row[0], row[1], row[2]]
}

/// Smooths `fresh` using up to `(window − 1) / 2` trailing committed commands
/// as left context and returns the smoothed `fresh` rows only.
pub fn smooth_with_context(
    committed: &[[f64; 3]],
    fresh: &[[f64; 3]],
    window: usize,
    polyorder: usize,
) -> Result<Vec<[f64; 3]>> {
    let context = (window.saturating_sub(1) / 2).min(committed.len());
    let rows: Vec<[f64; 3]> = committed[committed.len() - context..]
        .iter()
        .chain(fresh)
        .copied()
        .collect();
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    let out = savgol::smooth(&flat, rows.len(), 3, window, polyorder)?;
    Ok(out.chunks_exact(3).skip(context).map(to_command).collect())
}

/// Limits the joint part of `command` to one rate-limited step away from
/// `previous`, the last executed joint command.
pub fn clip_command(command: [f64; 3], previous: [f64; 2], rate: f64) -> [f64; 3] {
    [
        previous[0] + (command[0] - previous[0]).clamp(-rate, rate),
        previous[1] + (command[1] - previous[1]).clamp(-rate, rate),
        command[2],
    ]
}

/// Closed-loop episode result.
#[derive(Clone, Debug)]
pub struct Rollout {
    pub trace: EpisodeTrace,
    pub aggregation: Vec<AggregationRow>,
}

/// Runs the policy in closed loop: one round, then its `h` commands, until
/// success or the step limit.
pub fn rollout(policy: &PolicyBundle, task: &TaskConfig, seed: u64, variant: Variant) -> Result<Rollout> {
    task.validate()?;
    if task.task != policy.task || task.image_size != policy.image_size {
        return Err(contract(format!(
            "policy trained on {} at {}px cannot run {} at {}px",
            policy.task.as_str(),
            policy.image_size,
            task.task.as_str(),
            task.image_size
        )));
    }
    let (mut env, mut obs) = Env::reset(task.clone(), seed);
    let mut trace = EpisodeTrace::new(task.task, task.init_mode, seed, task.step_limit);
    let mut state = InferenceState::default();
    let mut rows = Vec::new();
    let mut previous = env.state.joints;
    let policy_seed = derive_seed(&[seed, 0x7011_0u64]);
    'episode: loop {
        let t = env.state.step;
        let round = state.round;
        let out = infer_round(policy, &obs, &mut state, t, variant, policy_seed)?;
        rows.extend(out.trace_rows());
        for (i, cmd) in out.actions.iter().enumerate() {
            let command = clip_command(*cmd, previous, task.joint_rate);
            if command.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!("non-finite command at step {}", env.state.step)));
            }
            previous = [command[0], command[1]];
            let (next, outcome) = env.step(&command)?;
            obs = next;
            state.committed.push(command);
            let cands = &out.pool.steps[i];
            let picked = &out.aggregation.scores[i];
            trace.push(
                &command,
                &env.state,
                ActionSource {
                    branch: Some(cands[picked.selected].branch.as_str().to_string()),
                    round: Some(round),
                    confidence: Some(picked.confidence[picked.selected]),
                    pool_size: Some(cands.len()),
                },
            )?;
            if outcome.done {
                break 'episode;
            }
        }
    }
    Ok(Rollout {
        trace,
        aggregation: rows,
    })
}
