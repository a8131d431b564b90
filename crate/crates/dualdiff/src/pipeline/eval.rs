use std::fmt::Write as _;

use benchsim::{EpisodeTrace, InitMode, TaskConfig, TaskId};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::derive_seed;
use super::infer::{rollout, Variant};
use super::model::PolicyBundle;
use crate::error::{contract, Result};

/// Which cells to evaluate and how many episodes each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSpec {
    pub tasks: Vec<TaskId>,
    pub conditions: Vec<InitMode>,
    pub variants: Vec<Variant>,
    pub episodes: usize,
    pub seed: u64,
    /// Execution horizons to sweep. Empty means each policy's trained horizon.
    #[serde(default)]
    pub horizons: Vec<usize>,
}

impl EvalSpec {
    pub fn new(task: TaskId, episodes: usize, seed: u64) -> Self {
        Self {
            tasks: vec![task],
            conditions: vec![InitMode::Fixed, InitMode::Perturbed],
            variants: Variant::ALL.to_vec(),
            episodes,
            seed,
            horizons: Vec::new(),
        }
    }

    /// Episode seed shared by every condition and variant of a task, so all
    /// cells see the same initializations.
    pub fn episode_seed(&self, task: TaskId, episode: usize) -> u64 {
        derive_seed(&[self.seed, task as u64, episode as u64])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub seed: u64,
    pub success: bool,
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub task: TaskId,
    pub condition: InitMode,
    pub variant: Variant,
    pub horizon: usize,
    pub episodes: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub runs: Vec<EpisodeSummary>,
    #[serde(skip)]
    pub traces: Vec<EpisodeTrace>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seed: u64,
    pub episodes: usize,
    pub cells: Vec<CellResult>,
}

impl EvalReport {
    pub fn cell(&self, task: TaskId, condition: InitMode, variant: Variant) -> Option<&CellResult> {
        self.cells
            .iter()
            .find(|c| c.task == task && c.condition == condition && c.variant == variant)
    }

    pub fn rate(&self, task: TaskId, condition: InitMode, variant: Variant) -> Option<f64> {
        self.cell(task, condition, variant).map(|c| c.success_rate)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Aligned plain-text table, one row per cell.
    pub fn to_table(&self) -> String {
        let header = ["task", "condition", "variant", "h", "n", "success", "rate"];
        let rows: Vec<[String; 7]> = self
            .cells
            .iter()
            .map(|c| {
                [
                    c.task.to_string(),
                    c.condition.to_string(),
                    c.variant.to_string(),
                    c.horizon.to_string(),
                    c.episodes.to_string(),
                    c.successes.to_string(),
                    format!("{:.1}%", 100.0 * c.success_rate),
                ]
            })
            .collect();
        let mut widths = header.map(str::len);
        for row in &rows {
            for (w, s) in widths.iter_mut().zip(row) {
                *w = (*w).max(s.len());
            }
        }
        let mut out = String::new();
        let mut line = |cells: Vec<&str>| {
            let parts: Vec<String> = cells
                .iter()
                .zip(widths)
                .map(|(s, w)| format!("{s:<w$}"))
                .collect();
            let _ = writeln!(out, "{}", parts.join("  ").trim_end());
        };
        line(header.to_vec());
        for row in &rows {
            line(row.iter().map(String::as_str).collect());
        }
        out
    }
}

/// Runs every cell of `spec`. `policy_for` returns the policy used for a
/// task and variant; episodes run in parallel and are reduced in a fixed
/// order, so the report does not depend on scheduling.
pub fn evaluate<'p, F>(policy_for: F, spec: &EvalSpec) -> Result<EvalReport>
where
    F: Fn(TaskId, Variant) -> Option<&'p PolicyBundle> + Sync,
{
    if spec.episodes == 0 {
        return Err(contract("evaluation needs at least one episode per cell"));
    }
    // Horizon overrides need their own copies of the policy; collect them
    // first so the cells below can borrow from a settled vector.
    let mut plan = Vec::new();
    let mut copies: Vec<PolicyBundle> = Vec::new();
    for &task in &spec.tasks {
        for &condition in &spec.conditions {
            for &variant in &spec.variants {
                let policy = policy_for(task, variant)
                    .ok_or_else(|| contract(format!("no policy for {task} / {variant}")))?;
                if spec.horizons.is_empty() {
                    plan.push((task, condition, variant, Err(policy)));
                    continue;
                }
                for &h in &spec.horizons {
                    copies.push(policy.with_horizon(h)?);
                    plan.push((task, condition, variant, Ok(copies.len() - 1)));
                }
            }
        }
    }
    let cells: Vec<(TaskId, InitMode, Variant, &PolicyBundle)> = plan
        .into_iter()
        .map(|(task, condition, variant, source)| {
            let policy = match source {
                Ok(i) => &copies[i],
                Err(p) => p,
            };
            (task, condition, variant, policy)
        })
        .collect();
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..spec.episodes).map(move |e| (c, e)))
        .collect();
    let traces: Vec<EpisodeTrace> = jobs
        .par_iter()
        .map(|&(c, e)| {
            let (task, condition, variant, policy) = cells[c];
            let cfg = TaskConfig::new(task).with_init(condition);
            rollout(policy, &cfg, spec.episode_seed(task, e), variant).map(|r| r.trace)
        })
        .collect::<Result<_>>()?;

    let mut traces = traces.into_iter();
    let cells = cells
        .into_iter()
        .map(|(task, condition, variant, policy)| {
            let traces: Vec<EpisodeTrace> = traces.by_ref().take(spec.episodes).collect();
            let runs: Vec<EpisodeSummary> = traces
                .iter()
                .map(|t| EpisodeSummary {
                    seed: t.seed,
                    success: t.success(),
                    steps: t.len(),
                })
                .collect();
            let successes = runs.iter().filter(|r| r.success).count();
            CellResult {
                task,
                condition,
                variant,
                horizon: policy.config.horizon,
                episodes: spec.episodes,
                successes,
                success_rate: successes as f64 / spec.episodes as f64,
                runs,
                traces,
            }
        })
        .collect();
    Ok(EvalReport {
        seed: spec.seed,
        episodes: spec.episodes,
        cells,
    })
}

/// Whether the end effector closed in on its target again after the first
/// failed grasp: the distance must fall at least `margin` below its running
/// maximum since the failure. `None` when no grasp failed.
pub fn reapproached(trace: &EpisodeTrace, margin: f64) -> Option<bool> {
    let start = trace.first_failure()?;
    let mut peak = f64::NEG_INFINITY;
    for d in trace.distances().into_iter().skip(start) {
        peak = peak.max(d);
        if peak - d >= margin {
            return Some(true);
        }
    }
    Some(false)
}
