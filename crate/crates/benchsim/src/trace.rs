//! Per-step episode traces.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::env::EnvState;
use crate::error::{BenchError, Result};
use crate::task::{InitMode, TaskId};

/// One executed step. The optional fields describe where the executed action
/// came from when a chunked policy produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub cmd_q1: f64,
    pub cmd_q2: f64,
    pub cmd_gripper: f64,
    pub q1: f64,
    pub q2: f64,
    pub gripper: f64,
    pub progress: f64,
    pub target_distance: f64,
    pub holding: bool,
    /// A grasp attempt has failed at or before this step.
    pub grasp_failed: bool,
    pub success: bool,
    /// Branch of the selected candidate (`visual` or `fused`).
    pub branch: Option<String>,
    /// Inference round that produced the selected candidate.
    pub round: Option<usize>,
    /// Normalized confidence of the selected candidate.
    pub confidence: Option<f64>,
    /// Number of candidates in the overlap pool.
    pub pool_size: Option<usize>,
}

/// Provenance of an executed action, attached by the policy executor.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ActionSource {
    pub branch: Option<String>,
    pub round: Option<usize>,
    pub confidence: Option<f64>,
    pub pool_size: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub task: TaskId,
    pub init_mode: InitMode,
    pub seed: u64,
    pub step_limit: usize,
    pub records: Vec<StepRecord>,
}

impl EpisodeTrace {
    pub fn new(task: TaskId, init_mode: InitMode, seed: u64, step_limit: usize) -> Self {
        Self {
            task,
            init_mode,
            seed,
            step_limit,
            records: Vec::new(),
        }
    }

    /// Appends the step that produced `state`. Refuses to grow past the step
    /// limit or to clear a success flag.
    pub fn push(&mut self, command: &[f64], state: &EnvState, source: ActionSource) -> Result<()> {
        if self.records.len() >= self.step_limit {
            return Err(BenchError::InvalidConfig(format!(
                "trace already holds {} steps",
                self.step_limit
            )));
        }
        if self.success() && !state.success {
            return Err(BenchError::InvalidConfig("success flag cannot be cleared".into()));
        }
        self.records.push(StepRecord {
            step: state.step,
            cmd_q1: command[0],
            cmd_q2: command[1],
            cmd_gripper: command[2],
            q1: state.joints[0],
            q2: state.joints[1],
            gripper: state.gripper,
            progress: state.progress,
            target_distance: state.target_distance(self.task),
            holding: state.holding,
            grasp_failed: state.first_failure_step.is_some(),
            success: state.success,
            branch: source.branch,
            round: source.round,
            confidence: source.confidence,
            pool_size: source.pool_size,
        });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn success(&self) -> bool {
        self.records.last().is_some_and(|r| r.success)
    }

    /// Index of the first record after a failed grasp.
    pub fn first_failure(&self) -> Option<usize> {
        self.records.iter().position(|r| r.grasp_failed)
    }

    pub fn distances(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.target_distance).collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        for r in &self.records {
            writer
                .serialize(r)
                .map_err(|e| BenchError::Format(format!("csv: {e}")))?;
        }
        writer.flush()?;
        Ok(())
    }
}
