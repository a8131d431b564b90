//! Environment state, reset and transition.
//!
//! Actions are absolute targets `[θ1, θ2, gripper width]`. Joints and gripper
//! move toward their targets subject to per-step rate limits. Grasp events
//! fire when the gripper closes through [`GRASP_WIDTH`]; releases fire when it
//! reopens through the same width.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arm::{self, Point, GRIPPER_MAX};
use crate::error::{BenchError, Result};
use crate::render::{self, Image};
use crate::task::{canonical_joints, InitMode, TaskConfig, TaskId};

/// Gripper width below which the fingers count as closed.
pub const GRASP_WIDTH: f64 = 0.03;
/// Drawer travel of the latch task (meters).
pub const PULL_TRAVEL: f64 = 0.12;
/// A held handle slips once the end effector strays this far from it.
pub const BREAK_RADIUS: f64 = 0.06;
/// Fingertip height at or below which the button registers a press.
pub const PRESS_HEIGHT: f64 = 0.035;
/// Horizontal tolerance for pressing the button.
pub const PRESS_TOLERANCE: f64 = 0.025;
/// Progress added per step while the button is held down.
pub const PRESS_RATE: f64 = 0.25;
/// Half-width of the placement zone.
pub const ZONE_HALF_WIDTH: f64 = 0.05;
/// Resting height of the block centre.
pub const BLOCK_REST_Y: f64 = 0.02;
/// Distance the open gripper must back away after a failed grasp before the
/// pending regrasp flag clears.
pub const REGRASP_CLEARANCE: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub joints: [f64; 2],
    pub gripper: f64,
    /// Handle, button or block position.
    pub object: Point,
    /// Initial object position; the latch track is anchored here.
    pub object_home: Point,
    /// Placement zone centre (only meaningful for `place_block`).
    pub zone: Point,
    pub progress: f64,
    pub step: usize,
    pub holding: bool,
    pub grasp_attempts: u32,
    pub first_failure_step: Option<usize>,
    /// Set by a failed grasp; cleared once the open gripper has backed away.
    pub regrasp_pending: bool,
    pub last_gripper_command: f64,
    pub success: bool,
}

impl EnvState {
    pub fn end_effector(&self) -> Point {
        arm::end_effector(self.joints)
    }

    /// Proprioceptive reading: joint angles and gripper width.
    pub fn proprio(&self) -> [f64; 3] {
        [self.joints[0], self.joints[1], self.gripper]
    }

    /// Point the gripper has to reach to interact with the object.
    pub fn grasp_point(&self, task: TaskId) -> Point {
        match task {
            TaskId::PressButton => [self.object[0], 0.02],
            _ => self.object,
        }
    }

    /// End-effector distance to the object's grasp point.
    pub fn target_distance(&self, task: TaskId) -> f64 {
        arm::distance(self.end_effector(), self.grasp_point(task))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub front: Image,
    pub wrist: Image,
    pub proprio: [f64; 3],
}

impl Observation {
    pub fn of(state: &EnvState, cfg: &TaskConfig) -> Self {
        let (front, wrist) = render::render(state, cfg);
        Self {
            front,
            wrist,
            proprio: state.proprio(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub done: bool,
    pub success: bool,
}

fn uniform(rng: &mut ChaCha8Rng, range: [f64; 2]) -> f64 {
    range[0] + (range[1] - range[0]) * rng.random::<f64>()
}

/// Samples a start state. The same random draws happen in both init modes,
/// so a seed places the object identically with and without perturbation.
pub fn env_reset(cfg: &TaskConfig, seed: u64) -> (EnvState, Observation) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let object = [uniform(&mut rng, cfg.placement.x), uniform(&mut rng, cfg.placement.y)];
    let zone = [uniform(&mut rng, cfg.zone_x), 0.0];
    let b = cfg.perturbation;
    let dq = [uniform(&mut rng, [-b, b]), uniform(&mut rng, [-b, b])];
    let mut joints = canonical_joints();
    if cfg.init_mode == InitMode::Perturbed {
        joints = arm::clamp_joints([joints[0] + dq[0], joints[1] + dq[1]]);
    }
    let state = EnvState {
        joints,
        gripper: GRIPPER_MAX,
        object,
        object_home: object,
        zone,
        progress: 0.0,
        step: 0,
        holding: false,
        grasp_attempts: 0,
        first_failure_step: None,
        regrasp_pending: false,
        last_gripper_command: GRIPPER_MAX,
        success: false,
    };
    let obs = Observation::of(&state, cfg);
    (state, obs)
}

fn approach(current: f64, target: f64, rate: f64) -> f64 {
    current + (target - current).clamp(-rate, rate)
}

/// Advances the state by one step. Returns an error only for non-finite or
/// wrongly sized actions.
pub fn env_step(cfg: &TaskConfig, state: &mut EnvState, action: &[f64]) -> Result<StepOutcome> {
    if action.len() != 3 {
        return Err(BenchError::InvalidAction(format!(
            "expected 3 components, got {}",
            action.len()
        )));
    }
    if action.iter().any(|v| !v.is_finite()) {
        return Err(BenchError::InvalidAction(format!("non-finite action {action:?}")));
    }
    let target = arm::clamp_joints([action[0], action[1]]);
    state.joints = [
        approach(state.joints[0], target[0], cfg.joint_rate),
        approach(state.joints[1], target[1], cfg.joint_rate),
    ];
    let before = state.gripper;
    let command = action[2].clamp(0.0, GRIPPER_MAX);
    state.gripper = approach(before, command, cfg.gripper_rate).clamp(0.0, GRIPPER_MAX);
    state.last_gripper_command = command;

    let ee = state.end_effector();
    let task = cfg.task;
    let closed_now = before >= GRASP_WIDTH && state.gripper < GRASP_WIDTH;
    let opened_now = before < GRASP_WIDTH && state.gripper >= GRASP_WIDTH;

    if closed_now && !state.holding && task != TaskId::PressButton && !state.success {
        state.grasp_attempts += 1;
        let aligned = arm::distance(ee, state.grasp_point(task)) <= cfg.grasp_radius;
        if aligned && state.grasp_attempts > cfg.disabled_grasps {
            state.holding = true;
        } else {
            state.first_failure_step.get_or_insert(state.step);
            state.regrasp_pending = true;
        }
    }

    match task {
        TaskId::LatchPull => {
            if state.holding {
                if opened_now {
                    state.holding = false;
                } else {
                    let home = state.object_home;
                    let x = ee[0].clamp(home[0] - PULL_TRAVEL, home[0]);
                    state.object = [x, home[1]];
                    if arm::distance(ee, state.object) > BREAK_RADIUS {
                        state.holding = false;
                    }
                    state.progress = ((home[0] - x) / PULL_TRAVEL).clamp(0.0, 1.0);
                }
            }
            state.success |= state.progress >= cfg.success_progress;
        }
        TaskId::PressButton => {
            if (ee[0] - state.object[0]).abs() <= PRESS_TOLERANCE && ee[1] <= PRESS_HEIGHT {
                state.progress = (state.progress + PRESS_RATE).min(1.0);
            }
            state.success |= state.progress >= cfg.success_progress;
        }
        TaskId::PlaceBlock => {
            if state.holding {
                if opened_now {
                    state.holding = false;
                    state.object = [state.object[0], BLOCK_REST_Y];
                    if (state.object[0] - state.zone[0]).abs() <= ZONE_HALF_WIDTH {
                        state.progress = 1.0;
                    }
                } else {
                    state.object = ee;
                }
            }
            state.success |= state.progress >= cfg.success_progress;
        }
    }

    if state.regrasp_pending
        && state.gripper >= GRIPPER_MAX
        && arm::distance(ee, state.grasp_point(task)) >= REGRASP_CLEARANCE
    {
        state.regrasp_pending = false;
    }

    state.step += 1;
    Ok(StepOutcome {
        done: state.success || state.step >= cfg.step_limit,
        success: state.success,
    })
}

/// Convenience wrapper owning a configuration and a live state.
#[derive(Clone, Debug)]
pub struct Env {
    pub cfg: TaskConfig,
    pub state: EnvState,
}

impl Env {
    pub fn reset(cfg: TaskConfig, seed: u64) -> (Self, Observation) {
        let (state, obs) = env_reset(&cfg, seed);
        (Self { cfg, state }, obs)
    }

    pub fn step(&mut self, action: &[f64]) -> Result<(Observation, StepOutcome)> {
        let outcome = env_step(&self.cfg, &mut self.state, action)?;
        Ok((self.observe(), outcome))
    }

    pub fn observe(&self) -> Observation {
        Observation::of(&self.state, &self.cfg)
    }

    pub fn target_distance(&self) -> f64 {
        self.state.target_distance(self.cfg.task)
    }
}
