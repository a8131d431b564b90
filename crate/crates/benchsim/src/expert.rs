//! Phase-based scripted expert.
//!
//! The phase is read off the environment state alone, so an expert started
//! from any intermediate state (including right after a failed grasp) picks up
//! where the task stands. Free-space motion follows straight joint-space
//! lines; while an object is held the expert moves in short Cartesian steps.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::arm::{self, Point, GRIPPER_MAX};
use crate::env::{EnvState, GRASP_WIDTH};
use crate::error::{BenchError, Result};
use crate::task::{TaskConfig, TaskId, CANONICAL_EE};

/// Free-space joint speed of the expert (radians per step).
pub const APPROACH_RATE: f64 = 0.04;
/// Standard deviation of the joint-target noise (0.5°).
pub const NOISE_STD: f64 = 0.5 * std::f64::consts::PI / 180.0;
/// The expert closes the gripper once this close to the grasp point.
pub const CLOSE_DISTANCE: f64 = 0.012;
/// Cartesian pull step on the latch handle.
pub const PULL_STEP: f64 = 0.008;
/// Distance the expert backs off along its approach after a failed grasp.
pub const RETREAT_DISTANCE: f64 = 0.08;

const CARRY_STEP: f64 = 0.02;
const HOVER_Y: f64 = 0.10;
const CARRY_Y: f64 = 0.15;
const ALIGN_X: f64 = 0.015;
const PRESS_DEPTH: f64 = 0.015;
const RELEASE_Y: f64 = 0.03;

/// What the expert is doing on a given step; exposed for tests and traces.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Approach,
    Grasp,
    Manipulate,
    Retreat,
    Hold,
}

/// Seeded expert; every call draws the same number of noise samples.
#[derive(Clone, Debug)]
pub struct ScriptedExpert {
    rng: ChaCha8Rng,
    noise: Normal<f64>,
}

struct Plan {
    phase: Phase,
    joints: [f64; 2],
    gripper: f64,
    noisy: bool,
}

impl ScriptedExpert {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            noise: Normal::new(0.0, NOISE_STD).expect("valid std"),
        }
    }

    /// Absolute action `[θ1, θ2, gripper]` for the current state.
    pub fn act(&mut self, state: &EnvState, cfg: &TaskConfig) -> Result<[f64; 3]> {
        let plan = plan(state, cfg)?;
        let n = [self.noise.sample(&mut self.rng), self.noise.sample(&mut self.rng)];
        let mut q = plan.joints;
        if plan.noisy {
            q = [q[0] + n[0], q[1] + n[1]];
        }
        Ok([q[0], q[1], plan.gripper])
    }
}

/// Phase the expert would be in at `state`.
pub fn phase(state: &EnvState, cfg: &TaskConfig) -> Result<Phase> {
    Ok(plan(state, cfg)?.phase)
}

fn ik(p: Point) -> Result<[f64; 2]> {
    arm::inverse(p).ok_or(BenchError::Unreachable(p))
}

fn free_move(state: &EnvState, goal: Point, phase: Phase, gripper: f64) -> Result<Plan> {
    Ok(Plan {
        phase,
        joints: arm::step_toward(state.joints, ik(goal)?, APPROACH_RATE),
        gripper,
        noisy: true,
    })
}

fn cartesian_move(state: &EnvState, goal: Point, step: f64, gripper: f64) -> Result<Plan> {
    let ee = state.end_effector();
    let d = [goal[0] - ee[0], goal[1] - ee[1]];
    let len = (d[0] * d[0] + d[1] * d[1]).sqrt();
    let s = if len > step { step / len } else { 1.0 };
    Ok(Plan {
        phase: Phase::Manipulate,
        joints: ik([ee[0] + d[0] * s, ee[1] + d[1] * s])?,
        gripper,
        noisy: false,
    })
}

fn hold(state: &EnvState) -> Plan {
    Plan {
        phase: Phase::Hold,
        joints: state.joints,
        gripper: state.last_gripper_command,
        noisy: false,
    }
}

fn plan(state: &EnvState, cfg: &TaskConfig) -> Result<Plan> {
    if state.success {
        return Ok(hold(state));
    }
    match cfg.task {
        TaskId::LatchPull => plan_latch(state),
        TaskId::PressButton => plan_press(state),
        TaskId::PlaceBlock => plan_place(state),
    }
}

fn failed(state: &EnvState) -> bool {
    !state.holding && (state.regrasp_pending || state.gripper < GRASP_WIDTH)
}

/// Moves to the grasp point with the gripper open, then closes on it.
fn reach_and_close(state: &EnvState, grasp: Point) -> Result<Plan> {
    let ee = state.end_effector();
    if arm::distance(ee, grasp) <= CLOSE_DISTANCE {
        free_move(state, grasp, Phase::Grasp, 0.0)
    } else {
        free_move(state, grasp, Phase::Approach, GRIPPER_MAX)
    }
}

fn plan_latch(state: &EnvState) -> Result<Plan> {
    let handle = state.object;
    if state.holding {
        let goal = [handle[0] - PULL_STEP, state.object_home[1]];
        return cartesian_move(state, goal, PULL_STEP, 0.0);
    }
    if failed(state) {
        let away = [CANONICAL_EE[0] - handle[0], CANONICAL_EE[1] - handle[1]];
        let n = (away[0] * away[0] + away[1] * away[1]).sqrt().max(1e-9);
        let goal = [
            handle[0] + RETREAT_DISTANCE * away[0] / n,
            handle[1] + RETREAT_DISTANCE * away[1] / n,
        ];
        return free_move(state, goal, Phase::Retreat, GRIPPER_MAX);
    }
    reach_and_close(state, handle)
}

fn plan_press(state: &EnvState) -> Result<Plan> {
    let bx = state.object[0];
    let ee = state.end_effector();
    let aligned = (ee[0] - bx).abs() < ALIGN_X && ee[1] < HOVER_Y + 0.01;
    if state.progress > 0.0 || aligned {
        return free_move(state, [bx, PRESS_DEPTH], Phase::Manipulate, GRIPPER_MAX);
    }
    free_move(state, [bx, HOVER_Y], Phase::Approach, GRIPPER_MAX)
}

fn plan_place(state: &EnvState) -> Result<Plan> {
    let ee = state.end_effector();
    let block = state.object;
    if state.holding {
        let zx = state.zone[0];
        if (ee[0] - zx).abs() < ALIGN_X && ee[1] < CARRY_Y - 0.01 {
            if ee[1] <= RELEASE_Y + 0.01 {
                return Ok(Plan {
                    phase: Phase::Manipulate,
                    joints: state.joints,
                    gripper: GRIPPER_MAX,
                    noisy: false,
                });
            }
            return cartesian_move(state, [zx, RELEASE_Y], CARRY_STEP, 0.0);
        }
        if ee[1] < CARRY_Y - 0.01 && (ee[0] - zx).abs() >= ALIGN_X {
            return cartesian_move(state, [ee[0], CARRY_Y], CARRY_STEP, 0.0);
        }
        if (ee[0] - zx).abs() >= 0.002 {
            return cartesian_move(state, [zx, CARRY_Y], CARRY_STEP, 0.0);
        }
        return cartesian_move(state, [zx, RELEASE_Y], CARRY_STEP, 0.0);
    }
    if failed(state) {
        return free_move(state, [block[0], block[1] + RETREAT_DISTANCE], Phase::Retreat, GRIPPER_MAX);
    }
    let aligned = (ee[0] - block[0]).abs() < ALIGN_X && ee[1] < HOVER_Y + 0.01;
    if aligned {
        return reach_and_close(state, block);
    }
    free_move(state, [block[0], HOVER_Y], Phase::Approach, GRIPPER_MAX)
}
