use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::arm;
use crate::error::{BenchError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskId {
    LatchPull,
    PressButton,
    PlaceBlock,
}

impl TaskId {
    pub const ALL: [TaskId; 3] = [TaskId::LatchPull, TaskId::PressButton, TaskId::PlaceBlock];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskId::LatchPull => "latch_pull",
            TaskId::PressButton => "press_button",
            TaskId::PlaceBlock => "place_block",
        }
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskId {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        TaskId::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| BenchError::InvalidConfig(format!("unknown task `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    Fixed,
    Perturbed,
}

impl InitMode {
    pub fn as_str(self) -> &'static str {
        match self {
            InitMode::Fixed => "fixed",
            InitMode::Perturbed => "perturbed",
        }
    }
}

impl fmt::Display for InitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InitMode {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(InitMode::Fixed),
            "perturbed" => Ok(InitMode::Perturbed),
            _ => Err(BenchError::InvalidConfig(format!("unknown init mode `{s}`"))),
        }
    }
}

/// Axis-aligned sampling region in world coordinates (meters).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub x: [f64; 2],
    pub y: [f64; 2],
}

impl Region {
    fn corners(&self) -> [[f64; 2]; 4] {
        [
            [self.x[0], self.y[0]],
            [self.x[0], self.y[1]],
            [self.x[1], self.y[0]],
            [self.x[1], self.y[1]],
        ]
    }
}

/// End-effector position of the canonical start pose.
pub const CANONICAL_EE: [f64; 2] = [0.32, 0.42];

pub fn canonical_joints() -> [f64; 2] {
    arm::inverse(CANONICAL_EE).expect("canonical pose is reachable")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskConfig {
    pub task: TaskId,
    /// Where the manipulated object (handle, button, block) is placed.
    pub placement: Region,
    /// Target zone centre range for `place_block`.
    pub zone_x: [f64; 2],
    /// Progress level counted as success.
    pub success_progress: f64,
    /// Maximum end-effector distance at which closing the gripper grasps.
    pub grasp_radius: f64,
    pub step_limit: usize,
    pub init_mode: InitMode,
    /// Half-width of the per-joint uniform start perturbation (radians).
    pub perturbation: f64,
    /// Per-step joint rate limit (radians).
    pub joint_rate: f64,
    /// Per-step gripper rate limit (meters).
    pub gripper_rate: f64,
    pub image_size: usize,
    /// Number of initial grasp attempts that fail regardless of alignment.
    pub disabled_grasps: u32,
}

impl TaskConfig {
    pub fn new(task: TaskId) -> Self {
        let base = Self {
            task,
            placement: Region {
                x: [0.56, 0.68],
                y: [0.08, 0.26],
            },
            zone_x: [0.64, 0.74],
            success_progress: 0.95,
            grasp_radius: 0.03,
            step_limit: 80,
            init_mode: InitMode::Fixed,
            perturbation: 10f64.to_radians(),
            joint_rate: 0.06,
            gripper_rate: 0.02,
            image_size: 32,
            disabled_grasps: 0,
        };
        match task {
            TaskId::LatchPull => base,
            TaskId::PressButton => Self {
                placement: Region {
                    x: [0.45, 0.70],
                    y: [0.0, 0.0],
                },
                success_progress: 1.0,
                ..base
            },
            TaskId::PlaceBlock => Self {
                placement: Region {
                    x: [0.36, 0.50],
                    y: [0.02, 0.02],
                },
                step_limit: 120,
                ..base
            },
        }
    }

    pub fn with_init(mut self, mode: InitMode) -> Self {
        self.init_mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(BenchError::InvalidConfig(msg));
        if self.step_limit < 1 {
            return bad("step_limit must be at least 1".into());
        }
        if self.image_size < 4 {
            return bad(format!("image_size {} too small", self.image_size));
        }
        if self.placement.x[0] > self.placement.x[1] || self.placement.y[0] > self.placement.y[1] {
            return bad(format!("empty placement range {:?}", self.placement));
        }
        for c in self.placement.corners() {
            if arm::inverse(c).is_none() {
                return bad(format!("placement corner {c:?} is outside the workspace"));
            }
        }
        let positive = [
            ("grasp_radius", self.grasp_radius),
            ("joint_rate", self.joint_rate),
            ("gripper_rate", self.gripper_rate),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.perturbation >= 0.0) {
            return bad(format!("perturbation must be nonnegative, got {}", self.perturbation));
        }
        if !(0.0..=1.0).contains(&self.success_progress) {
            return bad(format!("success_progress {} outside [0,1]", self.success_progress));
        }
        Ok(())
    }
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self::new(TaskId::LatchPull)
    }
}
