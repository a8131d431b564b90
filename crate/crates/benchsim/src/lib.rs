//! Planar two-link arm benchmark: simulator, renderer, scripted experts and
//! demonstration datasets.

pub mod arm;
pub mod demos;
pub mod env;
pub mod error;
pub mod expert;
pub mod render;
pub mod task;
pub mod trace;

pub use demos::{generate_demos, generate_demos_with, DemoDataset, DemoOptions, Episode};
pub use env::{env_reset, env_step, Env, EnvState, Observation, StepOutcome};
pub use error::{BenchError, Result};
pub use expert::{Phase, ScriptedExpert};
pub use render::{render, Image};
pub use task::{InitMode, Region, TaskConfig, TaskId};
pub use trace::{ActionSource, EpisodeTrace, StepRecord};
