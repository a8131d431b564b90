// Records scripted-expert demonstrations, stores them and reads them back.

use benchsim::{generate_demos_with, DemoDataset, DemoOptions, TaskConfig, TaskId};

/// Returns `(episodes, total steps)` of the reloaded dataset.
pub fn run_example() -> (usize, usize) {
    let cfg = TaskConfig::new(TaskId::LatchPull);
    // half of the episodes fail their first grasp and show the retry
    let demos = generate_demos_with(&cfg, 4, 11, DemoOptions { retry_fraction: 0.5 }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    demos.save(dir.path()).unwrap();
    let back = DemoDataset::load(dir.path()).unwrap();
    for ep in &back.episodes {
        println!("seed {:>20}  steps {:>3}  forced failures {}", ep.seed, ep.steps(), ep.disabled_grasps);
    }
    (back.episodes.len(), back.episodes.iter().map(|e| e.steps()).sum())
}

#[allow(dead_code)]
fn main() {
    let (n, steps) = run_example();
    println!("{n} episodes, {steps} steps");
}
