// Trains a deliberately tiny policy on two demonstrations, saves it and
// runs one closed-loop episode with the reloaded copy.

use benchsim::{generate_demos, TaskConfig, TaskId};
use dualdiff::pipeline::{rollout, train, PolicyBundle, TrainConfig, Variant};

pub fn tiny_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 32,
        latent_dim: 16,
        denoiser_hidden: 32,
        denoiser_layers: 2,
        step_embed: 8,
        ..TrainConfig::default()
    }
}

/// Returns the number of executed steps.
pub fn run_example() -> usize {
    let task = TaskConfig::new(TaskId::LatchPull);
    let demos = generate_demos(&task, 2, 1).unwrap();
    let (policy, report) = train(&demos, &tiny_config(2)).unwrap();
    for e in &report.epochs {
        println!("epoch {}  loss {:.4}  ddpm {:.4}  dko {:.4}", e.epoch, e.loss, e.ddpm, e.dko);
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("policy.ckpt");
    policy.save(&path).unwrap();
    let policy = PolicyBundle::load(&path).unwrap();

    let run = rollout(&policy, &task, 42, Variant::Dual).unwrap();
    let last = run.trace.records.last().unwrap();
    println!(
        "{} steps, success {}, final distance {:.3}",
        run.trace.len(),
        run.trace.success(),
        last.target_distance
    );
    run.trace.len()
}

#[allow(dead_code)]
fn main() {
    run_example();
}
