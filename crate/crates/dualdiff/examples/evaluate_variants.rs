// Evaluates a tiny policy in both initial conditions and all three
// inference variants, printing the success table.

use benchsim::{generate_demos, TaskConfig, TaskId};
use dualdiff::pipeline::{evaluate, train, EvalSpec, TrainConfig};

/// Returns the rendered table.
pub fn run_example() -> String {
    let demos = generate_demos(&TaskConfig::new(TaskId::LatchPull), 2, 2).unwrap();
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 32,
        latent_dim: 16,
        denoiser_hidden: 32,
        denoiser_layers: 2,
        step_embed: 8,
        ..TrainConfig::default()
    };
    let (policy, _) = train(&demos, &cfg).unwrap();
    let report = evaluate(|_, _| Some(&policy), &EvalSpec::new(TaskId::LatchPull, 2, 0)).unwrap();
    let table = report.to_table();
    print!("{table}");
    table
}

#[allow(dead_code)]
fn main() {
    run_example();
}
