// Input-gradient saliency of a tiny policy's visual features.

use benchsim::{generate_demos, Env, TaskConfig, TaskId};
use dualdiff::pipeline::{saliency, train, TrainConfig};

/// Returns the number of front-view pixels above half the peak saliency.
pub fn run_example() -> usize {
    let task = TaskConfig::new(TaskId::LatchPull);
    let demos = generate_demos(&task, 2, 4).unwrap();
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
    let (_, obs) = Env::reset(task, 9);
    let maps = saliency(&policy, &obs).unwrap();
    let side = maps.front.width;
    for r in (0..side).step_by(2) {
        let row: String = (0..side)
            .step_by(2)
            .map(|c| if maps.front.at(r, c) > 0.5 { '#' } else if maps.front.at(r, c) > 0.2 { '+' } else { '.' })
            .collect();
        println!("{row}");
    }
    maps.front.pixels.iter().filter(|&&v| v > 0.5).count()
}

#[allow(dead_code)]
fn main() {
    println!("{} salient front pixels", run_example());
}
