// Recovers a linear map from noiseless samples with the tape and Adam.

use numgraph::{AdamConfig, Linear, OptimState, ParamStore, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Returns the loss before and after training.
pub fn run_example() -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let truth = Tensor::new(vec![3, 2], vec![0.5, -1.0, 2.0, 0.3, -0.7, 1.2]).unwrap();
    let mut store = ParamStore::new();
    let layer = Linear::new(&mut store, "fit", 3, 2, &mut rng);
    let mut opt = OptimState::new(AdamConfig { lr: 0.05, ..AdamConfig::default() }, &store);

    let mut losses = Vec::new();
    for _ in 0..300 {
        let x = Tensor::new(vec![16, 3], (0..48).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let tape = Tape::new();
        let xv = tape.constant(x);
        let target = xv.matmul(tape.constant(truth.clone())).unwrap();
        let loss = layer.forward(&tape, &store, xv).unwrap().mse(target).unwrap();
        losses.push(loss.item());
        let grads = tape.backward(loss).unwrap();
        opt.step(&mut store, &grads).unwrap();
    }
    (losses[0], *losses.last().unwrap())
}

#[allow(dead_code)]
fn main() {
    let (first, last) = run_example();
    println!("mse {first:.4} -> {last:.2e}");
}
