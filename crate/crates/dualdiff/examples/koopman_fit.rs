// Fits the Koopman operators and latent policy to a synthetic controlled
// linear system whose observables are known.

use dualdiff::koopman::{dko_predict, KoopmanParams, LatentPolicy};
use numgraph::{AdamConfig, OptimState, ParamStore, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const D: usize = 4;

fn predict<'t>(tape: &'t Tape, store: &ParamStore, latent: &LatentPolicy, kp: &KoopmanParams, z: &Tensor) -> Var<'t> {
    let f_v = tape.constant(z.clone());
    let f_u = latent.forward(tape, store, f_v).unwrap();
    dko_predict(f_v, f_u, tape.param(store, kp.k_op), tape.param(store, kp.v_op)).unwrap()
}

/// Returns the one-step prediction error before and after fitting.
pub fn run_example() -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    // z' = 0.9 R z + 0.2 tanh(z)
    let (c, s) = (0.9 * 0.4f64.cos(), 0.9 * 0.4f64.sin());
    let step = |z: &[f64]| -> Vec<f64> {
        let mut out = vec![c * z[0] - s * z[1], s * z[0] + c * z[1], c * z[2] - s * z[3], s * z[2] + c * z[3]];
        for (o, zi) in out.iter_mut().zip(z) {
            *o += 0.2 * zi.tanh();
        }
        out
    };
    let sample = |rng: &mut ChaCha8Rng, rows: usize| {
        let z: Vec<f64> = (0..rows * D).map(|_| rng.random_range(-1.0..1.0)).collect();
        let next: Vec<f64> = z.chunks(D).flat_map(step).collect();
        (Tensor::new(vec![rows, D], z).unwrap(), Tensor::new(vec![rows, D], next).unwrap())
    };

    let mut store = ParamStore::new();
    let latent = LatentPolicy::new(&mut store, D, 1, &mut rng);
    let kp = KoopmanParams::new(&mut store, D, &mut rng);
    let mut opt = OptimState::new(AdamConfig { lr: 3e-3, ..AdamConfig::default() }, &store);
    let (z_test, next_test) = sample(&mut ChaCha8Rng::seed_from_u64(99), 500);
    let error = |store: &ParamStore| {
        let tape = Tape::no_grad();
        predict(&tape, store, &latent, &kp, &z_test).mse(tape.constant(next_test.clone())).unwrap().item()
    };
    let before = error(&store);
    for _ in 0..600 {
        let (z, next) = sample(&mut rng, 64);
        let tape = Tape::new();
        let loss = predict(&tape, &store, &latent, &kp, &z).mse(tape.constant(next)).unwrap();
        let grads = tape.backward(loss).unwrap();
        opt.step(&mut store, &grads).unwrap();
    }
    let after = error(&store);
    let mut csv = Vec::new();
    kp.write_csv(&store, &mut csv).unwrap();
    print!("{}", String::from_utf8(csv).unwrap());
    (before, after)
}

#[allow(dead_code)]
fn main() {
    let (before, after) = run_example();
    println!("one-step mse {before:.4} -> {after:.2e}");
}
