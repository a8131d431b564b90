//! Reverse-mode gradients checked against central finite differences.

use numgraph::{Tape, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;

type Builder = dyn for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>;

fn eval(build: &Builder, inputs: &[Tensor]) -> f64 {
    let tape = Tape::no_grad();
    let vars: Vec<_> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    build(&tape, &vars).item()
}

/// Largest relative error over every input coordinate.
fn max_rel_error(build: &Builder, inputs: &[Tensor]) -> f64 {
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = build(&tape, &vars);
    let grads = tape.backward(loss).unwrap();
    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads
            .wrt(vars[k])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(input.shape().to_vec()));
        for j in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[j] += STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[j] -= STEP;
            let numeric = (eval(build, &plus) - eval(build, &minus)) / (2.0 * STEP);
            let a = analytic.data()[j];
            let denom = a.abs().max(numeric.abs()).max(1e-2);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    worst
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    // keep entries away from the relu kink so finite differences stay smooth
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(0.05..1.5);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Four-layer graph touching every differentiable primitive. Stop-gradient is
/// excluded: finite differences see through it by construction.
fn composite<'t>(_tape: &'t Tape, v: &[Var<'t>]) -> Var<'t> {
    let (x, w1, b1, w2, target) = (v[0], v[1], v[2], v[3], v[4]);
    let hidden = w1.shape()[1];
    let h1 = x.matmul(w1).unwrap().add(b1).unwrap().tanh();
    let h2 = h1.concat(x, 1).unwrap().matmul(w2).unwrap().relu();
    let gate = h2.slice(0..hidden, 1).unwrap().sigmoid();
    let h3 = gate.mul(h1).unwrap().sub(h1.scale(0.25)).unwrap();
    let probs = h3.softmax(1).unwrap().transpose().unwrap();
    probs
        .mse(target)
        .unwrap()
        .add(h2.l2sq().scale(0.05))
        .unwrap()
        .add(h3.mean())
        .unwrap()
        .sub(h3.sum().scale(0.01))
        .unwrap()
}

#[test]
fn composite_graphs_match_finite_differences() {
    let started = std::time::Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..120u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batch = rng.random_range(1..5);
        let feat = rng.random_range(1..5);
        let hidden = rng.random_range(2..5);
        let inputs = vec![
            random_tensor(&mut rng, &[batch, feat]),
            random_tensor(&mut rng, &[feat, hidden]),
            random_tensor(&mut rng, &[hidden]),
            random_tensor(&mut rng, &[hidden + feat, hidden + 1]),
            random_tensor(&mut rng, &[hidden, batch]),
        ];
        let err = max_rel_error(&composite, &inputs);
        assert!(err < TOL, "seed {seed}: relative error {err}");
        worst = worst.max(err);
    }
    println!("worst relative error {worst:.3e} in {:?}", started.elapsed());
}

/// Weighted sum so every output coordinate gets a distinct upstream gradient.
fn weighted<'t>(y: Var<'t>, r: Var<'t>) -> Var<'t> {
    y.mul(r).unwrap().sum()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 100, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn every_primitive_matches_finite_differences(
        seed in any::<u64>(),
        rows in 1usize..4,
        cols in 1usize..5,
        inner in 1usize..4,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_tensor(&mut rng, &[rows, cols]);
        let b = random_tensor(&mut rng, &[rows, cols]);
        let row = random_tensor(&mut rng, &[cols]);
        let m = random_tensor(&mut rng, &[cols, inner]);
        let r_same = random_tensor(&mut rng, &[rows, cols]);
        let r_mm = random_tensor(&mut rng, &[rows, inner]);
        let r_cat = random_tensor(&mut rng, &[rows, 2 * cols]);
        let r_t = random_tensor(&mut rng, &[cols, rows]);
        let cut = 1 + cols / 2;
        let r_slice = random_tensor(&mut rng, &[rows, cut.min(cols)]);

        let cases: Vec<(&str, Box<Builder>, Vec<Tensor>)> = vec![
            ("matmul", Box::new(|_, v| weighted(v[0].matmul(v[1]).unwrap(), v[2])), vec![a.clone(), m.clone(), r_mm.clone()]),
            ("add", Box::new(|_, v| weighted(v[0].add(v[1]).unwrap(), v[2])), vec![a.clone(), b.clone(), r_same.clone()]),
            ("add_row", Box::new(|_, v| weighted(v[0].add(v[1]).unwrap(), v[2])), vec![a.clone(), row.clone(), r_same.clone()]),
            ("row_add", Box::new(|_, v| weighted(v[1].add(v[0]).unwrap(), v[2])), vec![a.clone(), row.clone(), r_same.clone()]),
            ("sub", Box::new(|_, v| weighted(v[0].sub(v[1]).unwrap(), v[2])), vec![a.clone(), row.clone(), r_same.clone()]),
            ("mul", Box::new(|_, v| weighted(v[0].mul(v[1]).unwrap(), v[2])), vec![a.clone(), b.clone(), r_same.clone()]),
            ("mul_row", Box::new(|_, v| weighted(v[1].mul(v[0]).unwrap(), v[2])), vec![a.clone(), row.clone(), r_same.clone()]),
            ("scale", Box::new(|_, v| weighted(v[0].scale(-1.7), v[1])), vec![a.clone(), r_same.clone()]),
            ("transpose", Box::new(|_, v| weighted(v[0].transpose().unwrap(), v[1])), vec![a.clone(), r_t.clone()]),
            ("concat", Box::new(|_, v| weighted(v[0].concat(v[1], 1).unwrap(), v[2])), vec![a.clone(), b.clone(), r_cat.clone()]),
            ("concat0", Box::new(|_, v| v[0].concat(v[1], 0).unwrap().l2sq()), vec![a.clone(), b.clone()]),
            ("slice", Box::new(move |_, v| weighted(v[0].slice(0..cut.min(cols), 1).unwrap(), v[1])), vec![a.clone(), r_slice.clone()]),
            ("sum", Box::new(|_, v| v[0].mul(v[0]).unwrap().sum()), vec![a.clone()]),
            ("mean", Box::new(|_, v| v[0].tanh().mean()), vec![a.clone()]),
            ("relu", Box::new(|_, v| weighted(v[0].relu(), v[1])), vec![a.clone(), r_same.clone()]),
            ("tanh", Box::new(|_, v| weighted(v[0].tanh(), v[1])), vec![a.clone(), r_same.clone()]),
            ("sigmoid", Box::new(|_, v| weighted(v[0].sigmoid(), v[1])), vec![a.clone(), r_same.clone()]),
            ("softmax1", Box::new(|_, v| weighted(v[0].softmax(1).unwrap(), v[1])), vec![a.clone(), r_same.clone()]),
            ("softmax0", Box::new(|_, v| weighted(v[0].softmax(0).unwrap(), v[1])), vec![a.clone(), r_same.clone()]),
            ("mse", Box::new(|_, v| v[0].mse(v[1]).unwrap()), vec![a.clone(), b.clone()]),
            ("l2sq", Box::new(|_, v| v[0].l2sq()), vec![a.clone()]),
            ("reshape", Box::new(move |_, v| weighted(v[0].reshape(vec![rows * cols]).unwrap(), v[1].reshape(vec![rows * cols]).unwrap())), vec![a.clone(), r_same.clone()]),
        ];
        for (name, build, inputs) in cases {
            let err = max_rel_error(build.as_ref(), &inputs);
            prop_assert!(err < TOL, "{} relative error {}", name, err);
        }
    }
}

#[test]
fn stop_gradient_contributes_exact_zero() {
    let tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![0.3, -1.2, 2.0]));
    let y = tape.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]));
    let loss = x.stop_gradient().mul(y).unwrap().sum().add(x.scale(0.0).sum()).unwrap();
    let grads = tape.backward(loss).unwrap();
    for v in grads.wrt(x).unwrap().data() {
        assert_eq!(v.to_bits(), 0.0f64.to_bits());
    }
    assert_eq!(grads.wrt(y).unwrap().data(), &[0.3, -1.2, 2.0]);
}

#[test]
fn replay_is_bit_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let inputs = vec![
        random_tensor(&mut rng, &[3, 4]),
        random_tensor(&mut rng, &[4, 3]),
        random_tensor(&mut rng, &[3]),
        random_tensor(&mut rng, &[7, 4]),
        random_tensor(&mut rng, &[3, 3]),
    ];
    let run = || {
        let tape = Tape::new();
        let vars: Vec<_> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = composite(&tape, &vars);
        let grads = tape.backward(loss).unwrap();
        let mut bits = vec![loss.item().to_bits()];
        for v in &vars {
            bits.extend(grads.wrt(*v).unwrap().data().iter().map(|g| g.to_bits()));
        }
        bits
    };
    assert_eq!(run(), run());
}
