// Savitzky-Golay smoothing of a jittery joint command sequence.

use dualdiff::aggregator::savgol;

/// Returns the residual standard deviation before and after smoothing.
pub fn run_example() -> (f64, f64) {
    let clean: Vec<f64> = (0..32).map(|i| 0.5 * (i as f64 * 0.15).sin()).collect();
    let noisy: Vec<f64> = clean
        .iter()
        .enumerate()
        .map(|(i, v)| v + if i % 2 == 0 { 0.03 } else { -0.03 })
        .collect();
    let smoothed = savgol::smooth(&noisy, noisy.len(), 1, 7, 3).unwrap();
    println!("window 7, order 3 coefficients {:?}", savgol::coefficients(7, 3).unwrap());
    let rms = |x: &[f64]| (x.iter().zip(&clean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64).sqrt();
    (rms(&noisy), rms(&smoothed))
}

#[allow(dead_code)]
fn main() {
    let (before, after) = run_example();
    println!("rms error {before:.4} -> {after:.4}");
}
