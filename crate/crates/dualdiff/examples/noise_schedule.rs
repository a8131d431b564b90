// Builds the clamped cosine noise schedule and dumps it as CSV.

use dualdiff::diffusion::build_schedule;

/// Returns `ᾱ_K` of the default 30-step schedule.
pub fn run_example() -> f64 {
    let sched = build_schedule(30, 1e-4, 0.02).unwrap();
    let mut csv = Vec::new();
    sched.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    for line in text.lines().take(4) {
        println!("{line}");
    }
    println!("...");
    println!("terminal noise std {:.4}", sched.terminal_noise_std());
    sched.alpha_bar(sched.steps())
}

#[allow(dead_code)]
fn main() {
    println!("alpha_bar_K = {:.4}", run_example());
}
