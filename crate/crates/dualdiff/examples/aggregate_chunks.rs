// Pools overlapping chunks from three rounds and selects one action per
// step by temporal weight times test-time-loss confidence.

use dualdiff::aggregator::{aggregate, build_pool, trace_rows, write_trace_csv, ChunkRecord};
use dualdiff::diffusion::Branch;

fn chunk(birth: usize, branch: Branch, loss: f64, level: f64) -> ChunkRecord {
    ChunkRecord {
        actions: (0..8).map(|i| level + 0.01 * i as f64).collect(),
        chunk_len: 8,
        action_dim: 1,
        birth_step: birth,
        branch,
        test_loss: loss,
    }
}

/// Returns the selected actions of the newest round.
pub fn run_example() -> Vec<f64> {
    let (h, eta) = (4, 0.97);
    let mut history = Vec::new();
    let mut last = None;
    for (round, losses) in [[0.30, 0.10], [0.05, 0.40], [0.20, 0.20]].into_iter().enumerate() {
        let t = round * h;
        history.push(chunk(t, Branch::Visual, losses[0], round as f64));
        history.push(chunk(t, Branch::Fused, losses[1], 10.0 + round as f64));
        let pool = build_pool(&mut history, t, h, eta).unwrap();
        let agg = aggregate(&pool).unwrap();
        last = Some((pool, agg));
    }
    let (pool, agg) = last.unwrap();
    let mut csv = Vec::new();
    write_trace_csv(&trace_rows(&pool, &agg), &mut csv).unwrap();
    print!("{}", String::from_utf8(csv).unwrap());
    agg.actions.into_iter().map(|a| a[0]).collect()
}

#[allow(dead_code)]
fn main() {
    println!("selected {:?}", run_example());
}
