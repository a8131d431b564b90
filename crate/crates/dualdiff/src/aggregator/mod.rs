//! Test-time loss, overlap pools and per-step selection among overlapping
//! action chunks, followed by Savitzky-Golay smoothing.

pub mod savgol;

use std::io::Write;

use log::warn;
use numgraph::{Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use savgol::{coefficients, coefficients_at, smooth};

use crate::diffusion::{ddpm_loss_at, normal_tensor, Branch, NoisePredictor, NoiseSchedule};
use crate::error::{contract, Error, Result};

/// Floor applied to test-time losses before taking ratios.
pub const LOSS_FLOOR: f64 = 1e-8;

/// A generated chunk, `l × d` row-major, with its provenance and score.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChunkRecord {
    pub actions: Vec<f64>,
    pub chunk_len: usize,
    pub action_dim: usize,
    pub birth_step: usize,
    pub branch: Branch,
    pub test_loss: f64,
}

impl ChunkRecord {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.actions[i * self.action_dim..(i + 1) * self.action_dim]
    }
}

/// Stratified diffusion steps `1 + ⌊m K / M⌋` for `m = 0..M`.
pub fn stratified_steps(total: usize, samples: usize) -> Vec<usize> {
    (0..samples).map(|m| 1 + m * total / samples).collect()
}

/// Test-time losses of several `(conditioning, chunk)` pairs, all scored with
/// the same stratified steps and the same seeded noise so they are directly
/// comparable. Every pair costs `samples` rows of one batched forward pass.
pub fn test_time_losses(
    model: &impl NoisePredictor,
    conds: &[&[f64]],
    chunks: &[&[f64]],
    sched: &NoiseSchedule,
    samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if samples == 0 {
        return Err(contract("test-time loss needs at least one sample"));
    }
    if conds.len() != chunks.len() || conds.is_empty() {
        return Err(contract(format!("{} conditionings for {} chunks", conds.len(), chunks.len())));
    }
    let (c, n) = (conds[0].len(), chunks[0].len());
    let ks = stratified_steps(sched.steps(), samples);
    let eps = normal_tensor(&mut ChaCha8Rng::seed_from_u64(seed), samples, n);
    let pairs = conds.len();
    let rows = pairs * samples;
    let (mut cond_rows, mut a0_rows, mut eps_rows, mut steps) = (
        Vec::with_capacity(rows * c),
        Vec::with_capacity(rows * n),
        Vec::with_capacity(rows * n),
        Vec::with_capacity(rows),
    );
    for (cond, chunk) in conds.iter().zip(chunks) {
        if cond.len() != c || chunk.len() != n {
            return Err(contract("conditionings and chunks must share widths"));
        }
        for (m, &k) in ks.iter().enumerate() {
            cond_rows.extend_from_slice(cond);
            a0_rows.extend_from_slice(chunk);
            eps_rows.extend_from_slice(eps.row(m));
            steps.push(k);
        }
    }
    let tape = Tape::no_grad();
    let cond = tape.constant(Tensor::new(vec![rows, c], cond_rows)?);
    let a0 = Tensor::new(vec![rows, n], a0_rows)?;
    let eps = Tensor::new(vec![rows, n], eps_rows)?;
    let noisy_pred = per_row_errors(model, &tape, cond, &a0, &steps, &eps, sched)?;
    Ok(noisy_pred
        .chunks_exact(samples)
        .map(|errs| errs.iter().sum::<f64>() / samples as f64)
        .collect())
}

/// Mean-squared ε error of every row separately.
fn per_row_errors<'t>(
    model: &impl NoisePredictor,
    tape: &'t Tape,
    cond: numgraph::Var<'t>,
    a0: &Tensor,
    steps: &[usize],
    eps: &Tensor,
    sched: &NoiseSchedule,
) -> Result<Vec<f64>> {
    let n = a0.cols();
    let mut noisy = Vec::with_capacity(a0.len());
    for (r, &k) in steps.iter().enumerate() {
        noisy.extend(crate::diffusion::forward_diffuse(a0.row(r), k, eps.row(r), sched)?);
    }
    let noisy = tape.constant(Tensor::new(vec![steps.len(), n], noisy)?);
    let pred = model.predict(tape, noisy, steps, cond)?.value();
    Ok((0..steps.len())
        .map(|r| {
            pred.row(r)
                .iter()
                .zip(eps.row(r))
                .map(|(p, e)| (p - e) * (p - e))
                .sum::<f64>()
                / n as f64
        })
        .collect())
}

/// Single-chunk test-time loss: the Monte-Carlo estimate of the training
/// loss on a generated chunk.
pub fn test_time_loss(
    model: &impl NoisePredictor,
    cond: &[f64],
    chunk: &[f64],
    sched: &NoiseSchedule,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    Ok(test_time_losses(model, &[cond], &[chunk], sched, samples, seed)?[0])
}

/// Reference value of [`test_time_loss`] built on the differentiable loss
/// path; used to cross-check the batched evaluation.
pub fn test_time_loss_reference(
    model: &impl NoisePredictor,
    cond: &[f64],
    chunk: &[f64],
    sched: &NoiseSchedule,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let ks = stratified_steps(sched.steps(), samples);
    let eps = normal_tensor(&mut ChaCha8Rng::seed_from_u64(seed), samples, chunk.len());
    let mut total = 0.0;
    for (m, &k) in ks.iter().enumerate() {
        let tape = Tape::no_grad();
        let c = tape.constant(Tensor::new(vec![1, cond.len()], cond.to_vec())?);
        let a0 = Tensor::new(vec![1, chunk.len()], chunk.to_vec())?;
        let e = Tensor::new(vec![1, chunk.len()], eps.row(m).to_vec())?;
        total += ddpm_loss_at(model, c, &a0, &[k], &e, sched)?.item();
    }
    Ok(total / samples as f64)
}

/// `w_i = η^i / Σ_j η^j` for `i = 0..l`.
pub fn temporal_weights(len: usize, eta: f64) -> Result<Vec<f64>> {
    if len == 0 || !(eta > 0.0) {
        return Err(contract(format!("temporal weights need l >= 1 and eta > 0, got {len}, {eta}")));
    }
    let raw: Vec<f64> = (0..len).map(|i| eta.powi(i as i32)).collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// One candidate action for a target step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub action: Vec<f64>,
    pub branch: Branch,
    pub birth_step: usize,
    pub offset: usize,
    pub test_loss: f64,
}

/// Candidates for the target steps `start..start + h`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlapPool {
    pub start: usize,
    pub steps: Vec<Vec<Candidate>>,
    pub temporal: Vec<f64>,
}

/// Collects, for each target step `t..t+h`, every record whose span covers
/// it. Records that can no longer cover `t` are evicted from `history`.
pub fn build_pool(history: &mut Vec<ChunkRecord>, t: usize, horizon: usize, eta: f64) -> Result<OverlapPool> {
    if horizon == 0 {
        return Err(contract("horizon must be at least 1"));
    }
    if let Some(r) = history.iter().find(|r| r.birth_step > t) {
        return Err(contract(format!("record born at {} is newer than step {t}", r.birth_step)));
    }
    history.retain(|r| r.birth_step + r.chunk_len > t);
    let len = history.iter().map(|r| r.chunk_len).max().unwrap_or(1);
    let temporal = temporal_weights(len, eta)?;
    let mut steps = Vec::with_capacity(horizon);
    for target in t..t + horizon {
        let cands: Vec<Candidate> = history
            .iter()
            .filter(|r| target - r.birth_step < r.chunk_len)
            .map(|r| {
                let offset = target - r.birth_step;
                Candidate {
                    action: r.row(offset).to_vec(),
                    branch: r.branch,
                    birth_step: r.birth_step,
                    offset,
                    test_loss: r.test_loss,
                }
            })
            .collect();
        if cands.is_empty() {
            return Err(contract(format!("no chunk covers step {target}")));
        }
        steps.push(cands);
    }
    Ok(OverlapPool { start: t, steps, temporal })
}

/// Normalized confidences `(1/e_i) / Σ_j (1/e_j)`, which equals the
/// normalized `(Σe)/e_i` ratios for any common Σe.
pub fn confidences(losses: &[f64]) -> Vec<f64> {
    let inv: Vec<f64> = losses.iter().map(|e| 1.0 / e.max(LOSS_FLOOR)).collect();
    let total: f64 = inv.iter().sum();
    inv.into_iter().map(|v| v / total).collect()
}

/// Scores of every candidate at one step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepScores {
    pub confidence: Vec<f64>,
    pub weight: Vec<f64>,
    pub selected: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregation {
    /// Selected action row per target step.
    pub actions: Vec<Vec<f64>>,
    pub scores: Vec<StepScores>,
}

/// Ordering used to break exact ties: newer birth first, then fused.
fn preferred(a: &Candidate, b: &Candidate) -> bool {
    (a.birth_step, a.branch == Branch::Fused) > (b.birth_step, b.branch == Branch::Fused)
}

/// Per target step, selects the candidate with the largest
/// `temporal weight × normalized confidence`.
pub fn aggregate(pool: &OverlapPool) -> Result<Aggregation> {
    let mut actions = Vec::with_capacity(pool.steps.len());
    let mut scores = Vec::with_capacity(pool.steps.len());
    for (s, cands) in pool.steps.iter().enumerate() {
        if cands.is_empty() {
            return Err(contract(format!("empty pool at step {}", pool.start + s)));
        }
        if let Some(c) = cands.iter().find(|c| !(c.test_loss >= 0.0 && c.test_loss.is_finite())) {
            return Err(Error::Numerical(format!("invalid test-time loss {}", c.test_loss)));
        }
        let losses: Vec<f64> = cands.iter().map(|c| c.test_loss).collect();
        let confidence = confidences(&losses);
        let weight: Vec<f64> = cands
            .iter()
            .zip(&confidence)
            .map(|(c, conf)| pool.temporal[c.offset] * conf)
            .collect();
        let mut best: Option<usize> = None;
        for (i, w) in weight.iter().enumerate() {
            best = match best {
                None => Some(i),
                Some(b) if *w > weight[b] || (*w == weight[b] && preferred(&cands[i], &cands[b])) => Some(i),
                keep => keep,
            };
        }
        let mut selected = best.expect("non-empty");
        if weight.iter().all(|w| *w <= 0.0) {
            warn!("all aggregation weights vanish at step {}; using the newest fused chunk", pool.start + s);
            selected = (0..cands.len())
                .max_by(|&a, &b| {
                    let key = |c: &Candidate| (c.branch == Branch::Fused, c.birth_step);
                    key(&cands[a]).cmp(&key(&cands[b]))
                })
                .expect("non-empty");
        }
        actions.push(cands[selected].action.clone());
        scores.push(StepScores {
            confidence,
            weight,
            selected,
        });
    }
    Ok(Aggregation { actions, scores })
}

/// One row of the aggregation trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregationRow {
    pub t: usize,
    pub branch: Branch,
    pub birth_step: usize,
    pub offset: usize,
    pub e: f64,
    pub w_i: f64,
    pub confidence: f64,
    pub omega: f64,
    pub selected: u8,
}

/// Flattens a pool and its aggregation into trace rows, one per candidate.
pub fn trace_rows(pool: &OverlapPool, agg: &Aggregation) -> Vec<AggregationRow> {
    let mut rows = Vec::new();
    for (s, (cands, sc)) in pool.steps.iter().zip(&agg.scores).enumerate() {
        for (i, c) in cands.iter().enumerate() {
            rows.push(AggregationRow {
                t: pool.start + s,
                branch: c.branch,
                birth_step: c.birth_step,
                offset: c.offset,
                e: c.test_loss,
                w_i: pool.temporal[c.offset],
                confidence: sc.confidence[i],
                omega: sc.weight[i],
                selected: u8::from(i == sc.selected),
            });
        }
    }
    rows
}

pub fn write_trace_csv<W: Write>(rows: &[AggregationRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
