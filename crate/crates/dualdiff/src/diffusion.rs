//! DDPM machinery: noise schedule, forward corruption, the conditional
//! ε-prediction loss with branch switching, and the deterministic reverse
//! process.
//!
//! Chunks travel as rows of a `[batch, l·d]` tensor; step indices are
//! 1-based, `k ∈ 1..=K`.

use std::io::Write;

use numgraph::{Linear, ParamStore, Tape, Tensor, Var};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};

/// Offset of the squared-cosine profile.
pub const COSINE_OFFSET: f64 = 0.008;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

fn cosine_profile(k: f64, steps: f64) -> f64 {
    let s = COSINE_OFFSET;
    (((k / steps) + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2).cos().powi(2)
}

/// Squared-cosine schedule with every implied β clamped to
/// `[beta_min, beta_max]`; ᾱ is recomputed as the running product of the
/// clamped values.
pub fn build_schedule(steps: usize, beta_min: f64, beta_max: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(contract("diffusion step count must be at least 1"));
    }
    if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
        return Err(contract(format!(
            "beta range [{beta_min}, {beta_max}] must satisfy 0 < min <= max < 1"
        )));
    }
    let k_total = steps as f64;
    let f0 = cosine_profile(0.0, k_total);
    let betas = (1..=steps)
        .map(|k| {
            let prev = cosine_profile((k - 1) as f64, k_total) / f0;
            let cur = cosine_profile(k as f64, k_total) / f0;
            (1.0 - cur / prev).clamp(beta_min, beta_max)
        })
        .collect();
    NoiseSchedule::from_betas(betas)
}

impl NoiseSchedule {
    /// Schedule from explicit per-step variances.
    pub fn from_betas(beta: Vec<f64>) -> Result<Self> {
        if beta.is_empty() {
            return Err(contract("schedule needs at least one step"));
        }
        if let Some(b) = beta.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(contract(format!("beta {b} outside (0, 1)")));
        }
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let alpha_bar = alpha
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(Self {
            beta,
            alpha,
            alpha_bar,
        })
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    fn check(&self, k: usize) -> Result<usize> {
        if k == 0 || k > self.steps() {
            return Err(contract(format!("step {k} outside 1..={}", self.steps())));
        }
        Ok(k - 1)
    }

    pub fn beta(&self, k: usize) -> f64 {
        self.beta[k - 1]
    }

    pub fn alpha(&self, k: usize) -> f64 {
        self.alpha[k - 1]
    }

    pub fn alpha_bar(&self, k: usize) -> f64 {
        self.alpha_bar[k - 1]
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alpha
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// Standard deviation of the noise component at the last step. The
    /// reverse process starts from `N(0, σ_K² I)`.
    pub fn terminal_noise_std(&self) -> f64 {
        (1.0 - self.alpha_bar[self.steps() - 1]).sqrt()
    }

    /// CSV with columns `k, beta, alpha, alpha_bar`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["k", "beta", "alpha", "alpha_bar"])?;
        for k in 1..=self.steps() {
            w.write_record([
                k.to_string(),
                format!("{:e}", self.beta(k)),
                format!("{:e}", self.alpha(k)),
                format!("{:e}", self.alpha_bar(k)),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `√ᾱ·a0 + √(1−ᾱ)·eps` for an explicit ᾱ.
pub fn diffuse_with(a0: &[f64], eps: &[f64], alpha_bar: f64) -> Vec<f64> {
    let (s, n) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    a0.iter().zip(eps).map(|(a, e)| s * a + n * e).collect()
}

/// Forward corruption of a clean chunk to step `k`.
pub fn forward_diffuse(a0: &[f64], k: usize, eps: &[f64], sched: &NoiseSchedule) -> Result<Vec<f64>> {
    let i = sched.check(k)?;
    if a0.len() != eps.len() {
        return Err(contract(format!(
            "noise length {} does not match chunk length {}",
            eps.len(),
            a0.len()
        )));
    }
    Ok(diffuse_with(a0, eps, sched.alpha_bar[i]))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Visual,
    Fused,
}

impl Branch {
    pub fn as_str(self) -> &'static str {
        match self {
            Branch::Visual => "visual",
            Branch::Fused => "fused",
        }
    }
}

impl std::fmt::Display for Branch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Bernoulli draw choosing the visual branch with probability `p`.
/// Consumes exactly one value from `rng`.
pub fn switch_draw<R: Rng + ?Sized>(p: f64, rng: &mut R) -> Branch {
    let u: f64 = rng.random();
    if u < p {
        Branch::Visual
    } else {
        Branch::Fused
    }
}

/// Picks `f_u` with probability `p`, otherwise `f_f`.
pub fn switch_select<'t, R: Rng + ?Sized>(
    f_u: Var<'t>,
    f_f: Var<'t>,
    p: f64,
    rng: &mut R,
) -> (Var<'t>, Branch) {
    match switch_draw(p, rng) {
        Branch::Visual => (f_u, Branch::Visual),
        Branch::Fused => (f_f, Branch::Fused),
    }
}

/// Row-wise selection between two `[batch, c]` conditioning matrices.
pub fn select_rows<'t>(f_u: Var<'t>, f_f: Var<'t>, branches: &[Branch]) -> Result<Var<'t>> {
    let shape = f_u.shape();
    if shape.len() != 2 || shape[0] != branches.len() || f_f.shape() != shape {
        return Err(contract(format!(
            "cannot select {} rows from {:?} and {:?}",
            branches.len(),
            shape,
            f_f.shape()
        )));
    }
    let c = shape[1];
    let mut mask = Vec::with_capacity(branches.len() * c);
    for b in branches {
        let m = if *b == Branch::Visual { 1.0 } else { 0.0 };
        mask.extend(std::iter::repeat_n(m, c));
    }
    let tape = f_u.tape();
    let keep_u = tape.constant(Tensor::new(shape.clone(), mask.clone())?);
    let keep_f = tape.constant(Tensor::new(shape, mask.iter().map(|m| 1.0 - m).collect())?);
    Ok(f_u.mul(keep_u)?.add(f_f.mul(keep_f)?)?)
}

/// Anything that predicts the injected noise of a corrupted chunk batch.
pub trait NoisePredictor {
    /// `noisy` is `[batch, l·d]`, `cond` is `[batch, c]`, `steps` holds one
    /// 1-based diffusion step per row.
    fn predict<'t>(&self, tape: &'t Tape, noisy: Var<'t>, steps: &[usize], cond: Var<'t>) -> Result<Var<'t>>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub chunk_len: usize,
    pub action_dim: usize,
    pub cond_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub step_embed: usize,
}

impl DenoiserConfig {
    pub fn chunk_size(&self) -> usize {
        self.chunk_len * self.action_dim
    }
}

/// Conditional ε-predictor: an MLP whose every hidden layer sees the
/// sinusoidal step embedding and the conditioning vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Denoiser {
    pub config: DenoiserConfig,
    hidden: Vec<Linear>,
    output: Linear,
}

/// Sinusoidal code of a diffusion step, `[sin(k ω_i), cos(k ω_i)]`.
pub fn step_embedding(k: usize, width: usize) -> Vec<f64> {
    let half = width / 2;
    let mut out = vec![0.0; width];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        let phase = k as f64 * freq;
        out[i] = phase.sin();
        out[half + i] = phase.cos();
    }
    out
}

impl Denoiser {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, config: DenoiserConfig, rng: &mut R) -> Self {
        let side = config.step_embed + config.cond_dim;
        let mut hidden = Vec::with_capacity(config.layers);
        let mut width = config.chunk_size();
        for i in 0..config.layers {
            hidden.push(Linear::new(store, &format!("{name}.hidden{i}"), width + side, config.hidden, rng));
            width = config.hidden;
        }
        let output = Linear::new(store, &format!("{name}.out"), width, config.chunk_size(), rng);
        Self { config, hidden, output }
    }

    /// Binds the network to a parameter store for prediction.
    pub fn bind<'a>(&'a self, params: &'a ParamStore) -> BoundDenoiser<'a> {
        BoundDenoiser { net: self, params }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundDenoiser<'a> {
    pub net: &'a Denoiser,
    pub params: &'a ParamStore,
}

impl NoisePredictor for BoundDenoiser<'_> {
    fn predict<'t>(&self, tape: &'t Tape, noisy: Var<'t>, steps: &[usize], cond: Var<'t>) -> Result<Var<'t>> {
        let cfg = &self.net.config;
        let batch = steps.len();
        if noisy.shape() != [batch, cfg.chunk_size()] || cond.shape() != [batch, cfg.cond_dim] {
            return Err(contract(format!(
                "denoiser expects [{batch}, {}] chunks and [{batch}, {}] conditioning, got {:?} and {:?}",
                cfg.chunk_size(),
                cfg.cond_dim,
                noisy.shape(),
                cond.shape()
            )));
        }
        let mut emb = Vec::with_capacity(batch * cfg.step_embed);
        for &k in steps {
            emb.extend(step_embedding(k, cfg.step_embed));
        }
        let emb = tape.constant(Tensor::new(vec![batch, cfg.step_embed], emb)?);
        let side = emb.concat(cond, 1)?;
        let mut h = noisy;
        for layer in &self.net.hidden {
            h = layer.forward(tape, self.params, h.concat(side, 1)?)?.relu();
        }
        Ok(self.net.output.forward(tape, self.params, h)?)
    }
}

/// Standard-normal matrix drawn row-major from `rng`.
pub fn normal_tensor<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::new(vec![rows, cols], data).expect("positive extents")
}

/// Mean-squared ε-prediction error at explicit steps and noise.
pub fn ddpm_loss_at<'t>(
    model: &impl NoisePredictor,
    cond: Var<'t>,
    a0: &Tensor,
    steps: &[usize],
    eps: &Tensor,
    sched: &NoiseSchedule,
) -> Result<Var<'t>> {
    let tape = cond.tape();
    if a0.shape() != eps.shape() || a0.rank() != 2 || a0.rows() != steps.len() {
        return Err(contract(format!(
            "chunks {:?}, noise {:?} and {} steps disagree",
            a0.shape(),
            eps.shape(),
            steps.len()
        )));
    }
    let n = a0.cols();
    let mut noisy = Vec::with_capacity(a0.len());
    for (r, &k) in steps.iter().enumerate() {
        noisy.extend(forward_diffuse(a0.row(r), k, eps.row(r), sched)?);
    }
    let noisy = tape.constant(Tensor::new(vec![steps.len(), n], noisy)?);
    let predicted = model.predict(tape, noisy, steps, cond)?;
    Ok(predicted.mse(tape.constant(eps.clone()))?)
}

/// Training loss: per row a uniform step in `1..=K` and fresh standard
/// normal noise, then the mean-squared error between noise and prediction.
pub fn ddpm_loss<'t, R: Rng + ?Sized>(
    model: &impl NoisePredictor,
    cond: Var<'t>,
    a0: &Tensor,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<Var<'t>> {
    if !a0.is_finite() {
        return Err(Error::Numerical("non-finite clean chunk".into()));
    }
    let rows = a0.rows();
    let steps: Vec<usize> = (0..rows).map(|_| rng.random_range(1..=sched.steps())).collect();
    let eps = normal_tensor(rng, rows, a0.cols());
    ddpm_loss_at(model, cond, a0, &steps, &eps, sched)
}

/// Deterministic reverse process: from `init` at step K down to step 1,
/// `a ← (a − β_k/√(1−ᾱ_k) · ε̂) / √α_k`, with no injected noise.
pub fn denoise_chunk(model: &impl NoisePredictor, cond: &Tensor, sched: &NoiseSchedule, init: &Tensor) -> Result<Tensor> {
    if init.rank() != 2 || cond.rank() != 2 || cond.rows() != init.rows() {
        return Err(contract(format!(
            "init {:?} and conditioning {:?} disagree",
            init.shape(),
            cond.shape()
        )));
    }
    let rows = init.rows();
    let mut a = init.clone();
    for k in (1..=sched.steps()).rev() {
        let tape = Tape::no_grad();
        let eps = model
            .predict(&tape, tape.constant(a.clone()), &vec![k; rows], tape.constant(cond.clone()))?
            .value();
        let coef = sched.beta(k) / (1.0 - sched.alpha_bar(k)).sqrt();
        let inv = 1.0 / sched.alpha(k).sqrt();
        for (x, e) in a.data_mut().iter_mut().zip(eps.data()) {
            *x = (*x - coef * e) * inv;
        }
        if !a.is_finite() {
            return Err(Error::Numerical(format!("reverse process produced non-finite values at step {k}")));
        }
    }
    Ok(a)
}
