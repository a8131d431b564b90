//! Visual encoder, proprioceptive fusion, latent action policy and the Deep
//! Koopman constraint on visual features.

mod augment;

use std::io::Write;

pub use augment::{augment, AugmentConfig, AugmentParams};

use numgraph::{Linear, ParamId, ParamStore, Tape, Tensor, Var};
use rand::Rng;

use crate::error::{contract, Result};

/// Two-view dense encoder: per view `flatten → 256 → 128` with relu, then the
/// concatenation is projected to the latent width.
#[derive(Clone, Debug, PartialEq)]
pub struct VisualEncoder {
    pub pixels: usize,
    views: [[Linear; 2]; 2],
    proj: Linear,
}

impl VisualEncoder {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, pixels: usize, latent: usize, rng: &mut R) -> Self {
        let mut view = |name: &str, rng: &mut R| {
            [
                Linear::new(store, &format!("encoder.{name}.0"), pixels, 256, rng),
                Linear::new(store, &format!("encoder.{name}.1"), 256, 128, rng),
            ]
        };
        let front = view("front", rng);
        let wrist = view("wrist", rng);
        let proj = Linear::new(store, "encoder.proj", 256, latent, rng);
        Self {
            pixels,
            views: [front, wrist],
            proj,
        }
    }

    /// `front` and `wrist` are `[batch, H·W]`; returns `f_v` of shape `[batch, latent]`.
    pub fn encode<'t>(&self, tape: &'t Tape, store: &ParamStore, front: Var<'t>, wrist: Var<'t>) -> Result<Var<'t>> {
        let mut feats = Vec::with_capacity(2);
        for (layers, img) in self.views.iter().zip([front, wrist]) {
            let shape = img.shape();
            if shape.len() != 2 || shape[1] != self.pixels {
                return Err(contract(format!(
                    "encoder expects [batch, {}] images, got {shape:?}",
                    self.pixels
                )));
            }
            let h = layers[0].forward(tape, store, img)?.relu();
            feats.push(layers[1].forward(tape, store, h)?.relu());
        }
        Ok(self.proj.forward(tape, store, feats[0].concat(feats[1], 1)?)?)
    }
}

/// Channel attention over the visual feature and the lifted proprioception.
#[derive(Clone, Debug, PartialEq)]
pub struct Fusion {
    pub latent: usize,
    lift: Linear,
    squeeze: Linear,
    excite: Linear,
    proj: Linear,
}

/// Fused representation plus the two channel gates, `[batch, 2]`.
pub struct Fused<'t> {
    pub f_f: Var<'t>,
    pub gates: Var<'t>,
}

impl Fusion {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, proprio: usize, latent: usize, rng: &mut R) -> Self {
        Self {
            latent,
            lift: Linear::new(store, "fusion.lift", proprio, latent, rng),
            squeeze: Linear::new(store, "fusion.squeeze", 2, 8, rng),
            excite: Linear::new(store, "fusion.excite", 8, 2, rng),
            proj: Linear::new(store, "fusion.proj", latent, latent, rng),
        }
    }

    /// `visual_gate` overrides the learned visual gate with a constant.
    pub fn fuse<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        f_v: Var<'t>,
        q: Var<'t>,
        visual_gate: Option<f64>,
    ) -> Result<Fused<'t>> {
        let c = self.latent;
        let q_lift = self.lift.forward(tape, store, q)?;
        let mean_col = tape.constant(Tensor::full(vec![c, 1], 1.0 / c as f64));
        // A pinned visual gate also blanks the visual descriptor, so the
        // remaining gate and f_f no longer see the images at all.
        let visual_desc = match visual_gate {
            Some(_) => tape.constant(Tensor::zeros(vec![f_v.shape()[0], 1])),
            None => f_v.matmul(mean_col)?,
        };
        let squeezed = visual_desc.concat(q_lift.matmul(mean_col)?, 1)?;
        let hidden = self.squeeze.forward(tape, store, squeezed)?.relu();
        let mut gates = self.excite.forward(tape, store, hidden)?.sigmoid();
        if let Some(g) = visual_gate {
            let rows = gates.shape()[0];
            let fixed = tape.constant(Tensor::full(vec![rows, 1], g));
            gates = fixed.concat(gates.slice(1..2, 1)?, 1)?;
        }
        let spread = tape.constant(Tensor::full(vec![1, c], 1.0));
        let g_v = gates.slice(0..1, 1)?.matmul(spread)?;
        let g_q = gates.slice(1..2, 1)?.matmul(spread)?;
        let mixed = g_v.mul(f_v)?.add(g_q.mul(q_lift)?)?;
        Ok(Fused {
            f_f: self.proj.forward(tape, store, mixed)?,
            gates,
        })
    }
}

/// Residual MLP mapping `f_v` to the latent action `f_u`. The second layer of
/// each block starts at zero, so at initialization `f_u` is the stem output.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentPolicy {
    stem: Linear,
    blocks: Vec<[Linear; 2]>,
}

impl LatentPolicy {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, latent: usize, blocks: usize, rng: &mut R) -> Self {
        let stem = Linear::new(store, "latent.stem", latent, latent, rng);
        let blocks = (0..blocks)
            .map(|i| {
                [
                    Linear::new(store, &format!("latent.block{i}.0"), latent, latent, rng),
                    Linear::zeros(store, &format!("latent.block{i}.1"), latent, latent),
                ]
            })
            .collect();
        Self { stem, blocks }
    }

    pub fn stem(&self) -> &Linear {
        &self.stem
    }

    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, f_v: Var<'t>) -> Result<Var<'t>> {
        let mut x = self.stem.forward(tape, store, f_v)?;
        for [a, b] in &self.blocks {
            let h = a.forward(tape, store, x)?.relu();
            x = x.add(b.forward(tape, store, h)?)?;
        }
        Ok(x)
    }
}

/// State-evolution operator `K` and control operator `V`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KoopmanParams {
    pub k_op: ParamId,
    pub v_op: ParamId,
    pub latent: usize,
}

impl KoopmanParams {
    /// `K` starts at the identity, `V` at small uniform values.
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, latent: usize, rng: &mut R) -> Self {
        let k_op = store.add("koopman.K", Tensor::eye(latent));
        let bound = 0.1 / (latent as f64).sqrt();
        let v = (0..latent * latent).map(|_| rng.random_range(-bound..=bound)).collect();
        let v_op = store.add("koopman.V", Tensor::new(vec![latent, latent], v).expect("square"));
        Self { k_op, v_op, latent }
    }

    /// Writes `K` then `V` as CSV, one matrix row per line, with a leading
    /// `matrix,row` pair of columns.
    pub fn write_csv<W: Write>(&self, store: &ParamStore, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["matrix".to_string(), "row".to_string()];
        header.extend((0..self.latent).map(|j| format!("c{j}")));
        w.write_record(&header)?;
        for (name, id) in [("K", self.k_op), ("V", self.v_op)] {
            let m = store.get(id);
            for r in 0..m.rows() {
                let mut rec = vec![name.to_string(), r.to_string()];
                rec.extend(m.row(r).iter().map(|v| format!("{v:e}")));
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// One-step latent prediction `K f_v + V f_u`, row form over a batch.
pub fn dko_predict<'t>(f_v: Var<'t>, f_u: Var<'t>, k_op: Var<'t>, v_op: Var<'t>) -> Result<Var<'t>> {
    Ok(f_v.matmul(k_op.transpose()?)?.add(f_u.matmul(v_op.transpose()?)?)?)
}

/// `‖K‖²_F + ‖V‖²_F`.
pub fn reg_loss<'t>(tape: &'t Tape, store: &ParamStore, kp: &KoopmanParams) -> Var<'t> {
    tape.param(store, kp.k_op).l2sq().add(tape.param(store, kp.v_op).l2sq()).expect("scalars")
}

/// Images of one batch: clean and augmented, current and future frames.
/// Each entry is a `(front, wrist)` pair of `[batch, H·W]` tensors.
pub struct DkoBatch {
    pub current: (Tensor, Tensor),
    pub future: (Tensor, Tensor),
    pub current_aug: (Tensor, Tensor),
    pub future_aug: (Tensor, Tensor),
}

/// The modules the Koopman constraint touches.
#[derive(Clone, Copy)]
pub struct DkoModules<'a> {
    pub encoder: &'a VisualEncoder,
    pub latent: &'a LatentPolicy,
    pub koopman: &'a KoopmanParams,
    pub params: &'a ParamStore,
}

/// Both loss terms plus the clean current-frame features, which the caller
/// reuses for the diffusion conditioning.
pub struct DkoTerms<'t> {
    pub term1: Var<'t>,
    pub term2: Var<'t>,
    pub f_v: Var<'t>,
}

/// Image inputs of the Koopman terms as graph nodes, each a `(front, wrist)` pair.
#[derive(Clone, Copy)]
pub struct DkoInputs<'t> {
    pub current: (Var<'t>, Var<'t>),
    pub future: (Var<'t>, Var<'t>),
    pub current_aug: (Var<'t>, Var<'t>),
    pub future_aug: (Var<'t>, Var<'t>),
}

impl DkoBatch {
    /// Places the images on `tape` as constants.
    pub fn inputs<'t>(&self, tape: &'t Tape) -> DkoInputs<'t> {
        let pair = |p: &(Tensor, Tensor)| (tape.constant(p.0.clone()), tape.constant(p.1.clone()));
        DkoInputs {
            current: pair(&self.current),
            future: pair(&self.future),
            current_aug: pair(&self.current_aug),
            future_aug: pair(&self.future_aug),
        }
    }
}

/// Term 1 predicts the clean future feature from the stop-gradient clean
/// current feature, so only `K`, `V`, the latent policy and the future-frame
/// encoder path learn from it. Term 2 predicts the augmented future feature
/// from the augmented current feature with `K` and `V f_u` frozen, so it
/// trains the encoder alone.
pub fn dko_terms<'t>(tape: &'t Tape, m: &DkoModules<'_>, batch: &DkoBatch) -> Result<DkoTerms<'t>> {
    dko_terms_on(tape, m, batch.inputs(tape))
}

/// [`dko_terms`] over images that are already graph nodes.
pub fn dko_terms_on<'t>(tape: &'t Tape, m: &DkoModules<'_>, x: DkoInputs<'t>) -> Result<DkoTerms<'t>> {
    let k_op = tape.param(m.params, m.koopman.k_op);
    let v_op = tape.param(m.params, m.koopman.v_op);
    let encode = |(front, wrist): (Var<'t>, Var<'t>)| m.encoder.encode(tape, m.params, front, wrist);

    let f_v = encode(x.current)?;
    let f_v_next = encode(x.future)?;
    let f_v_frozen = f_v.stop_gradient();
    let f_u = m.latent.forward(tape, m.params, f_v_frozen)?;
    let pred1 = dko_predict(f_v_frozen, f_u, k_op, v_op)?;
    let term1 = pred1.mse(f_v_next)?;

    let f_v_aug = encode(x.current_aug)?;
    let f_v_aug_next = encode(x.future_aug)?;
    let control = f_u.matmul(v_op.transpose()?)?.stop_gradient();
    let pred2 = f_v_aug.matmul(k_op.stop_gradient().transpose()?)?.add(control)?;
    let term2 = pred2.mse(f_v_aug_next)?;

    Ok(DkoTerms { term1, term2, f_v })
}

/// `μ·term1 + (1−μ)·term2`.
pub fn combine_terms<'t>(term1: Var<'t>, term2: Var<'t>, mu: f64) -> Var<'t> {
    term1.scale(mu).add(term2.scale(1.0 - mu)).expect("scalars")
}

pub fn dko_loss<'t>(tape: &'t Tape, m: &DkoModules<'_>, batch: &DkoBatch, mu: f64) -> Result<Var<'t>> {
    if !(0.0..=1.0).contains(&mu) {
        return Err(contract(format!("mu {mu} outside [0, 1]")));
    }
    let terms = dko_terms(tape, m, batch)?;
    Ok(combine_terms(terms.term1, terms.term2, mu))
}
