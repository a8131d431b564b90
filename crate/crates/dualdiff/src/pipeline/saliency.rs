use benchsim::{Image, Observation};
use numgraph::{Tape, Tensor};
use serde::{Deserialize, Serialize};

use super::model::PolicyBundle;
use crate::error::{contract, Result};

/// Per-pixel sensitivity of the visual features to each view.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaliencyMaps {
    pub front: Image,
    pub wrist: Image,
}

/// `|∂‖f_v‖² / ∂pixel|`, scaled so each view's maximum is 1. A view with no
/// sensitivity at all yields an all-zero map.
pub fn saliency(policy: &PolicyBundle, obs: &Observation) -> Result<SaliencyMaps> {
    let side = policy.image_size;
    let pixels = side * side;
    if obs.front.pixels.len() != pixels || obs.wrist.pixels.len() != pixels {
        return Err(contract("observation resolution does not match the policy"));
    }
    let tape = Tape::new();
    let front = tape.leaf(Tensor::new(vec![1, pixels], obs.front.pixels.clone())?);
    let wrist = tape.leaf(Tensor::new(vec![1, pixels], obs.wrist.pixels.clone())?);
    let f_v = policy.nets.encoder.encode(&tape, &policy.params, front, wrist)?;
    let grads = tape.backward(f_v.l2sq())?;
    let map = |var| -> Image {
        let raw: Vec<f64> = grads
            .wrt(var)
            .map(|g| g.data().iter().map(|v| v.abs()).collect())
            .unwrap_or_else(|| vec![0.0; pixels]);
        let peak = raw.iter().cloned().fold(0.0, f64::max);
        let pixels = if peak > 0.0 {
            raw.iter().map(|v| v / peak).collect()
        } else {
            raw
        };
        Image {
            width: side,
            height: side,
            pixels,
        }
    };
    Ok(SaliencyMaps {
        front: map(front),
        wrist: map(wrist),
    })
}
