use rand::Rng;

use crate::error::Result;
use crate::params::{uniform_fan_in, ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Dense affine layer `y = x W + b` over row-major batches.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        outputs: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            uniform_fan_in(rng, inputs, &[inputs, outputs]),
        );
        let bias = store.add(format!("{name}.bias"), uniform_fan_in(rng, inputs, &[outputs]));
        Self {
            weight,
            bias,
            inputs,
            outputs,
        }
    }

    /// Layer whose weight and bias start at exactly zero.
    pub fn zeros(store: &mut ParamStore, name: &str, inputs: usize, outputs: usize) -> Self {
        let weight = store.add(format!("{name}.weight"), Tensor::zeros(vec![inputs, outputs]));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(vec![outputs]));
        Self {
            weight,
            bias,
            inputs,
            outputs,
        }
    }

    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>) -> Result<Var<'t>> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        x.matmul(w)?.add(b)
    }
}
