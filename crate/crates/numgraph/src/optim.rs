use serde::{Deserialize, Serialize};

use crate::error::{NumError, Result};
use crate::params::ParamStore;
use crate::tape::Gradients;
use crate::tensor::Tensor;

/// Hyper-parameters of the adaptive-moment update.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter first/second moment buffers plus the step counter.
#[derive(Clone, Debug)]
pub struct OptimState {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl OptimState {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let zeros = || params.iter().map(|(_, _, t)| Tensor::zeros(t.shape().to_vec())).collect();
        Self {
            config,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one bias-corrected Adam update. Parameters absent from `grads`
    /// are treated as having zero gradient.
    ///
    /// Every gradient is checked before anything is written, so a non-finite
    /// entry leaves parameters and moments untouched.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) -> Result<()> {
        if self.first.len() != params.len() {
            return Err(NumError::Contract(format!(
                "optimizer tracks {} parameters but store has {}",
                self.first.len(),
                params.len()
            )));
        }
        for id in params.ids() {
            if let Some(g) = grads.param(id) {
                if g.shape() != params.get(id).shape() {
                    return Err(NumError::Shape {
                        op: "optim_step",
                        lhs: params.get(id).shape().to_vec(),
                        rhs: g.shape().to_vec(),
                    });
                }
                if !g.is_finite() {
                    return Err(NumError::NonFiniteGradient(params.name(id).to_string()));
                }
            }
        }

        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let bias1 = 1.0 - beta1.powi(t);
        let bias2 = 1.0 - beta2.powi(t);
        for id in params.ids() {
            let i = id.index();
            let grad = grads.param(id);
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            let p = params.get_mut(id).data_mut();
            for j in 0..p.len() {
                let g = grad.map_or(0.0, |g| g.data()[j]);
                m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
                let m_hat = m[j] / bias1;
                let v_hat = v[j] / bias2;
                p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tape;

    fn scalar_store(v: f64) -> (ParamStore, crate::ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::scalar(v));
        (s, id)
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let (mut store, w) = scalar_store(1.0);
        let mut opt = OptimState::new(AdamConfig { lr: 0.1, ..Default::default() }, &store);
        let tape = Tape::new();
        // d/dw of w is 1
        let loss = tape.param(&store, w).sum();
        let grads = tape.backward(loss).unwrap();
        drop(tape);
        opt.step(&mut store, &grads).unwrap();
        let moved = 1.0 - store.get(w).item();
        assert!((moved - 0.1).abs() < 1e-8, "moved {moved}");
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let (mut store, w) = scalar_store(0.7);
        let mut opt = OptimState::new(AdamConfig::default(), &store);
        opt.step(&mut store, &Gradients::default()).unwrap();
        assert_eq!(store.get(w).item(), 0.7);
        assert_eq!(opt.steps_taken(), 1);
    }

    #[test]
    fn non_finite_gradient_is_rejected_with_name() {
        let (mut store, w) = scalar_store(0.7);
        let mut opt = OptimState::new(AdamConfig::default(), &store);
        let tape = Tape::new();
        let loss = tape.param(&store, w).scale(f64::NAN).sum();
        let grads = tape.backward(loss).unwrap();
        drop(tape);
        let err = opt.step(&mut store, &grads).unwrap_err();
        assert!(err.to_string().contains("`w`"));
        assert_eq!(store.get(w).item(), 0.7);
        assert_eq!(opt.steps_taken(), 0);
    }
}
