use alloc::vec;
use alloc::vec::Vec;

use super::{DenseNetwork, Gradients};
use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    /// Plain gradient descent, `θ ← θ − lr·g`.
    Sgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Per-parameter moments and step counter for one parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    /// Global-norm clipping applied before the update.
    pub max_grad_norm: Option<f64>,
    first: Vec<f64>,
    second: Vec<f64>,
    step: u64,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, learning_rate: f64, n_params: usize) -> Self {
        Self {
            kind,
            learning_rate,
            max_grad_norm: None,
            first: vec![0.0; n_params],
            second: vec![0.0; n_params],
            step: 0,
        }
    }

    pub fn sgd(learning_rate: f64, n_params: usize) -> Self {
        Self::new(OptimizerKind::Sgd, learning_rate, n_params)
    }

    pub fn adam(learning_rate: f64, n_params: usize) -> Self {
        Self::new(OptimizerKind::adam(), learning_rate, n_params)
    }

    pub fn for_network(kind: OptimizerKind, learning_rate: f64, net: &DenseNetwork) -> Self {
        Self::new(kind, learning_rate, net.n_params())
    }

    pub fn with_clip(mut self, max_norm: f64) -> Self {
        self.max_grad_norm = Some(max_norm);
        self
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn n_params(&self) -> usize {
        self.first.len()
    }

    /// Descend along `grads` in place.
    pub fn apply(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        check_len("optimizer parameters", self.first.len(), params.len())?;
        check_len("optimizer gradients", self.first.len(), grads.len())?;
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite { what: "gradients" });
        }
        let mut scale = 1.0;
        if let Some(max_norm) = self.max_grad_norm {
            let norm = libm::sqrt(grads.iter().map(|g| g * g).sum::<f64>());
            if norm > max_norm {
                scale = max_norm / norm;
            }
        }
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    *p -= self.learning_rate * scale * g;
                }
            }
            OptimizerKind::Adam {
                beta1,
                beta2,
                epsilon,
            } => {
                let t = self.step as i32;
                let c1 = 1.0 - libm::pow(beta1, t as f64);
                let c2 = 1.0 - libm::pow(beta2, t as f64);
                for (((p, &g), m), v) in params
                    .iter_mut()
                    .zip(grads)
                    .zip(self.first.iter_mut())
                    .zip(self.second.iter_mut())
                {
                    let g = g * scale;
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *p -= self.learning_rate * m_hat / (libm::sqrt(v_hat) + epsilon);
                }
            }
        }
        Ok(())
    }
}

/// One optimizer step on `net`.
pub fn apply_update(net: &mut DenseNetwork, state: &mut OptimizerState, grads: &Gradients) -> Result<()> {
    if grads.sizes() != net.sizes() {
        return Err(Error::Shape {
            what: "gradient layout",
            expected: net.n_params(),
            found: grads.values.len(),
        });
    }
    state.apply(net.params_mut(), &grads.values)?;
    if !net.all_finite() {
        return Err(Error::NonFinite { what: "parameters" });
    }
    Ok(())
}
