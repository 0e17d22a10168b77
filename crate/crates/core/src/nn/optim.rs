use std::f64::consts::PI;

use ndarray::Array1;

use super::mlp::{Mlp, MlpGrads};
use crate::error::{GllError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Sgd { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrSchedule {
    Constant,
    /// Multiply by `factor` every `every` epochs.
    Step { every: usize, factor: f64 },
    /// Cosine annealing to zero over `total` epochs.
    Cosine { total: usize },
}

impl LrSchedule {
    pub fn rate(&self, base: f64, epoch: usize) -> f64 {
        match *self {
            LrSchedule::Constant => base,
            LrSchedule::Step { every, factor } => base * factor.powi((epoch / every.max(1)) as i32),
            LrSchedule::Cosine { total } => {
                let t = (epoch as f64 / total.max(1) as f64).min(1.0);
                0.5 * base * (1.0 + (PI * t).cos())
            }
        }
    }
}

/// Accumulators for one network, one slot per weight or bias tensor.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    first: Vec<Array1<f64>>,
    second: Vec<Array1<f64>>,
    step: u64,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, model: &Mlp) -> Self {
        let slots: Vec<Array1<f64>> = model
            .layers()
            .iter()
            .flat_map(|l| [Array1::zeros(l.weight.len()), Array1::zeros(l.bias.len())])
            .collect();
        Self {
            kind,
            second: slots.clone(),
            first: slots,
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, model: &mut Mlp, grads: &MlpGrads, lr: f64) -> Result<()> {
        if self.first.len() != 2 * model.layers().len() {
            return Err(GllError::InvalidArgument(
                "optimizer state was built for a different network".into(),
            ));
        }
        self.step += 1;
        let t = self.step as f64;
        let kind = self.kind;
        let (first, second) = (&mut self.first, &mut self.second);
        model.update(grads, |slot, mut param, grad| {
            let m = &mut first[slot];
            match kind {
                OptimizerKind::Sgd { momentum } => {
                    for ((p, g), mi) in param.iter_mut().zip(grad).zip(m.iter_mut()) {
                        *mi = momentum * *mi + g;
                        *p -= lr * *mi;
                    }
                }
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let v = &mut second[slot];
                    let c1 = 1.0 - beta1.powf(t);
                    let c2 = 1.0 - beta2.powf(t);
                    for (((p, g), mi), vi) in param.iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *mi = beta1 * *mi + (1.0 - beta1) * g;
                        *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                        *p -= lr * (*mi / c1) / ((*vi / c2).sqrt() + eps);
                    }
                }
            }
        });
        Ok(())
    }
}
