//! Full-batch optimizers over a flat gradient vector.

use super::OptimizerKind;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

pub(crate) struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Optimizer {
    pub(crate) fn new(kind: OptimizerKind, lr: f64, len: usize) -> Self {
        let (m, v) = match kind {
            OptimizerKind::Adam => (vec![0.0; len], vec![0.0; len]),
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
        };
        Self {
            kind,
            lr,
            step: 0,
            m,
            v,
        }
    }

    /// Returns the parameter delta for this gradient.
    pub(crate) fn step(&mut self, grad: &[f64]) -> Vec<f64> {
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => grad.iter().map(|g| -self.lr * g).collect(),
            OptimizerKind::Adam => {
                let c1 = 1.0 - BETA1.powi(self.step);
                let c2 = 1.0 - BETA2.powi(self.step);
                grad.iter()
                    .zip(self.m.iter_mut().zip(self.v.iter_mut()))
                    .map(|(g, (m, v))| {
                        *m = BETA1 * *m + (1.0 - BETA1) * g;
                        *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                        -self.lr * (*m / c1) / ((*v / c2).sqrt() + EPS)
                    })
                    .collect()
            }
        }
    }
}
