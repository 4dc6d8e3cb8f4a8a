//! Gradient storage restricted to the active input features of a batch.
//!
//! Any input feature that is zero for every sample in a batch contributes
//! exactly nothing to the gate or first-layer gradients, so gradients for the
//! gate (rows and columns) and for the first dense layer (columns) are kept
//! only over the batch's active index set. Everything else is stored dense.

use super::{GateKind, ModelConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamTensor {
    Gate,
    W1,
    B1,
    Gamma1,
    Beta1,
    W2,
    B2,
    Gamma2,
    Beta2,
    WOut,
    BOut,
}

impl ParamTensor {
    pub const ALL: [ParamTensor; 11] = [
        ParamTensor::Gate,
        ParamTensor::W1,
        ParamTensor::B1,
        ParamTensor::Gamma1,
        ParamTensor::Beta1,
        ParamTensor::W2,
        ParamTensor::B2,
        ParamTensor::Gamma2,
        ParamTensor::Beta2,
        ParamTensor::WOut,
        ParamTensor::BOut,
    ];
}

/// Where each tensor's entries live in a flat gradient vector.
#[derive(Debug, Clone, PartialEq)]
pub struct GradLayout {
    pub(crate) active: Vec<usize>,
    pub(crate) gate: GateKind,
    pub(crate) input_dim: usize,
    pub(crate) hidden1: usize,
    pub(crate) hidden2: usize,
    pub(crate) classes: usize,
    offsets: [usize; 12],
}

impl GradLayout {
    pub(crate) fn new(config: &ModelConfig, active: Vec<usize>) -> Self {
        let a = active.len();
        let (h1, h2, c) = (config.hidden1, config.hidden2, config.classes);
        let gate_len = match config.gate {
            GateKind::Full => a * a,
            GateKind::Diagonal => a,
        };
        let lens = [gate_len, h1 * a, h1, h1, h1, h2 * h1, h2, h2, h2, c * h2, c];
        let mut offsets = [0; 12];
        for (i, len) in lens.iter().enumerate() {
            offsets[i + 1] = offsets[i] + len;
        }
        Self {
            active,
            gate: config.gate,
            input_dim: config.input_dim,
            hidden1: h1,
            hidden2: h2,
            classes: c,
            offsets,
        }
    }

    pub fn active(&self) -> &[usize] {
        &self.active
    }

    pub fn len(&self) -> usize {
        self.offsets[11]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self, t: ParamTensor) -> std::ops::Range<usize> {
        let i = t as usize;
        self.offsets[i]..self.offsets[i + 1]
    }

    /// Maps a flat gradient position to (tensor, index into the model's tensor).
    pub fn model_position(&self, flat: usize) -> (ParamTensor, usize) {
        let t = ParamTensor::ALL
            .into_iter()
            .find(|&t| self.range(t).contains(&flat))
            .expect("flat index within layout");
        let local = flat - self.range(t).start;
        let a = self.active.len();
        let idx = match t {
            ParamTensor::Gate => match self.gate {
                GateKind::Full => self.active[local / a] * self.input_dim + self.active[local % a],
                GateKind::Diagonal => self.active[local],
            },
            ParamTensor::W1 => (local / a) * self.input_dim + self.active[local % a],
            _ => local,
        };
        (t, idx)
    }
}

/// Analytic gradients of the mean cross-entropy loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub(crate) layout: GradLayout,
    pub(crate) flat: Vec<f64>,
}

impl Gradients {
    pub fn layout(&self) -> &GradLayout {
        &self.layout
    }

    pub fn flat(&self) -> &[f64] {
        &self.flat
    }

    pub fn tensor(&self, t: ParamTensor) -> &[f64] {
        &self.flat[self.layout.range(t)]
    }

    /// Materializes a tensor at its full model shape, zeros outside the active set.
    pub fn dense(&self, t: ParamTensor) -> Vec<f64> {
        let l = &self.layout;
        let len = match t {
            ParamTensor::Gate => match l.gate {
                GateKind::Full => l.input_dim * l.input_dim,
                GateKind::Diagonal => l.input_dim,
            },
            ParamTensor::W1 => l.hidden1 * l.input_dim,
            _ => return self.tensor(t).to_vec(),
        };
        let mut out = vec![0.0; len];
        for flat in l.range(t) {
            let (_, idx) = l.model_position(flat);
            out[idx] = self.flat[flat];
        }
        out
    }
}
