//! Attention-gated two-hidden-layer classifier.
//!
//! ```text
//! a  = sigmoid(W_attn x)          per-feature gate
//! z  = a ⊙ x
//! h1 = dropout(relu(bn(W1 z + b1)))
//! h2 = dropout(relu(bn(W2 h1 + b2)))
//! p  = softmax(W_out h2 + b_out)
//! ```
//!
//! Forward and backward passes are written out by hand. Training is
//! full-batch over the labeled set with mean cross-entropy loss.
//!
//! Zero input features are inert: they contribute nothing to the gate
//! pre-activations, to `z`, or to any gradient. Each pass therefore works on
//! the batch's active index set (features non-zero in at least one sample),
//! which keeps the full `input_dim × input_dim` gate affordable on padded
//! inputs. Gate values are only evaluated on that set.

mod checkpoint;
mod gradcheck;
mod grads;
mod optim;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use gradcheck::{gradient_check, gradient_check_model, gradient_check_report, GradCheckReport};
pub use grads::{GradLayout, Gradients, ParamTensor};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::featurizer::FEATURE_DIM;
use optim::Optimizer;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("shape mismatch: expected {expected}, found {found}")]
    Shape { expected: usize, found: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("label {0} is not 0 or 1")]
    InvalidLabel(u8),
    #[error("empty training set")]
    EmptyTraining,
    #[error("backward needs a train-mode trace")]
    InvalidTrace,
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("non-finite parameter after training epoch {epoch}")]
    NonFinite { epoch: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    /// Full-batch Adam (β₁ 0.9, β₂ 0.999, ε 1e-8).
    Adam,
    /// Full-batch plain gradient descent.
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateKind {
    /// Square `input_dim × input_dim` gate matrix.
    Full,
    /// One gate weight per feature: `a_i = sigmoid(w_i x_i)`.
    Diagonal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub classes: usize,
    pub dropout_rate: f64,
    pub bn_epsilon: f64,
    pub bn_momentum: f64,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub gate: GateKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dim: FEATURE_DIM,
            hidden1: 64,
            hidden2: 32,
            classes: 2,
            dropout_rate: 0.3,
            bn_epsilon: 1e-5,
            bn_momentum: 0.1,
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            epochs: 200,
            seed: 0,
            gate: GateKind::Full,
        }
    }
}

impl ModelConfig {
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), NetworkError> {
        let bad = |m: &str| Err(NetworkError::InvalidConfig(m.into()));
        if self.input_dim == 0 || self.hidden1 == 0 || self.hidden2 == 0 {
            return bad("dimensions must be positive");
        }
        if self.classes != 2 {
            return bad("the classifier is binary: classes must be 2");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad("dropout_rate must lie in [0, 1)");
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) {
            return bad("bn_momentum must lie in (0, 1]");
        }
        if !(self.bn_epsilon > 0.0) || !(self.learning_rate > 0.0) {
            return bad("bn_epsilon and learning_rate must be positive");
        }
        Ok(())
    }

    fn gate_len(&self) -> usize {
        match self.gate {
            GateKind::Full => self.input_dim * self.input_dim,
            GateKind::Diagonal => self.input_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNorm {
    fn new(n: usize) -> Self {
        Self {
            gamma: vec![1.0; n],
            beta: vec![0.0; n],
            running_mean: vec![0.0; n],
            running_var: vec![1.0; n],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub(crate) config: ModelConfig,
    pub(crate) gate: Vec<f64>,
    pub(crate) w1: Vec<f64>,
    pub(crate) b1: Vec<f64>,
    pub(crate) bn1: BatchNorm,
    pub(crate) w2: Vec<f64>,
    pub(crate) b2: Vec<f64>,
    pub(crate) bn2: BatchNorm,
    pub(crate) w_out: Vec<f64>,
    pub(crate) b_out: Vec<f64>,
    /// Dropout randomness; separate stream from initialization.
    pub(crate) rng: ChaCha8Rng,
}

const MIN_GATE: f64 = 1e-15;

fn sigmoid(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(MIN_GATE, 1.0 - MIN_GATE)
}

/// Per-layer activations kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
struct LayerCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    bn_out: Vec<f64>,
    mask: Vec<f64>,
    out: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    mode: Mode,
    batch: usize,
    active: Vec<usize>,
    x: Vec<f64>,
    gate: Vec<f64>,
    z: Vec<f64>,
    l1: LayerCache,
    l2: LayerCache,
    logits: Vec<f64>,
    probs: Vec<f64>,
}

impl ForwardTrace {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn batch_size(&self) -> usize {
        self.batch
    }

    /// Input indices the gate was evaluated on, ascending.
    pub fn active(&self) -> &[usize] {
        &self.active
    }

    /// Gate values, `batch × active().len()`, row-major.
    pub fn gate(&self) -> &[f64] {
        &self.gate
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob_rows(&self) -> impl Iterator<Item = [f64; 2]> + '_ {
        self.probs.chunks(2).map(|r| [r[0], r[1]])
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn dropout_masks(&self) -> (&[f64], &[f64]) {
        (&self.l1.mask, &self.l2.mask)
    }
}

struct BatchStats {
    mean1: Vec<f64>,
    var1: Vec<f64>,
    mean2: Vec<f64>,
    var2: Vec<f64>,
}

fn xavier(rng: &mut ChaCha8Rng, n: usize, fan_in: usize, fan_out: usize) -> Vec<f64> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
}

/// `out[b][k] = bias[k] + Σ_i w[k][i] · input[b][i]`, each sum taken in
/// ascending `i` with zero inputs skipped. The result for one row therefore
/// does not depend on which other rows share the batch, or on zero columns.
fn dense(w: &[f64], bias: &[f64], input: &[f64], in_dim: usize, batch: usize) -> Vec<f64> {
    let out_dim = bias.len();
    let wt = transpose(w, out_dim, in_dim);
    let mut out = Vec::with_capacity(batch * out_dim);
    let mut acc = vec![0.0; out_dim];
    for row in input.chunks(in_dim.max(1)).take(batch) {
        acc.iter_mut().for_each(|a| *a = 0.0);
        for (xi, wi) in row.iter().zip(wt.chunks_exact(out_dim)) {
            if *xi != 0.0 {
                acc.iter_mut().zip(wi).for_each(|(a, w)| *a += xi * w);
            }
        }
        out.extend(acc.iter().zip(bias).map(|(a, b)| b + a));
    }
    out
}

/// Row-major `rows × cols` to row-major `cols × rows`.
fn transpose(m: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; m.len()];
    for (r, row) in m.chunks_exact(cols.max(1)).enumerate().take(rows) {
        for (c, v) in row.iter().enumerate() {
            t[c * rows + r] = *v;
        }
    }
    t
}

/// `dx[b][i] = Σ_k dout[b][k] · w[k][i]`
fn dense_input_grad(w: &[f64], dout: &[f64], in_dim: usize, out_dim: usize) -> Vec<f64> {
    let mut dx = vec![0.0; dout.len() / out_dim * in_dim];
    for (drow, dxrow) in dout.chunks(out_dim).zip(dx.chunks_mut(in_dim)) {
        for (g, wk) in drow.iter().zip(w.chunks(in_dim)) {
            if *g != 0.0 {
                dxrow.iter_mut().zip(wk).for_each(|(d, w)| *d += g * w);
            }
        }
    }
    dx
}

/// `dw[k][i] = Σ_b dout[b][k] · input[b][i]`, written into `dw` (len out×in).
fn dense_weight_grad(
    dout: &[f64],
    input: &[f64],
    in_dim: usize,
    out_dim: usize,
    dw: &mut [f64],
    db: &mut [f64],
) {
    for (drow, xrow) in dout.chunks(out_dim).zip(input.chunks(in_dim)) {
        for (k, g) in drow.iter().enumerate() {
            db[k] += g;
            if *g != 0.0 {
                dw[k * in_dim..(k + 1) * in_dim]
                    .iter_mut()
                    .zip(xrow)
                    .for_each(|(d, x)| *d += g * x);
            }
        }
    }
}

/// Batch-norm backward: returns the pre-normalization gradient and
/// accumulates `dgamma`, `dbeta`.
fn bn_backward(
    dy: &[f64],
    cache: &LayerCache,
    gamma: &[f64],
    batch: usize,
    dgamma: &mut [f64],
    dbeta: &mut [f64],
) -> Vec<f64> {
    let h = gamma.len();
    let n = batch as f64;
    let mut sum_dxhat = vec![0.0; h];
    let mut sum_dxhat_xhat = vec![0.0; h];
    for (dyr, xr) in dy.chunks(h).zip(cache.xhat.chunks(h)) {
        for k in 0..h {
            dgamma[k] += dyr[k] * xr[k];
            dbeta[k] += dyr[k];
            let dxhat = dyr[k] * gamma[k];
            sum_dxhat[k] += dxhat;
            sum_dxhat_xhat[k] += dxhat * xr[k];
        }
    }
    let mut dx = vec![0.0; dy.len()];
    for ((dxr, dyr), xr) in dx.chunks_mut(h).zip(dy.chunks(h)).zip(cache.xhat.chunks(h)) {
        for k in 0..h {
            let dxhat = dyr[k] * gamma[k];
            dxr[k] = cache.inv_std[k] / n * (n * dxhat - sum_dxhat[k] - xr[k] * sum_dxhat_xhat[k]);
        }
    }
    dx
}

impl Model {
    /// Deterministic initialization: scaled-uniform weights, zero biases,
    /// identity batch-norm.
    pub fn init(config: ModelConfig) -> Result<Self, NetworkError> {
        config.validate()?;
        let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (d, h1, h2, c) = (
            config.input_dim,
            config.hidden1,
            config.hidden2,
            config.classes,
        );
        let gate = match config.gate {
            GateKind::Full => xavier(&mut init_rng, d * d, d, d),
            GateKind::Diagonal => xavier(&mut init_rng, d, 1, 1),
        };
        let w1 = xavier(&mut init_rng, h1 * d, d, h1);
        let w2 = xavier(&mut init_rng, h2 * h1, h1, h2);
        let w_out = xavier(&mut init_rng, c * h2, h2, c);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        Ok(Self {
            gate,
            w1,
            b1: vec![0.0; h1],
            bn1: BatchNorm::new(h1),
            w2,
            b2: vec![0.0; h2],
            bn2: BatchNorm::new(h2),
            w_out,
            b_out: vec![0.0; c],
            rng,
            config,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn param(&self, t: ParamTensor) -> &[f64] {
        match t {
            ParamTensor::Gate => &self.gate,
            ParamTensor::W1 => &self.w1,
            ParamTensor::B1 => &self.b1,
            ParamTensor::Gamma1 => &self.bn1.gamma,
            ParamTensor::Beta1 => &self.bn1.beta,
            ParamTensor::W2 => &self.w2,
            ParamTensor::B2 => &self.b2,
            ParamTensor::Gamma2 => &self.bn2.gamma,
            ParamTensor::Beta2 => &self.bn2.beta,
            ParamTensor::WOut => &self.w_out,
            ParamTensor::BOut => &self.b_out,
        }
    }

    pub fn param_mut(&mut self, t: ParamTensor) -> &mut [f64] {
        match t {
            ParamTensor::Gate => &mut self.gate,
            ParamTensor::W1 => &mut self.w1,
            ParamTensor::B1 => &mut self.b1,
            ParamTensor::Gamma1 => &mut self.bn1.gamma,
            ParamTensor::Beta1 => &mut self.bn1.beta,
            ParamTensor::W2 => &mut self.w2,
            ParamTensor::B2 => &mut self.b2,
            ParamTensor::Gamma2 => &mut self.bn2.gamma,
            ParamTensor::Beta2 => &mut self.bn2.beta,
            ParamTensor::WOut => &mut self.w_out,
            ParamTensor::BOut => &mut self.b_out,
        }
    }

    pub fn batch_norms(&self) -> (&BatchNorm, &BatchNorm) {
        (&self.bn1, &self.bn2)
    }

    pub fn all_finite(&self) -> bool {
        ParamTensor::ALL
            .iter()
            .all(|&t| self.param(t).iter().all(|x| x.is_finite()))
            && [&self.bn1, &self.bn2].iter().all(|bn| {
                bn.running_mean
                    .iter()
                    .chain(&bn.running_var)
                    .all(|x| x.is_finite())
            })
    }

    fn check_batch<R: AsRef<[f64]>>(&self, batch: &[R]) -> Result<(), NetworkError> {
        if batch.is_empty() {
            return Err(NetworkError::EmptyBatch);
        }
        for row in batch {
            if row.as_ref().len() != self.config.input_dim {
                return Err(NetworkError::Shape {
                    expected: self.config.input_dim,
                    found: row.as_ref().len(),
                });
            }
        }
        Ok(())
    }

    /// Gate values `sigmoid(W_attn x)` for one input, over every feature.
    pub fn gate_values(&self, x: &[f64]) -> Result<Vec<f64>, NetworkError> {
        self.check_batch(&[x])?;
        let d = self.config.input_dim;
        let nz: Vec<(usize, f64)> = x
            .iter()
            .copied()
            .enumerate()
            .filter(|(_, v)| *v != 0.0)
            .collect();
        Ok((0..d)
            .map(|i| {
                let pre = match self.config.gate {
                    GateKind::Full => nz.iter().map(|&(j, v)| self.gate[i * d + j] * v).sum(),
                    GateKind::Diagonal => self.gate[i] * x[i],
                };
                sigmoid(pre)
            })
            .collect())
    }

    pub fn forward<R: AsRef<[f64]>>(
        &mut self,
        batch: &[R],
        mode: Mode,
    ) -> Result<ForwardTrace, NetworkError> {
        match mode {
            Mode::Train => self.forward_train(batch),
            Mode::Eval => self.forward_eval(batch),
        }
    }

    /// Eval mode: running statistics, no dropout, no mutation.
    pub fn forward_eval<R: AsRef<[f64]>>(&self, batch: &[R]) -> Result<ForwardTrace, NetworkError> {
        self.check_batch(batch)?;
        Ok(self.run_forward(batch, Mode::Eval, None).0)
    }

    /// Train mode: batch statistics, fresh dropout masks, running-stat update.
    pub fn forward_train<R: AsRef<[f64]>>(
        &mut self,
        batch: &[R],
    ) -> Result<ForwardTrace, NetworkError> {
        self.check_batch(batch)?;
        let mut rng = self.rng.clone();
        let (trace, stats) = self.run_forward(batch, Mode::Train, Some(&mut rng));
        self.rng = rng;
        let stats = stats.expect("train mode yields batch statistics");
        let m = self.config.bn_momentum;
        for (bn, mean, var) in [
            (&mut self.bn1, &stats.mean1, &stats.var1),
            (&mut self.bn2, &stats.mean2, &stats.var2),
        ] {
            for k in 0..mean.len() {
                bn.running_mean[k] = (1.0 - m) * bn.running_mean[k] + m * mean[k];
                bn.running_var[k] = (1.0 - m) * bn.running_var[k] + m * var[k];
            }
        }
        Ok(trace)
    }

    pub fn predict_proba<R: AsRef<[f64]>>(
        &self,
        batch: &[R],
    ) -> Result<Vec<[f64; 2]>, NetworkError> {
        Ok(self.forward_eval(batch)?.prob_rows().collect())
    }

    fn run_forward<R: AsRef<[f64]>>(
        &self,
        batch: &[R],
        mode: Mode,
        rng: Option<&mut ChaCha8Rng>,
    ) -> (ForwardTrace, Option<BatchStats>) {
        let cfg = &self.config;
        let (d, h1, h2) = (cfg.input_dim, cfg.hidden1, cfg.hidden2);
        let n = batch.len();

        let active: Vec<usize> = (0..d)
            .filter(|&j| batch.iter().any(|r| r.as_ref()[j] != 0.0))
            .collect();
        let na = active.len();
        let mut x = Vec::with_capacity(n * na);
        for r in batch {
            let r = r.as_ref();
            x.extend(active.iter().map(|&j| r[j]));
        }

        let mut gate = Vec::with_capacity(n * na);
        for xr in x.chunks(na.max(1)).take(if na == 0 { 0 } else { n }) {
            match cfg.gate {
                GateKind::Full => {
                    let nz: Vec<(usize, f64)> = xr
                        .iter()
                        .copied()
                        .enumerate()
                        .filter(|(_, v)| *v != 0.0)
                        .collect();
                    for &i in &active {
                        let row = &self.gate[i * d..(i + 1) * d];
                        let pre: f64 = nz.iter().map(|&(c, v)| row[active[c]] * v).sum();
                        gate.push(sigmoid(pre));
                    }
                }
                GateKind::Diagonal => {
                    gate.extend(
                        active
                            .iter()
                            .zip(xr)
                            .map(|(&i, v)| sigmoid(self.gate[i] * v)),
                    );
                }
            }
        }
        let z: Vec<f64> = gate.iter().zip(&x).map(|(a, v)| a * v).collect();

        // First dense layer over active columns only.
        let w1_active: Vec<f64> = (0..h1)
            .flat_map(|k| active.iter().map(move |&j| k * d + j))
            .map(|idx| self.w1[idx])
            .collect();
        // Pre-activations exclude the bias; bn_relu_dropout adds it back.
        let pre1 = if na == 0 {
            vec![0.0; n * h1]
        } else {
            dense(&w1_active, &vec![0.0; h1], &z, na, n)
        };

        let mut rng = rng;
        let (l1, m1, v1) =
            self.bn_relu_dropout(&pre1, &self.b1, &self.bn1, n, mode, rng.as_deref_mut());
        let pre2 = dense(&self.w2, &vec![0.0; h2], &l1.out, h1, n);
        let (l2, m2, v2) = self.bn_relu_dropout(&pre2, &self.b2, &self.bn2, n, mode, rng);
        let logits = dense(&self.w_out, &self.b_out, &l2.out, h2, n);

        let mut probs = Vec::with_capacity(logits.len());
        for row in logits.chunks(cfg.classes) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|l| (l - max).exp()).collect();
            let s: f64 = exps.iter().sum();
            probs.extend(exps.iter().map(|e| e / s));
        }

        let stats = match mode {
            Mode::Train => Some(BatchStats {
                mean1: m1,
                var1: v1,
                mean2: m2,
                var2: v2,
            }),
            Mode::Eval => None,
        };
        (
            ForwardTrace {
                mode,
                batch: n,
                active,
                x,
                gate,
                z,
                l1,
                l2,
                logits,
                probs,
            },
            stats,
        )
    }

    /// `pre` is the dense output without its bias. In train mode the bias
    /// cancels against the batch mean, so centering skips it entirely and the
    /// output is bit-for-bit independent of the bias; it only enters the
    /// reported batch mean (and so the running mean).
    #[allow(clippy::too_many_arguments)]
    fn bn_relu_dropout(
        &self,
        pre: &[f64],
        bias: &[f64],
        bn: &BatchNorm,
        n: usize,
        mode: Mode,
        rng: Option<&mut ChaCha8Rng>,
    ) -> (LayerCache, Vec<f64>, Vec<f64>) {
        let h = bn.gamma.len();
        let eps = self.config.bn_epsilon;
        let (mean, var) = match mode {
            Mode::Train => {
                let mut mean = vec![0.0; h];
                for r in pre.chunks(h) {
                    mean.iter_mut().zip(r).for_each(|(m, v)| *m += v);
                }
                mean.iter_mut().for_each(|m| *m /= n as f64);
                let mut var = vec![0.0; h];
                for r in pre.chunks(h) {
                    for k in 0..h {
                        var[k] += (r[k] - mean[k]).powi(2);
                    }
                }
                var.iter_mut().for_each(|v| *v = (*v / n as f64).max(0.0));
                (mean, var)
            }
            Mode::Eval => (bn.running_mean.clone(), bn.running_var.clone()),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        // Value subtracted from the bias-free pre-activation.
        let center: Vec<f64> = match mode {
            Mode::Train => mean.clone(),
            Mode::Eval => mean.iter().zip(bias).map(|(m, b)| m - b).collect(),
        };
        let mut xhat = Vec::with_capacity(pre.len());
        let mut bn_out = Vec::with_capacity(pre.len());
        for r in pre.chunks(h) {
            for k in 0..h {
                let xh = (r[k] - center[k]) * inv_std[k];
                xhat.push(xh);
                bn_out.push(bn.gamma[k] * xh + bn.beta[k]);
            }
        }

        let rate = self.config.dropout_rate;
        let mask: Vec<f64> = match (mode, rng) {
            (Mode::Train, Some(rng)) if rate > 0.0 => {
                let keep = 1.0 / (1.0 - rate);
                (0..pre.len())
                    .map(|_| {
                        if rng.random::<f64>() < rate {
                            0.0
                        } else {
                            keep
                        }
                    })
                    .collect()
            }
            _ => vec![1.0; pre.len()],
        };
        let out = bn_out
            .iter()
            .zip(&mask)
            .map(|(y, m)| y.max(0.0) * m)
            .collect();
        (
            LayerCache {
                xhat,
                inv_std,
                bn_out,
                mask,
                out,
            },
            match mode {
                Mode::Train => mean.iter().zip(bias).map(|(m, b)| m + b).collect(),
                Mode::Eval => mean,
            },
            var,
        )
    }

    /// Exact gradients of the mean cross-entropy for a train-mode trace.
    pub fn backward(&self, trace: &ForwardTrace, labels: &[u8]) -> Result<Gradients, NetworkError> {
        if trace.mode != Mode::Train {
            return Err(NetworkError::InvalidTrace);
        }
        check_labels(labels, trace.batch)?;
        let cfg = &self.config;
        let (d, h1, h2, c) = (cfg.input_dim, cfg.hidden1, cfg.hidden2, cfg.classes);
        let n = trace.batch;
        let na = trace.active.len();
        let layout = GradLayout::new(cfg, trace.active.clone());
        let mut flat = vec![0.0; layout.len()];

        let mut dlogits = trace.probs.clone();
        for (row, &y) in dlogits.chunks_mut(c).zip(labels) {
            row[y as usize] -= 1.0;
            row.iter_mut().for_each(|g| *g /= n as f64);
        }

        {
            let (dw, db) = split_two(&mut flat, &layout, ParamTensor::WOut, ParamTensor::BOut);
            dense_weight_grad(&dlogits, &trace.l2.out, h2, c, dw, db);
        }
        let dh2 = dense_input_grad(&self.w_out, &dlogits, h2, c);
        let dpre2 = self.layer_backward(&dh2, &trace.l2, &self.bn2.gamma, n, &layout, &mut flat, 2);
        {
            let (dw, db) = split_two(&mut flat, &layout, ParamTensor::W2, ParamTensor::B2);
            dense_weight_grad(&dpre2, &trace.l1.out, h1, h2, dw, db);
        }
        let dh1 = dense_input_grad(&self.w2, &dpre2, h1, h2);
        let dpre1 = self.layer_backward(&dh1, &trace.l1, &self.bn1.gamma, n, &layout, &mut flat, 1);

        if na > 0 {
            let w1_active: Vec<f64> = (0..h1)
                .flat_map(|k| trace.active.iter().map(move |&j| k * d + j))
                .map(|idx| self.w1[idx])
                .collect();
            {
                let (dw, db) = split_two(&mut flat, &layout, ParamTensor::W1, ParamTensor::B1);
                dense_weight_grad(&dpre1, &trace.z, na, h1, dw, db);
            }
            let dz = dense_input_grad(&w1_active, &dpre1, na, h1);
            // z = a ⊙ x, a = sigmoid(pre)
            let dpre_gate: Vec<f64> = dz
                .iter()
                .zip(&trace.x)
                .zip(&trace.gate)
                .map(|((g, x), a)| g * x * a * (1.0 - a))
                .collect();
            let dgate = &mut flat[layout.range(ParamTensor::Gate)];
            match cfg.gate {
                GateKind::Full => {
                    for (dr, xr) in dpre_gate.chunks(na).zip(trace.x.chunks(na)) {
                        for (r, g) in dr.iter().enumerate() {
                            if *g != 0.0 {
                                dgate[r * na..(r + 1) * na]
                                    .iter_mut()
                                    .zip(xr)
                                    .for_each(|(o, x)| *o += g * x);
                            }
                        }
                    }
                }
                GateKind::Diagonal => {
                    for (dr, xr) in dpre_gate.chunks(na).zip(trace.x.chunks(na)) {
                        for r in 0..na {
                            dgate[r] += dr[r] * xr[r];
                        }
                    }
                }
            }
        } else {
            let db = &mut flat[layout.range(ParamTensor::B1)];
            for r in dpre1.chunks(h1) {
                db.iter_mut().zip(r).for_each(|(o, g)| *o += g);
            }
        }

        Ok(Gradients { layout, flat })
    }

    /// Through dropout, relu and batch norm; returns the pre-activation gradient.
    #[allow(clippy::too_many_arguments)]
    fn layer_backward(
        &self,
        dout: &[f64],
        cache: &LayerCache,
        gamma: &[f64],
        n: usize,
        layout: &GradLayout,
        flat: &mut [f64],
        layer: u8,
    ) -> Vec<f64> {
        let dy: Vec<f64> = dout
            .iter()
            .zip(&cache.mask)
            .zip(&cache.bn_out)
            .map(|((g, m), y)| if *y > 0.0 { g * m } else { 0.0 })
            .collect();
        let (tg, tb) = if layer == 1 {
            (ParamTensor::Gamma1, ParamTensor::Beta1)
        } else {
            (ParamTensor::Gamma2, ParamTensor::Beta2)
        };
        let (dgamma, dbeta) = split_two(flat, layout, tg, tb);
        bn_backward(&dy, cache, gamma, n, dgamma, dbeta)
    }

    /// Adds `delta` (laid out per `layout`) to the parameters. Returns
    /// whether every updated entry is still finite.
    pub(crate) fn apply_delta(&mut self, layout: &GradLayout, delta: &[f64]) -> bool {
        let d = self.config.input_dim;
        let na = layout.active.len();
        let mut finite = true;
        let mut add = |p: &mut f64, u: f64| {
            *p += u;
            finite &= p.is_finite();
        };
        for t in ParamTensor::ALL {
            let part = &delta[layout.range(t)];
            match t {
                ParamTensor::Gate => match self.config.gate {
                    GateKind::Full => {
                        for (r, &i) in layout.active.iter().enumerate() {
                            let row = &mut self.gate[i * d..(i + 1) * d];
                            for (cidx, &j) in layout.active.iter().enumerate() {
                                add(&mut row[j], part[r * na + cidx]);
                            }
                        }
                    }
                    GateKind::Diagonal => {
                        for (r, &i) in layout.active.iter().enumerate() {
                            add(&mut self.gate[i], part[r]);
                        }
                    }
                },
                ParamTensor::W1 => {
                    for k in 0..self.config.hidden1 {
                        for (cidx, &j) in layout.active.iter().enumerate() {
                            add(&mut self.w1[k * d + j], part[k * na + cidx]);
                        }
                    }
                }
                _ => self
                    .param_mut(t)
                    .iter_mut()
                    .zip(part)
                    .for_each(|(p, &u)| add(p, u)),
            }
        }
        finite
    }

    /// Full-batch training for `config.epochs`; returns the per-epoch
    /// train-mode loss measured before each update. Optimizer moments start
    /// fresh on every call; weights carry over.
    pub fn train<R: AsRef<[f64]>>(
        &mut self,
        features: &[R],
        labels: &[u8],
    ) -> Result<Vec<f64>, NetworkError> {
        if features.is_empty() {
            return Err(NetworkError::EmptyTraining);
        }
        check_labels(labels, features.len())?;
        self.check_batch(features)?;
        let mut history = Vec::with_capacity(self.config.epochs);
        let mut optimizer: Option<Optimizer> = None;
        for epoch in 0..self.config.epochs {
            let trace = self.forward_train(features)?;
            history.push(loss(&trace.probs, labels)?);
            let grads = self.backward(&trace, labels)?;
            let opt = optimizer.get_or_insert_with(|| {
                Optimizer::new(
                    self.config.optimizer,
                    self.config.learning_rate,
                    grads.flat.len(),
                )
            });
            let delta = opt.step(&grads.flat);
            let updated_finite = self.apply_delta(&grads.layout, &delta);
            let stats_finite = [&self.bn1, &self.bn2].iter().all(|bn| {
                bn.running_mean
                    .iter()
                    .chain(&bn.running_var)
                    .all(|x| x.is_finite())
            });
            if !(updated_finite && stats_finite) {
                return Err(NetworkError::NonFinite { epoch });
            }
        }
        Ok(history)
    }
}

fn split_two<'a>(
    flat: &'a mut [f64],
    layout: &GradLayout,
    a: ParamTensor,
    b: ParamTensor,
) -> (&'a mut [f64], &'a mut [f64]) {
    let (ra, rb) = (layout.range(a), layout.range(b));
    debug_assert_eq!(ra.end, rb.start);
    let (left, right) = flat[ra.start..rb.end].split_at_mut(ra.len());
    (left, right)
}

fn check_labels(labels: &[u8], n: usize) -> Result<(), NetworkError> {
    if labels.len() != n {
        return Err(NetworkError::Shape {
            expected: n,
            found: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&y| y > 1) {
        return Err(NetworkError::InvalidLabel(bad));
    }
    Ok(())
}

/// Mean cross-entropy over rows of `probs` (row-major, 2 columns), with
/// probabilities floored at 1e-12 inside the log.
pub fn loss(probs: &[f64], labels: &[u8]) -> Result<f64, NetworkError> {
    if probs.len() != 2 * labels.len() {
        return Err(NetworkError::Shape {
            expected: 2 * labels.len(),
            found: probs.len(),
        });
    }
    if labels.is_empty() {
        return Ok(0.0);
    }
    check_labels(labels, labels.len())?;
    let total: f64 = probs
        .chunks(2)
        .zip(labels)
        .map(|(p, &y)| -p[y as usize].max(1e-12).ln())
        .sum();
    Ok(total / labels.len() as f64)
}

/// Index of the larger probability; ties go to class 0.
pub fn predicted_class(p: [f64; 2]) -> u8 {
    u8::from(p[1] > p[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    pub(crate) fn small_config(seed: u64) -> ModelConfig {
        ModelConfig {
            input_dim: 12,
            hidden1: 5,
            hidden2: 4,
            dropout_rate: 0.0,
            epochs: 200,
            learning_rate: 1e-2,
            seed,
            ..ModelConfig::default()
        }
    }

    fn random_batch(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect())
            .collect()
    }

    #[test]
    fn init_is_deterministic_with_expected_shapes() {
        let cfg = ModelConfig {
            gate: GateKind::Diagonal,
            ..ModelConfig::default()
        };
        let a = Model::init(cfg.clone()).unwrap();
        assert_eq!(a, Model::init(cfg).unwrap());
        assert_eq!(a.w1.len(), 64 * 4950);
        assert_eq!(a.gate.len(), 4950);
        assert!(a.b1.iter().all(|&b| b == 0.0));
        assert_eq!(a.bn1.running_var, vec![1.0; 64]);
    }

    #[test]
    fn full_gate_is_square() {
        let m = Model::init(small_config(0)).unwrap();
        assert_eq!(m.gate.len(), 144);
    }

    #[test]
    fn eval_probs_normalized_and_pure() {
        let m = Model::init(small_config(3)).unwrap();
        let batch = random_batch(4, 12, 9);
        let t1 = m.forward_eval(&batch).unwrap();
        let t2 = m.forward_eval(&batch).unwrap();
        assert_eq!(t1.probs(), t2.probs());
        for p in t1.prob_rows() {
            assert!((p[0] + p[1] - 1.0).abs() < 1e-9);
        }
        assert!(t1.gate().iter().all(|&a| a > 0.0 && a < 1.0));
    }

    #[test]
    fn zero_output_layer_gives_uniform_probs() {
        let mut m = Model::init(small_config(1)).unwrap();
        m.w_out.iter_mut().for_each(|w| *w = 0.0);
        let probs = m.predict_proba(&random_batch(3, 12, 2)).unwrap();
        assert!(probs.iter().all(|p| *p == [0.5, 0.5]));
    }

    #[test]
    fn rate_zero_dropout_is_identity() {
        let mut m = Model::init(small_config(1)).unwrap();
        let rng_before = m.rng.clone();
        let t = m.forward_train(&random_batch(3, 12, 2)).unwrap();
        let (m1, m2) = t.dropout_masks();
        assert!(m1.iter().chain(m2).all(|&v| v == 1.0));
        assert_eq!(m.rng, rng_before);
    }

    #[test]
    fn dropout_masks_use_inverted_scaling() {
        let mut m = Model::init(ModelConfig {
            dropout_rate: 0.5,
            ..small_config(1)
        })
        .unwrap();
        let t = m.forward_train(&random_batch(8, 12, 2)).unwrap();
        let (m1, _) = t.dropout_masks();
        assert!(m1.iter().all(|&v| v == 0.0 || v == 2.0));
        assert!(m1.contains(&0.0) && m1.contains(&2.0));
    }

    #[test]
    fn shape_and_label_errors() {
        let mut m = Model::init(small_config(0)).unwrap();
        assert!(matches!(
            m.forward_eval(&[vec![0.0; 11]]),
            Err(NetworkError::Shape {
                expected: 12,
                found: 11
            })
        ));
        assert!(matches!(
            m.forward_eval::<Vec<f64>>(&[]),
            Err(NetworkError::EmptyBatch)
        ));
        let b = random_batch(2, 12, 0);
        assert!(matches!(
            m.train(&b, &[0, 2]),
            Err(NetworkError::InvalidLabel(2))
        ));
        assert!(matches!(
            m.train::<Vec<f64>>(&[], &[]),
            Err(NetworkError::EmptyTraining)
        ));
        let trace = m.forward_eval(&b).unwrap();
        assert!(matches!(
            m.backward(&trace, &[0, 1]),
            Err(NetworkError::InvalidTrace)
        ));
    }

    #[test]
    fn loss_examples() {
        assert!((loss(&[0.5, 0.5], &[1]).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(loss(&[0.0, 1.0], &[1]).unwrap().abs() < 1e-12);
        assert!(loss(&[0.0, 1.0], &[0]).unwrap() > 27.0);
        let two = loss(&[0.5, 0.5, 0.0, 1.0], &[1, 1]).unwrap();
        assert!((two - 0.346574).abs() < 1e-6);
        assert!(matches!(
            loss(&[0.5, 0.5], &[0, 1]),
            Err(NetworkError::Shape { .. })
        ));
    }

    #[test]
    fn gradient_shapes_match_parameters() {
        for gate in [GateKind::Full, GateKind::Diagonal] {
            let mut m = Model::init(ModelConfig {
                gate,
                ..small_config(4)
            })
            .unwrap();
            let batch = random_batch(3, 12, 1);
            let t = m.forward_train(&batch).unwrap();
            let g = m.backward(&t, &[0, 1, 1]).unwrap();
            for p in ParamTensor::ALL {
                assert_eq!(g.dense(p).len(), m.param(p).len(), "{p:?}");
            }
        }
    }

    #[test]
    fn duplicated_sample_has_same_gradient() {
        // Batch norm over two identical rows has zero variance, exactly like a
        // single row, and the mean loss is unchanged.
        let m0 = Model::init(small_config(5)).unwrap();
        let x = random_batch(1, 12, 3);
        let single = {
            let mut m = m0.clone();
            let t = m.forward_train(&x).unwrap();
            m.backward(&t, &[1]).unwrap()
        };
        let double = {
            let mut m = m0.clone();
            let xx = vec![x[0].clone(), x[0].clone()];
            let t = m.forward_train(&xx).unwrap();
            m.backward(&t, &[1, 1]).unwrap()
        };
        for p in ParamTensor::ALL {
            for (a, b) in single.dense(p).iter().zip(double.dense(p)) {
                assert!(
                    (a - b).abs() <= 1e-12 * (1.0 + a.abs()),
                    "{p:?}: {a} vs {b}"
                );
            }
        }
    }

    #[test]
    fn zero_inputs_are_inert_in_gradients() {
        let mut m = Model::init(small_config(6)).unwrap();
        let mut batch = random_batch(3, 12, 4);
        for r in &mut batch {
            r[3] = 0.0;
            r[7] = 0.0;
        }
        let t = m.forward_train(&batch).unwrap();
        assert_eq!(t.active().len(), 10);
        let g = m.backward(&t, &[0, 1, 0]).unwrap();
        let gate = g.dense(ParamTensor::Gate);
        for j in 0..12 {
            assert_eq!(gate[3 * 12 + j], 0.0);
            assert_eq!(gate[j * 12 + 7], 0.0);
        }
    }

    #[test]
    fn batch_of_one_trains_finitely() {
        let mut m = Model::init(small_config(2)).unwrap();
        let hist = m.train(&random_batch(1, 12, 0), &[1]).unwrap();
        assert_eq!(hist.len(), 200);
        assert!(m.all_finite());
        assert!(m.bn1.running_var.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let mut m = Model::init(ModelConfig {
            epochs: 0,
            ..small_config(2)
        })
        .unwrap();
        let before = m.clone();
        assert!(m
            .train(&random_batch(3, 12, 0), &[0, 1, 1])
            .unwrap()
            .is_empty());
        assert_eq!(m, before);
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = ModelConfig {
            dropout_rate: 0.3,
            ..small_config(8)
        };
        let batch = random_batch(6, 12, 1);
        let labels = [0, 1, 0, 1, 1, 0];
        let mut a = Model::init(cfg.clone()).unwrap();
        let mut b = Model::init(cfg).unwrap();
        assert_eq!(
            a.train(&batch, &labels).unwrap(),
            b.train(&batch, &labels).unwrap()
        );
        assert_eq!(a, b);
    }

    #[test]
    fn sgd_reduces_loss() {
        let cfg = ModelConfig {
            optimizer: OptimizerKind::Sgd,
            learning_rate: 0.1,
            ..small_config(3)
        };
        let batch = random_batch(6, 12, 5);
        let mut m = Model::init(cfg).unwrap();
        let hist = m.train(&batch, &[0, 1, 0, 1, 1, 0]).unwrap();
        assert!(hist.last().unwrap() < &hist[0]);
    }
}
