//! From-scratch binary classifiers over pooled frames.
//!
//! Two shapes: a plain logistic regression and a one-hidden-layer net
//! with 32 rectified units. Both train with minibatch gradient descent
//! on binary cross-entropy under an adaptive-moment optimizer with
//! decoupled weight decay. Everything is seeded and single-threaded, so
//! training the same set twice yields bit-identical weights.

use super::{LabeledSet, LearnError};
use crate::perception::{features, pool_side, FeatureNorm, SideGrid, FEATURE_LEN};
use crate::rng::RngHub;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Width of the hidden layer in [`ModelKind::OneHiddenLayer`].
pub const HIDDEN_UNITS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    Linear,
    OneHiddenLayer,
}

impl ModelKind {
    /// Total parameter count for a given input width.
    fn weight_len(self, input_dim: usize) -> usize {
        match self {
            ModelKind::Linear => input_dim + 1,
            ModelKind::OneHiddenLayer => (input_dim + 1) * HIDDEN_UNITS + HIDDEN_UNITS + 1,
        }
    }
}

/// A trained classifier: flat parameter vector, the normalization its
/// inputs expect, and the operating threshold downstream callers apply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryClassifier {
    pub kind: ModelKind,
    pub input_dim: usize,
    /// Parameters, flattened. Linear: `[w; input_dim], b`. Hidden layer:
    /// `[W1; 32 x input_dim] [b1; 32] [w2; 32] b2`, W1 row-major by unit.
    pub weights: Vec<f64>,
    pub norm: FeatureNorm,
    pub threshold: f64,
}

/// Optimizer and schedule settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub kind: ModelKind,
    pub learning_rate: f64,
    /// Decoupled weight decay applied to weights (not biases).
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub threshold: f64,
    pub seed: u64,
}

impl TrainConfig {
    /// Defaults for the fragility (risk) task.
    pub fn risk_default(seed: u64) -> TrainConfig {
        TrainConfig {
            kind: ModelKind::Linear,
            learning_rate: 1e-4,
            weight_decay: 1e-4,
            epochs: 15,
            batch_size: 32,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            threshold: 0.6,
            seed,
        }
    }

    /// Defaults for the breakage-imminence (failure) task.
    pub fn failure_default(seed: u64) -> TrainConfig {
        TrainConfig {
            kind: ModelKind::OneHiddenLayer,
            epochs: 25,
            threshold: 0.98,
            ..TrainConfig::risk_default(seed)
        }
    }
}

/// Model plus its per-epoch mean training loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Trained {
    pub model: BinaryClassifier,
    pub epoch_losses: Vec<f64>,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable binary cross-entropy from the logit.
fn bce_from_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

/// Forward pass returning the logit; optionally accumulates the gradient
/// of `(sigmoid(z) - y)`-scaled backprop into `grad`.
fn forward(
    kind: ModelKind,
    input_dim: usize,
    w: &[f64],
    x: &[f64],
    y: Option<f64>,
    grad: Option<&mut [f64]>,
) -> f64 {
    match kind {
        ModelKind::Linear => {
            let (wx, b) = w.split_at(input_dim);
            let z = wx.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b[0];
            if let (Some(y), Some(grad)) = (y, grad) {
                let dz = sigmoid(z) - y;
                for (g, xi) in grad[..input_dim].iter_mut().zip(x) {
                    *g += dz * xi;
                }
                grad[input_dim] += dz;
            }
            z
        }
        ModelKind::OneHiddenLayer => {
            let w1 = &w[..HIDDEN_UNITS * input_dim];
            let b1 = &w[HIDDEN_UNITS * input_dim..HIDDEN_UNITS * (input_dim + 1)];
            let w2 = &w[HIDDEN_UNITS * (input_dim + 1)..HIDDEN_UNITS * (input_dim + 2)];
            let b2 = w[HIDDEN_UNITS * (input_dim + 2)];
            let mut hidden = [0.0; HIDDEN_UNITS];
            for (unit, h) in hidden.iter_mut().enumerate() {
                let row = &w1[unit * input_dim..(unit + 1) * input_dim];
                let pre = row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b1[unit];
                *h = pre.max(0.0);
            }
            let z = w2.iter().zip(&hidden).map(|(a, b)| a * b).sum::<f64>() + b2;
            if let (Some(y), Some(grad)) = (y, grad) {
                let dz = sigmoid(z) - y;
                let (g1, rest) = grad.split_at_mut(HIDDEN_UNITS * input_dim);
                let (gb1, rest) = rest.split_at_mut(HIDDEN_UNITS);
                let (g2, gb2) = rest.split_at_mut(HIDDEN_UNITS);
                gb2[0] += dz;
                for unit in 0..HIDDEN_UNITS {
                    g2[unit] += dz * hidden[unit];
                    if hidden[unit] > 0.0 {
                        let dpre = dz * w2[unit];
                        gb1[unit] += dpre;
                        let row = &mut g1[unit * input_dim..(unit + 1) * input_dim];
                        for (g, xi) in row.iter_mut().zip(x) {
                            *g += dpre * xi;
                        }
                    }
                }
            }
            z
        }
    }
}

/// Mean BCE over the batch; `grad`, when given, receives the mean
/// gradient (overwritten, not accumulated).
fn batch_loss(
    kind: ModelKind,
    input_dim: usize,
    w: &[f64],
    xs: &[&[f64]],
    ys: &[f64],
    mut grad: Option<&mut [f64]>,
) -> f64 {
    if let Some(g) = grad.as_deref_mut() {
        g.fill(0.0);
    }
    let mut loss = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let z = forward(kind, input_dim, w, x, Some(*y), grad.as_deref_mut());
        loss += bce_from_logit(z, *y);
    }
    let n = xs.len().max(1) as f64;
    if let Some(g) = grad {
        for gi in g.iter_mut() {
            *gi /= n;
        }
    }
    loss / n
}

/// Indices of bias parameters, which are exempt from weight decay.
fn is_bias(kind: ModelKind, input_dim: usize, index: usize) -> bool {
    match kind {
        ModelKind::Linear => index == input_dim,
        ModelKind::OneHiddenLayer => {
            let w1 = HIDDEN_UNITS * input_dim;
            (w1..w1 + HIDDEN_UNITS).contains(&index) || index == HIDDEN_UNITS * (input_dim + 2)
        }
    }
}

/// Train a classifier on the set. Features are the pooled frames,
/// standardized by a normalization fitted here on this same set and
/// stored in the returned model.
pub fn train(set: &LabeledSet, config: &TrainConfig) -> Result<Trained, LearnError> {
    if set.is_empty() {
        return Err(LearnError::EmptySet);
    }
    let pooled: Vec<Vec<f64>> = set.frames.iter().map(pool_side).collect();
    let norm = FeatureNorm::fit(&pooled);
    let xs: Vec<Vec<f64>> = pooled
        .iter()
        .map(|p| {
            p.iter()
                .zip(&norm.mean)
                .zip(&norm.std)
                .map(|((v, m), s)| (v - m) / s)
                .collect()
        })
        .collect();
    let ys: Vec<f64> = set.labels.iter().map(|l| f64::from(u8::from(*l))).collect();
    let input_dim = FEATURE_LEN;

    let n_weights = config.kind.weight_len(input_dim);
    let mut hub = RngHub::new(config.seed);
    let mut weights = vec![0.0; n_weights];
    {
        let mut stream = hub.stream("training");
        // Small uniform init on weights, zero biases; scaled by fan-in so
        // both layer shapes start in the same output range.
        for (i, w) in weights.iter_mut().enumerate() {
            if !is_bias(config.kind, input_dim, i) {
                let fan_in = match config.kind {
                    ModelKind::Linear => input_dim,
                    ModelKind::OneHiddenLayer => {
                        if i < HIDDEN_UNITS * input_dim {
                            input_dim
                        } else {
                            HIDDEN_UNITS
                        }
                    }
                };
                *w = stream.uniform(-1.0, 1.0) * 0.1 / (fan_in as f64).sqrt();
            }
        }
    }

    let mut m = vec![0.0; n_weights];
    let mut v = vec![0.0; n_weights];
    let mut grad = vec![0.0; n_weights];
    let mut step = 0usize;
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let order = hub.stream("training").shuffled_indices(xs.len());
        let mut epoch_loss = 0.0;
        let mut batches = 0.0f64;
        for chunk in order.chunks(config.batch_size.max(1)) {
            let bx: Vec<&[f64]> = chunk.iter().map(|i| xs[*i].as_slice()).collect();
            let by: Vec<f64> = chunk.iter().map(|i| ys[*i]).collect();
            let loss = batch_loss(config.kind, input_dim, &weights, &bx, &by, Some(&mut grad));
            if !loss.is_finite() {
                return Err(LearnError::DivergedLoss);
            }
            epoch_loss += loss;
            batches += 1.0;
            step += 1;
            let bias1 = 1.0 - config.beta1.powi(step as i32);
            let bias2 = 1.0 - config.beta2.powi(step as i32);
            for i in 0..n_weights {
                m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * grad[i];
                v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * grad[i] * grad[i];
                let update = (m[i] / bias1) / ((v[i] / bias2).sqrt() + config.epsilon);
                weights[i] -= config.learning_rate * update;
                if !is_bias(config.kind, input_dim, i) {
                    weights[i] -= config.learning_rate * config.weight_decay * weights[i];
                }
            }
        }
        epoch_losses.push(epoch_loss / batches.max(1.0));
    }

    Ok(Trained {
        model: BinaryClassifier {
            kind: config.kind,
            input_dim,
            weights,
            norm,
            threshold: config.threshold,
        },
        epoch_losses,
    })
}

/// Probability that the (already standardized) feature vector is a
/// positive. Always strictly inside (0, 1).
pub fn predict(model: &BinaryClassifier, feature_vec: &[f64]) -> Result<f64, LearnError> {
    if feature_vec.len() != model.input_dim {
        return Err(LearnError::ShapeMismatch {
            got: feature_vec.len(),
            expected: model.input_dim,
        });
    }
    let z = forward(
        model.kind,
        model.input_dim,
        &model.weights,
        feature_vec,
        None,
        None,
    );
    Ok(sigmoid(z).clamp(1e-12, 1.0 - 1e-12))
}

/// Pool, standardize with the model's own normalization, and predict.
pub fn predict_frame(model: &BinaryClassifier, frame: &SideGrid) -> Result<f64, LearnError> {
    let vec = features(frame, &model.norm)
        .map_err(|_| LearnError::BadFile("model carries an unfitted norm".into()))?;
    predict(model, &vec)
}

/// Threshold-based evaluation counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub true_negatives: usize,
    pub false_negatives: usize,
}

/// Evaluate with the model's stored threshold.
pub fn evaluate(model: &BinaryClassifier, set: &LabeledSet) -> Result<Metrics, LearnError> {
    if set.is_empty() {
        return Err(LearnError::EmptySet);
    }
    let (mut tp, mut fp, mut tn, mut fne) = (0usize, 0usize, 0usize, 0usize);
    for (frame, label) in set.frames.iter().zip(&set.labels) {
        let positive = predict_frame(model, frame)? >= model.threshold;
        match (positive, *label) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fne += 1,
        }
    }
    let total = (tp + fp + tn + fne) as f64;
    let div = |num: usize, den: usize| {
        if den == 0 {
            1.0
        } else {
            num as f64 / den as f64
        }
    };
    Ok(Metrics {
        accuracy: (tp + tn) as f64 / total,
        precision: div(tp, tp + fp),
        recall: div(tp, tp + fne),
        true_positives: tp,
        false_positives: fp,
        true_negatives: tn,
        false_negatives: fne,
    })
}

/// File header stored as one JSON line ahead of the raw weights.
#[derive(Serialize, Deserialize)]
struct ModelHeader {
    kind: ModelKind,
    shapes: Vec<usize>,
    threshold: f64,
    norm: FeatureNorm,
}

impl BinaryClassifier {
    /// Write as a one-line JSON header plus little-endian 64-bit floats.
    pub fn save(&self, path: &Path) -> Result<(), LearnError> {
        let shapes = match self.kind {
            ModelKind::Linear => vec![self.input_dim],
            ModelKind::OneHiddenLayer => vec![self.input_dim, HIDDEN_UNITS],
        };
        let header = ModelHeader {
            kind: self.kind,
            shapes,
            threshold: self.threshold,
            norm: self.norm.clone(),
        };
        let mut bytes = serde_json::to_vec(&header)
            .map_err(|e| LearnError::BadFile(format!("header encode: {e}")))?;
        bytes.push(b'\n');
        for w in &self.weights {
            bytes.extend_from_slice(&w.to_le_bytes());
        }
        std::fs::write(path, bytes)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<BinaryClassifier, LearnError> {
        let bytes = std::fs::read(path)?;
        let newline = bytes
            .iter()
            .position(|b| *b == b'\n')
            .ok_or_else(|| LearnError::BadFile("missing header line".into()))?;
        let header: ModelHeader = serde_json::from_slice(&bytes[..newline])
            .map_err(|e| LearnError::BadFile(format!("header decode: {e}")))?;
        let input_dim = *header
            .shapes
            .first()
            .ok_or_else(|| LearnError::BadFile("empty shape list".into()))?;
        let body = &bytes[newline + 1..];
        let expected = header.kind.weight_len(input_dim);
        if body.len() != expected * 8 {
            return Err(LearnError::BadFile(format!(
                "weight payload is {} bytes, expected {}",
                body.len(),
                expected * 8
            )));
        }
        let weights = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Ok(BinaryClassifier {
            kind: header.kind,
            input_dim,
            weights,
            norm: header.norm,
            threshold: header.threshold,
        })
    }
}
