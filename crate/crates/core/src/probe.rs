// SPDX-License-Identifier: MIT OR Apache-2.0

//! One-vs-rest linear probes over mean residual streams.
//!
//! A probe scores `sigmoid(w · x̄ + b)` and is trained on the class-weighted
//! binary cross-entropy
//! `L = -w1 · y · log(ŷ) - (1 - y) · log(1 - ŷ)` with full-batch Adam, a
//! cosine-annealed learning rate and input dropout. One probe is trained per
//! layer of the band `[ceil(0.6 L), floor(0.9 L)]` and the layer with the best
//! validation F1 is kept.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::transformer::ResidualTrace;
use crate::tensor::{dot, Tensor};

/// Mean residual stream of one prompt at one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeExample {
    pub mean_stream: Vec<f32>,
    /// Party the prompt is about.
    pub party: usize,
    pub layer: usize,
}

impl ProbeExample {
    /// 1 when the prompt concerns `target`, else 0.
    pub fn label(&self, target: usize) -> u8 {
        u8::from(self.party == target)
    }
}

/// One example per trace, averaging the post-block stream of `layer` over
/// every recorded position. Order follows `traces`.
pub fn build_dataset(traces: &[(ResidualTrace, usize)], layer: usize) -> Result<Vec<ProbeExample>> {
    if traces.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    traces
        .iter()
        .map(|(trace, party)| {
            let mean_stream = trace.mean_post(layer)?;
            if mean_stream.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("build_dataset"));
            }
            Ok(ProbeExample {
                mean_stream,
                party: *party,
                layer,
            })
        })
        .collect()
}

/// Layers eligible for probing, 1-based and inclusive.
///
/// For very shallow models where `floor(0.9 L) < ceil(0.6 L)` the band
/// collapses to the single layer `ceil(0.6 L)`.
pub fn layer_band(n_layers: usize) -> core::ops::RangeInclusive<usize> {
    let lo = (6 * n_layers).div_ceil(10).max(1);
    let hi = (9 * n_layers / 10).max(lo);
    lo..=hi.min(n_layers)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeHyper {
    pub seed: u64,
    pub epochs: usize,
    pub lr: f64,
    /// Floor of the cosine schedule, reached after the last epoch.
    pub lr_min: f64,
    pub dropout: f64,
    pub val_fraction: f64,
    /// Positive-class weight; `None` uses `#neg / #pos` of the training split.
    pub w1: Option<f64>,
    pub use_bias: bool,
}

impl ProbeHyper {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            epochs: 200,
            lr: 1e-3,
            lr_min: 1e-5,
            dropout: 0.1,
            val_fraction: 0.2,
            w1: None,
            use_bias: true,
        }
    }

    /// Learning rate used during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let t = epoch as f64 / self.epochs.max(1) as f64;
        self.lr_min + 0.5 * (self.lr - self.lr_min) * (1.0 + libm::cos(core::f64::consts::PI * t))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub hyper: ProbeHyper,
    pub w1: f64,
    pub n_train: usize,
    pub n_val: usize,
    /// Training loss (no dropout) before the first and after every epoch.
    pub loss_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub party: usize,
    pub layer: usize,
    pub weights: Tensor,
    pub bias: f64,
    pub val_f1: f64,
    pub meta: TrainMeta,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

/// `-log(sigmoid(z))`, stable for large `|z|`.
fn softplus_neg(z: f64) -> f64 {
    if z >= 0.0 {
        libm::log1p(libm::exp(-z))
    } else {
        -z + libm::log1p(libm::exp(z))
    }
}

/// Summed weighted-BCE loss and gradient over a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad_w: Vec<f64>,
    pub grad_b: f64,
}

/// Weighted BCE summed over `xs`. Labels are 0/1.
pub fn weighted_bce(xs: &[&[f32]], ys: &[u8], w1: f64, weights: &[f64], bias: f64) -> LossGrad {
    let mut out = LossGrad {
        loss: 0.0,
        grad_w: vec![0.0; weights.len()],
        grad_b: 0.0,
    };
    for (x, &y) in xs.iter().zip(ys) {
        let z = weights
            .iter()
            .zip(x.iter())
            .map(|(w, &v)| w * f64::from(v))
            .sum::<f64>()
            + bias;
        let p = sigmoid(z);
        let dz = if y == 1 {
            out.loss += w1 * softplus_neg(z);
            -w1 * (1.0 - p)
        } else {
            out.loss += softplus_neg(-z);
            p
        };
        for (g, &v) in out.grad_w.iter_mut().zip(x.iter()) {
            *g += dz * f64::from(v);
        }
        out.grad_b += dz;
    }
    out
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - libm::pow(Self::B1, f64::from(self.t));
        let c2 = 1.0 - libm::pow(Self::B2, f64::from(self.t));
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = Self::B1 * *m + (1.0 - Self::B1) * g;
            *v = Self::B2 * *v + (1.0 - Self::B2) * g * g;
            *p -= lr * (*m / c1) / (libm::sqrt(*v / c2) + Self::EPS);
        }
    }
}

/// Stratified split of example indices into (train, val).
fn stratified_split(labels: &[u8], fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut val = Vec::new();
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(rng);
        let n_val = libm::round(idx.len() as f64 * fraction) as usize;
        let n_val = n_val.min(idx.len().saturating_sub(1));
        val.extend_from_slice(&idx[..n_val]);
        train.extend_from_slice(&idx[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

/// F1 of the positive class at threshold 0.5. Zero when undefined.
pub fn f1_score(probs: &[f64], labels: &[u8]) -> f64 {
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (&p, &y) in probs.iter().zip(labels) {
        match (p >= 0.5, y == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
    }
    let denom = 2 * tp + fp + fneg;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// Area under the ROC curve (Mann-Whitney, ties count one half).
/// `None` when either class is absent.
pub fn auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let pos: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &y)| y == 1)
        .map(|(&s, _)| s)
        .collect();
    let neg: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &y)| y == 0)
        .map(|(&s, _)| s)
        .collect();
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut wins = 0.0;
    for p in &pos {
        for n in &neg {
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    Some(wins / (pos.len() * neg.len()) as f64)
}

/// Trains a probe for `party` on examples drawn from a single layer.
pub fn train_layer(examples: &[ProbeExample], party: usize, hyper: &ProbeHyper) -> Result<Probe> {
    let first = examples.first().ok_or(Error::EmptyCorpus)?;
    let (d, layer) = (first.mean_stream.len(), first.layer);
    if let Some(bad) = examples.iter().find(|e| e.mean_stream.len() != d) {
        return Err(Error::ShapeMismatch {
            op: "train",
            left: vec![d],
            right: vec![bad.mean_stream.len()],
        });
    }
    let labels: Vec<u8> = examples.iter().map(|e| e.label(party)).collect();
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    if n_pos == 0 || n_pos == labels.len() {
        return Err(Error::DegenerateLabels);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let (train_idx, val_idx) = stratified_split(&labels, hyper.val_fraction, &mut rng);
    let train_pos = train_idx.iter().filter(|&&i| labels[i] == 1).count();
    let w1 = hyper
        .w1
        .unwrap_or((train_idx.len() - train_pos) as f64 / train_pos as f64);

    let train_x: Vec<&[f32]> = train_idx.iter().map(|&i| examples[i].mean_stream.as_slice()).collect();
    let train_y: Vec<u8> = train_idx.iter().map(|&i| labels[i]).collect();
    let n = train_x.len() as f64;

    // weights followed by the bias
    let mut params = vec![0.0f64; d + 1];
    let mut adam = Adam::new(d + 1);
    let keep = 1.0 - hyper.dropout;
    let mut dropped = vec![vec![0.0f32; d]; train_x.len()];

    let eval_loss = |params: &[f64]| weighted_bce(&train_x, &train_y, w1, &params[..d], params[d]).loss / n;
    let mut loss_history = Vec::with_capacity(hyper.epochs + 1);
    loss_history.push(eval_loss(&params));

    for epoch in 0..hyper.epochs {
        for (buf, x) in dropped.iter_mut().zip(&train_x) {
            for (b, &v) in buf.iter_mut().zip(x.iter()) {
                *b = if hyper.dropout > 0.0 && rng.random::<f64>() < hyper.dropout {
                    0.0
                } else {
                    (f64::from(v) / keep) as f32
                };
            }
        }
        let batch: Vec<&[f32]> = dropped.iter().map(Vec::as_slice).collect();
        let lg = weighted_bce(&batch, &train_y, w1, &params[..d], params[d]);
        let mut grads: Vec<f64> = lg.grad_w.iter().map(|g| g / n).collect();
        grads.push(if hyper.use_bias { lg.grad_b / n } else { 0.0 });
        adam.step(&mut params, &grads, hyper.lr_at(epoch));

        let loss = eval_loss(&params);
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss(epoch));
        }
        loss_history.push(loss);
    }

    let bias = params[d];
    let weights = Tensor::vector(params[..d].iter().map(|&w| w as f32).collect())?;
    let val_probs: Vec<f64> = val_idx
        .iter()
        .map(|&i| sigmoid(dot(weights.data(), &examples[i].mean_stream) + bias))
        .collect();
    let val_labels: Vec<u8> = val_idx.iter().map(|&i| labels[i]).collect();

    Ok(Probe {
        party,
        layer,
        val_f1: f1_score(&val_probs, &val_labels),
        weights,
        bias,
        meta: TrainMeta {
            hyper: hyper.clone(),
            w1,
            n_train: train_idx.len(),
            n_val: val_idx.len(),
            loss_history,
        },
    })
}

/// Trains one probe per layer in [`layer_band`] and keeps the best validation
/// F1; ties go to the lower layer. `by_layer[l - 1]` holds layer `l`'s examples.
pub fn train(by_layer: &[Vec<ProbeExample>], party: usize, hyper: &ProbeHyper) -> Result<Probe> {
    if by_layer.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut best: Option<Probe> = None;
    for layer in layer_band(by_layer.len()) {
        let probe = train_layer(&by_layer[layer - 1], party, hyper)?;
        if best.as_ref().is_none_or(|b| probe.val_f1 > b.val_f1) {
            best = Some(probe);
        }
    }
    best.ok_or(Error::EmptyCorpus)
}

impl Probe {
    /// `P(party | x̄)`; no dropout at inference.
    pub fn predict(&self, mean_stream: &[f32]) -> Result<f64> {
        if mean_stream.len() != self.weights.len() {
            return Err(Error::ShapeMismatch {
                op: "predict",
                left: vec![self.weights.len()],
                right: vec![mean_stream.len()],
            });
        }
        Ok(sigmoid(dot(self.weights.data(), mean_stream) + self.bias))
    }
}
