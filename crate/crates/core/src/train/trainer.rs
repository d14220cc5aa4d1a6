//! Minibatch SGD on `L = L_c + L_s` with a shared feature extractor.
//!
//! Each source image `x` goes through `f_e` and `f_c` for the cross-entropy
//! term. When consistency is enabled its stain-augmented views `x'_i` go
//! through the same `f_e` only and contribute through `L_s`; they receive no
//! classification loss of their own.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{augment_indexed, PerturbParams};
use crate::color::RgbImage;
use crate::error::{Error, Result};
use crate::rng;
use crate::stain::{estimate_vahadane, SnmfConfig, StainMatrix};

use super::loss::{cross_entropy, ConsistencyReduction, LossBreakdown};
use super::model::{softmax, ModelDims, ModelParams};

const SHUFFLE_STREAM: u64 = 0x5348;
const AUGMENT_STREAM: u64 = 0x4155;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub perturb: PerturbParams,
    pub use_consistency: bool,
    pub reduction: ConsistencyReduction,
    /// Inputs are area-downsampled to `input_side x input_side`.
    pub input_side: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            epochs: 10,
            batch_size: 16,
            perturb: PerturbParams::default(),
            use_consistency: true,
            reduction: ConsistencyReduction::Mean,
            input_side: 32,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::InvalidParameter(format!("lr = {} must be >= 0", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch_size must be >= 1".into()));
        }
        if self.input_side == 0 {
            return Err(Error::InvalidParameter("input_side must be >= 1".into()));
        }
        self.perturb.validate()
    }
}

/// A training example: image already at the model's input side.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: RgbImage,
    pub y: usize,
}

impl Sample {
    pub fn new(image: &RgbImage, y: usize, side: usize) -> Self {
        Self { x: image.downsample_area(side), y }
    }
}

/// Channels scaled to [0, 1] and flattened row-major.
pub fn preprocess(img: &RgbImage) -> Vec<f64> {
    img.data().iter().map(|&v| v as f64 / 255.0).collect()
}

/// A sample's network input and the inputs of its augmented views.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSample {
    pub x: Vec<f64>,
    pub y: usize,
    pub augmented: Vec<Vec<f64>>,
}

/// Produces stain-altered views of training images.
pub trait Augmenter: Sync {
    /// `p.n_augment` views of sample `index`; `p.seed` is already specific to
    /// the epoch.
    fn views(&self, index: usize, image: &RgbImage, p: &PerturbParams) -> Result<Vec<RgbImage>>;
}

/// Concentration-perturbation augmenter with one stain matrix per sample, or
/// a single matrix shared by all samples.
#[derive(Debug, Clone)]
pub struct StainAugmenter {
    matrices: Vec<StainMatrix>,
    shared: Option<StainMatrix>,
}

impl StainAugmenter {
    pub fn fixed(matrix: StainMatrix) -> Self {
        Self { matrices: Vec::new(), shared: Some(matrix) }
    }

    pub fn per_sample(matrices: Vec<StainMatrix>) -> Self {
        Self { matrices, shared: None }
    }

    /// Estimates each image's own matrix (Vahadane). Images whose tissue is
    /// too sparse or single-coloured fall back to `fallback`; the number of
    /// such images is returned alongside.
    pub fn estimate(
        images: &[RgbImage],
        snmf: &SnmfConfig,
        od_threshold: f64,
        fallback: StainMatrix,
    ) -> Result<(Self, usize)> {
        let fits: Vec<Result<Option<StainMatrix>>> = images
            .par_iter()
            .map(|img| match estimate_vahadane(img, snmf, od_threshold) {
                Ok(fit) => Ok(Some(fit.matrix)),
                Err(e) if e.is_domain() => Ok(None),
                Err(e) => Err(e),
            })
            .collect();
        let mut fallbacks = 0;
        let mut matrices = Vec::with_capacity(images.len());
        for fit in fits {
            matrices.push(fit?.unwrap_or_else(|| {
                fallbacks += 1;
                fallback
            }));
        }
        Ok((Self::per_sample(matrices), fallbacks))
    }

    pub fn matrix(&self, index: usize) -> &StainMatrix {
        self.shared.as_ref().unwrap_or_else(|| &self.matrices[index])
    }
}

impl Augmenter for StainAugmenter {
    fn views(&self, index: usize, image: &RgbImage, p: &PerturbParams) -> Result<Vec<RgbImage>> {
        Ok(augment_indexed(image, self.matrix(index), p, index as u64)?
            .into_iter()
            .map(|a| a.image)
            .collect())
    }
}

/// Builds network inputs for `indices` of `samples`, including augmented
/// views (seeded by `(cfg.seed, epoch, sample index, view index)`) when
/// consistency is on.
pub fn prepare_batch(
    samples: &[Sample],
    indices: &[usize],
    epoch: usize,
    augmenter: &dyn Augmenter,
    cfg: &TrainConfig,
) -> Result<Vec<PreparedSample>> {
    let perturb = PerturbParams {
        seed: rng::derive_seed(cfg.seed, &[AUGMENT_STREAM, epoch as u64]),
        ..cfg.perturb
    };
    indices
        .par_iter()
        .map(|&i| {
            let s = &samples[i];
            let augmented = if cfg.use_consistency {
                augmenter.views(i, &s.x, &perturb)?.iter().map(preprocess).collect()
            } else {
                Vec::new()
            };
            Ok(PreparedSample { x: preprocess(&s.x), y: s.y, augmented })
        })
        .collect()
}

/// Per-sample loss and gradient of `l_c + l_s` (unscaled by batch size).
fn sample_loss_grad(
    params: &ModelParams,
    s: &PreparedSample,
    reduction: ConsistencyReduction,
    grad: &mut [f64],
) -> (f64, f64) {
    let trace = params.trace(&s.x);
    let p = softmax(&params.logits(&trace.r));
    let l_c = cross_entropy(&p, s.y);
    let mut g_logits = p;
    g_logits[s.y] -= 1.0;
    let mut g_r = params.backprop_classifier(&trace.r, &g_logits, grad);

    let mut l_s = 0.0;
    if !s.augmented.is_empty() {
        let w = reduction.weight(s.augmented.len());
        for xa in &s.augmented {
            let ta = params.trace(xa);
            let diff: Vec<f64> = trace.r.iter().zip(&ta.r).map(|(a, b)| a - b).collect();
            l_s += diff.iter().map(|d| d * d).sum::<f64>();
            let g_aug: Vec<f64> = diff.iter().map(|d| -2.0 * w * d).collect();
            for (g, d) in g_r.iter_mut().zip(&diff) {
                *g += 2.0 * w * d;
            }
            params.backprop_features(xa, &ta, &g_aug, grad);
        }
        l_s *= w;
    }
    params.backprop_features(&s.x, &trace, &g_r, grad);
    (l_c, l_s)
}

/// Batch-mean losses and gradient. Samples are processed in parallel and
/// reduced in index order, so the result is bit-reproducible.
pub fn batch_loss_grad(
    params: &ModelParams,
    batch: &[PreparedSample],
    reduction: ConsistencyReduction,
) -> (LossBreakdown, Vec<f64>) {
    let n = params.weights.len();
    let parts: Vec<(f64, f64, Vec<f64>)> = batch
        .par_iter()
        .map(|s| {
            let mut g = vec![0.0; n];
            let (l_c, l_s) = sample_loss_grad(params, s, reduction, &mut g);
            (l_c, l_s, g)
        })
        .collect();
    let inv = 1.0 / batch.len() as f64;
    let mut grad = vec![0.0; n];
    let (mut l_c, mut l_s) = (0.0, 0.0);
    for (c, s, g) in &parts {
        l_c += c;
        l_s += s;
        for (acc, v) in grad.iter_mut().zip(g) {
            *acc += v;
        }
    }
    grad.iter_mut().for_each(|g| *g *= inv);
    (LossBreakdown::new(l_c * inv, l_s * inv), grad)
}

/// Batch-mean loss only.
pub fn batch_loss(
    params: &ModelParams,
    batch: &[PreparedSample],
    reduction: ConsistencyReduction,
) -> LossBreakdown {
    let (mut l_c, mut l_s) = (0.0, 0.0);
    for s in batch {
        let r = params.trace(&s.x).r;
        l_c += cross_entropy(&softmax(&params.logits(&r)), s.y);
        if !s.augmented.is_empty() {
            let w = reduction.weight(s.augmented.len());
            let mut acc = 0.0;
            for xa in &s.augmented {
                let ra = params.trace(xa).r;
                acc += r.iter().zip(&ra).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            }
            l_s += acc * w;
        }
    }
    let inv = 1.0 / batch.len() as f64;
    LossBreakdown::new(l_c * inv, l_s * inv)
}

/// One SGD step on prepared inputs.
pub fn sgd_step(
    params: &ModelParams,
    batch: &[PreparedSample],
    cfg: &TrainConfig,
) -> Result<(ModelParams, LossBreakdown)> {
    if batch.is_empty() {
        return Err(Error::InvalidParameter("empty batch".into()));
    }
    let (losses, grad) = batch_loss_grad(params, batch, cfg.reduction);
    let mut next = params.clone();
    if cfg.lr != 0.0 {
        for (w, g) in next.weights.iter_mut().zip(&grad) {
            *w -= cfg.lr * g;
        }
    }
    Ok((next, losses))
}

/// Augments the batch (when consistency is on) and takes one SGD step.
pub fn train_step(
    params: &ModelParams,
    samples: &[Sample],
    indices: &[usize],
    epoch: usize,
    augmenter: &dyn Augmenter,
    cfg: &TrainConfig,
) -> Result<(ModelParams, LossBreakdown)> {
    let prepared = prepare_batch(samples, indices, epoch, augmenter, cfg)?;
    sgd_step(params, &prepared, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogRow {
    pub epoch: usize,
    pub step: usize,
    pub l_c: f64,
    pub l_s: f64,
    pub l_total: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub log: Vec<LogRow>,
}

impl TrainOutcome {
    pub fn final_loss(&self) -> Option<LossBreakdown> {
        self.log.last().map(|r| LossBreakdown { l_c: r.l_c, l_s: r.l_s, l_total: r.l_total })
    }
}

/// Epoch order of sample indices.
pub fn epoch_order(n: usize, epoch: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, &[SHUFFLE_STREAM, epoch as u64]));
    order
}

/// Full training run from freshly initialized parameters.
pub fn train(
    samples: &[Sample],
    classes: usize,
    augmenter: &dyn Augmenter,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let params = ModelParams::init(ModelDims::for_side(cfg.input_side, classes), cfg.seed);
    train_from(params, samples, augmenter, cfg)
}

pub fn train_from(
    mut params: ModelParams,
    samples: &[Sample],
    augmenter: &dyn Augmenter,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::InvalidParameter("no training samples".into()));
    }
    if let Some(s) = samples.iter().find(|s| s.y >= params.dims.classes) {
        return Err(Error::ClassOutOfRange { index: s.y, classes: params.dims.classes });
    }
    let mut log = Vec::new();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let order = epoch_order(samples.len(), epoch, cfg.seed);
        for chunk in order.chunks(cfg.batch_size) {
            let (next, losses) = train_step(&params, samples, chunk, epoch, augmenter, cfg)?;
            params = next;
            log.push(LogRow {
                epoch,
                step,
                l_c: losses.l_c,
                l_s: losses.l_s,
                l_total: losses.l_total,
            });
            step += 1;
        }
    }
    Ok(TrainOutcome { params, log })
}

/// Predicted classes for a set of images.
pub fn predict_all(params: &ModelParams, images: &[RgbImage], side: usize) -> Vec<usize> {
    images
        .par_iter()
        .map(|img| {
            let x = preprocess(&img.downsample_area(side));
            let r = params.trace(&x).r;
            let logits = params.logits(&r);
            (0..logits.len()).fold(0, |best, i| if logits[i] > logits[best] { i } else { best })
        })
        .collect()
}

/// Writes the training log as `epoch,step,l_c,l_s,l_total`.
pub fn write_log_csv<W: std::io::Write>(log: &[LogRow], out: W) -> std::io::Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(out);
    writeln!(w, "epoch,step,l_c,l_s,l_total")?;
    for r in log {
        writeln!(w, "{},{},{},{},{}", r.epoch, r.step, r.l_c, r.l_s, r.l_total)?;
    }
    w.flush()
}
