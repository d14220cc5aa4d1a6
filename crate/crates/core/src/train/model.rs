//! Feature extractor `r = A2 relu(A1 x + b1) + b2` and softmax classifier
//! `p = softmax(C r + d)`, stored in one flat parameter vector.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub input: usize,
    pub hidden: usize,
    pub feature: usize,
    pub classes: usize,
}

impl ModelDims {
    /// Flattened `side x side` RGB input, 64 hidden units, 32 features.
    pub fn for_side(side: usize, classes: usize) -> Self {
        Self { input: side * side * 3, hidden: 64, feature: 32, classes }
    }

    pub fn param_count(&self) -> usize {
        self.layout().end
    }

    pub(crate) fn layout(&self) -> Layout {
        let a1 = 0;
        let b1 = a1 + self.hidden * self.input;
        let a2 = b1 + self.hidden;
        let b2 = a2 + self.feature * self.hidden;
        let c = b2 + self.feature;
        let d = c + self.classes * self.feature;
        let end = d + self.classes;
        Layout { a1, b1, a2, b2, c, d, end }
    }
}

/// Offsets of each parameter block in the flat vector.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Layout {
    pub a1: usize,
    pub b1: usize,
    pub a2: usize,
    pub b2: usize,
    pub c: usize,
    pub d: usize,
    pub end: usize,
}

impl Layout {
    pub fn blocks(&self) -> [(usize, usize); 6] {
        [
            (self.a1, self.b1),
            (self.b1, self.a2),
            (self.a2, self.b2),
            (self.b2, self.c),
            (self.c, self.d),
            (self.d, self.end),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub weights: Vec<f64>,
}

pub type FeatureVector = Vec<f64>;

/// Hidden pre-activations and features of one forward pass.
pub(crate) struct Trace {
    pub pre: Vec<f64>,
    pub r: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(dims: ModelDims) -> Self {
        Self { dims, weights: vec![0.0; dims.param_count()] }
    }

    /// He-uniform weights for the ReLU layer, Glorot-uniform elsewhere, zero biases.
    pub fn init(dims: ModelDims, seed: u64) -> Self {
        let mut p = Self::zeros(dims);
        let l = dims.layout();
        let mut rng = rng::stream(seed, &[0x1417]);
        let mut fill = |w: &mut [f64], bound: f64| {
            for v in w {
                *v = rng.random_range(-bound..bound);
            }
        };
        fill(&mut p.weights[l.a1..l.b1], (6.0 / dims.input as f64).sqrt());
        fill(&mut p.weights[l.a2..l.b2], (6.0 / (dims.hidden + dims.feature) as f64).sqrt());
        fill(&mut p.weights[l.c..l.d], (6.0 / (dims.feature + dims.classes) as f64).sqrt());
        p
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite())
    }

    pub(crate) fn trace(&self, x: &[f64]) -> Trace {
        let ModelDims { input, hidden, feature, .. } = self.dims;
        let l = self.dims.layout();
        let w = &self.weights;
        let mut pre = w[l.b1..l.a2].to_vec();
        for (j, pj) in pre.iter_mut().enumerate() {
            let row = &w[l.a1 + j * input..l.a1 + (j + 1) * input];
            *pj += dot(row, x);
        }
        let mut r = w[l.b2..l.c].to_vec();
        for (k, rk) in r.iter_mut().enumerate() {
            let row = &w[l.a2 + k * hidden..l.a2 + (k + 1) * hidden];
            *rk += row.iter().zip(&pre).map(|(a, &h)| a * h.max(0.0)).sum::<f64>();
        }
        debug_assert_eq!(r.len(), feature);
        Trace { pre, r }
    }

    /// Accumulates `d r / d theta` contracted with `g_r` into `grad`.
    pub(crate) fn backprop_features(&self, x: &[f64], trace: &Trace, g_r: &[f64], grad: &mut [f64]) {
        let ModelDims { input, hidden, .. } = self.dims;
        let l = self.dims.layout();
        let w = &self.weights;
        let mut g_h = vec![0.0; hidden];
        for (k, &gk) in g_r.iter().enumerate() {
            if gk == 0.0 {
                continue;
            }
            grad[l.b2 + k] += gk;
            let row = l.a2 + k * hidden;
            for j in 0..hidden {
                grad[row + j] += gk * trace.pre[j].max(0.0);
                g_h[j] += gk * w[row + j];
            }
        }
        for j in 0..hidden {
            if trace.pre[j] <= 0.0 || g_h[j] == 0.0 {
                continue;
            }
            let g = g_h[j];
            grad[l.b1 + j] += g;
            let row = &mut grad[l.a1 + j * input..l.a1 + (j + 1) * input];
            for (gi, &xi) in row.iter_mut().zip(x) {
                *gi += g * xi;
            }
        }
    }

    /// Class logits `C r + d`.
    pub fn logits(&self, r: &[f64]) -> Vec<f64> {
        let ModelDims { feature, classes, .. } = self.dims;
        let l = self.dims.layout();
        let w = &self.weights;
        (0..classes)
            .map(|i| w[l.d + i] + dot(&w[l.c + i * feature..l.c + (i + 1) * feature], r))
            .collect()
    }

    /// Accumulates the classifier gradient for upstream `g_logits` and
    /// returns `C^T g_logits`.
    pub(crate) fn backprop_classifier(&self, r: &[f64], g_logits: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let feature = self.dims.feature;
        let l = self.dims.layout();
        let mut g_r = vec![0.0; feature];
        for (i, &gi) in g_logits.iter().enumerate() {
            grad[l.d + i] += gi;
            let row = l.c + i * feature;
            for k in 0..feature {
                grad[row + k] += gi * r[k];
                g_r[k] += gi * self.weights[row + k];
            }
        }
        g_r
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `f_e(x)`.
pub fn forward_features(params: &ModelParams, x: &[f64]) -> Result<FeatureVector> {
    if x.len() != params.dims.input {
        return Err(Error::ShapeMismatch {
            expected: format!("input of length {}", params.dims.input),
            got: format!("length {}", x.len()),
        });
    }
    Ok(params.trace(x).r)
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `f_c(r)`: class probabilities.
pub fn classify(params: &ModelParams, r: &[f64]) -> Result<Vec<f64>> {
    if r.len() != params.dims.feature {
        return Err(Error::DimensionMismatch { expected: params.dims.feature, got: r.len() });
    }
    Ok(softmax(&params.logits(r)))
}

/// Predicted class of a preprocessed input.
pub fn predict(params: &ModelParams, x: &[f64]) -> Result<usize> {
    let r = forward_features(params, x)?;
    let logits = params.logits(&r);
    Ok(logits
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0)
}
