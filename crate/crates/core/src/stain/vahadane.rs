//! Vahadane stain estimation: sparse NMF of the tissue OD cloud, seeded with
//! the Macenko estimate of the same pixels.

use nalgebra::DMatrix;

use crate::color::RgbImage;
use crate::error::Result;

use super::macenko::{macenko_from_od, tissue_od_vectors, DEFAULT_ANGLE_PERCENTILE};
use super::matrix::{canonical_stain_order, StainMatrix, StainMethod};
use super::snmf::{sparse_nmf, SnmfConfig};

#[derive(Debug, Clone)]
pub struct VahadaneFit {
    pub matrix: StainMatrix,
    pub iterations: usize,
    pub converged: bool,
    pub objective: f64,
}

pub fn estimate_vahadane(img: &RgbImage, cfg: &SnmfConfig, od_threshold: f64) -> Result<VahadaneFit> {
    cfg.validate()?;
    let pixels = tissue_od_vectors(img, od_threshold)?;
    vahadane_from_od(&pixels, cfg)
}

/// Vahadane estimate from (already sorted) tissue OD vectors.
pub fn vahadane_from_od(pixels: &[[f64; 3]], cfg: &SnmfConfig) -> Result<VahadaneFit> {
    let init = macenko_from_od(pixels, DEFAULT_ANGLE_PERCENTILE)?;
    let w0 = init.to_matrix();
    let w0 = DMatrix::from_column_slice(3, 2, w0.as_slice());
    let v = DMatrix::from_fn(3, pixels.len(), |r, c| pixels[c][r]);
    let res = sparse_nmf(&v, 2, cfg, Some(&w0))?;
    let col = |j: usize| [res.w[(0, j)], res.w[(1, j)], res.w[(2, j)]];
    let matrix = match canonical_stain_order([col(0), col(1)], StainMethod::Vahadane) {
        Ok(m) => m,
        // A column collapsed to zero (all pixels explained by one stain):
        // keep the initial direction for it.
        Err(_) => init.with_method(StainMethod::Vahadane),
    };
    Ok(VahadaneFit {
        matrix,
        iterations: res.iterations,
        converged: res.converged,
        objective: res.final_objective(),
    })
}
