//! Stain matrix estimation (Macenko, Vahadane) and concentration solving.

mod macenko;
mod matrix;
mod nnls;
pub mod snmf;
mod vahadane;

pub use macenko::{
    estimate_macenko, macenko_from_od, tissue_od_vectors, DEFAULT_ANGLE_PERCENTILE,
    DEGENERATE_RATIO, MIN_TISSUE_PIXELS,
};
pub use matrix::{angle_deg, canonical_stain_order, StainMatrix, StainMethod, StainProfile};
pub use nnls::{residual_sq, solve_concentrations, ConcentrationMap, Nnls2};
pub use snmf::{sparse_nmf, SnmfConfig, SnmfResult};
pub use vahadane::{estimate_vahadane, vahadane_from_od, VahadaneFit};

use crate::color::{rgb_to_od, tissue_mask, RgbImage, DEFAULT_I0};

/// Stain matrix plus 99th-percentile tissue concentrations of `img`.
pub fn profile_image(img: &RgbImage, matrix: StainMatrix, od_threshold: f64) -> StainProfile {
    let od = rgb_to_od(img, DEFAULT_I0);
    let mask = tissue_mask(&od, od_threshold);
    let conc = solve_concentrations(&od, &matrix);
    let mask = (mask.count() > 0).then_some(&mask);
    StainProfile { matrix, max_concentrations: conc.percentile_99(mask) }
}
