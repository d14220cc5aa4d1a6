//! Stain deconvolution, stain augmentation and consistency-regularized
//! training for H&E histology tiles.
//!
//! * [`color`]: RGB <-> optical density, tissue masks.
//! * [`stain`]: Macenko and Vahadane stain matrices, per-pixel NNLS.
//! * [`augment`]: concentration perturbation and stain normalization.
//! * [`train`]: feature extractor + classifier trained on `L_c + L_s`.
//! * [`eval`]: metrics, label maps, synthetic domains, cross-domain runs.

pub mod augment;
pub mod color;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod rng;
pub mod stain;
pub mod train;

pub use augment::{
    augment, augment_indexed, normalize_to_target, perturb_concentrations, sample_perturbation,
    stain_reconstruction, Augmentation, PerturbParams, StainDraw,
};
pub use color::{od_to_rgb, rgb_to_od, tissue_mask, OdImage, RgbImage, TissueMask};
pub use dataset::Dataset;
pub use error::{Error, Result};
pub use eval::{render_synthetic, ExperimentSpec, Metrics, SyntheticDomainSpec};
pub use stain::{
    canonical_stain_order, estimate_macenko, estimate_vahadane, solve_concentrations,
    sparse_nmf, ConcentrationMap, SnmfConfig, StainMatrix, StainMethod, StainProfile,
};
pub use train::{LossBreakdown, ModelParams, TrainConfig};
