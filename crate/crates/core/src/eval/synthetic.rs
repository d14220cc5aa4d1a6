//! Synthetic stained tiles rendered through the forward stain model.
//!
//! Each class prototype describes a concentration texture: per stain, a mean
//! plus a smoothed Gaussian noise field, clamped at zero. Images are rendered
//! as `od_to_rgb(W C)`, so two domains that share prototypes and differ only in
//! `W` differ only in stain appearance.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::color::{od_to_rgb, RgbImage, DEFAULT_I0};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng;
use crate::stain::{canonical_stain_order, ConcentrationMap, StainMatrix, StainMethod};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassPrototype {
    pub name: String,
    /// Mean (hematoxylin, eosin) concentration.
    pub mean: [f64; 2],
    /// Standard deviation of the concentration noise per stain.
    pub noise: [f64; 2],
    /// Box-blur radius in pixels applied to the noise field (0 = white noise).
    pub scale: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticDomainSpec {
    /// Hematoxylin and eosin OD directions; normalized on use.
    pub stains: [[f64; 3]; 2],
    pub prototypes: Vec<ClassPrototype>,
    pub n_per_class: usize,
    #[serde(default = "default_side")]
    pub side: usize,
    pub seed: u64,
}

fn default_side() -> usize {
    32
}

impl SyntheticDomainSpec {
    pub fn matrix(&self) -> Result<StainMatrix> {
        if self.stains.iter().flatten().any(|&v| !(v >= 0.0)) {
            return Err(Error::InvalidParameter("synthetic stains must be nonnegative".into()));
        }
        let m = canonical_stain_order(self.stains, StainMethod::Reference)?;
        let h = self.stains[0];
        let norm = h.iter().map(|v| v * v).sum::<f64>().sqrt();
        if m.hematoxylin() != h.map(|v| v / norm) {
            return Err(Error::InvalidParameter(
                "synthetic stains must be listed hematoxylin first".into(),
            ));
        }
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        self.matrix()?;
        if self.prototypes.is_empty() {
            return Err(Error::InvalidParameter("at least one class prototype required".into()));
        }
        if self.side == 0 {
            return Err(Error::InvalidParameter("side must be positive".into()));
        }
        for p in &self.prototypes {
            if p.mean.iter().chain(&p.noise).any(|&v| !(v >= 0.0) || !v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "prototype {:?} must have nonnegative finite mean and noise",
                    p.name
                )));
            }
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        self.prototypes.iter().map(|p| p.name.clone()).collect()
    }

    /// Same textures rendered under different stains.
    pub fn with_stains(&self, stains: [[f64; 3]; 2]) -> Self {
        Self { stains, ..self.clone() }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

/// Concentration field for image `index` of class `class`.
pub fn sample_concentrations(
    spec: &SyntheticDomainSpec,
    class: usize,
    index: usize,
) -> ConcentrationMap {
    let proto = &spec.prototypes[class];
    let side = spec.side;
    let mut rng = rng::stream(spec.seed, &[class as u64, index as u64]);
    let mut channels = [Vec::new(), Vec::new()];
    for (s, out) in channels.iter_mut().enumerate() {
        let mut field: Vec<f64> =
            (0..side * side).map(|_| StandardNormal.sample(&mut rng)).collect();
        if proto.scale > 0 {
            box_blur_periodic(&mut field, side, proto.scale);
            box_blur_periodic(&mut field, side, proto.scale);
        }
        let mean = field.iter().sum::<f64>() / field.len() as f64;
        let var = field.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / field.len() as f64;
        let inv = if var > 0.0 { 1.0 / var.sqrt() } else { 0.0 };
        *out = field
            .iter()
            .map(|v| (proto.mean[s] + proto.noise[s] * (v - mean) * inv).max(0.0))
            .collect();
    }
    let data = channels[0].iter().zip(&channels[1]).map(|(&h, &e)| [h, e]).collect();
    ConcentrationMap::new(side, side, data).expect("clamped nonnegative")
}

pub fn render_image(spec: &SyntheticDomainSpec, w: &StainMatrix, class: usize, index: usize) -> RgbImage {
    od_to_rgb(&sample_concentrations(spec, class, index).to_od(w), DEFAULT_I0)
}

/// All `n_per_class` images of every class, class-major order.
pub fn render_synthetic(spec: &SyntheticDomainSpec) -> Result<Dataset> {
    spec.validate()?;
    let w = spec.matrix()?;
    let mut images = Vec::with_capacity(spec.prototypes.len() * spec.n_per_class);
    let mut labels = Vec::with_capacity(images.capacity());
    for class in 0..spec.prototypes.len() {
        for i in 0..spec.n_per_class {
            images.push(render_image(spec, &w, class, i));
            labels.push(class);
        }
    }
    Ok(Dataset { images, labels, class_names: spec.class_names() })
}

fn box_blur_periodic(field: &mut [f64], side: usize, radius: usize) {
    let width = 2 * radius + 1;
    let mut tmp = vec![0.0; field.len()];
    for y in 0..side {
        for x in 0..side {
            let mut acc = 0.0;
            for d in 0..width {
                let xx = (x + side * width + d - radius) % side;
                acc += field[y * side + xx];
            }
            tmp[y * side + x] = acc / width as f64;
        }
    }
    for y in 0..side {
        for x in 0..side {
            let mut acc = 0.0;
            for d in 0..width {
                let yy = (y + side * width + d - radius) % side;
                acc += tmp[yy * side + x];
            }
            field[y * side + x] = acc / width as f64;
        }
    }
}

/// Source-domain directions: the target pair rotated within its own plane
/// (H - 0.15 E, E + 0.3 H), so both domains share one OD plane.
pub const SOURCE_STAINS: [[f64; 3]; 2] = [[0.7204, 0.6213, 0.3081], [0.2129, 0.9642, 0.1583]];
/// Target-domain directions: a distinctly different H&E appearance.
pub const TARGET_STAINS: [[f64; 3]; 2] = [[0.65, 0.70, 0.29], [0.07, 0.99, 0.11]];

/// Four tissue-like classes at 32x32.
pub fn default_prototypes() -> Vec<ClassPrototype> {
    let proto = |name: &str, mean: [f64; 2], noise: [f64; 2], scale: usize| ClassPrototype {
        name: name.into(),
        mean,
        noise,
        scale,
    };
    vec![
        proto("nuclei_dense", [0.9, 0.3], [0.45, 0.3], 1),
        proto("stroma", [0.3, 0.9], [0.3, 0.45], 3),
        proto("mixed_fine", [0.6, 0.6], [0.5, 0.5], 0),
        proto("mixed_coarse", [0.6, 0.6], [0.5, 0.5], 4),
    ]
}

/// One class of white-noise textures centred at zero concentration, so each
/// stain is absent from about half the pixels and pure-stain pixels are
/// common. Used to check stain recovery.
pub fn sparse_recovery_spec(stains: [[f64; 3]; 2], n: usize, seed: u64) -> SyntheticDomainSpec {
    SyntheticDomainSpec {
        stains,
        prototypes: vec![ClassPrototype {
            name: "sparse".into(),
            mean: [0.0, 0.0],
            noise: [0.8, 0.8],
            scale: 0,
        }],
        n_per_class: n,
        side: 32,
        seed,
    }
}

pub fn default_source_spec() -> SyntheticDomainSpec {
    SyntheticDomainSpec {
        stains: SOURCE_STAINS,
        prototypes: default_prototypes(),
        n_per_class: 200,
        side: 32,
        seed: 2024,
    }
}
