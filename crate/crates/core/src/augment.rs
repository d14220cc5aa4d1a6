//! Stain augmentation by concentration perturbation, and stain normalization.
//!
//! An image is deconvolved into per-pixel stain concentrations under a stain
//! matrix `W`. Each augmentation scales and shifts the concentrations of each
//! stain independently, `c' = max(0, alpha * c + beta)`, and re-renders
//! `W c'` back to RGB. Geometry is never touched.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::color::{od_to_rgb, rgb_to_od, RgbImage, DEFAULT_I0};
use crate::error::{Error, Result};
use crate::rng;
use crate::stain::{
    estimate_vahadane, solve_concentrations, ConcentrationMap, SnmfConfig, StainMatrix,
    StainProfile,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbParams {
    /// Half-width of the multiplicative range around 1.
    pub sigma1: f64,
    /// Half-width of the additive range around 0, in concentration units.
    pub sigma2: f64,
    pub n_augment: usize,
    pub seed: u64,
}

impl Default for PerturbParams {
    fn default() -> Self {
        Self { sigma1: 0.2, sigma2: 0.2, n_augment: 6, seed: 42 }
    }
}

impl PerturbParams {
    pub fn identity(n_augment: usize, seed: u64) -> Self {
        Self { sigma1: 0.0, sigma2: 0.0, n_augment, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.sigma1) {
            return Err(Error::InvalidParameter(format!("sigma1 = {} outside [0, 1)", self.sigma1)));
        }
        if !(self.sigma2 >= 0.0) || !self.sigma2.is_finite() {
            return Err(Error::InvalidParameter(format!("sigma2 = {} must be >= 0", self.sigma2)));
        }
        if self.n_augment < 1 {
            return Err(Error::InvalidParameter("n_augment must be >= 1".into()));
        }
        Ok(())
    }
}

/// One sampled perturbation: per-stain scale `alpha` and shift `beta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StainDraw {
    pub alpha: [f64; 2],
    pub beta: [f64; 2],
}

impl StainDraw {
    pub const IDENTITY: StainDraw = StainDraw { alpha: [1.0, 1.0], beta: [0.0, 0.0] };
}

/// `alpha_s ~ U(1 - sigma1, 1 + sigma1)`, `beta_s ~ U(-sigma2, sigma2)`,
/// drawn in the order alpha_H, alpha_E, beta_H, beta_E.
pub fn sample_perturbation<R: Rng + ?Sized>(rng: &mut R, p: &PerturbParams) -> StainDraw {
    // Zero ranges give exactly 1 and +0.0.
    let mut sym = |half: f64| half * (2.0 * rng.random::<f64>() - 1.0) + 0.0;
    let a_h = 1.0 + sym(p.sigma1);
    let a_e = 1.0 + sym(p.sigma1);
    let b_h = sym(p.sigma2);
    let b_e = sym(p.sigma2);
    StainDraw { alpha: [a_h, a_e], beta: [b_h, b_e] }
}

pub fn perturb_concentrations(c: &ConcentrationMap, d: &StainDraw) -> ConcentrationMap {
    let data = c
        .data()
        .iter()
        .map(|v| {
            [
                (d.alpha[0] * v[0] + d.beta[0]).max(0.0),
                (d.alpha[1] * v[1] + d.beta[1]).max(0.0),
            ]
        })
        .collect();
    ConcentrationMap::new(c.width(), c.height(), data).expect("clamped concentrations")
}

pub fn render(c: &ConcentrationMap, w: &StainMatrix) -> RgbImage {
    od_to_rgb(&c.to_od(w), DEFAULT_I0)
}

/// The image re-rendered from its own concentrations without perturbation.
pub fn stain_reconstruction(img: &RgbImage, w: &StainMatrix) -> RgbImage {
    render(&solve_concentrations(&rgb_to_od(img, DEFAULT_I0), w), w)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Augmentation {
    pub draw: StainDraw,
    pub image: RgbImage,
}

/// `p.n_augment` stain-altered copies of `img`.
pub fn augment(img: &RgbImage, w: &StainMatrix, p: &PerturbParams) -> Result<Vec<Augmentation>> {
    augment_indexed(img, w, p, 0)
}

/// As [`augment`], with the random streams keyed on `(seed, image_index, k)`
/// so that images of a batch get independent draws.
pub fn augment_indexed(
    img: &RgbImage,
    w: &StainMatrix,
    p: &PerturbParams,
    image_index: u64,
) -> Result<Vec<Augmentation>> {
    p.validate()?;
    let conc = solve_concentrations(&rgb_to_od(img, DEFAULT_I0), w);
    Ok((0..p.n_augment as u64)
        .map(|k| {
            let draw = sample_perturbation(&mut rng::stream(p.seed, &[image_index, k]), p);
            Augmentation { draw, image: render(&perturb_concentrations(&conc, &draw), w) }
        })
        .collect())
}

/// Estimates the image's own stain matrix (Vahadane) and augments with it.
pub fn augment_estimated(
    img: &RgbImage,
    p: &PerturbParams,
    snmf: &SnmfConfig,
    od_threshold: f64,
) -> Result<(StainMatrix, Vec<Augmentation>)> {
    let w = estimate_vahadane(img, snmf, od_threshold)?.matrix;
    let out = augment(img, &w, p)?;
    Ok((w, out))
}

/// Re-renders `img` with the stain appearance of `target`.
///
/// Concentrations are solved under the source matrix, rescaled per stain by
/// the ratio of 99th-percentile concentrations, and rendered under the target
/// matrix.
pub fn normalize_to_target(
    img: &RgbImage,
    source: &StainProfile,
    target: &StainProfile,
) -> Result<RgbImage> {
    for (s, (&a, &b)) in
        source.max_concentrations.iter().zip(&target.max_concentrations).enumerate()
    {
        if !(a > 0.0) || !(b > 0.0) {
            return Err(Error::ZeroMaxConcentration(s));
        }
    }
    let scale = [
        target.max_concentrations[0] / source.max_concentrations[0],
        target.max_concentrations[1] / source.max_concentrations[1],
    ];
    let conc = solve_concentrations(&rgb_to_od(img, DEFAULT_I0), &source.matrix);
    let scaled = perturb_concentrations(&conc, &StainDraw { alpha: scale, beta: [0.0, 0.0] });
    Ok(render(&scaled, &target.matrix))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_ranges_give_identity_draw() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = PerturbParams::identity(3, 1);
        for _ in 0..100 {
            let d = sample_perturbation(&mut rng, &p);
            assert_eq!(d, StainDraw::IDENTITY);
            assert!(d.beta.iter().all(|b| b.is_sign_positive()));
        }
    }

    #[test]
    fn draws_are_reproducible() {
        let p = PerturbParams::default();
        let a: Vec<_> = {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            (0..20).map(|_| sample_perturbation(&mut rng, &p)).collect()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let b: Vec<_> = (0..20).map(|_| sample_perturbation(&mut rng, &p)).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn uniform_scale_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let p = PerturbParams { sigma1: 0.2, ..Default::default() };
        let mut sum = 0.0;
        let n = 10_000;
        for _ in 0..n {
            let d = sample_perturbation(&mut rng, &p);
            for a in d.alpha {
                assert!((0.8..=1.2).contains(&a));
                sum += a;
            }
            for b in d.beta {
                assert!((-0.2..=0.2).contains(&b));
            }
        }
        let mean = sum / (2 * n) as f64;
        assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn perturbation_arithmetic() {
        let c = ConcentrationMap::new(1, 1, vec![[1.0, 2.0]]).unwrap();
        let d = StainDraw { alpha: [1.1, 0.9], beta: [0.05, -0.05] };
        let out = perturb_concentrations(&c, &d);
        assert!((out.data()[0][0] - 1.15).abs() < 1e-12);
        assert!((out.data()[0][1] - 1.75).abs() < 1e-12);
        assert_eq!(perturb_concentrations(&c, &StainDraw::IDENTITY), c);
    }

    #[test]
    fn negative_shift_clamps_at_zero() {
        let c = ConcentrationMap::new(2, 1, vec![[0.0, 0.0]; 2]).unwrap();
        let d = StainDraw { alpha: [1.0, 1.0], beta: [-0.1, -0.1] };
        assert!(perturb_concentrations(&c, &d).data().iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn params_validation() {
        assert!(PerturbParams::default().validate().is_ok());
        assert!(PerturbParams { sigma1: 1.0, ..Default::default() }.validate().is_err());
        assert!(PerturbParams { sigma2: -0.1, ..Default::default() }.validate().is_err());
        assert!(PerturbParams { n_augment: 0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn zero_max_concentration_rejected() {
        let img = RgbImage::filled(4, 4, [200, 150, 180]);
        let good = StainProfile { matrix: StainMatrix::reference(), max_concentrations: [1.0, 1.0] };
        let bad = StainProfile { max_concentrations: [0.0, 1.0], ..good };
        assert!(matches!(normalize_to_target(&img, &bad, &good), Err(Error::ZeroMaxConcentration(0))));
        assert!(normalize_to_target(&img, &good, &good).is_ok());
    }
}
