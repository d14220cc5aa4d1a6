//! Macenko stain estimation: project tissue OD onto its top-2 principal plane
//! and take robust extreme angles as the stain directions.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use crate::color::{rgb_to_od, tissue_mask, RgbImage, DEFAULT_I0};
use crate::error::{Error, Result};

use super::matrix::{canonical_stain_order, StainMatrix, StainMethod};
use super::nnls::percentile;

/// Fewest tissue pixels accepted by the estimators.
pub const MIN_TISSUE_PIXELS: usize = 100;

/// Ratio of second to first covariance eigenvalue below which the tissue
/// colour cloud is treated as rank 1.
pub const DEGENERATE_RATIO: f64 = 1e-8;

pub const DEFAULT_ANGLE_PERCENTILE: f64 = 1.0;

/// OD vectors of the tissue pixels of `img`, sorted lexicographically so that
/// downstream estimates do not depend on pixel order.
pub fn tissue_od_vectors(img: &RgbImage, od_threshold: f64) -> Result<Vec<[f64; 3]>> {
    let od = rgb_to_od(img, DEFAULT_I0);
    let mask = tissue_mask(&od, od_threshold);
    let mut pixels: Vec<[f64; 3]> = od
        .pixels()
        .zip(mask.bits())
        .filter(|(_, &t)| t)
        .map(|(p, _)| p)
        .collect();
    if pixels.len() < MIN_TISSUE_PIXELS {
        return Err(Error::InsufficientTissue { found: pixels.len(), required: MIN_TISSUE_PIXELS });
    }
    sort_pixels(&mut pixels);
    Ok(pixels)
}

pub(crate) fn sort_pixels(pixels: &mut [[f64; 3]]) {
    pixels.sort_by(|a, b| {
        a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])).then(a[2].total_cmp(&b[2]))
    });
}

pub fn estimate_macenko(
    img: &RgbImage,
    od_threshold: f64,
    angle_percentile: f64,
) -> Result<StainMatrix> {
    let pixels = tissue_od_vectors(img, od_threshold)?;
    macenko_from_od(&pixels, angle_percentile)
}

/// Macenko estimate from tissue OD vectors.
pub fn macenko_from_od(pixels: &[[f64; 3]], angle_percentile: f64) -> Result<StainMatrix> {
    if !(0.0..50.0).contains(&angle_percentile) {
        return Err(Error::InvalidParameter(format!(
            "angle percentile {angle_percentile} outside [0, 50)"
        )));
    }
    let n = pixels.len();
    if n < MIN_TISSUE_PIXELS {
        return Err(Error::InsufficientTissue { found: n, required: MIN_TISSUE_PIXELS });
    }

    let mut mean = Vector3::zeros();
    for p in pixels {
        mean += Vector3::from(*p);
    }
    mean /= n as f64;
    let mut cov = Matrix3::zeros();
    for p in pixels {
        let d = Vector3::from(*p) - mean;
        cov += d * d.transpose();
    }
    cov /= (n - 1).max(1) as f64;

    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let s1 = eig.eigenvalues[order[0]].max(0.0);
    let s2 = eig.eigenvalues[order[1]].max(0.0);
    if s2 <= DEGENERATE_RATIO * s1 {
        return Err(Error::DegenerateColor { s1, s2 });
    }
    let e1: Vector3<f64> = eig.eigenvectors.column(order[0]).into();
    let e2: Vector3<f64> = eig.eigenvectors.column(order[1]).into();
    let normal = e1.cross(&e2).normalize();

    // Orient the in-plane basis on the mean colour so every tissue angle sits
    // well inside (-90, 90) degrees and no wrap-around occurs.
    let in_plane = mean - normal * normal.dot(&mean);
    let u1 = if in_plane.norm() > 1e-12 {
        in_plane.normalize()
    } else if e1.dot(&mean) >= 0.0 {
        e1
    } else {
        -e1
    };
    let u2 = normal.cross(&u1);

    let mut angles: Vec<f64> = pixels
        .iter()
        .map(|p| {
            let v = Vector3::from(*p);
            v.dot(&u2).atan2(v.dot(&u1))
        })
        .collect();
    let lo = percentile(&mut angles, angle_percentile);
    let hi = percentile(&mut angles, 100.0 - angle_percentile);

    let direction = |phi: f64| -> [f64; 3] {
        let v = u1 * phi.cos() + u2 * phi.sin();
        [v[0].max(0.0), v[1].max(0.0), v[2].max(0.0)]
    };
    canonical_stain_order([direction(lo), direction(hi)], StainMethod::Macenko)
        .map_err(|_| Error::DegenerateColor { s1, s2 })
}
