//! Per-pixel nonnegative least squares against a 3x2 stain matrix.

use crate::color::{OdImage, TissueMask};
use crate::error::{Error, Result};

use super::matrix::{dot, StainMatrix};

/// Per-pixel (hematoxylin, eosin) concentrations.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationMap {
    width: usize,
    height: usize,
    data: Vec<[f64; 2]>,
}

impl ConcentrationMap {
    pub fn new(width: usize, height: usize, data: Vec<[f64; 2]>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::ShapeMismatch {
                expected: format!("{} pixels", width * height),
                got: format!("{} pixels", data.len()),
            });
        }
        if data.iter().flatten().any(|&c| !(c >= 0.0)) {
            return Err(Error::InvalidParameter("concentrations must be nonnegative".into()));
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[[f64; 2]] {
        &self.data
    }

    pub(crate) fn from_parts(width: usize, height: usize, data: Vec<[f64; 2]>) -> Self {
        debug_assert_eq!(data.len(), width * height);
        Self { width, height, data }
    }

    /// Renders `W c` for every pixel.
    pub fn to_od(&self, w: &StainMatrix) -> OdImage {
        let data = self.data.iter().flat_map(|&c| w.mix(c)).collect();
        OdImage::new(self.width, self.height, data).expect("dimensions preserved")
    }

    /// 99th-percentile concentration of each stain, over masked pixels when a
    /// mask is given and over all pixels otherwise.
    pub fn percentile_99(&self, mask: Option<&TissueMask>) -> [f64; 2] {
        let mut out = [0.0; 2];
        for (s, slot) in out.iter_mut().enumerate() {
            let mut values: Vec<f64> = match mask {
                Some(m) => self
                    .data
                    .iter()
                    .zip(m.bits())
                    .filter(|(_, &t)| t)
                    .map(|(c, _)| c[s])
                    .collect(),
                None => self.data.iter().map(|c| c[s]).collect(),
            };
            *slot = percentile(&mut values, 99.0);
        }
        out
    }
}

/// Linear-interpolated percentile (`q` in [0, 100]); 0 for an empty slice.
pub(crate) fn percentile(values: &mut [f64], q: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let pos = (q / 100.0) * (values.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let t = pos - lo as f64;
    values[lo] * (1.0 - t) + values[hi] * t
}

/// Precomputed normal equations for one stain matrix.
#[derive(Debug, Clone, Copy)]
pub struct Nnls2 {
    cols: [[f64; 3]; 2],
    gram: [[f64; 2]; 2],
    det: f64,
}

impl Nnls2 {
    pub fn new(w: &StainMatrix) -> Self {
        Self::from_columns(w.stains())
    }

    pub(crate) fn from_columns(cols: [[f64; 3]; 2]) -> Self {
        let g00 = dot(&cols[0], &cols[0]);
        let g01 = dot(&cols[0], &cols[1]);
        let g11 = dot(&cols[1], &cols[1]);
        Self { cols, gram: [[g00, g01], [g01, g11]], det: g00 * g11 - g01 * g01 }
    }

    /// `argmin_{c >= 0} |v - W c|^2`.
    ///
    /// If the unconstrained minimizer is feasible it is optimal. Otherwise the
    /// optimum lies on a face of the orthant, so the two one-stain solutions
    /// (each clamped at zero) are compared and the lower residual wins.
    #[inline]
    pub fn solve(&self, v: &[f64; 3]) -> [f64; 2] {
        let b0 = dot(&self.cols[0], v);
        let b1 = dot(&self.cols[1], v);
        let [[g00, g01], [_, g11]] = self.gram;
        if self.det > 1e-12 * g00 * g11 {
            let c0 = (g11 * b0 - g01 * b1) / self.det;
            let c1 = (g00 * b1 - g01 * b0) / self.det;
            if c0 >= 0.0 && c1 >= 0.0 {
                return [c0, c1];
            }
        }
        let a = if g00 > 0.0 { (b0 / g00).max(0.0) } else { 0.0 };
        let b = if g11 > 0.0 { (b1 / g11).max(0.0) } else { 0.0 };
        // |v - w c|^2 = |v|^2 - 2 c (w.v) + c^2 |w|^2; compare the c-dependent part.
        let ra = a * a * g00 - 2.0 * a * b0;
        let rb = b * b * g11 - 2.0 * b * b1;
        if ra <= rb {
            [a, 0.0]
        } else {
            [0.0, b]
        }
    }
}

/// Nonnegative stain concentrations for every pixel, background included.
pub fn solve_concentrations(od: &OdImage, w: &StainMatrix) -> ConcentrationMap {
    let solver = Nnls2::new(w);
    let data = od.pixels().map(|p| solver.solve(&p)).collect();
    ConcentrationMap::from_parts(od.width(), od.height(), data)
}

/// Squared residual `|v - W c|^2`.
pub fn residual_sq(w: &StainMatrix, v: &[f64; 3], c: [f64; 2]) -> f64 {
    let r = w.mix(c);
    (0..3).map(|k| (v[k] - r[k]).powi(2)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stain::matrix::StainMatrix;

    #[test]
    fn recovers_cone_members() {
        let w = StainMatrix::reference();
        let solver = Nnls2::new(&w);
        for c in [[0.0, 0.0], [1.0, 0.0], [0.0, 2.5], [0.3, 1.7], [2.0, 0.01]] {
            let got = solver.solve(&w.mix(c));
            assert!((got[0] - c[0]).abs() < 1e-6 && (got[1] - c[1]).abs() < 1e-6, "{c:?} {got:?}");
        }
    }

    #[test]
    fn zero_vector_gives_zero() {
        assert_eq!(Nnls2::new(&StainMatrix::reference()).solve(&[0.0; 3]), [0.0, 0.0]);
    }

    #[test]
    fn off_cone_vector_projects_to_face() {
        let w = StainMatrix::reference();
        // Strongly red: best fit uses hematoxylin only.
        let c = Nnls2::new(&w).solve(&[1.0, 0.0, 0.0]);
        assert_eq!(c[1], 0.0);
        assert!(c[0] > 0.0);
        // Negative direction: best nonnegative fit is zero.
        let c = Nnls2::new(&w).solve(&[-1.0, -1.0, -1.0]);
        assert_eq!(c, [0.0, 0.0]);
    }

    #[test]
    fn percentile_interpolates() {
        let mut v: Vec<f64> = (0..=100).map(f64::from).collect();
        assert_eq!(percentile(&mut v, 99.0), 99.0);
        let mut v = vec![0.0, 10.0];
        assert!((percentile(&mut v, 99.0) - 9.9).abs() < 1e-12);
        assert_eq!(percentile(&mut [], 50.0), 0.0);
    }

    #[test]
    fn concentration_map_rejects_negative() {
        assert!(ConcentrationMap::new(1, 1, vec![[-0.1, 0.0]]).is_err());
        assert!(ConcentrationMap::new(2, 1, vec![[0.1, 0.0]]).is_err());
    }
}
