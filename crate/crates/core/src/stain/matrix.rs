use std::fmt;
use std::path::Path;

use nalgebra::{Matrix3x2, Vector3};
use serde::Deserialize;

use crate::error::{Error, Result};

/// How a stain matrix was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StainMethod {
    Macenko,
    Vahadane,
    Reference,
}

impl StainMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            StainMethod::Macenko => "macenko",
            StainMethod::Vahadane => "vahadane",
            StainMethod::Reference => "reference",
        }
    }
}

impl fmt::Display for StainMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Two unit-norm, nonnegative OD colour vectors: hematoxylin first, eosin second.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StainMatrix {
    stains: [[f64; 3]; 2],
    method: StainMethod,
}

const UNIT_NORM_TOL: f64 = 1e-9;

impl StainMatrix {
    /// Builds a matrix from columns that are already canonical.
    ///
    /// Fails unless every entry is nonnegative, both columns have unit norm
    /// and the hematoxylin column is first under the red/green ordering rule.
    pub fn new(hematoxylin: [f64; 3], eosin: [f64; 3], method: StainMethod) -> Result<Self> {
        for (i, col) in [hematoxylin, eosin].iter().enumerate() {
            if col.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "stain column {i} has a negative or non-finite entry: {col:?}"
                )));
            }
            let n = norm(col);
            if (n - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::InvalidParameter(format!(
                    "stain column {i} has norm {n}, expected 1"
                )));
            }
        }
        if hematoxylin_first(&eosin, &hematoxylin) && !hematoxylin_first(&hematoxylin, &eosin) {
            return Err(Error::InvalidParameter(
                "stain columns are not in hematoxylin/eosin order".into(),
            ));
        }
        Ok(Self { stains: [hematoxylin, eosin], method })
    }

    /// Standard H&E optical density vectors (Ruifrok & Johnston), normalized.
    pub fn reference() -> Self {
        canonical_stain_order([[0.65, 0.70, 0.29], [0.07, 0.99, 0.11]], StainMethod::Reference)
            .expect("reference stains are nonzero")
    }

    pub fn hematoxylin(&self) -> [f64; 3] {
        self.stains[0]
    }

    pub fn eosin(&self) -> [f64; 3] {
        self.stains[1]
    }

    pub fn column(&self, s: usize) -> [f64; 3] {
        self.stains[s]
    }

    pub fn stains(&self) -> [[f64; 3]; 2] {
        self.stains
    }

    pub fn method(&self) -> StainMethod {
        self.method
    }

    pub fn with_method(mut self, method: StainMethod) -> Self {
        self.method = method;
        self
    }

    /// 3x2 matrix with the stains as columns.
    pub fn to_matrix(&self) -> Matrix3x2<f64> {
        Matrix3x2::from_columns(&[Vector3::from(self.stains[0]), Vector3::from(self.stains[1])])
    }

    /// OD produced by concentrations `c` (`W c`).
    #[inline]
    pub fn mix(&self, c: [f64; 2]) -> [f64; 3] {
        let [h, e] = self.stains;
        [h[0] * c[0] + e[0] * c[1], h[1] * c[0] + e[1] * c[1], h[2] * c[0] + e[2] * c[1]]
    }

    /// Angle in degrees between corresponding columns, worst of the two.
    pub fn max_angle_deg(&self, other: &StainMatrix) -> f64 {
        (0..2)
            .map(|s| angle_deg(&self.stains[s], &other.stains[s]))
            .fold(0.0, f64::max)
    }
}

/// Angle between two vectors in degrees.
pub fn angle_deg(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let cross = [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ];
    norm(&cross).atan2(dot(a, b)).to_degrees()
}

#[inline]
pub(crate) fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub(crate) fn norm(a: &[f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

/// `a` belongs before `b`: larger red OD, ties broken by larger green OD.
fn hematoxylin_first(a: &[f64; 3], b: &[f64; 3]) -> bool {
    a[0] > b[0] || (a[0] == b[0] && a[1] >= b[1])
}

/// Normalizes both columns and puts the hematoxylin-like one first.
pub fn canonical_stain_order(raw: [[f64; 3]; 2], method: StainMethod) -> Result<StainMatrix> {
    let mut cols = [[0.0; 3]; 2];
    for (i, col) in raw.iter().enumerate() {
        let n = norm(col);
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::ZeroColumn(i));
        }
        cols[i] = col.map(|v| v / n);
    }
    if !hematoxylin_first(&cols[0], &cols[1]) {
        cols.swap(0, 1);
    }
    Ok(StainMatrix { stains: cols, method })
}

/// A stain matrix together with the 99th-percentile concentrations of the
/// image it was estimated from. This is the unit persisted as JSON.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StainProfile {
    pub matrix: StainMatrix,
    pub max_concentrations: [f64; 2],
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StainFile {
    method: StainMethod,
    stains: [[f64; 3]; 2],
    max_concentrations: [f64; 2],
}

impl StainProfile {
    /// JSON with fixed field order and 17 significant digits per number.
    pub fn to_json(&self) -> String {
        let num = |v: f64| format!("{v:.16e}");
        let vec3 = |c: [f64; 3]| format!("[{}, {}, {}]", num(c[0]), num(c[1]), num(c[2]));
        format!(
            "{{\"method\": \"{}\", \"stains\": [{}, {}], \"max_concentrations\": [{}, {}]}}\n",
            self.matrix.method(),
            vec3(self.matrix.hematoxylin()),
            vec3(self.matrix.eosin()),
            num(self.max_concentrations[0]),
            num(self.max_concentrations[1]),
        )
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: StainFile = serde_json::from_str(text)
            .map_err(|source| Error::Json { context: "stain matrix".into(), source })?;
        let [h, e] = file.stains;
        if h.iter().chain(&e).any(|&v| v < 0.0) {
            return Err(Error::InvalidParameter("stain entries must be nonnegative".into()));
        }
        let unit = |c: &[f64; 3]| (norm(c) - 1.0).abs() <= UNIT_NORM_TOL;
        let matrix = if unit(&h) && unit(&e) {
            StainMatrix::new(h, e, file.method)?
        } else {
            // Re-normalize to absorb decimal rounding in hand-edited files.
            let m = canonical_stain_order([h, e], file.method)?;
            if m.eosin() != e.map(|v| v / norm(&e)) {
                return Err(Error::InvalidParameter(
                    "stain columns are not in hematoxylin/eosin order".into(),
                ));
            }
            m
        };
        Ok(Self { matrix, max_concentrations: file.max_concentrations })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Json { source, .. } => {
                Error::Json { context: path.display().to_string(), source }
            }
            e => e,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(v: [f64; 3]) -> [f64; 3] {
        let n = norm(&v);
        v.map(|x| x / n)
    }

    #[test]
    fn ordered_columns_only_normalized() {
        let m = canonical_stain_order([[0.65, 0.70, 0.29], [0.07, 0.99, 0.11]], StainMethod::Macenko)
            .unwrap();
        assert_eq!(m.hematoxylin(), unit([0.65, 0.70, 0.29]));
        assert_eq!(m.eosin(), unit([0.07, 0.99, 0.11]));
        for s in 0..2 {
            assert!((norm(&m.column(s)) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn swapped_columns_are_swapped_back() {
        let m = canonical_stain_order([[0.07, 0.99, 0.11], [0.65, 0.70, 0.29]], StainMethod::Macenko)
            .unwrap();
        assert_eq!(m.hematoxylin(), unit([0.65, 0.70, 0.29]));
    }

    #[test]
    fn red_tie_broken_by_green() {
        let m = canonical_stain_order([[0.6, 0.0, 0.8], [0.6, 0.8, 0.0]], StainMethod::Reference)
            .unwrap();
        assert_eq!(m.hematoxylin(), unit([0.6, 0.8, 0.0]));
        assert_eq!(m.eosin(), unit([0.6, 0.0, 0.8]));
    }

    #[test]
    fn zero_column_rejected() {
        let err = canonical_stain_order([[0.0; 3], [0.1, 0.2, 0.3]], StainMethod::Macenko);
        assert!(matches!(err, Err(Error::ZeroColumn(0))));
    }

    #[test]
    fn new_validates_invariants() {
        let h = unit([0.65, 0.70, 0.29]);
        let e = unit([0.07, 0.99, 0.11]);
        assert!(StainMatrix::new(h, e, StainMethod::Reference).is_ok());
        assert!(StainMatrix::new(e, h, StainMethod::Reference).is_err());
        assert!(StainMatrix::new([0.65, 0.70, 0.29], e, StainMethod::Reference).is_err());
        assert!(StainMatrix::new([-0.6, 0.8, 0.0], e, StainMethod::Reference).is_err());
    }

    #[test]
    fn json_field_order_and_precision() {
        let profile = StainProfile { matrix: StainMatrix::reference(), max_concentrations: [1.5, 0.25] };
        let text = profile.to_json();
        let m = text.find("\"method\"").unwrap();
        let s = text.find("\"stains\"").unwrap();
        let c = text.find("\"max_concentrations\"").unwrap();
        assert!(m < s && s < c);
        assert!(text.contains("\"reference\""));
        assert!(text.contains("1.5000000000000000e0"));
        assert_eq!(StainProfile::from_json(&text).unwrap(), profile);
    }

    #[test]
    fn json_rejects_unknown_fields_and_bad_method() {
        let bad = r#"{"method": "macenko", "stains": [[1,0,0],[0,1,0]], "max_concentrations": [1,1], "x": 1}"#;
        assert!(StainProfile::from_json(bad).is_err());
        let bad = r#"{"method": "other", "stains": [[1,0,0],[0,1,0]], "max_concentrations": [1,1]}"#;
        assert!(StainProfile::from_json(bad).is_err());
        let swapped = r#"{"method": "macenko", "stains": [[0,1,0],[1,0,0]], "max_concentrations": [1,1]}"#;
        assert!(StainProfile::from_json(swapped).is_err());
    }

    #[test]
    fn angle_between_columns() {
        assert!((angle_deg(&[1.0, 0.0, 0.0], &[0.0, 2.0, 0.0]) - 90.0).abs() < 1e-12);
        assert_eq!(angle_deg(&[0.3, 0.4, 0.5], &[0.6, 0.8, 1.0]), 0.0);
    }
}
