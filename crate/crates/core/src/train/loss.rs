use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `-ln p_y`.
pub fn cross_entropy(p: &[f64], y: usize) -> f64 {
    -p[y].ln()
}

/// How the consistency penalty combines the N augmented views.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsistencyReduction {
    /// `(1/N) sum_i |r - r'_i|^2`
    #[default]
    Mean,
    /// `sum_i |r - r'_i|^2`
    Sum,
}

impl ConsistencyReduction {
    pub(crate) fn weight(self, n: usize) -> f64 {
        match self {
            ConsistencyReduction::Mean => 1.0 / n as f64,
            ConsistencyReduction::Sum => 1.0,
        }
    }
}

/// Squared L2 distance between `r` and each augmented representation,
/// averaged over the augmentations.
pub fn stain_reg_loss(r: &[f64], r_prime: &[Vec<f64>]) -> Result<f64> {
    stain_reg_loss_with(r, r_prime, ConsistencyReduction::Mean)
}

pub fn stain_reg_loss_with(
    r: &[f64],
    r_prime: &[Vec<f64>],
    reduction: ConsistencyReduction,
) -> Result<f64> {
    if r_prime.is_empty() {
        return Err(Error::InvalidParameter("at least one augmented representation required".into()));
    }
    let mut total = 0.0;
    for rp in r_prime {
        if rp.len() != r.len() {
            return Err(Error::DimensionMismatch { expected: r.len(), got: rp.len() });
        }
        total += r.iter().zip(rp).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok(total * reduction.weight(r_prime.len()))
}

/// `L = L_c + L_s`, unit weights.
#[inline]
pub fn total_loss(l_c: f64, l_s: f64) -> f64 {
    l_c + l_s
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct LossBreakdown {
    pub l_c: f64,
    pub l_s: f64,
    pub l_total: f64,
}

impl LossBreakdown {
    pub fn new(l_c: f64, l_s: f64) -> Self {
        Self { l_c, l_s, l_total: total_loss(l_c, l_s) }
    }
}
