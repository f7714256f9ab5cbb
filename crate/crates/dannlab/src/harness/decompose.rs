use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Accuracies are rounded to multiples of `2^-24` before they enter the
/// decomposition. Sums and differences of such values are exact in `f64`,
/// so the identity holds bit-for-bit in any evaluation order.
pub const ACCURACY_QUANTUM: f64 = 1.0 / (1u64 << 24) as f64;

pub fn quantize(x: f64) -> f64 {
    (x / ACCURACY_QUANTUM).round() * ACCURACY_QUANTUM
}

/// Reference, degradation (per test shift), cost (per DA shift), and the
/// accuracy and gain grids (`[test][da]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionResult {
    pub reference: f64,
    pub degradation: Vec<f64>,
    pub cost: Vec<f64>,
    pub accuracy: Vec<Vec<f64>>,
    pub gain: Vec<Vec<f64>>,
    /// Per-replicate decompositions; empty for a single measurement.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub replicates: Vec<DecompositionResult>,
}

impl DecompositionResult {
    /// `accuracy - reference + degradation + cost - gain` for one cell.
    pub fn residual(&self, t: usize, d: usize) -> f64 {
        self.accuracy[t][d] - self.reference + self.degradation[t] + self.cost[d] - self.gain[t][d]
    }

    /// `(test index, da index, gain)` of the largest gain.
    pub fn max_gain(&self) -> (usize, usize, f64) {
        let mut best = (0, 0, f64::NEG_INFINITY);
        for (t, row) in self.gain.iter().enumerate() {
            for (d, &g) in row.iter().enumerate() {
                if g > best.2 {
                    best = (t, d, g);
                }
            }
        }
        best
    }
}

/// Builds the decomposition; `gain = accuracy - (reference - (degradation + cost))`.
pub fn decompose(
    reference: f64,
    degradation: &[f64],
    cost: &[f64],
    accuracy: &[Vec<f64>],
) -> Result<DecompositionResult> {
    if accuracy.len() != degradation.len() {
        return Err(Error::input(format!(
            "accuracy grid has {} rows, degradation has {} entries",
            accuracy.len(),
            degradation.len()
        )));
    }
    if let Some((t, row)) = accuracy.iter().enumerate().find(|(_, r)| r.len() != cost.len()) {
        return Err(Error::input(format!(
            "accuracy row {t} has {} entries, cost has {}",
            row.len(),
            cost.len()
        )));
    }
    let reference = quantize(reference);
    let degradation: Vec<f64> = degradation.iter().map(|&v| quantize(v)).collect();
    let cost: Vec<f64> = cost.iter().map(|&v| quantize(v)).collect();
    let accuracy: Vec<Vec<f64>> = accuracy
        .iter()
        .map(|row| row.iter().map(|&v| quantize(v)).collect())
        .collect();
    let gain = accuracy
        .iter()
        .zip(&degradation)
        .map(|(row, &deg)| {
            row.iter()
                .zip(&cost)
                .map(|(&acc, &c)| acc - (reference - (deg + c)))
                .collect()
        })
        .collect();
    Ok(DecompositionResult {
        reference,
        degradation,
        cost,
        accuracy,
        gain,
        replicates: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_cell_has_no_gain() {
        let r = decompose(0.98, &[0.0], &[0.0], &[vec![0.98]]).unwrap();
        assert_eq!(r.gain[0][0], 0.0);
    }

    #[test]
    fn gain_arithmetic() {
        let r = decompose(0.98, &[0.78], &[0.0], &[vec![0.70]]).unwrap();
        assert!((r.gain[0][0] - 0.50).abs() < 1e-6);
        let r = decompose(0.85, &[0.18], &[0.05], &[vec![0.62]]).unwrap();
        assert!(r.gain[0][0].abs() < 1e-6);
    }

    #[test]
    fn identity_is_exact() {
        let acc = vec![vec![0.1, 0.7, 0.33], vec![0.123456789, 0.9, 0.0]];
        let r = decompose(0.97, &[0.01, 0.6], &[0.02, 0.0, 0.3], &acc).unwrap();
        for t in 0..2 {
            for d in 0..3 {
                assert_eq!(r.residual(t, d), 0.0);
            }
        }
    }

    #[test]
    fn dimension_mismatch() {
        assert!(decompose(1.0, &[0.0], &[0.0, 0.0], &[vec![1.0]]).is_err());
        assert!(decompose(1.0, &[0.0, 0.0], &[0.0], &[vec![1.0]]).is_err());
    }
}
