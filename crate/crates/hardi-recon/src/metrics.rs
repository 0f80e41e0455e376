//! Normalized mean squared error and its aggregation over voxels.

use crate::error::{Error, Result};
use crate::signal::SignalMatrix;

/// Targets with norm at or below this are rejected rather than divided by.
pub const TARGET_NORM_EPS: f64 = 1e-12;

/// Per-voxel NMSE: ||pred - target||^2 / ||target||^2.
pub fn nmse(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::validation(format!(
            "NMSE over vectors of different lengths ({} vs {})",
            pred.len(),
            target.len()
        )));
    }
    let den: f64 = target.iter().map(|v| v * v).sum();
    if den.sqrt() <= TARGET_NORM_EPS {
        return Err(Error::validation(
            "target norm is (near) zero; NMSE undefined",
        ));
    }
    let num: f64 = pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(num / den)
}

/// NMSE per matching row of two matrices.
pub fn nmse_rows(pred: &SignalMatrix, truth: &SignalMatrix) -> Result<Vec<f64>> {
    if pred.n_voxels() != truth.n_voxels() || pred.k() != truth.k() {
        return Err(Error::validation(format!(
            "matrix shapes differ: {}x{} vs {}x{}",
            pred.n_voxels(),
            pred.k(),
            truth.n_voxels(),
            truth.k()
        )));
    }
    pred.rows()
        .zip(truth.rows())
        .map(|(p, t)| nmse(p, t))
        .collect()
}

/// (min, max, mean) of a nonempty value list.
pub fn summarize(values: &[f64]) -> Result<(f64, f64, f64)> {
    if values.is_empty() {
        return Err(Error::validation("cannot summarize an empty value list"));
    }
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    let mut sum = 0.0;
    for &v in values {
        min = min.min(v);
        max = max.max(v);
        sum += v;
    }
    Ok((min, max, sum / values.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identities() {
        let s = vec![0.3, -0.8, 1.1, 0.05];
        let zero = vec![0.0; 4];
        let double: Vec<f64> = s.iter().map(|v| 2.0 * v).collect();
        assert_eq!(nmse(&s, &s).unwrap(), 0.0);
        assert!((nmse(&zero, &s).unwrap() - 1.0).abs() < 1e-12);
        assert!((nmse(&double, &s).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scale_invariance() {
        let s = vec![0.4, 0.9, -0.2];
        let p = vec![0.5, 0.7, -0.1];
        let base = nmse(&p, &s).unwrap();
        for alpha in [2.0, -3.0, 0.125] {
            let ps: Vec<f64> = p.iter().map(|v| alpha * v).collect();
            let ss: Vec<f64> = s.iter().map(|v| alpha * v).collect();
            let scaled = nmse(&ps, &ss).unwrap();
            assert!((scaled - base).abs() < 1e-12, "alpha {alpha}: {scaled} vs {base}");
        }
    }

    #[test]
    fn zero_target_rejected() {
        assert!(nmse(&[1.0], &[0.0]).is_err());
    }

    #[test]
    fn summary_ordering() {
        let (min, max, avg) = summarize(&[0.5, 0.1, 0.9]).unwrap();
        assert!(min <= avg && avg <= max);
        assert_eq!(min, 0.1);
        assert_eq!(max, 0.9);
    }
}
