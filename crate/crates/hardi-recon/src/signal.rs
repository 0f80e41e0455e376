//! Voxels-by-directions signal matrices.

use crate::error::{Error, Result};
use crate::geometry::SubsetSelection;

/// B0-normalized diffusion attenuations: one row per voxel, one column per
/// gradient direction. Stored row-major in f64.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalMatrix {
    k: usize,
    data: Vec<f64>,
}

impl SignalMatrix {
    pub fn new(k: usize, data: Vec<f64>) -> Result<Self> {
        if k == 0 {
            return Err(Error::validation("signal matrix needs at least one column"));
        }
        if data.is_empty() || data.len() % k != 0 {
            return Err(Error::validation(format!(
                "signal data of length {} is not a whole number of rows of {k}",
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                context: "signal matrix".to_string(),
            });
        }
        Ok(SignalMatrix { k, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.first().map(|r| r.len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * k);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != k {
                return Err(Error::validation(format!(
                    "row {i} has {} entries, expected {k}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        SignalMatrix::new(k, data)
    }

    pub fn n_voxels(&self) -> usize {
        self.data.len() / self.k
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.k..(i + 1) * self.k]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.k)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Keep only the selected columns (measurement extraction).
    pub fn restrict_columns(&self, subset: &SubsetSelection) -> Result<SignalMatrix> {
        subset.check_parent(self.k)?;
        let mut data = Vec::with_capacity(self.n_voxels() * subset.len());
        for row in self.rows() {
            for &idx in subset.indices() {
                data.push(row[idx]);
            }
        }
        SignalMatrix::new(subset.len(), data)
    }

    /// Keep only the first `n` rows.
    pub fn take_rows(&self, n: usize) -> Result<SignalMatrix> {
        if n == 0 || n > self.n_voxels() {
            return Err(Error::validation(format!(
                "cannot take {n} rows from a matrix of {}",
                self.n_voxels()
            )));
        }
        SignalMatrix::new(self.k, self.data[..n * self.k].to_vec())
    }

    /// Rows `from..to`.
    pub fn slice_rows(&self, from: usize, to: usize) -> Result<SignalMatrix> {
        if from >= to || to > self.n_voxels() {
            return Err(Error::validation(format!(
                "bad row range {from}..{to} for a matrix of {} rows",
                self.n_voxels()
            )));
        }
        SignalMatrix::new(self.k, self.data[from * self.k..to * self.k].to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_ragged_rows() {
        assert!(SignalMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0]]).is_err());
    }

    #[test]
    fn restrict_columns_gathers() {
        let m = SignalMatrix::from_rows(&[
            (0..10).map(|i| i as f64).collect(),
            (10..20).map(|i| i as f64).collect(),
        ])
        .unwrap();
        let sel = SubsetSelection::new(10, vec![0, 3, 7]).unwrap();
        let r = m.restrict_columns(&sel).unwrap();
        assert_eq!(r.row(0), &[0.0, 3.0, 7.0]);
        assert_eq!(r.row(1), &[10.0, 13.0, 17.0]);
    }

    #[test]
    fn rejects_non_finite() {
        assert!(SignalMatrix::new(2, vec![1.0, f64::NAN]).is_err());
    }
}
