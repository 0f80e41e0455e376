//! Signal dictionaries over a spherical basis.
//!
//! A dictionary is the design matrix of a real symmetric spherical-harmonic
//! basis evaluated at a gradient scheme's directions: entry (k, j) is atom j
//! at direction k. Only even orders appear, matching the antipodal symmetry
//! of diffusion attenuation. The full-scheme dictionary and its measured-row
//! restriction share one basis, so coefficients recovered from the reduced
//! system map straight onto the dense system.
//!
//! The Funk-Radon transform acts diagonally in this basis: order l is scaled
//! by 2 pi P_l(0), which converts signal coefficients into ODF coefficients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{GradientScheme, SubsetSelection};
use crate::linalg::Mat;
use crate::sh;

/// Spherical basis families the crate can build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisFamily {
    RealSymmetricSphericalHarmonics,
}

/// Description of a symmetric spherical-harmonic basis: even maximum order
/// plus a per-atom quadratic regularization weight used by the ridge solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisDescriptor {
    pub family: BasisFamily,
    pub max_order: usize,
    /// Per-atom penalty weights omega_j; the ridge solver minimizes
    /// ||A f - l||^2 + lambda * sum_j omega_j f_j^2. All ones by default.
    pub regularization: Vec<f64>,
}

impl BasisDescriptor {
    /// Plain basis with unit regularization weights.
    pub fn new(max_order: usize) -> Result<Self> {
        if max_order % 2 != 0 {
            return Err(Error::validation(format!(
                "spherical-harmonic max order must be even, got {max_order}"
            )));
        }
        let atoms = atom_count(max_order);
        Ok(BasisDescriptor {
            family: BasisFamily::RealSymmetricSphericalHarmonics,
            max_order,
            regularization: vec![1.0; atoms],
        })
    }

    /// Basis with Laplace-Beltrami penalty weights (l (l+1))^2 per atom.
    pub fn with_laplace_beltrami(max_order: usize) -> Result<Self> {
        let mut basis = BasisDescriptor::new(max_order)?;
        basis.regularization = basis
            .atoms()
            .map(|(l, _)| {
                let ll = (l * (l + 1)) as f64;
                ll * ll
            })
            .collect();
        Ok(basis)
    }

    pub fn atom_count(&self) -> usize {
        atom_count(self.max_order)
    }

    /// Atom order: (l, m) for l = 0, 2, ..., max_order and m = -l..=l.
    pub fn atoms(&self) -> impl Iterator<Item = (usize, i32)> {
        let max_order = self.max_order;
        (0..=max_order).step_by(2).flat_map(|l| {
            let li = l as i32;
            (-li..=li).map(move |m| (l, m))
        })
    }

    /// True when two descriptors define the same atoms and weights.
    pub fn compatible_with(&self, other: &BasisDescriptor) -> bool {
        self == other
    }
}

/// Atom count of an even-order symmetric basis: (L+1)(L+2)/2.
pub fn atom_count(max_order: usize) -> usize {
    (max_order + 1) * (max_order + 2) / 2
}

/// Coefficients in the basis of a particular dictionary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientVector {
    pub values: Vec<f64>,
}

impl CoefficientVector {
    pub fn new(values: Vec<f64>) -> Self {
        CoefficientVector { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Directions-by-atoms design matrix with its basis descriptor and a digest
/// of the scheme it was evaluated on.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    matrix: Mat,
    basis: BasisDescriptor,
    scheme_hash: u64,
}

impl Dictionary {
    /// Wrap an arbitrary matrix (tests, interop). The column count must
    /// match the basis atom count and every entry must be finite.
    pub fn from_matrix(matrix: Mat, basis: BasisDescriptor, scheme_hash: u64) -> Result<Self> {
        if matrix.cols() != basis.atom_count() {
            return Err(Error::validation(format!(
                "matrix has {} columns but the basis defines {} atoms",
                matrix.cols(),
                basis.atom_count()
            )));
        }
        if !matrix.is_finite() {
            return Err(Error::NonFinite {
                context: "dictionary matrix".to_string(),
            });
        }
        Ok(Dictionary {
            matrix,
            basis,
            scheme_hash,
        })
    }

    /// Error if any atom evaluates to zero at every direction; degenerate
    /// for the solvers. Cannot happen for SH atoms on a well-spread scheme,
    /// asserted anyway at build time and on solver entry.
    pub fn check_no_zero_columns(&self) -> Result<()> {
        for j in 0..self.matrix.cols() {
            if (0..self.matrix.rows()).all(|k| self.matrix.get(k, j) == 0.0) {
                return Err(Error::validation(format!(
                    "dictionary column {j} is identically zero"
                )));
            }
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.matrix.rows()
    }

    pub fn atoms(&self) -> usize {
        self.matrix.cols()
    }

    pub fn matrix(&self) -> &Mat {
        &self.matrix
    }

    pub fn basis(&self) -> &BasisDescriptor {
        &self.basis
    }

    pub fn scheme_hash(&self) -> u64 {
        self.scheme_hash
    }
}

/// Evaluate the basis at every direction of the scheme.
pub fn build_dictionary(scheme: &GradientScheme, basis: &BasisDescriptor) -> Result<Dictionary> {
    let k = scheme.len();
    let j = basis.atom_count();
    let mut m = Mat::zeros(k, j);
    for (row, dir) in scheme.directions().iter().enumerate() {
        for (col, (l, order_m)) in basis.atoms().enumerate() {
            m.set(row, col, sh::eval_real_sh(l, order_m, *dir));
        }
    }
    let dict = Dictionary::from_matrix(m, basis.clone(), scheme.content_hash())?;
    dict.check_no_zero_columns()?;
    Ok(dict)
}

/// Row-restriction of a dictionary to the measured directions. The basis is
/// unchanged; the scheme digest is extended with the subset indices so the
/// restricted dictionary is distinguishable from one built on the sub-scheme.
pub fn restrict_dictionary(full: &Dictionary, subset: &SubsetSelection) -> Result<Dictionary> {
    subset.check_parent(full.rows())?;
    let j = full.atoms();
    let mut m = Mat::zeros(subset.len(), j);
    for (r, &idx) in subset.indices().iter().enumerate() {
        m.row_mut(r).copy_from_slice(full.matrix.row(idx));
    }
    let mut h = crate::geometry::fnv1a_bytes(crate::geometry::fnv1a_init(), &full.scheme_hash.to_le_bytes());
    for &idx in subset.indices() {
        h = crate::geometry::fnv1a_bytes(h, &(idx as u64).to_le_bytes());
    }
    Dictionary::from_matrix(m, full.basis.clone(), h)
}

/// s = A f
pub fn reconstruct_signal(dict: &Dictionary, coeffs: &CoefficientVector) -> Result<Vec<f64>> {
    if coeffs.len() != dict.atoms() {
        return Err(Error::validation(format!(
            "coefficient vector of length {} does not match dictionary with {} atoms",
            coeffs.len(),
            dict.atoms()
        )));
    }
    Ok(dict.matrix.matvec(&coeffs.values))
}

/// Funk-Radon transform in the SH domain: order l is scaled by 2 pi P_l(0).
/// The result are ODF coefficients, sampleable through [`reconstruct_signal`]
/// on any scheme built from the same basis.
pub fn odf_from_coeffs(
    coeffs: &CoefficientVector,
    basis: &BasisDescriptor,
) -> Result<CoefficientVector> {
    if coeffs.len() != basis.atom_count() {
        return Err(Error::validation(format!(
            "coefficient vector of length {} does not match basis with {} atoms",
            coeffs.len(),
            basis.atom_count()
        )));
    }
    let two_pi = 2.0 * std::f64::consts::PI;
    let values = basis
        .atoms()
        .zip(&coeffs.values)
        .map(|((l, _), &c)| two_pi * sh::legendre_at_zero(l) * c)
        .collect();
    Ok(CoefficientVector::new(values))
}
