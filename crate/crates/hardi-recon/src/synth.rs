//! Synthetic ground-truth voxels from a multi-tensor diffusion model.
//!
//! Each voxel mixes one to three axially symmetric diffusion tensors:
//! s(q) = sum_i w_i exp(-b q^T D_i q) with D_i = lambda_perp I +
//! (lambda_par - lambda_perp) u_i u_i^T, so the signal depends on q only
//! through (q . u_i)^2 and antipodal symmetry is exact by construction.
//! Rician noise produces the measured magnitude sqrt((v + n1)^2 + n2^2).
//!
//! Per-voxel generator streams are derived from the dataset seed, so
//! parallel and serial generation emit identical datasets.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{angular_distance, GradientScheme};
use crate::rng::{mix_seed, Rng};
use crate::signal::SignalMatrix;

/// One voxel's fiber population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiberConfig {
    /// Positive mixture weights summing to one.
    pub weights: Vec<f64>,
    /// Unit fiber orientations.
    pub orientations: Vec<[f64; 3]>,
    /// Per-fiber (parallel, perpendicular) diffusivities in mm^2/s.
    pub eigenvalues: Vec<(f64, f64)>,
}

impl FiberConfig {
    pub fn validate(&self) -> Result<()> {
        let n = self.weights.len();
        if n == 0 || n > 3 {
            return Err(Error::validation(format!(
                "fiber count must be 1 to 3, got {n}"
            )));
        }
        if self.orientations.len() != n || self.eigenvalues.len() != n {
            return Err(Error::validation("fiber config field lengths differ"));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::validation(format!(
                "fiber weights sum to {total}, expected 1"
            )));
        }
        for &w in &self.weights {
            if !(w > 0.0) {
                return Err(Error::validation("fiber weights must be positive"));
            }
        }
        for &(par, perp) in &self.eigenvalues {
            if !(par >= perp && perp > 0.0) {
                return Err(Error::validation(format!(
                    "need lambda_par >= lambda_perp > 0, got ({par}, {perp})"
                )));
            }
        }
        for o in &self.orientations {
            let norm = (o[0] * o[0] + o[1] * o[1] + o[2] * o[2]).sqrt();
            if (norm - 1.0).abs() > 1e-9 {
                return Err(Error::validation("fiber orientations must be unit vectors"));
            }
        }
        Ok(())
    }

    /// Single isotropic compartment with diffusivity d.
    pub fn isotropic(d: f64) -> Self {
        FiberConfig {
            weights: vec![1.0],
            orientations: vec![[0.0, 0.0, 1.0]],
            eigenvalues: vec![(d, d)],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseModel {
    None,
    Rician,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub model: NoiseModel,
    /// Noise level as a fraction of the B0 signal.
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseConfig {
    pub fn none() -> Self {
        NoiseConfig {
            model: NoiseModel::None,
            sigma: 0.0,
            seed: 0,
        }
    }

    pub fn rician(sigma: f64, seed: u64) -> Result<Self> {
        if !(sigma >= 0.0) {
            return Err(Error::validation(format!("sigma must be >= 0, got {sigma}")));
        }
        Ok(NoiseConfig {
            model: NoiseModel::Rician,
            sigma,
            seed,
        })
    }
}

/// Noise-free multi-tensor signal at every scheme direction; values in (0, 1].
pub fn simulate_voxel(fibers: &FiberConfig, scheme: &GradientScheme) -> Result<Vec<f64>> {
    fibers.validate()?;
    let b = scheme.bvalue();
    let out = scheme
        .directions()
        .iter()
        .map(|q| {
            let mut s = 0.0;
            for ((w, u), (par, perp)) in fibers
                .weights
                .iter()
                .zip(&fibers.orientations)
                .zip(&fibers.eigenvalues)
            {
                let qu = q[0] * u[0] + q[1] * u[1] + q[2] * u[2];
                let qdq = perp + (par - perp) * qu * qu;
                s += w * (-b * qdq).exp();
            }
            s
        })
        .collect();
    Ok(out)
}

/// Rician-contaminated copy of a signal plus the count of values clamped at
/// the 1.5 ceiling. Sigma zero (or NoiseModel::None) returns the input
/// unchanged.
pub fn add_rician_noise(signal: &[f64], noise: &NoiseConfig) -> (Vec<f64>, usize) {
    if noise.model == NoiseModel::None || noise.sigma == 0.0 {
        return (signal.to_vec(), 0);
    }
    let mut rng = Rng::seed_from_u64(noise.seed);
    let mut clamped = 0usize;
    let out = signal
        .iter()
        .map(|&v| {
            let (n1, n2) = rng.normal_pair();
            let real = v + noise.sigma * n1;
            let imag = noise.sigma * n2;
            let mag = (real * real + imag * imag).sqrt();
            if mag > 1.5 {
                clamped += 1;
                1.5
            } else {
                mag
            }
        })
        .collect();
    (out, clamped)
}

/// Mixture over voxel types: isotropic compartments and 1/2/3-fiber voxels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiberMix {
    pub isotropic: f64,
    pub one: f64,
    pub two: f64,
    pub three: f64,
}

impl Default for FiberMix {
    fn default() -> Self {
        FiberMix {
            isotropic: 0.0,
            one: 0.3,
            two: 0.5,
            three: 0.2,
        }
    }
}

impl FiberMix {
    pub fn all_isotropic() -> Self {
        FiberMix {
            isotropic: 1.0,
            one: 0.0,
            two: 0.0,
            three: 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        let parts = [self.isotropic, self.one, self.two, self.three];
        let total: f64 = parts.iter().sum();
        if parts.iter().any(|&p| p < 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::validation(format!(
                "fiber mix must be nonnegative and sum to 1, got {total}"
            )));
        }
        Ok(())
    }
}

/// Dataset generation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetParams {
    pub n_voxels: usize,
    pub mix: FiberMix,
    /// Minimum crossing angle between fibers, degrees.
    pub min_crossing_deg: f64,
    /// Relative jitter applied to the base eigenvalues.
    pub eigen_jitter: f64,
    pub noise: NoiseConfig,
    pub seed: u64,
}

impl DatasetParams {
    pub fn new(n_voxels: usize, noise: NoiseConfig, seed: u64) -> Self {
        DatasetParams {
            n_voxels,
            mix: FiberMix::default(),
            min_crossing_deg: 30.0,
            eigen_jitter: 0.15,
            noise,
            seed,
        }
    }
}

/// White-matter baseline diffusivities (parallel, perpendicular), mm^2/s.
pub const BASE_EIGENVALUES: (f64, f64) = (1.7e-3, 0.3e-3);

/// Generated dataset: clean truth, optional noisy copy, and the per-voxel
/// configurations that produced it.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub clean: SignalMatrix,
    pub noisy: Option<SignalMatrix>,
    pub voxels: Vec<FiberConfig>,
    pub clamped_values: usize,
}

fn random_unit_vector(rng: &mut Rng) -> [f64; 3] {
    // uniform on the sphere: z uniform in [-1, 1), azimuth uniform
    let z = rng.next_f64_in(-1.0, 1.0);
    let phi = rng.next_f64_in(0.0, 2.0 * std::f64::consts::PI);
    let r = (1.0 - z * z).max(0.0).sqrt();
    [r * phi.cos(), r * phi.sin(), z]
}

fn sample_fiber_config(params: &DatasetParams, rng: &mut Rng) -> Result<FiberConfig> {
    let u = rng.next_f64();
    if u < params.mix.isotropic {
        // mean diffusivity of the base tensor, jittered
        let base = (BASE_EIGENVALUES.0 + 2.0 * BASE_EIGENVALUES.1) / 3.0;
        let d = base * (1.0 + rng.next_f64_in(-params.eigen_jitter, params.eigen_jitter));
        return Ok(FiberConfig::isotropic(d));
    }
    let u = u - params.mix.isotropic;
    let n_fibers = if u < params.mix.one {
        1
    } else if u < params.mix.one + params.mix.two {
        2
    } else {
        3
    };
    let min_angle = params.min_crossing_deg.to_radians();
    let mut orientations: Vec<[f64; 3]> = Vec::with_capacity(n_fibers);
    let mut tries = 0usize;
    while orientations.len() < n_fibers {
        tries += 1;
        if tries > 10_000 {
            return Err(Error::validation(format!(
                "could not place {n_fibers} fibers {}deg apart after 10000 tries; \
                 reduce the minimum crossing angle",
                params.min_crossing_deg
            )));
        }
        let candidate = random_unit_vector(rng);
        let ok = orientations
            .iter()
            .all(|o| angular_distance(*o, candidate).map(|a| a >= min_angle).unwrap_or(false));
        if ok {
            orientations.push(candidate);
        }
    }
    // weights drawn in [0.3, 1] then normalized so no fiber is negligible
    let raw: Vec<f64> = (0..n_fibers).map(|_| rng.next_f64_in(0.3, 1.0)).collect();
    let total: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let eigenvalues: Vec<(f64, f64)> = (0..n_fibers)
        .map(|_| {
            let jp = 1.0 + rng.next_f64_in(-params.eigen_jitter, params.eigen_jitter);
            let jt = 1.0 + rng.next_f64_in(-params.eigen_jitter, params.eigen_jitter);
            (BASE_EIGENVALUES.0 * jp, BASE_EIGENVALUES.1 * jt)
        })
        .collect();
    let config = FiberConfig {
        weights,
        orientations,
        eigenvalues,
    };
    config.validate()?;
    Ok(config)
}

/// Generate `params.n_voxels` voxels on the scheme. Per-voxel seeds derive
/// from the dataset seed (fiber stream) and the noise seed (noise stream),
/// so the clean data is identical across noise levels.
pub fn generate_dataset(params: &DatasetParams, scheme: &GradientScheme) -> Result<Dataset> {
    if params.n_voxels == 0 {
        return Err(Error::validation("dataset needs at least one voxel"));
    }
    params.mix.validate()?;
    if !(params.eigen_jitter >= 0.0 && params.eigen_jitter < 1.0) {
        return Err(Error::validation("eigenvalue jitter must be in [0, 1)"));
    }

    let per_voxel: Vec<(FiberConfig, Vec<f64>, Option<(Vec<f64>, usize)>)> = (0..params.n_voxels)
        .into_par_iter()
        .map(|v| {
            let mut rng = Rng::seed_from_u64(mix_seed(params.seed, v as u64));
            let config = sample_fiber_config(params, &mut rng)?;
            let clean = simulate_voxel(&config, scheme)?;
            let noisy = match params.noise.model {
                NoiseModel::None => None,
                NoiseModel::Rician => {
                    let voxel_noise = NoiseConfig {
                        model: NoiseModel::Rician,
                        sigma: params.noise.sigma,
                        seed: mix_seed(params.noise.seed, v as u64),
                    };
                    Some(add_rician_noise(&clean, &voxel_noise))
                }
            };
            Ok((config, clean, noisy))
        })
        .collect::<Result<Vec<_>>>()?;

    let k = scheme.len();
    let mut clean_data = Vec::with_capacity(params.n_voxels * k);
    let mut noisy_data = Vec::with_capacity(params.n_voxels * k);
    let mut voxels = Vec::with_capacity(params.n_voxels);
    let mut clamped = 0usize;
    let has_noise = params.noise.model == NoiseModel::Rician;
    for (config, clean, noisy) in per_voxel {
        clean_data.extend_from_slice(&clean);
        if let Some((n, c)) = noisy {
            noisy_data.extend_from_slice(&n);
            clamped += c;
        }
        voxels.push(config);
    }
    Ok(Dataset {
        clean: SignalMatrix::new(k, clean_data)?,
        noisy: has_noise.then(|| SignalMatrix::new(k, noisy_data)).transpose()?,
        voxels,
        clamped_values: clamped,
    })
}
