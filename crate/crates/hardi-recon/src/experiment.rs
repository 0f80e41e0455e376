//! End-to-end experiment harness: synthesize a dataset, train one network
//! per reduction factor, reconstruct the test voxels with every method, and
//! aggregate NMSE into a method-by-K_L report.
//!
//! All steps are deterministic given their seeds. Wall-clock timings are
//! recorded in sidecar files and only merged into the metrics report on
//! request, so a rerun with the same seeds reproduces `metrics.csv`
//! byte-for-byte.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cs_solvers::{
    cross_validate_lambda, default_lambda_grid, reconstruct_from_measurement, SolveMethod,
    SolverConfig,
};
use crate::dictionary::{build_dictionary, restrict_dictionary, BasisDescriptor, CoefficientVector};
use crate::error::{Error, Result};
use crate::geometry::{select_subset, GradientScheme, SubsetSelection, SubsetStrategy};
use crate::io_formats::{
    self, read_signal_matrix, write_signal_matrix, write_subset_json, MetricsFormat,
    MetricsReport, MetricsRow, SubsetFile,
};
use crate::metrics::{nmse_rows, summarize};
use crate::model::{self, ModelConfig, TrainData, TrainOptions};
use crate::signal::SignalMatrix;
use crate::synth::{generate_dataset, DatasetParams, FiberMix, NoiseConfig};

/// Reconstruction methods the harness understands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Ridge-regularized least squares through the dictionary pair.
    L2,
    /// L1 sparse coding (FISTA) through the dictionary pair.
    Cs,
    /// The trained encoder-decoder network.
    Cnn,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::L2 => "l2",
            Method::Cs => "cs",
            Method::Cnn => "cnn",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" => Ok(Method::L2),
            // "l1" is the solver-level name for the sparse-coding route
            "cs" | "l1" => Ok(Method::Cs),
            "cnn" => Ok(Method::Cnn),
            other => Err(Error::validation(format!(
                "unknown method {other:?}; valid methods: l2, cs (alias l1), cnn"
            ))),
        }
    }
}

/// Standard file layout under a dataset/experiment root.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn bvecs(&self) -> PathBuf {
        self.root.join("bvecs")
    }

    pub fn bvals(&self) -> PathBuf {
        self.root.join("bvals")
    }

    pub fn signals(&self, split: &str) -> PathBuf {
        self.root.join(split).join("signals.csv")
    }

    pub fn signals_noisy(&self, split: &str) -> PathBuf {
        self.root.join(split).join("signals_noisy.csv")
    }

    pub fn meta(&self, split: &str) -> PathBuf {
        self.root.join(split).join("meta.json")
    }

    pub fn subset(&self, k_low: usize) -> PathBuf {
        self.root.join("subsets").join(format!("k{k_low}.json"))
    }

    pub fn checkpoint_dir(&self, k_low: usize) -> PathBuf {
        self.root.join("checkpoints").join(format!("k{k_low}"))
    }

    pub fn training_log(&self, k_low: usize) -> PathBuf {
        self.checkpoint_dir(k_low).join("training_log.csv")
    }

    pub fn recon(&self, method: Method, k_low: usize) -> PathBuf {
        self.root
            .join("recon")
            .join(format!("{}_k{k_low}.csv", method.name()))
    }

    pub fn recon_meta(&self, method: Method, k_low: usize) -> PathBuf {
        self.root
            .join("recon")
            .join(format!("{}_k{k_low}.meta.json", method.name()))
    }

    pub fn metrics_csv(&self) -> PathBuf {
        self.root.join("metrics.csv")
    }

    pub fn metrics_json(&self) -> PathBuf {
        self.root.join("metrics.json")
    }

    pub fn per_voxel_csv(&self) -> PathBuf {
        self.root.join("per_voxel.csv")
    }

    pub fn odf(&self, label: &str, k_low: usize) -> PathBuf {
        self.root.join("odf").join(format!("{label}_k{k_low}.csv"))
    }

    pub fn odf_truth(&self) -> PathBuf {
        self.root.join("odf").join("truth.csv")
    }
}

/// Synthetic dataset request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub k: usize,
    pub bvalue: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub sigma: f64,
    pub seed: u64,
    pub mix: FiberMix,
}

impl SynthSpec {
    pub fn new(n_train: usize, n_test: usize, sigma: f64, seed: u64) -> Self {
        SynthSpec {
            k: 90,
            bvalue: 2000.0,
            n_train,
            n_test,
            sigma,
            seed,
            mix: FiberMix::default(),
        }
    }
}

/// Generate and write the train/test dataset; returns the scheme.
/// Train and test draw from disjoint seed streams. With sigma = 0 the noisy
/// files are exact copies of the clean ones.
pub fn synthesize(spec: &SynthSpec, layout: &Layout) -> Result<GradientScheme> {
    if spec.n_train == 0 || spec.n_test == 0 {
        return Err(Error::validation(
            "need at least one training and one test voxel",
        ));
    }
    let scheme = GradientScheme::fibonacci_hemisphere(spec.k, spec.bvalue)?;
    io_formats::write_gradient_table(&scheme, &layout.bvecs(), &layout.bvals())?;
    for (split, n, stream) in [("train", spec.n_train, 1u64), ("test", spec.n_test, 2u64)] {
        let noise = if spec.sigma > 0.0 {
            NoiseConfig::rician(spec.sigma, crate::rng::mix_seed(spec.seed, 100 + stream))?
        } else {
            NoiseConfig::none()
        };
        let params = DatasetParams {
            n_voxels: n,
            mix: spec.mix,
            min_crossing_deg: 30.0,
            eigen_jitter: 0.15,
            noise: noise.clone(),
            seed: crate::rng::mix_seed(spec.seed, stream),
        };
        let ds = generate_dataset(&params, &scheme)?;
        write_signal_matrix(&layout.signals(split), &ds.clean)?;
        let noisy = ds.noisy.as_ref().unwrap_or(&ds.clean);
        write_signal_matrix(&layout.signals_noisy(split), noisy)?;
        io_formats::write_dataset_meta(
            &layout.meta(split),
            &io_formats::DatasetMeta {
                seed: params.seed,
                noise,
                clamped_values: ds.clamped_values,
                voxels: ds.voxels,
            },
        )?;
    }
    Ok(scheme)
}

/// Load the scheme and one split from a dataset directory.
pub struct SplitData {
    pub clean: SignalMatrix,
    pub noisy: SignalMatrix,
}

pub fn load_scheme(layout: &Layout) -> Result<GradientScheme> {
    io_formats::read_gradient_table(&layout.bvecs(), &layout.bvals())
}

pub fn load_split(layout: &Layout, split: &str) -> Result<SplitData> {
    let clean = read_signal_matrix(&layout.signals(split))?;
    let noisy_path = layout.signals_noisy(split);
    let noisy = if noisy_path.exists() {
        read_signal_matrix(&noisy_path)?
    } else {
        clean.clone()
    };
    if noisy.n_voxels() != clean.n_voxels() || noisy.k() != clean.k() {
        return Err(Error::validation(
            "clean and noisy matrices have different shapes",
        ));
    }
    Ok(SplitData { clean, noisy })
}

/// Load the subset for k_low, creating and persisting it if absent.
pub fn ensure_subset(
    layout: &Layout,
    scheme: &GradientScheme,
    k_low: usize,
    strategy: SubsetStrategy,
    seed: u64,
) -> Result<SubsetSelection> {
    let path = layout.subset(k_low);
    if path.exists() {
        let file = io_formats::read_subset_json(&path)?;
        let sel = file.selection()?;
        sel.check_parent(scheme.len())?;
        if sel.len() != k_low {
            return Err(Error::validation(format!(
                "{} selects {} directions, expected {k_low}",
                path.display(),
                sel.len()
            )));
        }
        return Ok(sel);
    }
    let sel = select_subset(scheme, k_low, strategy, seed)?;
    write_subset_json(
        &path,
        &SubsetFile {
            parent_size: sel.parent_size(),
            indices: sel.indices().to_vec(),
            strategy,
            seed,
        },
    )?;
    Ok(sel)
}

/// Numeric precision for network training and inference. Checkpoints store
/// f32 either way; f64 exists for verification runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Precision {
    F32,
    F64,
}

/// Training request for one reduction factor.
#[derive(Debug, Clone)]
pub struct TrainSpec {
    pub k_low: usize,
    pub config: ModelConfig,
    pub seed: u64,
    pub strategy: SubsetStrategy,
    pub resume: bool,
    pub precision: Precision,
}

impl TrainSpec {
    pub fn new(k_low: usize, seed: u64) -> Self {
        TrainSpec {
            k_low,
            config: ModelConfig::new(k_low),
            seed,
            strategy: SubsetStrategy::UniformAngular,
            resume: false,
            precision: Precision::F32,
        }
    }
}

pub struct TrainReport {
    pub checkpoint_dir: PathBuf,
    pub best_epoch: usize,
    pub best_val_nmse: f64,
    pub epochs_run: usize,
    pub stopped_early: bool,
}

/// Train the network for one k_low and write checkpoint plus training log.
/// Measurements come from the noisy copy restricted to the subset; targets
/// are the clean signals. The tail `val_fraction` of training voxels is held
/// out for early stopping.
pub fn train_model(layout: &Layout, spec: &TrainSpec) -> Result<TrainReport> {
    match spec.precision {
        Precision::F32 => train_model_typed::<f32>(layout, spec),
        Precision::F64 => train_model_typed::<f64>(layout, spec),
    }
}

fn train_model_typed<T: crate::nn::Real>(layout: &Layout, spec: &TrainSpec) -> Result<TrainReport> {
    let scheme = load_scheme(layout)?;
    let mut cfg = spec.config.clone();
    cfg.k_high = scheme.len();
    cfg.k_low = spec.k_low;
    cfg.permute_seed = spec.seed;
    let subset = ensure_subset(layout, &scheme, spec.k_low, spec.strategy, spec.seed)?;
    let data = load_split(layout, "train")?;
    let measurements = data.noisy.restrict_columns(&subset)?;

    let n = measurements.n_voxels();
    let n_val = ((n as f64 * cfg.val_fraction).round() as usize).clamp(1, n.saturating_sub(1).max(1));
    let n_train = n - n_val;
    if n_train == 0 {
        return Err(Error::validation(format!(
            "validation fraction {} leaves no training voxels",
            cfg.val_fraction
        )));
    }
    let train_inputs = measurements.slice_rows(0, n_train)?;
    let train_targets = data.clean.slice_rows(0, n_train)?;
    let val_inputs = measurements.slice_rows(n_train, n)?;
    let val_targets = data.clean.slice_rows(n_train, n)?;

    let ckpt_dir = layout.checkpoint_dir(spec.k_low);
    let mut opts = TrainOptions::<T>::new(spec.seed);
    let mut resume_epoch = 0usize;
    if spec.resume && ckpt_dir.join(io_formats::MANIFEST_FILE).exists() {
        let (manifest, params) = io_formats::load_checkpoint(&ckpt_dir)?;
        if manifest.config.k_low != spec.k_low {
            return Err(Error::validation(format!(
                "checkpoint in {} was trained for k_low {}",
                ckpt_dir.display(),
                manifest.config.k_low
            )));
        }
        resume_epoch = manifest.epoch;
        opts.initial = Some((crate::model::ModelParams::<T>::from_f32(&params), manifest.epoch));
    }

    let outcome = model::train(
        &cfg,
        &scheme,
        &subset,
        &TrainData {
            inputs: &train_inputs,
            targets: &train_targets,
        },
        &TrainData {
            inputs: &val_inputs,
            targets: &val_targets,
        },
        &opts,
    )?;

    let last_train = outcome.log.last().map(|e| e.train_nmse).unwrap_or(f64::NAN);
    io_formats::save_checkpoint(
        &ckpt_dir,
        &cfg,
        &outcome.params,
        spec.seed,
        outcome.best_epoch,
        &[
            ("best_val_nmse", outcome.best_val_nmse),
            ("last_train_nmse", last_train),
        ],
    )?;
    let log_rows = if resume_epoch > 0 {
        // drop the duplicated baseline row when continuing a log
        &outcome.log[1..]
    } else {
        &outcome.log[..]
    };
    io_formats::write_training_log(&layout.training_log(spec.k_low), log_rows, resume_epoch > 0)?;
    Ok(TrainReport {
        checkpoint_dir: ckpt_dir,
        best_epoch: outcome.best_epoch,
        best_val_nmse: outcome.best_val_nmse,
        epochs_run: outcome.log.len().saturating_sub(1),
        stopped_early: outcome.stopped_early,
    })
}

/// How lambda is chosen for the dictionary methods.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LambdaChoice {
    Fixed(f64),
    CrossValidate,
}

/// Reconstruction request.
#[derive(Debug, Clone)]
pub struct ReconstructSpec {
    pub method: Method,
    pub k_low: usize,
    pub strategy: SubsetStrategy,
    pub seed: u64,
    /// Dictionary methods: regularization weight source.
    pub lambda: LambdaChoice,
    pub max_iters: usize,
    pub tolerance: f64,
    pub sh_order: usize,
    /// Voxels used for lambda cross-validation (capped for speed).
    pub cv_voxels: usize,
    /// Test-time permutation averaging for the network (0 = off).
    pub tta_perms: usize,
    pub export_dictionary: bool,
    pub precision: Precision,
}

impl ReconstructSpec {
    pub fn new(method: Method, k_low: usize, seed: u64) -> Self {
        ReconstructSpec {
            method,
            k_low,
            strategy: SubsetStrategy::UniformAngular,
            seed,
            lambda: LambdaChoice::CrossValidate,
            max_iters: 2000,
            tolerance: 1e-8,
            sh_order: 8,
            cv_voxels: 300,
            tta_perms: 0,
            export_dictionary: false,
            precision: Precision::F32,
        }
    }
}

/// Sidecar describing how a reconstruction was produced (plus wall time).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReconMeta {
    pub method: String,
    pub k_low: usize,
    pub n_voxels: usize,
    pub lambda: Option<f64>,
    pub lambda_source: Option<String>,
    pub seconds: f64,
}

/// Reconstruct the test split with one method and write the K_H-wide matrix.
/// Returns the per-voxel NMSE summary against the clean test signals.
pub fn reconstruct(layout: &Layout, spec: &ReconstructSpec) -> Result<(PathBuf, ReconMeta)> {
    let scheme = load_scheme(layout)?;
    let subset = ensure_subset(layout, &scheme, spec.k_low, spec.strategy, spec.seed)?;
    let test = load_split(layout, "test")?;
    let measurements = test.noisy.restrict_columns(&subset)?;
    let start = std::time::Instant::now();

    let (recon, lambda, lambda_source) = match spec.method {
        Method::Cnn => {
            let ckpt_dir = layout.checkpoint_dir(spec.k_low);
            if !ckpt_dir.join(io_formats::MANIFEST_FILE).exists() {
                return Err(Error::validation(format!(
                    "no checkpoint at {}; run the train command first",
                    ckpt_dir.display()
                )));
            }
            let (manifest, params) = io_formats::load_checkpoint(&ckpt_dir)?;
            let recon = match spec.precision {
                Precision::F32 => {
                    infer_with(&measurements, &subset, &scheme, &params, &manifest.config, spec)?
                }
                Precision::F64 => {
                    let params64 = model::ModelParams::<f64>::from_f32(&params);
                    infer_with(&measurements, &subset, &scheme, &params64, &manifest.config, spec)?
                }
            };
            (recon, None, None)
        }
        Method::L2 | Method::Cs => {
            let basis = BasisDescriptor::new(spec.sh_order)?;
            let dict_h = build_dictionary(&scheme, &basis)?;
            let dict_l = restrict_dictionary(&dict_h, &subset)?;
            if spec.export_dictionary {
                io_formats::export_dictionary(&layout.root.join("dictionary"), "a_high", &dict_h)?;
                io_formats::export_dictionary(
                    &layout.root.join("dictionary"),
                    &format!("a_low_k{}", spec.k_low),
                    &dict_l,
                )?;
            }
            let solve_method = match spec.method {
                Method::L2 => SolveMethod::L2,
                _ => SolveMethod::L1,
            };
            let mut config = SolverConfig::new(0.0)?;
            config.max_iters = spec.max_iters;
            config.tolerance = spec.tolerance;
            let (lambda, source) = match spec.lambda {
                LambdaChoice::Fixed(l) => (l, "flag"),
                LambdaChoice::CrossValidate => {
                    let train = load_split(layout, "train")?;
                    let n_cv = train.clean.n_voxels().min(spec.cv_voxels.max(1));
                    let cv_meas = train.noisy.restrict_columns(&subset)?;
                    let measurements: Vec<Vec<f64>> =
                        (0..n_cv).map(|i| cv_meas.row(i).to_vec()).collect();
                    let truths: Vec<Vec<f64>> =
                        (0..n_cv).map(|i| train.clean.row(i).to_vec()).collect();
                    let (best, _scores) = cross_validate_lambda(
                        &dict_l,
                        &dict_h,
                        &measurements,
                        &truths,
                        solve_method,
                        &default_lambda_grid(),
                        &config,
                    )?;
                    (best, "cv")
                }
            };
            config.lambda = lambda;
            let rows: Vec<Vec<f64>> = measurements
                .rows()
                .collect::<Vec<_>>()
                .par_iter()
                .map(|row| {
                    reconstruct_from_measurement(&dict_l, &dict_h, row, &config, solve_method)
                })
                .collect::<Result<Vec<_>>>()?;
            (
                SignalMatrix::from_rows(&rows)?,
                Some(lambda),
                Some(source.to_string()),
            )
        }
    };

    let seconds = start.elapsed().as_secs_f64();
    let recon_path = layout.recon(spec.method, spec.k_low);
    write_signal_matrix(&recon_path, &recon)?;
    let meta = ReconMeta {
        method: spec.method.name().to_string(),
        k_low: spec.k_low,
        n_voxels: recon.n_voxels(),
        lambda,
        lambda_source,
        seconds,
    };
    let json = serde_json::to_string_pretty(&meta).expect("plain struct");
    std::fs::write(layout.recon_meta(spec.method, spec.k_low), json)
        .map_err(|e| Error::io(layout.recon_meta(spec.method, spec.k_low), e))?;
    Ok((recon_path, meta))
}

/// Evaluation request over existing reconstructions.
#[derive(Debug, Clone)]
pub struct EvaluateSpec {
    pub methods: Vec<Method>,
    pub k_lows: Vec<usize>,
    pub per_voxel: bool,
    /// Merge wall times from the reconstruction sidecars into the report
    /// (makes the CSV non-reproducible across reruns).
    pub with_timings: bool,
    /// ODF SH coefficient export for this many leading voxels (0 = off).
    pub odf_voxels: usize,
    pub sh_order: usize,
}

impl Default for EvaluateSpec {
    fn default() -> Self {
        EvaluateSpec {
            methods: vec![Method::L2, Method::Cs, Method::Cnn],
            k_lows: vec![30, 23, 18],
            per_voxel: false,
            with_timings: false,
            odf_voxels: 10,
            sh_order: 8,
        }
    }
}

/// Compute per-voxel NMSE for every (method, k_low) reconstruction, write the
/// aggregate report (CSV + JSON), optional per-voxel values, and ODF
/// coefficient exports for a leading sample of voxels.
pub fn evaluate(layout: &Layout, spec: &EvaluateSpec) -> Result<MetricsReport> {
    let truth = read_signal_matrix(&layout.signals("test"))?;
    let mut rows = Vec::new();
    let mut per_voxel_lines = String::from("method,k_low,voxel,nmse\n");

    let scheme = load_scheme(layout)?;
    let basis = BasisDescriptor::new(spec.sh_order)?;
    let dict_h = build_dictionary(&scheme, &basis)?;
    if spec.odf_voxels > 0 {
        export_odf(&layout.odf_truth(), &truth, spec.odf_voxels, &dict_h)?;
    }

    for method in &spec.methods {
        for &k_low in &spec.k_lows {
            let path = layout.recon(*method, k_low);
            if !path.exists() {
                return Err(Error::validation(format!(
                    "missing reconstruction {}; run the reconstruct command first",
                    path.display()
                )));
            }
            let recon = read_signal_matrix(&path)?;
            if recon.n_voxels() != truth.n_voxels() {
                return Err(Error::validation(format!(
                    "{} has {} voxels, ground truth has {}",
                    path.display(),
                    recon.n_voxels(),
                    truth.n_voxels()
                )));
            }
            let per_voxel = nmse_rows(&recon, &truth)?;
            let (min, max, avg) = summarize(&per_voxel)?;
            let seconds = if spec.with_timings {
                read_recon_seconds(&layout.recon_meta(*method, k_low))
            } else {
                None
            };
            rows.push(MetricsRow {
                method: method.name().to_string(),
                k_low,
                min_nmse: min,
                max_nmse: max,
                avg_nmse: avg,
                n_voxels: per_voxel.len(),
                seconds,
            });
            if spec.per_voxel {
                for (i, v) in per_voxel.iter().enumerate() {
                    per_voxel_lines.push_str(&format!("{},{},{},{}\n", method.name(), k_low, i, v));
                }
            }
            if spec.odf_voxels > 0 {
                export_odf(
                    &layout.odf(method.name(), k_low),
                    &recon,
                    spec.odf_voxels,
                    &dict_h,
                )?;
            }
        }
    }

    let report = MetricsReport { rows };
    report.validate()?;
    io_formats::write_metrics_report(&report, &layout.metrics_csv(), MetricsFormat::Csv)?;
    io_formats::write_metrics_report(&report, &layout.metrics_json(), MetricsFormat::Json)?;
    if spec.per_voxel {
        std::fs::write(layout.per_voxel_csv(), per_voxel_lines)
            .map_err(|e| Error::io(layout.per_voxel_csv(), e))?;
    }
    Ok(report)
}

fn infer_with<T: crate::nn::Real>(
    measurements: &SignalMatrix,
    subset: &SubsetSelection,
    scheme: &GradientScheme,
    params: &model::ModelParams<T>,
    cfg: &ModelConfig,
    spec: &ReconstructSpec,
) -> Result<SignalMatrix> {
    if spec.tta_perms > 0 {
        let rows: Vec<Vec<f64>> = measurements
            .rows()
            .enumerate()
            .collect::<Vec<_>>()
            .par_iter()
            .map(|(i, row)| {
                model::infer_tta(
                    row,
                    subset,
                    scheme,
                    params,
                    cfg,
                    spec.tta_perms,
                    crate::rng::mix_seed(spec.seed, *i as u64),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        SignalMatrix::from_rows(&rows)
    } else {
        model::infer_matrix(measurements, subset, scheme, params, cfg)
    }
}

fn read_recon_seconds(path: &Path) -> Option<f64> {
    let text = std::fs::read_to_string(path).ok()?;
    let meta: ReconMeta = serde_json::from_str(&text).ok()?;
    Some(meta.seconds)
}

/// Fit SH coefficients to the leading voxels (small ridge keeps the normal
/// equations well-posed), apply the Funk-Radon transform, and write one row
/// of ODF coefficients per voxel.
fn export_odf(
    path: &Path,
    signals: &SignalMatrix,
    n_voxels: usize,
    dict_h: &crate::dictionary::Dictionary,
) -> Result<()> {
    let n = signals.n_voxels().min(n_voxels);
    let mut out = String::new();
    for i in 0..n {
        let coeffs = crate::cs_solvers::ridge_solve(dict_h.matrix(), &[], signals.row(i), 1e-8)?;
        let odf =
            crate::dictionary::odf_from_coeffs(&CoefficientVector::new(coeffs), dict_h.basis())?;
        let cells: Vec<String> = odf.values.iter().map(|&v| io_formats::format_f64(v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Whole-pipeline configuration for a reproducible experiment.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub synth: SynthSpec,
    pub k_lows: Vec<usize>,
    pub methods: Vec<Method>,
    pub strategy: SubsetStrategy,
    pub epochs: usize,
    pub patience: usize,
    pub lambda: LambdaChoice,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn new(out_dir: impl Into<PathBuf>, seed: u64) -> Self {
        ExperimentConfig {
            synth: SynthSpec::new(8000, 2000, 0.02, seed),
            k_lows: vec![30, 23, 18],
            methods: vec![Method::L2, Method::Cs, Method::Cnn],
            strategy: SubsetStrategy::UniformAngular,
            epochs: 300,
            patience: 30,
            lambda: LambdaChoice::CrossValidate,
            seed,
            out_dir: out_dir.into(),
        }
    }

    fn validate(&self) -> Result<()> {
        for &k in &self.k_lows {
            if k < 6 || k > self.synth.k {
                return Err(Error::validation(format!(
                    "k_low {k} outside 6..={}",
                    self.synth.k
                )));
            }
        }
        if self.methods.is_empty() || self.k_lows.is_empty() {
            return Err(Error::validation("need at least one method and one k_low"));
        }
        Ok(())
    }
}

/// Synthesize, train (when the network is requested), reconstruct, evaluate.
pub fn run_full(config: &ExperimentConfig) -> Result<MetricsReport> {
    config.validate()?;
    let layout = Layout::new(&config.out_dir);
    synthesize(&config.synth, &layout)?;
    for &k_low in &config.k_lows {
        if config.methods.contains(&Method::Cnn) {
            let mut spec = TrainSpec::new(k_low, config.seed);
            spec.strategy = config.strategy;
            spec.config.epochs = config.epochs;
            spec.config.patience = config.patience;
            train_model(&layout, &spec)?;
        }
        for method in &config.methods {
            let mut spec = ReconstructSpec::new(*method, k_low, config.seed);
            spec.strategy = config.strategy;
            spec.lambda = config.lambda;
            reconstruct(&layout, &spec)?;
        }
    }
    let eval = EvaluateSpec {
        methods: config.methods.clone(),
        k_lows: config.k_lows.clone(),
        ..EvaluateSpec::default()
    };
    evaluate(&layout, &eval)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_parsing_and_alias() {
        assert_eq!("l2".parse::<Method>().unwrap(), Method::L2);
        assert_eq!("cs".parse::<Method>().unwrap(), Method::Cs);
        assert_eq!("l1".parse::<Method>().unwrap(), Method::Cs);
        assert_eq!("cnn".parse::<Method>().unwrap(), Method::Cnn);
        let err = "magic".parse::<Method>().unwrap_err().to_string();
        assert!(err.contains("valid methods"), "{err}");
    }

    #[test]
    fn synthesize_writes_the_layout() {
        let dir = tempfile::tempdir().unwrap();
        let layout = Layout::new(dir.path());
        let spec = SynthSpec::new(12, 6, 0.02, 5);
        let scheme = synthesize(&spec, &layout).unwrap();
        assert_eq!(scheme.len(), 90);
        for split in ["train", "test"] {
            assert!(layout.signals(split).exists());
            assert!(layout.signals_noisy(split).exists());
            assert!(layout.meta(split).exists());
        }
        let train = load_split(&layout, "train").unwrap();
        assert_eq!(train.clean.n_voxels(), 12);
        assert_ne!(train.clean.data(), train.noisy.data());
    }

    #[test]
    fn sigma_zero_noisy_equals_clean() {
        let dir = tempfile::tempdir().unwrap();
        let layout = Layout::new(dir.path());
        synthesize(&SynthSpec::new(6, 6, 0.0, 5), &layout).unwrap();
        let split = load_split(&layout, "train").unwrap();
        assert_eq!(split.clean.data(), split.noisy.data());
    }

    #[test]
    fn ensure_subset_is_stable_across_calls() {
        let dir = tempfile::tempdir().unwrap();
        let layout = Layout::new(dir.path());
        let scheme = GradientScheme::fibonacci_hemisphere(90, 2000.0).unwrap();
        let a = ensure_subset(&layout, &scheme, 30, SubsetStrategy::UniformAngular, 1).unwrap();
        let b = ensure_subset(&layout, &scheme, 30, SubsetStrategy::UniformAngular, 1).unwrap();
        assert_eq!(a, b);
        assert!(layout.subset(30).exists());
    }
}
